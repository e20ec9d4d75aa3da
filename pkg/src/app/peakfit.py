"""Pseudo-Voigt timing response and the two-peak coincidence fit.

The correlation of Alice's and Bob's tags shows one coincidence peak per pair
source. Both peaks share the detector timing response V, a pseudo-Voigt of
Lorentzian fraction f and half-width σ. The fitted model per histogram bin is

    c(τ) = a0 + Δ · (a1 · V(τ − τ_AB) + a2 · V(τ − τ_BA))

with Δ the bin width, so a1 and a2 are peak areas (detected pairs) and a0 is
the background per bin. The offset is the midpoint of the two centers and the
round trip their separation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any

import numpy as np
import numpy.typing as npt
from scipy.optimize import least_squares

from app import config
from app.utils.errors import AnalysisError, DataError
from app.utils.setup_logger import setup_logger

if TYPE_CHECKING:
    from app.xcorr import CorrelationHistogram, PeakCandidates

logger = setup_logger(__name__)

FloatArray = npt.NDArray[np.float64]

PARAM_NAMES = ("a0", "a1", "a2", "tau_ab_ps", "tau_ba_ps")
MAX_EVALUATIONS = 200
XTOL = 1e-8


class InvalidShape(DataError):
    """Peak shape parameters outside their domain."""


class NotConverged(AnalysisError):
    """The least-squares fit hit its evaluation limit."""


class DegenerateOverlap(AnalysisError):
    """The two peaks are closer than half a FWHM and cannot be separated."""


class InsufficientSupport(DataError):
    """The histogram does not cover the candidates with enough margin."""


@dataclass(frozen=True)
class PeakShape:
    """Timing response: Lorentzian fraction `f` and half-width `sigma_ps`."""

    f: float = 0.2
    sigma_ps: float = 290.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.f <= 1.0:
            raise InvalidShape(f"Lorentzian fraction must lie in [0, 1], got {self.f}")
        if not self.sigma_ps > 0.0:
            raise InvalidShape(f"sigma must be positive, got {self.sigma_ps}")

    @classmethod
    def from_config(cls) -> PeakShape:
        """Shape from PAIRSYNC_SHAPE_F / PAIRSYNC_SHAPE_SIGMA_PS."""
        return cls(config.get_peak_shape_f(), config.get_peak_shape_sigma_ps())

    @property
    def gaussian_sd_ps(self) -> float:
        """Standard deviation s = σ/√(2 ln 2) of the Gaussian component."""
        return self.sigma_ps / math.sqrt(2.0 * math.log(2.0))

    @property
    def fwhm_ps(self) -> float:
        """Full width at half maximum; both components have half-width σ."""
        return 2.0 * self.sigma_ps

    @property
    def v0_per_ps(self) -> float:
        """Peak density V(0)."""
        return float(pseudo_voigt_density(0.0, self))


def pseudo_voigt_density(tau_ps: npt.ArrayLike, shape: PeakShape) -> Any:
    """Evaluate the unit-area pseudo-Voigt V(τ) in 1/ps.

    Args:
        tau_ps: Scalar or array of delays in ps.
        shape (PeakShape): Timing response.

    Returns:
        float | ndarray: Density at `tau_ps`.

    """
    tau = np.asarray(tau_ps, dtype=np.float64)
    s = shape.gaussian_sd_ps
    gauss = np.exp(-0.5 * (tau / s) ** 2) / (s * math.sqrt(2.0 * math.pi))
    lorentz = shape.sigma_ps / (math.pi * (tau**2 + shape.sigma_ps**2))
    out = (1.0 - shape.f) * gauss + shape.f * lorentz
    return float(out) if out.ndim == 0 else out


def pseudo_voigt_derivative(tau_ps: npt.ArrayLike, shape: PeakShape) -> FloatArray:
    """Derivative dV/dτ in 1/ps²."""
    tau = np.asarray(tau_ps, dtype=np.float64)
    s = shape.gaussian_sd_ps
    sig = shape.sigma_ps
    gauss = np.exp(-0.5 * (tau / s) ** 2) / (s * math.sqrt(2.0 * math.pi))
    d_gauss = -tau / s**2 * gauss
    d_lorentz = -2.0 * tau * sig / (math.pi * (tau**2 + sig**2) ** 2)
    return (1.0 - shape.f) * d_gauss + shape.f * d_lorentz


def model_counts(
    params: npt.ArrayLike, tau_ps: FloatArray, bin_width_ps: float, shape: PeakShape
) -> FloatArray:
    """Expected counts per bin for parameters (a0, a1, a2, τ_AB, τ_BA)."""
    a0, a1, a2, t1, t2 = np.asarray(params, dtype=np.float64)
    peaks = a1 * pseudo_voigt_density(tau_ps - t1, shape)
    peaks = peaks + a2 * pseudo_voigt_density(tau_ps - t2, shape)
    return a0 + bin_width_ps * peaks


def model_jacobian(
    params: npt.ArrayLike, tau_ps: FloatArray, bin_width_ps: float, shape: PeakShape
) -> FloatArray:
    """Analytic Jacobian of `model_counts` with respect to the five parameters."""
    _, a1, a2, t1, t2 = np.asarray(params, dtype=np.float64)
    jac = np.empty((len(tau_ps), 5))
    jac[:, 0] = 1.0
    jac[:, 1] = bin_width_ps * pseudo_voigt_density(tau_ps - t1, shape)
    jac[:, 2] = bin_width_ps * pseudo_voigt_density(tau_ps - t2, shape)
    jac[:, 3] = -bin_width_ps * a1 * pseudo_voigt_derivative(tau_ps - t1, shape)
    jac[:, 4] = -bin_width_ps * a2 * pseudo_voigt_derivative(tau_ps - t2, shape)
    return jac


@dataclass(frozen=True, eq=False)
class DoublePeakFit:
    """Result of fitting the two-peak model; centers ordered τ_AB ≥ τ_BA."""

    a0: float
    a1: float
    a2: float
    tau_ab_ps: float
    tau_ba_ps: float
    covariance: FloatArray
    chi2_red: float
    converged: bool
    shape: PeakShape = field(default_factory=PeakShape)
    n_bins: int = 0

    @property
    def params(self) -> FloatArray:
        """Parameters in `PARAM_NAMES` order."""
        return np.array([self.a0, self.a1, self.a2, self.tau_ab_ps, self.tau_ba_ps])

    @property
    def errors(self) -> FloatArray:
        """One-standard-deviation parameter uncertainties."""
        return np.sqrt(np.clip(np.diag(self.covariance), 0.0, None))


@dataclass(frozen=True)
class SyncEstimate:
    """Clock offset and round trip derived from one fit."""

    delta_ps: float
    round_trip_ps: float
    sigma_delta_ps: float
    block_index: int = 0
    epoch_mid_ps: int = 0
    sigma_round_trip_ps: float = float("nan")

    def negated(self) -> SyncEstimate:
        """The same estimate seen from the other party (offset sign flipped)."""
        return SyncEstimate(
            delta_ps=-self.delta_ps,
            round_trip_ps=self.round_trip_ps,
            sigma_delta_ps=self.sigma_delta_ps,
            block_index=self.block_index,
            epoch_mid_ps=self.epoch_mid_ps,
            sigma_round_trip_ps=self.sigma_round_trip_ps,
        )


def _fit_support(
    h: CorrelationHistogram, init: PeakCandidates, margin_ps: float
) -> tuple[FloatArray, FloatArray, float]:
    tau = h.tau_centers()
    lo = init.tau_left_ps - margin_ps
    hi = init.tau_right_ps + margin_ps
    sel = (tau >= lo) & (tau <= hi)
    if np.count_nonzero(sel) < 8:
        raise InsufficientSupport("fewer than 8 histogram bins around the candidates")
    ref = 0.5 * (init.tau_right_ps + init.tau_left_ps)
    return tau[sel] - ref, np.asarray(h.counts, dtype=np.float64)[sel], ref


def _initial_params(
    x: FloatArray, y: FloatArray, bin_width: float, shape: PeakShape, centers: tuple[float, float]
) -> FloatArray:
    a0 = max(float(np.median(y)), 1e-3)
    amplitudes = []
    for c in centers:
        near = np.abs(x - c) <= max(shape.fwhm_ps / 4.0, bin_width)
        height = float(y[near].mean()) if near.any() else a0
        amplitudes.append(max((height - a0) / (bin_width * shape.v0_per_ps), 1.0))
    return np.array([a0, amplitudes[0], amplitudes[1], centers[0], centers[1]])


def fit_double_peak(
    h: CorrelationHistogram,
    shape: PeakShape,
    init: PeakCandidates,
    margin_fwhm: float | None = None,
) -> DoublePeakFit:
    """Fit background plus two pseudo-Voigt peaks to a fine histogram.

    Weighted least squares with Poisson weights 1/max(counts, 1); the shape is
    held fixed. Bins within `margin_fwhm` FWHM of the candidates are used.

    Args:
        h (CorrelationHistogram): Fine correlation histogram.
        shape (PeakShape): Timing response.
        init (PeakCandidates): Starting centers from `locate_peaks`.
        margin_fwhm (Optional[float]): Fit margin; defaults to PAIRSYNC_FIT_MARGIN_FWHM.

    Returns:
        DoublePeakFit: Fitted parameters with covariance.

    Raises:
        DegenerateOverlap: If the peaks end up closer than FWHM/2.
        NotConverged: If the solver exhausts its evaluation budget.

    """
    if abs(init.tau_right_ps - init.tau_left_ps) <= h.bin_width_ps:
        raise DegenerateOverlap("candidates are not separated by more than one bin")

    margin = (margin_fwhm if margin_fwhm is not None else config.get_fit_margin_fwhm())
    x, y, ref = _fit_support(h, init, margin * shape.fwhm_ps)
    bin_width = float(h.bin_width_ps)
    weights = 1.0 / np.sqrt(np.maximum(y, 1.0))

    def residuals(p: FloatArray) -> FloatArray:
        return (model_counts(p, x, bin_width, shape) - y) * weights

    def jacobian(p: FloatArray) -> FloatArray:
        return model_jacobian(p, x, bin_width, shape) * weights[:, None]

    x0 = _initial_params(
        x, y, bin_width, shape, (init.tau_right_ps - ref, init.tau_left_ps - ref)
    )
    lower = [0.0, 0.0, 0.0, float(x[0]), float(x[0])]
    upper = [np.inf, np.inf, np.inf, float(x[-1]), float(x[-1])]
    x0 = np.clip(x0, lower, upper)

    result = least_squares(
        residuals,
        x0,
        jac=jacobian,
        bounds=(lower, upper),
        method="trf",
        x_scale="jac",
        xtol=XTOL,
        ftol=1e-12,
        gtol=1e-12,
        max_nfev=MAX_EVALUATIONS,
    )
    a0, a1, a2, t1, t2 = result.x

    if abs(t1 - t2) < shape.fwhm_ps / 2.0:
        raise DegenerateOverlap(
            f"peaks {abs(t1 - t2):.1f} ps apart, below FWHM/2 = {shape.fwhm_ps / 2.0:.1f} ps"
        )
    if result.status <= 0:
        raise NotConverged(f"fit stopped without converging: {result.message}")

    covariance = np.linalg.pinv(result.jac.T @ result.jac)
    dof = max(len(y) - 5, 1)
    chi2_red = float(2.0 * result.cost / dof)

    if t1 < t2:
        a1, a2, t1, t2 = a2, a1, t2, t1
        perm = [0, 2, 1, 4, 3]
        covariance = covariance[np.ix_(perm, perm)]

    fit = DoublePeakFit(
        a0=float(a0),
        a1=float(a1),
        a2=float(a2),
        tau_ab_ps=float(t1 + ref),
        tau_ba_ps=float(t2 + ref),
        covariance=covariance,
        chi2_red=chi2_red,
        converged=True,
        shape=shape,
        n_bins=len(y),
    )
    logger.debug(
        "Fit converged: tau_ab=%.1f ps tau_ba=%.1f ps chi2_red=%.3f nfev=%d",
        fit.tau_ab_ps,
        fit.tau_ba_ps,
        chi2_red,
        result.nfev,
    )
    return fit


def calibrate_shape(
    h: CorrelationHistogram,
    init: PeakCandidates,
    shape0: PeakShape | None = None,
    margin_fwhm: float | None = None,
) -> tuple[DoublePeakFit, PeakShape]:
    """Fit f and σ together with the two peaks on high-statistics data.

    Returns the shape-fixed refit at the calibrated shape, so the covariance has
    the usual five-parameter layout.

    Raises:
        NotConverged: If the free-shape fit does not converge.

    """
    shape0 = shape0 or PeakShape()
    margin = margin_fwhm if margin_fwhm is not None else config.get_fit_margin_fwhm()
    x, y, ref = _fit_support(h, init, margin * shape0.fwhm_ps)
    bin_width = float(h.bin_width_ps)
    weights = 1.0 / np.sqrt(np.maximum(y, 1.0))

    def residuals(p: FloatArray) -> FloatArray:
        shape = PeakShape(float(p[5]), float(p[6]))
        return (model_counts(p[:5], x, bin_width, shape) - y) * weights

    start = _initial_params(
        x, y, bin_width, shape0, (init.tau_right_ps - ref, init.tau_left_ps - ref)
    )
    x0 = np.concatenate([start, [shape0.f, shape0.sigma_ps]])
    lower = [0.0, 0.0, 0.0, float(x[0]), float(x[0]), 0.0, bin_width / 2.0]
    upper = [np.inf, np.inf, np.inf, float(x[-1]), float(x[-1]), 1.0, np.inf]
    x0 = np.clip(x0, lower, upper)

    result = least_squares(
        residuals,
        x0,
        jac="2-point",
        bounds=(lower, upper),
        method="trf",
        x_scale="jac",
        xtol=XTOL,
        max_nfev=20 * MAX_EVALUATIONS,
    )
    if result.status <= 0:
        raise NotConverged(f"shape calibration did not converge: {result.message}")

    shape = PeakShape(float(result.x[5]), float(result.x[6]))
    logger.info("🎯 Calibrated timing response: f=%.3f sigma=%.1f ps", shape.f, shape.sigma_ps)
    return fit_double_peak(h, shape, init, margin_fwhm=margin), shape


def estimate_sync(
    fit: DoublePeakFit, block_index: int = 0, epoch_mid_ps: int = 0
) -> SyncEstimate:
    """Offset δ = (τ_AB + τ_BA)/2 and round trip ΔT = τ_AB − τ_BA.

    Raises:
        NotConverged: If `fit` did not converge.

    """
    if not fit.converged:
        raise NotConverged("cannot estimate offset from an unconverged fit")

    var_ab = fit.covariance[3, 3]
    var_ba = fit.covariance[4, 4]
    cov = fit.covariance[3, 4]
    return SyncEstimate(
        delta_ps=0.5 * (fit.tau_ab_ps + fit.tau_ba_ps),
        round_trip_ps=fit.tau_ab_ps - fit.tau_ba_ps,
        sigma_delta_ps=0.5 * math.sqrt(max(var_ab + var_ba + 2.0 * cov, 0.0)),
        block_index=block_index,
        epoch_mid_ps=epoch_mid_ps,
        sigma_round_trip_ps=math.sqrt(max(var_ab + var_ba - 2.0 * cov, 0.0)),
    )


def fit_report(fit: DoublePeakFit) -> dict[str, Any]:
    """JSON-ready fit report: parameters, errors, covariance, chi2_red, convergence."""
    return {
        "parameters": dict(zip(PARAM_NAMES, fit.params.tolist())),
        "errors": dict(zip(PARAM_NAMES, fit.errors.tolist())),
        "covariance": fit.covariance.tolist(),
        "chi2_red": fit.chi2_red,
        "converged": fit.converged,
        "shape": {"f": fit.shape.f, "sigma_ps": fit.shape.sigma_ps},
        "n_bins": fit.n_bins,
    }
