import json
import math

import numpy as np
import pandas as pd
import pytest

from app import output_handler
from app.output_handler import MANIFEST_NAME, ArtifactWriter, dumps, to_jsonable
from app.tags import TagStream, read_tag_file
from app.utils.redactor import REDACTED
from app.utils.types import Party


def test_to_jsonable_plain_types():
    data = {1: np.float64(2.5), "arr": np.arange(3), "bad": float("nan"), "inf": math.inf}
    assert to_jsonable(data) == {"1": 2.5, "arr": [0, 1, 2], "bad": None, "inf": None}


def test_dumps_is_sorted_with_newline():
    text = dumps({"b": 1, "a": [np.int64(2)]})
    assert text.endswith("\n")
    assert list(json.loads(text)) == ["a", "b"]
    assert text == dumps({"a": [2], "b": 1})


def test_manifest_written_first(tmp_path):
    out = ArtifactWriter(
        tmp_path / "run", "track", ["track", "a", "b"], seed=5, settings={"t_a_ps": 1}
    )
    out.write_manifest(["series.csv", "extra.json"])
    manifest = json.loads((tmp_path / "run" / MANIFEST_NAME).read_text())
    assert manifest["outputs"] == ["extra.json", "series.csv"]
    assert manifest["argv"] == ["track", "a", "b"]
    assert manifest["seed"] == 5
    assert manifest["config_path"] is None
    assert manifest["versions"]["pairsync"]
    assert manifest["settings"] == {"t_a_ps": 1}


def test_manifest_redacts_key(tmp_path):
    out = ArtifactWriter(tmp_path, "serve", [], settings={"shared_key": "00ff", "port": 1})
    out.write_manifest([])
    manifest = json.loads((tmp_path / MANIFEST_NAME).read_text())
    assert manifest["settings"] == {"shared_key": REDACTED, "port": 1}


def test_unlisted_output_rejected(tmp_path):
    out = ArtifactWriter(tmp_path, "drift", [])
    out.write_manifest(["drift.json"])
    with pytest.raises(ValueError, match="stability.json"):
        out.write_json("stability.json", {})


def test_writers(tmp_path):
    out = ArtifactWriter(tmp_path, "simulate", [])
    out.write_manifest(["a.csv", "b.json", "c.txt", "d.ptag"])
    out.write_csv("a.csv", pd.DataFrame({"x": [1, 2]}))
    out.write_json("b.json", {"v": float("nan")})
    out.write_text("c.txt", "hello\n")
    stream = TagStream.from_times(Party.BOB, [1, 2, 3])
    out.write_tags("d.ptag", stream)

    assert (tmp_path / "a.csv").read_text() == "x\n1\n2\n"
    assert json.loads((tmp_path / "b.json").read_text()) == {"v": None}
    assert (tmp_path / "c.txt").read_text() == "hello\n"
    assert read_tag_file(tmp_path / "d.ptag") == stream
    assert out.written == ["a.csv", "b.json", "c.txt", "d.ptag"]


def test_package_versions_unknown(monkeypatch):
    def missing(name):
        raise output_handler.metadata.PackageNotFoundError(name)

    monkeypatch.setattr(output_handler.metadata, "version", missing)
    versions = output_handler.package_versions()
    assert versions["numpy"] == "unknown"
    assert versions["pairsync"] == output_handler.__version__
