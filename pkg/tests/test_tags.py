import io

import numpy as np
import pytest

from app.tags import (
    HEADER_SIZE,
    RECORD_SIZE,
    BadMagic,
    BadVersion,
    InvalidTag,
    NonMonotonic,
    TagStream,
    TimeTag,
    TruncatedRecord,
    decode_stream,
    encode_stream,
    quantize,
    read_tag_file,
    split_blocks,
    write_tag_file,
)
from app.utils.types import Party


def _encoded(stream: TagStream) -> bytes:
    sink = io.BytesIO()
    encode_stream(stream, sink)
    return sink.getvalue()


def test_single_record_layout():
    stream = TagStream.from_tags(Party.ALICE, [TimeTag(1_000, channel=3, flags=1)])
    data = _encoded(stream)
    assert len(data) == HEADER_SIZE + RECORD_SIZE == 40
    assert data[:8] == b"PAIRSYNC"
    assert data[8:10] == b"\x01\x00"
    assert data[10] == 0
    assert data[12:20] == (1).to_bytes(8, "little")
    assert data[24:32] == (1_000).to_bytes(8, "little", signed=True)
    assert data[32:34] == (3).to_bytes(2, "little")
    assert data[34:36] == (1).to_bytes(2, "little")


def test_encode_decode_preserves_records():
    stream = TagStream.from_times(
        Party.BOB, [-5, 0, 0, 7, 2**40], channels=[0, 1, 2, 3, 15], flags=[0, 0, 9, 0, 65535]
    )
    decoded = decode_stream(io.BytesIO(_encoded(stream)))
    assert decoded == stream
    assert decoded.party is Party.BOB
    assert decoded[2] == TimeTag(0, 2, 9)


def test_empty_stream_round_trip():
    stream = TagStream.from_times(Party.ALICE, [])
    data = _encoded(stream)
    assert len(data) == HEADER_SIZE
    assert len(decode_stream(io.BytesIO(data))) == 0


def test_bad_magic():
    data = bytearray(_encoded(TagStream.from_times(Party.ALICE, [1])))
    data[0] = ord("X")
    with pytest.raises(BadMagic):
        decode_stream(io.BytesIO(bytes(data)))


def test_empty_source_is_bad_magic():
    with pytest.raises(BadMagic):
        decode_stream(io.BytesIO(b""))


def test_bad_version():
    data = bytearray(_encoded(TagStream.from_times(Party.ALICE, [1])))
    data[8] = 2
    with pytest.raises(BadVersion):
        decode_stream(io.BytesIO(bytes(data)))


def test_truncated_record():
    data = _encoded(TagStream.from_times(Party.ALICE, [1, 2, 3]))
    with pytest.raises(TruncatedRecord):
        decode_stream(io.BytesIO(data[:-4]))


def test_truncated_header():
    data = _encoded(TagStream.from_times(Party.ALICE, [1]))
    with pytest.raises(TruncatedRecord):
        decode_stream(io.BytesIO(data[:12]))


def test_decode_rejects_decreasing_times():
    data = bytearray(_encoded(TagStream.from_times(Party.ALICE, [10, 20])))
    data[HEADER_SIZE + RECORD_SIZE : HEADER_SIZE + RECORD_SIZE + 8] = (5).to_bytes(8, "little")
    with pytest.raises(NonMonotonic):
        decode_stream(io.BytesIO(bytes(data)))


def test_stream_rejects_decreasing_times():
    with pytest.raises(NonMonotonic):
        TagStream.from_times(Party.ALICE, [3, 2])


def test_stream_rejects_large_channel():
    with pytest.raises(InvalidTag):
        TagStream.from_times(Party.ALICE, [1], channels=[16])


def test_stream_is_read_only():
    stream = TagStream.from_times(Party.ALICE, [1, 2])
    with pytest.raises(ValueError):
        stream.times[0] = 5


def test_file_helpers(tmp_path):
    stream = TagStream.from_times(Party.BOB, np.arange(0, 1000, 7))
    path = tmp_path / "bob.ptag"
    size = write_tag_file(path, stream)
    assert size == path.stat().st_size == HEADER_SIZE + RECORD_SIZE * len(stream)
    assert read_tag_file(path) == stream


def test_split_blocks_partitions_stream():
    times = [0, 5, 9, 10, 25, 31, 39]
    stream = TagStream.from_times(Party.ALICE, times, epoch_info={"duration_ps": 40})
    blocks = split_blocks(stream, 10)
    assert [b.index for b in blocks] == [0, 1, 2, 3]
    assert [len(b.tags) for b in blocks] == [3, 1, 1, 2]
    assert not any(b.partial for b in blocks)
    assert np.concatenate([b.tags.times for b in blocks]).tolist() == times
    assert blocks[2].t_start_ps == 20 and blocks[2].t_end_ps == 30
    assert blocks[1].mid_ps == 15


def test_split_blocks_keeps_empty_middle_block():
    stream = TagStream.from_times(Party.ALICE, [1, 35], epoch_info={"duration_ps": 40})
    blocks = split_blocks(stream, 10)
    assert [len(b.tags) for b in blocks] == [1, 0, 0, 1]


def test_split_blocks_flags_partial_last_block():
    stream = TagStream.from_times(Party.ALICE, [1, 12, 25], epoch_info={"duration_ps": 27})
    blocks = split_blocks(stream, 10)
    assert [b.partial for b in blocks] == [False, False, True]


def test_split_blocks_without_duration_uses_last_tag():
    stream = TagStream.from_times(Party.ALICE, [1, 19])
    assert [b.partial for b in split_blocks(stream, 10)] == [False, False]
    stream = TagStream.from_times(Party.ALICE, [1, 15])
    assert [b.partial for b in split_blocks(stream, 10)] == [False, True]


def test_split_blocks_negative_times():
    stream = TagStream.from_times(Party.BOB, [-15, -1, 3])
    blocks = split_blocks(stream, 10)
    assert [b.index for b in blocks] == [-2, -1, 0]


def test_split_blocks_rejects_bad_length():
    with pytest.raises(ValueError):
        split_blocks(TagStream.from_times(Party.ALICE, [1]), 0)


def test_quantize_floors_times():
    stream = TagStream.from_times(Party.ALICE, [-3, 0, 7, 12])
    assert quantize(stream, 5).times.tolist() == [-5, 0, 5, 10]
    assert quantize(stream, 1) is stream
