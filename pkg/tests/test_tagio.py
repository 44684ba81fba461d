import struct

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from qkdlink.core import Party, TimeTagStream
from qkdlink.tagio import (
    HEADER,
    MAGIC,
    RECORD_DTYPE,
    TagFormatError,
    read_binary,
    read_csv,
    read_stream,
    write_binary,
    write_csv,
    write_stream,
)

events = st.lists(
    st.tuples(st.integers(0, 2**62), st.integers(0, 3)), max_size=200
)


def _stream(pairs, party="alice"):
    if not pairs:
        return TimeTagStream.empty(party)
    t, c = zip(*pairs)
    return TimeTagStream.from_unsorted(party, list(t), list(c))


@settings(suppress_health_check=[HealthCheck.function_scoped_fixture], max_examples=60)
@given(events)
def test_binary_round_trip(tmp_path, pairs):
    s = _stream(pairs)
    path = tmp_path / "s.qtag"
    write_binary(s, path)
    back = read_binary(path, Party.ALICE)
    assert np.array_equal(back.timestamps, s.timestamps)
    assert np.array_equal(back.channels, s.channels)


@settings(suppress_health_check=[HealthCheck.function_scoped_fixture], max_examples=60)
@given(events)
def test_csv_and_binary_parse_identically(tmp_path, pairs):
    s = _stream(pairs, "bob")
    write_stream(s, tmp_path / "s.csv")
    write_stream(s, tmp_path / "s.qtag")
    from_csv = read_stream(tmp_path / "s.csv", "bob")
    from_bin = read_stream(tmp_path / "s.qtag", "bob")
    assert from_csv == from_bin
    assert np.array_equal(from_csv.timestamps, s.timestamps)


def test_binary_layout(tmp_path):
    s = TimeTagStream("alice", [5, 9], [1, 3])
    path = tmp_path / "x.qtag"
    write_binary(s, path)
    raw = path.read_bytes()
    assert len(raw) == HEADER.size + 2 * RECORD_DTYPE.itemsize == 48
    assert raw[:4] == MAGIC
    assert struct.unpack_from("<QB", raw, 16) == (5, 1)
    assert struct.unpack_from("<QB", raw, 32) == (9, 3)


def _write_raw(path, records, magic=MAGIC, version=1):
    rec = np.zeros(len(records), dtype=RECORD_DTYPE)
    if records:
        rec["timestamp"], rec["channel"] = zip(*records)
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(magic, version))
        rec.tofile(fh)


@pytest.mark.parametrize(
    "records, kw, message",
    [
        ([(1, 7)], {}, "channel"),
        ([(5, 0), (3, 0)], {}, "monotone"),
        ([(2**63, 0)], {}, "overflow"),
        ([], {"magic": b"NOPE"}, "magic"),
        ([], {"version": 9}, "version"),
    ],
)
def test_binary_rejects_bad_content(tmp_path, records, kw, message):
    path = tmp_path / "bad.qtag"
    _write_raw(path, records, **kw)
    with pytest.raises(TagFormatError, match=message):
        read_binary(path)


def test_binary_rejects_truncation(tmp_path):
    path = tmp_path / "t.qtag"
    _write_raw(path, [(1, 0), (2, 1)])
    data = path.read_bytes()
    path.write_bytes(data[:-3])
    with pytest.raises(TagFormatError, match="whole number"):
        read_binary(path)
    path.write_bytes(data[:7])
    with pytest.raises(TagFormatError, match="header"):
        read_binary(path)


def test_binary_duplicate_event_rejected(tmp_path):
    path = tmp_path / "d.qtag"
    _write_raw(path, [(4, 2), (4, 2)])
    with pytest.raises(TagFormatError):
        read_binary(path)


def test_csv_accepts_digits_and_letters(tmp_path):
    path = tmp_path / "m.csv"
    path.write_text("timestamp_ps,channel\n1,H\n2,3\n3,d\n")
    s = read_csv(path)
    assert s.channels.tolist() == [0, 3, 2]


@pytest.mark.parametrize(
    "body, message",
    [
        ("time,chan\n1,H\n", "header"),
        ("timestamp_ps,channel\n1,Q\n", "channel"),
        ("timestamp_ps,channel\n1,7\n", "channel"),
        ("timestamp_ps,channel\n5,H\n3,H\n", "monotone"),
        ("timestamp_ps,channel\nx,H\n", "timestamp"),
        ("timestamp_ps,channel\n-4,H\n", "negative"),
        ("timestamp_ps,channel\n1,H,9\n", "fields"),
    ],
)
def test_csv_rejects_bad_content(tmp_path, body, message):
    path = tmp_path / "bad.csv"
    path.write_text(body)
    with pytest.raises(TagFormatError, match=message):
        read_csv(path)


def test_large_file_streams_in_chunks(tmp_path, monkeypatch):
    import qkdlink.tagio as tagio

    monkeypatch.setattr(tagio, "READ_CHUNK", 7)
    s = TimeTagStream("alice", np.arange(0, 1000, 3), np.arange(334) % 4)
    write_binary(s, tmp_path / "big.qtag")
    assert read_binary(tmp_path / "big.qtag") == TimeTagStream(
        "alice", s.timestamps, s.channels, "big"
    )
