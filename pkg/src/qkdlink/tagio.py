"""Time-tag file formats.

Binary layout (all little-endian)::

    header  16 bytes   b"QTAG", u16 version, 10 reserved zero bytes
    record  16 bytes   u64 timestamp_ps, u8 channel (0=H 1=V 2=D 3=A), 7 pad bytes

The CSV alternative has the header ``timestamp_ps,channel`` with channel
written as its letter; digits are accepted on input.
"""

from __future__ import annotations

import csv
import io
import os
import struct
from pathlib import Path

import numpy as np

from .core import Channel, Party, TimeTagStream

MAGIC = b"QTAG"
VERSION = 1
HEADER = struct.Struct("<4sH10x")
RECORD_DTYPE = np.dtype([("timestamp", "<u8"), ("channel", "u1"), ("pad", "V7")])
CSV_HEADER = ["timestamp_ps", "channel"]
READ_CHUNK = 1 << 20


class TagFormatError(ValueError):
    pass


def write_binary(stream: TimeTagStream, path: str | os.PathLike) -> None:
    records = np.zeros(len(stream), dtype=RECORD_DTYPE)
    records["timestamp"] = stream.timestamps
    records["channel"] = stream.channels
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, VERSION))
        records.tofile(fh)


def _check_chunk(ts: np.ndarray, ch: np.ndarray, prev: int, offset: int) -> None:
    if np.any(ch > Channel.A):
        bad = int(np.flatnonzero(ch > Channel.A)[0])
        raise TagFormatError(f"record {offset + bad}: unknown channel code {int(ch[bad])}")
    if ts.size:
        if int(ts.max()) > np.iinfo(np.int64).max:
            raise TagFormatError(f"timestamp overflow near record {offset}")
        if int(ts[0]) < prev or np.any(np.diff(ts.astype(np.int64)) < 0):
            raise TagFormatError(f"non-monotone timestamps near record {offset}")


def read_binary(path: str | os.PathLike, party: Party | str = Party.ALICE) -> TimeTagStream:
    """Read a binary tag file in chunks, validating framing, channels and order."""
    path = Path(path)
    size = path.stat().st_size
    with open(path, "rb") as fh:
        head = fh.read(HEADER.size)
        if len(head) < HEADER.size:
            raise TagFormatError(f"{path}: truncated header")
        magic, version = HEADER.unpack(head)
        if magic != MAGIC:
            raise TagFormatError(f"{path}: bad magic {magic!r}")
        if version != VERSION:
            raise TagFormatError(f"{path}: unsupported version {version}")
        body = size - HEADER.size
        if body % RECORD_DTYPE.itemsize:
            raise TagFormatError(
                f"{path}: {body} payload bytes is not a whole number of "
                f"{RECORD_DTYPE.itemsize}-byte records"
            )
        n = body // RECORD_DTYPE.itemsize
        ts = np.empty(n, dtype=np.int64)
        ch = np.empty(n, dtype=np.uint8)
        done, prev = 0, 0
        while done < n:
            rec = np.fromfile(fh, dtype=RECORD_DTYPE, count=min(READ_CHUNK, n - done))
            if rec.size == 0:
                raise TagFormatError(f"{path}: unexpected end of file")
            _check_chunk(rec["timestamp"], rec["channel"], prev, done)
            ts[done : done + rec.size] = rec["timestamp"]
            ch[done : done + rec.size] = rec["channel"]
            prev = int(rec["timestamp"][-1])
            done += rec.size
    try:
        return TimeTagStream(Party(party), ts, ch, path.stem)
    except ValueError as exc:
        raise TagFormatError(f"{path}: {exc}") from exc


def write_csv(stream: TimeTagStream, path: str | os.PathLike) -> None:
    names = np.array([c.name for c in Channel])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        writer.writerows(zip(stream.timestamps.tolist(), names[stream.channels].tolist()))


def _parse_channel(token: str, line: int) -> int:
    token = token.strip()
    if token.isdigit():
        code = int(token)
        if code > Channel.A:
            raise TagFormatError(f"line {line}: unknown channel code {code}")
        return code
    try:
        return int(Channel[token.upper()])
    except KeyError:
        raise TagFormatError(f"line {line}: unknown channel {token!r}") from None


def read_csv(path: str | os.PathLike, party: Party | str = Party.ALICE) -> TimeTagStream:
    path = Path(path)
    with open(path, newline="") as fh:
        return _read_csv_handle(fh, party, path.stem)


def _read_csv_handle(fh: io.TextIOBase, party, label: str) -> TimeTagStream:
    reader = csv.reader(fh)
    header = next(reader, None)
    if header is None or [h.strip() for h in header] != CSV_HEADER:
        raise TagFormatError(f"expected CSV header {','.join(CSV_HEADER)}, got {header}")
    ts, ch = [], []
    for line, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != 2:
            raise TagFormatError(f"line {line}: expected 2 fields, got {len(row)}")
        try:
            t = int(row[0])
        except ValueError:
            raise TagFormatError(f"line {line}: bad timestamp {row[0]!r}") from None
        if t < 0:
            raise TagFormatError(f"line {line}: negative timestamp")
        if ts and t < ts[-1]:
            raise TagFormatError(f"line {line}: non-monotone timestamps")
        ts.append(t)
        ch.append(_parse_channel(row[1], line))
    try:
        return TimeTagStream(Party(party), np.array(ts, np.int64), np.array(ch, np.uint8), label)
    except ValueError as exc:
        raise TagFormatError(str(exc)) from exc


def read_stream(path: str | os.PathLike, party: Party | str = Party.ALICE) -> TimeTagStream:
    """Dispatch on extension: ``.csv`` is text, anything else binary."""
    if Path(path).suffix.lower() == ".csv":
        return read_csv(path, party)
    return read_binary(path, party)


def write_stream(stream: TimeTagStream, path: str | os.PathLike) -> None:
    if Path(path).suffix.lower() == ".csv":
        write_csv(stream, path)
    else:
        write_binary(stream, path)
