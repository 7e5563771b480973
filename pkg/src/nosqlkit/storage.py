"""Per-node storage backends: an in-memory table and an append-only log.

The log backend keeps a hash index from (bucket, key) to the newest record
location. Each record is framed as::

    u32 body_len | body | u32 crc32(body)
    body = u64 seq | u8 op | u16 bucket_len | u32 key_len | u32 payload_len
           | bucket | key | payload

Files are named ``00000001.data`` and so on; only the highest-numbered file
is appended to. A record that fails its checksum at the very end of the
newest file is a torn write and is cut off on open; anywhere else it is
treated as corruption and the log refuses to open.
"""

from __future__ import annotations

import os
import struct
import zlib
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator, Protocol

from nosqlkit.errors import CorruptInterior, IoFailure
from nosqlkit.versioning import (
    DEFAULT_RETENTION,
    VersionChain,
    VersionedValue,
    absorb_all,
    decode_chain,
    encode_chain,
)

OP_PUT = 1
OP_DELETE = 2

_LEN = struct.Struct(">I")
_HEAD = struct.Struct(">QBHII")
DEFAULT_ROTATE_BYTES = 64 * 1024 * 1024


class BackendKind(Enum):
    MEMORY = "memory"
    LOG_STRUCTURED = "log"


@dataclass(frozen=True)
class StorageRecord:
    bucket: str
    key: bytes
    payload: bytes
    sequence: int
    op: int = OP_PUT

    @property
    def checksum(self) -> int:
        return zlib.crc32(self.body())

    def body(self) -> bytes:
        b = self.bucket.encode("utf-8")
        return _HEAD.pack(self.sequence, self.op, len(b), len(self.key), len(self.payload)) + b + self.key + self.payload

    def frame(self) -> bytes:
        body = self.body()
        return _LEN.pack(len(body)) + body + _LEN.pack(zlib.crc32(body))


def _parse_body(body: bytes) -> StorageRecord:
    seq, op, blen, klen, plen = _HEAD.unpack_from(body)
    pos = _HEAD.size
    if pos + blen + klen + plen != len(body) or op not in (OP_PUT, OP_DELETE):
        raise ValueError("malformed record body")
    bucket = body[pos:pos + blen].decode("utf-8")
    pos += blen
    key = body[pos:pos + klen]
    pos += klen
    return StorageRecord(bucket, key, body[pos:pos + plen], seq, op)


class Backend(Protocol):
    kind: BackendKind

    def put(self, bucket: str, key: bytes, payload: bytes) -> None: ...
    def get(self, bucket: str, key: bytes) -> bytes | None: ...
    def delete(self, bucket: str, key: bytes) -> None: ...
    def keys(self, bucket: str) -> list[bytes]: ...
    def buckets(self) -> list[str]: ...
    def close(self) -> None: ...


class MemoryBackend:
    kind = BackendKind.MEMORY

    def __init__(self):
        self._table: dict[tuple[str, bytes], bytes] = {}

    def put(self, bucket: str, key: bytes, payload: bytes) -> None:
        self._table[(bucket, bytes(key))] = bytes(payload)

    def get(self, bucket: str, key: bytes) -> bytes | None:
        return self._table.get((bucket, bytes(key)))

    def delete(self, bucket: str, key: bytes) -> None:
        self._table.pop((bucket, bytes(key)), None)

    def keys(self, bucket: str) -> list[bytes]:
        return sorted(k for b, k in self._table if b == bucket)

    def buckets(self) -> list[str]:
        return sorted({b for b, _ in self._table})

    def items(self) -> Iterator[tuple[str, bytes, bytes]]:
        for (b, k), v in sorted(self._table.items()):
            yield b, k, v

    def close(self) -> None:
        pass


def _data_files(directory: Path) -> list[tuple[int, Path]]:
    out = []
    for p in directory.glob("*.data"):
        try:
            out.append((int(p.stem), p))
        except ValueError:
            continue
    return sorted(out)


def scan_file(path: Path, tail_allowed: bool) -> tuple[list[tuple[int, StorageRecord]], int]:
    """Parse one log file; returns (offset, record) pairs and the valid length."""
    data = path.read_bytes()
    out = []
    pos = 0
    while pos < len(data):
        end_ok = False
        reason = ""
        if len(data) - pos < _LEN.size:
            reason = "short length prefix"
        else:
            (blen,) = _LEN.unpack_from(data, pos)
            stop = pos + _LEN.size + blen + _LEN.size
            if stop > len(data):
                reason = "record runs past end of file"
            else:
                body = data[pos + _LEN.size:pos + _LEN.size + blen]
                (crc,) = _LEN.unpack_from(data, stop - _LEN.size)
                if zlib.crc32(body) != crc:
                    reason = "checksum mismatch"
                    end_ok = stop == len(data)
                else:
                    try:
                        rec = _parse_body(body)
                    except (ValueError, struct.error, UnicodeDecodeError) as exc:
                        raise CorruptInterior(f"{path.name}@{pos}: {exc}") from exc
                    out.append((pos, rec))
                    pos = stop
                    continue
        # a bad record can only be a torn write if nothing valid follows it
        if tail_allowed and (reason != "checksum mismatch" or end_ok):
            return out, pos
        raise CorruptInterior(f"{path.name}@{pos}: {reason}")
    return out, pos


@dataclass(frozen=True)
class _Loc:
    file_id: int
    offset: int
    sequence: int


def recover(directory: str | os.PathLike, truncate: bool = False) -> tuple[dict[tuple[str, bytes], _Loc], int]:
    """Rebuild the key index from the log files in ``directory``.

    Returns the index (only live keys) and the highest sequence seen. With
    ``truncate`` a torn tail is cut from the newest file.
    """
    directory = Path(directory)
    files = _data_files(directory)
    index: dict[tuple[str, bytes], _Loc] = {}
    last_seq = 0
    for i, (fid, path) in enumerate(files):
        newest = i == len(files) - 1
        records, valid = scan_file(path, tail_allowed=newest)
        if truncate and newest and valid < path.stat().st_size:
            with open(path, "r+b") as fh:
                fh.truncate(valid)
        for off, rec in records:
            if rec.sequence <= last_seq:
                raise CorruptInterior(f"{path.name}@{off}: sequence {rec.sequence} not increasing")
            last_seq = rec.sequence
            k = (rec.bucket, rec.key)
            if rec.op == OP_DELETE:
                index.pop(k, None)
            else:
                index[k] = _Loc(fid, off, rec.sequence)
    return index, last_seq


def read_records(directory: str | os.PathLike) -> Iterator[StorageRecord]:
    files = _data_files(Path(directory))
    for i, (_fid, path) in enumerate(files):
        records, _ = scan_file(path, tail_allowed=i == len(files) - 1)
        for _off, rec in records:
            yield rec


class LogStructuredBackend:
    kind = BackendKind.LOG_STRUCTURED

    def __init__(self, directory: str | os.PathLike, rotate_bytes: int = DEFAULT_ROTATE_BYTES,
                 fsync: bool = False):
        self.directory = Path(directory)
        self.rotate_bytes = rotate_bytes
        self.fsync = fsync
        self._fh = None
        self._readers: dict[int, object] = {}
        try:
            self.directory.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise IoFailure(str(exc)) from exc
        self._open()

    def _open(self) -> None:
        self._index, self._seq = recover(self.directory, truncate=True)
        files = _data_files(self.directory)
        self._active_id = files[-1][0] if files else 1
        self._open_active()

    def _path(self, file_id: int) -> Path:
        return self.directory / f"{file_id:08d}.data"

    def _open_active(self) -> None:
        try:
            self._fh = open(self._path(self._active_id), "ab")
        except OSError as exc:
            raise IoFailure(str(exc)) from exc

    def _append(self, rec: StorageRecord) -> int:
        if self._fh is None:
            raise IoFailure("backend is closed")
        frame = rec.frame()
        try:
            if self._fh.tell() and self._fh.tell() + len(frame) > self.rotate_bytes:
                self._rotate()
            offset = self._fh.tell()
            self._fh.write(frame)
            self._fh.flush()
            if self.fsync:
                os.fsync(self._fh.fileno())
        except OSError as exc:
            raise IoFailure(str(exc)) from exc
        return offset

    def _rotate(self) -> None:
        self._fh.close()
        self._active_id += 1
        self._open_active()

    def put(self, bucket: str, key: bytes, payload: bytes) -> None:
        self._seq += 1
        rec = StorageRecord(bucket, bytes(key), bytes(payload), self._seq)
        offset = self._append(rec)
        self._index[(bucket, rec.key)] = _Loc(self._active_id, offset, self._seq)

    def delete(self, bucket: str, key: bytes) -> None:
        self._seq += 1
        self._append(StorageRecord(bucket, bytes(key), b"", self._seq, OP_DELETE))
        self._index.pop((bucket, bytes(key)), None)

    def _read_at(self, loc: _Loc) -> StorageRecord:
        fh = self._readers.get(loc.file_id)
        if fh is None:
            fh = self._readers[loc.file_id] = open(self._path(loc.file_id), "rb")
        fh.seek(loc.offset)
        (blen,) = _LEN.unpack(fh.read(_LEN.size))
        return _parse_body(fh.read(blen))

    def get(self, bucket: str, key: bytes) -> bytes | None:
        loc = self._index.get((bucket, bytes(key)))
        if loc is None:
            return None
        try:
            return self._read_at(loc).payload
        except OSError as exc:
            raise IoFailure(str(exc)) from exc

    def keys(self, bucket: str) -> list[bytes]:
        return sorted(k for b, k in self._index if b == bucket)

    def buckets(self) -> list[str]:
        return sorted({b for b, _ in self._index})

    def items(self) -> Iterator[tuple[str, bytes, bytes]]:
        for b, k in sorted(self._index):
            yield b, k, self.get(b, k)

    def size_bytes(self) -> int:
        return sum(p.stat().st_size for _, p in _data_files(self.directory))

    def _close_readers(self) -> None:
        for fh in self._readers.values():
            fh.close()
        self._readers.clear()

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None
        self._close_readers()

    def reopen(self) -> None:
        """Drop in-memory state and rebuild it from disk, as after a crash."""
        self.close()
        self._open()

    def compact(self) -> None:
        """Rewrite live records into one fresh file and delete the old files."""
        old = _data_files(self.directory)
        live = sorted(
            ((loc.sequence, b, k) for (b, k), loc in self._index.items()),
        )
        records = [StorageRecord(b, k, self.get(b, k), seq) for seq, b, k in live]
        self.close()
        target_id = (old[-1][0] + 1) if old else 1
        tmp = self.directory / f"{target_id:08d}.tmp"
        try:
            with open(tmp, "wb") as fh:
                for rec in records:
                    fh.write(rec.frame())
                fh.flush()
                os.fsync(fh.fileno())
            os.replace(tmp, self._path(target_id))
            for _, p in old:
                p.unlink()
        except OSError as exc:
            raise IoFailure(str(exc)) from exc
        self._open()


def open_backend(kind: BackendKind | str, directory: str | os.PathLike | None = None, **kw) -> Backend:
    kind = BackendKind(kind)
    if kind is BackendKind.MEMORY:
        return MemoryBackend()
    if directory is None:
        raise ValueError("log-structured backend needs a directory")
    return LogStructuredBackend(directory, **kw)


def _escape(b: bytes) -> str:
    s = b.decode("utf-8", "backslashreplace")
    return s.replace("\t", "\\t").replace("\n", "\\n")


def dump_lines(directory: str | os.PathLike) -> Iterator[str]:
    """Every record in the log as ``seq, op, bucket, key, payload`` tab-separated."""
    for rec in read_records(directory):
        op = "put" if rec.op == OP_PUT else "del"
        yield "\t".join([str(rec.sequence), op, _escape(rec.bucket.encode()), _escape(rec.key), _escape(rec.payload)])


class ChainStore:
    """Version chains on top of a raw backend, one chain per (bucket, key)."""

    def __init__(self, backend: Backend, retention_limit: int = DEFAULT_RETENTION):
        self.backend = backend
        self.retention_limit = retention_limit

    def get(self, bucket: str, key: bytes) -> VersionChain:
        raw = self.backend.get(bucket, key)
        if raw is None:
            return VersionChain(key.decode("utf-8", "surrogateescape"), (), self.retention_limit)
        return decode_chain(raw)

    def put(self, bucket: str, key: bytes, chain: VersionChain) -> None:
        self.backend.put(bucket, key, encode_chain(chain))

    def siblings(self, bucket: str, key: bytes) -> list[VersionedValue]:
        return self.get(bucket, key).siblings()

    def absorb(self, bucket: str, key: bytes, versions: Iterable[VersionedValue]) -> bool:
        chain, changed = absorb_all(self.get(bucket, key), versions)
        if changed:
            self.put(bucket, key, chain)
        return changed

    def keys(self, bucket: str) -> list[bytes]:
        return self.backend.keys(bucket)

    def buckets(self) -> list[str]:
        return self.backend.buckets()
