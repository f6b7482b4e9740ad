"""Subprocess adapter for the native range coder.

The binary speaks a little-endian length-framed protocol on stdin/stdout and
is byte-identical to the reference coder. Encoding buffers chunks and crosses
the pipe once per stream; adaptive decoding crosses once per chunk (the codec
uses one chunk per quadtree step). Contracts and the error taxonomy mirror
the reference implementation.
"""

from __future__ import annotations

import os
import struct
import subprocess

import numpy as np

from .rangecoder import (
    CoderError,
    InvalidCdfError,
    SymbolOutOfRangeError,
    TruncatedPayloadError,
    _per_symbol_cdfs,
)

DEFAULT_BINARY = os.path.join(os.path.dirname(__file__), "..", "..", "native",
                              "target", "release", "glc-coder")

_ERROR_KINDS = {
    1: TruncatedPayloadError,
    2: InvalidCdfError,
    3: SymbolOutOfRangeError,
}


class NativeCoderUnavailable(CoderError):
    pass


def find_binary() -> str:
    path = os.environ.get("GLC_NATIVE_BIN", os.path.abspath(DEFAULT_BINARY))
    if not os.path.isfile(path):
        raise NativeCoderUnavailable(
            f"native coder binary not found at {path}; build it with "
            f"`cargo build --release` in native/ or set GLC_NATIVE_BIN")
    return path


class NativeProcess:
    """One coder subprocess; requests are serialized over its pipe."""

    def __init__(self, binary: str | None = None):
        self.proc = subprocess.Popen(
            [binary or find_binary()],
            stdin=subprocess.PIPE, stdout=subprocess.PIPE)

    def close(self):
        if self.proc.poll() is None:
            try:
                self.proc.stdin.write(b"\x00")
                self.proc.stdin.flush()
            except (BrokenPipeError, ValueError):
                pass
            self.proc.wait(timeout=5)

    def __del__(self):
        try:
            self.close()
        except Exception:
            pass

    def _send(self, blob: bytes) -> None:
        self.proc.stdin.write(blob)
        self.proc.stdin.flush()

    def _read(self, n: int) -> bytes:
        data = self.proc.stdout.read(n)
        if data is None or len(data) != n:
            raise CoderError("native coder pipe closed unexpectedly")
        return data

    def _read_status(self) -> None:
        status = self._read(1)[0]
        if status == 0:
            return
        kind = self._read(1)[0]
        (msg_len,) = struct.unpack("<I", self._read(4))
        message = self._read(msg_len).decode()
        raise _ERROR_KINDS.get(kind, CoderError)(message)

    def encode(self, symbols, cdf_rows) -> bytes:
        symbols = np.asarray(symbols, dtype=np.int64)
        parts = [b"\x01", struct.pack("<I", len(symbols))]
        for s, cdf in zip(symbols, cdf_rows):
            arr = np.asarray(cdf, dtype=np.uint32)
            parts.append(struct.pack("<II", int(s) & 0xFFFFFFFF, len(arr)))
            parts.append(arr.astype("<u4").tobytes())
        self._send(b"".join(parts))
        self._read_status()
        (n,) = struct.unpack("<I", self._read(4))
        return self._read(n)

    def decode_init(self, payload: bytes) -> None:
        self._send(b"\x02" + struct.pack("<I", len(payload)) + payload)
        self._read_status()

    def decode_step(self, cdfs) -> np.ndarray:
        cdfs = list(cdfs)
        parts = [b"\x03", struct.pack("<I", len(cdfs))]
        for cdf in cdfs:
            arr = np.asarray(cdf, dtype=np.uint32)
            parts.append(struct.pack("<I", len(arr)))
            parts.append(arr.astype("<u4").tobytes())
        self._send(b"".join(parts))
        self._read_status()
        raw = self._read(4 * len(cdfs))
        return np.frombuffer(raw, dtype="<u4").astype(np.int64)

    def decode_end(self) -> None:
        self._send(b"\x04")
        self._read_status()

    def pack_bits(self, values, bits: int) -> bytes:
        arr = np.asarray(values, dtype=np.uint32)
        self._send(b"\x05" + struct.pack("<BI", bits, len(arr))
                   + arr.astype("<u4").tobytes())
        self._read_status()
        (n,) = struct.unpack("<I", self._read(4))
        return self._read(n)

    def unpack_bits(self, data: bytes, count: int, bits: int) -> np.ndarray:
        self._send(b"\x06" + struct.pack("<BII", bits, count, len(data)) + data)
        self._read_status()
        raw = self._read(4 * count)
        return np.frombuffer(raw, dtype="<u4").astype(np.int64)


class NativeEncodeSession:
    """Buffers chunks, crosses the pipe once at finish()."""

    def __init__(self, proc: NativeProcess):
        self._proc = proc
        self._symbols = []
        self._cdfs = []

    def encode_chunk(self, symbols, cdfs) -> None:
        symbols = np.asarray(symbols, dtype=np.int64)
        self._symbols.append(symbols)
        self._cdfs.extend(np.asarray(row, dtype=np.int64)
                          for row in _per_symbol_cdfs(cdfs, len(symbols)))

    def finish(self) -> bytes:
        if self._symbols:
            symbols = np.concatenate(self._symbols)
        else:
            symbols = np.empty(0, dtype=np.int64)
        return self._proc.encode(symbols, self._cdfs)


class NativeDecodeSession:
    def __init__(self, proc: NativeProcess, payload: bytes):
        self._proc = proc
        self._proc.decode_init(payload)

    def decode_chunk(self, cdfs) -> np.ndarray:
        return self._proc.decode_step(cdfs)

    def end(self) -> None:
        self._proc.decode_end()


class NativeCoder:
    """Drop-in backend with the reference coder's session interface."""

    name = "native"

    def __init__(self, binary: str | None = None):
        self._proc = NativeProcess(binary)

    def start_encode(self) -> NativeEncodeSession:
        return NativeEncodeSession(self._proc)

    def start_decode(self, payload: bytes) -> NativeDecodeSession:
        return NativeDecodeSession(self._proc, payload)

    def close(self):
        self._proc.close()


def native_range_encode(symbols, cdfs, coder: NativeCoder | None = None) -> bytes:
    """Functional mirror of range_encode through the native backend."""
    own = coder is None
    coder = coder or NativeCoder()
    try:
        session = coder.start_encode()
        session.encode_chunk(symbols, cdfs)
        return session.finish()
    finally:
        if own:
            coder.close()


def native_range_decode(payload: bytes, cdf_provider, n: int,
                        coder: NativeCoder | None = None) -> list:
    """Functional mirror of range_decode; per-symbol adaptive via 1-chunks."""
    own = coder is None
    coder = coder or NativeCoder()
    try:
        session = coder.start_decode(payload)
        out = []
        for _ in range(n):
            sym = session.decode_chunk([cdf_provider(out)])
            out.append(int(sym[0]))
        session.end()
        return out
    finally:
        if own:
            coder.close()
