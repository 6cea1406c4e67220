"""Length-prefixed binary protocol for out-of-process noise predictors.

Every frame is a little-endian ``uint32`` payload length followed by the
payload; a zero-length frame asks the server to exit.

handshake (both directions)
    ``b"FPDN"`` | u32 version | i32 H | i32 W | i32 T
request
    i32 t | u8 has_condition | H*W float32 x | [H*W float32 condition]
response
    H*W float32 eps, or ``b"FPER"`` followed by a UTF-8 error message

All floats are little-endian IEEE-754 binary32 in row-major order.

Running ``python -m flowpalm.external --data-std 0.3`` serves the closed-form
Gaussian denoiser over stdin/stdout, which is handy for testing clients.
"""

from __future__ import annotations

import argparse
import struct
import subprocess
import sys

import numpy as np

PROTOCOL_VERSION = 1
HELLO = struct.Struct("<4sIiii")
HELLO_MAGIC = b"FPDN"
ERROR_MAGIC = b"FPER"
_LEN = struct.Struct("<I")
_REQ = struct.Struct("<iB")


class ProtocolError(RuntimeError):
    pass


def write_frame(stream, payload: bytes) -> None:
    stream.write(_LEN.pack(len(payload)) + payload)
    stream.flush()


def _read_exact(stream, n: int) -> bytes:
    chunks, got = [], 0
    while got < n:
        chunk = stream.read(n - got)
        if not chunk:
            raise ProtocolError(f"stream closed after {got} of {n} bytes")
        chunks.append(chunk)
        got += len(chunk)
    return b"".join(chunks)


def read_frame(stream) -> bytes:
    (n,) = _LEN.unpack(_read_exact(stream, _LEN.size))
    return _read_exact(stream, n) if n else b""


def encode_hello(height: int, width: int, T: int) -> bytes:
    return HELLO.pack(HELLO_MAGIC, PROTOCOL_VERSION, height, width, T)


def decode_hello(payload: bytes) -> tuple[int, int, int]:
    if len(payload) != HELLO.size:
        raise ProtocolError(f"handshake frame has {len(payload)} bytes, expected {HELLO.size}")
    magic, version, h, w, T = HELLO.unpack(payload)
    if magic != HELLO_MAGIC or version != PROTOCOL_VERSION:
        raise ProtocolError(f"unexpected handshake {magic!r} v{version}")
    return h, w, T


def encode_request(x: np.ndarray, condition, t: int) -> bytes:
    parts = [_REQ.pack(t, condition is not None), np.asarray(x, dtype="<f4").tobytes()]
    if condition is not None:
        parts.append(np.asarray(condition, dtype="<f4").tobytes())
    return b"".join(parts)


def decode_request(payload: bytes, height: int, width: int):
    n = height * width * 4
    if len(payload) < _REQ.size:
        raise ProtocolError("request frame too short")
    t, has_cond = _REQ.unpack_from(payload)
    expected = _REQ.size + n * (2 if has_cond else 1)
    if len(payload) != expected:
        raise ProtocolError(f"request frame has {len(payload)} bytes, expected {expected}")
    x = np.frombuffer(payload, "<f4", height * width, _REQ.size).reshape(height, width)
    cond = None
    if has_cond:
        cond = np.frombuffer(payload, "<f4", height * width, _REQ.size + n).reshape(height, width)
    return t, x.astype(np.float64), None if cond is None else cond.astype(np.float64)


def serve(make_denoiser, instream, outstream) -> None:
    """Handshake, build ``make_denoiser(H, W, T)``, then answer requests until a
    zero-length frame or EOF."""
    h, w, T = decode_hello(read_frame(instream))
    denoiser = make_denoiser(h, w, T)
    write_frame(outstream, encode_hello(h, w, T))
    while True:
        try:
            payload = read_frame(instream)
        except ProtocolError:
            return
        if not payload:
            return
        try:
            t, x, cond = decode_request(payload, h, w)
            eps = np.asarray(denoiser(x, cond, t), dtype="<f4")
            if eps.shape != (h, w):
                raise ValueError(f"denoiser produced shape {eps.shape}")
            write_frame(outstream, eps.tobytes())
        except Exception as exc:  # reported to the client rather than killing the server
            write_frame(outstream, ERROR_MAGIC + str(exc).encode())


class ExternalDenoiser:
    """Client side: spawns ``command`` and talks to it over its stdin/stdout."""

    def __init__(self, command, height: int, width: int, T: int):
        self.shape = (height, width)
        self.proc = subprocess.Popen(command, stdin=subprocess.PIPE, stdout=subprocess.PIPE)
        write_frame(self.proc.stdin, encode_hello(height, width, T))
        got = decode_hello(read_frame(self.proc.stdout))
        if got != (height, width, T):
            self.close()
            raise ProtocolError(f"server answered handshake with {got}, expected {(height, width, T)}")

    def __call__(self, x, condition, t: int) -> np.ndarray:
        if np.shape(x) != self.shape:
            raise ValueError(f"x has shape {np.shape(x)}, session expects {self.shape}")
        write_frame(self.proc.stdin, encode_request(x, condition, t))
        payload = read_frame(self.proc.stdout)
        if payload.startswith(ERROR_MAGIC):
            raise ProtocolError(payload[len(ERROR_MAGIC):].decode(errors="replace"))
        if len(payload) != 4 * x.size:
            raise ProtocolError(f"response has {len(payload)} bytes, expected {4 * x.size}")
        return np.frombuffer(payload, "<f4").reshape(self.shape).astype(np.float64)

    def close(self) -> None:
        if self.proc.poll() is None:
            try:
                write_frame(self.proc.stdin, b"")
                self.proc.stdin.close()
            except OSError:
                pass
            self.proc.wait(timeout=10)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def main(argv=None) -> None:
    from .diffusion import gaussian_denoiser, make_linear_schedule, smoothed

    ap = argparse.ArgumentParser(description="Serve the Gaussian reference denoiser over stdin/stdout.")
    ap.add_argument("--data-std", type=float, default=0.3)
    ap.add_argument("--smooth-sigma", type=float, default=2.0)
    ap.add_argument("--uncond-mean", type=float, default=0.0)
    ap.add_argument("--beta-start", type=float, default=1e-4)
    ap.add_argument("--beta-end", type=float, default=0.02)
    args = ap.parse_args(argv)

    def make(h, w, T):
        schedule = make_linear_schedule(T, args.beta_start, args.beta_end)
        return gaussian_denoiser(schedule, args.data_std, smoothed(args.smooth_sigma), args.uncond_mean)

    serve(make, sys.stdin.buffer, sys.stdout.buffer)


if __name__ == "__main__":
    main()
