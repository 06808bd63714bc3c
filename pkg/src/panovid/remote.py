"""Wire protocol for out-of-process generative backends.

Real models run in their own process (usually with a GPU runtime) and speak
a small framed protocol over TCP or stdio:

* frame = 4-byte big-endian header length, UTF-8 JSON header, then the raw
  tensor payloads (C-order, explicit little-endian dtypes) in header order;
* header carries ``api_version``, the ``op``, scalar fields, and a tensor
  manifest ``[{name, shape, dtype}, ...]`` describing the payloads;
* ops: ``descriptor`` (handshake), ``predict`` (gaussian flavor), and
  ``encode`` / ``decode`` / ``token_probs`` (token flavor).

The client pads windows up to the backend's native geometry (repeating the
last frame and edge columns) and crops the response, so servers always see
full-size windows. One reconnect is attempted on a dropped connection;
requests time out after 60 seconds. All sampling randomness stays on the
client, so remote jobs remain byte-deterministic.
"""

from __future__ import annotations

import json
import logging
import socket
import struct
import subprocess
import threading

import numpy as np

from .backends import (
    BackendDescriptor,
    DdpmSchedule,
    GaussianField,
    WindowContext,
)
from .errors import BackendError

log = logging.getLogger(__name__)

API_VERSION = 1
TIMEOUT_SECONDS = 60.0

_DTYPES = {"f4": "<f4", "i4": "<i4", "u1": "|u1"}


def _pack(header: dict, tensors: dict[str, np.ndarray]) -> bytes:
    manifest = []
    payload = bytearray()
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr)
        if arr.dtype == np.float32:
            code = "f4"
        elif arr.dtype == np.int32:
            code = "i4"
        elif arr.dtype in (np.uint8, np.bool_):
            code, arr = "u1", arr.astype(np.uint8)
        else:
            raise BackendError(f"unsupported tensor dtype {arr.dtype} for '{name}'")
        manifest.append({"name": name, "shape": list(arr.shape), "dtype": code})
        payload += arr.astype(_DTYPES[code]).tobytes()
    head = dict(header)
    head["api_version"] = API_VERSION
    head["tensors"] = manifest
    head_bytes = json.dumps(head).encode("utf-8")
    return struct.pack(">I", len(head_bytes)) + head_bytes + bytes(payload)


def _read_exact(read, n: int) -> bytes:
    chunks = []
    remaining = n
    while remaining > 0:
        chunk = read(remaining)
        if not chunk:
            raise EOFError("connection closed mid-message")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def _unpack(read) -> tuple[dict, dict[str, np.ndarray]]:
    head_len = struct.unpack(">I", _read_exact(read, 4))[0]
    header = json.loads(_read_exact(read, head_len).decode("utf-8"))
    tensors = {}
    for entry in header.get("tensors", []):
        dtype = np.dtype(_DTYPES[entry["dtype"]])
        count = int(np.prod(entry["shape"], dtype=np.int64)) if entry["shape"] else 1
        raw = _read_exact(read, count * dtype.itemsize)
        arr = np.frombuffer(raw, dtype=dtype).reshape(entry["shape"])
        if entry["dtype"] == "f4":
            arr = arr.astype(np.float32)
        elif entry["dtype"] == "i4":
            arr = arr.astype(np.int32)
        tensors[entry["name"]] = arr
    return header, tensors


class TcpTransport:
    """Persistent TCP connection with one reconnect on failure."""

    def __init__(self, host: str, port: int, timeout: float = TIMEOUT_SECONDS):
        self.host = host
        self.port = port
        self.timeout = timeout
        self._sock: socket.socket | None = None

    def _connect(self):
        self._sock = socket.create_connection((self.host, self.port), self.timeout)
        self._sock.settimeout(self.timeout)

    def _once(self, data: bytes):
        if self._sock is None:
            self._connect()
        self._sock.sendall(data)
        return _unpack(self._sock.recv)

    def roundtrip(self, data: bytes):
        try:
            return self._once(data)
        except (ConnectionError, BrokenPipeError, EOFError, OSError) as first:
            log.warning("remote backend connection dropped (%s); reconnecting", first)
            self.close()
            try:
                return self._once(data)
            except (ConnectionError, BrokenPipeError, EOFError, OSError) as err:
                raise BackendError(
                    f"remote backend at {self.host}:{self.port} unreachable: {err}"
                ) from err

    def close(self):
        if self._sock is not None:
            try:
                self._sock.close()
            finally:
                self._sock = None


class StdioTransport:
    """Backend subprocess speaking the framed protocol on stdin/stdout."""

    def __init__(self, command: list[str], timeout: float = TIMEOUT_SECONDS):
        self.command = list(command)
        self.timeout = timeout
        self._proc: subprocess.Popen | None = None

    def _spawn(self):
        self._proc = subprocess.Popen(
            self.command, stdin=subprocess.PIPE, stdout=subprocess.PIPE
        )

    def _once(self, data: bytes):
        if self._proc is None or self._proc.poll() is not None:
            self._spawn()
        self._proc.stdin.write(data)
        self._proc.stdin.flush()
        return _unpack(self._proc.stdout.read)

    def roundtrip(self, data: bytes):
        try:
            return self._once(data)
        except (ConnectionError, BrokenPipeError, EOFError, OSError) as first:
            log.warning("backend subprocess died (%s); restarting once", first)
            self.close()
            try:
                return self._once(data)
            except (ConnectionError, BrokenPipeError, EOFError, OSError) as err:
                raise BackendError(f"backend subprocess failed: {err}") from err

    def close(self):
        if self._proc is not None:
            try:
                self._proc.stdin.close()
                self._proc.terminate()
                self._proc.wait(timeout=5)
            except Exception:
                self._proc.kill()
            finally:
                self._proc = None


def _ctx_meta(ctx: WindowContext | None) -> dict:
    if ctx is None:
        return {}
    return {
        "level": ctx.level,
        "frames": list(ctx.frames),
        "cols": list(ctx.cols),
        "level_times": [float(v) for v in ctx.level_times],
        "filter_width": ctx.filter_width,
        "work_shape": list(ctx.work_shape),
        "steps": None if ctx.ddpm is None else ctx.ddpm.steps,
    }


def _ctx_from_meta(meta: dict) -> WindowContext | None:
    if not meta:
        return None
    steps = meta.get("steps")
    return WindowContext(
        level=int(meta["level"]),
        frames=tuple(meta["frames"]),
        cols=tuple(meta["cols"]),
        level_times=np.asarray(meta["level_times"], dtype=np.float64),
        filter_width=int(meta["filter_width"]),
        work_shape=tuple(meta["work_shape"]),
        ddpm=None if steps is None else DdpmSchedule(int(steps)),
    )


class RemoteBackend:
    """Client-side proxy: looks like a local backend, speaks the protocol.

    For the token flavor the proxy doubles as the token model (encode,
    decode, predict_probs), since the tokenizer lives with the weights.
    """

    def __init__(self, transport):
        self.transport = transport
        self._lock = threading.Lock()
        header, _ = self._request({"op": "descriptor"}, {})
        desc = header.get("descriptor")
        if desc is None:
            raise BackendError("remote backend handshake returned no descriptor")
        self.descriptor = BackendDescriptor(**desc)
        self.model = self if self.descriptor.flavor == "token" else None

    def _request(self, header: dict, tensors: dict):
        with self._lock:
            resp_header, resp_tensors = self.transport.roundtrip(_pack(header, tensors))
        if resp_header.get("api_version") != API_VERSION:
            raise BackendError(
                f"remote backend speaks api_version {resp_header.get('api_version')}, "
                f"client expects {API_VERSION}"
            )
        if resp_header.get("status") != "ok":
            raise BackendError(
                f"remote backend error: {resp_header.get('message', 'unknown')}"
            )
        return resp_header, resp_tensors

    def close(self):
        self.transport.close()

    # gaussian flavor -------------------------------------------------------

    def predict(self, observed, pinned, state, t, ctx=None) -> GaussianField:
        d = self.descriptor
        t_len, _, width = state.shape[:3]
        pad_t = max(0, d.context_frames - t_len)
        pad_x = max(0, d.native_width - width)
        pad4 = ((0, pad_t), (0, 0), (0, pad_x), (0, 0))
        pad3 = ((0, pad_t), (0, 0), (0, pad_x))
        obs = np.pad(observed, pad4, mode="edge") if pad_t or pad_x else observed
        pin = np.pad(pinned, pad3, mode="edge") if pad_t or pad_x else pinned
        st = np.pad(state, pad4, mode="edge") if pad_t or pad_x else state
        header = {
            "op": "predict",
            "step": int(t),
            "window_shape": list(st.shape),
            "meta": _ctx_meta(ctx),
        }
        _, out = self._request(
            header, {"observed": obs, "pinned": pin, "state": st}
        )
        if "mu" not in out or "var" not in out:
            raise BackendError("remote predict returned no mu/var tensors")
        mu = out["mu"][:t_len, :, :width]
        var = out["var"][:t_len, :, :width]
        return GaussianField(mu=mu, var=var)

    # token flavor ----------------------------------------------------------

    def prepare(self, frames, valid, seed):
        _, _ = self._request(
            {"op": "prepare", "seed": int(seed)}, {"frames": frames, "valid": valid}
        )
        self.model = self
        return self

    @property
    def vocab_size(self) -> int:
        return self.descriptor.vocab_size

    @property
    def patch_size(self) -> int:
        return self.descriptor.patch_size

    @property
    def token_frames(self) -> int:
        return self.descriptor.token_frames

    def encode(self, frames) -> np.ndarray:
        _, out = self._request({"op": "encode"}, {"frames": frames})
        return out["tokens"]

    def decode(self, tokens) -> np.ndarray:
        _, out = self._request({"op": "decode"}, {"tokens": tokens})
        return out["frames"]

    def predict_probs(self, tokens, known) -> np.ndarray:
        _, out = self._request(
            {"op": "token_probs"}, {"tokens": tokens, "known": known}
        )
        return out["probs"]


def connect_tcp(host: str, port: int, timeout: float = TIMEOUT_SECONDS) -> RemoteBackend:
    return RemoteBackend(TcpTransport(host, port, timeout))


def connect_stdio(command: list[str], timeout: float = TIMEOUT_SECONDS) -> RemoteBackend:
    return RemoteBackend(StdioTransport(command, timeout))


# ---------------------------------------------------------------------------
# server side (used by tests and by anyone wrapping a real model)


def _descriptor_dict(d: BackendDescriptor) -> dict:
    return {
        "flavor": d.flavor,
        "context_frames": d.context_frames,
        "native_height": d.native_height,
        "native_width": d.native_width,
        "causal": d.causal,
        "sampling_steps": d.sampling_steps,
        "sampling_rounds": d.sampling_rounds,
        "vocab_size": d.vocab_size,
        "patch_size": d.patch_size,
        "token_frames": d.token_frames,
    }


def handle_request(backend, header: dict, tensors: dict) -> bytes:
    """Dispatch one decoded request against a local backend, return reply bytes."""
    try:
        if header.get("api_version") != API_VERSION:
            raise BackendError(
                f"server speaks api_version {API_VERSION}, "
                f"client sent {header.get('api_version')}"
            )
        op = header.get("op")
        if op == "descriptor":
            return _pack(
                {"status": "ok", "descriptor": _descriptor_dict(backend.descriptor)}, {}
            )
        if op == "predict":
            ctx = _ctx_from_meta(header.get("meta") or {})
            field = backend.predict(
                tensors["observed"],
                tensors["pinned"].astype(bool),
                tensors["state"],
                int(header["step"]),
                ctx,
            )
            return _pack(
                {"status": "ok"},
                {"mu": field.mu.astype(np.float32), "var": field.var.astype(np.float32)},
            )
        if op == "prepare":
            backend.prepare(
                tensors["frames"], tensors["valid"].astype(bool), int(header["seed"])
            )
            return _pack({"status": "ok"}, {})
        if op == "encode":
            model = backend.require_model()
            return _pack({"status": "ok"}, {"tokens": model.encode(tensors["frames"])})
        if op == "decode":
            model = backend.require_model()
            return _pack({"status": "ok"}, {"frames": model.decode(tensors["tokens"])})
        if op == "token_probs":
            model = backend.require_model()
            probs = model.predict_probs(tensors["tokens"], tensors["known"].astype(bool))
            return _pack({"status": "ok"}, {"probs": probs})
        raise BackendError(f"unknown op '{op}'")
    except Exception as err:  # surface everything to the client
        log.exception("backend server error")
        return _pack({"status": "error", "message": str(err)}, {})


class BackendServer:
    """Minimal threaded TCP server wrapping a local backend."""

    def __init__(self, backend, host: str = "127.0.0.1", port: int = 0):
        self.backend = backend
        self._listener = socket.create_server((host, port))
        self._listener.settimeout(0.2)
        self.host, self.port = self._listener.getsockname()[:2]
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._serve, daemon=True)
        self._thread.start()

    def _serve(self):
        while not self._stop.is_set():
            try:
                conn, _ = self._listener.accept()
            except socket.timeout:
                continue
            except OSError:
                break
            threading.Thread(
                target=self._serve_conn, args=(conn,), daemon=True
            ).start()

    def _serve_conn(self, conn: socket.socket):
        with conn:
            conn.settimeout(TIMEOUT_SECONDS)
            while not self._stop.is_set():
                try:
                    header, tensors = _unpack(conn.recv)
                except (EOFError, OSError):
                    return
                conn.sendall(handle_request(self.backend, header, tensors))

    def close(self):
        self._stop.set()
        self._listener.close()
        self._thread.join(timeout=2)


def serve_stdio(backend, rfile=None, wfile=None):
    """Serve one stdio client until EOF (for subprocess transports)."""
    import sys

    rfile = sys.stdin.buffer if rfile is None else rfile
    wfile = sys.stdout.buffer if wfile is None else wfile
    while True:
        try:
            header, tensors = _unpack(rfile.read)
        except EOFError:
            return
        wfile.write(handle_request(backend, header, tensors))
        wfile.flush()
