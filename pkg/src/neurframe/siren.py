"""Sinusoidal MLP mapping points to unit 9-vectors, with manual reverse mode and Adam.

Layer ``l`` of the sine stack computes ``sin(omega0 * (h @ W_l + b_l))``; the
head is linear and its output ``r`` is normalized to ``q = r / |r|``.
"""
from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

DEFAULT_OMEGA0 = 30.0
DEFAULT_WIDTHS = (3, 256, 256, 256, 256, 256, 9)


class DegenerateOutputError(FloatingPointError):
    pass


@dataclass
class MlpParams:
    weights: list
    biases: list
    omega0: float = DEFAULT_OMEGA0

    @property
    def widths(self) -> tuple:
        return (self.weights[0].shape[0],) + tuple(w.shape[1] for w in self.weights)

    def count(self) -> int:
        return int(sum(w.size + b.size for w, b in zip(self.weights, self.biases)))

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases], self.omega0)

    def zeros_like(self) -> "MlpParams":
        return MlpParams([np.zeros_like(w) for w in self.weights], [np.zeros_like(b) for b in self.biases], self.omega0)

    def arrays(self):
        for w, b in zip(self.weights, self.biases):
            yield w
            yield b

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def equals(self, other: "MlpParams") -> bool:
        return (self.omega0 == other.omega0 and len(self.weights) == len(other.weights)
                and all(np.array_equal(a, b) for a, b in zip(self.arrays(), other.arrays())))


def init_params(seed: int, widths=DEFAULT_WIDTHS, omega0: float = DEFAULT_OMEGA0) -> MlpParams:
    """SIREN initialisation.

    First layer weights ~ U(-1/fan_in, 1/fan_in); all later layers
    ~ U(-sqrt(6/fan_in)/omega0, +...).  Biases ~ U(-1/sqrt(fan_in), +...).
    """
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
        bound = 1.0 / fan_in if i == 0 else np.sqrt(6.0 / fan_in) / omega0
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        bb = 1.0 / np.sqrt(fan_in)
        biases.append(rng.uniform(-bb, bb, size=fan_out))
    return MlpParams(weights, biases, float(omega0))


@dataclass
class FieldSample:
    """Network evaluation at a batch of points.  ``q`` rows have unit norm."""

    points: np.ndarray
    raw: np.ndarray
    q: np.ndarray
    norms: np.ndarray
    _inputs: list = field(default_factory=list, repr=False)
    _cos: list = field(default_factory=list, repr=False)


def forward(params: MlpParams, points, keep_tape: bool = True) -> FieldSample:
    x = np.atleast_2d(np.asarray(points, dtype=float))
    if not np.all(np.isfinite(x)):
        raise ValueError("query points must be finite")
    w0 = params.omega0
    inputs, cosines = [], []
    h = x
    for w, b in zip(params.weights[:-1], params.biases[:-1]):
        z = w0 * (h @ w + b)
        if keep_tape:
            inputs.append(h)
            cosines.append(np.cos(z))
        h = np.sin(z)
    if keep_tape:
        inputs.append(h)
    raw = h @ params.weights[-1] + params.biases[-1]
    norms = np.linalg.norm(raw, axis=1)
    if np.any(norms < 1e-12):
        raise DegenerateOutputError(f"network output vanishes at {int(np.sum(norms < 1e-12))} points")
    return FieldSample(x, raw, raw / norms[:, None], norms, inputs, cosines)


def evaluate(params: MlpParams, points, chunk: int = 4096) -> np.ndarray:
    """Normalized coefficients at many points without keeping a tape."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    out = [forward(params, pts[i:i + chunk], keep_tape=False).q for i in range(0, len(pts), chunk)]
    return np.concatenate(out) if out else np.zeros((0, 9))


def backward(params: MlpParams, sample: FieldSample, grad_q) -> MlpParams:
    """Gradient of a scalar loss given ``dL/dq`` for every row of ``sample``."""
    if not sample._inputs:
        raise ValueError("forward pass was run without a tape")
    gq = np.asarray(grad_q, dtype=float)
    q = sample.q
    g = (gq - q * np.sum(q * gq, axis=1, keepdims=True)) / sample.norms[:, None]
    grads = params.zeros_like()
    grads.weights[-1] = sample._inputs[-1].T @ g
    grads.biases[-1] = g.sum(axis=0)
    gh = g @ params.weights[-1].T
    w0 = params.omega0
    for layer in range(len(params.weights) - 2, -1, -1):
        ga = w0 * sample._cos[layer] * gh
        grads.weights[layer] = sample._inputs[layer].T @ ga
        grads.biases[layer] = ga.sum(axis=0)
        if layer:
            gh = ga @ params.weights[layer].T
    return grads


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    m: MlpParams
    v: MlpParams
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: MlpParams, **kw) -> "AdamState":
        return cls(params.zeros_like(), params.zeros_like(), **kw)


def adam_step(params: MlpParams, grads: MlpParams, state: AdamState, lr: float = 5e-5):
    """One bias-corrected Adam update, applied in place; returns ``(params, state)``."""
    for i, (gw, gb) in enumerate(zip(grads.weights, grads.biases)):
        if not (np.all(np.isfinite(gw)) and np.all(np.isfinite(gb))):
            raise FloatingPointError(f"non-finite gradient in layer {i}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for p_list, g_list, m_list, v_list in (
        (params.weights, grads.weights, state.m.weights, state.v.weights),
        (params.biases, grads.biases, state.m.biases, state.v.biases),
    ):
        for p, g, m, v in zip(p_list, g_list, m_list, v_list):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


# ---------------------------------------------------------------------------
# checkpoints

_MAGIC = b"NFCKPT\x01\n"
CHECKPOINT_VERSION = 1


def dumps_checkpoint(params: MlpParams, center=(0.0, 0.0, 0.0), scale: float = 1.0, meta: dict | None = None) -> bytes:
    """Deterministic byte dump: magic, JSON header line, raw little-endian float64 blocks."""
    header = {
        "version": CHECKPOINT_VERSION,
        "omega0": float(params.omega0).hex(),
        "shapes": [list(a.shape) for a in params.arrays()],
        "center": [float(c).hex() for c in np.asarray(center, dtype=float)],
        "scale": float(scale).hex(),
        "meta": meta or {},
    }
    buf = io.BytesIO()
    buf.write(_MAGIC)
    text = json.dumps(header, sort_keys=True).encode()
    buf.write(struct.pack("<Q", len(text)))
    buf.write(text)
    for a in params.arrays():
        buf.write(np.ascontiguousarray(a, dtype="<f8").tobytes())
    return buf.getvalue()


def loads_checkpoint(data: bytes):
    """Inverse of ``dumps_checkpoint``: returns ``(params, center, scale, meta)``."""
    if not data.startswith(_MAGIC):
        raise ValueError("not a frame-field checkpoint")
    off = len(_MAGIC)
    (n,) = struct.unpack("<Q", data[off:off + 8])
    off += 8
    header = json.loads(data[off:off + n])
    off += n
    if header["version"] != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {header['version']}")
    arrays = []
    for shape in header["shapes"]:
        size = int(np.prod(shape)) * 8
        arrays.append(np.frombuffer(data[off:off + size], dtype="<f8").reshape(shape).astype(float))
        off += size
    params = MlpParams(arrays[0::2], arrays[1::2], float.fromhex(header["omega0"]))
    center = np.array([float.fromhex(c) for c in header["center"]])
    return params, center, float.fromhex(header["scale"]), header["meta"]


def save_checkpoint(path, params: MlpParams, center=(0.0, 0.0, 0.0), scale: float = 1.0, meta: dict | None = None) -> None:
    Path(path).write_bytes(dumps_checkpoint(params, center, scale, meta))


def load_checkpoint(path):
    return loads_checkpoint(Path(path).read_bytes())
