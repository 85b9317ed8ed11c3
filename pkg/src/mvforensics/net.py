"""A small depthwise-separable CNN in plain numpy, with hand-written gradients.

Layout of :class:`MvLiteNet`::

    stem    3x3 conv, stride 2, C_in -> 16, per-channel scale/shift, ReLU
    block1  depthwise 3x3 stride 2 + scale/shift + ReLU, pointwise 16 -> 16 + scale/shift + ReLU
    block2  ... pointwise 16 -> 24
    block3  ... pointwise 24 -> 40
    block4  ... pointwise 40 -> 80
    head    global average pool, fully connected 80 -> 1 (logit)

:class:`TwoStreamNet` runs an RGB branch and a motion branch and fuses their
logits with a 2 -> 1 fully connected layer. Both return logits from
``forward``; :func:`predict` applies the sigmoid.

Parameters live in an ordered ``dict`` of arrays. Their dtype decides the
compute precision (float32 for training, float64 for gradient checks).
"""

from __future__ import annotations

import csv
import json
import logging
import struct
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import BadMagic, FormatError, MissingCheckpoint, NonFiniteGradient, ShapeMismatch, TruncatedFile

log = logging.getLogger(__name__)

EPS = 1e-7
STEM_CHANNELS = 16
BLOCK_CHANNELS = (16, 24, 40, 80)


# -- layer primitives ------------------------------------------------------------------

def _pad(x: np.ndarray) -> np.ndarray:
    return np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))


def _out_size(n: int) -> int:
    return (n - 1) // 2 + 1


def conv3x3_s2(x: np.ndarray, w: np.ndarray):
    """Dense 3x3 convolution, stride 2, zero padding 1. w: (K, C, 3, 3)."""
    n, c, h, wd = x.shape
    ho, wo = _out_size(h), _out_size(wd)
    cols = sliding_window_view(_pad(x), (3, 3), axis=(2, 3))[:, :, ::2, ::2][:, :, :ho, :wo]
    out = np.tensordot(cols, w, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    return np.ascontiguousarray(out), cols


def conv3x3_s2_backward(g: np.ndarray, cols: np.ndarray, w: np.ndarray, x_shape):
    n, c, h, wd = x_shape
    ho, wo = g.shape[2:]
    dw = np.tensordot(g, cols, axes=([0, 2, 3], [0, 2, 3]))
    dxp = np.zeros((n, c, h + 2, wd + 2), g.dtype)
    for i in range(3):
        for j in range(3):
            dxp[:, :, i:i + 2 * ho:2, j:j + 2 * wo:2] += np.tensordot(w[:, :, i, j], g, axes=([0], [1])).transpose(1, 0, 2, 3)
    return dxp[:, :, 1:h + 1, 1:wd + 1], dw


def depthwise3x3_s2(x: np.ndarray, k: np.ndarray):
    """Per-channel 3x3 convolution, stride 2, zero padding 1. k: (C, 3, 3)."""
    n, c, h, wd = x.shape
    ho, wo = _out_size(h), _out_size(wd)
    xp = _pad(x)
    out = np.zeros((n, c, ho, wo), x.dtype)
    for i in range(3):
        for j in range(3):
            out += xp[:, :, i:i + 2 * ho:2, j:j + 2 * wo:2] * k[None, :, i, j, None, None]
    return out, xp


def depthwise3x3_s2_backward(g: np.ndarray, xp: np.ndarray, k: np.ndarray, x_shape):
    n, c, h, wd = x_shape
    ho, wo = g.shape[2:]
    dk = np.zeros_like(k)
    dxp = np.zeros_like(xp)
    for i in range(3):
        for j in range(3):
            sl = (slice(None), slice(None), slice(i, i + 2 * ho, 2), slice(j, j + 2 * wo, 2))
            dk[:, i, j] = np.einsum("nchw,nchw->c", g, xp[sl])
            dxp[sl] += g * k[None, :, i, j, None, None]
    return dxp[:, :, 1:h + 1, 1:wd + 1], dk


def pointwise(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """1x1 convolution. w: (K, C)."""
    return np.ascontiguousarray(np.tensordot(w, x, axes=([1], [1])).transpose(1, 0, 2, 3))


def pointwise_backward(g: np.ndarray, x: np.ndarray, w: np.ndarray):
    dw = np.tensordot(g, x, axes=([0, 2, 3], [0, 2, 3]))
    dx = np.tensordot(w, g, axes=([0], [1])).transpose(1, 0, 2, 3)
    return dx, dw


def affine(x: np.ndarray, scale: np.ndarray, shift: np.ndarray) -> np.ndarray:
    return x * scale[None, :, None, None] + shift[None, :, None, None]


def affine_backward(g: np.ndarray, x: np.ndarray, scale: np.ndarray):
    return (g * scale[None, :, None, None], np.einsum("nchw,nchw->c", g, x), g.sum(axis=(0, 2, 3)))


def sigmoid(z):
    z = np.asarray(z)
    return np.where(z >= 0, 1 / (1 + np.exp(-np.abs(z))), np.exp(-np.abs(z)) / (1 + np.exp(-np.abs(z))))


# -- loss ----------------------------------------------------------------------------

def bce_loss(y, y_true, eps: float = EPS) -> float:
    """Mean binary cross entropy, ``-[t log y + (1 - t) log(1 - y)]``, y clamped to [eps, 1 - eps]."""
    y = np.clip(np.asarray(y, np.float64), eps, 1 - eps)
    t = np.asarray(y_true, np.float64)
    return float(np.mean(-(t * np.log(y) + (1 - t) * np.log(1 - y))))


def bce_grad(y, y_true, eps: float = EPS) -> np.ndarray:
    """d(mean BCE)/dy; zero where the clamp is active."""
    y = np.asarray(y, np.float64)
    t = np.asarray(y_true, np.float64)
    inside = (y > eps) & (y < 1 - eps)
    yc = np.clip(y, eps, 1 - eps)
    return np.where(inside, -(t / yc - (1 - t) / (1 - yc)), 0.0) / y.size


def bce_with_logits(z, y_true, eps: float = EPS) -> tuple[float, np.ndarray]:
    """Loss and d(loss)/dz for logits ``z``, consistent with :func:`bce_loss` on sigmoid(z)."""
    z = np.asarray(z)
    y = sigmoid(z)
    t = np.asarray(y_true, z.dtype)
    loss = bce_loss(y, t, eps)
    inside = (y > eps) & (y < 1 - eps)
    grad = np.where(inside, y - t, 0.0) / z.size
    return loss, grad.astype(z.dtype)


# -- networks --------------------------------------------------------------------------

def _he(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


class MvLiteNet:
    """Single-stream classifier returning one logit per sample."""

    kind = "single"

    def __init__(self, c_in: int = 6, seed: int = 0, dtype=np.float32, prefix: str = ""):
        if c_in not in (3, 4, 6):
            raise ValueError(f"c_in must be 3, 4 or 6, got {c_in}")
        self.c_in = c_in
        self.prefix = prefix
        rng = np.random.default_rng(seed)
        p = prefix
        params: dict[str, np.ndarray] = {}
        params[p + "stem.w"] = _he(rng, (STEM_CHANNELS, c_in, 3, 3), 9 * c_in, dtype)
        params[p + "stem.scale"] = np.ones(STEM_CHANNELS, dtype)
        params[p + "stem.shift"] = np.zeros(STEM_CHANNELS, dtype)
        c = STEM_CHANNELS
        for b, k in enumerate(BLOCK_CHANNELS, start=1):
            params[f"{p}block{b}.dw"] = _he(rng, (c, 3, 3), 9, dtype)
            params[f"{p}block{b}.dw_scale"] = np.ones(c, dtype)
            params[f"{p}block{b}.dw_shift"] = np.zeros(c, dtype)
            params[f"{p}block{b}.pw"] = _he(rng, (k, c), c, dtype)
            params[f"{p}block{b}.pw_scale"] = np.ones(k, dtype)
            params[f"{p}block{b}.pw_shift"] = np.zeros(k, dtype)
            c = k
        params[p + "fc.w"] = (rng.standard_normal((1, c)) / np.sqrt(c)).astype(dtype)
        params[p + "fc.b"] = np.zeros(1, dtype)
        self.params = params

    @property
    def dtype(self):
        return self.params[self.prefix + "stem.w"].dtype

    def num_params(self) -> int:
        return sum(v.size for v in self.params.values())

    def astype(self, dtype) -> "MvLiteNet":
        for k in self.params:
            self.params[k] = self.params[k].astype(dtype)
        return self

    def _check(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x)
        if x.ndim != 4 or x.shape[1] != self.c_in:
            raise ShapeMismatch(f"expected (N, {self.c_in}, H, W) input, got {x.shape}")
        return x.astype(self.dtype, copy=False)

    def forward(self, x: np.ndarray, keep: bool = False):
        """Logits of shape (N,). With ``keep`` also returns the backward cache."""
        x = self._check(x)
        p, P = self.prefix, self.params
        cache = []
        h, cols = conv3x3_s2(x, P[p + "stem.w"])
        a = affine(h, P[p + "stem.scale"], P[p + "stem.shift"])
        out = np.maximum(a, 0)
        if keep:
            cache.append(("stem", x.shape, cols, h, a))
        for b in range(1, len(BLOCK_CHANNELS) + 1):
            q = f"{p}block{b}."
            d, xp = depthwise3x3_s2(out, P[q + "dw"])
            da = affine(d, P[q + "dw_scale"], P[q + "dw_shift"])
            dr = np.maximum(da, 0)
            e = pointwise(dr, P[q + "pw"])
            ea = affine(e, P[q + "pw_scale"], P[q + "pw_shift"])
            if keep:
                cache.append((q, out.shape, xp, d, da, dr, e, ea))
            out = np.maximum(ea, 0)
        feat = out.mean(axis=(2, 3))
        z = feat @ P[p + "fc.w"][0] + P[p + "fc.b"][0]
        if keep:
            cache.append(("head", out.shape, feat))
            return z, cache
        return z

    def backward(self, gz: np.ndarray, cache) -> tuple[dict[str, np.ndarray], np.ndarray]:
        """Gradients of every parameter (and of the input) given d(loss)/d(logits)."""
        p, P = self.prefix, self.params
        grads: dict[str, np.ndarray] = {}
        _, out_shape, feat = cache[-1]
        grads[p + "fc.w"] = (gz @ feat)[None, :]
        grads[p + "fc.b"] = np.array([gz.sum()], dtype=gz.dtype)
        n, c, h, w = out_shape
        g = np.broadcast_to((gz[:, None] * P[p + "fc.w"][0][None, :])[:, :, None, None] / (h * w),
                            out_shape).copy()
        for entry in reversed(cache[1:-1]):
            q, in_shape, xp, d, da, dr, e, ea = entry
            g = g * (ea > 0)
            g, grads[q + "pw_scale"], grads[q + "pw_shift"] = affine_backward(g, e, P[q + "pw_scale"])
            g, grads[q + "pw"] = pointwise_backward(g, dr, P[q + "pw"])
            g = g * (da > 0)
            g, grads[q + "dw_scale"], grads[q + "dw_shift"] = affine_backward(g, d, P[q + "dw_scale"])
            g, grads[q + "dw"] = depthwise3x3_s2_backward(g, xp, P[q + "dw"], in_shape)
        _, x_shape, cols, hstem, a = cache[0]
        g = g * (a > 0)
        g, grads[p + "stem.scale"], grads[p + "stem.shift"] = affine_backward(g, hstem, P[p + "stem.scale"])
        gx, grads[p + "stem.w"] = conv3x3_s2_backward(g, cols, P[p + "stem.w"], x_shape)
        return {k: grads[k] for k in P}, gx

    def descriptor(self) -> dict:
        return {"kind": self.kind, "c_in": self.c_in}


class TwoStreamNet:
    """RGB branch + motion branch, logits fused by a 2 -> 1 linear layer."""

    kind = "two_stream"

    def __init__(self, c_motion: int = 6, seed: int = 0, dtype=np.float32):
        if c_motion not in (4, 6):
            raise ValueError(f"motion branch takes 4 or 6 channels, got {c_motion}")
        self.rgb = MvLiteNet(3, seed, dtype, prefix="rgb.")
        self.motion = MvLiteNet(c_motion, seed + 1, dtype, prefix="motion.")
        rng = np.random.default_rng(seed + 2)
        self._fusion = {"fusion.w": (np.array([[1.0, 1.0]]) + 0.1 * rng.standard_normal((1, 2))).astype(dtype),
                        "fusion.b": np.zeros(1, dtype)}

    @property
    def c_in(self):
        return (3, self.motion.c_in)

    @property
    def params(self) -> dict[str, np.ndarray]:
        return _TwoStreamParams(self)

    @property
    def dtype(self):
        return self.rgb.dtype

    def num_params(self) -> int:
        return self.rgb.num_params() + self.motion.num_params() + 3

    def astype(self, dtype) -> "TwoStreamNet":
        self.rgb.astype(dtype)
        self.motion.astype(dtype)
        for k in self._fusion:
            self._fusion[k] = self._fusion[k].astype(dtype)
        return self

    def forward(self, x, keep: bool = False):
        if not isinstance(x, (tuple, list)) or len(x) != 2:
            raise ShapeMismatch("two-stream input must be an (rgb, motion) pair")
        z1, c1 = self.rgb.forward(x[0], keep=True)
        z2, c2 = self.motion.forward(x[1], keep=True)
        if z1.shape != z2.shape:
            raise ShapeMismatch(f"branch batch sizes differ: {z1.shape} vs {z2.shape}")
        w, b = self._fusion["fusion.w"][0], self._fusion["fusion.b"][0]
        z = w[0] * z1 + w[1] * z2 + b
        if keep:
            return z, (z1, z2, c1, c2)
        return z

    def backward(self, gz: np.ndarray, cache):
        z1, z2, c1, c2 = cache
        w = self._fusion["fusion.w"][0]
        grads = {"fusion.w": np.array([[gz @ z1, gz @ z2]], dtype=gz.dtype),
                 "fusion.b": np.array([gz.sum()], dtype=gz.dtype)}
        g1, gx1 = self.rgb.backward(gz * w[0], c1)
        g2, gx2 = self.motion.backward(gz * w[1], c2)
        out = {**g1, **g2, **grads}
        return {k: out[k] for k in self.params}, (gx1, gx2)

    def descriptor(self) -> dict:
        return {"kind": self.kind, "c_in": self.motion.c_in}


class _TwoStreamParams(dict):
    """Live view that writes through to the branch parameter dicts."""

    def __init__(self, net: TwoStreamNet):
        super().__init__({**net.rgb.params, **net.motion.params, **net._fusion})
        self._net = net

    def __setitem__(self, key, value):
        super().__setitem__(key, value)
        for owner in (self._net.rgb.params, self._net.motion.params, self._net._fusion):
            if key in owner:
                owner[key] = value


def build_net(descriptor: dict, seed: int = 0, dtype=np.float32):
    if descriptor.get("kind") == "two_stream":
        return TwoStreamNet(descriptor["c_in"], seed, dtype)
    if descriptor.get("kind") == "single":
        return MvLiteNet(descriptor["c_in"], seed, dtype)
    raise FormatError(f"unknown architecture {descriptor!r}")


def forward(net, x):
    """Fake-probabilities (N,) in (0, 1)."""
    return sigmoid(net.forward(x))


predict = forward


def backward(net, x, labels) -> tuple[float, dict[str, np.ndarray]]:
    """Mean BCE loss on ``x`` and the gradient of every parameter block."""
    z, cache = net.forward(x, keep=True)
    loss, gz = bce_with_logits(z, labels)
    grads, _ = net.backward(gz, cache)
    return loss, grads


# -- optimizer -------------------------------------------------------------------------

@dataclass
class AdamState:
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


@dataclass
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 16
    epochs: int = 8
    seed: int = 0
    frames_per_video: int = 4
    eval_frames: int = 100
    input_res: int = 224
    modality: str = "mv_im"

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.frames_per_video < 1:
            raise ValueError("epochs, batch_size and frames_per_video must be >= 1")
        if self.lr <= 0 or not 0 <= self.beta1 < 1 or not 0 <= self.beta2 < 1:
            raise ValueError("need lr > 0 and betas in [0, 1)")


def adam_step(params: dict, grads: dict, state: AdamState, config: TrainConfig) -> dict:
    """One in-place Adam update with bias correction; returns ``params``.

    Every gradient is checked first, so a non-finite block aborts the step
    before any parameter changes.
    """
    for k in params:
        if not np.all(np.isfinite(grads[k])):
            raise NonFiniteGradient(k)
    state.t += 1
    b1, b2 = config.beta1, config.beta2
    c1, c2 = 1 - b1 ** state.t, 1 - b2 ** state.t
    for k in params:
        g = grads[k]
        m = state.m.get(k, np.zeros_like(params[k]))
        v = state.v.get(k, np.zeros_like(params[k]))
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        state.m[k], state.v[k] = m, v
        step = config.lr * (m / c1) / (np.sqrt(v / c2) + config.eps)
        params[k] = (params[k] - step).astype(params[k].dtype)
    return params


# -- checkpoints -------------------------------------------------------------------------
#
# Layout (all little-endian):
#   b"MVLN"  magic
#   u16      format version (1)
#   u32      length L of the JSON descriptor, then L bytes of UTF-8 JSON:
#            {"kind", "c_in", "blocks": [[name, shape], ...], "meta": {...}}
#   f32[]    every parameter block in descriptor order, C order
#   u8       1 if Adam state follows, else 0
#   u32      Adam step count t, then f32 m blocks, then f32 v blocks

MAGIC = b"MVLN"
VERSION = 1


def save_checkpoint(path: str | Path, net, adam: AdamState | None = None, meta: dict | None = None) -> None:
    params = net.params
    desc = {**net.descriptor(), "blocks": [[k, list(v.shape)] for k, v in params.items()],
            "meta": meta or {}}
    blob = json.dumps(desc, sort_keys=True).encode()
    parts = [MAGIC, struct.pack("<HI", VERSION, len(blob)), blob]
    parts += [np.ascontiguousarray(v, "<f4").tobytes() for v in params.values()]
    if adam is not None and adam.t > 0:
        parts.append(struct.pack("<BI", 1, adam.t))
        parts += [np.ascontiguousarray(adam.m[k], "<f4").tobytes() for k in params]
        parts += [np.ascontiguousarray(adam.v[k], "<f4").tobytes() for k in params]
    else:
        parts.append(b"\x00")
    Path(path).write_bytes(b"".join(parts))


def _decode_checkpoint(data: bytes):
    if data[:4] != MAGIC:
        raise BadMagic("not a model checkpoint")
    if len(data) < 10:
        raise TruncatedFile("checkpoint header truncated")
    version, n = struct.unpack("<HI", data[4:10])
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    if len(data) < 10 + n:
        raise TruncatedFile("checkpoint descriptor truncated")
    try:
        desc = json.loads(data[10:10 + n].decode())
        blocks = [(str(k), tuple(int(s) for s in shape)) for k, shape in desc["blocks"]]
        net = build_net(desc)
    except (ValueError, KeyError, TypeError, UnicodeDecodeError, RecursionError) as exc:
        raise FormatError(f"bad checkpoint descriptor: {exc}") from exc
    expected = {k: v.shape for k, v in net.params.items()}
    if dict(blocks) != expected or len(blocks) != len(expected):
        raise FormatError("checkpoint blocks do not match the architecture")
    pos = 10 + n

    def take(shape):
        nonlocal pos
        size = int(np.prod(shape)) * 4
        if len(data) < pos + size:
            raise TruncatedFile("checkpoint parameter data truncated")
        arr = np.frombuffer(data, "<f4", int(np.prod(shape)), pos).reshape(shape).astype(np.float32)
        pos += size
        return arr

    values = {k: take(shape) for k, shape in blocks}
    for k, v in values.items():
        net.params[k] = v
    adam = None
    if pos >= len(data):
        raise TruncatedFile("checkpoint optimizer flag missing")
    if data[pos] == 1:
        if len(data) < pos + 5:
            raise TruncatedFile("checkpoint optimizer state truncated")
        t = struct.unpack("<I", data[pos + 1:pos + 5])[0]
        pos += 5
        m = {k: take(shape) for k, shape in blocks}
        v = {k: take(shape) for k, shape in blocks}
        adam = AdamState(t, m, v)
    elif data[pos] != 0:
        raise FormatError("bad optimizer flag")
    return net, adam, desc.get("meta", {})


def load_checkpoint(path: str | Path):
    """(net, adam state or None, meta dict)."""
    p = Path(path)
    if not p.is_file():
        raise MissingCheckpoint(f"no checkpoint at {p}")
    return _decode_checkpoint(p.read_bytes())


# -- batching helpers -----------------------------------------------------------------------

def stack_batch(samples) -> np.ndarray | tuple[np.ndarray, np.ndarray]:
    """Stack SampleTensors (or two-stream pairs) into network input."""
    first = samples[0]
    if isinstance(first, tuple):
        return (np.stack([s[0].data for s in samples]), np.stack([s[1].data for s in samples]))
    return np.stack([s.data for s in samples])


def predict_samples(net, samples, batch_size: int = 32) -> np.ndarray:
    out = []
    for i in range(0, len(samples), batch_size):
        out.append(forward(net, stack_batch(samples[i:i + batch_size])))
    return np.concatenate(out) if out else np.zeros(0)


def predict_video(net, frames, k: int = 100, seed: int = 0) -> float:
    """Mean fake-probability over ``sample_frames(len(frames), k, seed)``.

    ``frames`` holds per-frame inputs (SampleTensors or two-stream pairs) or
    a callable ``index -> input`` together with a length via ``len``.
    """
    from .pipeline import sample_frames

    if len(frames) == 0:
        raise ValueError("video has no frames")
    idx = sample_frames(len(frames), k, seed)
    return float(np.mean(predict_samples(net, [frames[i] for i in idx])))


# -- training ---------------------------------------------------------------------------------

@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    val_loss: float
    val_acc: float


@dataclass
class TrainResult:
    net: object
    adam: AdamState
    best_epoch: int
    history: list[EpochLog]


def write_log(path: str | Path, history: list[EpochLog]) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["epoch", "train_loss", "val_loss", "val_acc"])
        for row in history:
            wr.writerow([row.epoch, f"{row.train_loss:.6f}", f"{row.val_loss:.6f}", f"{row.val_acc:.4f}"])


def new_net(modality: str, seed: int = 0, dtype=np.float32):
    from .pipeline import modality_channels

    ch = modality_channels(modality)
    return TwoStreamNet(ch[1], seed, dtype) if isinstance(ch, tuple) else MvLiteNet(ch, seed, dtype)


def train(dataset, config: TrainConfig, augmentation=None, checkpoint: str | Path | None = None,
          log_path: str | Path | None = None) -> TrainResult:
    """Train on ``dataset.split('train')``, keep the epoch with the lowest validation loss.

    ``dataset`` is a :class:`mvforensics.dataset.VideoDataset`. Every epoch
    draws a balanced set of videos (as many fakes as reals, split evenly
    over forgery types) and ``frames_per_video`` frames from each.
    """
    from .dataset import balanced_videos
    from .errors import EmptySplit

    train_videos = dataset.split("train")
    val_videos = dataset.split("val")
    if not train_videos or not val_videos:
        raise EmptySplit("training needs non-empty train and val splits")
    rng = np.random.default_rng(config.seed)
    net = new_net(config.modality, config.seed)
    adam = AdamState()
    history: list[EpochLog] = []
    best = (np.inf, 0, None, None)
    for epoch in range(1, config.epochs + 1):
        t0 = time.time()
        chosen = balanced_videos(train_videos, rng)
        items = []
        for v in chosen:
            for fi in v.pick_frames(config.frames_per_video, rng, config.modality):
                items.append((v, fi))
        order = rng.permutation(len(items))
        losses = []
        for s in range(0, len(order), config.batch_size):
            batch = [items[i] for i in order[s:s + config.batch_size]]
            aug_seed = int(rng.integers(2 ** 31))
            samples = [v.sample(fi, config.modality, augmentation, aug_seed) for v, fi in batch]
            labels = np.array([float(v.is_fake) for v, _ in batch])
            loss, grads = backward(net, stack_batch(samples), labels)
            adam_step(net.params, grads, adam, config)
            losses.append(loss * len(batch))
        train_loss = float(np.sum(losses) / len(items))
        val_loss, val_acc = evaluate(net, val_videos, config)
        history.append(EpochLog(epoch, train_loss, val_loss, val_acc))
        log.info("epoch %d train %.4f val %.4f acc %.3f (%.1fs)", epoch, train_loss, val_loss,
                 val_acc, time.time() - t0)
        if val_loss < best[0]:
            best = (val_loss, epoch, {k: v.copy() for k, v in net.params.items()},
                    AdamState(adam.t, {k: v.copy() for k, v in adam.m.items()},
                              {k: v.copy() for k, v in adam.v.items()}))
    _, best_epoch, best_params, best_adam = best
    for k, v in best_params.items():
        net.params[k] = v
    if checkpoint is not None:
        save_checkpoint(checkpoint, net, best_adam,
                        {"modality": config.modality, "input_res": config.input_res,
                         "epoch": best_epoch, "config": asdict(config)})
    if log_path is not None:
        write_log(log_path, history)
    return TrainResult(net, best_adam, best_epoch, history)


def evaluate(net, videos, config: TrainConfig) -> tuple[float, float]:
    """Frame-level mean BCE and video-level accuracy (threshold 0.5, >= means fake)."""
    total, count, correct = 0.0, 0, 0
    for v in videos:
        idx = v.eval_frames(config.eval_frames, config.seed, config.modality)
        probs = predict_samples(net, [v.sample(i, config.modality) for i in idx])
        total += bce_loss(probs, np.full(len(probs), float(v.is_fake))) * len(probs)
        count += len(probs)
        correct += int((float(np.mean(probs)) >= 0.5) == v.is_fake)
    return total / count, correct / len(videos)
