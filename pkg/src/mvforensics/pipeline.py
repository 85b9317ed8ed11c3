"""Preprocessing and augmentation that turn frames and motion fields into classifier inputs.

Order used by :func:`make_sample`:

1. square-pad the face box and crop it from the RGB frame and the motion field,
2. resize to ``input_res`` (bilinear for RGB and motion, nearest for masks),
3. colour augmentations on the raw RGB values,
4. standardization (RGB per channel, motion per channel over IM=1 cells only),
5. flips and GridMask on the whole channel stack,
6. channel selection for the requested modality.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import BoxTooLarge, FormatError
from .ingest import FaceBox
from .motionfield import CELL, MotionField, _hsv_to_rgb, select_past_only

DEGENERATE_STD = 1e-8
MODALITIES = ("rgb", "mv", "mv_p", "mv_im", "rgb+mv_im")


# -- sample container ------------------------------------------------------------

@dataclass
class SampleTensor:
    """(C, H, W) float32 stack with a record of what each channel means.

    ``mv`` lists (x channel, y channel, paired IM channel or None) triples.
    ``degenerate`` holds channels whose standardization had no spread.
    """

    data: np.ndarray
    rgb: tuple[int, ...] = ()
    mv: tuple[tuple[int, int, int | None], ...] = ()
    degenerate: tuple[int, ...] = ()

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def mask_channels(self) -> tuple[int, ...]:
        return tuple(sorted({im for _, _, im in self.mv if im is not None}))

    def im_consistent(self) -> bool:
        for x, y, im in self.mv:
            if im is None:
                continue
            off = self.data[im] == 0
            if np.any(self.data[x][off] != 0) or np.any(self.data[y][off] != 0):
                return False
        return all(np.isin(self.data[c], (0.0, 1.0)).all() for c in self.mask_channels)

    def copy(self) -> "SampleTensor":
        return replace(self, data=self.data.copy())

    def select(self, channels: list[int]) -> "SampleTensor":
        """Keep only ``channels`` (in that order), remapping the layout."""
        pos = {c: i for i, c in enumerate(channels)}
        mv = tuple((pos[x], pos[y], pos.get(im)) for x, y, im in self.mv if x in pos and y in pos)
        return SampleTensor(self.data[channels].copy(), tuple(pos[c] for c in self.rgb if c in pos), mv,
                            tuple(pos[c] for c in self.degenerate if c in pos))


# -- augmentation config -----------------------------------------------------------

@dataclass
class AugmentationConfig:
    """Probabilities (``p_*``) and magnitudes of every augmentation.

    RGB magnitudes are on the 0..255 scale; HSV shifts on the 0..1 scale.
    """

    p_hflip: float = 0.1
    p_vflip: float = 0.1
    p_gridmask: float = 0.1
    p_noise: float = 0.1
    p_blur: float = 0.1
    p_brightness_contrast: float = 0.1
    p_grayscale: float = 0.1
    p_rgb_shift: float = 0.1
    p_hsv: float = 0.1
    p_fancy_pca: float = 0.1
    gridmask_period: int = 32
    gridmask_ratio: float = 0.5
    noise_sigma: float = 10.0
    blur_radius: int = 2
    blur_sigma: float = 1.0
    brightness_limit: float = 0.2
    contrast_limit: float = 0.2
    rgb_shift_limit: float = 20.0
    hue_shift_limit: float = 0.05
    sat_shift_limit: float = 0.1
    val_shift_limit: float = 0.1
    pca_scale: float = 0.1
    seed: int = 0

    def __post_init__(self):
        for f in fields(self):
            if f.name.startswith("p_") and not 0.0 <= getattr(self, f.name) <= 1.0:
                raise ValueError(f"{f.name} must lie in [0, 1]")
        if self.gridmask_period <= 0 or not 0.0 <= self.gridmask_ratio <= 1.0:
            raise ValueError("gridmask needs a positive period and a ratio in [0, 1]")
        if self.blur_radius < 0 or self.blur_sigma <= 0 or self.noise_sigma < 0:
            raise ValueError("blur radius/sigma and noise sigma must be non-negative")

    @classmethod
    def disabled(cls, **kw) -> "AugmentationConfig":
        probs = {f.name: 0.0 for f in fields(cls) if f.name.startswith("p_")}
        return cls(**{**probs, **kw})

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1, sort_keys=True)

    @classmethod
    def from_dict(cls, obj: dict) -> "AugmentationConfig":
        known = {f.name for f in fields(cls)}
        extra = set(obj) - known
        if extra:
            raise FormatError(f"unknown augmentation keys: {sorted(extra)}")
        try:
            return cls(**obj)
        except (TypeError, ValueError) as exc:
            raise FormatError(f"bad augmentation config: {exc}") from exc

    @classmethod
    def load(cls, path: str | Path) -> "AugmentationConfig":
        try:
            obj = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: invalid JSON: {exc}") from exc
        if not isinstance(obj, dict):
            raise FormatError(f"{path}: expected a JSON object")
        return cls.from_dict(obj)


def frame_rng(seed: int, frame_index: int) -> np.random.Generator:
    """Independent per-frame stream, keyed on ``seed XOR frame_index``."""
    return np.random.default_rng(int(seed) ^ int(frame_index))


# -- geometry --------------------------------------------------------------------

def square_pad(box: FaceBox, frame_w: int, frame_h: int) -> FaceBox:
    """Grow the short side symmetrically to a square, then shift it inside the frame."""
    side = max(box.w, box.h)
    if side > frame_w and side > frame_h:
        raise BoxTooLarge(f"{side}px square does not fit a {frame_w}x{frame_h} frame")
    w, h = min(side, frame_w), min(side, frame_h)
    x = box.x - (w - box.w) // 2
    y = box.y - (h - box.h) // 2
    x = min(max(x, 0), frame_w - w)
    y = min(max(y, 0), frame_h - h)
    return FaceBox(box.frame_index, x, y, w, h)


def _bilinear_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Row i holds the weights of output sample i (half-pixel centres, edge clamp)."""
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0, n_in - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    m = np.zeros((n_out, n_in))
    m[np.arange(n_out), lo] += 1 - frac
    m[np.arange(n_out), hi] += frac
    return m


def _nearest_index(n_in: int, n_out: int) -> np.ndarray:
    return np.minimum(((np.arange(n_out) + 0.5) * (n_in / n_out)).astype(int), n_in - 1)


def resize_bilinear(planes: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resize (C, H, W) planes; values are interpolated, never rescaled."""
    planes = np.asarray(planes, np.float64)
    my = _bilinear_matrix(planes.shape[1], out_h)
    mx = _bilinear_matrix(planes.shape[2], out_w)
    return my @ planes @ mx.T


def resize_nearest(planes: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    planes = np.asarray(planes)
    return planes[:, _nearest_index(planes.shape[1], out_h)][:, :, _nearest_index(planes.shape[2], out_w)]


def _crop(planes: np.ndarray, box: FaceBox) -> np.ndarray:
    h, w = planes.shape[1:]
    if box.x < 0 or box.y < 0 or box.x + box.w > w or box.y + box.h > h:
        raise BoxTooLarge(f"box {box} exceeds the {w}x{h} plane")
    return planes[:, box.y:box.y + box.h, box.x:box.x + box.w]


def crop_resize_rgb(frame: np.ndarray, box: FaceBox, input_res: int = 224) -> np.ndarray:
    """(H, W, 3) frame -> (3, input_res, input_res) float32, bilinear."""
    planes = np.moveaxis(np.asarray(frame), -1, 0)
    return resize_bilinear(_crop(planes, box), input_res, input_res).astype(np.float32)


def crop_resize_field(fld: MotionField, box: FaceBox, input_res: int = 224) -> np.ndarray:
    """Motion field -> (6, input_res, input_res): 4 MV planes (bilinear) then 2 IMs (nearest).

    The field is first expanded to pixel resolution by repeating each 4x4
    cell. Vector values keep their pixel units; they are not scaled by the
    zoom factor. Interpolation can carry motion from an informed cell into
    a masked neighbour, so motion is zeroed wherever the resized IM is 0.
    """
    mv = np.stack([fld.past_x, fld.past_y, fld.future_x, fld.future_y]).astype(np.float64)
    im = np.stack([fld.im_past, fld.im_future])
    mv = np.repeat(np.repeat(mv, CELL, axis=1), CELL, axis=2)
    im = np.repeat(np.repeat(im, CELL, axis=1), CELL, axis=2)
    mv = resize_bilinear(_crop(mv, box), input_res, input_res)
    im = resize_nearest(_crop(im, box), input_res, input_res).astype(np.float64)
    mv[0:2] *= im[0]
    mv[2:4] *= im[1]
    return np.concatenate([mv, im]).astype(np.float32)


# -- standardization ---------------------------------------------------------------

def _moments(vals: np.ndarray) -> tuple[float, float]:
    """Mean and population std with exactly rounded sums.

    ``math.fsum`` makes both independent of element order and of a global
    sign flip, so flips commute exactly with standardization.
    """
    if vals.size == 0:
        return 0.0, 0.0
    flat = vals.ravel().tolist()
    mean = math.fsum(flat) / len(flat)
    dev = (vals.ravel() - mean) ** 2
    return mean, math.sqrt(math.fsum(dev.tolist()) / len(flat))


def standardize_mv(sample: SampleTensor) -> SampleTensor:
    """Per-channel standardization of motion over cells whose IM is 1.

    Masked cells stay exactly 0. Channels without spread (fewer than two
    distinct unmasked values, or no unmasked cells) become all-zero and are
    listed in ``degenerate``.
    """
    out = sample.copy()
    flagged = list(sample.degenerate)
    for x, y, im in sample.mv:
        mask = np.ones(out.data.shape[1:], bool) if im is None else out.data[im] == 1
        for c in (x, y):
            vals = out.data[c][mask].astype(np.float64)
            mean, std = _moments(vals)
            plane = np.zeros(out.data.shape[1:], np.float64)
            if std < DEGENERATE_STD:
                flagged.append(c)
            else:
                plane[mask] = (vals - mean) / std
            out.data[c] = plane
    out.degenerate = tuple(sorted(set(flagged)))
    return out


def standardize_rgb(sample: SampleTensor) -> SampleTensor:
    out = sample.copy()
    flagged = list(sample.degenerate)
    for c in sample.rgb:
        vals = out.data[c].astype(np.float64)
        mean, std = _moments(vals)
        if std < DEGENERATE_STD:
            out.data[c] = 0
            flagged.append(c)
        else:
            out.data[c] = (vals - mean) / std
    out.degenerate = tuple(sorted(set(flagged)))
    return out


# -- geometric augmentations ---------------------------------------------------------

def flip_h(sample: SampleTensor) -> SampleTensor:
    """Mirror left-right; horizontal motion components change sign."""
    out = replace(sample, data=sample.data[:, :, ::-1].copy())
    for x, _, _ in sample.mv:
        out.data[x] = -out.data[x]
    out.data += 0.0  # turn -0.0 into 0.0 so reruns stay byte-identical
    return out


def flip_v(sample: SampleTensor) -> SampleTensor:
    """Mirror top-bottom; vertical motion components change sign."""
    out = replace(sample, data=sample.data[:, ::-1, :].copy())
    for _, y, _ in sample.mv:
        out.data[y] = -out.data[y]
    out.data += 0.0
    return out


def gridmask_cells(h: int, w: int, period: int, patch: int, offset: tuple[int, int]) -> np.ndarray:
    """Boolean (h, w) map of zeroed pixels: squares of side ``patch`` every ``period``."""
    oy, ox = offset
    rows = ((np.arange(h) - oy) % period) < patch
    cols = ((np.arange(w) - ox) % period) < patch
    return rows[:, None] & cols[None, :]


def gridmask(sample: SampleTensor, config: AugmentationConfig,
             rng: np.random.Generator | None = None) -> SampleTensor:
    """Zero a regular grid of square patches across every channel (IMs included)."""
    period = config.gridmask_period
    patch = int(round(period * config.gridmask_ratio))
    if patch == 0:
        return sample.copy()
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    offset = (int(rng.integers(period)), int(rng.integers(period)))
    zero = gridmask_cells(sample.data.shape[1], sample.data.shape[2], period, patch, offset)
    out = sample.copy()
    out.data[:, zero] = 0
    return out


# -- colour augmentations ------------------------------------------------------------

def gaussian_kernel(radius: int, sigma: float) -> np.ndarray:
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-x * x / (2 * sigma * sigma))
    return k / k.sum()


def gaussian_blur(rgb: np.ndarray, radius: int, sigma: float) -> np.ndarray:
    """Separable blur of (3, H, W) planes with edge reflection."""
    k = gaussian_kernel(radius, sigma)
    out = ndimage.correlate1d(np.asarray(rgb, np.float64), k, axis=1, mode="reflect")
    return ndimage.correlate1d(out, k, axis=2, mode="reflect")


LUMA = np.array([0.299, 0.587, 0.114])


def grayscale(rgb: np.ndarray) -> np.ndarray:
    gray = np.tensordot(LUMA, rgb, axes=1)
    return np.broadcast_to(gray, rgb.shape).copy()


def rgb_to_hsv(rgb: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(3, H, W) in [0, 1] -> hue, saturation, value planes in [0, 1]."""
    r, g, b = rgb
    mx, mn = rgb.max(axis=0), rgb.min(axis=0)
    delta = mx - mn
    safe = np.where(delta > 0, delta, 1.0)
    h = np.where(mx == r, ((g - b) / safe) % 6, np.where(mx == g, (b - r) / safe + 2, (r - g) / safe + 4))
    h = np.where(delta > 0, h / 6.0, 0.0)
    s = np.where(mx > 0, delta / np.where(mx > 0, mx, 1.0), 0.0)
    return h, s, mx


def hsv_shift(rgb: np.ndarray, dh: float, ds: float, dv: float) -> np.ndarray:
    h, s, v = rgb_to_hsv(np.clip(rgb, 0, 255) / 255.0)
    out = _hsv_to_rgb((h + dh) % 1.0, np.clip(s + ds, 0, 1), np.clip(v + dv, 0, 1))
    return np.moveaxis(out, -1, 0) * 255.0


def fancy_pca(rgb: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    """Shift colours along the principal axes of the pixel covariance.

    ``alpha`` (3 draws) scales each eigenvector by its eigenvalue.
    """
    pix = rgb.reshape(3, -1) / 255.0
    cov = np.cov(pix)
    vals, vecs = np.linalg.eigh(cov)
    delta = vecs @ (alpha * vals)
    return rgb + (delta * 255.0)[:, None, None]


def rgb_augment(sample: SampleTensor, config: AugmentationConfig,
                rng: np.random.Generator | None = None) -> SampleTensor:
    """Colour augmentations on the RGB channels (0..255 scale); motion is untouched."""
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    out = sample.copy()
    if not sample.rgb:
        return out
    idx = list(sample.rgb)
    rgb = out.data[idx].astype(np.float64)
    c = config
    if rng.random() < c.p_noise:
        rgb = rgb + rng.normal(0, c.noise_sigma, rgb.shape)
    if rng.random() < c.p_blur:
        rgb = gaussian_blur(rgb, c.blur_radius, c.blur_sigma)
    if rng.random() < c.p_brightness_contrast:
        alpha = 1 + rng.uniform(-c.contrast_limit, c.contrast_limit)
        beta = 255 * rng.uniform(-c.brightness_limit, c.brightness_limit)
        rgb = rgb * alpha + beta
    if rng.random() < c.p_grayscale:
        rgb = grayscale(rgb)
    if rng.random() < c.p_rgb_shift:
        rgb = rgb + rng.uniform(-c.rgb_shift_limit, c.rgb_shift_limit, (3, 1, 1))
    if rng.random() < c.p_hsv:
        d = rng.uniform(-1, 1, 3) * (c.hue_shift_limit, c.sat_shift_limit, c.val_shift_limit)
        rgb = hsv_shift(rgb, *d)
    if rng.random() < c.p_fancy_pca:
        rgb = fancy_pca(rgb, rng.normal(0, c.pca_scale, 3))
    out.data[idx] = np.clip(rgb, 0, 255)
    return out


def geometric_augment(sample: SampleTensor, config: AugmentationConfig,
                      rng: np.random.Generator) -> SampleTensor:
    out = sample
    if rng.random() < config.p_hflip:
        out = flip_h(out)
    if rng.random() < config.p_vflip:
        out = flip_v(out)
    if rng.random() < config.p_gridmask:
        out = gridmask(out, config, rng)
    return out


# -- frame sampling ------------------------------------------------------------------

def sample_frames(n: int, k: int, seed: int = 0) -> list[int]:
    """``k`` distinct indices from ``range(n)`` (all of them when ``n <= k``), sorted."""
    if n < 1 or k < 1:
        raise ValueError("need n >= 1 and k >= 1")
    if n <= k:
        return list(range(n))
    rng = np.random.default_rng(seed)
    return sorted(int(i) for i in rng.choice(n, size=k, replace=False))


# -- assembly ------------------------------------------------------------------------

_LAYOUT_RGB = (0, 1, 2)
_LAYOUT_MV = ((3, 4, 7), (5, 6, 8))


def modality_channels(modality: str) -> int | tuple[int, int]:
    return {"rgb": 3, "mv": 4, "mv_p": 4, "mv_im": 6, "rgb+mv_im": (3, 6)}[modality]


def base_stack(frame: np.ndarray | None, fld: MotionField | None, box: FaceBox,
               input_res: int = 224, past_only: bool = False) -> SampleTensor:
    """Crop and resize one frame into the raw 9-channel stack (RGB, 4 MV, 2 IM).

    Missing inputs leave their channels at zero. Nothing is standardized yet.
    """
    res = input_res
    rgb = crop_resize_rgb(frame, box, res) if frame is not None else np.zeros((3, res, res), np.float32)
    if fld is not None:
        motion = crop_resize_field(select_past_only(fld) if past_only else fld, box, res)
    else:
        motion = np.zeros((6, res, res), np.float32)
    return SampleTensor(np.concatenate([rgb, motion]).astype(np.float32), _LAYOUT_RGB, _LAYOUT_MV)


def finish_sample(base: SampleTensor, modality: str = "mv_im",
                  config: AugmentationConfig | None = None,
                  rng: np.random.Generator | None = None):
    """Augment, standardize and select the channels of a :func:`base_stack` result."""
    if modality not in MODALITIES:
        raise ValueError(f"modality must be one of {MODALITIES}")
    need_rgb = modality in ("rgb", "rgb+mv_im")
    sample = base
    if config is not None:
        rng = rng if rng is not None else np.random.default_rng(config.seed)
        if need_rgb:
            sample = rgb_augment(sample, config, rng)
    sample = standardize_mv(standardize_rgb(sample) if need_rgb else sample)
    if config is not None:
        sample = geometric_augment(sample, config, rng)
    sample.data = sample.data.astype(np.float32)
    if modality == "rgb":
        return sample.select([0, 1, 2])
    if modality in ("mv", "mv_p"):
        return sample.select([3, 4, 5, 6])
    if modality == "mv_im":
        return sample.select([3, 4, 5, 6, 7, 8])
    return sample.select([0, 1, 2]), sample.select([3, 4, 5, 6, 7, 8])


def make_sample(frame: np.ndarray | None, fld: MotionField | None, box: FaceBox,
                modality: str = "mv_im", input_res: int = 224,
                config: AugmentationConfig | None = None,
                rng: np.random.Generator | None = None):
    """Build the classifier input for one frame.

    Returns a :class:`SampleTensor`, or an (rgb, motion) pair for the
    ``rgb+mv_im`` two-stream modality. ``config=None`` disables augmentation.
    """
    if modality not in MODALITIES:
        raise ValueError(f"modality must be one of {MODALITIES}")
    if modality != "rgb" and fld is None:
        raise ValueError(f"modality {modality!r} needs a motion field")
    if modality in ("rgb", "rgb+mv_im") and frame is None:
        raise ValueError(f"modality {modality!r} needs an RGB frame")
    base = base_stack(frame if modality in ("rgb", "rgb+mv_im") else None,
                      None if modality == "rgb" else fld, box, input_res, modality == "mv_p")
    return finish_sample(base, modality, config, rng)
