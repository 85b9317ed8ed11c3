"""Dense motion fields on a 4x4-pixel grid, built from macroblock partitions.

A :class:`MotionField` holds four motion planes (past x/y, future x/y) in
pixels and two information masks (IMs) marking where the codec supplied a
vector. Cells of intra macroblocks carry no motion and have both IMs at 0.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .bitparse.decoder import DecodedPicture, StreamReport
from .bitparse.macroblock import FUTURE, INTRA, PAST, MacroblockRecord
from .errors import FormatError, GeometryError

CELL = 4


@dataclass(frozen=True)
class MotionField:
    grid_w: int
    grid_h: int
    past_x: np.ndarray
    past_y: np.ndarray
    future_x: np.ndarray
    future_y: np.ndarray
    im_past: np.ndarray
    im_future: np.ndarray
    ref_past: np.ndarray | None = None    # signed frame distance per cell, 0 where IM is 0
    ref_future: np.ndarray | None = None

    def __post_init__(self):
        for name in ("past_x", "past_y", "future_x", "future_y", "im_past", "im_future"):
            if getattr(self, name).shape != (self.grid_h, self.grid_w):
                raise ValueError(f"{name} has shape {getattr(self, name).shape}, "
                                 f"expected {(self.grid_h, self.grid_w)}")

    @classmethod
    def empty(cls, grid_w: int, grid_h: int) -> "MotionField":
        z = lambda dt: np.zeros((grid_h, grid_w), dt)  # noqa: E731
        return cls(grid_w, grid_h, z(np.float32), z(np.float32), z(np.float32), z(np.float32),
                   z(np.uint8), z(np.uint8), z(np.int8), z(np.int8))

    def stack(self, channels: str = "mv_im") -> np.ndarray:
        """Channel-first array: ``mv`` (4 motion planes) or ``mv_im`` (motion plus both IMs)."""
        mv = [self.past_x, self.past_y, self.future_x, self.future_y]
        if channels == "mv":
            planes = mv
        elif channels == "mv_im":
            planes = mv + [self.im_past, self.im_future]
        else:
            raise ValueError(f"unknown channel set {channels!r}")
        return np.stack([np.asarray(p, np.float32) for p in planes])

    def consistent(self) -> bool:
        """IM = 0 implies zero motion in the matching direction."""
        past_ok = not np.any((self.im_past == 0) & ((self.past_x != 0) | (self.past_y != 0)))
        fut_ok = not np.any((self.im_future == 0) & ((self.future_x != 0) | (self.future_y != 0)))
        return past_ok and fut_ok

    def __eq__(self, other):
        if not isinstance(other, MotionField):
            return NotImplemented
        return (self.grid_w, self.grid_h) == (other.grid_w, other.grid_h) and all(
            np.array_equal(getattr(self, n), getattr(other, n))
            for n in ("past_x", "past_y", "future_x", "future_y", "im_past", "im_future"))

    __hash__ = None


def grid_size(width: int, height: int) -> tuple[int, int]:
    return math.ceil(width / CELL), math.ceil(height / CELL)


def rasterize(records: list[MacroblockRecord], width: int, height: int,
              crop_left: int = 0, crop_top: int = 0) -> MotionField:
    """Paint macroblock partitions onto the 4x4 grid of a ``width`` x ``height`` frame.

    ``records`` must tile the coded picture, whose macroblock grid covers
    the display window offset by the SPS crop (``crop_left``, ``crop_top``).
    Cells outside the display window are dropped.
    """
    if width <= 0 or height <= 0:
        raise GeometryError(f"frame size {width}x{height} must be positive")
    mbw = math.ceil((width + crop_left) / 16)
    mbh = math.ceil((height + crop_top) / 16)
    cw, ch = mbw * 4, mbh * 4
    planes = {d: np.zeros((2, ch, cw), np.float32) for d in (PAST, FUTURE)}
    ims = {d: np.zeros((ch, cw), np.uint8) for d in (PAST, FUTURE)}
    refs = {d: np.zeros((ch, cw), np.int8) for d in (PAST, FUTURE)}
    seen = np.zeros(mbw * mbh, bool)

    for rec in records:
        if not 0 <= rec.mb_addr < mbw * mbh:
            raise GeometryError(f"macroblock {rec.mb_addr} outside a {mbw}x{mbh} grid")
        if seen[rec.mb_addr]:
            raise GeometryError(f"macroblock {rec.mb_addr} listed twice")
        seen[rec.mb_addr] = True
        if rec.kind == INTRA:
            continue
        mx, my = rec.mb_addr % mbw * 16, rec.mb_addr // mbw * 16
        covered = np.zeros((4, 4), bool)
        used = {PAST: np.zeros((4, 4), bool), FUTURE: np.zeros((4, 4), bool)}
        for p in rec.partitions:
            lx, ly = p.x0 - mx, p.y0 - my
            if lx < 0 or ly < 0 or lx + p.w > 16 or ly + p.h > 16 or lx % 4 or ly % 4:
                raise GeometryError(f"partition at ({p.x0},{p.y0}) {p.w}x{p.h} "
                                    f"is not aligned inside macroblock {rec.mb_addr}")
            cx, cy, nw, nh = lx // 4, ly // 4, p.w // 4, p.h // 4
            block = used[p.direction][cy:cy + nh, cx:cx + nw]
            if block.any():
                raise GeometryError(f"{p.direction} partitions overlap in macroblock {rec.mb_addr}")
            block[:] = True
            covered[cy:cy + nh, cx:cx + nw] = True
            gy, gx = (my + ly) // 4, (mx + lx) // 4
            sl = (slice(gy, gy + nh), slice(gx, gx + nw))
            planes[p.direction][0][sl] = p.mv_x / 4.0
            planes[p.direction][1][sl] = p.mv_y / 4.0
            ims[p.direction][sl] = 1
            refs[p.direction][sl] = p.ref_offset
        if not covered.all():
            raise GeometryError(f"partitions leave a gap in macroblock {rec.mb_addr}")
    if not seen.all():
        raise GeometryError(f"macroblock {int(np.argmin(seen))} missing from the tiling")

    gw, gh = grid_size(width, height)
    ys = (crop_top + CELL * np.arange(gh)) // CELL
    xs = (crop_left + CELL * np.arange(gw)) // CELL
    pick = np.ix_(ys, xs)
    return MotionField(
        gw, gh, planes[PAST][0][pick], planes[PAST][1][pick],
        planes[FUTURE][0][pick], planes[FUTURE][1][pick],
        ims[PAST][pick], ims[FUTURE][pick], refs[PAST][pick], refs[FUTURE][pick])


def rasterize_picture(pic: DecodedPicture) -> MotionField:
    return rasterize(pic.records, pic.width, pic.height, pic.crop_left, pic.crop_top)


def fields_from_report(report: StreamReport) -> list[tuple[str, MotionField]]:
    """(frame type, field) for every decoded picture, in decode order."""
    return [(pic.frame_type, rasterize_picture(pic)) for pic in report.pictures]


def select_past_only(field: MotionField) -> MotionField:
    z = np.zeros_like(field.future_x)
    return replace(field, future_x=z, future_y=z.copy(), im_future=np.zeros_like(field.im_future),
                   ref_future=None if field.ref_future is None else np.zeros_like(field.ref_future))


def temporal_scale(field: MotionField, ref_past: np.ndarray | None = None,
                   ref_future: np.ndarray | None = None) -> MotionField:
    """Divide every vector by the distance to its reference frame.

    Offsets default to the ones recorded during rasterization. Cells whose
    offset is 0 (no information) are left untouched.
    """
    ref_past = field.ref_past if ref_past is None else ref_past
    ref_future = field.ref_future if ref_future is None else ref_future

    def scale(x, y, ref):
        if ref is None:
            return x, y
        d = np.abs(np.asarray(ref, np.float32))
        d = np.where(d == 0, 1.0, d).astype(np.float32)
        return x / d, y / d

    px, py = scale(field.past_x, field.past_y, ref_past)
    fx, fy = scale(field.future_x, field.future_y, ref_future)
    return replace(field, past_x=px, past_y=py, future_x=fx, future_y=fy)


# -- visualization -------------------------------------------------------------

def _hsv_to_rgb(h: np.ndarray, s: np.ndarray, v: np.ndarray) -> np.ndarray:
    i = np.floor(h * 6).astype(int) % 6
    f = h * 6 - np.floor(h * 6)
    p, q, t = v * (1 - s), v * (1 - f * s), v * (1 - (1 - f) * s)
    table = [(v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q)]
    out = np.zeros(h.shape + (3,))
    for k, (r, g, b) in enumerate(table):
        m = i == k
        out[m] = np.stack([r[m], g[m], b[m]], -1)
    return out


def flow_to_rgb(u: np.ndarray, v: np.ndarray, max_magnitude: float | None = None) -> np.ndarray:
    """Color-wheel rendering: hue from direction, saturation from magnitude.

    Hue is ``atan2(v, u)`` mapped from [0, 2*pi) onto [0, 1) (rightward motion
    is red, downward yellow-green, leftward cyan, upward violet), saturation
    is the magnitude divided by ``max_magnitude`` (the field maximum by
    default) and clipped to 1; value is always 1, so zero motion is white.
    """
    u = np.asarray(u, float)
    v = np.asarray(v, float)
    mag = np.hypot(u, v)
    top = float(mag.max()) if max_magnitude is None else float(max_magnitude)
    sat = np.clip(mag / top, 0, 1) if top > 0 else np.zeros_like(mag)
    hue = (np.arctan2(v, u) % (2 * np.pi)) / (2 * np.pi)
    rgb = _hsv_to_rgb(hue, sat, np.ones_like(mag))
    return np.clip(np.rint(rgb * 255), 0, 255).astype(np.uint8)


def field_to_rgb(field: MotionField, direction: str = PAST, scale: int = CELL) -> np.ndarray:
    """Color-wheel image of one direction, upscaled to pixel resolution."""
    u, v = (field.past_x, field.past_y) if direction == PAST else (field.future_x, field.future_y)
    img = flow_to_rgb(u, v)
    return np.repeat(np.repeat(img, scale, axis=0), scale, axis=1)


# -- on-disk form ------------------------------------------------------------------
#
# A field directory holds ``index.json`` ({"width", "height", "frame_types"})
# and one ``%06d.npy`` float32 array per frame with 8 planes: past_x, past_y,
# future_x, future_y, im_past, im_future, ref_past, ref_future.

def field_planes(fld: MotionField) -> np.ndarray:
    z = np.zeros((fld.grid_h, fld.grid_w), np.float32)
    refs = [z if r is None else r for r in (fld.ref_past, fld.ref_future)]
    return np.stack([fld.past_x, fld.past_y, fld.future_x, fld.future_y,
                     fld.im_past, fld.im_future, *refs]).astype(np.float32)


def field_from_planes(planes: np.ndarray) -> MotionField:
    if planes.ndim != 3 or planes.shape[0] != 8:
        raise GeometryError(f"expected 8 stacked planes, got shape {planes.shape}")
    if planes.dtype.kind not in "fiub" or not np.all(np.isfinite(planes)):
        raise FormatError(f"field planes must be finite real numbers, got {planes.dtype}")
    if not np.isin(planes[4:6], (0, 1)).all():
        raise FormatError("information masks must hold only 0 and 1")
    refs = planes[6:8]
    if np.any(refs != np.round(refs)) or np.any(np.abs(refs) > 127):
        raise FormatError("reference offsets must be integers in [-127, 127]")
    gh, gw = planes.shape[1:]
    return MotionField(gw, gh, planes[0], planes[1], planes[2], planes[3],
                       planes[4].astype(np.uint8), planes[5].astype(np.uint8),
                       planes[6].astype(np.int8), planes[7].astype(np.int8))


def save_fields(directory, fields: list[tuple[str, MotionField]], width: int, height: int) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for i, (_, fld) in enumerate(fields):
        np.save(d / f"{i:06d}.npy", field_planes(fld))
    meta = {"width": width, "height": height, "frame_types": [t for t, _ in fields]}
    (d / "index.json").write_text(json.dumps(meta, indent=1) + "\n")


def load_fields(directory) -> tuple[list[tuple[str, MotionField]], int, int]:
    """(fields, width, height) from a directory written by :func:`save_fields`."""
    d = Path(directory)
    try:
        meta = json.loads((d / "index.json").read_text())
        types, width, height = list(meta["frame_types"]), int(meta["width"]), int(meta["height"])
    except (OSError, ValueError, KeyError, TypeError, OverflowError, RecursionError) as exc:
        raise FormatError(f"{d}: unreadable field index: {exc}") from exc
    if width <= 0 or height <= 0:
        raise FormatError(f"{d}: field index has size {width}x{height}")
    out = []
    for i, t in enumerate(types):
        try:
            planes = np.load(d / f"{i:06d}.npy", allow_pickle=False)
        except Exception as exc:  # noqa: BLE001 - numpy's header parser raises an open-ended set
            raise FormatError(f"{d}: frame {i}: {exc}") from exc
        out.append((str(t), field_from_planes(planes)))
    return out, width, height
