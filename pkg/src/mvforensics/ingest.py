"""Readers and writers for every on-disk format the toolkit exchanges.

Formats
-------
MV dump (``*.mvdump.jsonl``)
    One JSON object per line with exactly the keys ``frame_index``,
    ``direction`` ("past"/"future"), ``x0``, ``y0``, ``w``, ``h`` (pixels),
    ``mv_x_qpel``, ``mv_y_qpel`` (quarter-pel integers) and ``ref_offset``
    (signed frame distance, negative = past). Unknown keys are ignored.
Flow (``*.flo``)
    Middlebury layout: float32 magic 202021.25, int32 width, int32 height,
    then row-major interleaved little-endian float32 (u, v). Components
    with magnitude above 1e9 mark unknown flow.
Frames
    Binary PPM (P6, maxval 255) files named ``%06d.ppm`` in one directory.
Face boxes (``*.boxes.jsonl``)
    ``{"frame_index": i, "x": .., "y": .., "w": .., "h": ..}`` per line.
Manifest (``manifest.jsonl``)
    One video per line: ``video_id``, ``label`` ("real"/"fake"),
    ``forgery_type``, ``split`` and optional ``stream``, ``frames``,
    ``boxes``, ``mvdump`` paths (relative to the manifest) plus
    ``width``, ``height``, ``num_frames``.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .bitparse.macroblock import FUTURE, INTER, INTRA, PAST, MacroblockRecord, PartitionMv
from .errors import BadMagic, FormatError, MissingFrame, TruncatedFile
from .motionfield import MotionField, rasterize

FLO_MAGIC = 202021.25
FLO_UNKNOWN = 1e9
FORGERY_TYPES = ("DF", "F2F", "FS", "FSwap", "NT", "Pristine")
SPLITS = ("train", "val", "test")
BLOCK_SIZES = (4, 8, 16)


# -- MV dumps ------------------------------------------------------------------

@dataclass(frozen=True)
class MvDumpRecord:
    frame_index: int
    direction: str
    x0: int
    y0: int
    w: int
    h: int
    mv_x_qpel: int
    mv_y_qpel: int
    ref_offset: int

    def __post_init__(self):
        if self.direction not in (PAST, FUTURE):
            raise ValueError(f"direction must be past/future, got {self.direction!r}")
        if self.w not in BLOCK_SIZES or self.h not in BLOCK_SIZES:
            raise ValueError(f"block size {self.w}x{self.h} not in {BLOCK_SIZES}")
        if abs(self.ref_offset) > 16:
            raise ValueError(f"|ref_offset| {abs(self.ref_offset)} > 16")
        if self.frame_index < 0 or self.x0 < 0 or self.y0 < 0:
            raise ValueError("negative frame index or position")


_DUMP_FIELDS = tuple(MvDumpRecord.__dataclass_fields__)


def _int_field(obj: dict, key: str, line: int) -> int:
    v = obj.get(key)
    if isinstance(v, bool) or not isinstance(v, int):
        raise FormatError(f"field {key!r} must be an integer, got {v!r}", line)
    return v


def _json_lines(path: str | Path):
    try:
        text = Path(path).read_bytes().decode("utf-8")
    except UnicodeDecodeError as exc:
        raise FormatError(f"not UTF-8 text: {exc}") from exc
    for n, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip():
            continue
        try:
            obj = json.loads(raw)
        except (json.JSONDecodeError, RecursionError) as exc:
            raise FormatError(f"invalid JSON: {exc}", n) from exc
        if not isinstance(obj, dict):
            raise FormatError("each line must be a JSON object", n)
        yield n, obj


def parse_mvdump_line(obj: dict, line: int = 0) -> MvDumpRecord:
    values = {}
    for key in _DUMP_FIELDS:
        if key not in obj:
            raise FormatError(f"missing field {key!r}", line)
        values[key] = obj[key] if key == "direction" else _int_field(obj, key, line)
    try:
        return MvDumpRecord(**values)
    except ValueError as exc:
        raise FormatError(str(exc), line) from exc


def read_mvdump(path: str | Path) -> list[list[MvDumpRecord]]:
    """Per-frame record lists; frames without records get an empty list."""
    frames: list[list[MvDumpRecord]] = []
    for n, obj in _json_lines(path):
        rec = parse_mvdump_line(obj, n)
        if rec.frame_index > 1_000_000:
            raise FormatError(f"frame_index {rec.frame_index} is implausibly large", n)
        while len(frames) <= rec.frame_index:
            frames.append([])
        frames[rec.frame_index].append(rec)
    return frames


def write_mvdump(path: str | Path, records) -> None:
    """Write records (flat iterable or per-frame lists) one JSON object per line."""
    flat = []
    for item in records:
        flat.extend(item if isinstance(item, (list, tuple)) else [item])
    with open(path, "w") as fh:
        for rec in flat:
            fh.write(json.dumps(asdict(rec)) + "\n")


def dump_from_macroblocks(frame_index: int, records: list[MacroblockRecord]) -> list[MvDumpRecord]:
    return [MvDumpRecord(frame_index, p.direction, p.x0, p.y0, p.w, p.h, p.mv_x, p.mv_y, p.ref_offset)
            for rec in records for p in rec.partitions]


def macroblocks_from_dump(records: list[MvDumpRecord], width: int, height: int) -> list[MacroblockRecord]:
    """Regroup one frame's dump records into raster-ordered macroblocks.

    Macroblocks without any record are intra (no motion information).
    """
    mbw, mbh = math.ceil(width / 16), math.ceil(height / 16)
    parts: dict[int, list[PartitionMv]] = {}
    for rec in records:
        mx, my = rec.x0 // 16, rec.y0 // 16
        if rec.x0 % 16 + rec.w > 16 or rec.y0 % 16 + rec.h > 16:
            raise FormatError(f"block at ({rec.x0},{rec.y0}) {rec.w}x{rec.h} straddles macroblocks")
        if mx >= mbw or my >= mbh:
            raise FormatError(f"block at ({rec.x0},{rec.y0}) outside {width}x{height} frame")
        parts.setdefault(my * mbw + mx, []).append(PartitionMv(
            rec.x0, rec.y0, rec.w, rec.h, rec.mv_x_qpel, rec.mv_y_qpel, rec.ref_offset, rec.direction))
    return [MacroblockRecord(addr, INTER, tuple(parts[addr])) if addr in parts
            else MacroblockRecord(addr, INTRA) for addr in range(mbw * mbh)]


def frame_type_from_dump(records: list[MvDumpRecord]) -> str:
    if not records:
        return "I"
    return "B" if any(r.direction == FUTURE for r in records) else "P"


def fields_from_dump(frames: list[list[MvDumpRecord]], width: int, height: int,
                     num_frames: int | None = None) -> list[tuple[str, MotionField]]:
    """(frame type, field) per frame of a dump; trailing record-less frames count as I."""
    n = len(frames) if num_frames is None else num_frames
    out = []
    for i in range(n):
        recs = frames[i] if i < len(frames) else []
        mbs = macroblocks_from_dump(recs, width, height)
        out.append((frame_type_from_dump(recs), rasterize(mbs, width, height)))
    return out


# -- optical flow ------------------------------------------------------------------

@dataclass
class FlowField:
    u: np.ndarray
    v: np.ndarray
    valid: np.ndarray = None  # bool mask; False where the file held the unknown sentinel

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=np.float64)
        self.v = np.asarray(self.v, dtype=np.float64)
        if self.u.shape != self.v.shape or self.u.ndim != 2:
            raise ValueError("u and v must be 2-D planes of equal shape")
        if self.valid is None:
            self.valid = (np.abs(self.u) <= FLO_UNKNOWN) & (np.abs(self.v) <= FLO_UNKNOWN) \
                & np.isfinite(self.u) & np.isfinite(self.v)
        self.valid = np.asarray(self.valid, dtype=bool)

    @property
    def height(self) -> int:
        return self.u.shape[0]

    @property
    def width(self) -> int:
        return self.u.shape[1]


def read_flo(path: str | Path) -> FlowField:
    data = Path(path).read_bytes()
    if len(data) < 12:
        raise TruncatedFile(f"{path}: {len(data)} bytes is shorter than the .flo header")
    magic, w, h = struct.unpack("<fii", data[:12])
    if magic != FLO_MAGIC:
        raise BadMagic(f"{path}: bad .flo magic {magic!r}")
    if w <= 0 or h <= 0 or w * h > 1 << 28:
        raise FormatError(f"{path}: implausible flow size {w}x{h}")
    need = 12 + 8 * w * h
    if len(data) < need:
        raise TruncatedFile(f"{path}: expected {need} bytes, found {len(data)}")
    with np.errstate(invalid="ignore"):  # NaN components are legal; FlowField marks them invalid
        uv = np.frombuffer(data, dtype="<f4", count=2 * w * h, offset=12).reshape(h, w, 2).astype(np.float64)
    return FlowField(uv[..., 0], uv[..., 1])


def write_flo(path: str | Path, flow: FlowField) -> None:
    uv = np.stack([flow.u, flow.v], axis=-1).astype("<f4")
    if flow.valid is not None:
        uv[~flow.valid] = np.float32(1e10)
    with open(path, "wb") as fh:
        fh.write(struct.pack("<fii", FLO_MAGIC, flow.width, flow.height))
        fh.write(uv.tobytes())


# -- frames --------------------------------------------------------------------

def _ppm_token(data: bytes, pos: int) -> tuple[bytes, int]:
    while True:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        break
    start = pos
    while pos < len(data) and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise FormatError("truncated PPM header")
    return data[start:pos], pos


def decode_ppm(data: bytes) -> np.ndarray:
    if data[:2] != b"P6":
        raise BadMagic("not a binary PPM (P6) file")
    pos = 2
    fields = []
    for _ in range(3):
        tok, pos = _ppm_token(data, pos)
        if not tok.isdigit():
            raise FormatError(f"bad PPM header token {tok!r}")
        fields.append(int(tok))
    w, h, maxval = fields
    if w <= 0 or h <= 0 or w * h > 1 << 28:
        raise FormatError(f"implausible PPM size {w}x{h}")
    if maxval != 255:
        raise FormatError(f"only maxval 255 is supported, got {maxval}")
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise FormatError("missing whitespace after PPM header")
    pos += 1
    need = w * h * 3
    if len(data) - pos < need:
        raise TruncatedFile(f"PPM pixel data: expected {need} bytes, found {len(data) - pos}")
    return np.frombuffer(data, dtype=np.uint8, count=need, offset=pos).reshape(h, w, 3).copy()


def read_ppm(path: str | Path) -> np.ndarray:
    """Read a P6 image as an (H, W, 3) uint8 array."""
    return decode_ppm(Path(path).read_bytes())


def write_ppm(path: str | Path, image: np.ndarray) -> None:
    img = np.asarray(image)
    if img.ndim == 2:
        img = np.repeat(img[..., None], 3, axis=2)
    if img.dtype != np.uint8:
        img = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    h, w, _ = img.shape
    with open(path, "wb") as fh:
        fh.write(b"P6\n%d %d\n255\n" % (w, h))
        fh.write(np.ascontiguousarray(img).tobytes())


def frame_path(directory: str | Path, index: int) -> Path:
    return Path(directory) / f"{index:06d}.ppm"


def read_frames(directory: str | Path, indices=None) -> list[np.ndarray]:
    """Read ``%06d.ppm`` frames in index order.

    With ``indices=None`` all frames from 000000 up to the last present one
    are read and a hole in the numbering raises :class:`MissingFrame`.
    """
    directory = Path(directory)
    if indices is None:
        present = sorted(int(p.stem) for p in directory.glob("*.ppm") if p.stem.isdigit())
        if not present:
            return []
        indices = range(present[-1] + 1)
    frames = []
    for i in indices:
        p = frame_path(directory, i)
        if not p.exists():
            raise MissingFrame(f"frame {i} missing from {directory}")
        frames.append(read_ppm(p))
    return frames


def write_frames(directory: str | Path, frames) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for i, img in enumerate(frames):
        write_ppm(frame_path(directory, i), img)


# -- face boxes ----------------------------------------------------------------

@dataclass(frozen=True)
class FaceBox:
    frame_index: int
    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"box must have positive size, got {self.w}x{self.h}")


def read_boxes(path: str | Path) -> list[FaceBox]:
    boxes = {}
    for n, obj in _json_lines(path):
        vals = {k: _int_field(obj, k, n) for k in ("frame_index", "x", "y", "w", "h")}
        try:
            box = FaceBox(**vals)
        except ValueError as exc:
            raise FormatError(str(exc), n) from exc
        if box.frame_index in boxes:
            raise FormatError(f"duplicate box for frame {box.frame_index}", n)
        boxes[box.frame_index] = box
    return [boxes[k] for k in sorted(boxes)]


def write_boxes(path: str | Path, boxes) -> None:
    with open(path, "w") as fh:
        for b in sorted(boxes, key=lambda b: b.frame_index):
            fh.write(json.dumps(asdict(b)) + "\n")


def box_for_frame(boxes: list[FaceBox], index: int) -> FaceBox:
    """Box of ``index`` or, failing that, of the nearest annotated frame."""
    if not boxes:
        raise MissingFrame("no face boxes available")
    return min(boxes, key=lambda b: (abs(b.frame_index - index), b.frame_index))


# -- manifests -------------------------------------------------------------------

@dataclass
class ManifestEntry:
    video_id: str
    label: str
    forgery_type: str
    split: str
    stream: str | None = None
    frames: str | None = None
    boxes: str | None = None
    mvdump: str | None = None
    width: int | None = None
    height: int | None = None
    num_frames: int | None = None

    @property
    def is_fake(self) -> bool:
        return self.label == "fake"


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry]
    root: Path = field(default_factory=Path)

    def split(self, name: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == name]

    def resolve(self, rel: str | None) -> Path | None:
        return None if rel is None else self.root / rel


_PATH_KEYS = ("stream", "frames", "boxes", "mvdump")
_INT_KEYS = ("width", "height", "num_frames")


def validate_manifest(entries: list[ManifestEntry]) -> None:
    seen: dict[str, str] = {}
    for n, e in enumerate(entries, start=1):
        if e.label not in ("real", "fake"):
            raise FormatError(f"label must be real/fake, got {e.label!r}", n)
        if e.forgery_type not in FORGERY_TYPES:
            raise FormatError(f"forgery_type {e.forgery_type!r} not in {FORGERY_TYPES}", n)
        if (e.forgery_type == "Pristine") != (e.label == "real"):
            raise FormatError("real videos must be Pristine and fakes must not", n)
        if e.split not in SPLITS:
            raise FormatError(f"split {e.split!r} not in {SPLITS}", n)
        if e.video_id in seen:
            what = "appears in splits" if seen[e.video_id] != e.split else "is duplicated in split"
            raise FormatError(f"video {e.video_id!r} {what} {seen[e.video_id]!r} and {e.split!r}", n)
        seen[e.video_id] = e.split


def read_manifest(path: str | Path) -> DatasetManifest:
    entries = []
    for n, obj in _json_lines(path):
        vals = {}
        for key in ("video_id", "label", "forgery_type", "split"):
            if not isinstance(obj.get(key), str):
                raise FormatError(f"field {key!r} must be a string", n)
            vals[key] = obj[key]
        for key in _PATH_KEYS:
            if obj.get(key) is not None:
                if not isinstance(obj[key], str):
                    raise FormatError(f"field {key!r} must be a path string", n)
                vals[key] = obj[key]
        for key in _INT_KEYS:
            if obj.get(key) is not None:
                vals[key] = _int_field(obj, key, n)
                if vals[key] <= 0:
                    raise FormatError(f"field {key!r} must be positive", n)
        entries.append(ManifestEntry(**vals))
    validate_manifest(entries)
    return DatasetManifest(entries, Path(path).parent)


def write_manifest(path: str | Path, manifest: DatasetManifest) -> None:
    validate_manifest(manifest.entries)
    with open(path, "w") as fh:
        for e in manifest.entries:
            obj = {k: v for k, v in asdict(e).items() if v is not None}
            fh.write(json.dumps(obj) + "\n")
