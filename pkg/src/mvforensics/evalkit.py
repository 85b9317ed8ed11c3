"""Evaluation: end-point error, the FLOP cost model, accuracy matrices, synthetic data."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import EmptySplit, FormatError, GridMismatch, MissingCheckpoint, NoPFrames
from .ingest import (FORGERY_TYPES, DatasetManifest, FaceBox, FlowField, ManifestEntry, MvDumpRecord,
                     write_boxes, write_frames, write_manifest, write_mvdump)
from .motionfield import CELL, MotionField, temporal_scale

# -- end-point error -----------------------------------------------------------------------

DOWNSCALES = (1, 4, 16)


@dataclass(frozen=True)
class EpeReport:
    downscale: int  # 1, 4 or 16, read as 1/1, 1/4, 1/16
    method: str
    mean_epe: float
    pixels: int = 0
    frames: int = 0


def epe(pred_u: np.ndarray, pred_v: np.ndarray, gt: FlowField) -> float:
    """Mean Euclidean distance between predicted and ground-truth vectors over valid pixels."""
    pu, pv = np.asarray(pred_u, np.float64), np.asarray(pred_v, np.float64)
    if pu.shape != gt.u.shape or pv.shape != gt.u.shape:
        raise GridMismatch(f"prediction {pu.shape} vs ground truth {gt.u.shape}")
    err = epe_map(pu, pv, gt)
    if err.size == 0:
        return 0.0
    return float(err.mean())


def epe_map(pred_u: np.ndarray, pred_v: np.ndarray, gt: FlowField) -> np.ndarray:
    """Per-pixel errors at the valid ground-truth pixels (flattened)."""
    m = gt.valid
    return np.hypot(pred_u[m] - gt.u[m], pred_v[m] - gt.v[m])


def downscale_flow(flow: FlowField, factor: int) -> FlowField:
    """Average-pool ``factor`` x ``factor`` blocks and divide vectors by ``factor``.

    Only valid pixels enter each average; a pooled pixel is valid when its
    block holds at least one valid pixel. Partial blocks at the right and
    bottom edges are pooled over the pixels they have.
    """
    if factor == 1:
        return FlowField(flow.u.copy(), flow.v.copy(), flow.valid.copy())
    h, w = flow.u.shape
    gh, gw = math.ceil(h / factor), math.ceil(w / factor)
    labels = (np.arange(h)[:, None] // factor) * gw + np.arange(w)[None, :] // factor
    valid = flow.valid
    idx = np.arange(gh * gw)
    count = ndimage.sum_labels(valid.astype(float), labels, idx)
    su = ndimage.sum_labels(np.where(valid, flow.u, 0.0), labels, idx)
    sv = ndimage.sum_labels(np.where(valid, flow.v, 0.0), labels, idx)
    ok = count > 0
    safe = np.where(ok, count, 1.0)
    u = np.where(ok, su / safe, 0.0) / factor
    v = np.where(ok, sv / safe, 0.0) / factor
    return FlowField(u.reshape(gh, gw), v.reshape(gh, gw), ok.reshape(gh, gw))


def upscale_flow(flow: FlowField, factor: int, width: int, height: int) -> FlowField:
    """Nearest-neighbour expansion back to ``width`` x ``height``, vectors times ``factor``."""
    u = np.repeat(np.repeat(flow.u, factor, 0), factor, 1)[:height, :width] * factor
    v = np.repeat(np.repeat(flow.v, factor, 0), factor, 1)[:height, :width] * factor
    valid = np.repeat(np.repeat(flow.valid, factor, 0), factor, 1)[:height, :width]
    return FlowField(u, v, valid)


def roundtrip_epe(flow: FlowField, factor: int) -> float:
    """EPE of a flow against its own downscale-then-upscale reconstruction at 1/1."""
    back = upscale_flow(downscale_flow(flow, factor), factor, flow.width, flow.height)
    return epe(back.u, back.v, flow)


def mv_to_flow(fld: MotionField, width: int, height: int, use_temporal_scale: bool = False) -> FlowField:
    """Dense forward flow (previous frame -> this frame) implied by the past vectors.

    A past vector points from a block to its source in the previous frame,
    so the forward displacement is its negation. Cells are expanded to
    pixels by nearest neighbour; cells without information give zero flow.
    """
    if use_temporal_scale:
        fld = temporal_scale(fld)
    u = -np.repeat(np.repeat(fld.past_x.astype(np.float64), CELL, 0), CELL, 1)[:height, :width]
    v = -np.repeat(np.repeat(fld.past_y.astype(np.float64), CELL, 0), CELL, 1)[:height, :width]
    return FlowField(u + 0.0, v + 0.0, np.ones((height, width), bool))


def epe_mv_pipeline(fields: list[tuple[str, MotionField]], gt_flows: list[FlowField | None],
                    downscales=DOWNSCALES, method: str = "MV",
                    use_temporal_scale: bool = False) -> list[EpeReport]:
    """EPE of motion-vector flow against ground truth, P frames only.

    ``gt_flows[t]`` is the flow from frame ``t`` to ``t + 1`` and is compared
    with the vectors of frame ``t + 1``. Errors are pooled over all valid
    pixels of all used frames.
    """
    pairs = []
    for t in range(1, len(fields)):
        ftype, fld = fields[t]
        if ftype == "P" and t - 1 < len(gt_flows) and gt_flows[t - 1] is not None:
            pairs.append((fld, gt_flows[t - 1]))
    if not pairs:
        raise NoPFrames("no P frame has a matching ground-truth flow")
    reports = []
    for factor in downscales:
        errs = []
        for fld, gt in pairs:
            pred = mv_to_flow(fld, gt.width, gt.height, use_temporal_scale)
            if (pred.height, pred.width) != (gt.height, gt.width):
                raise GridMismatch("motion field does not cover the ground-truth frame")
            p, g = downscale_flow(pred, factor), downscale_flow(gt, factor)
            if p.u.shape != g.u.shape:
                raise GridMismatch(f"{p.u.shape} vs {g.u.shape} at 1/{factor}")
            errs.append(epe_map(p.u, p.v, g))
        allerr = np.concatenate(errs)
        mean = float(allerr.mean()) if allerr.size else 0.0
        reports.append(EpeReport(factor, method, mean, int(allerr.size), len(pairs)))
    return reports


def write_epe_csv(path: str | Path, reports: list[EpeReport]) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["method", "downscale", "mean_epe", "pixels", "frames"])
        for r in reports:
            wr.writerow([r.method, f"1/{r.downscale}", f"{r.mean_epe:.6f}", r.pixels, r.frames])


# Reference values quoted for context only; they need Sintel and a flow estimator.
EPE_REFERENCE = {("RAFT", 1): 0.603, ("MV", 1): 2.193}


# -- cost model --------------------------------------------------------------------------

FLOP_PER_CELL = 4 * 2 + 2 * 1
COST_CONVENTION = (
    "MV input cost = (W*H/16) 4x4 cells x [4 MV channels x 2 FLOP "
    "(quarter-pel scale fused into standardization: 1 multiply + 1 add) "
    "+ 2 IM channels x 1 FLOP (mask assignment)] = 10 FLOP per cell")

# Optical-flow (RAFT) cost at the same resolutions, in MFLOP; stored, not computed.
OF_REFERENCE_MFLOP = {(480, 360): 138.8e3, (640, 480): 249.3e3, (1280, 720): 783.5e3,
                      (1920, 1080): 1.9e6}
REFERENCE_RESOLUTIONS = tuple(OF_REFERENCE_MFLOP)


@dataclass(frozen=True)
class CostReport:
    width: int
    height: int
    mflop_mv: float
    mflop_flow_reference: float | None = None


def flop_cost(width: int, height: int) -> CostReport:
    if width <= 0 or height <= 0:
        raise ValueError("resolution must be positive")
    cells = width * height / (CELL * CELL)
    return CostReport(width, height, cells * FLOP_PER_CELL / 1e6,
                      OF_REFERENCE_MFLOP.get((width, height)))


def _fmt_of(v: float | None) -> str:
    if v is None:
        return "n/a"
    if v >= 1e6:
        return f"{v / 1e6:.1f}e6"
    return f"{v / 1e3:.1f}e3"


def render_cost_table(reports: list[CostReport]) -> str:
    lines = ["| Resolution | OF MFLOP | MV MFLOP |", "|---|---|---|"]
    for r in reports:
        lines.append(f"| {r.width}x{r.height} | {_fmt_of(r.mflop_flow_reference)} | {r.mflop_mv:.1f} |")
    return "\n".join(lines) + "\n"


def parse_resolution(text: str) -> tuple[int, int]:
    try:
        w, h = text.lower().split("x")
        w, h = int(w), int(h)
    except ValueError as exc:
        raise ValueError(f"resolution must look like 1280x720, got {text!r}") from exc
    if w <= 0 or h <= 0:
        raise ValueError(f"resolution must be positive, got {text!r}")
    return w, h


# -- accuracy matrices -------------------------------------------------------------------

SET_NAMES = {"DF": "DeepFakes", "F2F": "Face2Face", "FS": "FaceShifter", "FSwap": "FaceSwap",
             "NT": "NeuralTextures", "Pristine": "Pristine", "all": "all"}
FAKE_TYPES = tuple(t for t in FORGERY_TYPES if t != "Pristine")
ROWS = FAKE_TYPES + ("Pristine", "all")
COLS = FAKE_TYPES + ("all",)


@dataclass
class EvalMatrix:
    """Accuracies: rows are evaluation sets, columns are training sets."""

    title: str
    rows: list[str]
    cols: list[str]
    cells: np.ndarray
    sizes: dict[str, int] = field(default_factory=dict)  # evaluated videos per row

    def __post_init__(self):
        self.cells = np.asarray(self.cells, np.float64)
        if self.cells.shape != (len(self.rows), len(self.cols)):
            raise ValueError(f"cells {self.cells.shape} vs {len(self.rows)}x{len(self.cols)} labels")
        finite = self.cells[np.isfinite(self.cells)]
        if np.any((finite < 0) | (finite > 1)):
            raise ValueError("accuracies must lie in [0, 1]")

    def cell(self, row: str, col: str) -> float:
        return float(self.cells[self.rows.index(row), self.cols.index(col)])

    def all_row_consistent(self, tol: float = 1e-9) -> bool:
        """The "all" row equals the size-weighted mean of the other rows.

        Needs a recorded size for every row; raises ValueError otherwise.
        """
        parts = [r for r in self.rows if r != "all"]
        if "all" not in self.rows or any(r not in self.sizes for r in parts):
            raise ValueError("set sizes are needed to check the 'all' row")
        w = np.array([self.sizes[r] for r in parts], np.float64)
        sub = self.cells[[self.rows.index(r) for r in parts]]
        expect = (w[:, None] * sub).sum(0) / w.sum()
        return bool(np.all(np.abs(expect - self.cells[self.rows.index("all")]) <= tol))

    def to_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow([self.title, "size"] + list(self.cols))
        for i, r in enumerate(self.rows):
            size = self.sizes.get(r, "")
            wr.writerow([r, size] + [repr(float(v)) for v in self.cells[i]])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "EvalMatrix":
        try:
            rows = list(csv.reader(io.StringIO(text)))
        except csv.Error as exc:
            raise FormatError(f"unreadable matrix CSV: {exc}") from exc
        if not rows or len(rows[0]) < 3 or rows[0][1] != "size":
            raise FormatError("matrix CSV needs a header '<title>,size,<columns...>'")
        title, cols = rows[0][0], rows[0][2:]
        names, cells, sizes = [], [], {}
        for n, row in enumerate(rows[1:], start=2):
            if len(row) != len(cols) + 2:
                raise FormatError(f"expected {len(cols) + 2} fields", n)
            names.append(row[0])
            try:
                if row[1]:
                    sizes[row[0]] = int(row[1])
                cells.append([float(v) for v in row[2:]])
            except ValueError as exc:
                raise FormatError(str(exc), n) from exc
        try:
            return cls(title, names, cols, np.array(cells).reshape(len(names), len(cols)), sizes)
        except ValueError as exc:
            raise FormatError(str(exc)) from exc

    def render_markdown(self) -> str:
        """Rows = evaluated set, columns = training set, percentages with two decimals."""
        name = lambda s: SET_NAMES.get(s, s)  # noqa: E731
        head = "| " + " | ".join([self.title] + [name(c) for c in self.cols]) + " |"
        rule = "|" + "---|" * (len(self.cols) + 1)
        body = []
        for i, r in enumerate(self.rows):
            vals = ["n/a" if not np.isfinite(v) else f"{100 * v:.2f}%" for v in self.cells[i]]
            body.append("| " + " | ".join([name(r)] + vals) + " |")
        return "\n".join([head, rule] + body) + "\n"


def video_accuracy(probs: list[float], fake: list[bool]) -> float:
    """Share of videos classified correctly with ``p >= 0.5`` meaning fake."""
    hits = [(p >= 0.5) == f for p, f in zip(probs, fake)]
    return float(np.mean(hits))


def cross_forgery_eval(models: dict, dataset, seed: int = 0, k: int = 100,
                       modality: str | None = None, title: str = "MV+IM") -> EvalMatrix:
    """Accuracy of each training condition (column) on each test set (row).

    ``models`` maps a training-set name (a forgery code or "all") to a
    checkpoint path, a network, or a callable ``video -> probability``.
    The "all" row pools every test video, so it is the size-weighted mean
    of the other rows.
    """
    from .net import load_checkpoint, predict_samples

    test = dataset.split("test")
    if not test:
        raise EmptySplit("the test split is empty")
    present = [t for t in FAKE_TYPES if any(v.forgery_type == t for v in test)]
    rows = present + ["Pristine", "all"]
    groups = {t: [v for v in test if v.forgery_type == t] for t in present + ["Pristine"]}
    if not groups["Pristine"]:
        raise EmptySplit("the test split has no pristine videos")
    cols = [c for c in COLS if c in models] + [c for c in models if c not in COLS]
    cells = np.zeros((len(rows), len(cols)))
    for j, col in enumerate(cols):
        model = models[col]
        mod = modality
        if isinstance(model, (str, Path)):
            if not Path(model).is_file():
                raise MissingCheckpoint(f"no checkpoint for training set {col!r} at {model}")
            model, _, meta = load_checkpoint(model)
            mod = mod or meta.get("modality")
        mod = mod or "mv_im"
        if callable(model) and not hasattr(model, "forward"):
            predict = model
        else:
            def predict(v, net=model, mod=mod):
                idx = v.eval_frames(k, seed, mod)
                return float(np.mean(predict_samples(net, [v.sample(i, mod) for i in idx])))
        probs = {id(v): predict(v) for v in test}
        for i, r in enumerate(rows):
            vids = test if r == "all" else groups[r]
            cells[i, j] = video_accuracy([probs[id(v)] for v in vids], [v.is_fake for v in vids])
    sizes = {r: len(groups[r]) for r in groups}
    sizes["all"] = len(test)
    return EvalMatrix(title, rows, cols, cells, sizes)


# -- synthetic dataset -----------------------------------------------------------------------

# Per forgery type: (region of the box that is manipulated, noise scale, intra scale).
# Regions are (x0, y0, x1, y1) fractions of the face box.
SYNTH_VARIANTS = {
    "DF": ((0.0, 0.0, 1.0, 1.0), 1.0, 1.0),
    "F2F": ((0.0, 0.5, 1.0, 1.0), 1.2, 0.8),
    "FS": ((0.0, 0.0, 1.0, 1.0), 0.8, 1.3),
    "FSwap": ((0.125, 0.125, 0.875, 0.875), 1.1, 1.1),
    "NT": ((0.0, 0.5, 1.0, 1.0), 1.0, 1.2),
}


@dataclass
class SynthConfig:
    """Knobs of the synthetic real/fake clip generator.

    ``noise`` scales both fake artefacts (vector noise and extra intra
    blocks); at 0 a fake clip's motion equals its real twin exactly.
    """

    pairs_train: int = 100
    pairs_val: int = 25
    pairs_test: int = 25
    width: int = 64
    height: int = 64
    frames: int = 8
    max_speed: int = 3
    noise: float = 1.0
    mv_noise_qpel: float = 8.0
    fake_intra: float = 0.3
    real_intra: float = 0.02
    real_jitter: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if min(self.pairs_train, self.pairs_val, self.pairs_test) < 1:
            raise ValueError("every split needs at least one pair")
        if self.width % 16 or self.height % 16 or self.frames < 2:
            raise ValueError("width/height must be multiples of 16 and frames >= 2")
        if self.noise < 0:
            raise ValueError("noise must be non-negative")

    @classmethod
    def from_dict(cls, obj: dict) -> "SynthConfig":
        try:
            return cls(**obj)
        except (TypeError, ValueError) as exc:
            raise FormatError(f"bad synth config: {exc}") from exc


def _texture(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    img = ndimage.gaussian_filter(rng.uniform(0, 255, (h, w, 3)), (1.5, 1.5, 0))
    lo, hi = img.min(), img.max()
    return ((img - lo) / (hi - lo + 1e-9) * 235 + 10).astype(np.uint8)


def _real_blocks(rng, cfg: SynthConfig, vel: tuple[int, int], zoom: float, center):
    """Per-frame lists of (x0, y0, w, h, mv_x, mv_y) blocks for a coherent clip; None = intra MB."""
    frames = []
    for _ in range(1, cfg.frames):
        mbs = []
        for my in range(0, cfg.height, 16):
            for mx in range(0, cfg.width, 16):
                if rng.random() < cfg.real_intra:
                    mbs.append(None)
                    continue
                size = 16 if rng.random() < 0.5 else 8
                blocks = []
                for by in range(my, my + 16, size):
                    for bx in range(mx, mx + 16, size):
                        cx, cy = bx + size / 2 - center[0], by + size / 2 - center[1]
                        mvx = -4 * vel[0] + round(4 * zoom * cx)
                        mvy = -4 * vel[1] + round(4 * zoom * cy)
                        if rng.random() < cfg.real_jitter:
                            mvx += int(rng.integers(-1, 2))
                            mvy += int(rng.integers(-1, 2))
                        blocks.append([bx, by, size, size, mvx, mvy])
                mbs.append(blocks)
        frames.append(mbs)
    return frames


def _forge(frames, rng, cfg: SynthConfig, box: FaceBox, ftype: str):
    (fx0, fy0, fx1, fy1), noise_k, intra_k = SYNTH_VARIANTS[ftype]
    rx0, rx1 = box.x + fx0 * box.w, box.x + fx1 * box.w
    ry0, ry1 = box.y + fy0 * box.h, box.y + fy1 * box.h
    sigma = cfg.noise * cfg.mv_noise_qpel * noise_k
    p_intra = min(1.0, cfg.noise * cfg.fake_intra * intra_k)
    mbw = cfg.width // 16
    out = []
    for mbs in frames:
        new = []
        for addr, blocks in enumerate(mbs):
            mx, my = addr % mbw * 16 + 8, addr // mbw * 16 + 8
            inside_mb = rx0 <= mx < rx1 and ry0 <= my < ry1
            # draw every random number regardless of the outcome so streams stay aligned
            drop = rng.random() < p_intra
            if blocks is None:
                new.append(None)
                continue
            if inside_mb and drop:
                new.append(None)
                continue
            nb = []
            for bx, by, w, h, mvx, mvy in blocks:
                dx, dy = rng.normal(0, 1, 2) * sigma
                if rx0 <= bx + w / 2 < rx1 and ry0 <= by + h / 2 < ry1:
                    mvx, mvy = mvx + int(round(dx)), mvy + int(round(dy))
                nb.append([bx, by, w, h, mvx, mvy])
            new.append(nb)
        out.append(new)
    return out


def _dump(frames) -> list[MvDumpRecord]:
    recs = []
    for t, mbs in enumerate(frames, start=1):
        for blocks in mbs:
            for bx, by, w, h, mvx, mvy in blocks or ():
                recs.append(MvDumpRecord(t, "past", bx, by, w, h, mvx, mvy, -1))
    return recs


def synth_dataset(config: SynthConfig, out_dir: str | Path) -> DatasetManifest:
    """Write paired real/fake clips, their boxes and MV dumps, plus ``manifest.jsonl``.

    A real clip is a textured canvas panned at a constant integer velocity
    with a coherent motion field (global pan plus a slight zoom around the
    box centre). Its fake twin shares the RGB frames and box; only the
    motion inside (part of) the box is perturbed with vector noise and extra
    intra macroblocks. Fakes cycle through the five forgery types.
    """
    cfg = config
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n_pairs = cfg.pairs_train + cfg.pairs_val + cfg.pairs_test
    order = np.random.default_rng([cfg.seed, 999]).permutation(n_pairs)
    split_of = {}
    for rank, s in enumerate(order):
        split_of[int(s)] = ("train" if rank < cfg.pairs_train
                            else "val" if rank < cfg.pairs_train + cfg.pairs_val else "test")
    entries = []
    pad = cfg.max_speed * cfg.frames + 2
    for s in range(n_pairs):
        rng = np.random.default_rng([cfg.seed, s])
        canvas = _texture(rng, cfg.height + 2 * pad, cfg.width + 2 * pad)
        vel = (int(rng.integers(-cfg.max_speed, cfg.max_speed + 1)),
               int(rng.integers(-cfg.max_speed, cfg.max_speed + 1)))
        frames = [canvas[pad - vel[1] * t: pad - vel[1] * t + cfg.height,
                         pad - vel[0] * t: pad - vel[0] * t + cfg.width] for t in range(cfg.frames)]
        bw = int(rng.integers(cfg.width // 2, cfg.width * 3 // 4 + 1))
        bh = int(rng.integers(cfg.height // 2, cfg.height * 3 // 4 + 1))
        box = FaceBox(0, int(rng.integers(0, cfg.width - bw + 1)), int(rng.integers(0, cfg.height - bh + 1)), bw, bh)
        zoom = float(rng.uniform(-0.03, 0.03))
        real = _real_blocks(rng, cfg, vel, zoom, (box.x + bw / 2, box.y + bh / 2))
        ftype = FAKE_TYPES[s % len(FAKE_TYPES)]
        fake = _forge(real, np.random.default_rng([cfg.seed, s, 1]), cfg, box, ftype)

        vdir = out / f"clip{s:04d}"
        write_frames(vdir / "frames", frames)
        write_boxes(vdir / "boxes.jsonl", [FaceBox(t, box.x, box.y, box.w, box.h) for t in range(cfg.frames)])
        write_mvdump(vdir / "real.mvdump.jsonl", _dump(real))
        write_mvdump(vdir / "fake.mvdump.jsonl", _dump(fake))
        common = dict(split=split_of[s], frames=f"{vdir.name}/frames", boxes=f"{vdir.name}/boxes.jsonl",
                      width=cfg.width, height=cfg.height, num_frames=cfg.frames)
        entries.append(ManifestEntry(f"clip{s:04d}_real", "real", "Pristine",
                                     mvdump=f"{vdir.name}/real.mvdump.jsonl", **common))
        entries.append(ManifestEntry(f"clip{s:04d}_fake", "fake", ftype,
                                     mvdump=f"{vdir.name}/fake.mvdump.jsonl", **common))
    manifest = DatasetManifest(entries, out)
    write_manifest(out / "manifest.jsonl", manifest)
    (out / "synth_config.json").write_text(json.dumps(asdict(cfg), indent=1, sort_keys=True) + "\n")
    return manifest
