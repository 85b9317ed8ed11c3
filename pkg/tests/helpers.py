"""Independent oracles shared by the test modules.

Nothing here calls the code under test for the quantity being checked;
each helper recomputes it the slow, obvious way. The random-input
generators at the end only build inputs.
"""

import math
from collections import defaultdict

import numpy as np

from mvforensics.ingest import FaceBox
from mvforensics.motionfield import MotionField
from mvforensics.pipeline import AugmentationConfig, base_stack, square_pad


# -- exp-Golomb and CAVLC encoders -----------------------------------------------------

def ue_bits(v: int) -> str:
    code = bin(v + 1)[2:]
    return "0" * (len(code) - 1) + code


def se_bits(v: int) -> str:
    return ue_bits(2 * v - 1 if v > 0 else -2 * v)


def bits_to_bytes(bits: str) -> bytes:
    bits = bits + "0" * (-len(bits) % 8)
    return bytes(int(bits[i:i + 8], 2) for i in range(0, len(bits), 8))


def _code(table, sym) -> str:
    n, c = table.codes[sym]
    return format(c, f"0{n}b")


def encode_residual(coeffs: list[int], nc: int) -> tuple[str, int, list[int]]:
    """CAVLC-encode a 16-coefficient block (zig-zag order) by the encoding rules.

    Returns the bit string, TotalCoeff and the non-zero levels in reverse scan order.
    """
    from mvforensics.bitparse import cavlc

    nz = [i for i, c in enumerate(coeffs) if c]
    levels = [coeffs[i] for i in reversed(nz)]
    total = len(levels)
    t1 = 0
    for lv in levels:
        if abs(lv) == 1 and t1 < 3:
            t1 += 1
        else:
            break
    out = _code(cavlc.coeff_token_table(nc), (t1, total))
    if total == 0:
        return out, 0, []
    out += "".join("1" if lv < 0 else "0" for lv in levels[:t1])
    sl = 1 if total > 10 and t1 < 3 else 0
    for i, lv in enumerate(levels[t1:], start=t1):
        code = 2 * lv - 2 if lv > 0 else -2 * lv - 1
        if i == t1 and t1 < 3:
            code -= 2
        if sl == 0:
            if code < 14:
                out += "0" * code + "1"
            elif code < 30:
                out += "0" * 14 + "1" + format(code - 14, "04b")
            else:
                out += "0" * 15 + "1" + format(code - 30, "012b")
        elif code < (15 << sl):
            out += "0" * (code >> sl) + "1" + format(code & ((1 << sl) - 1), f"0{sl}b")
        else:
            out += "0" * 15 + "1" + format(code - (15 << sl), "012b")
        if sl == 0:
            sl = 1
        if abs(lv) > (3 << (sl - 1)) and sl < 6:
            sl += 1
    total_zeros = (nz[-1] + 1) - total
    if total < 16:
        out += _code(cavlc.TOTAL_ZEROS[total - 1], total_zeros)
    zeros_left = total_zeros
    pos = list(reversed(nz))
    for k in range(total - 1):
        if zeros_left <= 0:
            break
        run = pos[k] - pos[k + 1] - 1
        out += _code(cavlc.RUN_BEFORE[min(zeros_left, 7) - 1], run)
        zeros_left -= run
    return out, total, levels


# -- reference-decoder comparison ------------------------------------------------------

def collapse_sub8x8(partitions) -> set[tuple]:
    """Native partitions at the reference decoder's export granularity.

    Sub-8x8 partitions are reported as one 8x8 block carrying the vector of
    the partition at the block's top-left corner.
    """
    out = set()
    for p in partitions:
        if p.w >= 8 and p.h >= 8:
            out.add((p.x0, p.y0, p.w, p.h, p.mv_x, p.mv_y))
        elif p.x0 % 8 == 0 and p.y0 % 8 == 0:
            out.add((p.x0, p.y0, 8, 8, p.mv_x, p.mv_y))
    return out


def compare_with_reference(report, ref_records: list[dict]) -> dict:
    """Per-macroblock comparison of a native decode with a reference dump.

    Returns counts of P-frame macroblocks checked and mismatched, plus a
    few mismatch descriptions.
    """
    by_frame = defaultdict(list)
    for r in ref_records:
        by_frame[r["frame_index"]].append(r)
    checked = bad = 0
    notes = []
    for pic in report.pictures:
        if pic.frame_type != "P":
            if by_frame.get(pic.index):
                bad += 1
                notes.append(f"frame {pic.index}: reference has vectors on a non-P frame")
            continue
        ref_mb = defaultdict(set)
        for r in by_frame.get(pic.index, []):
            mb = (r["y0"] // 16) * pic.width_mbs + r["x0"] // 16
            ref_mb[mb].add((r["x0"], r["y0"], r["w"], r["h"], r["mv_x_qpel"], r["mv_y_qpel"]))
        for rec in pic.records:
            checked += 1
            mine = collapse_sub8x8(rec.partitions)
            theirs = ref_mb.pop(rec.mb_addr, set())
            if mine != theirs:
                bad += 1
                if len(notes) < 5:
                    notes.append(f"frame {pic.index} mb {rec.mb_addr}: {sorted(mine)} vs {sorted(theirs)}")
        if ref_mb:
            bad += len(ref_mb)
            notes.append(f"frame {pic.index}: reference vectors for unknown macroblocks {sorted(ref_mb)}")
    return {"checked": checked, "bad": bad, "notes": notes}


# -- painter oracle for rasterization ---------------------------------------------------

def paint_pixels(records, width_mbs: int, height_mbs: int):
    """Per-pixel past/future vectors (pixels) and masks for a macroblock tiling."""
    h, w = height_mbs * 16, width_mbs * 16
    planes = {d: np.zeros((3, h, w)) for d in ("past", "future")}
    for rec in records:
        for p in rec.partitions:
            for y in range(p.y0, p.y0 + p.h):
                for x in range(p.x0, p.x0 + p.w):
                    planes[p.direction][:, y, x] = (p.mv_x / 4, p.mv_y / 4, 1)
    return planes


def pool_cells(plane: np.ndarray, width: int, height: int) -> np.ndarray:
    """Value of every 4x4 cell, asserting each cell is uniform."""
    gh, gw = math.ceil(height / 4), math.ceil(width / 4)
    out = np.zeros((gh, gw))
    for cy in range(gh):
        for cx in range(gw):
            cell = plane[cy * 4:cy * 4 + 4, cx * 4:cx * 4 + 4]
            assert np.all(cell == cell.flat[0])
            out[cy, cx] = cell.flat[0]
    return out


# -- brute-force resampling and EPE ---------------------------------------------------

def bilinear_sample(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Per-pixel bilinear resize with half-pixel centres and edge clamping."""
    h, w = img.shape
    out = np.zeros((out_h, out_w))
    for i in range(out_h):
        sy = min(max((i + 0.5) * h / out_h - 0.5, 0.0), h - 1)
        y0 = int(math.floor(sy))
        y1 = min(y0 + 1, h - 1)
        fy = sy - y0
        for j in range(out_w):
            sx = min(max((j + 0.5) * w / out_w - 0.5, 0.0), w - 1)
            x0 = int(math.floor(sx))
            x1 = min(x0 + 1, w - 1)
            fx = sx - x0
            out[i, j] = ((1 - fy) * ((1 - fx) * img[y0, x0] + fx * img[y0, x1])
                         + fy * ((1 - fx) * img[y1, x0] + fx * img[y1, x1]))
    return out


def brute_epe(pu, pv, gu, gv, valid) -> float:
    total, n = 0.0, 0
    for y in range(gu.shape[0]):
        for x in range(gu.shape[1]):
            if valid[y, x]:
                total += math.sqrt((pu[y, x] - gu[y, x]) ** 2 + (pv[y, x] - gv[y, x]) ** 2)
                n += 1
    return total / n if n else 0.0


def brute_pool(u, v, valid, factor):
    """Valid-only block averages divided by ``factor``, one block at a time."""
    h, w = u.shape
    gh, gw = math.ceil(h / factor), math.ceil(w / factor)
    ou, ov, ok = np.zeros((gh, gw)), np.zeros((gh, gw)), np.zeros((gh, gw), bool)
    for by in range(gh):
        for bx in range(gw):
            su = sv = 0.0
            n = 0
            for y in range(by * factor, min(h, by * factor + factor)):
                for x in range(bx * factor, min(w, bx * factor + factor)):
                    if valid[y, x]:
                        su += u[y, x]
                        sv += v[y, x]
                        n += 1
            if n:
                ou[by, bx], ov[by, bx], ok[by, bx] = su / n / factor, sv / n / factor, True
    return ou, ov, ok


# -- finite differences -----------------------------------------------------------------

def perturb_params(net, rng) -> None:
    """Move every parameter off its initial value so no ReLU sits on its kink."""
    params = net.params
    for k, v in list(params.items()):
        if k.endswith("scale"):
            params[k] = 1.0 + 0.3 * rng.standard_normal(v.shape)
        elif k.endswith("shift") or k.endswith(".b"):
            params[k] = 0.1 * rng.standard_normal(v.shape)
        else:
            params[k] = v.astype(np.float64) * (1.0 + 0.2 * rng.standard_normal(v.shape))


def gradcheck(net, x, labels, rng, entries: int = 8, h: float = 1e-6) -> dict[str, float]:
    """Relative error between analytic and central-difference gradients, per block.

    Blocks are compared as vectors over ``entries`` random coordinates:
    ``|a - n| / max(|a|, |n|)``. The key ``"input"`` covers the input gradient.
    """
    from mvforensics.net import bce_loss, bce_with_logits, sigmoid

    def loss_at():
        return bce_loss(sigmoid(net.forward(x)), labels)

    z, cache = net.forward(x, keep=True)
    _, gz = bce_with_logits(z, labels)
    grads, gx = net.backward(gz, cache)
    out = {}
    params = net.params
    for k, v in params.items():
        flat = v.reshape(-1)
        idx = rng.choice(flat.size, size=min(entries, flat.size), replace=False)
        num = []
        for i in idx:
            old = flat[i]
            flat[i] = old + h
            params[k] = flat.reshape(v.shape)
            lp = loss_at()
            flat[i] = old - h
            params[k] = flat.reshape(v.shape)
            lm = loss_at()
            flat[i] = old
            params[k] = flat.reshape(v.shape)
            num.append((lp - lm) / (2 * h))
        ana = grads[k].reshape(-1)[idx]
        out[k] = _rel(ana, np.array(num))
    xs = x if isinstance(x, tuple) else (x,)
    gxs = gx if isinstance(gx, tuple) else (gx,)
    for j, (xi, gi) in enumerate(zip(xs, gxs)):
        flat = xi.reshape(-1)
        idx = rng.choice(flat.size, size=min(entries, flat.size), replace=False)
        num = []
        for i in idx:
            old = flat[i]
            flat[i] = old + h
            lp = loss_at()
            flat[i] = old - h
            lm = loss_at()
            flat[i] = old
            num.append((lp - lm) / (2 * h))
        out["input" if len(xs) == 1 else f"input{j}"] = _rel(gi.reshape(-1)[idx], np.array(num))
    return out


def _rel(a: np.ndarray, n: np.ndarray) -> float:
    scale = max(np.linalg.norm(a), np.linalg.norm(n))
    return 0.0 if scale == 0 else float(np.linalg.norm(a - n) / scale)


# -- random pipeline inputs and the GridMask enumeration oracle ------------------------

def random_field(rng, gw=8, gh=6, p_info=0.7):
    im_p = (rng.random((gh, gw)) < p_info).astype(np.uint8)
    im_f = (rng.random((gh, gw)) < p_info / 2).astype(np.uint8)
    mv = [np.round(rng.normal(0, 4, (gh, gw)) * 4) / 4 for _ in range(4)]
    return MotionField(gw, gh, (mv[0] * im_p).astype(np.float32), (mv[1] * im_p).astype(np.float32),
                       (mv[2] * im_f).astype(np.float32), (mv[3] * im_f).astype(np.float32), im_p, im_f)


def random_base(seed, res=16):
    rng = np.random.default_rng(seed)
    fld = random_field(rng)
    frame = rng.integers(0, 256, (24, 32, 3), dtype=np.uint8)
    box = FaceBox(0, int(rng.integers(0, 8)), int(rng.integers(0, 4)), 20, 18)
    return base_stack(frame, fld, square_pad(box, 32, 24), res), frame, fld, box


ALL_ON = AugmentationConfig(**{f"p_{k}": 1.0 for k in (
    "hflip", "vflip", "gridmask", "noise", "blur", "brightness_contrast", "grayscale", "rgb_shift",
    "hsv", "fancy_pca")}, gridmask_period=8)


def enumerate_patches(h, w, period, patch, offset):
    """Zeroed pixels by listing every patch whose square touches the image."""
    oy, ox = offset
    out = np.zeros((h, w), bool)
    for top in range(oy - period * (h // period + 2), h, period):
        for left in range(ox - period * (w // period + 2), w, period):
            for yy in range(max(top, 0), min(top + patch, h)):
                for xx in range(max(left, 0), min(left + patch, w)):
                    out[yy, xx] = True
    return out
