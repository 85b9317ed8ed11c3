"""Regenerate the H.264 test fixtures under tests/fixtures/streams.

Each scene is encoded once with libx264 (baseline profile, CAVLC) through
PyAV, then decoded again with FFmpeg's ``export_mvs`` flag to record the
reference decoder's per-block motion side data in the MV-dump format.

Needs PyAV (``pip install av``); the test-suite itself does not.

    python tools/make_fixtures.py
"""

from __future__ import annotations

import json
from pathlib import Path

import av
import numpy as np
from scipy import ndimage

OUT = Path(__file__).resolve().parents[1] / "tests" / "fixtures" / "streams"


def texture(h, w, seed, sigma=1.5):
    rng = np.random.default_rng(seed)
    img = rng.uniform(0, 255, (h, w, 3))
    img = ndimage.gaussian_filter(img, (sigma, sigma, 0))
    img = (img - img.min()) / (img.max() - img.min()) * 235 + 10
    return img.astype(np.uint8)


def scene_static(t, h, w):
    return texture(h, w, 1)


def scene_translate(t, h, w, dx=3, dy=-2):
    # the visible window slides over a larger canvas: content moves by (dx, dy) per frame
    pad = 64
    canvas = texture(h + 2 * pad, w + 2 * pad, 2, sigma=1.2)
    x0, y0 = pad - dx * t, pad - dy * t
    return canvas[y0:y0 + h, x0:x0 + w]


def scene_moving_block(t, h, w):
    bg = texture(h, w, 3)
    block = texture(24, 24, 4, sigma=1.0)
    img = bg.copy()
    x, y = 8 + 5 * t, 10 + 3 * t
    img[y:y + 24, x:x + 24] = block
    return img


def scene_noisy(t, h, w):
    rng = np.random.default_rng(100 + t)
    img = texture(h, w, 5, sigma=0.8).astype(float)
    img = np.roll(img, (t, 2 * t), axis=(0, 1))
    # a region of fresh noise every frame forces intra macroblocks in P frames
    img[16:40, 8:32] = rng.uniform(0, 255, (24, 24, 3))
    img += rng.normal(0, 6, img.shape)
    return img.clip(0, 255).astype(np.uint8)


def scene_regions(t, h, w):
    # four quadrants moving in different directions
    out = np.zeros((h, w, 3), np.uint8)
    shifts = [(2, 1), (-1, 2), (1, -3), (-2, -1)]
    for q, (dx, dy) in enumerate(shifts):
        tex = texture(h + 80, w + 80, 10 + q, sigma=1.3)
        x0, y0 = 40 - dx * t, 40 - dy * t
        win = tex[y0:y0 + h, x0:x0 + w]
        ys = slice(0, h // 2) if q < 2 else slice(h // 2, h)
        xs = slice(0, w // 2) if q % 2 == 0 else slice(w // 2, w)
        out[ys, xs] = win[ys, xs]
    return out


def scene_wobble(t, h, w):
    # small sub-block motion to provoke 8x4 / 4x8 / 4x4 partitions
    tex = texture(h + 40, w + 40, 20, sigma=0.9).astype(float)
    yy, xx = np.mgrid[0:h, 0:w]
    fx = 20 + 2.5 * np.sin(yy / 5.0 + t) + t
    fy = 20 + 2.0 * np.cos(xx / 4.0 + 0.5 * t)
    out = np.stack([ndimage.map_coordinates(tex[..., c], [fy, fx], order=1) for c in range(3)], -1)
    return out.clip(0, 255).astype(np.uint8)


def scene_fast(t, h, w):
    tex = texture(h + 200, w + 200, 30, sigma=2.5)
    x0, y0 = 100 - 11 * t, 100 + 7 * t - 40
    return tex[y0:y0 + h, x0:x0 + w]


def scene_noise(t, h, w):
    rng = np.random.default_rng(200 + t)
    base = np.roll(texture(h, w, 40, sigma=0.6), t, axis=1).astype(float)
    return (base + rng.normal(0, 40, base.shape)).clip(0, 255).astype(np.uint8)


FIXTURES = {
    # name: (scene, width, height, frames, x264 params)
    "static": (scene_static, 64, 64, 6, "keyint=60:qp=20"),
    "translate": (scene_translate, 64, 64, 8, "keyint=60:qp=14:ref=1"),
    "moving_block": (scene_moving_block, 80, 64, 8, "keyint=60:qp=18:ref=1"),
    "noisy": (scene_noisy, 64, 48, 7, "keyint=60:qp=6:ref=2"),
    "regions_slices": (scene_regions, 96, 72, 8, "keyint=4:qp=24:ref=3:slices=3"),
    "fast_i16": (scene_fast, 64, 64, 8, "keyint=60:qp=40:ref=1"),
    "wobble_sub8x8": (scene_wobble, 64, 64, 8,
                      "keyint=60:qp=16:ref=2:partitions=p8x8,p4x4,i4x4:subme=7"),
    "noise_qp1": (scene_noise, 48, 32, 4, "keyint=60:qp=1:ref=1"),
}


def encode(name, scene, width, height, frames, params):
    path = OUT / f"{name}.h264"
    out = av.open(str(path), "w", format="h264")
    st = out.add_stream("libx264", rate=25)
    st.width, st.height, st.pix_fmt = width, height, "yuv420p"
    st.options = {"profile": "baseline", "preset": "medium",
                  "x264-params": params + ":scenecut=0:threads=1"}
    for t in range(frames):
        img = np.ascontiguousarray(scene(t, height, width))
        for pkt in st.encode(av.VideoFrame.from_ndarray(img, format="rgb24")):
            out.mux(pkt)
    for pkt in st.encode():
        out.mux(pkt)
    out.close()
    return path


def reference_dump(path):
    """Decode with FFmpeg and write its motion side data as an MV dump."""
    inp = av.open(str(path))
    st = inp.streams.video[0]
    st.codec_context.options = {"flags2": "+export_mvs"}
    lines, types = [], []
    for index, frame in enumerate(inp.decode(st)):
        types.append(av.video.frame.PictureType(int(frame.pict_type)).name)
        sd = frame.side_data.get("MOTION_VECTORS")
        if sd is None:
            continue
        for m in sd.to_ndarray():
            assert int(m["motion_scale"]) == 4
            w, h = int(m["w"]), int(m["h"])
            lines.append({
                "frame_index": index,
                "direction": "past" if m["source"] < 0 else "future",
                "x0": int(m["dst_x"]) - w // 2, "y0": int(m["dst_y"]) - h // 2,
                "w": w, "h": h,
                "mv_x_qpel": int(m["motion_x"]), "mv_y_qpel": int(m["motion_y"]),
                "ref_offset": -1 if m["source"] < 0 else 1,
            })
    inp.close()
    dump = path.with_suffix(".ref.mvdump.jsonl")
    dump.write_text("".join(json.dumps(rec) + "\n" for rec in lines))
    meta = {"frame_types": types, "decoder": f"FFmpeg via PyAV {av.__version__}"}
    path.with_suffix(".ref.json").write_text(json.dumps(meta, indent=1) + "\n")
    return len(lines), types


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    for name, (scene, w, h, n, params) in FIXTURES.items():
        path = encode(name, scene, w, h, n, params)
        count, types = reference_dump(path)
        print(f"{name:16s} {w}x{h} {path.stat().st_size:6d} bytes  {count:4d} mvs  {''.join(types)}")


if __name__ == "__main__":
    main()
