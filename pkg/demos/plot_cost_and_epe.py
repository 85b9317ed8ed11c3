"""
What motion vectors cost and how close they get to optical flow
===============================================================

Two cheap sanity numbers for the compressed-domain input: the FLOP count
of turning vectors into network input, and the end-point error of
vector-derived flow against a known ground truth.
"""

# %%
# Cost of the input transform
# ---------------------------
# Vectors are already in the bitstream, so the only work left is scaling,
# standardizing and writing the masks: a handful of operations per 4x4 cell.
from pathlib import Path

import numpy as np

from mvforensics.bitparse import decode_stream
from mvforensics.evalkit import (COST_CONVENTION, REFERENCE_RESOLUTIONS, epe_mv_pipeline, flop_cost,
                                 render_cost_table)
from mvforensics.ingest import FlowField
from mvforensics.motionfield import fields_from_report

print(COST_CONVENTION)
print(render_cost_table([flop_cost(w, h) for w, h in REFERENCE_RESOLUTIONS]))

# %%
# End-point error on a pure translation
# -------------------------------------
# The ``translate`` fixture pans a texture by (3, -2) pixels per frame, so
# the true forward flow is constant. Vector-derived flow should match it.
root = Path(__file__).resolve().parents[1]
report = decode_stream((root / "tests" / "fixtures" / "streams" / "translate.h264").read_bytes())
fields = fields_from_report(report)
gt = FlowField(np.full((64, 64), 3.0), np.full((64, 64), -2.0))
for r in epe_mv_pipeline(fields, [gt] * (len(fields) - 1)):
    print(f"1/{r.downscale}: EPE {r.mean_epe:.4f} px over {r.frames} P frames")

# %%
# A noisier ground truth
# ----------------------
# Perturbing the reference flow shows the metric moving the way it should:
# the error grows with the noise, and pooling to 1/4 and 1/16 averages
# much of it away.
rng = np.random.default_rng(0)
for sigma in (0.25, 1.0):
    noisy = [FlowField(gt.u + rng.normal(0, sigma, gt.u.shape), gt.v + rng.normal(0, sigma, gt.v.shape))
             for _ in range(len(fields) - 1)]
    print(f"sigma {sigma}:", ", ".join(f"1/{r.downscale} {r.mean_epe:.3f}" for r in epe_mv_pipeline(fields, noisy)))
