"""Compressed-domain motion toolkit.

Parses H.264 motion vectors into dense motion fields, prepares classifier
inputs, trains a small detector and evaluates it (accuracy matrices,
end-point error, FLOP cost).
"""

from .bitparse import decode_stream
from .errors import MvError
from .motionfield import MotionField, rasterize, select_past_only, temporal_scale

__version__ = "0.1.0"

__all__ = ["decode_stream", "MvError", "MotionField", "rasterize", "select_past_only",
           "temporal_scale", "__version__"]
