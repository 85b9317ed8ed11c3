"""Native H.264 (baseline, CAVLC) parser down to macroblock motion vectors."""

from .bitstream import BitReader, BitWriter
from .decoder import DecodedPicture, StreamDecoder, StreamReport, decode_stream
from .macroblock import (FUTURE, INTER, INTRA, PAST, SKIP, MacroblockRecord, PartitionMv,
                         decode_macroblocks, predict_mv)
from .nal import NalUnit, join_annexb, split_annexb
from .params import PicParamSet, SeqParamSet, parse_pps, parse_sps, serialize_pps, serialize_sps
from .slice import SliceHeader, parse_slice_header

__all__ = [
    "BitReader", "BitWriter", "DecodedPicture", "StreamDecoder", "StreamReport",
    "decode_stream", "MacroblockRecord", "PartitionMv", "decode_macroblocks", "predict_mv",
    "NalUnit", "split_annexb", "join_annexb", "SeqParamSet", "PicParamSet", "parse_sps",
    "parse_pps", "serialize_sps", "serialize_pps", "SliceHeader", "parse_slice_header",
    "PAST", "FUTURE", "INTRA", "INTER", "SKIP",
]
