"""Stream-level driver: NAL units -> per-picture macroblock records."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

from ..errors import BitstreamDesync, BitstreamError, MalformedHeader, UnsupportedFeature
from .macroblock import INTRA, MacroblockRecord, PictureState, decode_macroblocks
from .nal import NAL_PPS, NAL_SPS, NalUnit, split_annexb
from .params import (PicParamSet, SeqParamSet, check_pps_supported, check_sps_supported,
                     parse_pps, parse_sps)
from .slice import SLICE_B, SLICE_I, SLICE_NAMES, SLICE_P, SliceHeader, parse_slice_header

log = logging.getLogger(__name__)


@dataclass
class DecodedPicture:
    index: int  # decode order, which equals display order for I/P-only streams
    frame_num: int
    slice_types: list[str]
    width: int  # display size after SPS cropping
    height: int
    width_mbs: int
    height_mbs: int
    records: list[MacroblockRecord]
    errors: list[str] = field(default_factory=list)
    crop_left: int = 0  # pixels cropped off the coded picture's left/top edge
    crop_top: int = 0

    @property
    def frame_type(self) -> str:
        """'I' if every slice is intra, otherwise the most predictive type seen."""
        for t in ("B", "P"):
            if t in self.slice_types:
                return t
        return "I"


@dataclass
class StreamReport:
    pictures: list[DecodedPicture]
    errors: list[str]
    sps: dict[int, SeqParamSet]
    pps: dict[int, PicParamSet]


class _RefTracker:
    """Short-term reference bookkeeping for P slices (sliding window + MMCO 1/5)."""

    def __init__(self) -> None:
        self.refs: list[tuple[int, int]] = []  # (frame_num, picture index)

    def list0(self, hdr: SliceHeader, sps: SeqParamSet, pic_index: int) -> list[int]:
        max_frame_num = 1 << sps.log2_max_frame_num

        def wrap(fn: int) -> int:
            return fn - max_frame_num if fn > hdr.frame_num else fn

        ordered = sorted(self.refs, key=lambda ref: wrap(ref[0]), reverse=True)
        pic_nums = [wrap(fn) for fn, _ in ordered]
        indices = [idx for _, idx in ordered]
        pred = hdr.frame_num
        for k, (idc, value) in enumerate(hdr.ref_list_mods_l0):
            if idc not in (0, 1):
                raise UnsupportedFeature("long-term reference pictures")
            diff = value + 1
            pred = pred - diff if idc == 0 else pred + diff
            if pred < 0:
                pred += max_frame_num
            elif pred >= max_frame_num:
                pred -= max_frame_num
            target = pred - max_frame_num if pred > hdr.frame_num else pred
            if target not in pic_nums:
                raise MalformedHeader(f"reordering references missing picture {target}")
            j = pic_nums.index(target)
            pic_nums.insert(k, pic_nums.pop(j))
            indices.insert(k, indices.pop(j))
        n = hdr.num_ref_idx_l0
        offsets = [idx - pic_index for idx in indices[:n]]
        while len(offsets) < n and offsets:
            offsets.append(offsets[-1])  # missing references: repeat the last
        return offsets

    def mark(self, hdr: SliceHeader, sps: SeqParamSet, pic_index: int) -> None:
        if not hdr.nal_ref_idc:
            return
        if hdr.idr:
            self.refs = []
        elif hdr.mmco:
            max_frame_num = 1 << sps.log2_max_frame_num
            for op, *args in hdr.mmco:
                if op == 1:
                    pic_num = hdr.frame_num - (args[0] + 1)
                    self.refs = [r for r in self.refs
                                 if (r[0] - max_frame_num if r[0] > hdr.frame_num else r[0]) != pic_num]
                elif op == 5:
                    self.refs = []
        else:
            limit = max(1, sps.max_num_ref_frames)
            while len(self.refs) >= limit:
                max_frame_num = 1 << sps.log2_max_frame_num
                oldest = min(self.refs, key=lambda r: r[0] - max_frame_num if r[0] > hdr.frame_num else r[0])
                self.refs.remove(oldest)
        self.refs.append((hdr.frame_num, pic_index))


def _new_picture(prev: SliceHeader | None, cur: SliceHeader) -> bool:
    if prev is None:
        return True
    return (cur.frame_num != prev.frame_num or cur.pps_id != prev.pps_id
            or bool(cur.nal_ref_idc) != bool(prev.nal_ref_idc)
            or cur.poc_lsb != prev.poc_lsb or cur.idr != prev.idr
            or (cur.idr and cur.idr_pic_id != prev.idr_pic_id)
            or cur.first_mb == 0)


class StreamDecoder:
    """Incremental decoder over NAL units.

    Malformed or unsupported slices are skipped and reported; the
    macroblocks they would have covered come out as intra (no motion info).
    """

    def __init__(self) -> None:
        self.sps: dict[int, SeqParamSet] = {}
        self.pps: dict[int, PicParamSet] = {}
        self.pictures: list[DecodedPicture] = []
        self.errors: list[str] = []
        self._refs = _RefTracker()
        self._cur: PictureState | None = None
        self._cur_pic: DecodedPicture | None = None
        self._cur_hdr: SliceHeader | None = None
        self._cur_sps: SeqParamSet | None = None
        self._slice_count = 0

    def _error(self, msg: str) -> None:
        log.warning(msg)
        self.errors.append(msg)
        if self._cur_pic is not None:
            self._cur_pic.errors.append(msg)

    def feed(self, nal: NalUnit) -> None:
        try:
            if nal.unit_type == NAL_SPS:
                sps = parse_sps(nal.rbsp)
                self.sps[sps.sps_id] = sps
            elif nal.unit_type == NAL_PPS:
                pps = parse_pps(nal.rbsp, self.sps)
                self.pps[pps.pps_id] = pps
            elif nal.is_slice:
                self._slice(nal)
            elif nal.unit_type in (2, 3, 4):
                raise UnsupportedFeature("data partitioning")
        except BitstreamError as exc:
            self._error(f"NAL type {nal.unit_type} at byte {nal.offset}: {exc}")

    def _slice(self, nal: NalUnit) -> None:
        hdr = parse_slice_header(nal, self.sps, self.pps)
        pps = self.pps[hdr.pps_id]
        sps = self.sps[pps.sps_id]
        if hdr.redundant_pic_cnt:
            return
        check_sps_supported(sps)
        check_pps_supported(pps)
        if _new_picture(self._cur_hdr, hdr):
            self._finish_picture()
            self._start_picture(hdr, sps)
        elif self._cur_sps is not sps:
            raise MalformedHeader("SPS changed inside a picture")
        self._cur_hdr = hdr
        assert self._cur_pic is not None and self._cur is not None
        name = SLICE_NAMES[hdr.slice_type]
        self._cur_pic.slice_types.append(name)
        if hdr.slice_type == SLICE_B:
            raise UnsupportedFeature("B slices (use the MV-dump ingest path)")
        offsets = None
        if hdr.slice_type == SLICE_P:
            offsets = self._refs.list0(hdr, sps, self._cur_pic.index)
            if not offsets:
                raise MalformedHeader("P slice without any reference picture")
        self._slice_count += 1
        try:
            decode_macroblocks(nal.rbsp, hdr, sps, pps, self._cur, self._slice_count, offsets)
        except BitstreamError:
            state = self._cur
            for i, owner in enumerate(state.slice_of):
                if owner == self._slice_count:
                    state.records[i] = None
            raise

    def _start_picture(self, hdr: SliceHeader, sps: SeqParamSet) -> None:
        w, h = sps.display_size
        self._cur = PictureState(sps.pic_width_in_mbs, sps.pic_height_in_map_units)
        self._cur_sps = sps
        self._cur_pic = DecodedPicture(
            index=len(self.pictures), frame_num=hdr.frame_num, slice_types=[],
            width=w, height=h, width_mbs=sps.pic_width_in_mbs,
            height_mbs=sps.pic_height_in_map_units, records=[],
            crop_left=sps.cropping[0], crop_top=sps.cropping[2])
        self._first_hdr = hdr

    def _finish_picture(self) -> None:
        pic, state = self._cur_pic, self._cur
        if pic is None or state is None:
            return
        missing = [i for i, rec in enumerate(state.records) if rec is None]
        if missing:
            msg = (f"picture {pic.index}: {len(missing)} of {state.size} macroblocks missing "
                   f"(first at {missing[0]})")
            self._error(str(BitstreamDesync(msg)))
        pic.records = [rec if rec is not None else MacroblockRecord(i, INTRA)
                       for i, rec in enumerate(state.records)]
        self.pictures.append(pic)
        self._refs.mark(self._first_hdr, self._cur_sps, pic.index)
        self._cur_pic = None
        self._cur = None

    def finish(self) -> StreamReport:
        self._finish_picture()
        self._cur_hdr = None
        return StreamReport(self.pictures, self.errors, self.sps, self.pps)


def decode_stream(stream: bytes) -> StreamReport:
    """Parse a whole Annex-B stream down to per-picture macroblock records."""
    dec = StreamDecoder()
    for nal in split_annexb(stream):
        dec.feed(nal)
    return dec.finish()


__all__ = ["DecodedPicture", "StreamReport", "StreamDecoder", "decode_stream",
           "SLICE_I", "SLICE_P"]
