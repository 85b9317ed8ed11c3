"""Sequence and picture parameter sets.

Both parse into plain dataclasses that can be written back bit-exactly;
the SPS VUI block is carried through as raw bits since nothing downstream
reads it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from ..errors import MalformedHeader, OutOfBits, UnsupportedFeature
from .bitstream import BitReader, BitWriter

HIGH_PROFILES = (100, 110, 122, 244, 44, 83, 86, 118, 128, 138, 139, 134, 135)


@dataclass
class SeqParamSet:
    profile_idc: int
    constraint_flags: int
    level_idc: int
    sps_id: int
    log2_max_frame_num: int
    poc_type: int
    max_num_ref_frames: int
    pic_width_in_mbs: int
    pic_height_in_map_units: int
    frame_mbs_only: bool = True
    direct_8x8_inference: bool = True
    gaps_in_frame_num_allowed: bool = False
    log2_max_poc_lsb: int = 0
    delta_pic_order_always_zero: bool = False
    offset_for_non_ref_pic: int = 0
    offset_for_top_to_bottom_field: int = 0
    offsets_for_ref_frame: list[int] = field(default_factory=list)
    # high-profile extension (present only for HIGH_PROFILES)
    chroma_format_idc: int = 1
    bit_depth_luma: int = 8
    bit_depth_chroma: int = 8
    qpprime_y_zero_transform_bypass: bool = False
    scaling_lists: list[list[int] | None] | None = None  # raw delta_scale values
    # cropping, in crop units as coded
    frame_cropping: bool = False
    crop_left: int = 0
    crop_right: int = 0
    crop_top: int = 0
    crop_bottom: int = 0
    vui_present: bool = False
    vui_bits: list[int] = field(default_factory=list)

    @property
    def width(self) -> int:
        return self.pic_width_in_mbs * 16

    @property
    def height(self) -> int:
        return self.pic_height_in_map_units * 16

    @property
    def cropping(self) -> tuple[int, int, int, int]:
        """(left, right, top, bottom) crop in pixels; 4:2:0 progressive units are 2."""
        return (2 * self.crop_left, 2 * self.crop_right, 2 * self.crop_top, 2 * self.crop_bottom)

    @property
    def display_size(self) -> tuple[int, int]:
        left, right, top, bottom = self.cropping
        return self.width - left - right, self.height - top - bottom


@dataclass
class PicParamSet:
    pps_id: int
    sps_id: int
    entropy_coding_mode: bool
    bottom_field_pic_order_in_frame_present: bool
    num_slice_groups: int
    num_ref_idx_default_l0: int
    num_ref_idx_default_l1: int
    weighted_pred: bool
    weighted_bipred_idc: int
    pic_init_qp: int
    pic_init_qs: int
    chroma_qp_index_offset: int
    deblocking_filter_control_present: bool
    constrained_intra_pred: bool
    redundant_pic_cnt_present: bool
    # trailing high-profile fields, kept only when they were coded
    extension: tuple[bool, list[list[int] | None] | None, int] | None = None


def _scaling_list(r: BitReader, size: int) -> list[int]:
    deltas = []
    last = nxt = 8
    for _ in range(size):
        if nxt != 0:
            delta = r.se()
            if not -128 <= delta <= 127:
                raise MalformedHeader(f"delta_scale {delta} out of range")
            deltas.append(delta)
            nxt = (last + delta + 256) % 256
        last = last if nxt == 0 else nxt
    return deltas


def _read_scaling_lists(r: BitReader, count: int) -> list[list[int] | None]:
    lists: list[list[int] | None] = []
    for i in range(count):
        lists.append(_scaling_list(r, 16 if i < 6 else 64) if r.flag() else None)
    return lists


def _write_scaling_lists(w: BitWriter, lists: list[list[int] | None]) -> None:
    for deltas in lists:
        w.flag(deltas is not None)
        for d in deltas or ():
            w.se(d)


def parse_sps(rbsp: bytes) -> SeqParamSet:
    r = BitReader(rbsp)
    try:
        profile_idc = r.u(8)
        constraint_flags = r.u(8)
        level_idc = r.u(8)
        sps_id = r.ue()
        if sps_id > 31:
            raise MalformedHeader(f"seq_parameter_set_id {sps_id} > 31")
        ext = dict(chroma_format_idc=1, bit_depth_luma=8, bit_depth_chroma=8,
                   qpprime_y_zero_transform_bypass=False, scaling_lists=None)
        if profile_idc in HIGH_PROFILES:
            ext["chroma_format_idc"] = r.ue()
            if ext["chroma_format_idc"] == 3:
                if r.flag():
                    raise UnsupportedFeature("separate colour planes")
            ext["bit_depth_luma"] = r.ue() + 8
            ext["bit_depth_chroma"] = r.ue() + 8
            ext["qpprime_y_zero_transform_bypass"] = r.flag()
            if r.flag():
                ext["scaling_lists"] = _read_scaling_lists(r, 8 if ext["chroma_format_idc"] != 3 else 12)
        log2_max_frame_num = r.ue() + 4
        if log2_max_frame_num > 16:
            raise MalformedHeader(f"log2_max_frame_num {log2_max_frame_num} > 16")
        poc_type = r.ue()
        poc = {}
        if poc_type == 0:
            poc["log2_max_poc_lsb"] = r.ue() + 4
            if poc["log2_max_poc_lsb"] > 16:
                raise MalformedHeader("log2_max_pic_order_cnt_lsb > 16")
        elif poc_type == 1:
            poc["delta_pic_order_always_zero"] = r.flag()
            poc["offset_for_non_ref_pic"] = r.se()
            poc["offset_for_top_to_bottom_field"] = r.se()
            n = r.ue()
            if n > 255:
                raise MalformedHeader("num_ref_frames_in_pic_order_cnt_cycle > 255")
            poc["offsets_for_ref_frame"] = [r.se() for _ in range(n)]
        elif poc_type != 2:
            raise MalformedHeader(f"pic_order_cnt_type {poc_type}")
        max_num_ref_frames = r.ue()
        gaps = r.flag()
        width_mbs = r.ue() + 1
        height_units = r.ue() + 1
        frame_mbs_only = r.flag()
        if not frame_mbs_only:
            raise UnsupportedFeature("interlaced coding (frame_mbs_only_flag = 0)")
        direct_8x8 = r.flag()
        crop = dict(frame_cropping=r.flag())
        if crop["frame_cropping"]:
            crop.update(crop_left=r.ue(), crop_right=r.ue(), crop_top=r.ue(), crop_bottom=r.ue())
        vui_present = r.flag()
        vui_bits = [r.u(1) for _ in range(r.bits_left)] if vui_present else []
        if not vui_present:
            r.rbsp_trailing_bits()
    except OutOfBits as exc:
        raise MalformedHeader(f"SPS truncated: {exc}") from exc
    sps = SeqParamSet(
        profile_idc=profile_idc, constraint_flags=constraint_flags, level_idc=level_idc,
        sps_id=sps_id, log2_max_frame_num=log2_max_frame_num, poc_type=poc_type,
        max_num_ref_frames=max_num_ref_frames, pic_width_in_mbs=width_mbs,
        pic_height_in_map_units=height_units, frame_mbs_only=frame_mbs_only,
        direct_8x8_inference=direct_8x8, gaps_in_frame_num_allowed=gaps,
        vui_present=vui_present, vui_bits=vui_bits, **ext, **poc, **crop,
    )
    if sps.width > 16384 or sps.height > 16384:
        raise MalformedHeader("picture dimensions out of range")
    left, right, top, bottom = sps.cropping
    if left + right >= sps.width or top + bottom >= sps.height:
        raise MalformedHeader("cropping removes the whole picture")
    return sps


def check_sps_supported(sps: SeqParamSet) -> None:
    """Reject streams the macroblock layer cannot decode."""
    if sps.chroma_format_idc != 1:
        raise UnsupportedFeature(f"chroma_format_idc {sps.chroma_format_idc}")
    if sps.bit_depth_luma != 8 or sps.bit_depth_chroma != 8:
        raise UnsupportedFeature("bit depth other than 8")
    if sps.qpprime_y_zero_transform_bypass:
        raise UnsupportedFeature("lossless transform bypass")


def serialize_sps(sps: SeqParamSet) -> bytes:
    w = BitWriter()
    w.u(8, sps.profile_idc)
    w.u(8, sps.constraint_flags)
    w.u(8, sps.level_idc)
    w.ue(sps.sps_id)
    if sps.profile_idc in HIGH_PROFILES:
        w.ue(sps.chroma_format_idc)
        if sps.chroma_format_idc == 3:
            w.flag(False)
        w.ue(sps.bit_depth_luma - 8)
        w.ue(sps.bit_depth_chroma - 8)
        w.flag(sps.qpprime_y_zero_transform_bypass)
        w.flag(sps.scaling_lists is not None)
        if sps.scaling_lists is not None:
            _write_scaling_lists(w, sps.scaling_lists)
    w.ue(sps.log2_max_frame_num - 4)
    w.ue(sps.poc_type)
    if sps.poc_type == 0:
        w.ue(sps.log2_max_poc_lsb - 4)
    elif sps.poc_type == 1:
        w.flag(sps.delta_pic_order_always_zero)
        w.se(sps.offset_for_non_ref_pic)
        w.se(sps.offset_for_top_to_bottom_field)
        w.ue(len(sps.offsets_for_ref_frame))
        for off in sps.offsets_for_ref_frame:
            w.se(off)
    w.ue(sps.max_num_ref_frames)
    w.flag(sps.gaps_in_frame_num_allowed)
    w.ue(sps.pic_width_in_mbs - 1)
    w.ue(sps.pic_height_in_map_units - 1)
    w.flag(sps.frame_mbs_only)
    w.flag(sps.direct_8x8_inference)
    w.flag(sps.frame_cropping)
    if sps.frame_cropping:
        for v in (sps.crop_left, sps.crop_right, sps.crop_top, sps.crop_bottom):
            w.ue(v)
    w.flag(sps.vui_present)
    if sps.vui_present:
        w.raw_bits(sps.vui_bits)
    else:
        w.rbsp_trailing_bits()
    return w.to_bytes()


def parse_pps(rbsp: bytes, sps_table: dict[int, SeqParamSet] | None = None) -> PicParamSet:
    """Parse a PPS.

    ``sps_table`` is only needed to size the 8x8 scaling lists of a
    high-profile extension; without it 4:2:0 is assumed.
    """
    r = BitReader(rbsp)
    try:
        pps_id = r.ue()
        sps_id = r.ue()
        if pps_id > 255 or sps_id > 31:
            raise MalformedHeader("parameter set id out of range")
        entropy = r.flag()
        if entropy:
            raise UnsupportedFeature("CABAC entropy coding")
        bottom_field_poc = r.flag()
        num_slice_groups = r.ue() + 1
        if num_slice_groups > 1:
            raise UnsupportedFeature("multiple slice groups (FMO)")
        l0 = r.ue() + 1
        l1 = r.ue() + 1
        if l0 > 32 or l1 > 32:
            raise MalformedHeader("num_ref_idx_default_active out of range")
        weighted_pred = r.flag()
        weighted_bipred_idc = r.u(2)
        pic_init_qp = r.se() + 26
        pic_init_qs = r.se() + 26
        if not (0 <= pic_init_qp <= 51 and 0 <= pic_init_qs <= 51):
            raise MalformedHeader("pic_init_qp out of range")
        chroma_qp_index_offset = r.se()
        if not -12 <= chroma_qp_index_offset <= 12:
            raise MalformedHeader("chroma_qp_index_offset out of range")
        deblock = r.flag()
        constrained_intra = r.flag()
        redundant = r.flag()
        extension = None
        if r.more_rbsp_data():
            transform_8x8 = r.flag()
            lists = None
            if r.flag():
                sps = (sps_table or {}).get(sps_id)
                chroma3 = sps is not None and sps.chroma_format_idc == 3
                lists = _read_scaling_lists(r, 6 + (6 if chroma3 else 2) * int(transform_8x8))
            second_offset = r.se()
            extension = (transform_8x8, lists, second_offset)
        r.rbsp_trailing_bits()
    except OutOfBits as exc:
        raise MalformedHeader(f"PPS truncated: {exc}") from exc
    return PicParamSet(
        pps_id=pps_id, sps_id=sps_id, entropy_coding_mode=entropy,
        bottom_field_pic_order_in_frame_present=bottom_field_poc,
        num_slice_groups=num_slice_groups, num_ref_idx_default_l0=l0,
        num_ref_idx_default_l1=l1, weighted_pred=weighted_pred,
        weighted_bipred_idc=weighted_bipred_idc, pic_init_qp=pic_init_qp,
        pic_init_qs=pic_init_qs, chroma_qp_index_offset=chroma_qp_index_offset,
        deblocking_filter_control_present=deblock, constrained_intra_pred=constrained_intra,
        redundant_pic_cnt_present=redundant, extension=extension,
    )


def check_pps_supported(pps: PicParamSet) -> None:
    if pps.extension is not None and pps.extension[0]:
        raise UnsupportedFeature("8x8 transform")


def serialize_pps(pps: PicParamSet) -> bytes:
    w = BitWriter()
    w.ue(pps.pps_id)
    w.ue(pps.sps_id)
    w.flag(pps.entropy_coding_mode)
    w.flag(pps.bottom_field_pic_order_in_frame_present)
    w.ue(pps.num_slice_groups - 1)
    w.ue(pps.num_ref_idx_default_l0 - 1)
    w.ue(pps.num_ref_idx_default_l1 - 1)
    w.flag(pps.weighted_pred)
    w.u(2, pps.weighted_bipred_idc)
    w.se(pps.pic_init_qp - 26)
    w.se(pps.pic_init_qs - 26)
    w.se(pps.chroma_qp_index_offset)
    w.flag(pps.deblocking_filter_control_present)
    w.flag(pps.constrained_intra_pred)
    w.flag(pps.redundant_pic_cnt_present)
    if pps.extension is not None:
        transform_8x8, lists, second_offset = pps.extension
        w.flag(transform_8x8)
        w.flag(lists is not None)
        if lists is not None:
            _write_scaling_lists(w, lists)
        w.se(second_offset)
    w.rbsp_trailing_bits()
    return w.to_bytes()


__all__ = [
    "SeqParamSet", "PicParamSet", "parse_sps", "parse_pps", "serialize_sps",
    "serialize_pps", "check_sps_supported", "check_pps_supported",
]
