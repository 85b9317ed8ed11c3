"""Slice header syntax."""

from __future__ import annotations

from dataclasses import dataclass, field

from ..errors import MalformedHeader, OutOfBits, UnsupportedFeature
from .bitstream import BitReader
from .nal import NAL_IDR, NalUnit
from .params import PicParamSet, SeqParamSet

SLICE_P, SLICE_B, SLICE_I, SLICE_SP, SLICE_SI = range(5)
SLICE_NAMES = {SLICE_P: "P", SLICE_B: "B", SLICE_I: "I", SLICE_SP: "SP", SLICE_SI: "SI"}


@dataclass
class SliceHeader:
    first_mb: int
    slice_type: int  # 0..4 after folding the +5 "all slices same type" variants
    pps_id: int
    frame_num: int
    idr: bool
    nal_ref_idc: int
    qp: int
    num_ref_idx_l0: int = 1
    num_ref_idx_l1: int = 1
    idr_pic_id: int = 0
    poc_lsb: int = 0
    delta_poc_bottom: int = 0
    delta_poc: tuple[int, int] = (0, 0)
    redundant_pic_cnt: int = 0
    ref_list_mods_l0: list[tuple[int, int]] = field(default_factory=list)
    long_term_reference: bool = False
    mmco: list[tuple[int, ...]] = field(default_factory=list)
    disable_deblocking_filter_idc: int = 0
    slice_alpha_c0_offset: int = 0
    slice_beta_offset: int = 0
    data_bit_offset: int = 0  # where slice_data() starts in the RBSP

    @property
    def type_name(self) -> str:
        return SLICE_NAMES[self.slice_type]


def _ref_list_mods(r: BitReader) -> list[tuple[int, int]]:
    mods = []
    if r.flag():
        while True:
            idc = r.ue()
            if idc == 3:
                break
            if idc > 5 or len(mods) > 32:
                raise MalformedHeader(f"bad modification_of_pic_nums_idc {idc}")
            mods.append((idc, r.ue()))
    return mods


def _pred_weight_table(r: BitReader, n_l0: int, n_l1: int, bipred: bool) -> None:
    r.ue()  # luma_log2_weight_denom
    r.ue()  # chroma_log2_weight_denom (ChromaArrayType != 0)
    for n in (n_l0, n_l1) if bipred else (n_l0,):
        for _ in range(n):
            if r.flag():
                r.se()
                r.se()
            if r.flag():
                for _ in range(4):
                    r.se()


def parse_slice_header(nal: NalUnit, sps_table: dict[int, SeqParamSet],
                       pps_table: dict[int, PicParamSet]) -> SliceHeader:
    r = BitReader(nal.rbsp)
    idr = nal.unit_type == NAL_IDR
    try:
        first_mb = r.ue()
        raw_type = r.ue()
        if raw_type > 9:
            raise MalformedHeader(f"slice_type {raw_type}")
        slice_type = raw_type % 5
        pps_id = r.ue()
        pps = pps_table.get(pps_id)
        if pps is None:
            raise MalformedHeader(f"slice references unknown PPS {pps_id}")
        sps = sps_table.get(pps.sps_id)
        if sps is None:
            raise MalformedHeader(f"PPS {pps_id} references unknown SPS {pps.sps_id}")
        if slice_type in (SLICE_SP, SLICE_SI):
            raise UnsupportedFeature(f"{SLICE_NAMES[slice_type]} slices")
        if idr and slice_type != SLICE_I:
            raise MalformedHeader("IDR picture with a non-I slice")
        if first_mb >= sps.pic_width_in_mbs * sps.pic_height_in_map_units:
            raise MalformedHeader(f"first_mb_in_slice {first_mb} outside picture")
        frame_num = r.u(sps.log2_max_frame_num)
        h = SliceHeader(first_mb=first_mb, slice_type=slice_type, pps_id=pps_id,
                        frame_num=frame_num, idr=idr, nal_ref_idc=nal.ref_idc, qp=0,
                        num_ref_idx_l0=pps.num_ref_idx_default_l0,
                        num_ref_idx_l1=pps.num_ref_idx_default_l1)
        if idr:
            h.idr_pic_id = r.ue()
        if sps.poc_type == 0:
            h.poc_lsb = r.u(sps.log2_max_poc_lsb)
            if pps.bottom_field_pic_order_in_frame_present:
                h.delta_poc_bottom = r.se()
        elif sps.poc_type == 1 and not sps.delta_pic_order_always_zero:
            d0 = r.se()
            d1 = r.se() if pps.bottom_field_pic_order_in_frame_present else 0
            h.delta_poc = (d0, d1)
        if pps.redundant_pic_cnt_present:
            h.redundant_pic_cnt = r.ue()
        if slice_type == SLICE_B:
            r.flag()  # direct_spatial_mv_pred_flag
        if slice_type in (SLICE_P, SLICE_B):
            if r.flag():
                h.num_ref_idx_l0 = r.ue() + 1
                if slice_type == SLICE_B:
                    h.num_ref_idx_l1 = r.ue() + 1
            if h.num_ref_idx_l0 > 32 or h.num_ref_idx_l1 > 32:
                raise MalformedHeader("num_ref_idx_active out of range")
            h.ref_list_mods_l0 = _ref_list_mods(r)
            if slice_type == SLICE_B:
                _ref_list_mods(r)
        if (pps.weighted_pred and slice_type == SLICE_P) or \
                (pps.weighted_bipred_idc == 1 and slice_type == SLICE_B):
            _pred_weight_table(r, h.num_ref_idx_l0, h.num_ref_idx_l1, slice_type == SLICE_B)
        if nal.ref_idc:
            if idr:
                r.flag()  # no_output_of_prior_pics_flag
                h.long_term_reference = r.flag()
            elif r.flag():
                while True:
                    op = r.ue()
                    if op == 0:
                        break
                    if op > 6 or len(h.mmco) > 66:
                        raise MalformedHeader(f"bad memory_management_control_operation {op}")
                    args = []
                    if op in (1, 3):
                        args.append(r.ue())
                    if op == 2:
                        args.append(r.ue())
                    if op in (3, 6):
                        args.append(r.ue())
                    if op == 4:
                        args.append(r.ue())
                    h.mmco.append((op, *args))
        h.qp = pps.pic_init_qp + r.se()
        if not 0 <= h.qp <= 51:
            raise MalformedHeader(f"slice QP {h.qp} out of range")
        if pps.deblocking_filter_control_present:
            h.disable_deblocking_filter_idc = r.ue()
            if h.disable_deblocking_filter_idc > 2:
                raise MalformedHeader("disable_deblocking_filter_idc > 2")
            if h.disable_deblocking_filter_idc != 1:
                h.slice_alpha_c0_offset = 2 * r.se()
                h.slice_beta_offset = 2 * r.se()
    except OutOfBits as exc:
        raise MalformedHeader(f"slice header truncated: {exc}") from exc
    h.data_bit_offset = r.pos
    return h
