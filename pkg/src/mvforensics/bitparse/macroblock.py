"""Macroblock layer for CAVLC I and P slices.

Residual data is walked (to keep the bit cursor aligned) but not kept; what
survives is each macroblock's kind and the final quarter-pel motion vectors
of its partitions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from ..errors import BitstreamDesync, MalformedSlice, OutOfBits, UnsupportedFeature
from .bitstream import BitReader
from .cavlc import residual_block
from .params import PicParamSet, SeqParamSet
from .slice import SLICE_I, SLICE_P, SliceHeader

PAST, FUTURE = "past", "future"
INTRA, INTER, SKIP = "intra", "inter", "skip"

GOLOMB_TO_INTRA4X4_CBP = (
    47, 31, 15, 0, 23, 27, 29, 30, 7, 11, 13, 14, 39, 43, 45, 46,
    16, 3, 5, 10, 12, 19, 21, 26, 28, 35, 37, 42, 44, 1, 2, 4,
    8, 17, 18, 20, 24, 6, 9, 22, 25, 32, 33, 34, 36, 40, 38, 41,
)
GOLOMB_TO_INTER_CBP = (
    0, 16, 1, 2, 4, 8, 32, 3, 5, 10, 12, 15, 47, 7, 11, 13,
    14, 6, 9, 31, 35, 37, 42, 44, 33, 34, 36, 40, 39, 43, 45, 46,
    17, 18, 20, 24, 19, 21, 26, 28, 23, 27, 29, 30, 22, 25, 38, 41,
)

# P macroblock partition shapes (width, height) by mb_type 0..2
P_PART_SHAPES = {0: (16, 16), 1: (16, 8), 2: (8, 16)}
SUB_PART_SHAPES = {0: (8, 8), 1: (8, 4), 2: (4, 8), 3: (4, 4)}

# luma4x4BlkIdx -> (x, y) of the 4x4 block in units of 4 pixels
LUMA_BLK_XY = [((b >> 2 & 1) * 2 + (b & 1), (b >> 3) * 2 + (b >> 1 & 1)) for b in range(16)]

MAX_REF_OFFSET = 16


@dataclass(frozen=True)
class PartitionMv:
    """One motion-compensated block: geometry in pixels, vector in quarter-pel."""

    x0: int
    y0: int
    w: int
    h: int
    mv_x: int
    mv_y: int
    ref_offset: int = -1
    direction: str = PAST

    def __post_init__(self):
        if self.w not in (4, 8, 16) or self.h not in (4, 8, 16):
            raise ValueError(f"partition size {self.w}x{self.h} is not an H.264 block size")
        if abs(self.ref_offset) > MAX_REF_OFFSET:
            raise ValueError(f"ref_offset {self.ref_offset} beyond {MAX_REF_OFFSET} frames")
        if self.direction not in (PAST, FUTURE):
            raise ValueError(f"direction {self.direction!r}")


@dataclass(frozen=True)
class MacroblockRecord:
    mb_addr: int
    kind: str
    partitions: tuple[PartitionMv, ...] = ()
    ref_idx: tuple[int, ...] = field(default=(), compare=False)

    def __post_init__(self):
        if (self.kind == INTRA) != (len(self.partitions) == 0):
            raise ValueError("intra macroblocks carry no partitions and inter ones do")


def median3(a: int, b: int, c: int) -> int:
    return a + b + c - min(a, b, c) - max(a, b, c)


# A neighbour is None when unavailable, else (ref_idx, (mv_x, mv_y)) with
# ref_idx = -1 for intra-coded or otherwise unused blocks.
Neighbor = "tuple[int, tuple[int, int]] | None"


def predict_mv(a, b, c, ref_idx: int, shape: tuple[int, int] = (16, 16),
               part_idx: int = 0) -> tuple[int, int]:
    """Motion vector predictor from neighbours A (left), B (above), C (above-right).

    C must already have been replaced by D (above-left) by the caller when C
    itself is unavailable.
    """
    ref_a = a[0] if a is not None else -1
    ref_b = b[0] if b is not None else -1
    ref_c = c[0] if c is not None else -1
    if shape == (16, 8):
        if part_idx == 0 and ref_b == ref_idx:
            return b[1]
        if part_idx == 1 and ref_a == ref_idx:
            return a[1]
    elif shape == (8, 16):
        if part_idx == 0 and ref_a == ref_idx:
            return a[1]
        if part_idx == 1 and ref_c == ref_idx:
            return c[1]
    if b is None and c is None and a is not None:
        b = c = a
        ref_b = ref_c = ref_a
    mv_a = a[1] if a is not None else (0, 0)
    mv_b = b[1] if b is not None else (0, 0)
    mv_c = c[1] if c is not None else (0, 0)
    matches = [mv for ref, mv in ((ref_a, mv_a), (ref_b, mv_b), (ref_c, mv_c)) if ref == ref_idx]
    if len(matches) == 1:
        return matches[0]
    return (median3(mv_a[0], mv_b[0], mv_c[0]), median3(mv_a[1], mv_b[1], mv_c[1]))


class PictureState:
    """Per-picture macroblock bookkeeping used for neighbour derivation."""

    def __init__(self, width_mbs: int, height_mbs: int):
        self.w = width_mbs
        self.h = height_mbs
        n = width_mbs * height_mbs
        self.slice_of = [-1] * n
        self.luma_tc = [[0] * 16 for _ in range(n)]  # indexed by 4x4 raster y*4+x
        self.chroma_tc = [[[0] * 4 for _ in range(n)] for _ in range(2)]
        self.ref = [[-1] * 16 for _ in range(n)]
        self.mv = [[(0, 0)] * 16 for _ in range(n)]
        self.records: list[MacroblockRecord | None] = [None] * n

    @property
    def size(self) -> int:
        return self.w * self.h

    def neighbour_mb(self, mb: int, xn: int, yn: int, size: int = 16) -> int | None:
        """Address of the macroblock holding location (xn, yn) relative to ``mb``.

        Returns ``mb`` itself for inside locations and None when unavailable.
        """
        mx, my = mb % self.w, mb // self.w
        if xn < 0:
            if yn < 0:
                addr = mb - self.w - 1 if mx > 0 and my > 0 else None
            elif yn < size:
                addr = mb - 1 if mx > 0 else None
            else:
                return None
        elif xn < size:
            if yn < 0:
                addr = mb - self.w if my > 0 else None
            elif yn < size:
                return mb
            else:
                return None
        else:
            if yn < 0:
                addr = mb - self.w + 1 if my > 0 and mx < self.w - 1 else None
            else:
                return None
        if addr is None or self.slice_of[addr] != self.slice_of[mb]:
            return None
        return addr


class SliceDecoder:
    def __init__(self, sps: SeqParamSet, pps: PicParamSet, header: SliceHeader,
                 picture: PictureState, slice_id: int, ref_offsets: list[int] | None = None):
        if header.slice_type not in (SLICE_I, SLICE_P):
            raise UnsupportedFeature(f"{header.type_name} slices in the native parser")
        self.sps = sps
        self.pps = pps
        self.hdr = header
        self.pic = picture
        self.slice_id = slice_id
        # ref_offsets[i] = signed frame distance of RefPicList0[i]
        self.ref_offsets = ref_offsets or [-(i + 1) for i in range(header.num_ref_idx_l0)]

    # -- total-coefficient neighbours (nC) ----------------------------------

    def _luma_nc(self, mb: int, bx: int, by: int) -> int:
        pic = self.pic
        avail = []
        for dx, dy in ((-1, 0), (0, -1)):
            xn, yn = bx * 4 + dx, by * 4 + dy
            addr = pic.neighbour_mb(mb, xn, yn)
            if addr is None:
                continue
            avail.append(pic.luma_tc[addr][((yn % 16) // 4) * 4 + (xn % 16) // 4])
        if len(avail) == 2:
            return (avail[0] + avail[1] + 1) >> 1
        return avail[0] if avail else 0

    def _chroma_nc(self, mb: int, comp: int, bx: int, by: int) -> int:
        pic = self.pic
        avail = []
        for dx, dy in ((-1, 0), (0, -1)):
            xn, yn = bx * 4 + dx, by * 4 + dy
            addr = pic.neighbour_mb(mb, xn, yn, size=8)
            if addr is None:
                continue
            avail.append(pic.chroma_tc[comp][addr][((yn % 8) // 4) * 2 + (xn % 8) // 4])
        if len(avail) == 2:
            return (avail[0] + avail[1] + 1) >> 1
        return avail[0] if avail else 0

    # -- motion vector neighbours ---------------------------------------------

    def _mv_neighbour(self, mb: int, xn: int, yn: int, decoded: list[bool]):
        pic = self.pic
        addr = pic.neighbour_mb(mb, xn, yn)
        if addr is None:
            return None
        blk = ((yn % 16) // 4) * 4 + (xn % 16) // 4
        if addr == mb and not decoded[blk]:
            return None
        return pic.ref[addr][blk], pic.mv[addr][blk]

    def _predict(self, mb, x, y, w, h, ref_idx, decoded, shape=(16, 16), part_idx=0):
        a = self._mv_neighbour(mb, x - 1, y, decoded)
        b = self._mv_neighbour(mb, x, y - 1, decoded)
        c = self._mv_neighbour(mb, x + w, y - 1, decoded)
        if c is None:
            c = self._mv_neighbour(mb, x - 1, y - 1, decoded)
        return predict_mv(a, b, c, ref_idx, shape, part_idx)

    def _skip_mv(self, mb: int) -> tuple[int, int]:
        pic = self.pic
        none_decoded = [False] * 16
        if pic.neighbour_mb(mb, -1, 0) is None or pic.neighbour_mb(mb, 0, -1) is None:
            return (0, 0)
        a = self._mv_neighbour(mb, -1, 0, none_decoded)
        b = self._mv_neighbour(mb, 0, -1, none_decoded)
        if a[0] == 0 and a[1] == (0, 0) or b[0] == 0 and b[1] == (0, 0):
            return (0, 0)
        return self._predict(mb, 0, 0, 16, 16, 0, none_decoded)

    def _store_partition(self, mb, x, y, w, h, ref_idx, mv, decoded):
        pic = self.pic
        for by in range(y // 4, (y + h) // 4):
            for bx in range(x // 4, (x + w) // 4):
                pic.ref[mb][by * 4 + bx] = ref_idx
                pic.mv[mb][by * 4 + bx] = mv
                decoded[by * 4 + bx] = True

    def _partition(self, mb, x, y, w, h, ref_idx, mv) -> PartitionMv:
        if not 0 <= ref_idx < len(self.ref_offsets):
            raise MalformedSlice(f"ref_idx {ref_idx} beyond reference list of {len(self.ref_offsets)}")
        mx, my = mb % self.pic.w, mb // self.pic.w
        offset = max(-MAX_REF_OFFSET, min(MAX_REF_OFFSET, self.ref_offsets[ref_idx]))
        return PartitionMv(mx * 16 + x, my * 16 + y, w, h, mv[0], mv[1], offset,
                           PAST if offset < 0 else FUTURE)

    # -- macroblock layer ------------------------------------------------------

    def decode(self, r: BitReader) -> list[MacroblockRecord]:
        pic = self.pic
        mb = self.hdr.first_mb
        out: list[MacroblockRecord] = []
        is_p = self.hdr.slice_type == SLICE_P
        try:
            more = True
            while more:
                if is_p:
                    run = r.ue()
                    if mb + run > pic.size:
                        raise MalformedSlice(f"mb_skip_run {run} overruns picture at MB {mb}")
                    for _ in range(run):
                        out.append(self._skip_mb(mb))
                        mb += 1
                    if run:
                        more = r.more_rbsp_data()
                        if not more:
                            break
                if mb >= pic.size:
                    raise MalformedSlice("slice data continues past the last macroblock")
                out.append(self._macroblock(r, mb, is_p))
                mb += 1
                more = r.more_rbsp_data()
            r.rbsp_trailing_bits()
        except OutOfBits as exc:
            raise MalformedSlice(f"slice data truncated at MB {mb}: {exc}") from exc
        if r.bits_left:
            raise BitstreamDesync(f"{r.bits_left} bits left after slice trailing bits")
        return out

    def _claim(self, mb: int) -> None:
        if self.pic.slice_of[mb] != -1:
            raise MalformedSlice(f"macroblock {mb} decoded twice")
        self.pic.slice_of[mb] = self.slice_id

    def _skip_mb(self, mb: int) -> MacroblockRecord:
        self._claim(mb)
        mv = self._skip_mv(mb)
        self._store_partition(mb, 0, 0, 16, 16, 0, mv, [False] * 16)
        rec = MacroblockRecord(mb, SKIP, (self._partition(mb, 0, 0, 16, 16, 0, mv),), (0,))
        self.pic.records[mb] = rec
        return rec

    def _macroblock(self, r: BitReader, mb: int, is_p: bool) -> MacroblockRecord:
        self._claim(mb)
        pic = self.pic
        mb_type = r.ue()
        if is_p:
            if mb_type > 30:
                raise MalformedSlice(f"P mb_type {mb_type}")
            if mb_type < 5:
                return self._inter_mb(r, mb, mb_type)
            mb_type -= 5
        elif mb_type > 25:
            raise MalformedSlice(f"I mb_type {mb_type}")

        # intra macroblock: refs stay -1, mvs zero
        pic.ref[mb] = [-1] * 16
        pic.mv[mb] = [(0, 0)] * 16
        rec = MacroblockRecord(mb, INTRA)
        pic.records[mb] = rec
        if mb_type == 25:  # I_PCM
            while not r.byte_aligned():
                if r.u(1):
                    raise MalformedSlice("nonzero pcm_alignment_zero_bit")
            r.skip(384 * 8)
            pic.luma_tc[mb] = [16] * 16
            pic.chroma_tc[0][mb] = [16] * 4
            pic.chroma_tc[1][mb] = [16] * 4
            return rec
        if mb_type == 0:  # I_NxN
            for _ in range(16):
                if not r.u(1):
                    r.skip(3)
            if r.ue() > 3:
                raise MalformedSlice("intra_chroma_pred_mode > 3")
            cbp_code = r.ue()
            if cbp_code > 47:
                raise MalformedSlice(f"coded_block_pattern codeNum {cbp_code}")
            cbp = GOLOMB_TO_INTRA4X4_CBP[cbp_code]
            self._residual(r, mb, cbp & 15, cbp >> 4, i16=False)
        else:  # I_16x16
            if r.ue() > 3:
                raise MalformedSlice("intra_chroma_pred_mode > 3")
            cbp_luma = 15 if mb_type >= 13 else 0
            cbp_chroma = ((mb_type - 1) >> 2) % 3
            self._residual(r, mb, cbp_luma, cbp_chroma, i16=True)
        return rec

    def _read_refs(self, r: BitReader, count: int, mb_type: int) -> list[int]:
        n = self.hdr.num_ref_idx_l0
        if n > 1 and mb_type != 4:
            refs = [r.te(n - 1) for _ in range(count)]
            for ref in refs:
                if ref >= n:
                    raise MalformedSlice(f"ref_idx_l0 {ref} >= num_ref_idx_active {n}")
            return refs
        return [0] * count

    def _inter_mb(self, r: BitReader, mb: int, mb_type: int) -> MacroblockRecord:
        decoded = [False] * 16
        parts: list[PartitionMv] = []
        refs_used: list[int] = []
        if mb_type < 3:
            w, h = P_PART_SHAPES[mb_type]
            count = 1 if mb_type == 0 else 2
            refs = self._read_refs(r, count, mb_type)
            mvds = [(r.se(), r.se()) for _ in range(count)]
            for i in range(count):
                x, y = (0, 0) if i == 0 else ((0, 8) if mb_type == 1 else (8, 0))
                px, py = self._predict(mb, x, y, w, h, refs[i], decoded, (w, h), i)
                mv = (px + mvds[i][0], py + mvds[i][1])
                self._store_partition(mb, x, y, w, h, refs[i], mv, decoded)
                parts.append(self._partition(mb, x, y, w, h, refs[i], mv))
                refs_used.append(refs[i])
        else:
            sub_types = [r.ue() for _ in range(4)]
            for t in sub_types:
                if t > 3:
                    raise MalformedSlice(f"P sub_mb_type {t}")
            refs = self._read_refs(r, 4, mb_type)
            mvds = []
            for t in sub_types:
                sw, sh = SUB_PART_SHAPES[t]
                mvds.append([(r.se(), r.se()) for _ in range((8 // sw) * (8 // sh))])
            for i, t in enumerate(sub_types):
                sw, sh = SUB_PART_SHAPES[t]
                ox, oy = (i & 1) * 8, (i >> 1) * 8
                for j, mvd in enumerate(mvds[i]):
                    per_row = 8 // sw
                    x, y = ox + (j % per_row) * sw, oy + (j // per_row) * sh
                    px, py = self._predict(mb, x, y, sw, sh, refs[i], decoded)
                    mv = (px + mvd[0], py + mvd[1])
                    self._store_partition(mb, x, y, sw, sh, refs[i], mv, decoded)
                    parts.append(self._partition(mb, x, y, sw, sh, refs[i], mv))
                    refs_used.append(refs[i])
        cbp_code = r.ue()
        if cbp_code > 47:
            raise MalformedSlice(f"coded_block_pattern codeNum {cbp_code}")
        cbp = GOLOMB_TO_INTER_CBP[cbp_code]
        self._residual(r, mb, cbp & 15, cbp >> 4, i16=False)
        rec = MacroblockRecord(mb, INTER, tuple(parts), tuple(refs_used))
        self.pic.records[mb] = rec
        return rec

    def _residual(self, r: BitReader, mb: int, cbp_luma: int, cbp_chroma: int, i16: bool) -> None:
        pic = self.pic
        if cbp_chroma > 2:
            raise MalformedSlice(f"CodedBlockPatternChroma {cbp_chroma}")
        if cbp_luma or cbp_chroma or i16:
            dqp = r.se()
            if not -26 <= dqp <= 25:
                raise MalformedSlice(f"mb_qp_delta {dqp} out of range")
        tc = pic.luma_tc[mb]
        for i in range(16):
            tc[i] = 0
        for comp in (0, 1):
            for i in range(4):
                pic.chroma_tc[comp][mb][i] = 0
        if i16:
            residual_block(r, self._luma_nc(mb, 0, 0), 16)
        for blk8 in range(4):
            if not cbp_luma & (1 << blk8):
                continue
            for sub in range(4):
                bx, by = LUMA_BLK_XY[blk8 * 4 + sub]
                total, _ = residual_block(r, self._luma_nc(mb, bx, by), 15 if i16 else 16)
                tc[by * 4 + bx] = total
        if cbp_chroma:
            for comp in (0, 1):
                residual_block(r, -1, 4)
        if cbp_chroma & 2:
            for comp in (0, 1):
                for blk in range(4):
                    bx, by = blk & 1, blk >> 1
                    total, _ = residual_block(r, self._chroma_nc(mb, comp, bx, by), 15)
                    pic.chroma_tc[comp][mb][by * 2 + bx] = total


def decode_macroblocks(rbsp: bytes, header: SliceHeader, sps: SeqParamSet, pps: PicParamSet,
                       picture: PictureState | None = None, slice_id: int = 0,
                       ref_offsets: list[int] | None = None) -> list[MacroblockRecord]:
    """Decode one slice's macroblocks, returning them in raster order."""
    if picture is None:
        picture = PictureState(sps.pic_width_in_mbs, sps.pic_height_in_map_units)
    dec = SliceDecoder(sps, pps, header, picture, slice_id, ref_offsets)
    return dec.decode(BitReader(rbsp, header.data_bit_offset))
