"""CAVLC residual syntax (coeff_token, levels, total_zeros, run_before).

Coefficients are decoded only far enough to stay bit-aligned; callers get
back the block's TotalCoeff, which drives nC prediction for later blocks.
"""

from __future__ import annotations

from ..errors import MalformedSlice
from .bitstream import BitReader

# coeff_token, indexed [table][total_coeff * 4 + trailing_ones]; tables are
# 0 <= nC < 2, 2 <= nC < 4, 4 <= nC < 8, 8 <= nC.
COEFF_TOKEN_LEN = (
    (1, 0, 0, 0,
     6, 2, 0, 0, 8, 6, 3, 0, 9, 8, 7, 5, 10, 9, 8, 6,
     11, 10, 9, 7, 13, 11, 10, 8, 13, 13, 11, 9, 13, 13, 13, 10,
     14, 14, 13, 11, 14, 14, 14, 13, 15, 15, 14, 14, 15, 15, 15, 14,
     16, 15, 15, 15, 16, 16, 16, 15, 16, 16, 16, 16, 16, 16, 16, 16),
    (2, 0, 0, 0,
     6, 2, 0, 0, 6, 5, 3, 0, 7, 6, 6, 4, 8, 6, 6, 4,
     8, 7, 7, 5, 9, 8, 8, 6, 11, 9, 9, 6, 11, 11, 11, 7,
     12, 11, 11, 9, 12, 12, 12, 11, 12, 12, 12, 11, 13, 13, 13, 12,
     13, 13, 13, 13, 13, 14, 13, 13, 14, 14, 14, 13, 14, 14, 14, 14),
    (4, 0, 0, 0,
     6, 4, 0, 0, 6, 5, 4, 0, 6, 5, 5, 4, 7, 5, 5, 4,
     7, 5, 5, 4, 7, 6, 6, 4, 7, 6, 6, 4, 8, 7, 7, 5,
     8, 8, 7, 6, 9, 8, 8, 7, 9, 9, 8, 8, 9, 9, 9, 8,
     10, 9, 9, 9, 10, 10, 10, 10, 10, 10, 10, 10, 10, 10, 10, 10),
    (6, 0, 0, 0,
     6, 6, 0, 0, 6, 6, 6, 0, 6, 6, 6, 6, 6, 6, 6, 6,
     6, 6, 6, 6, 6, 6, 6, 6, 6, 6, 6, 6, 6, 6, 6, 6,
     6, 6, 6, 6, 6, 6, 6, 6, 6, 6, 6, 6, 6, 6, 6, 6,
     6, 6, 6, 6, 6, 6, 6, 6, 6, 6, 6, 6, 6, 6, 6, 6),
)
COEFF_TOKEN_BITS = (
    (1, 0, 0, 0,
     5, 1, 0, 0, 7, 4, 1, 0, 7, 6, 5, 3, 7, 6, 5, 3,
     7, 6, 5, 4, 15, 6, 5, 4, 11, 14, 5, 4, 8, 10, 13, 4,
     15, 14, 9, 4, 11, 10, 13, 12, 15, 14, 9, 12, 11, 10, 13, 8,
     15, 1, 9, 12, 11, 14, 13, 8, 7, 10, 9, 12, 4, 6, 5, 8),
    (3, 0, 0, 0,
     11, 2, 0, 0, 7, 7, 3, 0, 7, 10, 9, 5, 7, 6, 5, 4,
     4, 6, 5, 6, 7, 6, 5, 8, 15, 6, 5, 4, 11, 14, 13, 4,
     15, 10, 9, 4, 11, 14, 13, 12, 8, 10, 9, 8, 15, 14, 13, 12,
     11, 10, 9, 12, 7, 11, 6, 8, 9, 8, 10, 1, 7, 6, 5, 4),
    (15, 0, 0, 0,
     15, 14, 0, 0, 11, 15, 13, 0, 8, 12, 14, 12, 15, 10, 11, 11,
     11, 8, 9, 10, 9, 14, 13, 9, 8, 10, 9, 8, 15, 14, 13, 13,
     11, 14, 10, 12, 15, 10, 13, 12, 11, 14, 9, 12, 8, 10, 13, 8,
     13, 7, 9, 12, 9, 12, 11, 10, 5, 8, 7, 6, 1, 4, 3, 2),
    (3, 0, 0, 0,
     0, 1, 0, 0, 4, 5, 6, 0, 8, 9, 10, 11, 12, 13, 14, 15,
     16, 17, 18, 19, 20, 21, 22, 23, 24, 25, 26, 27, 28, 29, 30, 31,
     32, 33, 34, 35, 36, 37, 38, 39, 40, 41, 42, 43, 44, 45, 46, 47,
     48, 49, 50, 51, 52, 53, 54, 55, 56, 57, 58, 59, 60, 61, 62, 63),
)
CHROMA_DC_COEFF_TOKEN_LEN = (2, 0, 0, 0, 6, 1, 0, 0, 6, 6, 3, 0, 6, 7, 7, 6, 6, 8, 8, 7)
CHROMA_DC_COEFF_TOKEN_BITS = (1, 0, 0, 0, 7, 1, 0, 0, 4, 6, 1, 0, 3, 3, 2, 5, 2, 3, 2, 0)

# total_zeros for 4x4 blocks, indexed [total_coeff - 1][total_zeros]
TOTAL_ZEROS_LEN = (
    (1, 3, 3, 4, 4, 5, 5, 6, 6, 7, 7, 8, 8, 9, 9, 9),
    (3, 3, 3, 3, 3, 4, 4, 4, 4, 5, 5, 6, 6, 6, 6),
    (4, 3, 3, 3, 4, 4, 3, 3, 4, 5, 5, 6, 5, 6),
    (5, 3, 4, 4, 3, 3, 3, 4, 3, 4, 5, 5, 5),
    (4, 4, 4, 3, 3, 3, 3, 3, 4, 5, 4, 5),
    (6, 5, 3, 3, 3, 3, 3, 3, 4, 3, 6),
    (6, 5, 3, 3, 3, 2, 3, 4, 3, 6),
    (6, 4, 5, 3, 2, 2, 3, 3, 6),
    (6, 6, 4, 2, 2, 3, 2, 5),
    (5, 5, 3, 2, 2, 2, 4),
    (4, 4, 3, 3, 1, 3),
    (4, 4, 2, 1, 3),
    (3, 3, 1, 2),
    (2, 2, 1),
    (1, 1),
)
TOTAL_ZEROS_BITS = (
    (1, 3, 2, 3, 2, 3, 2, 3, 2, 3, 2, 3, 2, 3, 2, 1),
    (7, 6, 5, 4, 3, 5, 4, 3, 2, 3, 2, 3, 2, 1, 0),
    (5, 7, 6, 5, 4, 3, 4, 3, 2, 3, 2, 1, 1, 0),
    (3, 7, 5, 4, 6, 5, 4, 3, 3, 2, 2, 1, 0),
    (5, 4, 3, 7, 6, 5, 4, 3, 2, 1, 1, 0),
    (1, 1, 7, 6, 5, 4, 3, 2, 1, 1, 0),
    (1, 1, 5, 4, 3, 3, 2, 1, 1, 0),
    (1, 1, 1, 3, 3, 2, 2, 1, 0),
    (1, 0, 1, 3, 2, 1, 1, 1),
    (1, 0, 1, 3, 2, 1, 1),
    (0, 1, 1, 2, 1, 3),
    (0, 1, 1, 1, 1),
    (0, 1, 1, 1),
    (0, 1, 1),
    (0, 1),
)
CHROMA_DC_TOTAL_ZEROS_LEN = ((1, 2, 3, 3), (1, 2, 2), (1, 1))
CHROMA_DC_TOTAL_ZEROS_BITS = ((1, 1, 1, 0), (1, 1, 0), (1, 0))

# run_before, indexed [min(zeros_left, 7) - 1][run_before]
RUN_LEN = (
    (1, 1),
    (1, 2, 2),
    (2, 2, 2, 2),
    (2, 2, 2, 3, 3),
    (2, 2, 3, 3, 3, 3),
    (2, 3, 3, 3, 3, 3, 3),
    (3, 3, 3, 3, 3, 3, 3, 4, 5, 6, 7, 8, 9, 10, 11),
)
RUN_BITS = (
    (1, 0),
    (1, 1, 0),
    (3, 2, 1, 0),
    (3, 2, 1, 1, 0),
    (3, 2, 3, 2, 1, 0),
    (3, 0, 1, 3, 2, 5, 4),
    (7, 6, 5, 4, 3, 2, 1, 1, 1, 1, 1, 1, 1, 1, 1),
)


class VlcTable:
    """Prefix-code decoder backed by a flat lookup on the next ``width`` bits."""

    def __init__(self, codes: dict[object, tuple[int, int]]):
        # codes: symbol -> (length, code)
        self.codes = codes
        self.width = max(n for n, _ in codes.values())
        self.lookup: list[tuple[int, object] | None] = [None] * (1 << self.width)
        for sym, (n, code) in codes.items():
            base = code << (self.width - n)
            for k in range(1 << (self.width - n)):
                if self.lookup[base + k] is not None:
                    raise ValueError(f"VLC table is not prefix-free at symbol {sym!r}")
                self.lookup[base + k] = (n, sym)

    def read(self, r: BitReader):
        entry = self.lookup[r.peek(self.width)]
        if entry is None or entry[0] > r.bits_left:
            raise MalformedSlice(f"no VLC codeword at bit {r.pos}")
        r.pos += entry[0]
        return entry[1]


def _coeff_token_table(lens, bits, max_coeff) -> VlcTable:
    codes = {}
    for total in range(max_coeff + 1):
        for ones in range(min(total, 3) + 1):
            i = total * 4 + ones
            codes[(ones, total)] = (lens[i], bits[i])
    return VlcTable(codes)


COEFF_TOKEN = [_coeff_token_table(COEFF_TOKEN_LEN[t], COEFF_TOKEN_BITS[t], 16) for t in range(4)]
CHROMA_DC_COEFF_TOKEN = _coeff_token_table(CHROMA_DC_COEFF_TOKEN_LEN, CHROMA_DC_COEFF_TOKEN_BITS, 4)
TOTAL_ZEROS = [VlcTable({z: (n, c) for z, (n, c) in enumerate(zip(TOTAL_ZEROS_LEN[t], TOTAL_ZEROS_BITS[t]))})
               for t in range(15)]
CHROMA_DC_TOTAL_ZEROS = [
    VlcTable({z: (n, c) for z, (n, c) in enumerate(zip(CHROMA_DC_TOTAL_ZEROS_LEN[t], CHROMA_DC_TOTAL_ZEROS_BITS[t]))})
    for t in range(3)
]
RUN_BEFORE = [VlcTable({z: (n, c) for z, (n, c) in enumerate(zip(RUN_LEN[t], RUN_BITS[t]))}) for t in range(7)]


def coeff_token_table(nc: int) -> VlcTable:
    if nc == -1:
        return CHROMA_DC_COEFF_TOKEN
    if nc < 2:
        return COEFF_TOKEN[0]
    if nc < 4:
        return COEFF_TOKEN[1]
    if nc < 8:
        return COEFF_TOKEN[2]
    return COEFF_TOKEN[3]


def _level_prefix(r: BitReader) -> int:
    window = r.peek(32)
    if window == 0:
        raise MalformedSlice(f"level_prefix longer than 32 bits at {r.pos}")
    zeros = 32 - window.bit_length()
    r.skip(zeros + 1)
    return zeros


def residual_block(r: BitReader, nc: int, max_coeff: int) -> tuple[int, list[int]]:
    """Parse one residual_block_cavlc(); return (TotalCoeff, levels).

    ``levels`` are in reverse scan order (highest frequency first) as coded.
    """
    trailing_ones, total = coeff_token_table(nc).read(r)
    if total > max_coeff:
        raise MalformedSlice(f"TotalCoeff {total} exceeds block size {max_coeff}")
    if total == 0:
        return 0, []
    levels = []
    suffix_length = 1 if total > 10 and trailing_ones < 3 else 0
    for i in range(total):
        if i < trailing_ones:
            levels.append(-1 if r.u(1) else 1)
            continue
        prefix = _level_prefix(r)
        level_code = min(15, prefix) << suffix_length
        if suffix_length > 0 or prefix >= 14:
            if prefix == 14 and suffix_length == 0:
                size = 4
            elif prefix >= 15:
                size = prefix - 3
            else:
                size = suffix_length
            if size:
                level_code += r.u(size)
        if prefix >= 15 and suffix_length == 0:
            level_code += 15
        if prefix >= 16:
            level_code += (1 << (prefix - 3)) - 4096
        if i == trailing_ones and trailing_ones < 3:
            level_code += 2
        level = (level_code + 2) >> 1 if level_code % 2 == 0 else (-level_code - 1) >> 1
        levels.append(level)
        if suffix_length == 0:
            suffix_length = 1
        if abs(level) > (3 << (suffix_length - 1)) and suffix_length < 6:
            suffix_length += 1
    if total < max_coeff:
        tables = CHROMA_DC_TOTAL_ZEROS if max_coeff == 4 else TOTAL_ZEROS
        total_zeros = tables[total - 1].read(r)
    else:
        total_zeros = 0
    if total + total_zeros > max_coeff:
        raise MalformedSlice(f"total_zeros {total_zeros} overflows block of {max_coeff}")
    zeros_left = total_zeros
    for _ in range(total - 1):
        if zeros_left <= 0:
            break
        run = RUN_BEFORE[min(zeros_left, 7) - 1].read(r)
        if run > zeros_left:
            raise MalformedSlice(f"run_before {run} exceeds zerosLeft {zeros_left}")
        zeros_left -= run
    return total, levels
