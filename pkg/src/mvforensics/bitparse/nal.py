"""Annex-B byte-stream framing."""

from __future__ import annotations

from dataclasses import dataclass

from ..errors import MalformedNal, TruncatedStream

NAL_SLICE = 1
NAL_SLICE_DPA = 2
NAL_SLICE_DPB = 3
NAL_SLICE_DPC = 4
NAL_IDR = 5
NAL_SEI = 6
NAL_SPS = 7
NAL_PPS = 8
NAL_AUD = 9


@dataclass(frozen=True)
class NalUnit:
    ref_idc: int
    unit_type: int
    rbsp: bytes
    offset: int = 0  # byte offset of the start code in the stream

    @property
    def is_slice(self) -> bool:
        return self.unit_type in (NAL_SLICE, NAL_IDR)


def unescape(payload: bytes) -> bytes:
    """Drop emulation-prevention bytes (the 03 in 00 00 03)."""
    if b"\x00\x00\x03" not in payload:
        return bytes(payload)
    out = bytearray()
    zeros = 0
    for b in payload:
        if zeros >= 2 and b == 3:
            zeros = 0
            continue
        out.append(b)
        zeros = zeros + 1 if b == 0 else 0
    return bytes(out)


def escape(rbsp: bytes) -> bytes:
    """Insert emulation-prevention bytes so no 00 00 0x (x <= 3) survives."""
    out = bytearray()
    zeros = 0
    for b in rbsp:
        if zeros >= 2 and b <= 3:
            out.append(3)
            zeros = 0
        out.append(b)
        zeros = zeros + 1 if b == 0 else 0
    if zeros >= 2:
        out.append(3)  # a trailing 00 00 would merge with the next start code
    return bytes(out)


def _start_codes(stream: bytes) -> list[tuple[int, int]]:
    """(start code offset, payload offset) pairs for every 00 00 01."""
    found = []
    i = stream.find(b"\x00\x00\x01")
    while i >= 0:
        begin = i - 1 if i > 0 and stream[i - 1] == 0 else i
        found.append((begin, i + 3))
        i = stream.find(b"\x00\x00\x01", i + 3)
    return found


def split_annexb(stream: bytes) -> list[NalUnit]:
    """Split an Annex-B elementary stream into NAL units.

    Bytes before the first start code are ignored (leading_zero_8bits or
    garbage from a cut stream). Trailing zero bytes of each unit belong to
    the next start code and are stripped.
    """
    stream = bytes(stream)
    codes = _start_codes(stream)
    units = []
    for k, (begin, start) in enumerate(codes):
        end = codes[k + 1][0] if k + 1 < len(codes) else len(stream)
        payload = stream[start:end].rstrip(b"\x00")
        if not payload:
            if k + 1 == len(codes):
                raise TruncatedStream(f"start code at byte {begin} is not followed by a NAL header")
            continue
        header = payload[0]
        if header & 0x80:
            raise MalformedNal(f"forbidden_zero_bit set in NAL at byte {begin}")
        units.append(NalUnit(
            ref_idc=(header >> 5) & 3,
            unit_type=header & 0x1F,
            rbsp=unescape(payload[1:]),
            offset=begin,
        ))
    return units


def join_annexb(units: list[NalUnit]) -> bytes:
    """Serialize NAL units back to a byte stream with 4-byte start codes."""
    out = bytearray()
    for nal in units:
        out += b"\x00\x00\x00\x01"
        out.append((nal.ref_idc << 5) | nal.unit_type)
        out += escape(nal.rbsp)
    return bytes(out)
