"""MSB-first bit reader/writer with exp-Golomb codes."""

from __future__ import annotations

from ..errors import OutOfBits


class BitReader:
    """Cursor over an RBSP byte string.

    Every read is bounds-checked; running off the end raises
    :class:`OutOfBits` instead of returning padding.
    """

    __slots__ = ("data", "pos", "nbits")

    def __init__(self, data: bytes, pos: int = 0):
        self.data = bytes(data)
        self.pos = pos
        self.nbits = len(self.data) * 8

    @property
    def bits_left(self) -> int:
        return self.nbits - self.pos

    def peek(self, n: int) -> int:
        """Return the next ``n`` bits (n <= 32) zero-padded past the end."""
        if n == 0:
            return 0
        byte = self.pos >> 3
        chunk = int.from_bytes(self.data[byte:byte + 5].ljust(5, b"\0"), "big")
        return (chunk >> (40 - (self.pos & 7) - n)) & ((1 << n) - 1)

    def skip(self, n: int) -> None:
        if self.pos + n > self.nbits:
            raise OutOfBits(f"need {n} bits at {self.pos}, have {self.bits_left}")
        self.pos += n

    def u(self, n: int) -> int:
        if n == 0:
            return 0
        if self.pos + n > self.nbits:
            raise OutOfBits(f"need {n} bits at {self.pos}, have {self.bits_left}")
        if n <= 32:
            v = self.peek(n)
        else:
            v = (self.peek(n - 32) << 32) | BitReader(self.data, self.pos + n - 32).peek(32)
        self.pos += n
        return v

    def flag(self) -> bool:
        return bool(self.u(1))

    def ue(self) -> int:
        zeros = 0
        while True:
            if self.pos >= self.nbits:
                raise OutOfBits(f"exp-Golomb prefix runs past end at {self.pos}")
            window = self.peek(32)
            if window:
                lead = 32 - window.bit_length()
                zeros += lead
                self.pos += lead
                break
            zeros += 32
            self.pos += 32
        if zeros > 31:
            raise OutOfBits(f"exp-Golomb prefix of {zeros} zeros is out of range")
        if self.pos + zeros + 1 > self.nbits:
            raise OutOfBits(f"exp-Golomb code runs past end at {self.pos}")
        self.pos += 1
        return (1 << zeros) - 1 + self.u(zeros)

    def se(self) -> int:
        k = self.ue()
        return (k + 1) >> 1 if k & 1 else -(k >> 1)

    def te(self, range_max: int) -> int:
        if range_max > 1:
            return self.ue()
        return 1 - self.u(1)

    def byte_aligned(self) -> bool:
        return self.pos & 7 == 0

    def more_rbsp_data(self) -> bool:
        """True while data remains before the rbsp_stop_one_bit."""
        if self.pos >= self.nbits:
            return False
        last = len(self.data) - 1
        while last >= 0 and self.data[last] == 0:
            last -= 1
        if last < 0:
            return False
        b = self.data[last]
        stop = last * 8 + 7 - ((b & -b).bit_length() - 1)
        return self.pos < stop

    def rbsp_trailing_bits(self) -> None:
        if self.u(1) != 1:
            raise OutOfBits("missing rbsp_stop_one_bit")
        while not self.byte_aligned():
            if self.u(1) != 0:
                raise OutOfBits("nonzero rbsp_alignment_zero_bit")


class BitWriter:
    def __init__(self) -> None:
        self._bits: list[int] = []

    def u(self, n: int, value: int) -> None:
        if value < 0 or value >> n:
            raise ValueError(f"{value} does not fit in {n} bits")
        for i in range(n - 1, -1, -1):
            self._bits.append((value >> i) & 1)

    def flag(self, value: bool) -> None:
        self._bits.append(1 if value else 0)

    def ue(self, value: int) -> None:
        if value < 0:
            raise ValueError("ue() of a negative value")
        code = value + 1
        n = code.bit_length()
        self.u(n - 1, 0)
        self.u(n, code)

    def se(self, value: int) -> None:
        self.ue(2 * value - 1 if value > 0 else -2 * value)

    def rbsp_trailing_bits(self) -> None:
        self._bits.append(1)
        while len(self._bits) % 8:
            self._bits.append(0)

    def raw_bits(self, bits: list[int]) -> None:
        self._bits.extend(bits)

    def __len__(self) -> int:
        return len(self._bits)

    def to_bytes(self) -> bytes:
        bits = self._bits + [0] * (-len(self._bits) % 8)
        out = bytearray()
        for i in range(0, len(bits), 8):
            b = 0
            for bit in bits[i:i + 8]:
                b = (b << 1) | bit
            out.append(b)
        return bytes(out)
