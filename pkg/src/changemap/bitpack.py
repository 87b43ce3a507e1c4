"""MSB-first bit streams for fixed-width integer records."""

from __future__ import annotations

from typing import Iterable


class BitWriter:
    def __init__(self):
        self._acc = 0
        self._nbits = 0

    def write(self, value: int, width: int) -> None:
        if width < 0:
            raise ValueError("negative width")
        if value < 0 or value >> width:
            raise ValueError(f"value {value} does not fit in {width} bits")
        self._acc = (self._acc << width) | value
        self._nbits += width

    @property
    def bit_length(self) -> int:
        return self._nbits

    def getvalue(self) -> bytes:
        """Written bits, zero-padded on the right to a whole byte."""
        pad = -self._nbits % 8
        nbytes = (self._nbits + pad) // 8
        return (self._acc << pad).to_bytes(nbytes, "big") if nbytes else b""


class BitReader:
    def __init__(self, data: bytes):
        self._data = data
        self._value = int.from_bytes(data, "big")
        self._total = len(data) * 8
        self._pos = 0

    def read(self, width: int) -> int:
        if self._pos + width > self._total:
            raise EOFError("bit stream exhausted")
        shift = self._total - self._pos - width
        self._pos += width
        return (self._value >> shift) & ((1 << width) - 1)


def pack(values: Iterable[tuple[int, int]]) -> bytes:
    w = BitWriter()
    for value, width in values:
        w.write(value, width)
    return w.getvalue()


def packed_size(total_bits: int) -> int:
    return (total_bits + 7) // 8
