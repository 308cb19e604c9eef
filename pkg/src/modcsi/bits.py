"""Minimal MSB-first bit string packing for feedback payloads."""


class BitWriter:
    def __init__(self):
        self._parts = []

    def write(self, value, width):
        value = int(value)
        if width < 0 or value < 0 or (width == 0 and value) or (width and value >> width):
            raise ValueError(f"value {value} does not fit in {width} bits")
        if width:
            self._parts.append(format(value, f"0{width}b"))
        return self

    def getvalue(self):
        return "".join(self._parts)


class BitReader:
    def __init__(self, bits):
        if set(bits) - {"0", "1"}:
            raise ValueError("payload must contain only '0' and '1'")
        self._bits = bits
        self._pos = 0

    def read(self, width):
        if self._pos + width > len(self._bits):
            raise ValueError("payload too short")
        chunk = self._bits[self._pos:self._pos + width]
        self._pos += width
        return int(chunk, 2) if width else 0

    def done(self):
        return self._pos == len(self._bits)


def index_bits(n):
    """Bits needed to address ``n`` alternatives."""
    if n < 1:
        raise ValueError("need at least one alternative")
    return (n - 1).bit_length()
