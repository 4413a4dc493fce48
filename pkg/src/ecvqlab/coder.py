"""Byte-oriented range coder over fixed integer frequency tables.

The coder is the classic carry-free 32-bit range coder (Subbotin variant):
a 32-bit ``low``/``range`` pair renormalized one byte at a time, with
frequency precision of 16 bits (table total fixed at 2^16). The encoder
flush emits the four top bytes of ``low``, so a valid stream costs at most
32 bits plus a sub-0.1% renormalization loss over the table cross-entropy.

Payload rules (bit-exact contract):

- total frequency is exactly TOTAL = 65536; every symbol has freq >= 1;
- encode: r = range // TOTAL; low += cum_lo * r; range = freq * r;
- renormalize while the top byte of low is settled
  ((low ^ (low + range)) < 2^24) or the range underflows (< 2^16, in which
  case range is clipped to -low mod 2^16); each step emits low's top byte
  and shifts low and range left by 8 (mod 2^32);
- flush: four final bytes of low, most significant first;
- decode mirrors the same state machine, pre-reading 4 bytes into ``code``
  and recovering cumulative values as ((code - low) mod 2^32) // r.

Tables may differ per symbol position and may be chosen from already
decoded symbols, which is what conditional priors use.
"""

import numpy as np

from .errors import CorruptStreamError

TOTAL_BITS = 16
TOTAL = 1 << TOTAL_BITS
TOP = 1 << 24
BOT = 1 << 16
MASK = 0xFFFFFFFF


class FreqTable:
    """Integer frequencies summing to 2^16, with cumulative lookup."""

    __slots__ = ("freqs", "cum")

    def __init__(self, freqs):
        freqs = np.asarray(freqs, dtype=np.int64)
        if freqs.ndim != 1 or freqs.size < 1:
            raise ValueError("freqs must be a non-empty 1-d array")
        if np.any(freqs < 1):
            raise ValueError("every symbol needs frequency >= 1")
        if int(freqs.sum()) != TOTAL:
            raise ValueError(f"frequencies must sum to {TOTAL}, got {int(freqs.sum())}")
        self.freqs = freqs
        self.cum = np.concatenate([[0], np.cumsum(freqs)]).astype(np.int64)

    @property
    def n_symbols(self):
        return self.freqs.size

    def bits(self, symbol):
        """Ideal code length of a symbol under this table."""
        return float(TOTAL_BITS - np.log2(self.freqs[symbol]))

    def cross_entropy(self, p):
        """Expected bits per symbol when the true distribution is p."""
        p = np.asarray(p, dtype=np.float64)
        return float(-(p * (np.log2(self.freqs) - TOTAL_BITS)).sum())


def build_table(p):
    """Quantize a probability vector to a FreqTable by largest remainder.

    Every symbol keeps frequency >= 1; the total is exactly 2^16. Requires
    len(p) <= 2^16.
    """
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1 or p.size < 1:
        raise ValueError("p must be a non-empty 1-d array")
    if p.size > TOTAL:
        raise ValueError(f"cannot code alphabets larger than {TOTAL}, got {p.size}")
    if np.any(p <= 0) or not np.all(np.isfinite(p)):
        raise ValueError("p must be strictly positive and finite")
    scaled = p / p.sum() * TOTAL
    f = np.floor(scaled).astype(np.int64)
    rem = scaled - f
    np.maximum(f, 1, out=f)
    deficit = TOTAL - int(f.sum())
    if deficit > 0:
        # hand out the leftover units by descending remainder (stable order)
        order = np.argsort(-rem, kind="stable")
        f[order[:deficit]] += 1
    elif deficit < 0:
        over = -deficit
        while over > 0:
            order = np.argsort(-f, kind="stable")
            for i in order:
                if over == 0:
                    break
                if f[i] > 1:
                    f[i] -= 1
                    over -= 1
    return FreqTable(f)


class RangeEncoder:
    """Single-use streaming encoder; call finish() to obtain the bytes."""

    def __init__(self):
        self.low = 0
        self.range = MASK
        self._out = bytearray()
        self._done = False

    def encode(self, symbol, table):
        if self._done:
            raise RuntimeError("encoder already finished")
        symbol = int(symbol)
        if not 0 <= symbol < table.n_symbols:
            raise ValueError(f"symbol {symbol} out of range for table of {table.n_symbols}")
        cum_lo = int(table.cum[symbol])
        freq = int(table.freqs[symbol])
        r = self.range // TOTAL
        self.low = (self.low + cum_lo * r) & MASK
        self.range = freq * r
        self._normalize()

    def _normalize(self):
        while True:
            if ((self.low ^ (self.low + self.range)) & MASK) < TOP:
                pass
            elif self.range < BOT:
                self.range = (-self.low) & (BOT - 1)
            else:
                break
            self._out.append((self.low >> 24) & 0xFF)
            self.low = (self.low << 8) & MASK
            self.range = (self.range << 8) & MASK

    def finish(self):
        if not self._done:
            for _ in range(4):
                self._out.append((self.low >> 24) & 0xFF)
                self.low = (self.low << 8) & MASK
            self._done = True
        return bytes(self._out)


class RangeDecoder:
    """Mirror of RangeEncoder over an in-memory byte string."""

    def __init__(self, data):
        self._data = data
        self._pos = 0
        self.low = 0
        self.range = MASK
        self.code = 0
        for _ in range(4):
            self.code = ((self.code << 8) | self._next_byte()) & MASK

    def _next_byte(self):
        if self._pos >= len(self._data):
            raise CorruptStreamError("range coder payload is truncated")
        b = self._data[self._pos]
        self._pos += 1
        return b

    def decode(self, table):
        r = self.range // TOTAL
        cum = ((self.code - self.low) & MASK) // r
        if cum >= TOTAL:
            raise CorruptStreamError("invalid range coder state (cum out of range)")
        symbol = int(np.searchsorted(table.cum, cum, side="right")) - 1
        if symbol >= table.n_symbols:
            symbol = table.n_symbols - 1
        cum_lo = int(table.cum[symbol])
        freq = int(table.freqs[symbol])
        self.low = (self.low + cum_lo * r) & MASK
        self.range = freq * r
        self._normalize()
        return symbol

    def _normalize(self):
        while True:
            if ((self.low ^ (self.low + self.range)) & MASK) < TOP:
                pass
            elif self.range < BOT:
                self.range = (-self.low) & (BOT - 1)
            else:
                break
            self.code = ((self.code << 8) | self._next_byte()) & MASK
            self.low = (self.low << 8) & MASK
            self.range = (self.range << 8) & MASK


def _table_for(tables, i, prefix):
    if isinstance(tables, FreqTable):
        return tables
    if callable(tables):
        return tables(i, prefix)
    return tables[i]


def rc_encode(symbols, tables):
    """Encode a symbol sequence.

    ``tables`` is a single FreqTable, a per-symbol sequence of tables, or a
    callable ``(i, previous_symbols) -> FreqTable`` for conditional coding.
    """
    enc = RangeEncoder()
    symbols = [int(s) for s in symbols]
    for i, s in enumerate(symbols):
        enc.encode(s, _table_for(tables, i, symbols[:i]))
    return enc.finish()


def rc_decode(data, tables, count):
    """Decode ``count`` symbols; ``tables`` as in :func:`rc_encode`."""
    dec = RangeDecoder(data)
    out = []
    for i in range(count):
        out.append(dec.decode(_table_for(tables, i, out)))
    return out
