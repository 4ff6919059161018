"""Canonical Huffman coding over quantization levels and the uplink bit ledger.

One bitstream block is produced per (user, iteration, layer). The wire layout
is bit-exact and fully self-describing on the decode side:

    magic "CO3" | version 0x01 | user_id u16 | iteration u32 | layer_id u16 |
    symbol_count u64 | sign_bits u8, mant_bits u8, exp_bits u8 | bias f32 |
    level_count u16 | code lengths (level_count bytes, ascending level order) |
    pad_bit_count u8 | payload bytes

All multi-byte integers are little-endian; codewords are packed MSB-first and
the final byte is zero-padded. Codebooks are canonical (derived from lengths
and level order alone) with deterministic tie-breaking, so encoder and decoder
derive identical codes independently.
"""

import heapq
import struct
import threading
from dataclasses import dataclass

import numpy as np

from .fpq import FpFormat, QuantizedTensor

MAGIC = b"CO3"
VERSION = 1
_MAX_CODE_LEN = 63
_TABLE_MAX_LEN = 16  # full lookup-table decode up to this code length

_HEADER = struct.Struct("<3sBHIHQBBBfH")  # through level_count


class TruncationError(ValueError):
    """Bitstream ended before the requested number of symbols."""


class CorruptionError(ValueError):
    """Bitstream structure is inconsistent (bad magic, lengths, or padding)."""


@dataclass(frozen=True)
class HuffmanCodebook:
    """Canonical prefix code over the level alphabet."""

    code_lengths: tuple
    codewords: tuple

    @property
    def level_count(self):
        return len(self.code_lengths)

    @property
    def max_length(self):
        return max(self.code_lengths)

    @classmethod
    def from_lengths(cls, lengths):
        """Derive canonical codewords from per-level lengths (ascending level order).

        Codes are assigned in (length, level index) order, so equal inputs give
        bit-identical codebooks everywhere.
        """
        lengths = tuple(int(l) for l in lengths)
        if len(lengths) < 2:
            raise CorruptionError("a codebook needs at least 2 levels")
        if any(l < 1 or l > _MAX_CODE_LEN for l in lengths):
            raise CorruptionError(f"code lengths must lie in [1, {_MAX_CODE_LEN}]")
        max_len = max(lengths)
        kraft = sum(1 << (max_len - l) for l in lengths)
        if kraft != 1 << max_len:
            raise CorruptionError("code lengths violate Kraft equality")
        order = sorted(range(len(lengths)), key=lambda i: (lengths[i], i))
        codes = [0] * len(lengths)
        code = 0
        prev_len = lengths[order[0]]
        for rank, i in enumerate(order):
            if rank:
                code = (code + 1) << (lengths[i] - prev_len)
            codes[i] = code
            prev_len = lengths[i]
        return cls(lengths, tuple(codes))


def build_codebook(probs):
    """Optimal prefix code for ``probs`` with deterministic tie-breaking.

    Heap priority is (probability, creation order): leaves are created in
    level order, merged nodes afterwards, so equal-probability ties always
    resolve the same way. The result is converted to canonical form.
    """
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 1 or p.size < 2:
        raise ValueError("need a 1-D probability vector with at least 2 levels")
    if np.any(p < 0):
        raise ValueError("negative probability")
    if abs(float(p.sum()) - 1.0) > 1e-6:
        raise ValueError(f"probabilities sum to {p.sum():.8f}, expected 1")
    n = p.size
    heap = [(float(p[i]), i) for i in range(n)]
    heapq.heapify(heap)
    children = {}
    next_node = n
    while len(heap) > 1:
        p1, n1 = heapq.heappop(heap)
        p2, n2 = heapq.heappop(heap)
        children[next_node] = (n1, n2)
        heapq.heappush(heap, (p1 + p2, next_node))
        next_node += 1
    lengths = [0] * n
    stack = [(heap[0][1], 0)]
    while stack:
        node, depth = stack.pop()
        if node < n:
            lengths[node] = depth
        else:
            left, right = children[node]
            stack.append((left, depth + 1))
            stack.append((right, depth + 1))
    return HuffmanCodebook.from_lengths(lengths)


def expected_length(codebook, probs):
    """Mean codeword length sum(p_l * len_l) in bits per symbol."""
    p = np.asarray(probs, dtype=np.float64)
    if p.size != codebook.level_count:
        raise ValueError(
            f"dimension mismatch: {p.size} probabilities vs {codebook.level_count} levels"
        )
    return float(np.dot(p, np.asarray(codebook.code_lengths, dtype=np.float64)))


# ----------------------------------------------------------------------
# block encode / decode


@dataclass(frozen=True)
class EncodedBlock:
    """One coded (user, iteration, layer) tensor plus the header metadata."""

    user_id: int
    iteration: int
    layer_id: int
    fmt: FpFormat
    code_lengths: tuple
    symbol_count: int
    payload: bytes
    pad_bits: int
    payload_bits: int

    @property
    def header_bits(self):
        return 8 * (_HEADER.size + len(self.code_lengths) + 1)

    def to_bytes(self):
        head = _HEADER.pack(
            MAGIC,
            VERSION,
            self.user_id,
            self.iteration,
            self.layer_id,
            self.symbol_count,
            self.fmt.sign_bits,
            self.fmt.mant_bits,
            self.fmt.exp_bits,
            self.fmt.bias,
            len(self.code_lengths),
        )
        return head + bytes(self.code_lengths) + bytes([self.pad_bits]) + self.payload

    @classmethod
    def from_bytes(cls, data):
        """Parse one block; the remainder of ``data`` after the header is the payload."""
        if len(data) < _HEADER.size:
            raise TruncationError("block shorter than the fixed header")
        magic, version, user, iteration, layer, count, sgn, mant, exp, bias, levels = (
            _HEADER.unpack_from(data, 0)
        )
        if magic != MAGIC:
            raise CorruptionError(f"bad magic {magic!r}")
        if version != VERSION:
            raise CorruptionError(f"unsupported version {version}")
        pos = _HEADER.size
        if len(data) < pos + levels + 1:
            raise TruncationError("block ends inside the code-length table")
        lengths = tuple(data[pos : pos + levels])
        pos += levels
        pad = data[pos]
        pos += 1
        if pad > 7:
            raise CorruptionError(f"pad bit count {pad} out of range")
        payload = bytes(data[pos:])
        payload_bits = 8 * len(payload) - pad
        if payload_bits < 0:
            raise CorruptionError("pad bits exceed the payload")
        fmt = FpFormat(mant_bits=mant, exp_bits=exp, bias=bias, sign_bits=sgn)
        if levels != fmt.level_count:
            raise CorruptionError(
                f"header says {levels} levels but the format has {fmt.level_count}"
            )
        return cls(user, iteration, layer, fmt, lengths, count, payload, pad, payload_bits)


def encode(q, codebook, *, user_id=0, iteration=0, layer_id=0):
    """Concatenate canonical codewords MSB-first and byte-pad with zeros."""
    sym = np.asarray(q.symbols).ravel()
    if sym.size and (sym.min() < 0 or sym.max() >= codebook.level_count):
        bad = int(np.argwhere((sym < 0) | (sym >= codebook.level_count))[0][0])
        raise ValueError(
            f"symbol {int(sym[bad])} at index {bad} outside the {codebook.level_count}-level alphabet"
        )
    lengths = np.asarray(codebook.code_lengths, dtype=np.int64)[sym]
    total = int(lengths.sum())
    if total:
        codes = np.asarray(codebook.codewords, dtype=np.uint64)[sym]
        starts = np.cumsum(lengths) - lengths
        within = np.arange(total, dtype=np.int64) - np.repeat(starts, lengths)
        shift = (np.repeat(lengths, lengths) - 1 - within).astype(np.uint64)
        bits = ((np.repeat(codes, lengths) >> shift) & np.uint64(1)).astype(np.uint8)
        payload = np.packbits(bits).tobytes()
    else:
        payload = b""
    pad = (-total) % 8
    return EncodedBlock(
        user_id=user_id,
        iteration=iteration,
        layer_id=layer_id,
        fmt=q.fmt,
        code_lengths=tuple(codebook.code_lengths),
        symbol_count=int(sym.size),
        payload=payload,
        pad_bits=pad,
        payload_bits=total,
    )


def _decode_table(codebook):
    width = codebook.max_length
    syms = np.zeros(1 << width, dtype=np.int32)
    lens = np.zeros(1 << width, dtype=np.int32)
    for i, (code, ln) in enumerate(zip(codebook.codewords, codebook.code_lengths)):
        base = code << (width - ln)
        span = 1 << (width - ln)
        syms[base : base + span] = i
        lens[base : base + span] = ln
    return syms, lens


def decode(block, codebook, symbol_count=None):
    """Recover the exact symbol sequence; validates consumption and padding."""
    if symbol_count is None:
        symbol_count = block.symbol_count
    bits = np.unpackbits(np.frombuffer(block.payload, dtype=np.uint8))
    nbits = bits.size
    width = codebook.max_length
    out = np.empty(symbol_count, dtype=np.int32)
    pos = 0
    if width <= _TABLE_MAX_LEN:
        syms, lens = _decode_table(codebook)
        padded = np.concatenate((bits, np.zeros(width, dtype=np.uint8)))
        weights = (1 << np.arange(width - 1, -1, -1)).astype(np.int64)
        windows = np.lib.stride_tricks.sliding_window_view(padded, width) @ weights
        for j in range(symbol_count):
            if pos >= nbits:
                raise TruncationError(
                    f"bitstream exhausted after {j} of {symbol_count} symbols"
                )
            w = windows[pos]
            out[j] = syms[w]
            pos += int(lens[w])
    else:
        by_length = {}
        for i, (code, ln) in enumerate(zip(codebook.codewords, codebook.code_lengths)):
            by_length.setdefault(ln, {})[code] = i
        code = 0
        ln = 0
        j = 0
        while j < symbol_count:
            if pos >= nbits:
                raise TruncationError(
                    f"bitstream exhausted after {j} of {symbol_count} symbols"
                )
            code = (code << 1) | int(bits[pos])
            pos += 1
            ln += 1
            sym = by_length.get(ln, {}).get(code)
            if sym is not None:
                out[j] = sym
                j += 1
                code = 0
                ln = 0
            elif ln > width:
                raise CorruptionError("no codeword matches the bit pattern")
    if pos > nbits:
        raise TruncationError("final symbol ran past the end of the payload")
    trailing = nbits - pos
    if trailing != block.pad_bits:
        raise CorruptionError(
            f"{trailing} trailing bits but the header declares {block.pad_bits} pad bits"
        )
    if trailing and bits[pos:].any():
        raise CorruptionError("non-zero pad bits")
    return out


def decode_block(block):
    """Wire-only decode: rebuild the canonical codebook from header lengths."""
    codebook = HuffmanCodebook.from_lengths(block.code_lengths)
    symbols = decode(block, codebook)
    return QuantizedTensor(symbols, block.fmt)


# ----------------------------------------------------------------------
# payload accounting


class PayloadLedger:
    """Per-(user, iteration, layer) bit counts with order-independent totals.

    Safe to share across concurrently encoding users: each record is appended
    atomically and the totals are sums of non-negative integers.
    """

    def __init__(self):
        self._lock = threading.Lock()
        self.records = {}
        self._payload_total = 0
        self._header_total = 0

    def record(self, user_id, iteration, layer_id, payload_bits, header_bits):
        if payload_bits < 0 or header_bits < 0:
            raise ValueError("bit counts must be non-negative")
        key = (user_id, iteration, layer_id)
        with self._lock:
            if key in self.records:
                raise ValueError(f"duplicate ledger record for {key}")
            self.records[key] = (int(payload_bits), int(header_bits))
            self._payload_total += int(payload_bits)
            self._header_total += int(header_bits)

    def record_block(self, block):
        self.record(
            block.user_id,
            block.iteration,
            block.layer_id,
            block.payload_bits,
            block.header_bits,
        )

    @property
    def payload_total(self):
        return self._payload_total

    @property
    def header_total(self):
        return self._header_total

    def total(self, include_headers=True):
        return self._payload_total + (self._header_total if include_headers else 0)

    def __len__(self):
        return len(self.records)
