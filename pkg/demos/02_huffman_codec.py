"""Model-driven Huffman coding of quantized gradients.

Builds the per-layer codebook from the fitted distribution (not from symbol
counts), encodes a tensor into the wire block format, and decodes it back
losslessly while accounting for every bit.
"""

import numpy as np

from co3 import (
    FP4,
    GenNormParams,
    build_codebook,
    cell_probabilities,
    decode_block,
    dequantize,
    encode,
    expected_length,
    optimize_bias,
    quantize,
)

rng = np.random.default_rng(1)
model = GenNormParams(beta=1.2, mu=0.0, alpha=0.004)
g = rng.laplace(0.0, 0.004, size=20_000)

fmt = FP4.with_bias(float(np.float32(optimize_bias(model, FP4))))
probs = cell_probabilities(model, fmt)
codebook = build_codebook(probs)

print("level probabilities under the fitted model:")
print(" ", np.array2string(probs, precision=4, suppress_small=True))
print("code lengths:", codebook.code_lengths)
print(f"expected length: {expected_length(codebook, probs):.3f} bits/symbol")

q = quantize(g, fmt)
block = encode(q, codebook, user_id=0, iteration=0, layer_id=0)
wire = block.to_bytes()
print(f"\nencoded {g.size} values -> {len(wire)} bytes "
      f"({block.payload_bits} payload bits, {block.header_bits} header bits, "
      f"{block.pad_bits} pad bits)")
print(f"bits/weight: {block.payload_bits / g.size:.3f} (raw f32 would be 32)")

# the decoder needs nothing but the wire bytes
from co3.entropy import EncodedBlock

decoded = decode_block(EncodedBlock.from_bytes(wire))
assert np.array_equal(decoded.symbols, q.symbols.ravel())
assert np.array_equal(dequantize(decoded), dequantize(q).ravel())
print("decode(encode(q)) == q: lossless round trip verified")
