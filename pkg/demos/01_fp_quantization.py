"""Low-bit floating-point conversion and the exponent bias.

Walks the fp4 level grid, quantizes a gradient-like tensor, and shows how the
optimized exponent bias adapts the grid to the data scale.
"""

import numpy as np

from co3 import FP4, GenNormParams, bias_objective, dequantize, enumerate_levels, optimize_bias, quantize

print("fp4 [sign mant exp] = [1 2 1], bias 0 level grid:")
print(" ", enumerate_levels(FP4))

# A gradient-scale tensor: values of magnitude ~1e-2 vanish on the unit grid.
rng = np.random.default_rng(0)
g = rng.laplace(0.0, 0.01, size=8)
print("\ngradient sample:      ", np.array2string(g, precision=4))
print("quantized, bias 0:    ", dequantize(quantize(g, FP4)))

# Fit-driven bias: a Laplace model (shape 1) at the empirical scale.
model = GenNormParams(beta=1.0, mu=0.0, alpha=float(np.mean(np.abs(g))))
b = optimize_bias(model, FP4)
print(f"\noptimized exponent bias for sigma={model.sigma:.4f}: b = {b:.3f}")
print("quantized, tuned bias:", np.array2string(dequantize(quantize(g, FP4.with_bias(b))), precision=4))

# The bias minimizes the expected squared error; nearby biases do worse.
for delta in (-1.0, 0.0, 1.0):
    j = bias_objective(b + delta, model, FP4)
    marker = "  <- optimum" if delta == 0 else ""
    print(f"  E[(Q(G)-G)^2] at b{delta:+.0f}: {j:.3e}{marker}")
