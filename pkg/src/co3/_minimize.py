"""Deterministic 1-D scalar search helpers shared by the bias and shape fits."""

import math

_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


def golden_section(f, lo, hi, tol=1e-8, max_iter=400):
    """Minimize f on [lo, hi]; returns the midpoint of the final bracket."""
    a, b = float(lo), float(hi)
    if not b > a:
        raise ValueError(f"empty search interval [{a}, {b}]")
    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if b - a <= tol:
            break
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - _INVPHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INVPHI * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def grid_then_golden(f, lo, hi, step, tol=1e-8):
    """Coarse grid argmin followed by golden-section refinement of the bracketing cells."""
    n = max(2, int(round((hi - lo) / step)) + 1)
    best_x, best_v, best_i = lo, f(lo), 0
    for i in range(1, n):
        x = lo + i * step
        v = f(x)
        if v < best_v:
            best_x, best_v, best_i = x, v, i
    a = lo + max(0, best_i - 1) * step
    b = lo + min(n - 1, best_i + 1) * step
    return golden_section(f, a, b, tol=tol)
