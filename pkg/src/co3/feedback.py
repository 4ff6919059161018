"""Decayed error-feedback memory for compressed gradients.

Each (user, layer) owns one full-precision memory tensor, initialized to zero.
Per step the quantizer input is g + gamma * m, and afterwards the memory moves
to gamma * m + g - g_hat. The update is evaluated in exactly that association
order, ``(gamma * m + g) - g_hat``, so a replay from logged (g, g_hat) pairs
reproduces the stored memory bit-for-bit.
"""

from dataclasses import dataclass, field

import numpy as np


@dataclass
class FeedbackState:
    """Single-owner memory tensor plus its decay coefficient."""

    memory: np.ndarray
    gamma: float

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in [0, 1], got {self.gamma}")
        self.memory = np.asarray(self.memory, dtype=np.float64)


def init_state(shape, gamma):
    return FeedbackState(np.zeros(shape, dtype=np.float64), float(gamma))


def _check_shape(state, g):
    g = np.asarray(g, dtype=np.float64)
    if g.shape != state.memory.shape:
        raise ValueError(f"shape mismatch: gradient {g.shape} vs memory {state.memory.shape}")
    return g


def corrected_input(state, g):
    """Quantizer input g + gamma * m; does not mutate the state."""
    g = _check_shape(state, g)
    return state.gamma * state.memory + g


def update(state, g, g_hat):
    """Advance the memory: m <- (gamma * m + g) - g_hat."""
    g = _check_shape(state, g)
    g_hat = _check_shape(state, g_hat)
    state.memory = (state.gamma * state.memory + g) - g_hat
    return state


def replay_memory(gamma, history):
    """Recompute the memory from logged (g, g_hat) pairs, same association order."""
    m = None
    for g, g_hat in history:
        if m is None:
            m = np.zeros_like(np.asarray(g, dtype=np.float64))
        m = (gamma * m + g) - g_hat
    return m


def norms(state, g):
    """(l1 of the gradient, l1 of the memory)."""
    g = _check_shape(state, g)
    return float(np.sum(np.abs(g))), float(np.sum(np.abs(state.memory)))
