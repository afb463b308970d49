"""Reference detectors: CuSum (exact or misspecified), windowed GLR, multi-chart CuSum.

Each detector exposes ``update(x_t) -> statistic | None`` on a length-N
vector, matching :class:`cascade_cpd.detector.CascadeDetector`.
"""

from __future__ import annotations

from collections import deque

import numpy as np

from .likelihood import DEFAULT_SIGMA_FLOOR, measurement_table


def cusum_step(w, x_t, mu1: float):
    """One step of the N(0,1) -> N(mu1,1) CuSum recursion (scalar or per-node array)."""
    return np.maximum(w + mu1 * np.asarray(x_t) - 0.5 * mu1 * mu1, 0.0)


def cusum_trace(stream: np.ndarray, mu1: float) -> np.ndarray:
    """CuSum statistic after every sample of a 1-D stream."""
    out = np.empty(len(stream))
    w = 0.0
    for t, x in enumerate(stream):
        w = float(cusum_step(w, x, mu1))
        out[t] = w
    return out


def window_glr_node(row: np.ndarray, sigma_floor: float = DEFAULT_SIGMA_FLOOR) -> float:
    """Max over change columns of the unknown-mean/variance Gaussian GLR on one row."""
    table, none = measurement_table(np.asarray(row, dtype=float)[None, :], sigma_floor)
    return float(np.max(table[0] - none[0]))


def window_glr_argmax(row: np.ndarray, sigma_floor: float = DEFAULT_SIGMA_FLOOR) -> int:
    table, _ = measurement_table(np.asarray(row, dtype=float)[None, :], sigma_floor)
    return int(np.argmax(table[0]))


def multichart_cusum(states, eta: int) -> float:
    """Sum of the ``eta`` largest per-node CuSum statistics."""
    s = np.asarray(states, dtype=float)
    if eta > s.size:
        raise ValueError(f"eta={eta} exceeds the number of charts ({s.size})")
    if eta < 1:
        raise ValueError("eta must be >= 1")
    return float(np.sum(np.sort(s)[s.size - eta:]))


class CusumDetector:
    """Per-node CuSum charts; the statistic is the largest chart."""

    def __init__(self, n: int, mu1: float = 1.0):
        self.mu1 = mu1
        self.w = np.zeros(n)
        self.tick = 0

    def update(self, x_t) -> float:
        self.tick += 1
        self.w = cusum_step(self.w, x_t, self.mu1)
        return float(self.w.max())


class MultiChartCusumDetector(CusumDetector):
    """Top-``eta`` sum of per-node CuSum charts."""

    def __init__(self, n: int, eta: int, mu1: float = 1.0):
        super().__init__(n, mu1)
        if not 1 <= eta <= n:
            raise ValueError("need 1 <= eta <= n")
        self.eta = eta

    def update(self, x_t) -> float:
        self.tick += 1
        self.w = cusum_step(self.w, x_t, self.mu1)
        return multichart_cusum(self.w, self.eta)


class WindowGlrDetector:
    """Largest per-node windowed GLR; silent until the window fills."""

    def __init__(self, n: int, L: int, sigma_floor: float = DEFAULT_SIGMA_FLOOR):
        self.n = n
        self.L = L
        self.sigma_floor = sigma_floor
        self.buffer: deque[np.ndarray] = deque(maxlen=L)
        self.tick = 0

    def update(self, x_t) -> float | None:
        self.tick += 1
        self.buffer.append(np.asarray(x_t, dtype=float))
        if len(self.buffer) < self.L:
            return None
        table, none = measurement_table(np.column_stack(self.buffer), self.sigma_floor)
        return float(np.max(table - none[:, None]))
