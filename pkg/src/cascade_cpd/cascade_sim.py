"""Failure cascades under the exponential diffusion model, plus Gaussian measurements."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import TextIO

import numpy as np

from .topology import Graph, InfluenceMatrix


@dataclass(frozen=True)
class PostChangeParams:
    """Per-node post-change mean and standard deviation."""

    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self) -> None:
        mu = np.atleast_1d(np.asarray(self.mu, dtype=float))
        sigma = np.atleast_1d(np.asarray(self.sigma, dtype=float))
        mu, sigma = np.broadcast_arrays(mu, sigma)
        if np.any(sigma <= 0):
            raise ValueError("post-change sigma must be positive")
        object.__setattr__(self, "mu", mu.copy())
        object.__setattr__(self, "sigma", sigma.copy())

    @classmethod
    def uniform(cls, n: int, mu: float = 1.0, sigma: float = 1.0) -> PostChangeParams:
        return cls(np.full(n, mu), np.full(n, sigma))


def hazard(graph: Graph, alpha: InfluenceMatrix, tau: np.ndarray, i: int, t: float) -> float:
    """Conditional failure rate of node ``i`` at time ``t`` given failure times ``tau``."""
    if not 0 <= i < graph.n:
        raise IndexError(f"node {i} out of range")
    tau = np.asarray(tau, dtype=float)
    if not tau.min() < t or tau[i] < t:
        return 0.0
    return float(sum(alpha(j, i) for j in graph.neighbors[i] if tau[j] < t))


def sample_cascade(
    graph: Graph,
    alpha: InfluenceMatrix,
    seed_node: int,
    seed_time: float,
    horizon: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """Draw failure times by competing exponential clocks.

    Between consecutive failures every unfailed node carries a constant
    hazard, so the next failure is exponential in the total rate and the
    failing node is picked in proportion to its own rate.
    """
    if not 0 <= seed_node < graph.n:
        raise IndexError(f"seed node {seed_node} out of range")
    if not seed_time < horizon:
        raise ValueError("seed_time must precede the horizon")
    tau = np.full(graph.n, np.inf)
    tau[seed_node] = seed_time
    rate = alpha.rates[seed_node].copy()
    rate[seed_node] = 0.0
    now = seed_time
    while True:
        total = rate.sum()
        if total <= 0:
            break
        now += rng.exponential(1.0 / total)
        if now >= horizon:
            break
        node = int(rng.choice(graph.n, p=rate / total))
        tau[node] = now
        rate += alpha.rates[node]
        rate[np.isfinite(tau)] = 0.0
    return tau


def change_ticks(tau: np.ndarray) -> np.ndarray:
    """First affected integer tick for each node (``ceil(tau)``); inf stays inf."""
    tau = np.asarray(tau, dtype=float)
    return np.where(np.isfinite(tau), np.ceil(tau), np.inf)


def gen_measurements(
    tau: np.ndarray,
    params: PostChangeParams,
    T: int,
    rng: np.random.Generator,
    start: int = 1,
) -> np.ndarray:
    """N x T panel; column ``c`` holds tick ``start + c``.

    A node is post-change from tick ``ceil(tau_i)`` on.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    ticks = change_ticks(tau)
    n = ticks.shape[0]
    z = rng.standard_normal((n, T))
    grid = np.arange(start, start + T)
    post = grid[None, :] >= ticks[:, None]
    mu = np.broadcast_to(params.mu, (n,))[:, None]
    sigma = np.broadcast_to(params.sigma, (n,))[:, None]
    return np.where(post, mu + sigma * z, z)


def write_cascade_csv(tau: np.ndarray, out: TextIO) -> None:
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["node", "tau"])
    for k, v in enumerate(tau):
        w.writerow([k + 1, "inf" if math.isinf(v) else repr(float(v))])


def read_cascade_csv(src: TextIO) -> np.ndarray:
    rows = list(csv.DictReader(src))
    tau = np.full(len(rows), np.inf)
    for r in rows:
        tau[int(r["node"]) - 1] = float(r["tau"])
    return tau


def write_panel_csv(x: np.ndarray, out: TextIO, start: int = 1) -> None:
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["t"] + [f"x_{k + 1}" for k in range(x.shape[0])])
    for c in range(x.shape[1]):
        w.writerow([start + c] + [repr(float(v)) for v in x[:, c]])


def read_panel_csv(src: TextIO) -> tuple[np.ndarray, np.ndarray]:
    """Returns ``(ticks, panel)`` with panel shaped N x T."""
    reader = csv.reader(src)
    header = next(reader)
    if not header or header[0] != "t":
        raise ValueError("panel CSV must start with a 't' column")
    ticks, cols = [], []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise ValueError(f"line {lineno}: expected {len(header)} fields, got {len(row)}")
        ticks.append(int(row[0]))
        cols.append([float(v) for v in row[1:]])
    return np.asarray(ticks, dtype=np.int64), np.asarray(cols, dtype=float).T.reshape(len(header) - 1, -1)
