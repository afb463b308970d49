"""Log-likelihoods of a candidate change-point vector over a sliding window.

The total is the propagation part (failure-time density under the diffusion
model) plus the measurement part (Gaussian with MLE post-change mean and
variance). Additive constants are kept, so the pieces match the textbook
Gaussian log-density exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .topology import Graph, InfluenceMatrix

LOG_2PI = math.log(2.0 * math.pi)
DEFAULT_SIGMA_FLOOR = 0.1


@dataclass(frozen=True)
class WindowView:
    """N x L slice of a panel; column ``c`` is absolute tick ``origin + c``."""

    data: np.ndarray
    origin: int

    def __post_init__(self) -> None:
        data = np.asarray(self.data, dtype=float)
        if data.ndim != 2 or data.shape[1] < 2:
            raise ValueError("window must be N x L with L >= 2")
        if not np.all(np.isfinite(data)):
            raise ValueError("window contains non-finite values")
        object.__setattr__(self, "data", data)

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def length(self) -> int:
        return self.data.shape[1]

    @property
    def end(self) -> int:
        """Absolute tick of the last column (the current time T)."""
        return self.origin + self.length - 1

    def column(self, tick: float) -> int | None:
        """Column index of an absolute tick; None for inf."""
        if math.isinf(tick):
            return None
        c = int(tick) - self.origin
        if not 0 <= c < self.length or c != tick - self.origin:
            raise ValueError(f"tick {tick} outside window [{self.origin}, {self.end}]")
        return c


@dataclass(frozen=True)
class NodeMle:
    mu_hat: float
    sigma_hat: float
    n_post: int


def propagation_loglik(graph: Graph, alpha: InfluenceMatrix, tau: np.ndarray, T: float) -> float:
    """Log-density of failure times ``tau`` on ``[0, T]`` under the diffusion model.

    Failed nodes other than the earliest contribute log-hazard minus
    integrated hazard; unfailed nodes contribute the survival term up to T.
    Returns -inf if a failed non-first node has no strictly earlier failed
    neighbour. Only a single earliest node is exempt; a tie at the minimum
    therefore yields -inf.
    """
    tau = np.asarray(tau, dtype=float)
    failed = np.nonzero(tau <= T)[0]
    if failed.size == 0:
        return 0.0
    first = int(failed[np.argmin(tau[failed])])
    total = 0.0
    for i in range(graph.n):
        nbrs = graph.neighbors[i]
        if tau[i] <= T:
            if i == first:
                continue
            rate = sum(alpha(j, i) for j in nbrs if tau[j] < tau[i])
            if rate <= 0:
                return -math.inf
            total += math.log(rate) - sum(alpha(j, i) * max(tau[i] - tau[j], 0.0) for j in nbrs)
        else:
            total -= sum(alpha(j, i) * max(T - tau[j], 0.0) for j in nbrs)
    return total


def post_change_mle(row: np.ndarray, change_at: int | None, sigma_floor: float = DEFAULT_SIGMA_FLOOR) -> NodeMle:
    """MLE of the post-change mean and std from column ``change_at`` onward.

    ``change_at=None`` (no change in the window) returns a sentinel with
    ``n_post == 0``.
    """
    if change_at is None:
        return NodeMle(0.0, 1.0, 0)
    seg = np.asarray(row, dtype=float)[change_at:]
    mu = float(seg.mean())
    sd = float(np.sqrt(np.mean((seg - mu) ** 2)))
    return NodeMle(mu, max(sd, sigma_floor), seg.size)


def measurement_loglik_node(row: np.ndarray, change_at: int | None, sigma_floor: float = DEFAULT_SIGMA_FLOOR) -> float:
    """Gaussian log-likelihood of one node's window row given its change column."""
    row = np.asarray(row, dtype=float)
    L = row.size
    k = L if change_at is None else change_at
    pre = -0.5 * float(np.sum(row[:k] ** 2))
    mle = post_change_mle(row, change_at, sigma_floor)
    if mle.n_post == 0:
        return pre - 0.5 * L * LOG_2PI
    resid = row[k:] - mle.mu_hat
    post = -float(np.sum(resid**2)) / (2.0 * mle.sigma_hat**2)
    return pre + post - 0.5 * L * LOG_2PI - mle.n_post * math.log(mle.sigma_hat)


def null_loglik(data: np.ndarray) -> float:
    """Log-likelihood of the window with no change anywhere (standard normal)."""
    data = np.asarray(data, dtype=float)
    return -0.5 * float(np.sum(data**2)) - 0.5 * data.size * LOG_2PI


def measurement_table(data: np.ndarray, sigma_floor: float = DEFAULT_SIGMA_FLOOR) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized per-node measurement log-likelihoods.

    Returns ``(table, no_change)`` where ``table[i, c]`` is the node-i value
    with its change at column c and ``no_change[i]`` the value with no change.
    """
    x = np.asarray(data, dtype=float)
    n, L = x.shape
    sq = x**2
    # suffix sums: s1[:, c] = sum_{t >= c} x, s2 likewise for x^2
    s1 = np.cumsum(x[:, ::-1], axis=1)[:, ::-1]
    s2 = np.cumsum(sq[:, ::-1], axis=1)[:, ::-1]
    npost = np.arange(L, 0, -1, dtype=float)
    mu = s1 / npost
    # centred sum of squares of the suffix; clip rounding noise
    css = np.maximum(s2 - s1 * mu, 0.0)
    sd = np.maximum(np.sqrt(css / npost), sigma_floor)
    pre = -0.5 * (np.sum(sq, axis=1, keepdims=True) - s2)
    table = pre - css / (2.0 * sd**2) - 0.5 * L * LOG_2PI - npost * np.log(sd)
    no_change = -0.5 * np.sum(sq, axis=1) - 0.5 * L * LOG_2PI
    return table, no_change


def total_loglik(
    graph: Graph,
    alpha: InfluenceMatrix,
    tau: np.ndarray,
    window: WindowView,
    sigma_floor: float = DEFAULT_SIGMA_FLOOR,
) -> float:
    """Propagation plus measurement log-likelihood of ``tau`` (absolute ticks)."""
    tau = np.asarray(tau, dtype=float)
    prop = propagation_loglik(graph, alpha, tau, window.end)
    if prop == -math.inf:
        return -math.inf
    meas = sum(
        measurement_loglik_node(window.data[i], window.column(tau[i]), sigma_floor)
        for i in range(window.n)
    )
    return prop + meas
