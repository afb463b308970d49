"""Sliding-window GLR detector for cascading change-points.

The alternative-side maximum is found by a depth-first search over
propagation paths: a first node and tick, then successors drawn from the
risk set of already-failed nodes, each with a thinned set of candidate
ticks. Thinning keeps, per node, the ticks whose single-node measurement
likelihood ranks in the top ``ceil(L(1-q))`` of the window, and stops
scanning later ticks once the path's propagation likelihood drops below
``l1``.

Two engines share the same semantics: ``"compiled"`` (numba) for speed and
``"python"``, a direct recursive implementation used as a reference.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterable, Literal

import numpy as np

from . import _kernel
from .likelihood import DEFAULT_SIGMA_FLOOR, WindowView, measurement_table
from .topology import Graph, InfluenceMatrix, adjacency_csr

Side = Literal["alternative", "null"]
Engine = Literal["compiled", "python"]


@dataclass(frozen=True)
class DetectorConfig:
    L: int = 100
    m: int = 5
    P: int = 1
    q: float = 0.8
    l1: float = math.exp(-5)
    eta: int = 1
    b: float = math.inf
    sigma_floor: float = DEFAULT_SIGMA_FLOOR

    def __post_init__(self) -> None:
        if self.L < 2:
            raise ValueError("window length L must be >= 2")
        if self.P < 1:
            raise ValueError("P must be >= 1")
        if not 1 <= self.eta <= self.m:
            raise ValueError("need 1 <= eta <= m")
        if not 0 <= self.q < 1:
            raise ValueError("q must lie in [0, 1)")
        if not 0 <= self.l1 <= 1:
            raise ValueError("l1 must lie in [0, 1]")
        if not self.sigma_floor > 0:
            raise ValueError("sigma_floor must be positive")

    def check_graph(self, n: int) -> None:
        if self.m > n:
            raise ValueError(f"m={self.m} exceeds node count {n}")

    @property
    def n_candidates(self) -> int:
        """Per-node tick budget ``ceil(L(1-q))`` after percentile thinning."""
        return max(1, math.ceil(round(self.L * (1.0 - self.q), 9)))

    def replace(self, **changes) -> DetectorConfig:
        return DetectorConfig(**{**asdict(self), **changes})

    @classmethod
    def from_mapping(cls, mapping: dict) -> DetectorConfig:
        names = {f.name: f.type for f in fields(cls)}
        unknown = set(mapping) - set(names)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        ints = {"L", "m", "P", "eta"}
        return cls(**{k: (int(v) if k in ints else float(v)) for k, v in mapping.items()})

    @classmethod
    def from_text(cls, text: str) -> DetectorConfig:
        """JSON object or ``key=value`` lines (``#`` comments)."""
        stripped = text.strip()
        if stripped.startswith("{"):
            return cls.from_mapping(json.loads(stripped))
        mapping = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"config line {lineno}: expected key=value")
            k, v = line.split("=", 1)
            mapping[k.strip()] = v.strip()
        return cls.from_mapping(mapping)

    @classmethod
    def from_file(cls, path: str | Path) -> DetectorConfig:
        return cls.from_text(Path(path).read_text())

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


@dataclass(frozen=True)
class PathHypothesis:
    """Nodes in failure order with their absolute change ticks."""

    nodes: tuple[int, ...]
    ticks: tuple[int, ...]
    loglik: float


@dataclass(frozen=True)
class SearchResult:
    best_loglik: float
    best_path: PathHypothesis
    best_tau: np.ndarray = field(repr=False)


class SearchContext:
    """Per-window quantities shared by every hypothesis in one search."""

    def __init__(self, alpha: InfluenceMatrix, window: WindowView, config: DetectorConfig):
        self.alpha = alpha
        self.window = window
        self.config = config
        table, no_change = measurement_table(window.data, config.sigma_floor)
        self.gain = table - no_change[:, None]
        self.base = float(no_change.sum())
        self.T = window.length - 1
        k = min(config.n_candidates, window.length)
        order = np.argsort(-table, axis=1, kind="stable")[:, :k]
        self.cand = np.sort(order, axis=1).astype(np.int64)
        self.ncand = np.full(window.n, k, dtype=np.int64)
        self.log_l1 = math.log(config.l1) if config.l1 > 0 else -math.inf

    def tau_vector(self, nodes: Iterable[int], cols: Iterable[int]) -> np.ndarray:
        """Absolute-tick failure vector with inf for nodes off the path."""
        tau = np.full(self.window.n, np.inf)
        for x, c in zip(nodes, cols):
            tau[x] = self.window.origin + c
        return tau

    def evaluate(self, nodes: tuple[int, ...], cols: tuple[int, ...]) -> float:
        """Total log-likelihood of a path, from scratch."""
        rates = self.alpha.rates
        n = self.window.n
        tau = np.full(n, np.inf)
        for x, c in zip(nodes, cols):
            tau[x] = c
        # propagation part on window-relative columns; differences are shift invariant
        prop = _dense_propagation_loglik(rates, tau, self.T)
        if prop == -math.inf:
            return -math.inf
        return self.base + float(sum(self.gain[x, c] for x, c in zip(nodes, cols))) + prop


def _dense_propagation_loglik(rates: np.ndarray, tau: np.ndarray, T: float) -> float:
    failed = np.nonzero(tau <= T)[0]
    if failed.size == 0:
        return 0.0
    first = int(failed[np.argmin(tau[failed])])
    total = 0.0
    for i in range(rates.shape[0]):
        if tau[i] <= T:
            if i == first:
                continue
            rate = float(rates[tau < tau[i], i].sum())
            if rate <= 0:
                return -math.inf
            gaps = np.where(tau < tau[i], tau[i] - tau, 0.0)
            total += math.log(rate) - float(rates[:, i] @ gaps)
        else:
            gaps = np.where(tau <= T, T - tau, 0.0)
            total -= float(rates[:, i] @ gaps)
    return total


def path_density_loglik(rates: np.ndarray, nodes: tuple[int, ...], cols: tuple[int, ...]) -> float:
    """Log-density of the path's own failures (no survival terms for other nodes).

    Nonincreasing in the last appended tick, which is what lets thinning
    stop scanning early.
    """
    total = 0.0
    for k in range(1, len(nodes)):
        x, t = nodes[k], cols[k]
        rate = sum(rates[nodes[f], x] for f in range(k) if cols[f] < t)
        if rate <= 0:
            return -math.inf
        total += math.log(rate) - sum(rates[nodes[f], x] * (t - cols[f]) for f in range(k))
    return total


def thinning(ctx: SearchContext, nodes: tuple[int, ...], cols: tuple[int, ...]) -> dict[int, list[int]]:
    """Candidate columns per node not yet on the path.

    With an empty path only the percentile rule applies. Otherwise ticks
    are scanned upward from the last path tick; a tick equal to the last
    one is tested but never ends the scan.
    """
    keep = [set(ctx.cand[x, : ctx.ncand[x]].tolist()) for x in range(ctx.window.n)]
    if not nodes:
        return {x: sorted(keep[x]) for x in range(ctx.window.n)}
    on_path = set(nodes)
    t_last = cols[-1]
    out: dict[int, list[int]] = {}
    for x in range(ctx.window.n):
        if x in on_path:
            continue
        chosen = []
        for t in range(t_last, ctx.T + 1):
            dens = path_density_loglik(ctx.alpha.rates, nodes + (x,), cols + (t,))
            if dens == -math.inf and t == t_last:
                continue
            if dens < ctx.log_l1 or dens == -math.inf:
                if t == t_last:
                    continue
                break
            if t in keep[x]:
                chosen.append(t)
        out[x] = chosen
    return out


def risk_set(failed: Iterable[int], alpha: InfluenceMatrix) -> tuple[list[int], list[float]]:
    """Unfailed nodes with positive influence from the failed set, and their weights."""
    failed = list(failed)
    fset = set(failed)
    nodes, weights = [], []
    for j in range(alpha.n):
        if j in fset:
            continue
        w = 0.0
        for i in failed:
            w += alpha.rates[i, j]
        if w > 0:
            nodes.append(j)
            weights.append(w)
    return nodes, weights


def sample_risk_set(failed: Iterable[int], alpha: InfluenceMatrix, P: int, rng) -> list[int]:
    """Draw ``min(P, |R|)`` risk-set nodes without replacement.

    Each draw picks a remaining node with probability proportional to its
    total incoming influence from the failed set. ``rng`` needs a
    ``random()`` method returning a uniform float.
    """
    nodes, weights = risk_set(failed, alpha)
    taken = [False] * len(nodes)
    out = []
    for _ in range(min(P, len(nodes))):
        total = 0.0
        last = -1
        for a, w in enumerate(weights):
            if not taken[a]:
                total += w
                last = a
        u = rng.random() * total
        pick, c = last, 0.0
        for a, w in enumerate(weights):
            if taken[a]:
                continue
            c += w
            if u < c:
                pick = a
                break
        taken[pick] = True
        out.append(nodes[pick])
    return out


@dataclass
class _Best:
    value: float = -math.inf
    nodes: tuple[int, ...] = ()
    cols: tuple[int, ...] = ()


def gen_next(
    ctx: SearchContext,
    nodes: tuple[int, ...],
    cols: tuple[int, ...],
    rng,
    min_k: int,
    max_k: int,
    best: _Best,
) -> _Best:
    """Extend a nonempty partial path by one failure and recurse.

    Every extended path is itself scored as a complete hypothesis when its
    length is within ``[min_k, max_k]``.
    """
    if len(nodes) >= max_k:
        return best
    J = thinning(ctx, nodes, cols)
    for x in sample_risk_set(nodes, ctx.alpha, ctx.config.P, rng):
        for t in J.get(x, []):
            nn, cc = nodes + (x,), cols + (t,)
            if len(nn) >= min_k:
                val = ctx.evaluate(nn, cc)
                if val > best.value:
                    best = _Best(val, nn, cc)
            best = gen_next(ctx, nn, cc, rng, min_k, max_k, best)
    return best


def _python_search(ctx: SearchContext, min_k: int, max_k: int, seed: int) -> _Best:
    rng = np.random.RandomState(seed)
    best = _Best()
    J = thinning(ctx, (), ())
    for x in range(ctx.window.n):
        for t in J[x]:
            if min_k <= 1:
                val = ctx.evaluate((x,), (t,))
                if val > best.value:
                    best = _Best(val, (x,), (t,))
            best = gen_next(ctx, (x,), (t,), rng, min_k, max_k, best)
    return best


def _compiled_search(ctx: SearchContext, min_k: int, max_k: int, seed: int) -> _Best:
    indptr, targets, vals = _csr_cache(ctx.alpha)
    val, nodes, cols, k = _kernel.search(
        ctx.gain, ctx.cand, ctx.ncand, ctx.alpha.rates, indptr, targets, vals,
        ctx.config.P, ctx.log_l1, min_k, max_k, seed,
    )
    if k == 0:
        return _Best()
    return _Best(ctx.base + float(val), tuple(int(v) for v in nodes), tuple(int(v) for v in cols))


_CSR: dict[int, tuple[InfluenceMatrix, tuple]] = {}


def _csr_cache(alpha: InfluenceMatrix):
    hit = _CSR.get(id(alpha))
    if hit is None or hit[0] is not alpha:
        if len(_CSR) > 64:
            _CSR.clear()
        hit = (alpha, adjacency_csr(alpha))
        _CSR[id(alpha)] = hit
    return hit[1]


def _result(ctx: SearchContext, best: _Best) -> SearchResult:
    ticks = tuple(ctx.window.origin + c for c in best.cols)
    return SearchResult(
        best.value,
        PathHypothesis(best.nodes, ticks, best.value),
        ctx.tau_vector(best.nodes, best.cols),
    )


def search_max_loglik(
    window: WindowView,
    alpha: InfluenceMatrix,
    config: DetectorConfig,
    side: Side,
    rng: np.random.Generator | int,
    engine: Engine = "compiled",
    ctx: SearchContext | None = None,
) -> SearchResult:
    """Maximum log-likelihood over hypotheses with >= eta changes or <= eta-1 changes.

    ``rng`` may be a Generator (one seed is drawn from it) or an integer seed.
    """
    ctx = ctx or SearchContext(alpha, window, config)
    seed = rng if isinstance(rng, (int, np.integer)) else int(rng.integers(0, 2**32))
    run = _compiled_search if engine == "compiled" else _python_search
    if side == "alternative":
        best = run(ctx, config.eta, config.m, int(seed))
    elif side == "null":
        best = _Best(ctx.base)
        if config.eta > 1:
            found = run(ctx, 1, config.eta - 1, int(seed))
            if found.value > best.value:
                best = found
    else:
        raise ValueError(f"unknown side {side!r}")
    return _result(ctx, best)


@dataclass(frozen=True)
class GlrResult:
    statistic: float
    alternative: SearchResult
    null: SearchResult


def glr_statistic(
    window: WindowView,
    alpha: InfluenceMatrix,
    config: DetectorConfig,
    rng: np.random.Generator | int,
    engine: Engine = "compiled",
) -> GlrResult:
    """Best alternative log-likelihood minus best null log-likelihood."""
    ctx = SearchContext(alpha, window, config)
    if isinstance(rng, (int, np.integer)):
        seeds = np.random.SeedSequence(int(rng)).generate_state(2)
    else:
        seeds = rng.integers(0, 2**32, size=2)
    alt = search_max_loglik(window, alpha, config, "alternative", int(seeds[0]), engine, ctx)
    null = search_max_loglik(window, alpha, config, "null", int(seeds[1]), engine, ctx)
    if alt.best_loglik == -math.inf:
        return GlrResult(-math.inf, alt, null)
    return GlrResult(alt.best_loglik - null.best_loglik, alt, null)


class CascadeDetector:
    """Streaming detector: push one length-N vector per tick."""

    def __init__(self, graph: Graph, alpha: InfluenceMatrix, config: DetectorConfig,
                 rng: np.random.Generator, engine: Engine = "compiled"):
        config.check_graph(graph.n)
        alpha.check_support(graph)
        self.graph = graph
        self.alpha = alpha
        self.config = config
        self.rng = rng
        self.engine = engine
        self.buffer: deque[np.ndarray] = deque(maxlen=config.L)
        self.tick = 0
        self.last: GlrResult | None = None

    def update(self, x_t) -> float | None:
        x_t = np.asarray(x_t, dtype=float)
        if x_t.shape != (self.graph.n,):
            raise ValueError(f"expected {self.graph.n} values per tick, got shape {x_t.shape}")
        self.tick += 1
        self.buffer.append(x_t)
        if len(self.buffer) < self.config.L:
            return None
        window = WindowView(np.column_stack(self.buffer), self.tick - self.config.L + 1)
        self.last = glr_statistic(window, self.alpha, self.config, self.rng, self.engine)
        return self.last.statistic


@dataclass
class StopReport:
    """Alarm tick (inf if censored), the last tick seen, and the statistic trace."""

    gamma: float
    last_tick: int
    trace: list[tuple[int, float]]
    result: GlrResult | None

    @property
    def censored(self) -> bool:
        return math.isinf(self.gamma)


def run_detector(
    stream: Iterable,
    graph: Graph,
    alpha: InfluenceMatrix,
    config: DetectorConfig,
    rng: np.random.Generator,
    engine: Engine = "compiled",
) -> StopReport:
    """Run the Shewhart rule until the statistic exceeds ``config.b``."""
    det = CascadeDetector(graph, alpha, config, rng, engine)
    trace: list[tuple[int, float]] = []
    for x_t in stream:
        s = det.update(x_t)
        if s is None:
            continue
        trace.append((det.tick, s))
        if s > config.b:
            return StopReport(det.tick, det.tick, trace, det.last)
    return StopReport(math.inf, det.tick, trace, None)

