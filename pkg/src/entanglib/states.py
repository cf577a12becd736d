"""Random, structured and stratified bipartite state generation."""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .qcore import DensityMatrix, StateError

log = logging.getLogger(__name__)

ENSEMBLES = ("ginibre-full-rank", "ginibre-rank-k", "pure", "separable-mixture")


@dataclass(frozen=True)
class SamplerConfig:
    """How raw states are drawn.

    For ``ginibre-rank-k`` a ``rank`` of None draws the rank uniformly from
    1..d^2 on every sample, which spreads the spectrum widely.
    For ``separable-mixture`` a ``num_product_terms`` of None draws the term
    count uniformly from 1..2d^2.
    """

    seed: int = 0
    ensemble: str = "ginibre-full-rank"
    dim: int = 3
    rank: int | None = None
    num_product_terms: int | None = None

    def __post_init__(self):
        if self.ensemble not in ENSEMBLES:
            raise ValueError(f"unknown ensemble {self.ensemble!r}")
        if self.dim < 2:
            raise ValueError("dim must be >= 2")
        if self.rank is not None and not 1 <= self.rank <= self.dim**2:
            raise ValueError(f"rank must lie in [1, {self.dim ** 2}]")
        if self.num_product_terms is not None and self.num_product_terms < 1:
            raise ValueError("num_product_terms must be >= 1")


@dataclass(frozen=True)
class StratificationSpec:
    measure: str
    lower: float
    upper: float
    bin_width: float
    per_bin: int
    max_attempts_per_bin: int = 1_000_000

    def __post_init__(self):
        if not self.upper > self.lower:
            raise ValueError("upper must exceed lower")
        if self.bin_width <= 0 or self.per_bin < 1 or self.max_attempts_per_bin < 1:
            raise ValueError("bin_width, per_bin and max_attempts_per_bin must be positive")

    @property
    def n_bins(self) -> int:
        # guard against (upper-lower)/w landing a hair above an integer
        return int(math.ceil((self.upper - self.lower) / self.bin_width - 1e-9))

    def edges(self) -> np.ndarray:
        e = self.lower + self.bin_width * np.arange(self.n_bins + 1)
        e[-1] = self.upper
        return e

    def bin_of(self, value: float) -> int | None:
        """Half-open bins except the last, which is closed at ``upper``."""
        if not self.lower <= value <= self.upper:
            return None
        e = self.edges()
        i = int(np.searchsorted(e, value, side="right")) - 1
        return min(i, self.n_bins - 1)


def rng_stream(seed: int, *keys: int) -> np.random.Generator:
    """Independent generator for (master seed, worker keys...)."""
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in keys)))


def ginibre(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    return (rng.standard_normal((rows, cols)) + 1j * rng.standard_normal((rows, cols))) / math.sqrt(2)


def _hs_state(rng: np.random.Generator, n: int, k: int) -> np.ndarray:
    g = ginibre(rng, n, k)
    m = g @ g.conj().T
    m = 0.5 * (m + m.conj().T)
    return m / np.trace(m).real


def _random_ket(rng: np.random.Generator, n: int) -> np.ndarray:
    v = ginibre(rng, n, 1)[:, 0]
    return v / np.linalg.norm(v)


def sample_ginibre(cfg: SamplerConfig, rng: np.random.Generator) -> DensityMatrix:
    """Hilbert-Schmidt (or induced rank-k) random state on d x d."""
    n = cfg.dim**2
    if cfg.ensemble == "pure":
        k = 1
    elif cfg.ensemble == "ginibre-full-rank":
        k = n
    elif cfg.ensemble == "ginibre-rank-k":
        k = cfg.rank if cfg.rank is not None else int(rng.integers(1, n + 1))
    elif cfg.ensemble == "separable-mixture":
        return sample_separable(cfg, rng)
    else:  # pragma: no cover - guarded by SamplerConfig
        raise ValueError(cfg.ensemble)
    if k == 1:
        v = _random_ket(rng, n)
        m = np.outer(v, v.conj())
    else:
        m = _hs_state(rng, n, k)
    return DensityMatrix(m, cfg.dim, cfg.dim, validate=False)


def max_entangled_ket(d: int) -> np.ndarray:
    v = np.zeros(d * d, dtype=complex)
    v[np.arange(d) * (d + 1)] = 1 / math.sqrt(d)
    return v


def maximally_entangled(d: int) -> DensityMatrix:
    if d < 2:
        raise ValueError("dimension must be >= 2")
    v = max_entangled_ket(d)
    return DensityMatrix(np.outer(v, v.conj()), d, d)


def _check_eps(eps: float) -> None:
    if not 0.0 <= eps <= 1.0:
        raise ValueError(f"eps must lie in [0, 1], got {eps!r}")


def isotropic(d: int, eps: float) -> DensityMatrix:
    _check_eps(eps)
    psi = maximally_entangled(d).matrix
    return DensityMatrix((1 - eps) * np.eye(d * d) / d**2 + eps * psi, d, d)


def noisy_me_family(d: int, eps: float, rho0: DensityMatrix) -> DensityMatrix:
    """(1-eps) rho0 + eps |psi+><psi+|."""
    _check_eps(eps)
    if rho0.dim_a != d or rho0.dim_b != d:
        raise StateError(f"rho0 lives on {rho0.dim_a}x{rho0.dim_b}, expected {d}x{d}")
    psi = maximally_entangled(d).matrix
    return DensityMatrix((1 - eps) * rho0.matrix + eps * psi, d, d)


class SeparableState(DensityMatrix):
    """Density matrix built as sum_i p_i sigma_i^A (x) sigma_i^B.

    ``weights`` and the factor arrays keep the decomposition so the state is
    separable by construction.
    """

    __slots__ = ("weights", "factors_a", "factors_b")
    separable = True

    def __init__(self, weights, factors_a, factors_b):
        weights = np.asarray(weights, dtype=float)
        fa = np.asarray(factors_a, dtype=complex)
        fb = np.asarray(factors_b, dtype=complex)
        m = np.einsum("k,kij,klm->iljm", weights, fa, fb).reshape(fa.shape[1] * fb.shape[1], -1)
        super().__init__(m, fa.shape[1], fb.shape[1])
        self.weights = weights
        self.factors_a = fa
        self.factors_b = fb


def sample_separable(cfg: SamplerConfig, rng: np.random.Generator) -> SeparableState:
    d = cfg.dim
    terms = cfg.num_product_terms or int(rng.integers(1, 2 * d * d + 1))
    weights = rng.dirichlet(np.ones(terms))

    def factor():
        if cfg.rank == 1:
            v = _random_ket(rng, d)
            return np.outer(v, v.conj())
        return _hs_state(rng, d, d)

    fa = np.stack([factor() for _ in range(terms)])
    fb = np.stack([factor() for _ in range(terms)])
    return SeparableState(weights, fa, fb)


@dataclass
class BinReport:
    index: int
    lower: float
    upper: float
    filled: int
    attempts: int

    @property
    def empty(self) -> bool:
        return self.filled == 0


@dataclass
class StratifiedSample:
    per_bin: int
    items: list = field(default_factory=list)  # (DensityMatrix, label, bin index)
    bins: list = field(default_factory=list)  # BinReport per bin

    @property
    def shortfall(self) -> dict[int, int]:
        return {b.index: self.per_bin - b.filled for b in self.bins if b.filled < self.per_bin}

    def report_lines(self) -> list[str]:
        per_bin = self.per_bin
        lines = []
        for b in self.bins:
            flag = "" if b.filled == per_bin else ("  EMPTY" if b.empty else "  SHORT")
            lines.append(
                f"bin {b.index:3d} [{b.lower:+.3f}, {b.upper:+.3f}) "
                f"{b.filled:6d}/{per_bin} after {b.attempts} attempts{flag}"
            )
        return lines


def _fill_bin(args):
    spec, cfg, label_fn, bin_index, stream_keys = args
    edges = spec.edges()
    lo, hi = edges[bin_index], edges[bin_index + 1]
    last = bin_index == spec.n_bins - 1
    rng = rng_stream(cfg.seed, *stream_keys, bin_index)
    d = cfg.dim

    def inside(v):
        return lo <= v < hi or (last and lo <= v <= hi)

    anchors = [maximally_entangled(d).matrix, np.eye(d * d, dtype=complex) / d**2]
    anchor_labels = [label_fn(DensityMatrix(a, d, d, validate=False)) for a in anchors]

    out, attempts = [], 0
    while len(out) < spec.per_bin and attempts < spec.max_attempts_per_bin:
        attempts += 1
        rho0 = sample_ginibre(cfg, rng)
        v0 = label_fn(rho0)
        if inside(v0):
            out.append((rho0, v0, bin_index))
            continue
        # walk toward an anchor on the other side of the bin; by continuity
        # the label crosses every value in between
        target = rng.uniform(lo, hi)
        for a, va in zip(anchors, anchor_labels):
            if (va < target) != (v0 < target):
                break
        else:
            continue
        e_lo, e_hi = 0.0, 1.0
        for _ in range(60):
            eps = 0.5 * (e_lo + e_hi)
            m = (1 - eps) * rho0.matrix + eps * a
            rho = DensityMatrix(m, d, d, validate=False)
            v = label_fn(rho)
            if inside(v):
                out.append((DensityMatrix(m, d, d), v, bin_index))
                break
            if (v < target) == (v0 < target):
                e_lo = eps
            else:
                e_hi = eps
    return out, attempts


def _worker_count(n_tasks: int) -> int:
    env = os.environ.get("ENTANGLIB_THREADS")
    n = int(env) if env else 1
    return max(1, min(n, n_tasks))


def stratified_sample(
    spec: StratificationSpec,
    cfg: SamplerConfig,
    label_fn: Callable[[DensityMatrix], float],
    stream: int = 0,
    workers: int | None = None,
) -> StratifiedSample:
    """Fill every label bin with up to ``spec.per_bin`` states.

    Each bin draws from its own RNG stream keyed on (cfg.seed, stream, bin),
    so the output does not depend on the worker count. Raw draws that miss
    the bin are mixed toward |psi+> or the maximally mixed state, with the
    mixing weight found by bisection; the stored label is always recomputed
    from the final state. ``label_fn`` must be picklable when workers > 1.
    """
    tasks = [(spec, cfg, label_fn, i, (stream,)) for i in range(spec.n_bins)]
    workers = _worker_count(len(tasks)) if workers is None else workers
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_fill_bin, tasks))
    else:
        results = [_fill_bin(t) for t in tasks]
    edges = spec.edges()
    result = StratifiedSample(spec.per_bin)
    for i, (items, attempts) in enumerate(results):
        result.items.extend(items)
        result.bins.append(BinReport(i, float(edges[i]), float(edges[i + 1]), len(items), attempts))
        if not items:
            log.warning("bin %d [%.3f, %.3f) is empty after %d attempts", i, edges[i], edges[i + 1], attempts)
        elif len(items) < spec.per_bin:
            log.warning("bin %d filled %d/%d", i, len(items), spec.per_bin)
    return result
