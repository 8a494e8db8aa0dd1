"""Monte Carlo simulation of the branching tree confined to [0, t].

Every individual carries a 64-bit key. The (xi, eta) pair behind its i-th
child and the child's own key are hashes of (key, i), so a tree is a pure
function of its root key: nested horizons, depth-limited runs, the height
search and the leftmost-birth search all walk the same tree. The hot loops
are compiled with numba.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from . import rng as _rng
from .dist import JointStepModel
from .errors import DomainError

MAX_NODES = 10**8
BATCH = 2048

# marginal kinds understood by the kernels
_EXP, _DET, _UNIF, _PARETO = 0, 1, 2, 3
_INDEP, _COMONO, _GEM = 0, 1, 2

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_XI, _ETA, _CHILD = _rng.XI, _rng.ETA, _rng.CHILD


def kernel_spec(model: JointStepModel) -> np.ndarray:
    """Flatten a model into [coupling, xi kind, p0, p1, eta kind, p0, p1]."""
    def enc(m):
        name = type(m).__name__
        if name == "_Exp":
            return _EXP, m.rate, 0.0
        if name == "_Det":
            return _DET, m.c, 0.0
        if name == "_Uniform":
            return _UNIF, m.a, m.b
        return _PARETO, m.r, m.b

    coup = {"independent": _INDEP, "comonotone": _COMONO, "gem-coupled": _GEM}[model.coupling]
    return np.array([coup, *enc(model.xi), *enc(model.eta)], dtype=np.float64)


# ---- compiled kernels


@njit(cache=True)
def _splitmix(z):
    z = z + _GOLDEN
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


@njit(cache=True)
def _mix(key, i, salt):
    return _splitmix(_splitmix(key ^ salt) + np.uint64(i) * _M2)


@njit(cache=True)
def _unif(bits):
    return (np.float64(bits >> np.uint64(11)) + 0.5) * (1.0 / 9007199254740992.0)


@njit(cache=True)
def _marg(kind, p0, p1, u):
    if kind == 0:
        return -math.log(u) / p0
    if kind == 1:
        return p0
    if kind == 2:
        return p0 + (p1 - p0) * u
    return p1 * u ** (-1.0 / p0)


@njit(cache=True)
def _pair(spec, key, i):
    u1 = _unif(_mix(key, i, _XI))
    if spec[0] == 2.0:
        return -math.log(u1), -math.log1p(-u1)
    u2 = u1 if spec[0] == 1.0 else _unif(_mix(key, i, _ETA))
    return _marg(int(spec[1]), spec[2], spec[3], u1), _marg(int(spec[4]), spec[5], spec[6], u2)


@njit(cache=True)
def _first_generation(spec, key, t, base):
    """Birth times base + S_{i-1} + eta_i <= t of the children of one individual."""
    out = np.empty(16)
    n = 0
    S = 0.0
    i = 0
    while S <= t - base:
        i += 1
        xi, eta = _pair(spec, key, i)
        T = base + (S + eta)
        if T <= t:
            if n == out.size:
                out = np.concatenate((out, np.empty(out.size)))
            out[n] = T
            n += 1
        S += xi
    return out[:n]


@njit(cache=True)
def _grow(spec, root, horizons, jmax, depth, max_nodes):
    """Depth-first walk of the tree up to max(horizons).

    Individuals of generation ``depth`` are not expanded (depth < 0: no limit).
    Returns counts[h, j-1] = N_j(horizons[h]), the deepest generation seen per
    horizon and a truncation flag.
    """
    nh = horizons.size
    tmax = horizons[nh - 1]
    counts = np.zeros((nh, jmax), np.int64)
    deepest = np.zeros(nh, np.int64)
    cap = 256
    keys = np.empty(cap, np.uint64)
    births = np.empty(cap)
    gens = np.empty(cap, np.int64)
    keys[0] = root
    births[0] = 0.0
    gens[0] = 0
    top = 1
    visits = 0
    truncated = False
    while top > 0 and not truncated:
        top -= 1
        k = keys[top]
        b = births[top]
        g = gens[top]
        S = 0.0
        i = 0
        cg = g + 1
        while S <= tmax - b:
            i += 1
            xi, eta = _pair(spec, k, i)
            T = b + (S + eta)
            if T <= tmax:
                visits += 1
                if visits > max_nodes:
                    truncated = True
                    break
                for h in range(nh):
                    if T <= horizons[h]:
                        if cg <= jmax:
                            counts[h, cg - 1] += 1
                        if cg > deepest[h]:
                            deepest[h] = cg
                if depth >= 0 and cg >= depth:
                    S += xi
                    continue
                if top == cap:
                    cap *= 2
                    keys = np.concatenate((keys, np.empty(cap - keys.size, np.uint64)))
                    births = np.concatenate((births, np.empty(cap - births.size)))
                    gens = np.concatenate((gens, np.empty(cap - gens.size, np.int64)))
                keys[top] = _mix(k, i, _CHILD)
                births[top] = T
                gens[top] = cg
                top += 1
            S += xi
    return counts, deepest, truncated


@njit(cache=True)
def _grow_many(spec, roots, horizons, jmax, depth, max_nodes):
    R = roots.size
    counts = np.zeros((R, horizons.size, jmax), np.int64)
    deepest = np.zeros((R, horizons.size), np.int64)
    trunc = np.zeros(R, np.bool_)
    for r in range(R):
        c, d, tr = _grow(spec, roots[r], horizons, jmax, depth, max_nodes)
        counts[r] = c
        deepest[r] = d
        trunc[r] = tr
    return counts, deepest, trunc


@njit(cache=True)
def _leftmost(spec, root, n, eta_min, max_nodes):
    """min birth time over generation n: greedy bound, then branch-and-bound."""
    # greedy: follow the earliest-born child n times
    k = root
    b = 0.0
    for _ in range(n):
        S = 0.0
        i = 0
        first = math.inf
        pick = 0
        while b + S + eta_min < first:
            i += 1
            xi, eta = _pair(spec, k, i)
            T = b + (S + eta)
            if T < first:
                first = T
                pick = i
            S += xi
        k = _mix(k, pick, _CHILD)
        b = first
    best = b

    cap = 256
    keys = np.empty(cap, np.uint64)
    births = np.empty(cap)
    gens = np.empty(cap, np.int64)
    keys[0] = root
    births[0] = 0.0
    gens[0] = 0
    top = 1
    visits = 0
    # pruning bounds are shrunk slightly so that float rounding never discards a tie
    shrink = 1.0 - 1e-12
    while top > 0:
        top -= 1
        k = keys[top]
        b = births[top]
        g = gens[top]
        rem = n - g
        S = 0.0
        i = 0
        while (b + S + rem * eta_min) * shrink < best:
            i += 1
            xi, eta = _pair(spec, k, i)
            T = b + (S + eta)
            S += xi
            if rem == 1:
                if T < best:
                    best = T
                continue
            if (T + (rem - 1) * eta_min) * shrink >= best:
                continue
            visits += 1
            if visits > max_nodes:
                return best, True
            if top == cap:
                cap *= 2
                keys = np.concatenate((keys, np.empty(cap - keys.size, np.uint64)))
                births = np.concatenate((births, np.empty(cap - births.size)))
                gens = np.concatenate((gens, np.empty(cap - gens.size, np.int64)))
            keys[top] = _mix(k, i, _CHILD)
            births[top] = T
            gens[top] = g + 1
            top += 1
    return best, False


# ---- public API


@dataclass(frozen=True)
class SimConfig:
    model: JointStepModel
    t: float
    jmax: int
    replicas: int = 1
    master_seed: int = 0
    max_nodes: int = MAX_NODES
    track_height: bool = True
    workers: int | None = None

    def __post_init__(self):
        if not self.t >= 0:
            raise DomainError(f"t must be nonnegative, got {self.t}")
        if self.jmax < 1:
            raise DomainError("jmax must be >= 1")
        if self.replicas < 1:
            raise DomainError("replicas must be >= 1")
        if self.max_nodes < 1:
            raise DomainError("max_nodes must be >= 1")


@dataclass
class SimResult:
    counts: np.ndarray  # replicas x jmax, column j-1 holds N_j(t)
    heights: np.ndarray | None  # H(t) per replica, None when heights were not tracked
    truncated_flags: np.ndarray
    seed_trace: dict = field(default_factory=dict)

    @property
    def truncated(self) -> bool:
        return bool(self.truncated_flags.any())

    @property
    def replicas(self) -> int:
        return self.counts.shape[0]


def _root(rng) -> int:
    return _rng.key_from(rng)


def simulate_prw_points(model: JointStepModel, t: float, rng=None) -> list[float]:
    """The first generation T_i = S_{i-1} + eta_i with T_i <= t."""
    if not t >= 0:
        raise DomainError(f"t must be nonnegative, got {t}")
    pts = _first_generation(kernel_spec(model), np.uint64(_root(rng)), float(t), 0.0)
    return sorted(float(x) for x in pts)


def coupled_counts(model: JointStepModel, horizons, jmax: int, roots, depth: int | None = None,
                   max_nodes: int = MAX_NODES):
    """Counts and deepest generations for every root key at several nested horizons.

    Returns (counts[R, H, jmax], deepest[R, H], truncated[R]); ``depth=None``
    expands the tree fully (needed for heights), otherwise only up to
    generation ``depth``.
    """
    hz = np.sort(np.asarray(horizons, dtype=float).ravel())
    if hz.size == 0 or hz[0] < 0:
        raise DomainError("horizons must be nonnegative and nonempty")
    roots = np.asarray(roots, dtype=np.uint64).ravel()
    d = -1 if depth is None else int(depth)
    return _grow_many(kernel_spec(model), roots, hz, int(jmax), d, int(max_nodes))


def simulate_generations(model: JointStepModel, t: float, jmax: int, rng=None,
                         max_nodes: int = MAX_NODES, track_height: bool = True):
    """(counts, height, truncated) for one tree; counts[j-1] = N_j(t)."""
    if jmax < 1:
        raise DomainError("jmax must be >= 1")
    if not t >= 0:
        raise DomainError(f"t must be nonnegative, got {t}")
    c, d, tr = coupled_counts(model, [t], jmax, [_root(rng)], None if track_height else jmax, max_nodes)
    height = int(d[0, 0]) + 1 if track_height else None
    return c[0, 0], height, bool(tr[0])


def _ensemble_chunk(args):
    model, t, jmax, roots, depth, max_nodes = args
    c, d, tr = coupled_counts(model, [t], jmax, roots, depth, max_nodes)
    return c[:, 0, :], d[:, 0], tr


def _workers(cfg: SimConfig) -> int:
    w = cfg.workers
    env = os.environ.get("PRWLAB_THREADS")
    if w is None:
        w = int(env) if env else 1
    elif env:
        w = min(w, int(env))
    return max(1, w)


def simulate_ensemble(cfg: SimConfig) -> SimResult:
    """Replica r uses the tree rooted at tree_key(master_seed, r); output is independent of workers."""
    roots = np.array([_rng.tree_key(cfg.master_seed, r) for r in range(cfg.replicas)], dtype=np.uint64)
    depth = None if cfg.track_height else cfg.jmax
    chunks = [(cfg.model, cfg.t, cfg.jmax, roots[i : i + BATCH], depth, cfg.max_nodes)
              for i in range(0, roots.size, BATCH)]
    w = _workers(cfg)
    if w > 1 and len(chunks) > 1:
        with ProcessPoolExecutor(max_workers=w) as ex:
            parts = list(ex.map(_ensemble_chunk, chunks))
    else:
        parts = [_ensemble_chunk(c) for c in chunks]
    counts = np.concatenate([p[0] for p in parts])
    deepest = np.concatenate([p[1] for p in parts])
    trunc = np.concatenate([p[2] for p in parts])
    trace = {"master_seed": int(cfg.master_seed), "derivation": "SeedSequence(master_seed, spawn_key=(r, tree))",
             "root_keys": roots}
    return SimResult(counts, deepest + 1 if cfg.track_height else None, trunc, trace)


def leftmost_birth(model: JointStepModel, n: int, rng=None, max_nodes: int = MAX_NODES):
    """(B(n), truncated): the earliest birth time in generation n.

    When the node cap is hit the best bound found so far is returned with
    truncated=True; it is then an upper bound for B(n).
    """
    if n < 1:
        raise DomainError("generation index must be >= 1")
    eta_min = float(getattr(model.eta, "ess_inf", 0.0))
    best, tr = _leftmost(kernel_spec(model), np.uint64(_root(rng)), int(n), eta_min, int(max_nodes))
    return float(best), bool(tr)


def clt_statistic(result: SimResult, tables, j: int, t: float, s2: float, m: float) -> np.ndarray:
    """sqrt(j) (j-1)! (N_j(t) - V_j(t)) / sqrt(s2 m^(-2j-1) t^(2j-1)), one value per replica."""
    if not s2 > 0:
        raise DomainError("s2 must be positive")
    if not 1 <= j <= result.counts.shape[1]:
        raise DomainError(f"no simulated counts for generation {j}")
    v = tables.V_at(j, t)
    log_scale = 0.5 * math.log(j) + math.lgamma(j) - 0.5 * (math.log(s2) - (2 * j + 1) * math.log(m)
                                                           + (2 * j - 1) * math.log(t))
    return (result.counts[:, j - 1] - v) * math.exp(log_scale)
