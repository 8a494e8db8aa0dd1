"""Functions of locally bounded variation sampled on a uniform grid.

A :class:`GridFunction` stores node values ``u((start + k) h)``.  Its
Lebesgue-Stieltjes measure is split into point masses sitting exactly on nodes
(``atoms``) and the remaining mass of each cell ``((k-1)h, kh]``, which is
treated as spread uniformly over the cell.  Lattice laws on aligned grids are
carried exactly by the atoms, while absolutely continuous parts are handled
with second-order accuracy.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, GridMismatchError, TailMassWarning

TAIL_WARN = 1e-12
_SPARSE = 16  # below this many nonzeros a convolution is done by shifted adds


@dataclass(frozen=True, eq=False)
class GridFunction:
    h: float
    values: np.ndarray
    atoms: np.ndarray | None = None
    start: int = 0
    origin: float = 0.0
    monotone: bool = False
    tail_mass: float = 0.0
    name: str = field(default="", compare=False)

    def __post_init__(self):
        if not self.h > 0:
            raise DomainError(f"grid step must be positive, got {self.h}")
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 1 or vals.size < 1:
            raise DomainError("values must be a non-empty 1-d array")
        object.__setattr__(self, "values", vals)
        if self.atoms is not None:
            at = np.asarray(self.atoms, dtype=float)
            if at.shape != vals.shape:
                raise DomainError("atoms must match values in shape")
            at = at.copy()
            at[0] = vals[0] - self.origin
            object.__setattr__(self, "atoms", at)
        if self.monotone:
            inc = np.diff(vals, prepend=self.origin)
            if inc.min() < -1e-12 * max(1.0, np.abs(vals).max()):
                raise DomainError("function flagged monotone has decreasing values")

    # ---- construction helpers
    @classmethod
    def sample(cls, f, h: float, T: float, start: int = 0, **kw) -> "GridFunction":
        k = np.arange(start, nodes_to(T, h) + 1)
        return cls(h, np.asarray(f(k * h), dtype=float), start=start, **kw)

    @classmethod
    def heaviside(cls, h: float, n: int, start: int = 0) -> "GridFunction":
        vals = np.where(np.arange(start, start + n) >= 0, 1.0, 0.0)
        atoms = np.zeros(n)
        if start <= 0:
            atoms[-start] = 1.0
        return cls(h, vals, atoms=atoms, start=start, monotone=True, name="heaviside")

    @classmethod
    def identity(cls, h: float, T: float) -> "GridFunction":
        return cls.sample(lambda t: t, h, T, monotone=True, name="id")

    # ---- grid geometry
    @property
    def n(self) -> int:
        return self.values.size

    @property
    def t(self) -> np.ndarray:
        return (self.start + np.arange(self.n)) * self.h

    @property
    def t_end(self) -> float:
        return (self.start + self.n - 1) * self.h

    def index(self, t: float) -> int:
        """Index of the node at ``t`` (must be a node up to rounding)."""
        x = t / self.h - self.start
        k = int(round(x))
        if abs(x - k) > 1e-6:
            raise DomainError(f"t={t} is not a grid node (h={self.h})")
        if not 0 <= k < self.n:
            raise DomainError(f"t={t} outside grid [{self.start * self.h}, {self.t_end}]")
        return k

    # ---- measure view
    def increments(self) -> np.ndarray:
        return np.diff(self.values, prepend=self.origin)

    def parts(self) -> tuple[np.ndarray, np.ndarray]:
        """(atoms, cell masses); the first increment is always an atom."""
        inc = self.increments()
        if self.atoms is None:
            atoms = np.zeros_like(inc)
            atoms[0] = inc[0]
        else:
            atoms = self.atoms
        cells = inc - atoms
        cells[0] = 0.0
        return atoms, cells

    def __call__(self, t):
        """Evaluate at arbitrary ``t``: exact at nodes, linear in the diffuse part of a cell."""
        t = np.asarray(t, dtype=float)
        x = t / self.h - self.start
        k = np.floor(x + 1e-9).astype(np.int64)
        if np.any(k > self.n - 1) or np.any((k == self.n - 1) & (x - k > 1e-9)):
            raise DomainError(f"evaluation point beyond grid end {self.t_end}")
        below = k < 0
        kc = np.clip(k, 0, self.n - 1)
        frac = np.clip(x - kc, 0.0, 1.0)
        _, cells = self.parts()
        nxt = np.minimum(kc + 1, self.n - 1)
        out = self.values[kc] + np.where(kc + 1 < self.n, cells[nxt] * frac, 0.0)
        out = np.where(below, self.origin, out)
        return out if out.ndim else float(out)

    def at(self, t: float) -> float:
        return float(self.values[self.index(t)])

    def __eq__(self, other):
        if not isinstance(other, GridFunction):
            return NotImplemented
        if (self.h, self.start, self.origin, self.n) != (other.h, other.start, other.origin, other.n):
            return False
        a1, _ = self.parts()
        a2, _ = other.parts()
        return bool(np.array_equal(self.values, other.values) and np.array_equal(a1, a2))

    __hash__ = None

    def to_csv(self, path) -> None:
        with open(path, "w", newline="\n") as fh:
            fh.write("t,value\n")
            for t, v in zip(self.t, self.values):
                fh.write(f"{t:.17g},{v:.17g}\n")


def nodes_to(T: float, h: float) -> int:
    """Index of the last node not beyond ``T``."""
    return int(np.floor(T / h + 1e-9))


def _same_step(u: GridFunction, v: GridFunction) -> None:
    if not np.isclose(u.h, v.h, rtol=1e-12, atol=0.0):
        raise GridMismatchError(f"grid steps differ: {u.h} vs {v.h}")


def _conv(x: np.ndarray, y: np.ndarray, N: int) -> np.ndarray:
    """First N coefficients of the full discrete convolution of x and y."""
    x, y = x[:N], y[:N]
    out = np.zeros(N)
    nzx, nzy = np.flatnonzero(x), np.flatnonzero(y)
    if nzx.size == 0 or nzy.size == 0:
        return out
    if nzy.size < nzx.size:
        x, y, nzx = y, x, nzy
    if nzx.size <= _SPARSE:
        for i in nzx:
            out[i:] += x[i] * y[: N - i]
        return out
    full = np.convolve(x, y)
    out[: min(N, full.size)] = full[:N]
    return out


def _measure_product(au, cu, av, cv, N):
    """Atoms and cell masses of the convolution of two grid measures, N nodes."""
    atoms = _conv(au, av, N)
    cc = _conv(cu, cv, N + 1)
    # two uniform cells i, j give a symmetric triangle over cells i+j-1 and i+j
    cells = _conv(au, cv, N) + _conv(cu, av, N) + 0.5 * (cc[:N] + cc[1 : N + 1])
    return atoms, cells


def _warn_tail(*fs: GridFunction) -> None:
    for f in fs:
        if f.tail_mass > TAIL_WARN:
            warnings.warn(
                f"{f.name or 'input'} has mass {f.tail_mass:.3g} beyond the grid end",
                TailMassWarning,
                stacklevel=3,
            )


def stieltjes_convolve(u: GridFunction, v: GridFunction) -> GridFunction:
    """``w(t) = int_{[0,t]} u(t - y) dv(y)`` on the common grid.

    The result starts at ``u.start + v.start`` and has ``min(u.n, v.n)`` nodes,
    i.e. it is known exactly as far as both inputs allow.
    """
    _same_step(u, v)
    if u.origin != 0.0:
        raise DomainError("the left factor must vanish below its grid start")
    _warn_tail(u, v)
    N = min(u.n, v.n)
    au, cu = u.parts()
    av, cv = v.parts()
    atoms, cells = _measure_product(au, cu, av, cv, N)
    values = np.cumsum(atoms + cells)
    return GridFunction(
        u.h, values, atoms=atoms, start=u.start + v.start,
        monotone=u.monotone and v.monotone,
    )


def convolution_powers(v: GridFunction, jmax: int) -> list[GridFunction]:
    """``[v, v*v, ..., v^{*jmax}]`` by left fold, keeping every intermediate."""
    if jmax < 1:
        raise DomainError("jmax must be >= 1")
    out = [v]
    for _ in range(jmax - 1):
        out.append(stieltjes_convolve(out[-1], v))
    return out


def convolution_power(v: GridFunction, j: int) -> GridFunction:
    if j < 0:
        raise DomainError("convolution power must be nonnegative")
    if j == 0:
        return GridFunction.heaviside(v.h, v.n)
    if j == 1:
        return GridFunction(v.h, v.values.copy(), atoms=v.parts()[0], start=v.start,
                            origin=v.origin, monotone=v.monotone)
    return convolution_powers(v, j)[-1]


def total_variation(u: GridFunction, lo: float, hi: float) -> float:
    """Total variation of ``u`` over ``(lo, hi]``, atoms and diffuse mass counted separately."""
    if lo > hi:
        raise DomainError("lo must not exceed hi")
    t0 = u.start * u.h
    if lo < t0 - 1e-9 * u.h:
        # below the grid only the jump from `origin` at the first node is possible
        k_lo = -1
    else:
        k_lo = u.index(lo)
    k_hi = u.index(hi)
    atoms, cells = u.parts()
    sl = slice(k_lo + 1, k_hi + 1)
    return float(np.abs(atoms[sl]).sum() + np.abs(cells[sl]).sum())


def convolve_dri(f: GridFunction, v: GridFunction, t: float) -> float:
    """``sum_{y_i <= t} f(t - y_i) dv(y_i)`` over the nodes of ``v``."""
    _same_step(f, v)
    k = v.index(t)
    inc = v.increments()[: k + 1]
    lag = v.t[: k + 1]
    x = t - lag
    fx = np.zeros_like(x)
    inside = x <= f.t_end + 1e-9 * f.h
    fx[inside] = f(x[inside])
    return float(np.dot(fx, inc))
