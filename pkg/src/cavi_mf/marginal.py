"""One-dimensional densities on uniform grids, and products of them.

All integrals use the composite trapezoid rule on the node values.  For
optimal transport a grid marginal is read as the measure whose CDF linearly
interpolates the trapezoid CDF at the nodes, so its quantile function is
piecewise linear and W2 between two such measures is integrated exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from . import jsonio
from .errors import (
    BoundaryMass,
    DimensionMismatch,
    NonFiniteLogDensity,
    ParseError,
    UOutOfRange,
)

BOUNDARY_RTOL = 1e-8
ENTROPY_FLOOR = 1e-300
DEFAULT_NODES = 2048
WINDOW_STDS = 12.0


@dataclass(frozen=True)
class GridSpec:
    lo: float
    hi: float
    n_nodes: int

    def __post_init__(self):
        if not (math.isfinite(self.lo) and math.isfinite(self.hi)):
            raise ValueError("grid bounds must be finite")
        if not self.lo < self.hi:
            raise ValueError(f"need lo < hi, got [{self.lo}, {self.hi}]")
        if int(self.n_nodes) != self.n_nodes or self.n_nodes < 16:
            raise ValueError(f"n_nodes must be an integer >= 16, got {self.n_nodes}")

    @classmethod
    def centered(cls, center, halfwidth, n_nodes=DEFAULT_NODES):
        return cls(float(center - halfwidth), float(center + halfwidth), int(n_nodes))

    @property
    def step(self) -> float:
        return (self.hi - self.lo) / (self.n_nodes - 1)

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.n_nodes)

    @property
    def weights(self) -> np.ndarray:
        w = np.full(self.n_nodes, self.step)
        w[0] = w[-1] = 0.5 * self.step
        return w

    def to_dict(self):
        return {"lo": self.lo, "hi": self.hi, "n_nodes": self.n_nodes}


class GridMarginal:
    """A normalized density sampled at the nodes of a :class:`GridSpec`.

    Instances are treated as immutable; the arrays are flagged read-only.
    """

    __slots__ = ("spec", "density", "log_density", "__dict__")

    def __init__(self, spec: GridSpec, density, log_density):
        density = np.array(density, dtype=float)
        log_density = np.array(log_density, dtype=float)
        if density.shape != (spec.n_nodes,) or log_density.shape != (spec.n_nodes,):
            raise DimensionMismatch("density arrays must have n_nodes entries")
        density.setflags(write=False)
        log_density.setflags(write=False)
        self.spec = spec
        self.density = density
        self.log_density = log_density

    def __repr__(self):
        return (f"GridMarginal([{self.spec.lo:.4g}, {self.spec.hi:.4g}] x {self.spec.n_nodes}, "
                f"mean={self.mean():.6g}, std={self.std():.6g})")

    @cached_property
    def nodes(self) -> np.ndarray:
        return self.spec.nodes

    @cached_property
    def weights(self) -> np.ndarray:
        return self.spec.weights

    @cached_property
    def cell_mass(self) -> np.ndarray:
        return 0.5 * self.spec.step * (self.density[1:] + self.density[:-1])

    @cached_property
    def cdf_nodes(self) -> np.ndarray:
        """Trapezoid CDF at the nodes, rescaled so the last entry is exactly 1."""
        c = np.concatenate([[0.0], np.cumsum(self.cell_mass)])
        return c / c[-1]

    def total_mass(self) -> float:
        return float(self.weights @ self.density)

    def mean(self) -> float:
        return float((self.weights * self.density) @ self.nodes)

    def variance(self) -> float:
        r = self.nodes - self.mean()
        return float((self.weights * self.density) @ (r * r))

    def std(self) -> float:
        return math.sqrt(max(self.variance(), 0.0))

    def median(self) -> float:
        return quantile(self, 0.5)

    def shifted(self, c: float) -> "GridMarginal":
        spec = GridSpec(self.spec.lo + c, self.spec.hi + c, self.spec.n_nodes)
        return GridMarginal(spec, self.density, self.log_density)

    def to_dict(self):
        return {**self.spec.to_dict(), "density": self.density, "log_density": self.log_density}

    @classmethod
    def from_dict(cls, obj):
        try:
            spec = GridSpec(float(obj["lo"]), float(obj["hi"]), int(obj["n_nodes"]))
            density = np.asarray(obj["density"], dtype=float)
            if "log_density" in obj:
                log_density = np.asarray(obj["log_density"], dtype=float)
            else:
                with np.errstate(divide="ignore"):
                    log_density = np.log(density)
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"bad marginal record: {exc}") from exc
        return cls(spec, density, log_density)


def from_log_density(spec: GridSpec, logf, check_boundary: bool = True) -> GridMarginal:
    """Normalize exp(logf) on the grid: max-shift, then divide by the trapezoid mass."""
    logf = np.asarray(logf, dtype=float)
    if logf.shape != (spec.n_nodes,):
        raise DimensionMismatch(f"expected {spec.n_nodes} log-density values, got {logf.shape}")
    if not np.all(np.isfinite(logf)):
        raise NonFiniteLogDensity("log density has non-finite entries")
    shifted = logf - logf.max()
    log_z = math.log(float(spec.weights @ np.exp(shifted)))
    log_density = shifted - log_z
    density = np.exp(log_density)
    mu = GridMarginal(spec, density, log_density)
    if check_boundary:
        edge = max(density[0], density[-1])
        if edge >= BOUNDARY_RTOL * density.max():
            raise BoundaryMass(
                f"edge density {edge:.3g} vs max {density.max():.3g} on "
                f"[{spec.lo:.6g}, {spec.hi:.6g}]"
            )
    return mu


def gaussian_marginal(mean: float, std: float, n_nodes: int = DEFAULT_NODES,
                      spec: GridSpec | None = None) -> GridMarginal:
    """N(mean, std^2) on ``spec``, by default mean +- 12 std."""
    if spec is None:
        spec = GridSpec.centered(mean, WINDOW_STDS * std, n_nodes)
    x = spec.nodes
    return from_log_density(spec, -0.5 * ((x - mean) / std) ** 2)


def entropy(mu: GridMarginal) -> float:
    """Negative differential entropy, the integral of mu log mu (0 log 0 = 0)."""
    keep = mu.density > ENTROPY_FLOOR
    integrand = np.where(keep, mu.density * mu.log_density, 0.0)
    return float(mu.weights @ integrand)


def moment(mu: GridMarginal, q: int) -> float:
    """Integral of |x|^q against mu."""
    if q < 0:
        raise ValueError("q must be non-negative")
    return float((mu.weights * mu.density) @ np.abs(mu.nodes) ** q)


def pdf(mu: GridMarginal, x):
    """Density between nodes: quadratic interpolation of the log-density
    through the three nearest nodes, zero outside the window."""
    arr = np.asarray(x, dtype=float)
    h = mu.spec.step
    k = np.clip(np.rint((arr - mu.spec.lo) / h).astype(int), 1, mu.spec.n_nodes - 2)
    t = (arr - mu.nodes[k]) / h
    lm, l0, lp = mu.log_density[k - 1], mu.log_density[k], mu.log_density[k + 1]
    with np.errstate(invalid="ignore"):
        logv = l0 + 0.5 * t * (lp - lm) + 0.5 * t * t * (lp - 2 * l0 + lm)
    out = np.where((arr >= mu.spec.lo) & (arr <= mu.spec.hi), np.exp(logv), 0.0)
    return float(out) if np.ndim(x) == 0 else out


def cdf(mu: GridMarginal, x):
    """Piecewise-linear interpolation of the trapezoid CDF."""
    return np.interp(x, mu.nodes, mu.cdf_nodes, left=0.0, right=1.0)


def quantile(mu: GridMarginal, u):
    """Inverse of :func:`cdf`; ``u`` must lie strictly inside (0, 1)."""
    arr = np.asarray(u, dtype=float)
    if np.any(~(arr > 0)) or np.any(~(arr < 1)):
        raise UOutOfRange(f"quantile level must be in (0, 1), got {u!r}")
    out = _quantile(mu, arr)
    return float(out) if np.ndim(u) == 0 else out


def _quantile(mu, u):
    c = mu.cdf_nodes
    x = mu.nodes
    # right-continuous inverse; plateaus (zero cells) resolve to their left end
    k = np.clip(np.searchsorted(c, u, side="left"), 1, len(c) - 1)
    c0, c1 = c[k - 1], c[k]
    span = c1 - c0
    t = np.where(span > 0, (u - c0) / np.where(span > 0, span, 1.0), 0.0)
    return x[k - 1] + t * (x[k] - x[k - 1])


def w2_1d(a: GridMarginal, b: GridMarginal) -> float:
    """Wasserstein-2 distance via the quantile functions.

    Both quantile functions are linear between consecutive CDF breakpoints of
    either marginal, so the squared difference is integrated exactly on the
    merged breakpoint set.
    """
    u = np.union1d(a.cdf_nodes, b.cdf_nodes)
    du = np.diff(u)
    # limits taken from inside each segment so jumps (zero cells) are handled
    qa_l, qa_r = _segment_ends(a, u)
    qb_l, qb_r = _segment_ends(b, u)
    d0 = qa_l - qb_l
    d1 = qa_r - qb_r
    w2sq = float(np.sum(du * (d0 * d0 + d0 * d1 + d1 * d1)) / 3.0)
    return math.sqrt(max(w2sq, 0.0))


def _segment_ends(mu, u):
    """Quantile values at both ends of each segment [u_k, u_{k+1}], taken from inside."""
    c = mu.cdf_nodes
    x = mu.nodes
    mid = 0.5 * (u[:-1] + u[1:])
    k = np.clip(np.searchsorted(c, mid, side="right"), 1, len(c) - 1)
    c0, c1 = c[k - 1], c[k]
    span = np.where(c1 > c0, c1 - c0, 1.0)
    dx = x[k] - x[k - 1]
    left = x[k - 1] + (u[:-1] - c0) / span * dx
    right = x[k - 1] + (u[1:] - c0) / span * dx
    return left, right


@dataclass(frozen=True)
class ProductState:
    """Product measure mu^1 x ... x mu^d, one grid marginal per block."""

    marginals: tuple

    def __post_init__(self):
        object.__setattr__(self, "marginals", tuple(self.marginals))

    def __len__(self):
        return len(self.marginals)

    def __getitem__(self, i):
        return self.marginals[i]

    @property
    def d(self) -> int:
        return len(self.marginals)

    def means(self) -> np.ndarray:
        return np.array([mu.mean() for mu in self.marginals])

    def variances(self) -> np.ndarray:
        return np.array([mu.variance() for mu in self.marginals])

    def second_moment(self) -> float:
        return float(sum(moment(mu, 2) for mu in self.marginals))

    def replace(self, i: int, mu: GridMarginal) -> "ProductState":
        ms = list(self.marginals)
        ms[i] = mu
        return ProductState(tuple(ms))

    def to_dict(self):
        return {"kind": "grid", "marginals": [mu.to_dict() for mu in self.marginals]}

    @classmethod
    def from_dict(cls, obj):
        try:
            records = obj["marginals"]
        except (KeyError, TypeError) as exc:
            raise ParseError("state file has no 'marginals' list") from exc
        if not records:
            raise ParseError("state file has no marginals")
        return cls(tuple(GridMarginal.from_dict(r) for r in records))


def w2_product(a: ProductState, b: ProductState) -> float:
    """W2 between product measures: root of the sum of squared marginal distances."""
    if a.d != b.d:
        raise DimensionMismatch(f"states have {a.d} and {b.d} blocks")
    return math.sqrt(sum(w2_1d(x, y) ** 2 for x, y in zip(a.marginals, b.marginals)))


def save_state(state: ProductState, path) -> None:
    jsonio.dump_file(state.to_dict(), path)


def load_state(path) -> ProductState:
    try:
        obj = jsonio.load_file(path)
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    return ProductState.from_dict(obj)


def product_of(marginals: Sequence[GridMarginal]) -> ProductState:
    return ProductState(tuple(marginals))
