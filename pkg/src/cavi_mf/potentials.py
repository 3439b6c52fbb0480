"""Target potentials psi for rho proportional to exp(-psi).

Three constructors are provided: a dense quadratic form, a pairwise-separable
sum of unary and binary terms, and the Bayesian linear-regression posterior
(stored in pairwise form).  Every potential carries the convexity metadata the
rate certificates need.

Indices are 0-based throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    DuplicatePair,
    IndexOutOfRange,
    NonFiniteInput,
    NonFiniteIntegrand,
    NonPositiveSigma,
    NotPositiveDefinite,
    NotSymmetric,
)

ArrayFn = Callable[[np.ndarray], np.ndarray]
PairFn = Callable[[np.ndarray, np.ndarray], np.ndarray]

SYMMETRY_RTOL = 1e-12
SPD_RTOL = 1e-10


@dataclass(frozen=True)
class Unary:
    """A convex unary term ``f`` with derivative ``df`` (both vectorized)."""

    f: ArrayFn
    df: ArrayFn


@dataclass(frozen=True)
class PairTerm:
    """Binary term g(x_i, x_j) with i < j.

    When ``bilinear`` is set the term is ``bilinear * x_i * x_j`` and the
    engine integrates it analytically (only first moments are needed).
    """

    i: int
    j: int
    g: PairFn
    dg_dx: PairFn
    dg_dy: PairFn
    bilinear: Optional[float] = None


def bilinear_pair(i: int, j: int, c: float) -> PairTerm:
    c = float(c)
    return PairTerm(
        i,
        j,
        g=lambda x, y: c * x * y,
        dg_dx=lambda x, y: c * y * np.ones_like(x),
        dg_dy=lambda x, y: c * x * np.ones_like(y),
        bilinear=c,
    )


@dataclass(frozen=True)
class Envelope:
    """Lower envelope psi(x) >= alpha + beta*|x|."""

    alpha: float
    beta: float

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError("envelope beta must be positive")


@dataclass(frozen=True)
class Prior:
    """Unary prior potential phi with curvature bounds a <= phi'' <= a_upper."""

    name: str
    f: ArrayFn
    df: ArrayFn
    a: float
    a_upper: float
    params: dict = field(default_factory=dict)


def gaussian_prior(scale: float = 1.0) -> Prior:
    s2 = float(scale) ** 2
    return Prior(
        "gaussian",
        f=lambda x: 0.5 * np.asarray(x) ** 2 / s2,
        df=lambda x: np.asarray(x) / s2,
        a=1.0 / s2,
        a_upper=1.0 / s2,
        params={"scale": float(scale)},
    )


def _logcosh(x):
    x = np.abs(x)
    return x + np.log1p(np.exp(-2.0 * x)) - math.log(2.0)


def double_well_prior(c: float = 1.5) -> Prior:
    """phi(x) = x^2/2 - c*log cosh(x); non-convex when c > 1 (phi'' >= 1 - c)."""
    c = float(c)
    return Prior(
        "double_well",
        f=lambda x: 0.5 * np.asarray(x) ** 2 - c * _logcosh(np.asarray(x)),
        df=lambda x: np.asarray(x) - c * np.tanh(x),
        a=1.0 - c,
        a_upper=1.0,
        params={"c": c},
    )


PRIORS = {"gaussian": gaussian_prior, "double_well": double_well_prior}


@dataclass(frozen=True, eq=False)
class Potential:
    """psi on R^d with one scalar variable per block.

    ``form`` is ``"quadratic"`` (fields ``A``, ``m``) or ``"pairwise"``
    (fields ``phi``, ``pairs``).  ``offset`` is an additive constant that is
    kept out of every quantity that is invariant under shifts of psi.
    """

    d: int
    form: str
    lam: float = 0.0
    lipschitz: Optional[float] = None
    envelope: Optional[Envelope] = None
    log_partition: Optional[float] = None
    A: Optional[np.ndarray] = None
    m: Optional[np.ndarray] = None
    phi: tuple = ()
    pairs: tuple = ()
    offset: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.lipschitz is not None and self.lam > self.lipschitz * (1 + 1e-12):
            raise ValueError(f"lambda={self.lam} exceeds lipschitz={self.lipschitz}")

    @property
    def is_quadratic(self) -> bool:
        return self.form == "quadratic"

    def value(self, x) -> float:
        x = _check_point(x, self.d)
        if self.is_quadratic:
            r = x - self.m
            return float(0.5 * r @ self.A @ r) + self.offset
        total = sum(float(u.f(np.asarray(x[i]))) for i, u in enumerate(self.phi))
        total += sum(float(t.g(np.asarray(x[t.i]), np.asarray(x[t.j]))) for t in self.pairs)
        return total + self.offset

    __call__ = value

    def grad_i(self, x, i: int) -> float:
        x = _check_point(x, self.d)
        if not 0 <= i < self.d:
            raise IndexOutOfRange(f"coordinate {i} out of range for d={self.d}")
        if self.is_quadratic:
            return float(self.A[i] @ (x - self.m))
        out = float(self.phi[i].df(np.asarray(x[i])))
        for t in self.pairs:
            if t.i == i:
                out += float(t.dg_dx(np.asarray(x[t.i]), np.asarray(x[t.j])))
            elif t.j == i:
                out += float(t.dg_dy(np.asarray(x[t.i]), np.asarray(x[t.j])))
        return out

    def gradient(self, x) -> np.ndarray:
        return np.array([self.grad_i(x, i) for i in range(self.d)])

    def quadratic_form(self, x) -> float:
        """0.5 (x-m)^T A (x-m) without the offset (quadratic potentials only)."""
        r = np.asarray(x, dtype=float) - self.m
        return float(0.5 * r @ self.A @ r)

    def shifted(self, c: float) -> "Potential":
        """The potential psi + c."""
        c = float(c)
        env = self.envelope and Envelope(self.envelope.alpha + c, self.envelope.beta)
        lp = None if self.log_partition is None else self.log_partition - c
        return replace(self, offset=self.offset + c, envelope=env, log_partition=lp)

    def describe(self) -> dict:
        """JSON-ready metadata (callables are not serializable)."""
        out = {
            "form": self.form,
            "d": self.d,
            "lambda": self.lam,
            "lipschitz": self.lipschitz,
            "log_partition": self.log_partition,
            "offset": self.offset,
            "envelope": None
            if self.envelope is None
            else {"alpha": self.envelope.alpha, "beta": self.envelope.beta},
        }
        if self.is_quadratic:
            out["A"] = self.A.tolist()
            out["m"] = self.m.tolist()
        out.update(self.meta)
        return out


def _check_point(x, d):
    x = np.asarray(x, dtype=float)
    if x.shape != (d,):
        raise DimensionMismatch(f"expected a point of shape ({d},), got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise NonFiniteInput("point has non-finite entries")
    return x


def make_quadratic(A, m, offset: float = 0.0) -> Potential:
    """psi(x) = 0.5 (x-m)^T A (x-m) for symmetric positive-definite A."""
    A = np.array(A, dtype=float)
    m = np.array(m, dtype=float).reshape(-1)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionMismatch(f"A must be square, got shape {A.shape}")
    if A.shape[0] != m.shape[0]:
        raise DimensionMismatch(f"A is {A.shape[0]}x{A.shape[0]} but m has length {m.shape[0]}")
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(m))):
        raise NonFiniteInput("A and m must be finite")
    scale = max(np.max(np.abs(A)), np.finfo(float).tiny)
    if np.max(np.abs(A - A.T)) > SYMMETRY_RTOL * scale:
        raise NotSymmetric("A is not symmetric")
    A = 0.5 * (A + A.T)
    eig = np.linalg.eigvalsh(A)
    if eig[0] <= SPD_RTOL * max(eig[-1], 0.0) or eig[-1] <= 0:
        raise NotPositiveDefinite(f"smallest eigenvalue {eig[0]:.3g} is not positive")
    d = m.shape[0]
    lam, L = float(eig[0]), float(eig[-1])
    _, logdet = np.linalg.slogdet(A)
    log_z = 0.5 * d * math.log(2 * math.pi) - 0.5 * logdet - offset
    # 0.5*lam*t^2 >= beta*t - beta^2/(2 lam) with beta = sqrt(lam)
    beta = math.sqrt(lam)
    env = Envelope(offset - beta * float(np.linalg.norm(m)) - 0.5, beta)
    A.setflags(write=False)
    m.setflags(write=False)
    return Potential(
        d=d,
        form="quadratic",
        lam=lam,
        lipschitz=L,
        envelope=env,
        log_partition=log_z,
        A=A,
        m=m,
        offset=float(offset),
    )


def make_pairwise(
    phi: Sequence[Unary],
    pairs: Sequence[PairTerm] = (),
    lam: float = 0.0,
    lipschitz: Optional[float] = None,
    envelope: Optional[Envelope] = None,
    log_partition: Optional[float] = None,
    meta: Optional[dict] = None,
) -> Potential:
    """psi(x) = sum_i phi_i(x_i) + sum_(i,j) g_ij(x_i, x_j).

    The convexity metadata is trusted as given.
    """
    d = len(phi)
    if d == 0:
        raise DimensionMismatch("need at least one block")
    seen = set()
    for t in pairs:
        if not (0 <= t.i < d and 0 <= t.j < d) or t.i >= t.j:
            raise IndexOutOfRange(f"pair ({t.i}, {t.j}) must satisfy 0 <= i < j < {d}")
        if (t.i, t.j) in seen:
            raise DuplicatePair(f"pair ({t.i}, {t.j}) given twice")
        seen.add((t.i, t.j))
    return Potential(
        d=d,
        form="pairwise",
        lam=float(lam),
        lipschitz=None if lipschitz is None else float(lipschitz),
        envelope=envelope,
        log_partition=log_partition,
        phi=tuple(phi),
        pairs=tuple(pairs),
        meta=dict(meta or {}),
    )


def as_pairwise(p: Potential) -> Potential:
    """Expand a quadratic potential into unary + bilinear pair terms."""
    if not p.is_quadratic:
        return p
    A, m = p.A, p.m
    phi = []
    for i in range(p.d):
        a, mi = float(A[i, i]), float(m[i])
        phi.append(Unary(f=lambda x, a=a, mi=mi: 0.5 * a * (x - mi) ** 2,
                         df=lambda x, a=a, mi=mi: a * (x - mi)))
    pairs = []
    for i in range(p.d):
        for j in range(i + 1, p.d):
            c, mi, mj = float(A[i, j]), float(m[i]), float(m[j])
            if c == 0.0:
                continue
            pairs.append(PairTerm(
                i, j,
                g=lambda x, y, c=c, mi=mi, mj=mj: c * (x - mi) * (y - mj),
                dg_dx=lambda x, y, c=c, mj=mj: c * (y - mj) * np.ones_like(x),
                dg_dy=lambda x, y, c=c, mi=mi: c * (x - mi) * np.ones_like(y),
            ))
    out = make_pairwise(phi, pairs, lam=p.lam, lipschitz=p.lipschitz,
                        envelope=p.envelope, log_partition=p.log_partition)
    return replace(out, offset=p.offset)


def regression_moments(y, X, sigma):
    y = np.asarray(y, dtype=float).reshape(-1)
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise DimensionMismatch(f"X has shape {X.shape} but y has length {y.shape[0]}")
    if not (sigma > 0):
        raise NonPositiveSigma(f"sigma must be positive, got {sigma}")
    return X.T @ X, X.T @ y


def make_regression(y, X, sigma: float, prior: Prior) -> Potential:
    """Posterior potential of y = X beta + N(0, sigma^2 I) with i.i.d. prior exp(-phi).

    lambda = a + b/sigma^2 and L = A + B/sigma^2 where [b, B] is the
    eigenvalue range of X^T X and [a, A] the curvature range of the prior.
    """
    gram, xty = regression_moments(y, X, sigma)
    s2 = float(sigma) ** 2
    k = gram.shape[0]
    eig = np.linalg.eigvalsh(gram) if k else np.zeros(1)
    b, B = max(float(eig[0]), 0.0), float(eig[-1])
    phi = []
    for i in range(k):
        gii, ri = float(gram[i, i]), float(xty[i])
        phi.append(Unary(
            f=lambda x, gii=gii, ri=ri: prior.f(x) + gii * np.asarray(x) ** 2 / (2 * s2) - ri * np.asarray(x) / s2,
            df=lambda x, gii=gii, ri=ri: prior.df(x) + gii * np.asarray(x) / s2 - ri / s2,
        ))
    pairs = [
        bilinear_pair(i, j, gram[i, j] / s2)
        for i in range(k)
        for j in range(i + 1, k)
        if gram[i, j] != 0.0
    ]
    meta = {"source": "regression", "sigma": float(sigma), "prior": prior.name,
            "prior_params": dict(prior.params)}
    return make_pairwise(
        phi, pairs, lam=prior.a + b / s2, lipschitz=prior.a_upper + B / s2, meta=meta
    )


def regression_as_quadratic(y, X, sigma: float, scale: float = 1.0) -> Potential:
    """The conjugate (Gaussian-prior) posterior as a quadratic potential."""
    gram, xty = regression_moments(y, X, sigma)
    s2 = float(sigma) ** 2
    A = gram / s2 + np.eye(gram.shape[0]) / scale**2
    m = np.linalg.solve(A, xty / s2)
    return make_quadratic(A, m)


# ---------------------------------------------------------------------------
# Integrals of psi against product measures.
#
# ``marginals`` below are duck-typed: anything with ``nodes``, ``weights``,
# ``density`` arrays and a ``mean()`` method (grid marginals).


def _mass(mu):
    return mu.weights * mu.density


def conditional_energy(p: Potential, marginals, i: int, x) -> np.ndarray:
    """f_i(x) = integral of psi(x, y^{-i}) against the product of the other marginals.

    Additive constants (including ``p.offset``) are dropped: only differences
    of f_i across x matter for the coordinate update.
    """
    x = np.asarray(x, dtype=float)
    if p.is_quadratic:
        means = np.array([mu.mean() for mu in marginals])
        return quadratic_conditional(p.A, p.m, means, i, x)
    out = np.asarray(p.phi[i].f(x), dtype=float).copy()
    for t in p.pairs:
        if t.i == i:
            other, first = marginals[t.j], True
        elif t.j == i:
            other, first = marginals[t.i], False
        else:
            continue
        if t.bilinear is not None:
            out += t.bilinear * other.mean() * x
            continue
        w = _mass(other)
        y = other.nodes
        if first:
            out += t.g(x[:, None], y[None, :]) @ w
        else:
            out += t.g(y[None, :], x[:, None]) @ w
    if not np.all(np.isfinite(out)):
        raise NonFiniteIntegrand(f"conditional energy of coordinate {i} is not finite")
    return out


def quadratic_conditional(A, m, means, i, x) -> np.ndarray:
    """Conditional energy of a quadratic potential (depends on the others' means only)."""
    shift = float(A[i] @ (means - m) - A[i, i] * (means[i] - m[i]))
    r = np.asarray(x, dtype=float) - m[i]
    return 0.5 * A[i, i] * r * r + shift * r


def quadratic_conditional_moments(A, m, means, i):
    """Mean and variance of the Gaussian exp(-f_i) for a quadratic potential."""
    shift = float(A[i] @ (means - m) - A[i, i] * (means[i] - m[i]))
    return float(m[i] - shift / A[i, i]), float(1.0 / A[i, i])


def expected_energy(p: Potential, marginals) -> float:
    """Integral of psi - offset against the product measure."""
    if p.is_quadratic:
        dev = []
        sq = []
        for mu, mi in zip(marginals, p.m):
            r = mu.nodes - mi
            w = _mass(mu)
            dev.append(float(w @ r))
            sq.append(float(w @ (r * r)))
        dev = np.array(dev)
        total = 0.5 * float(np.diag(p.A) @ np.array(sq))
        off = p.A - np.diag(np.diag(p.A))
        total += 0.5 * float(dev @ off @ dev)
        return total
    total = 0.0
    for u, mu in zip(p.phi, marginals):
        total += float(_mass(mu) @ np.asarray(u.f(mu.nodes), dtype=float))
    for t in p.pairs:
        a, b = marginals[t.i], marginals[t.j]
        if t.bilinear is not None:
            total += t.bilinear * a.mean() * b.mean()
        else:
            total += float(_mass(a) @ t.g(a.nodes[:, None], b.nodes[None, :]) @ _mass(b))
    if not math.isfinite(total):
        raise NonFiniteIntegrand("expected potential is not finite")
    return total
