"""Free energy, mean-field residual, and convergence-rate certificates.

Free energies are tracked without the potential's additive offset; gaps
between them are then identical (bit for bit) under psi -> psi + c.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np
from scipy import special

from .errors import BackendMismatch, MissingConstants, MissingEnvelope, MissingLogPartition
from .marginal import ProductState, entropy, gaussian_marginal, w2_product
from .potentials import (
    Potential,
    conditional_energy,
    expected_energy,
    quadratic_conditional_moments,
)

RESIDUAL_SUPPORT = 1e-12
DEFAULT_SLACK_ABS = 1e-7
DEFAULT_SLACK_REL = 1e-3
SLACK_ENV = "CAVI_MF_SLACK"
LOG3_SQ = math.log(3.0) ** 2


def _is_grid(state) -> bool:
    return isinstance(state, ProductState)


# ---------------------------------------------------------------------------
# free energy and residual


def free_energy_core(state, p: Potential) -> float:
    """Integral of (psi - offset) plus the summed marginal entropies."""
    if _is_grid(state):
        return expected_energy(p, state.marginals) + sum(entropy(mu) for mu in state.marginals)
    if not p.is_quadratic:
        raise BackendMismatch("gaussian states need a quadratic potential")
    v = state.variances
    energy = p.quadratic_form(state.means) + 0.5 * float(np.diag(p.A) @ v)
    ent = float(np.sum(-0.5 * np.log(2 * math.pi * math.e * v)))
    return energy + ent


def free_energy(state, p: Potential) -> float:
    """F(mu) = integral of psi dmu + sum_i h(mu^i) = H(mu | rho) - log Z."""
    return free_energy_core(state, p) + p.offset


def relative_entropy(state, p: Potential) -> float:
    """H(mu | rho); needs the log-partition of the potential."""
    if p.log_partition is None:
        raise MissingLogPartition("log-partition of the target is unknown")
    return free_energy(state, p) + p.log_partition


def mean_field_residual(state, p: Potential) -> float:
    """Distance to the mean-field equation mu^i ~ exp(-f_i).

    For each block, the largest deviation of log mu^i + f_i from its median
    over the nodes where mu^i exceeds 1e-12 of its maximum; the max over blocks.
    """
    worst = 0.0
    if _is_grid(state):
        for i, mu in enumerate(state.marginals):
            f = conditional_energy(p, state.marginals, i, mu.nodes)
            keep = mu.density > RESIDUAL_SUPPORT * mu.density.max()
            diff = mu.log_density[keep] + f[keep]
            worst = max(worst, float(np.max(np.abs(diff - np.median(diff)))))
        return worst
    cut = math.sqrt(2.0 * math.log(1.0 / RESIDUAL_SUPPORT))
    for i in range(state.d):
        mean, var = float(state.means[i]), float(state.variances[i])
        t, tv = quadratic_conditional_moments(p.A, p.m, state.means, i)
        x = np.linspace(mean - cut * math.sqrt(var), mean + cut * math.sqrt(var), 2049)
        diff = -0.5 * (x - mean) ** 2 / var + 0.5 * (x - t) ** 2 / tv
        worst = max(worst, float(np.max(np.abs(diff - np.median(diff)))))
    return worst


def w2_between(a, b) -> float:
    """W2 between two states of either backend."""
    if _is_grid(a) and _is_grid(b):
        return w2_product(a, b)
    if not _is_grid(a) and not _is_grid(b):
        dm = a.means - b.means
        ds = np.sqrt(a.variances) - np.sqrt(b.variances)
        return math.sqrt(float(dm @ dm + ds @ ds))
    grid, gauss = (a, b) if _is_grid(a) else (b, a)
    n = grid.marginals[0].spec.n_nodes
    as_grid = ProductState(tuple(
        gaussian_marginal(float(m), math.sqrt(v), n) for m, v in zip(gauss.means, gauss.variances)
    ))
    return w2_product(grid, as_grid)


# ---------------------------------------------------------------------------
# gap series


def gap_series(report, mu_star=None, p: Optional[Potential] = None, include_init: bool = False):
    """Rows (n, gap_n, w2_n) with gap_n = F(mu_n) - F(mu_*) and w2_n = W2(mu_n, mu_*).

    Without ``mu_star`` the reference stored in the report is used.
    """
    recs = report.records if include_init else [r for r in report.records if r.sweep >= 1]
    if mu_star is None:
        return [(r.sweep, r.gap, r.w2_star) for r in recs]
    p = p or report.potential
    if p is None or report.states is None:
        raise ValueError("recomputing gaps needs the report's states and potential")
    f_star = free_energy_core(mu_star, p)
    by_sweep = {r.sweep: s for r, s in zip(report.records, report.states)}
    return [(r.sweep, r.free_energy - f_star, w2_between(by_sweep[r.sweep], mu_star)) for r in recs]


# ---------------------------------------------------------------------------
# certificates


class CertKind(str, Enum):
    MONOTONE = "monotone"
    LINEAR = "linear"
    EXPONENTIAL = "exponential"
    W2_LOWER = "w2lower"
    GAUSSIAN_DIMFREE = "gaussian-dimfree"


@dataclass
class CertRow:
    n: float
    bound: float
    observed: float
    slack: float

    @property
    def violation(self) -> float:
        return self.observed - self.bound


@dataclass
class Certificate:
    kind: CertKind
    constants: dict
    rows: list
    passed: bool
    max_violation: float
    violating_sweep: Optional[float] = None
    extra: dict = field(default_factory=dict)

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        where = "" if self.passed else f" (first violation at sweep {self.violating_sweep})"
        return f"{status} {self.kind.value}: max(observed - bound) = {self.max_violation:.3e}{where}"

    def to_dict(self):
        return {
            "kind": self.kind.value,
            "constants": self.constants,
            "pass": self.passed,
            "max_violation": self.max_violation,
            "violating_sweep": self.violating_sweep,
            "rows": [
                {"n": r.n, "bound": r.bound, "observed": r.observed, "slack": r.slack}
                for r in self.rows
            ],
            "extra": self.extra,
        }


def default_slack_abs() -> float:
    env = os.environ.get(SLACK_ENV)
    return float(env) if env else DEFAULT_SLACK_ABS


def _finish(kind, constants, triples, slack_abs, slack_rel, extra=None) -> Certificate:
    rows = [CertRow(n, b, o, slack_abs + slack_rel * abs(b)) for n, b, o in triples]
    if not rows:
        raise ValueError("certificate has no rows; the report needs at least one sweep")
    viol = [r.violation for r in rows]
    bad = [r for r in rows if not (r.violation <= r.slack)]
    return Certificate(
        kind=kind,
        constants=constants,
        rows=rows,
        passed=not bad,
        max_violation=float(max(viol)),
        violating_sweep=bad[0].n if bad else None,
        extra=extra or {},
    )


def exponential_factor(lam: float, lipschitz: float, d: int) -> float:
    """Per-sweep contraction 1 - lam^2/(L^2 d + lam^2) of the free-energy gap."""
    return 1.0 - lam**2 / (lipschitz**2 * d + lam**2)


def gaussian_dimfree_factor(lam: float, lipschitz: float) -> float:
    """Dimension-free contraction 1 - lam^2/(lam^2 + 64 (L-lam)^2 log^2 3)."""
    return 1.0 - lam**2 / (lam**2 + 64.0 * (lipschitz - lam) ** 2 * LOG3_SQ)


def linear_rate_bound(n: int, gap1: float, radius: float, lipschitz: float, d: int) -> float:
    """(2 + gap_1 + 1/(R sqrt(L d))) * 2 R^2 L d / n, expanded so R = 0 is allowed."""
    ld = lipschitz * d
    return ((2.0 + gap1) * 2.0 * radius**2 * ld + 2.0 * radius * math.sqrt(ld)) / n


def _constants(report, p, lam, lipschitz):
    info = report.potential_info or {}
    if lam is None:
        lam = p.lam if p is not None else info.get("lambda")
    if lipschitz is None:
        lipschitz = p.lipschitz if p is not None else info.get("lipschitz")
    d = p.d if p is not None else int(info["d"])
    return lam, lipschitz, d


def rate_certificate(report, kind, p: Optional[Potential] = None, mu_star=None,
                     lam: Optional[float] = None, lipschitz: Optional[float] = None,
                     slack_abs: Optional[float] = None,
                     slack_rel: float = DEFAULT_SLACK_REL) -> Certificate:
    """Check one convergence inequality row by row over the recorded sweeps.

    Rows start at sweep 1; a row passes when observed - bound <= slack, with
    slack = slack_abs + slack_rel * |bound|.
    """
    kind = CertKind(kind)
    p = p if p is not None else report.potential
    lam, lipschitz, d = _constants(report, p, lam, lipschitz)
    slack_abs = default_slack_abs() if slack_abs is None else slack_abs
    series = gap_series(report, mu_star, p, include_init=True)
    if len([s for s in series if s[0] >= 1]) < 1:
        raise ValueError("report has no sweeps past the initial state")
    gaps = {n: g for n, g, _ in series}
    w2s = {n: w for n, _, w in series}
    sweeps = [n for n, _, _ in series if n >= 1]
    gap1 = gaps[1]

    if kind is CertKind.MONOTONE:
        triples = [(n, gaps[n - 1], gaps[n]) for n in sweeps]
        extra = {}
        half = _half_sweep_rows(report, mu_star, p)
        if half:
            extra["coordinate_rows"] = half
            triples = half
        return _finish(kind, {}, triples, slack_abs, slack_rel, extra)

    if kind is CertKind.LINEAR:
        if lipschitz is None:
            raise MissingConstants("linear rate needs the Lipschitz constant L")
        radius = max(w2s[n] for n in sweeps)
        triples = [(n, linear_rate_bound(n, gap1, radius, lipschitz, d), gaps[n]) for n in sweeps]
        extra = {}
        alt = _diameter_from_report(report, p, lam)
        if alt is not None:
            extra["diameter_bound"] = alt
            extra["rows_with_diameter_bound"] = [
                {"n": n, "bound": linear_rate_bound(n, gap1, alt, lipschitz, d), "observed": gaps[n]}
                for n in sweeps
            ]
        consts = {"L": lipschitz, "d": d, "R": radius, "gap1": gap1}
        return _finish(kind, consts, triples, slack_abs, slack_rel, extra)

    if lam is None or not lam > 0:
        raise MissingConstants(f"{kind.value} needs a positive strong-convexity constant lambda")

    if kind is CertKind.W2_LOWER:
        triples = [(n, gaps[n], 0.5 * lam * w2s[n] ** 2) for n in sweeps]
        return _finish(kind, {"lambda": lam}, triples, slack_abs, slack_rel)

    if lipschitz is None:
        raise MissingConstants(f"{kind.value} needs the Lipschitz constant L")

    if kind is CertKind.EXPONENTIAL:
        q = exponential_factor(lam, lipschitz, d)
        triples = [(n, q ** (n - 1) * gap1, gaps[n]) for n in sweeps]
        consts = {"lambda": lam, "L": lipschitz, "d": d, "factor": q, "gap1": gap1}
        return _finish(kind, consts, triples, slack_abs, slack_rel)

    # gaussian-dimfree
    if report.backend != "gaussian":
        raise BackendMismatch("the dimension-free certificate applies to gaussian-backend runs only")
    info = report.potential_info
    A = np.asarray(p.A if p is not None else info["A"], dtype=float)
    m = np.asarray(p.m if p is not None else info["m"], dtype=float)

    def psi(x):
        r = np.asarray(x) - m
        return float(0.5 * r @ A @ r)

    recs = {r.sweep: r for r in report.records}
    q = gaussian_dimfree_factor(lam, lipschitz)
    psi1 = psi(recs[1].means)
    triples = [(n, q ** (n - 1) * psi1, psi(recs[n].means)) for n in sweeps]
    consts = {"lambda": lam, "L": lipschitz, "factor": q, "psi1": psi1}
    return _finish(kind, consts, triples, slack_abs, slack_rel)


def _half_sweep_rows(report, mu_star, p):
    """Coordinate-level descent rows from recorded half-sweep free energies."""
    recs = report.records
    if not all(r.half_sweep_free_energies for r in recs[1:]) or len(recs) < 2:
        return []
    if mu_star is None:
        f_star = report.star_free_energy
    else:
        f_star = free_energy_core(mu_star, p)
    rows = []
    prev = recs[0].free_energy - f_star
    for r in recs[1:]:
        half = r.half_sweep_free_energies
        for i, f in enumerate(half):
            g = f - f_star
            rows.append((r.sweep - 1 + (i + 1) / len(half), prev, g))
            prev = g
    return rows


def _diameter_from_report(report, p, lam):
    info = report.potential_info or {}
    log_z = p.log_partition if p is not None else info.get("log_partition")
    if lam is None or not lam > 0 or log_z is None:
        return None
    f1 = next(r.free_energy for r in report.records if r.sweep == 1) + report.offset
    return diameter_from_entropy(f1 + log_z, Talagrand(1.0 / lam), d=int(info.get("d", 0)) or None)


# ---------------------------------------------------------------------------
# diameter and moment bounds


@dataclass(frozen=True)
class General:
    alpha: Optional[float] = None
    beta: Optional[float] = None


@dataclass(frozen=True)
class Talagrand:
    r: Optional[float] = None


@dataclass(frozen=True)
class Subgaussian:
    r: float
    log_mgf: float


def _log_int_exp_norm(beta: float, d: int) -> float:
    """log of the integral over R^d of exp(-beta |x|) (Euclidean norm)."""
    log_surface = math.log(2.0) + 0.5 * d * math.log(math.pi) - special.gammaln(0.5 * d)
    return log_surface + special.gammaln(d) - d * math.log(beta)


def _log_second_moment_laplace(beta: float, d: int) -> float:
    """log of the integral over R^d of |x|^2 exp(-beta sum_i |x_i|)."""
    return math.log(d) + math.log(4.0 / beta**3) + (d - 1) * math.log(2.0 / beta)


def diameter_from_entropy(h1: float, variant, d: Optional[int] = None) -> float:
    """Bound on sup_n W2(mu_n, mu_*) from H(mu_1 | rho).

    ``General`` needs alpha, beta of the envelope of the *normalized*
    potential psi + log Z and the dimension ``d``.
    """
    h1 = max(float(h1), 0.0)
    if isinstance(variant, Talagrand):
        return 2.0 * math.sqrt(2.0 * variant.r * h1)
    if isinstance(variant, Subgaussian):
        return 2.0 / math.sqrt(variant.r) * math.sqrt(max(h1 + variant.log_mgf, 0.0))
    if isinstance(variant, General):
        if variant.alpha is None or variant.beta is None:
            raise MissingEnvelope("general diameter bound needs the envelope (alpha, beta)")
        if d is None:
            raise ValueError("general diameter bound needs the dimension")
        a, b = variant.alpha, variant.beta
        log_r = (math.log(2.0) + 0.5 * (2 * d + 1) * h1 - 0.5 * (d + 1) * a
                 + d * (_log_int_exp_norm(0.5 * b, d) - 0.5 * a)
                 + 0.5 * _log_second_moment_laplace(b, d))
        return math.exp(log_r)
    raise TypeError(f"unknown diameter variant {variant!r}")


def diameter_bound(p: Potential, f1: float, variant) -> float:
    """Diameter bound given the free energy F(mu_1) (including offset).

    H(mu_1 | rho) = F(mu_1) + log Z, so the log-partition must be known.
    Talagrand defaults to r = 1/lambda; General defaults to the potential's
    envelope.
    """
    if p.log_partition is None:
        raise MissingLogPartition("diameter bounds need log Z of the target")
    h1 = f1 + p.log_partition
    if isinstance(variant, Talagrand) and variant.r is None:
        if not p.lam > 0:
            raise MissingConstants("Talagrand constant defaults to 1/lambda; lambda must be positive")
        variant = Talagrand(1.0 / p.lam)
    if isinstance(variant, General):
        alpha, beta = variant.alpha, variant.beta
        if alpha is None or beta is None:
            if p.envelope is None:
                raise MissingEnvelope("potential has no envelope (alpha, beta)")
            alpha, beta = p.envelope.alpha, p.envelope.beta
        # the bounds are stated for the normalized potential psi + log Z
        variant = General(alpha + p.log_partition, beta)
    return diameter_from_entropy(h1, variant, p.d)


def second_moment_bound(p: Potential, f1: float) -> float:
    """Uniform bound on the second moment of every iterate mu_n, n >= 1."""
    if p.log_partition is None:
        raise MissingLogPartition("moment bound needs log Z of the target")
    if p.envelope is None:
        raise MissingEnvelope("moment bound needs the envelope (alpha, beta)")
    d = p.d
    h1 = max(f1 + p.log_partition, 0.0)
    a = p.envelope.alpha + p.log_partition
    b = p.envelope.beta
    log_b = ((2 * d + 1) * h1 - (d + 1) * a
             + 2 * d * (_log_int_exp_norm(0.5 * b, d) - 0.5 * a)
             + _log_second_moment_laplace(b, d))
    return math.exp(log_b)
