"""Coordinate ascent variational inference (CAVI) sweeps and the solve driver.

Two backends:

* grid -- each marginal is a :class:`~cavi_mf.marginal.GridMarginal`; works
  for quadratic and pairwise-separable potentials.
* gaussian -- quadratic potentials only; the iterates are Gaussian with
  variances 1/a_ii after the first sweep, so only the means are tracked and
  a sweep is one Gauss-Seidel step.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
from scipy import optimize

from . import diagnostics
from .errors import (
    BackendMismatch,
    BoundaryMass,
    DimensionMismatch,
    GridOverflow,
    NonFiniteIntegrand,
    NotPositiveDefinite,
    ParseError,
)
from .marginal import (
    DEFAULT_NODES,
    WINDOW_STDS,
    GridMarginal,
    GridSpec,
    ProductState,
    from_log_density,
    gaussian_marginal,
    load_state,
)
from .potentials import (
    Potential,
    conditional_energy,
    quadratic_conditional_moments,
)

log = logging.getLogger(__name__)

MAX_RESIZE = 5
DIVERGENCE_MOMENT = 1e6
DIRAC_CELLS = 5.0


@dataclass(frozen=True)
class GaussianState:
    """Product of N(means[i], variances[i])."""

    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        means = np.array(self.means, dtype=float).reshape(-1)
        variances = np.array(self.variances, dtype=float).reshape(-1)
        if means.shape != variances.shape:
            raise DimensionMismatch("means and variances differ in length")
        if np.any(variances <= 0):
            raise ValueError("variances must be positive")
        means.setflags(write=False)
        variances.setflags(write=False)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "variances", variances)

    @property
    def d(self) -> int:
        return self.means.shape[0]

    def second_moment(self) -> float:
        return float(np.sum(self.means**2 + self.variances))

    def to_dict(self):
        return {"kind": "gaussian", "means": self.means, "variances": self.variances}

    @classmethod
    def from_dict(cls, obj):
        try:
            return cls(obj["means"], obj["variances"])
        except (KeyError, TypeError) as exc:
            raise ParseError(f"bad gaussian state: {exc}") from exc


State = Union[ProductState, GaussianState]


@dataclass(frozen=True)
class SweepSchedule:
    mode: str = "sequential"
    sweeps: int = 200
    tol: float = 1e-8

    def __post_init__(self):
        if self.mode not in ("sequential", "parallel"):
            raise ValueError(f"unknown sweep mode {self.mode!r}")
        if self.sweeps < 1:
            raise ValueError("sweeps must be >= 1")
        if not self.tol > 0:
            raise ValueError("tol must be positive")


@dataclass
class SweepRecord:
    sweep: int
    free_energy: float  # without the potential's offset
    residual: float
    means: np.ndarray
    variances: np.ndarray
    second_moment: float
    w2_step: Optional[float] = None
    w2_star: Optional[float] = None
    gap: Optional[float] = None
    half_sweep_free_energies: Optional[list] = None
    wall_time: float = 0.0


@dataclass
class RunReport:
    """Per-sweep history of a solve; sweep 0 is the initial state."""

    backend: str
    mode: str
    records: list
    termination: str
    potential_info: dict
    offset: float = 0.0
    states: Optional[list] = None
    star_state: Optional[State] = None
    star_free_energy: Optional[float] = None
    star_source: str = "final_state"
    config: dict = field(default_factory=dict)
    potential: Optional[Potential] = None

    @property
    def n_sweeps(self) -> int:
        return self.records[-1].sweep

    @property
    def final_state(self):
        return self.states[-1] if self.states else None

    @property
    def converged(self) -> bool:
        return self.termination == "converged"

    @property
    def diverged(self) -> bool:
        return self.termination == "diverged"

    def to_dict(self, final_state_path=None, timestamp=None):
        sweeps = []
        for r in self.records:
            rec = {
                "sweep": r.sweep,
                "free_energy": r.free_energy + self.offset,
                "gap": r.gap,
                "w2_step": r.w2_step,
                "w2_star": r.w2_star,
                "residual": r.residual,
                "second_moment": r.second_moment,
                "means": r.means,
                "variances": r.variances,
            }
            if r.half_sweep_free_energies is not None:
                rec["half_sweep_free_energies"] = [f + self.offset for f in r.half_sweep_free_energies]
            sweeps.append(rec)
        return {
            "schema": "cavi-mf/report/v1",
            "config": self.config,
            "potential": self.potential_info,
            "backend": self.backend,
            "mode": self.mode,
            "termination": self.termination,
            "n_sweeps": self.n_sweeps,
            "star": {
                "source": self.star_source,
                "free_energy": None
                if self.star_free_energy is None
                else self.star_free_energy + self.offset,
            },
            "sweeps": sweeps,
            "final_state": final_state_path,
            "timing": {
                "timestamp": timestamp,
                "wall_time": [r.wall_time for r in self.records],
            },
        }

    @classmethod
    def from_dict(cls, obj):
        try:
            offset = float(obj["potential"].get("offset", 0.0))
            records = []
            walls = (obj.get("timing") or {}).get("wall_time") or []
            for k, r in enumerate(obj["sweeps"]):
                half = r.get("half_sweep_free_energies")
                records.append(SweepRecord(
                    sweep=int(r["sweep"]),
                    free_energy=float(r["free_energy"]) - offset,
                    residual=float(r["residual"]),
                    means=np.asarray(r["means"], dtype=float),
                    variances=np.asarray(r["variances"], dtype=float),
                    second_moment=float(r["second_moment"]),
                    w2_step=r["w2_step"],
                    w2_star=r["w2_star"],
                    gap=r["gap"],
                    half_sweep_free_energies=None if half is None else [f - offset for f in half],
                    wall_time=float(walls[k]) if k < len(walls) else 0.0,
                ))
            star = obj["star"]
            star_f = star.get("free_energy")
            return cls(
                backend=obj["backend"],
                mode=obj["mode"],
                records=records,
                termination=obj["termination"],
                potential_info=obj["potential"],
                offset=offset,
                star_free_energy=None if star_f is None else float(star_f) - offset,
                star_source=star.get("source", "final_state"),
                config=obj.get("config") or {},
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"malformed report: {exc}") from exc


# ---------------------------------------------------------------------------
# grid backend


def _window_estimate(p: Potential, state: ProductState, i: int):
    """Centre and scale of exp(-f_i): analytic for quadratics, else mode and curvature."""
    marginals = state.marginals
    if p.is_quadratic:
        mean, var = quadratic_conditional_moments(p.A, p.m, state.means(), i)
        return mean, math.sqrt(var)

    def f(t):
        return float(conditional_energy(p, marginals, i, np.array([t]))[0])

    cur = marginals[i]
    c0, s0 = cur.mean(), max(cur.std(), 1e-6)
    try:
        res = optimize.minimize_scalar(f, bracket=(c0 - s0, c0 + s0))
        mode = float(res.x)
    except (ValueError, RuntimeError, FloatingPointError):
        mode = c0
    if not math.isfinite(mode):
        mode = c0
    h = 0.1 * s0
    scale = s0
    for _ in range(3):
        curv = (f(mode + h) - 2.0 * f(mode) + f(mode - h)) / (h * h)
        if not (math.isfinite(curv) and curv > 0):
            break
        scale = 1.0 / math.sqrt(curv)
        if h <= 0.2 * scale:
            break
        h = 0.1 * scale
    return mode, scale


def cavi_update_coordinate(state: ProductState, p: Potential, i: int,
                           n_nodes: Optional[int] = None) -> GridMarginal:
    """New i-th marginal proportional to exp(-f_i), f_i integrated against the other marginals.

    The grid is placed at the estimated centre +- 12 scales of the new
    marginal and widened (up to five times) if mass reaches the window edge.
    """
    if state.d != p.d:
        raise DimensionMismatch(f"state has {state.d} blocks, potential has {p.d}")
    n = n_nodes or state.marginals[i].spec.n_nodes
    center, scale = _window_estimate(p, state, i)
    halfwidth = WINDOW_STDS * scale
    for attempt in range(MAX_RESIZE + 1):
        spec = GridSpec.centered(center, halfwidth, n)
        f = conditional_energy(p, state.marginals, i, spec.nodes)
        if not np.all(np.isfinite(f)):
            raise NonFiniteIntegrand(f"conditional energy of coordinate {i} is not finite")
        try:
            return from_log_density(spec, -f)
        except BoundaryMass:
            trial = from_log_density(spec, -f, check_boundary=False)
            log.debug("coordinate %d: widening window (attempt %d)", i, attempt + 1)
            dens = trial.density
            if dens[0] >= dens.max() * 0.5 or dens[-1] >= dens.max() * 0.5:
                # mode at an edge: move a full halfwidth towards it
                direction = -1.0 if dens[0] > dens[-1] else 1.0
                center = center + direction * halfwidth
            else:
                center = trial.mean()
            halfwidth *= 2.0
    raise GridOverflow(f"coordinate {i}: window still too narrow after {MAX_RESIZE} resizes")


def cavi_sweep(state: ProductState, p: Potential, trace: Optional[list] = None) -> ProductState:
    """One sequential sweep over coordinates 0..d-1.

    Coordinate i is integrated against the already-updated coordinates < i.
    If ``trace`` is a list, every intermediate state is appended to it.
    """
    for i in range(p.d):
        state = state.replace(i, cavi_update_coordinate(state, p, i))
        if trace is not None:
            trace.append(state)
    return state


def parallel_sweep(state: ProductState, p: Potential) -> ProductState:
    """Jacobi-style sweep: every coordinate integrates against the old state."""
    return ProductState(tuple(cavi_update_coordinate(state, p, i) for i in range(p.d)))


# ---------------------------------------------------------------------------
# gaussian backend


def _check_gaussian_inputs(g: GaussianState, A, m):
    A = np.asarray(A, dtype=float)
    m = np.asarray(m, dtype=float)
    if A.shape != (g.d, g.d) or m.shape != (g.d,):
        raise DimensionMismatch("A, m and the state disagree in dimension")
    if np.any(np.diag(A) <= 0) or np.linalg.eigvalsh(0.5 * (A + A.T))[0] <= 0:
        raise NotPositiveDefinite("A is not positive definite")
    return A, m


def gaussian_sweep(g: GaussianState, A, m) -> GaussianState:
    """Gauss-Seidel step on the means; variances become 1/a_ii."""
    A, m = _check_gaussian_inputs(g, A, m)
    x = np.array(g.means, dtype=float)
    for i in range(g.d):
        r = A[i] @ (x - m) - A[i, i] * (x[i] - m[i])
        x[i] = m[i] - r / A[i, i]
    return GaussianState(x, 1.0 / np.diag(A))


def gaussian_parallel_sweep(g: GaussianState, A, m) -> GaussianState:
    """Jacobi step on the means."""
    A, m = _check_gaussian_inputs(g, A, m)
    dev = g.means - m
    diag = np.diag(A)
    x = m - (A @ dev - diag * dev) / diag
    return GaussianState(x, 1.0 / diag)


def gaussian_star(p: Potential) -> GaussianState:
    """The exact mean-field optimum N(m, (A o I)^-1)."""
    return GaussianState(p.m, 1.0 / np.diag(p.A))


def grid_star(p: Potential, n_nodes: int = DEFAULT_NODES) -> ProductState:
    """Grid version of N(m, (A o I)^-1)."""
    return ProductState(tuple(
        gaussian_marginal(float(p.m[i]), 1.0 / math.sqrt(p.A[i, i]), n_nodes)
        for i in range(p.d)
    ))


# ---------------------------------------------------------------------------
# initial states


@dataclass(frozen=True)
class StandardGaussian:
    pass


@dataclass(frozen=True)
class NarrowAtPoint:
    """Stand-in for a Dirac mass: a Gaussian of std five grid cells."""

    point: tuple
    halfwidth: float = 1.0


@dataclass(frozen=True)
class FromFile:
    path: str


def init_state(p: Potential, kind=StandardGaussian(), n_nodes: int = DEFAULT_NODES) -> ProductState:
    if isinstance(kind, StandardGaussian):
        return ProductState(tuple(gaussian_marginal(0.0, 1.0, n_nodes) for _ in range(p.d)))
    if isinstance(kind, NarrowAtPoint):
        pts = np.asarray(kind.point, dtype=float).reshape(-1)
        if pts.shape != (p.d,):
            raise DimensionMismatch(f"point has {pts.shape[0]} entries, expected {p.d}")
        out = []
        for x0 in pts:
            spec = GridSpec.centered(float(x0), kind.halfwidth, n_nodes)
            out.append(gaussian_marginal(float(x0), DIRAC_CELLS * spec.step, spec=spec))
        return ProductState(tuple(out))
    if isinstance(kind, FromFile):
        state = load_state(kind.path)
        if state.d != p.d:
            raise DimensionMismatch(f"state file has {state.d} blocks, potential has {p.d}")
        return state
    raise TypeError(f"unknown init kind {kind!r}")


def init_gaussian_state(p: Potential, means=None, variances=None) -> GaussianState:
    means = np.zeros(p.d) if means is None else means
    variances = np.ones(p.d) if variances is None else variances
    return GaussianState(means, variances)


# ---------------------------------------------------------------------------
# driver


def _w2(a: State, b: State) -> float:
    return diagnostics.w2_between(a, b)


def solve(p: Potential, init: State, sched: SweepSchedule = SweepSchedule(),
          record_half_sweeps: bool = False, config: Optional[dict] = None) -> RunReport:
    """Iterate sweeps until the mean-field residual drops below ``sched.tol``.

    The reference optimum used for gaps and W2 distances is the analytic
    N(m, (A o I)^-1) for quadratic potentials, else the final state.
    """
    gaussian = isinstance(init, GaussianState)
    if gaussian and not p.is_quadratic:
        raise BackendMismatch("the gaussian backend needs a quadratic potential")
    if init.d != p.d:
        raise DimensionMismatch(f"initial state has {init.d} blocks, potential has {p.d}")
    parallel = sched.mode == "parallel"

    def record(n, state, prev, t0, half=None):
        return SweepRecord(
            sweep=n,
            free_energy=diagnostics.free_energy_core(state, p),
            residual=diagnostics.mean_field_residual(state, p),
            means=np.array(state.means if gaussian else state.means()),
            variances=np.array(state.variances if gaussian else state.variances()),
            second_moment=state.second_moment(),
            w2_step=None if prev is None else _w2(state, prev),
            half_sweep_free_energies=half,
            wall_time=time.perf_counter() - t0,
        )

    t0 = time.perf_counter()
    states = [init]
    records = [record(0, init, None, t0)]
    termination = "max_sweeps"
    state = init
    for n in range(1, sched.sweeps + 1):
        t0 = time.perf_counter()
        half = None
        if gaussian:
            step = gaussian_parallel_sweep if parallel else gaussian_sweep
            new = step(state, p.A, p.m)
        elif parallel:
            new = parallel_sweep(state, p)
        elif record_half_sweeps:
            trace = []
            new = cavi_sweep(state, p, trace=trace)
            half = [diagnostics.free_energy_core(s, p) for s in trace]
        else:
            new = cavi_sweep(state, p)
        rec = record(n, new, state, t0, half)
        states.append(new)
        records.append(rec)
        state = new
        log.debug("sweep %d: F=%.12g residual=%.3g", n, rec.free_energy, rec.residual)
        if parallel and not (rec.second_moment <= DIVERGENCE_MOMENT):
            termination = "diverged"
            break
        if rec.residual < sched.tol:
            termination = "converged"
            break

    if p.is_quadratic and termination != "diverged":
        star = gaussian_star(p) if gaussian else grid_star(p, _nodes_of(init))
        star_source = "analytic"
    else:
        star, star_source = states[-1], "final_state"
    star_f = diagnostics.free_energy_core(star, p)
    for rec, s in zip(records, states):
        rec.gap = rec.free_energy - star_f
        rec.w2_star = _w2(s, star)

    return RunReport(
        backend="gaussian" if gaussian else "grid",
        mode=sched.mode,
        records=records,
        termination=termination,
        potential_info=p.describe(),
        offset=p.offset,
        states=states,
        star_state=star,
        star_free_energy=star_f,
        star_source=star_source,
        config=dict(config or {}),
        potential=p,
    )


def _nodes_of(state: ProductState) -> int:
    return state.marginals[0].spec.n_nodes
