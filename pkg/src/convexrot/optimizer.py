"""
Outer shape optimization loop: gradient, deformation field, line search,
boundary update. The new domain is meshed by the objective's template.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from convexrot.deformation import UzawaError, deformation_field, remove_dilation
from convexrot.eigen import SolverError
from convexrot.geometry import (
    FEASIBILITY_TOL,
    GeneratrixBoundary,
    GeometryError,
    polygon_weighted_area,
    repair_convexity,
)
from convexrot.mesh import MeshError
from convexrot.shape_gradient import Evaluation, apply_functional, shape_gradient_fd

log = logging.getLogger(__name__)

STATIONARY = "STATIONARY"
LINESEARCH_FAILED = "LINESEARCH_FAILED"
MAX_ITER = "MAX_ITER"

# relative change of the objective below which values count as equal
# (solves of one domain from different starting vectors differ by round-off)
OBJECTIVE_NOISE = 1e-12


@dataclass
class LineSearchConfig:
    """
    Parameters of the outer loop.

    Trial steps are tau0**k, k = 0, 1, ...; the convexity rows of the
    deformation problem are linearized with step ``t0`` (the first trial
    step, 1, by default). With ``volume_correction`` a multiple of the
    position field is added to the boundary field so that its first-order
    volume change after a step t0 restores the target volume.
    """

    tau0: float = 0.5
    tau_min: float = 1e-6
    vol_tol: float = 1e-2
    eps_stop: float = 1e-6
    max_iter: int = 500
    t0: float = 1.0
    glide: str = "axis"
    uzawa_tol: float = 1e-8
    volume_correction: bool = True
    repair_tol: float = 1e-3

    def __post_init__(self):
        if not (0.0 < self.tau_min < self.tau0 < 1.0):
            raise ValueError("need 0 < tau_min < tau0 < 1")
        if (self.vol_tol <= 0 or self.eps_stop < 0 or self.max_iter < 1 or self.t0 <= 0
                or self.repair_tol < 0):
            raise ValueError("invalid line search configuration")


@dataclass
class TraceRecord:
    iter: int
    objective: float
    grad_norm: float
    tau: float
    volume: float
    boundary: GeneratrixBoundary
    termination: str = ""


@dataclass
class OptimizationTrace:
    records: list[TraceRecord] = field(default_factory=list)
    termination: str = ""
    target_volume: float = float("nan")

    @property
    def objectives(self) -> np.ndarray:
        return np.array([r.objective for r in self.records])

    @property
    def volumes(self) -> np.ndarray:
        return np.array([r.volume for r in self.records])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iter", "objective", "grad_norm", "tau", "volume", "termination"])
            for r in self.records:
                w.writerow([r.iter, f"{r.objective:.12g}", f"{r.grad_norm:.12g}", f"{r.tau:.12g}",
                            f"{r.volume:.12g}", r.termination])


@dataclass(frozen=True)
class LineSearchResult:
    tau: float
    boundary: GeneratrixBoundary
    evaluation: Evaluation
    trials: int


def _volume(nodes) -> float:
    return 2.0 * np.pi * polygon_weighted_area(nodes)


def line_search(boundary: GeneratrixBoundary, field, objective, config: LineSearchConfig,
                current: Evaluation | None = None, target_volume: float | None = None):
    """
    First step tau = tau0**k accepted by all four conditions, or None.

    The conditions are: the moved boundary is simple; every convexity residual
    is at most the feasibility tolerance; the objective on the new mesh is
    strictly smaller (beyond relative round-off ``OBJECTIVE_NOISE``); the
    volume differs from ``target_volume`` (default: the current volume) by
    at most ``vol_tol`` relative. Small convexity violations are first
    repaired if ``config.repair_tol`` > 0.

    Parameters
    ----------
    field : (N, 2) displacement of the boundary nodes.
    """
    V = np.asarray(getattr(field, "boundary_values", field), dtype=float)
    current = current or objective.evaluate(boundary)
    vref = _volume(boundary.nodes) if target_volume is None else target_volume
    x = boundary.nodes
    k, tau = 0, 1.0
    while tau >= config.tau_min:
        y = x + tau * V
        y[0, 0] = y[-1, 0] = 0.0
        if config.repair_tol > 0:
            fixed = repair_convexity(y, config.repair_tol)
            y = y if fixed is None else fixed
        ok = False
        try:
            trial = GeneratrixBoundary(y)
            ok = (not trial.is_self_intersecting()
                  and np.all(trial.convexity_residuals() <= FEASIBILITY_TOL)
                  and abs(_volume(y) - vref) <= config.vol_tol * abs(vref))
            if ok:
                ev = objective.evaluate(trial, warm=current)
                ok = ev.value < current.value - OBJECTIVE_NOISE * abs(current.value)
        except (GeometryError, MeshError, SolverError):
            ok = False
        if ok:
            return LineSearchResult(tau, trial, ev, k + 1)
        k += 1
        tau = config.tau0 ** k
    return None


def optimize(initial_boundary: GeneratrixBoundary, objective, config: LineSearchConfig | None = None,
             target_volume: float | None = None, callback=None):
    """
    Minimize ``objective`` over convex generatrices of (nearly) fixed volume.

    Parameters
    ----------
    initial_boundary : feasible boundary whose node count matches the
        objective's mesh template.
    objective : object with ``evaluate(boundary, warm=None) -> Evaluation``
        returning the mesh it used.
    target_volume : defaults to the volume of ``initial_boundary``.
    callback : called with each TraceRecord as it is appended.

    Returns
    -------
    (final_boundary, final_evaluation, trace)
    """
    config = config or LineSearchConfig()
    initial_boundary.check_feasible()
    boundary = initial_boundary
    vtarget = _volume(boundary.nodes) if target_volume is None else float(target_volume)
    trace = OptimizationTrace(target_volume=vtarget)
    current = objective.evaluate(boundary)
    tau = 0.0

    def record(it, dJ, termination=""):
        rec = TraceRecord(it, current.value, abs(dJ), tau, _volume(boundary.nodes), boundary, termination)
        trace.records.append(rec)
        if callback is not None:
            callback(rec)

    for it in range(config.max_iter):
        grad = shape_gradient_fd(boundary, objective, base=current)
        try:
            fld, _, _ = deformation_field(current.mesh, grad, boundary, config.t0, config.glide,
                                          tol=config.uzawa_tol)
        except UzawaError as exc:
            log.warning("deformation solve failed at iteration %d: %s", it, exc)
            record(it, np.nan, LINESEARCH_FAILED)
            trace.termination = LINESEARCH_FAILED
            return boundary, current, trace
        V = fld.boundary_values
        if config.volume_correction:
            V, _ = remove_dilation(boundary, V, vtarget, config.t0)
        dJ = apply_functional(grad, V)
        if abs(dJ) <= config.eps_stop:
            record(it, dJ, STATIONARY)
            trace.termination = STATIONARY
            return boundary, current, trace
        record(it, dJ)
        ls = line_search(boundary, V, objective, config, current, vtarget)
        if ls is None:
            trace.records[-1].termination = LINESEARCH_FAILED
            trace.termination = LINESEARCH_FAILED
            return boundary, current, trace
        log.info("iter %d  J=%.10g  |dJ|=%.3e  tau=%.3g", it, current.value, abs(dJ), ls.tau)
        boundary, current, tau = ls.boundary, ls.evaluation, ls.tau

    record(config.max_iter, np.nan, MAX_ITER)
    trace.termination = MAX_ITER
    return boundary, current, trace
