"""Parameter estimation from a single trajectory: loss, sweeps, refinement.

The loss compares the record against the filter's reconstruction.  Two
variants are exposed:

* RECORD_RESIDUAL: sum |I_j - <X>_c(t_j)|^2 -- experiment-realistic; its
  minimum sits at the measurement noise floor, N / (4 kappa eta dt).
* ORACLE_MEAN: sum |truth_j - <X>_c(t_j)|^2 -- available only for synthetic
  records carrying the hidden truth channel; its minimum is exactly zero at
  the true parameters with a matched initial state.

Sweep evaluations are independent per grid point and are dispatched through
joblib; results are gathered in grid order, so output is deterministic at any
worker count.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional, Sequence

import numpy as np
from joblib import Parallel, delayed

from .errors import (
    AlignmentError,
    AllPointsFailed,
    BracketCollapse,
    InvalidGrid,
    MissingTruth,
    QpeError,
)
from .models import ModelSpec, ParamPoint
from .record import TrajectoryRecord
from .sme import EstimatorRun, StepperConfig, run_estimator


class LossVariant(Enum):
    RECORD_RESIDUAL = "residual"
    ORACLE_MEAN = "oracle"


@dataclass(frozen=True)
class LossKind:
    variant: LossVariant = LossVariant.RECORD_RESIDUAL
    normalize: bool = False


@dataclass(frozen=True)
class GridSpec:
    """A uniform 1D parameter grid [lo, hi] with n points."""

    lo: float
    hi: float
    n: int

    def __post_init__(self) -> None:
        if self.n < 2:
            raise InvalidGrid(f"grid needs >= 2 points, got {self.n}")
        if not (np.isfinite(self.lo) and np.isfinite(self.hi)) or self.hi <= self.lo:
            raise InvalidGrid(f"bad grid bracket [{self.lo}, {self.hi}]")

    def values(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.n)

    @property
    def width(self) -> float:
        return self.hi - self.lo


@dataclass
class SweepContext:
    """Everything needed to (re-)evaluate a sweep; carried by LossSurface so
    refinement can re-grid without re-threading arguments."""

    model: ModelSpec
    free_params: tuple
    pinned: dict
    record: TrajectoryRecord
    kind: LossKind
    config: StepperConfig
    alpha: Optional[complex] = None
    threads: Optional[int] = None


@dataclass
class LossSurface:
    param_names: tuple
    grid: list  # list of ParamPoint
    losses: list  # float, or nan for failed points
    argmin_point: ParamPoint
    refinement_trace: list = field(default_factory=list)  # (bounds, argmin values) per round
    context: Optional[SweepContext] = None

    @property
    def best_loss(self) -> float:
        vals = np.asarray(self.losses)
        return float(np.nanmin(vals))

    def argmin_value(self, name: str) -> float:
        return self.argmin_point.values[self.param_names.index(name)]


@dataclass
class SensitivityCurve:
    grid_values: np.ndarray
    dloss: np.ndarray
    inverse_sensitivity: np.ndarray  # nan where flagged
    flagged: np.ndarray  # True where |dloss| too small to invert


def loss_eval(
    kind: LossKind,
    record: TrajectoryRecord,
    run: EstimatorRun,
    burn_in: float = 0.0,
) -> float:
    """Trajectory-matching loss over samples with t_j > burn_in."""
    if len(run.times) != len(record.times) or np.max(np.abs(run.times - record.times)) > 1e-12:
        raise AlignmentError("estimator run is not aligned to the record time grid")
    if burn_in >= record.meta.tau:
        raise ValueError("burn_in must be shorter than the record duration")
    mask = record.times > burn_in
    if kind.variant is LossVariant.ORACLE_MEAN:
        if not record.has_truth:
            raise MissingTruth("ORACLE_MEAN loss needs a record with a truth channel")
        target = record.truth
    else:
        target = record.currents
    resid = target[mask] - run.cond_means[mask]
    total = float(np.sum(resid * resid))
    if kind.normalize:
        total /= int(np.count_nonzero(mask))
    return total


def _default_threads() -> int:
    env = os.environ.get("QPE_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def _eval_point(model: ModelSpec, point: ParamPoint, ctx_record, kind, config, alpha, burn_in):
    terms = model.builder(point)
    initial = model.initial_state(alpha)
    run = run_estimator(terms, initial, config, ctx_record)
    return loss_eval(kind, ctx_record, run, burn_in)


def _eval_point_safe(model, point, record, kind, config, alpha, burn_in):
    try:
        return _eval_point(model, point, record, kind, config, alpha, burn_in), None
    except QpeError as exc:
        return float("nan"), f"{type(exc).__name__}: {exc}"


def _argmin_with_ties(points: Sequence[ParamPoint], losses: Sequence[float]) -> ParamPoint:
    vals = np.asarray(losses)
    if np.all(np.isnan(vals)):
        raise AllPointsFailed("every grid point failed to evaluate")
    best = np.nanmin(vals)
    # ties broken toward the lexicographically smallest parameter values
    candidates = [points[i].values for i in np.flatnonzero(vals == best)]
    return ParamPoint(min(candidates))


def _sweep_points(ctx: SweepContext, points: list) -> tuple[list, list]:
    n_jobs = ctx.threads or _default_threads()
    results = Parallel(n_jobs=n_jobs)(
        delayed(_eval_point_safe)(
            ctx.model, p, ctx.record, ctx.kind, ctx.config, ctx.alpha, ctx.config.burn_in_time
        )
        for p in points
    )
    losses = [r[0] for r in results]
    failures = [r[1] for r in results]
    return losses, failures


def _full_point(ctx: SweepContext, free_values: Sequence[float]) -> ParamPoint:
    """Assemble a model-arity ParamPoint from free values plus pinned ones."""
    by_name = dict(zip(ctx.free_params, free_values))
    by_name.update(ctx.pinned)
    return ParamPoint(tuple(by_name[n] for n in ctx.model.param_names))


def _resolve_pinned(model: ModelSpec, free_params: Sequence[str], pinned: Optional[dict], record) -> dict:
    free = tuple(free_params)
    for name in free:
        if name not in model.param_names:
            raise InvalidGrid(f"model {model.name!r} has no parameter {name!r}")
    out = dict(pinned or {})
    for name in model.param_names:
        if name in free:
            continue
        if name not in out:
            if name in record.meta.params:
                out[name] = float(record.meta.params[name])
            elif name in record.meta.fixed:
                # e.g. sweeping (omega0, f) jointly on a record whose
                # generator treated omega0 as a fixed parameter
                out[name] = float(record.meta.fixed[name])
            else:
                raise InvalidGrid(
                    f"parameter {name!r} is neither swept, pinned, nor present in record metadata"
                )
    return out


def sweep_1d(
    model: ModelSpec,
    free_param: str,
    grid: GridSpec,
    record: TrajectoryRecord,
    kind: LossKind,
    config: StepperConfig,
    pinned: Optional[dict] = None,
    alpha: Optional[complex] = None,
    threads: Optional[int] = None,
) -> LossSurface:
    """Evaluate the loss on a 1D grid of the free parameter.

    Non-free model parameters are pinned to ``pinned`` or, failing that, to
    the true values in the record metadata.  Failed points are kept with a
    NaN loss and excluded from the argmin.
    """
    if grid.n < 3:
        raise InvalidGrid(f"1D sweeps need >= 3 grid points, got {grid.n}")
    ctx = SweepContext(
        model=model,
        free_params=(free_param,),
        pinned=_resolve_pinned(model, (free_param,), pinned, record),
        record=record,
        kind=kind,
        config=config,
        alpha=alpha,
        threads=threads,
    )
    points = [_full_point(ctx, (v,)) for v in grid.values()]
    losses, _ = _sweep_points(ctx, points)
    surface = LossSurface(
        param_names=model.param_names,
        grid=points,
        losses=losses,
        argmin_point=_argmin_with_ties(points, losses),
        refinement_trace=[((grid.lo, grid.hi), None)],
        context=ctx,
    )
    surface.refinement_trace[0] = ((grid.lo, grid.hi), surface.argmin_point.values)
    return surface


def refine_min(surface: LossSurface, rounds: int, shrink: float) -> LossSurface:
    """Iteratively re-sweep shrinking brackets centered on the argmin.

    Each round shrinks the bracket width by ``shrink`` and re-centers it on
    the current argmin (clamped into the original bracket), keeping the point
    count of the original grid.  Raises BracketCollapse when the argmin pins
    to a bracket edge twice in a row -- the true value lies outside the
    initial grid.
    """
    if rounds < 1:
        raise InvalidGrid("rounds must be >= 1")
    if shrink <= 1:
        raise InvalidGrid("shrink factor must be > 1")
    ctx = surface.context
    if ctx is None or len(ctx.free_params) != 1:
        raise InvalidGrid("refine_min needs a 1D surface produced by sweep_1d")
    free = ctx.free_params[0]
    free_idx = ctx.model.param_names.index(free)
    (lo0, hi0), _ = surface.refinement_trace[0]
    n_points = len(surface.grid)

    def edge_pinned(value: float, lo: float, hi: float) -> bool:
        spacing = (hi - lo) / (n_points - 1)
        return value <= lo + 0.5 * spacing or value >= hi - 0.5 * spacing

    lo, hi = surface.refinement_trace[-1][0]
    best_val = surface.argmin_point.values[free_idx]
    pinned_streak = 1 if edge_pinned(best_val, lo, hi) else 0

    grid_pts = list(surface.grid)
    losses = list(surface.losses)
    trace = list(surface.refinement_trace)
    argmin = surface.argmin_point
    width = hi - lo
    for _ in range(rounds):
        width = width / shrink
        center = argmin.values[free_idx]
        lo = max(lo0, center - 0.5 * width)
        hi = min(hi0, lo + width)
        lo = hi - width
        vals = np.linspace(lo, hi, n_points)
        points = [_full_point(ctx, (v,)) for v in vals]
        new_losses, _ = _sweep_points(ctx, points)
        argmin = _argmin_with_ties(points, new_losses)
        trace.append(((lo, hi), argmin.values))
        grid_pts, losses = points, new_losses
        if edge_pinned(argmin.values[free_idx], lo, hi):
            pinned_streak += 1
            if pinned_streak >= 2:
                raise BracketCollapse(
                    f"argmin pinned to the bracket edge at {free}={argmin.values[free_idx]:.6g}; "
                    f"widen the initial grid [{lo0}, {hi0}]"
                )
        else:
            pinned_streak = 0
    return LossSurface(
        param_names=ctx.model.param_names,
        grid=grid_pts,
        losses=losses,
        argmin_point=argmin,
        refinement_trace=trace,
        context=ctx,
    )


def sensitivity(surface: LossSurface, eps: float = 1e-300) -> SensitivityCurve:
    """Central finite-difference slope of the loss and its reciprocal.

    Entries where the slope magnitude is too small to invert sensibly are
    flagged (NaN in the inverse) instead of producing infinities.
    """
    ctx = surface.context
    if ctx is None or len(ctx.free_params) != 1:
        raise InvalidGrid("sensitivity needs a 1D surface produced by sweep_1d")
    if len(surface.grid) < 3:
        raise InvalidGrid("sensitivity needs >= 3 grid points")
    idx = ctx.model.param_names.index(ctx.free_params[0])
    x = np.array([p.values[idx] for p in surface.grid])
    y = np.asarray(surface.losses, dtype=float)
    d = np.gradient(y, x)
    scale = np.nanmax(np.abs(d))
    floor = max(eps, 1e-12 * scale if scale > 0 else eps)
    flagged = ~(np.abs(d) > floor)
    inverse = np.full_like(d, np.nan)
    inverse[~flagged] = 1.0 / d[~flagged]
    return SensitivityCurve(grid_values=x, dloss=d, inverse_sensitivity=inverse, flagged=flagged)


def sweep_2d(
    model: ModelSpec,
    free_params: tuple,
    grids: tuple,
    record: TrajectoryRecord,
    kind: LossKind,
    config: StepperConfig,
    pinned: Optional[dict] = None,
    alpha: Optional[complex] = None,
    threads: Optional[int] = None,
) -> LossSurface:
    """Cartesian-product sweep over two parameters, row-major in the first."""
    if len(free_params) != 2 or len(grids) != 2:
        raise InvalidGrid("sweep_2d needs exactly two free parameters and two grids")
    for g in grids:
        if g.n < 2:
            raise InvalidGrid("both grids need >= 2 points")
    ctx = SweepContext(
        model=model,
        free_params=tuple(free_params),
        pinned=_resolve_pinned(model, free_params, pinned, record),
        record=record,
        kind=kind,
        config=config,
        alpha=alpha,
        threads=threads,
    )
    v1 = np.linspace(grids[0].lo, grids[0].hi, grids[0].n)
    v2 = np.linspace(grids[1].lo, grids[1].hi, grids[1].n)
    points = [_full_point(ctx, (a, b)) for a in v1 for b in v2]
    losses, _ = _sweep_points(ctx, points)
    return LossSurface(
        param_names=model.param_names,
        grid=points,
        losses=losses,
        argmin_point=_argmin_with_ties(points, losses),
        refinement_trace=[(((grids[0].lo, grids[0].hi), (grids[1].lo, grids[1].hi)), None)],
        context=ctx,
    )


class Perturbation(Enum):
    ALPHA = "alpha"
    OMEGA0 = "omega0"


@dataclass(frozen=True)
class EstimatorSettings:
    """Sweep/refinement settings for scans that re-estimate f per point."""

    grid: GridSpec = GridSpec(0.0, 2.0, 41)
    rounds: int = 3
    shrink: float = 10.0


def estimate_force(
    model: ModelSpec,
    record: TrajectoryRecord,
    kind: LossKind,
    config: StepperConfig,
    settings: EstimatorSettings,
    alpha: Optional[complex] = None,
    threads: Optional[int] = None,
) -> float:
    surface = sweep_1d(model, "f", settings.grid, record, kind, config, alpha=alpha, threads=threads)
    refined = refine_min(surface, settings.rounds, settings.shrink)
    return refined.argmin_value("f")


def robustness_scan(
    model: ModelSpec,
    record: TrajectoryRecord,
    perturb: Perturbation,
    epsilons: Sequence[float],
    settings: EstimatorSettings,
    kind: LossKind = LossKind(LossVariant.ORACLE_MEAN),
    config: Optional[StepperConfig] = None,
    alpha0: Optional[complex] = None,
    threads: Optional[int] = None,
) -> list:
    """Re-estimate f with a perturbed initial amplitude or trap frequency.

    Returns [(epsilon, f_est, percent_error)] with percent_error relative to
    the true force in the record metadata.
    """
    from .models import get_model

    config = config or StepperConfig(dt=record.meta.dt)
    f0 = float(record.meta.params["f"])
    base_alpha = alpha0 if alpha0 is not None else complex(record.meta.fixed.get("alpha0", 0.0))
    rows = []
    for eps in epsilons:
        if perturb is Perturbation.ALPHA:
            scan_model = model
            alpha = base_alpha * (1.0 + eps)
        else:
            omega0 = float(model.fixed["omega0"]) * (1.0 + eps)
            scan_model = get_model(model.name, {**{k: v for k, v in model.fixed.items()}, "omega0": omega0})
            alpha = base_alpha
        f_est = estimate_force(scan_model, record, kind, config, settings, alpha=alpha, threads=threads)
        rows.append((float(eps), float(f_est), 100.0 * abs(f_est - f0) / abs(f0)))
    return rows
