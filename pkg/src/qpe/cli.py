"""Command-line pipelines: simulate records, estimate parameters, analyze.

Subcommands: simulate, estimate, sweep2d, robustness, spectrum, qcrb.
Every output file starts with a JSON header embedding the effective run
configuration (threads excluded), so outputs are byte-reproducible from
their own header at any worker count.

Exit codes: 2 usage / bad flags, 3 numerical blowup, 4 data problems
(missing truth channel, malformed files), 5 search failures (bracket
collapse, all grid points failed).
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys

import numpy as np

from . import estimate as est
from . import spectral
from .errors import (
    AlignmentError,
    AllPointsFailed,
    BracketCollapse,
    DtMismatch,
    EmptyRecord,
    FormatError,
    InvalidGrid,
    InvalidParam,
    MissingTruth,
    NumericalBlowup,
    TooFewSamples,
)
from .models import get_model, model_names
from .record import read_record, write_record
from .sme import StepperConfig, simulate_record, run_estimator
from .tables import write_table

EXIT_USAGE = 2
EXIT_NUMERIC = 3
EXIT_DATA = 4
EXIT_SEARCH = 5

_USAGE_ERRORS = (InvalidParam, InvalidGrid, ValueError)
_DATA_ERRORS = (MissingTruth, FormatError, EmptyRecord, DtMismatch, AlignmentError,
                TooFewSamples, FileNotFoundError)
_SEARCH_ERRORS = (BracketCollapse, AllPointsFailed)


def _parse_kv(pairs) -> dict:
    out = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise InvalidParam(f"expected key=value, got {pair!r}")
        k, v = pair.split("=", 1)
        out[k.strip()] = float(v)
    return out


def _parse_grid(text: str) -> est.GridSpec:
    try:
        lo, hi, n = text.split(":")
        return est.GridSpec(float(lo), float(hi), int(n))
    except ValueError as exc:
        raise InvalidGrid(f"expected lo:hi:n, got {text!r}") from exc


def _parse_range(text: str) -> np.ndarray:
    try:
        lo, hi, n = text.split(":")
        return np.linspace(float(lo), float(hi), int(n))
    except ValueError as exc:
        raise InvalidGrid(f"expected lo:hi:n, got {text!r}") from exc


def _threads(args) -> int:
    if getattr(args, "threads", None):
        return max(1, args.threads)
    env = os.environ.get("QPE_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def _config_header(args, skip=("threads", "config", "func")) -> dict:
    out = {}
    for k, v in sorted(vars(args).items()):
        if k in skip or v is None:
            continue
        out[k] = v if not isinstance(v, (list, tuple)) else list(v)
    return out


def _loss_kind(name: str, normalize: bool = False) -> est.LossKind:
    try:
        variant = {"oracle": est.LossVariant.ORACLE_MEAN,
                   "residual": est.LossVariant.RECORD_RESIDUAL}[name]
    except KeyError:
        raise InvalidParam(f"--loss must be 'oracle' or 'residual', got {name!r}")
    return est.LossKind(variant, normalize=normalize)


def _model_from_record(rec, model_name=None, fixed_overrides=None):
    name = model_name or rec.meta.model
    fixed = {k: v for k, v in rec.meta.fixed.items() if k != "alpha0"}
    model = get_model(name, None)
    usable = {k: v for k, v in fixed.items() if k in model.fixed}
    usable.update(fixed_overrides or {})
    alpha0 = complex(rec.meta.fixed.get("alpha0", 0.0))
    return get_model(name, usable, alpha0=alpha0)


def cmd_simulate(args) -> int:
    params = _parse_kv(args.param)
    fixed = _parse_kv(args.fixed)
    if args.dim is not None:
        fixed["dim"] = args.dim
    model = get_model(args.model, fixed, alpha0=args.alpha0)
    point = model.point(**params)
    terms = model.builder(point)
    config = StepperConfig(dt=args.dt)
    rec = simulate_record(
        terms,
        model.initial_state(),
        config,
        args.tau,
        seed=args.seed,
        emit_truth=args.emit_truth,
        model_name=model.name,
        params=params,
        fixed={**model.fixed, "alpha0": args.alpha0},
    )
    write_record(rec, args.out)
    noise_level = 1.0 / math.sqrt(4.0 * terms.kappa * terms.eta * config.dt)
    print(f"wrote {args.out}: N={len(rec)} mean_current={rec.currents.mean():.6g} "
          f"noise_level={noise_level:.6g} (per-sample std)")
    return 0


def cmd_estimate(args) -> int:
    rec = read_record(args.traj)
    model = _model_from_record(rec)
    kind = _loss_kind(args.loss, args.normalize)
    config = StepperConfig(dt=rec.meta.dt, burn_in_time=args.burn_in)
    grid = _parse_grid(args.grid)
    surface = est.sweep_1d(model, args.param, grid, rec, kind, config, threads=_threads(args))
    final = est.refine_min(surface, args.refine, args.shrink) if args.refine > 0 else surface

    header = _config_header(args)
    idx = model.param_names.index(args.param)
    rows = [(p.values[idx], loss) for p, loss in zip(surface.grid, surface.losses)]
    write_table(args.out, header, (args.param, "loss"), rows)
    summary = {
        "argmin": {args.param: final.argmin_value(args.param)},
        "best_loss": final.best_loss,
        "final_bracket": list(final.refinement_trace[-1][0]),
        "rounds": len(final.refinement_trace) - 1,
        "config": header,
    }
    summary_path = os.path.splitext(args.out)[0] + ".json"
    with open(summary_path, "w") as fh:
        json.dump(summary, fh, sort_keys=True, indent=2)
        fh.write("\n")
    print(f"argmin {args.param}={final.argmin_value(args.param):.10g} "
          f"best_loss={final.best_loss:.6g} -> {args.out}, {summary_path}")
    return 0


def cmd_sweep2d(args) -> int:
    rec = read_record(args.traj)
    names = tuple(args.params.split(","))
    if len(names) != 2:
        raise InvalidGrid(f"--params needs two comma-separated names, got {args.params!r}")
    model = _model_from_record(rec, model_name=args.model)
    kind = _loss_kind(args.loss)
    config = StepperConfig(dt=rec.meta.dt, burn_in_time=args.burn_in)
    surface = est.sweep_2d(
        model, names, (_parse_grid(args.grid1), _parse_grid(args.grid2)),
        rec, kind, config, threads=_threads(args),
    )
    header = _config_header(args)
    i1 = model.param_names.index(names[0])
    i2 = model.param_names.index(names[1])
    rows = [(p.values[i1], p.values[i2], loss) for p, loss in zip(surface.grid, surface.losses)]
    write_table(args.out, header, (names[0], names[1], "loss"), rows)
    print(f"argmin ({names[0]}, {names[1]}) = "
          f"({surface.argmin_point.values[i1]:.10g}, {surface.argmin_point.values[i2]:.10g}) "
          f"best_loss={surface.best_loss:.6g} -> {args.out}")
    return 0


def cmd_robustness(args) -> int:
    rec = read_record(args.traj)
    model = _model_from_record(rec)
    kind = _loss_kind(args.loss)
    config = StepperConfig(dt=rec.meta.dt, burn_in_time=args.burn_in)
    perturb = est.Perturbation(args.perturb)
    settings = est.EstimatorSettings(grid=_parse_grid(args.grid), rounds=args.refine, shrink=args.shrink)
    rows = est.robustness_scan(
        model, rec, perturb, list(_parse_range(args.range)), settings,
        kind=kind, config=config, threads=_threads(args),
    )
    write_table(args.out, _config_header(args), ("epsilon", "f_est", "percent_error"), rows)
    print(f"{len(rows)} rows -> {args.out}")
    return 0


def cmd_spectrum(args) -> int:
    rec = read_record(args.traj)
    model = _model_from_record(rec)
    params = _parse_kv(args.param) if args.param else {
        k: float(v) for k, v in rec.meta.params.items()}
    point = model.point(**params)
    config = StepperConfig(dt=rec.meta.dt, burn_in_time=args.burn_in)
    run = run_estimator(model.builder(point), model.initial_state(), config, rec)
    mask = rec.times > args.burn_in
    resid = rec.currents[mask] - run.cond_means[mask]
    psd = spectral.periodogram(resid, rec.meta.dt, segments=args.segments)
    header = _config_header(args)
    # white noise of per-sample variance 1/(4 kappa eta dt) has one-sided
    # PSD level 2 v dt = 1/(2 kappa eta)
    header["imprecision_level"] = 1.0 / (2.0 * rec.meta.kappa * rec.meta.eta)
    write_table(args.out, header, ("omega", "psd"), zip(psd.frequencies, psd.values))
    print(f"{len(psd.frequencies)} bins -> {args.out}")
    return 0


def cmd_qcrb(args) -> int:
    omega = np.linspace(args.omega_min, args.omega_max, args.n)
    chi_sq = spectral.Psd(omega, spectral.damped_oscillator_susceptibility_sq(
        omega, args.omega0, args.gamma))
    s_fba = spectral.Psd(omega, np.full_like(omega, args.s_fba))
    s_z = spectral.Psd(omega, np.full_like(omega, args.s_z))
    s_f = spectral.SYMBOLIC_INFINITE if args.s_f == "inf" else spectral.Psd(
        omega, np.full_like(omega, float(args.s_f)))
    inputs = spectral.QcrbInputs(chi_m_sq=chi_sq, s_fba=s_fba, s_z=s_z, s_f=s_f)
    bound = spectral.qcrb_spectral_bound(inputs)
    band = (omega[0], omega[-1])
    half_width = math.pi / args.tau  # integration bandwidth limited by 1/tau
    v_smooth = spectral.smoothing_variance_bound(s_z, s_f, band)
    v_band = spectral.bandwidth_variance(s_z, spectral.indicator_bandwidth(half_width), band)
    header = _config_header(args)
    header["smoothing_variance_bound"] = v_smooth
    header["bandwidth_variance"] = v_band
    write_table(args.out, header, ("omega", "qcrb_bound", "s_z"),
                zip(omega, bound.values, s_z.values))
    print(f"V_smoothing={v_smooth:.6g} V_bandwidth={v_band:.6g} -> {args.out}")
    return 0


def _load_config_argv(argv):
    """Expand ``--config FILE`` into synthetic flags placed before the real
    ones (so explicit flags win).  File format: one ``key = value`` per line,
    '#' comments; boolean keys take true/false."""
    if "--config" not in argv:
        return argv
    i = argv.index("--config")
    try:
        path = argv[i + 1]
    except IndexError:
        raise InvalidParam("--config needs a file path")
    rest = argv[:i] + argv[i + 2:]
    extra = []
    with open(path) as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise FormatError(f"config line without '=': {line!r}")
            key, val = (s.strip() for s in line.split("=", 1))
            flag = "--" + key.replace("_", "-")
            if val.lower() in ("true", "false"):
                if val.lower() == "true":
                    extra.append(flag)
            else:
                extra.extend([flag, val])
    # subcommand first, then config-derived flags, then explicit flags
    return rest[:1] + extra + rest[1:]


def _add_common(p):
    p.add_argument("--threads", type=int, default=None,
                   help="sweep workers (default: QPE_THREADS or all cores)")
    p.add_argument("--config", help="key=value config file; explicit flags override")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qpe", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="synthesize a measurement record")
    p.add_argument("--model", required=True)
    p.add_argument("--param", action="append", metavar="K=V", help="true parameter value(s)")
    p.add_argument("--fixed", action="append", metavar="K=V", help="fixed-parameter overrides")
    p.add_argument("--dt", type=float, default=1e-3)
    p.add_argument("--tau", type=float, default=20.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dim", type=int, default=None)
    p.add_argument("--alpha0", type=float, default=0.0, help="initial coherent amplitude")
    p.add_argument("--emit-truth", action="store_true")
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="1D loss sweep with refinement")
    p.add_argument("--traj", required=True)
    p.add_argument("--param", required=True, help="free parameter name")
    p.add_argument("--grid", required=True, metavar="LO:HI:N")
    p.add_argument("--loss", default="oracle", help="oracle|residual")
    p.add_argument("--normalize", action="store_true")
    p.add_argument("--refine", type=int, default=0)
    p.add_argument("--shrink", type=float, default=10.0)
    p.add_argument("--burn-in", type=float, default=0.0)
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("sweep2d", help="joint 2D loss sweep")
    p.add_argument("--traj", required=True)
    p.add_argument("--params", required=True, metavar="NAME,NAME")
    p.add_argument("--model", default=None, help="override model (e.g. levitated_joint)")
    p.add_argument("--grid1", required=True, metavar="LO:HI:N")
    p.add_argument("--grid2", required=True, metavar="LO:HI:N")
    p.add_argument("--loss", default="oracle")
    p.add_argument("--burn-in", type=float, default=0.0)
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_sweep2d)

    p = sub.add_parser("robustness", help="estimation error under model perturbations")
    p.add_argument("--traj", required=True)
    p.add_argument("--perturb", required=True, choices=["alpha", "omega0"])
    p.add_argument("--range", required=True, metavar="LO:HI:N", help="relative perturbations")
    p.add_argument("--grid", default="0:2:21", metavar="LO:HI:N")
    p.add_argument("--loss", default="oracle")
    p.add_argument("--refine", type=int, default=3)
    p.add_argument("--shrink", type=float, default=10.0)
    p.add_argument("--burn-in", type=float, default=0.0)
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_robustness)

    p = sub.add_parser("spectrum", help="Welch PSD of the record residual")
    p.add_argument("--traj", required=True)
    p.add_argument("--param", action="append", metavar="K=V",
                   help="filter parameters (default: record truth)")
    p.add_argument("--segments", type=int, default=16)
    p.add_argument("--burn-in", type=float, default=0.0)
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_spectrum)

    p = sub.add_parser("qcrb", help="spectral bounds on force-estimation error")
    p.add_argument("--omega-min", type=float, default=-20.0)
    p.add_argument("--omega-max", type=float, default=20.0)
    p.add_argument("--n", type=int, default=2001)
    p.add_argument("--omega0", type=float, default=2.0 * math.pi)
    p.add_argument("--gamma", type=float, default=0.1, help="susceptibility damping")
    p.add_argument("--s-fba", type=float, default=1.0)
    p.add_argument("--s-z", type=float, default=1.0)
    p.add_argument("--s-f", default="inf", help="constant prior spectrum or 'inf'")
    p.add_argument("--tau", type=float, default=20.0, help="trajectory length (sets bandwidth 1/tau)")
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_qcrb)

    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        argv = _load_config_argv(argv)
        args = parser.parse_args(argv)
        return args.func(args)
    except _USAGE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalBlowup as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except _DATA_ERRORS as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except _SEARCH_ERRORS as exc:
        print(f"search error: {exc}", file=sys.stderr)
        return EXIT_SEARCH


if __name__ == "__main__":
    sys.exit(main())
