"""Command-line interface: ``wrht solve|calibrate|detect|baseline|simulate``.

Settings come from built-in defaults, then an optional flat ``key = value``
config file, then command-line flags. Reports are JSON with every real
number written to 17 significant digits, so reruns with the same inputs
and seed are byte-identical.

Exit codes: 0 success, 1 degenerate or infeasible math input, 2 malformed
input or output.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from .detector import build, load_model, save_model
from .distributions import NORM_KINDS, EmpiricalDistribution
from .divergence import FAMILIES
from .lfd import LfdProblem, SolverConfig, solve
from .sequential import (
    NULL_RUN,
    STREAM,
    CalibrationConfig,
    StreamSpec,
    alarm_threshold,
    calibrate_radius,
    cusum_max,
    cusum_run,
    evaluate_runs,
    hotelling_fit,
    hotelling_score,
    make_report,
    rng_for,
    robust_scores,
    synth_stream,
)

logger = logging.getLogger(__name__)

__all__ = ["InputError", "RunConfig", "parse_samples_csv", "load_config", "dumps", "main"]

# rng purpose tags local to the simulator
_CALIBRATION_DATA = 10
_NULL_STREAM = 11


class InputError(Exception):
    """Malformed or unreadable input (exit code 2)."""


# ---------------------------------------------------------------------------
# CSV and JSON
# ---------------------------------------------------------------------------


def parse_samples_csv(path, has_header: bool = False) -> np.ndarray:
    """Read one sample per row; returns an ``(n, d)`` float array.

    Numbers use a dot as decimal separator whatever the locale. Blank lines
    are skipped.
    """
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror or exc}") from None
    start = 1 if has_header else 0
    data = []
    width = None
    for line_no, row in enumerate(rows[start:], start=start + 1):
        if not row or all(not cell.strip() for cell in row):
            continue
        if width is None:
            width = len(row)
        elif len(row) != width:
            raise InputError(
                f"{path}: row {line_no} has {len(row)} columns, expected {width}"
            )
        values = []
        for col_no, cell in enumerate(row, start=1):
            try:
                # float() never consults the locale
                values.append(float(cell.strip()))
            except ValueError:
                raise InputError(
                    f"{path}: non-numeric value {cell.strip()!r} at row {line_no}, column {col_no}"
                ) from None
        data.append(values)
    if not data:
        raise InputError(f"{path}: no samples")
    arr = np.array(data, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise InputError(f"{path}: samples must be finite")
    return arr


def _json_value(obj) -> str:
    if obj is None or obj is True or obj is False:
        return json.dumps(obj)
    if isinstance(obj, (bool, np.bool_)):
        return json.dumps(bool(obj))
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return format(x, ".17g") if math.isfinite(x) else "null"
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        items = (
            f"{json.dumps(str(k))}: {_json_value(v)}"
            for k, v in sorted(obj.items(), key=lambda kv: str(kv[0]))
        )
        return "{" + ", ".join(items) + "}"
    if isinstance(obj, np.ndarray):
        return _json_value(obj.tolist())
    if isinstance(obj, (list, tuple)):
        return "[" + ", ".join(_json_value(v) for v in obj) + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(obj) -> str:
    """Deterministic JSON text: sorted keys, 17-significant-digit reals."""
    return _json_value(obj) + "\n"


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RunConfig:
    family: str = "exp"
    norm: str = "l2"
    theta1: float | None = None
    theta2: float | None = None
    auto_theta: bool = False
    alpha: float = 0.05
    alphas: tuple[float, ...] = ()
    seed: int = 0
    max_iters: int = 5000
    gap_tol: float = 1e-6
    window_size: int = 20
    bootstrap_reps: int = 50
    confidence: float = 0.9
    divergence_tol: float = 0.05
    header: bool = False
    threshold: float | None = None
    null_reps: int = 200
    change_time: int | None = None
    ridge: float | None = None
    runs: int = 100
    pre_length: int = 200
    post_length: int = 200
    dim: int = 2
    shift: float = 2.0
    cov_scale: float = 1.0
    calibration_size: int = 200

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise InputError(f"unknown family {self.family!r}; expected one of {FAMILIES}")
        if self.norm not in NORM_KINDS:
            raise InputError(f"unknown norm {self.norm!r}; expected one of {NORM_KINDS}")
        for a in (self.alpha, *self.alphas):
            if not 0.0 < a < 1.0:
                raise InputError("alpha must lie in (0, 1)")

    def solver(self) -> SolverConfig:
        return SolverConfig(max_iters=self.max_iters, gap_tol=self.gap_tol, seed=self.seed)

    def calibration(self) -> CalibrationConfig:
        return CalibrationConfig(
            window_size=self.window_size,
            bootstrap_reps=self.bootstrap_reps,
            confidence=self.confidence,
            divergence_tol=self.divergence_tol,
            seed=self.seed,
        )


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(key: str, raw):
    if raw is None or not isinstance(raw, str):
        return raw
    kind = _FIELD_TYPES[key]
    text = raw.strip()
    try:
        if kind == "bool":
            low = text.lower()
            if low not in ("1", "0", "true", "false", "yes", "no"):
                raise ValueError(text)
            return low in ("1", "true", "yes")
        if kind == "tuple[float, ...]":
            return tuple(float(t) for t in text.replace(";", ",").split(",") if t.strip())
        if text.lower() in ("none", "auto", ""):
            if "None" in kind:
                return None
        if kind.startswith("int"):
            return int(text)
        if kind.startswith("float"):
            return float(text)
    except ValueError:
        raise InputError(f"invalid value {raw!r} for {key}") from None
    return text


def load_config(path) -> dict:
    """Parse a flat ``key = value`` file; ``#`` starts a comment.

    Keys are :class:`RunConfig` field names. ``theta`` sets both radii, and
    ``theta = auto`` turns on calibration.
    """
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror or exc}") from None
    out = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InputError(f"{path}: line {line_no} is not key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.replace("-", "_")
        if key == "theta":
            # shorthand: one radius for both balls, or "auto" for calibration
            if value.lower() == "auto":
                out["auto_theta"] = True
            else:
                out["theta1"] = out["theta2"] = _coerce("theta1", value)
            continue
        if key not in _FIELD_TYPES:
            raise InputError(f"{path}: unknown key {key!r} on line {line_no}")
        out[key] = _coerce(key, value)
    return out


def _resolve_config(args) -> RunConfig:
    values = {}
    if args.config:
        values.update(load_config(args.config))
    for name in _FIELD_TYPES:
        flag = getattr(args, name, None)
        if flag is not None:
            values[name] = _coerce(name, flag)
    return RunConfig(**values)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def _thetas(cfg: RunConfig, q1: np.ndarray):
    if cfg.auto_theta or cfg.theta1 is None or cfg.theta2 is None:
        if not cfg.auto_theta and (cfg.theta1 is not None or cfg.theta2 is not None):
            raise InputError("give both --theta1 and --theta2, or --auto-theta")
        if not cfg.auto_theta:
            raise InputError("radii missing: give --theta1 and --theta2, or --auto-theta")
        res = calibrate_radius(q1, cfg.family, cfg.calibration(), cfg.norm, cfg.solver())
        return res.theta, res.theta
    return float(cfg.theta1), float(cfg.theta2)


def _solve_samples(cfg: RunConfig, q1: np.ndarray, q2: np.ndarray):
    if q1.shape[1] != q2.shape[1]:
        raise InputError(
            f"dimension mismatch: first sample has d={q1.shape[1]}, second has d={q2.shape[1]}"
        )
    theta1, theta2 = _thetas(cfg, q1)
    problem = LfdProblem.from_samples(
        EmpiricalDistribution.uniform(q1),
        EmpiricalDistribution.uniform(q2),
        theta1,
        theta2,
        cfg.family,
        cfg.norm,
    )
    sol = solve(problem, cfg.solver())
    return problem, sol, build(sol, cfg.family, cfg.norm)


def cmd_solve(args, cfg: RunConfig) -> dict:
    q1 = parse_samples_csv(args.q1, cfg.header)
    q2 = parse_samples_csv(args.q2, cfg.header)
    problem, sol, model = _solve_samples(cfg, q1, q2)
    if args.save_model:
        save_model(model, args.save_model)
    return {
        "objective": sol.objective,
        "divergence": sol.divergence,
        "fw_gap": sol.fw_gap,
        "iterations": sol.iterations,
        "converged": sol.converged,
        "theta": [problem.theta1, problem.theta2],
        "family": cfg.family,
        "norm": cfg.norm,
        "seed": cfg.seed,
        "p1": sol.p1,
        "p2": sol.p2,
        "support": problem.pool.points,
        "phi": model.phi,
    }


def cmd_calibrate(args, cfg: RunConfig) -> dict:
    data = parse_samples_csv(args.data, cfg.header)
    res = calibrate_radius(data, cfg.family, cfg.calibration(), cfg.norm, cfg.solver(), full_curve=True)
    return {
        "theta": res.theta,
        "qualified": res.qualified,
        "grid": list(res.grid),
        "quantile_curve": list(res.quantiles),
        "family": cfg.family,
        "norm": cfg.norm,
        "window_size": cfg.window_size,
        "bootstrap_reps": cfg.bootstrap_reps,
        "confidence": cfg.confidence,
        "divergence_tol": cfg.divergence_tol,
        "seed": cfg.seed,
    }


def _bootstrap_null(train: np.ndarray, length: int, reps: int, seed: int, score) -> list[float]:
    """Run statistics on pre-change streams resampled from the training rows."""
    out = []
    for r in range(reps):
        rng = rng_for(seed, NULL_RUN, r)
        out.append(score(train[rng.integers(0, train.shape[0], length)]))
    return out


def _report_dict(report, extra=None) -> dict:
    out = {
        "method": report.method,
        "alarm_time": report.alarm_time,
        "threshold": report.threshold,
        "truth_change_time": report.truth_change_time,
        "delay": report.delay,
        "false_alarm": report.false_alarm,
        "per_step_stat": report.per_step_stat,
    }
    out.update(extra or {})
    return out


def cmd_detect(args, cfg: RunConfig) -> dict:
    if args.model:
        try:
            model = load_model(args.model)
        except OSError as exc:
            raise InputError(f"{args.model}: {exc.strerror or exc}") from None
        except ValueError as exc:
            raise InputError(str(exc)) from None
        null_rows = model.pool.points[: model.pool.n1]
    else:
        if not (args.q1 and args.q2):
            raise InputError("detect needs --model or both --q1 and --q2")
        q1 = parse_samples_csv(args.q1, cfg.header)
        q2 = parse_samples_csv(args.q2, cfg.header)
        _, _, model = _solve_samples(cfg, q1, q2)
        if args.save_model:
            save_model(model, args.save_model)
        null_rows = q1
    if args.null_data:
        null_rows = parse_samples_csv(args.null_data, cfg.header)
        if null_rows.shape[1] != model.dim:
            raise InputError(f"dimension mismatch: model has d={model.dim}, null data has d={null_rows.shape[1]}")
    elif cfg.threshold is None:
        logger.warning(
            "threshold from resampled training atoms is optimistic; pass --null-data or --threshold"
        )
    stream = parse_samples_csv(args.stream, cfg.header)
    if stream.shape[1] != model.dim:
        raise InputError(f"dimension mismatch: model has d={model.dim}, stream has d={stream.shape[1]}")
    scores = robust_scores(model, stream)
    threshold = cfg.threshold
    if threshold is None:
        maxima = _bootstrap_null(
            null_rows,
            stream.shape[0],
            cfg.null_reps,
            cfg.seed,
            lambda s: cusum_max(robust_scores(model, s)),
        )
        threshold = alarm_threshold(maxima, cfg.alpha)
    alarm, traj = cusum_run(scores, threshold)
    report = make_report(alarm, threshold, traj, "robust-cusum", cfg.change_time)
    return _report_dict(report, {"family": model.family.kind, "alpha": cfg.alpha, "seed": cfg.seed})


def _shewhart(stat, threshold):
    hits = np.flatnonzero(np.asarray(stat) >= threshold)
    return int(hits[0]) + 1 if hits.size else None


def cmd_baseline(args, cfg: RunConfig) -> dict:
    train = parse_samples_csv(args.train, cfg.header)
    stream = parse_samples_csv(args.stream, cfg.header)
    if stream.shape[1] != train.shape[1]:
        raise InputError(
            f"dimension mismatch: training has d={train.shape[1]}, stream has d={stream.shape[1]}"
        )
    try:
        model = hotelling_fit(train, cfg.ridge)
    except ValueError as exc:
        raise InputError(f"{args.train}: {exc}") from None
    stat = hotelling_score(model, stream)
    stat = np.atleast_1d(stat)
    threshold = cfg.threshold
    null_rows = train
    if args.null_data:
        null_rows = parse_samples_csv(args.null_data, cfg.header)
        if null_rows.shape[1] != train.shape[1]:
            raise InputError(
                f"dimension mismatch: training has d={train.shape[1]}, null data has d={null_rows.shape[1]}"
            )
    elif threshold is None:
        logger.warning(
            "threshold from resampled training rows is optimistic; pass --null-data or --threshold"
        )
    if threshold is None:
        maxima = _bootstrap_null(
            null_rows,
            stream.shape[0],
            cfg.null_reps,
            cfg.seed,
            lambda s: float(np.max(hotelling_score(model, s))),
        )
        threshold = alarm_threshold(maxima, cfg.alpha)
    report = make_report(_shewhart(stat, threshold), threshold, stat, "hotelling", cfg.change_time)
    return _report_dict(report, {"ridge": model.ridge, "alpha": cfg.alpha, "seed": cfg.seed})


def simulate(cfg: RunConfig) -> dict:
    """Monte Carlo comparison of the robust CUSUM and the Hotelling chart.

    One radius is calibrated for the whole scenario from a separate
    pre-change sample unless both radii are given. For every run a detector
    is trained on a pre-change window and a post-change reference window,
    thresholds come from fresh simulated no-change streams of the monitored
    length, and the monitored stream switches mean after ``pre_length``
    samples.
    """
    d = cfg.dim
    pre_mean = (0.0,) * d
    post_mean = (cfg.shift,) + (0.0,) * (d - 1)
    length = cfg.pre_length + cfg.post_length
    scenario = StreamSpec(d, pre_mean, post_mean, cfg.cov_scale, cfg.pre_length, length, cfg.seed)
    null_spec = replace(scenario, change_time=length)
    n = cfg.window_size
    alphas = cfg.alphas or (cfg.alpha,)

    if cfg.theta1 is not None and cfg.theta2 is not None and not cfg.auto_theta:
        theta1, theta2 = float(cfg.theta1), float(cfg.theta2)
    else:
        calib_rng = rng_for(cfg.seed, _CALIBRATION_DATA)
        calib = np.asarray(pre_mean) + math.sqrt(cfg.cov_scale) * calib_rng.standard_normal(
            (max(cfg.calibration_size, 2 * n), d)
        )
        res = calibrate_radius(calib, cfg.family, cfg.calibration(), cfg.norm, cfg.solver())
        theta1 = theta2 = res.theta

    robust_runs = {a: [] for a in alphas}
    hotelling_runs = {a: [] for a in alphas}
    change = cfg.pre_length + 1
    for r in range(cfg.runs):
        rng = rng_for(cfg.seed, STREAM, r)
        train = synth_stream(replace(null_spec, length=n, change_time=n), rng)
        reference = synth_stream(replace(null_spec, length=n, change_time=0), rng)
        stream = synth_stream(scenario, rng)
        problem = LfdProblem.from_samples(
            EmpiricalDistribution.uniform(train),
            EmpiricalDistribution.uniform(reference),
            theta1,
            theta2,
            cfg.family,
            cfg.norm,
        )
        model = build(solve(problem, cfg.solver()), cfg.family, cfg.norm)
        hot = hotelling_fit(train, cfg.ridge)
        rob_max, hot_max = [], []
        for j in range(cfg.null_reps):
            null = synth_stream(null_spec, rng_for(cfg.seed, _NULL_STREAM, r, j))
            rob_max.append(cusum_max(robust_scores(model, null)))
            hot_max.append(float(np.max(hotelling_score(hot, null))))
        scores = robust_scores(model, stream)
        t2 = hotelling_score(hot, stream)
        for a in alphas:
            h_rob = alarm_threshold(rob_max, a)
            alarm, traj = cusum_run(scores, h_rob)
            robust_runs[a].append(make_report(alarm, h_rob, traj, "robust-cusum", change))
            h_hot = alarm_threshold(hot_max, a)
            hotelling_runs[a].append(make_report(_shewhart(t2, h_hot), h_hot, t2, "hotelling", change))

    def summary(runs):
        out = []
        for a in alphas:
            row = {"alpha": a}
            row.update(evaluate_runs(runs[a]))
            row["delays"] = [rep.delay for rep in runs[a]]
            out.append(row)
        return out

    return {
        "theta": [theta1, theta2],
        "family": cfg.family,
        "norm": cfg.norm,
        "runs": cfg.runs,
        "window_size": n,
        "pre_length": cfg.pre_length,
        "post_length": cfg.post_length,
        "shift": cfg.shift,
        "null_reps": cfg.null_reps,
        "seed": cfg.seed,
        "methods": {"robust-cusum": summary(robust_runs), "hotelling": summary(hotelling_runs)},
    }


def cmd_simulate(args, cfg: RunConfig) -> dict:
    return simulate(cfg)


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--family", choices=FAMILIES)
    common.add_argument("--norm", choices=NORM_KINDS)
    common.add_argument("--theta1")
    common.add_argument("--theta2")
    common.add_argument("--auto-theta", dest="auto_theta", action="store_const", const="true")
    common.add_argument("--alpha")
    common.add_argument("--alphas", help="comma-separated alpha sweep (simulate)")
    common.add_argument("--seed")
    common.add_argument("--config", help="flat key = value settings file")
    common.add_argument("--max-iters", dest="max_iters")
    common.add_argument("--gap-tol", dest="gap_tol")
    common.add_argument("--window-size", dest="window_size")
    common.add_argument("--bootstrap-reps", dest="bootstrap_reps")
    common.add_argument("--confidence")
    common.add_argument("--divergence-tol", dest="divergence_tol")
    common.add_argument("--header", action="store_const", const="true", help="CSV files have a header row")
    common.add_argument("--threshold")
    common.add_argument("--null-reps", dest="null_reps")
    common.add_argument("--change-time", dest="change_time", help="1-based index of the first post-change sample")
    common.add_argument("--ridge")
    common.add_argument("-o", "--output", help="write JSON here instead of stdout")

    parser = argparse.ArgumentParser(prog="wrht", description="Robust hypothesis tests over Wasserstein balls.")
    parser.add_argument("--version", action="version", version=f"wrht {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", parents=[common], help="least favorable distributions and detector")
    p.add_argument("q1")
    p.add_argument("q2")
    p.add_argument("--save-model", dest="save_model")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("calibrate", parents=[common], help="bootstrap radius calibration")
    p.add_argument("data")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("detect", parents=[common], help="robust CUSUM on a stream")
    p.add_argument("stream")
    p.add_argument("--model")
    p.add_argument("--q1")
    p.add_argument("--q2")
    p.add_argument("--null-data", dest="null_data", help="held-out pre-change samples for the threshold")
    p.add_argument("--save-model", dest="save_model")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("baseline", parents=[common], help="Hotelling T^2 chart on a stream")
    p.add_argument("train")
    p.add_argument("stream")
    p.add_argument("--null-data", dest="null_data", help="held-out pre-change samples for the threshold")
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("simulate", parents=[common], help="synthetic Monte Carlo comparison")
    for name in ("runs", "pre_length", "post_length", "dim", "shift", "cov_scale", "calibration_size"):
        p.add_argument("--" + name.replace("_", "-"), dest=name)
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    parser = _parser()
    args = parser.parse_args(argv)
    try:
        cfg = _resolve_config(args)
        result = args.func(args, cfg)
        text = dumps(result)
        if args.output:
            try:
                Path(args.output).write_text(text, encoding="utf-8")
            except OSError as exc:
                raise InputError(f"{args.output}: {exc.strerror or exc}") from None
        else:
            sys.stdout.write(text)
    except InputError as exc:
        print(f"wrht: error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, RuntimeError, np.linalg.LinAlgError) as exc:
        print(f"wrht: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
