"""Command-line front end: ``predict``, ``sweep`` and ``simulate``.

All three subcommands read a JSON configuration::

    {"ensemble": "iid", "r": 2, "penalty": "l1", "s": 0.1,
     "lambda": 0.1, "lambda0": 0.01, "solver": ["rs", "rsb1"],
     "quadrature": {"N": 96},
     "sweep": {"variable": "rate", "grid": [1, 2, 3],
               "minimize_lambda": {"grid": {"start": 0.01, "stop": 3, "num": 13}, "refine": true}},
     "sim": {"n": 2000, "trials": 50, "seed": 1}}

Exit codes: 0 on success, 2 for configuration errors, 3 when ``--strict``
is given and some row did not converge.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .ensemble import EnsembleKind, EnsembleSpec
from .errors import ConfigError, SizeError
from .rs import RsOptions, Status, SystemConfig
from .rsb import RsbOptions
from .scalar import PenaltySpec, SourcePrior
from .simulate import SimConfig, run_sim
from .sweep import (
    COLUMNS,
    Row,
    default_lambda_grid,
    minimize_over_lambda,
    rs_evaluator,
    rs_rows,
    rsb_evaluator,
    rsb_row,
)

EXIT_OK, EXIT_CONFIG, EXIT_STRICT = 0, 2, 3

SOLVERS = ("rs", "rsb1", "sim")
_TOP_KEYS = {"ensemble", "r", "penalty", "s", "lambda", "lambda0", "solver", "quadrature", "sweep", "sim"}
_SWEEP_KEYS = {"variable", "grid", "minimize_lambda"}
_MINLAM_KEYS = {"grid", "refine"}
_SIM_KEYS = {"n", "trials", "seed"}
_QUAD_KEYS = {"N"}
_ENS_KEYS = {"kind", "path"}


@dataclass(frozen=True)
class SweepSpec:
    variable: str
    grid: tuple[float, ...]
    minimize: bool = False
    lambda_grid: tuple[float, ...] = ()
    refine: bool = True


@dataclass(frozen=True)
class RunConfig:
    ensemble: EnsembleSpec
    penalty: PenaltySpec
    s: float
    lam: Optional[float]
    lam0: float
    solvers: tuple[str, ...]
    nodes: Optional[int] = None
    sweep: Optional[SweepSpec] = None
    sim: Optional[dict] = None

    @property
    def rate(self) -> float:
        return self.ensemble.rate

    def system(self, lam: Optional[float] = None, rate: Optional[float] = None) -> SystemConfig:
        ens = self.ensemble
        if rate is not None:
            ens = EnsembleSpec(ens.kind, rate, ens.eigenvalues, ens.masses)
        lam = self.lam if lam is None else lam
        return SystemConfig(ens, self.penalty, SourcePrior(self.s), lam, self.lam0)

    def rs_options(self) -> RsOptions:
        return RsOptions() if self.nodes is None else RsOptions(n=self.nodes)

    def rsb_options(self) -> RsbOptions:
        if self.nodes is None:
            return RsbOptions()
        return RsbOptions(n=self.nodes, n_coarse=min(16, self.nodes))


# ----------------------------------------------------------------------------
# config parsing


def _check_keys(obj, allowed, where):
    if not isinstance(obj, dict):
        raise ConfigError(f"key '{where}': expected an object")
    for key in obj:
        if key not in allowed:
            prefix = f"{where}." if where else ""
            raise ConfigError(f"unknown key '{prefix}{key}'")


def _number(obj, key, where=None, positive=False, nonneg=False):
    name = f"{where}.{key}" if where else key
    if key not in obj:
        raise ConfigError(f"missing key '{name}'")
    v = obj[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ConfigError(f"key '{name}': expected a finite number, got {v!r}")
    if positive and not v > 0:
        raise ConfigError(f"key '{name}': must be positive, got {v!r}")
    if nonneg and not v >= 0:
        raise ConfigError(f"key '{name}': must be non-negative, got {v!r}")
    return float(v)


def _integer(obj, key, where, minimum=0):
    name = f"{where}.{key}"
    if key not in obj:
        raise ConfigError(f"missing key '{name}'")
    v = obj[key]
    if isinstance(v, bool) or not isinstance(v, int) or v < minimum:
        raise ConfigError(f"key '{name}': expected an integer >= {minimum}, got {v!r}")
    return v


def _grid(value, name) -> tuple[float, ...]:
    """A list of numbers, or ``{start, stop, step}`` (linear) or ``{start, stop, num}`` (log-spaced)."""
    if isinstance(value, dict):
        _check_keys(value, {"start", "stop", "step", "num"}, name)
        start = _number(value, "start", name, positive=True)
        stop = _number(value, "stop", name, positive=True)
        if ("step" in value) == ("num" in value):
            raise ConfigError(f"key '{name}': give exactly one of 'step' or 'num'")
        if "step" in value:
            step = _number(value, "step", name, positive=True)
            m = int(math.floor((stop - start) / step + 1e-9)) + 1
            pts = [round(start + i * step, 12) for i in range(m)]
        else:
            num = _integer(value, "num", name, minimum=1)
            pts = [float(v) for v in np.geomspace(start, stop, num)]
    elif isinstance(value, list):
        pts = []
        for v in value:
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
                raise ConfigError(f"key '{name}': grid entries must be finite numbers, got {v!r}")
            pts.append(float(v))
    else:
        raise ConfigError(f"key '{name}': expected a list or a range object")
    if not pts:
        raise ConfigError(f"key '{name}': grid is empty")
    if any(b <= a for a, b in zip(pts, pts[1:])):
        raise ConfigError(f"key '{name}': grid must be strictly increasing")
    return tuple(pts)


def _ensemble(value, rate, base: Path) -> EnsembleSpec:
    if isinstance(value, str):
        if value not in (EnsembleKind.IID.value, EnsembleKind.PROJECTOR.value):
            raise ConfigError(f"key 'ensemble': expected 'iid', 'projector' or a tabulated object, got {value!r}")
        return EnsembleSpec(EnsembleKind(value), rate)
    _check_keys(value, _ENS_KEYS, "ensemble")
    if value.get("kind") != EnsembleKind.TABULATED.value:
        raise ConfigError("key 'ensemble.kind': expected 'tabulated'")
    path = value.get("path")
    if not isinstance(path, str):
        raise ConfigError("key 'ensemble.path': expected a file path")
    p = Path(path)
    if not p.is_absolute():
        p = base / p
    if not p.exists():
        raise ConfigError(f"key 'ensemble.path': file not found: {p}")
    return EnsembleSpec.from_csv(p, rate=rate)


def parse_config(data, base: Path = Path(".")) -> RunConfig:
    """Validate a decoded JSON config; raises ``ConfigError`` naming the offending key."""
    _check_keys(data, _TOP_KEYS, "")
    rate = _number(data, "r", positive=True)
    ensemble = _ensemble(data.get("ensemble", "iid"), rate, base)
    pen = data.get("penalty")
    if pen not in ("l2", "l1", "l0"):
        raise ConfigError(f"key 'penalty': expected 'l2', 'l1' or 'l0', got {pen!r}")
    s = _number(data, "s")
    if not 0 < s <= 1:
        raise ConfigError(f"key 's': must lie in (0, 1], got {s!r}")
    lam = _number(data, "lambda", positive=True) if "lambda" in data else None
    lam0 = _number(data, "lambda0", nonneg=True)

    solver = data.get("solver", "rs")
    solvers = [solver] if isinstance(solver, str) else solver
    if not isinstance(solvers, list) or any(not isinstance(v, str) for v in solvers):
        raise ConfigError("key 'solver': expected a string or a list of strings")
    for v in solvers:
        if v not in SOLVERS:
            raise ConfigError(f"key 'solver': unknown solver {v!r} (expected one of {', '.join(SOLVERS)})")
    if not solvers:
        raise ConfigError("key 'solver': the solver set is empty")
    solvers = tuple(dict.fromkeys(solvers))

    nodes = None
    if "quadrature" in data:
        _check_keys(data["quadrature"], _QUAD_KEYS, "quadrature")
        if "N" in data["quadrature"]:
            nodes = _integer(data["quadrature"], "N", "quadrature", minimum=2)

    sweep = None
    if "sweep" in data:
        sw = data["sweep"]
        _check_keys(sw, _SWEEP_KEYS, "sweep")
        var = sw.get("variable")
        if var not in ("lambda", "rate"):
            raise ConfigError(f"key 'sweep.variable': expected 'lambda' or 'rate', got {var!r}")
        if "grid" not in sw:
            raise ConfigError("missing key 'sweep.grid'")
        grid = _grid(sw["grid"], "sweep.grid")
        minimize, lgrid, refine = False, (), True
        if "minimize_lambda" in sw and sw["minimize_lambda"] is not False:
            if var == "lambda":
                raise ConfigError("key 'sweep.minimize_lambda': not allowed when sweeping lambda")
            ml = sw["minimize_lambda"]
            ml = {} if ml is True else ml
            _check_keys(ml, _MINLAM_KEYS, "sweep.minimize_lambda")
            minimize = True
            lgrid = (
                _grid(ml["grid"], "sweep.minimize_lambda.grid")
                if "grid" in ml
                else tuple(float(v) for v in default_lambda_grid())
            )
            refine = ml.get("refine", True)
            if not isinstance(refine, bool):
                raise ConfigError("key 'sweep.minimize_lambda.refine': expected true or false")
        if var == "rate" and ensemble.kind is EnsembleKind.PROJECTOR and grid[0] < 1:
            raise ConfigError("key 'sweep.grid': projector ensemble needs rate >= 1")
        sweep = SweepSpec(var, grid, minimize, lgrid, refine)

    sim = None
    if "sim" in data:
        sc = data["sim"]
        _check_keys(sc, _SIM_KEYS, "sim")
        sim = {
            "n": _integer(sc, "n", "sim", minimum=1),
            "trials": _integer(sc, "trials", "sim", minimum=1) if "trials" in sc else 1,
            "seed": _integer(sc, "seed", "sim", minimum=0) if "seed" in sc else 0,
        }

    needs_lambda = sweep is None or (sweep.variable == "rate" and not sweep.minimize) or (
        sweep.minimize and "sim" in solvers
    )
    if lam is None and needs_lambda:
        raise ConfigError("missing key 'lambda'")
    if "sim" in solvers and sim is None:
        raise ConfigError("missing key 'sim' (needed by solver 'sim')")
    return RunConfig(ensemble, PenaltySpec(pen), s, lam, lam0, solvers, nodes, sweep, sim)


def load_config(path) -> RunConfig:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc.strerror or exc}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON in {p}: {exc.msg} at line {exc.lineno} column {exc.colno}") from None
    return parse_config(data, p.parent)


# ----------------------------------------------------------------------------
# evaluation


def _sim_config(rc: RunConfig, lam: float, rate: float) -> SimConfig:
    return SimConfig(
        rc.sim["n"], rate, rc.ensemble.kind, rc.penalty, SourcePrior(rc.s), lam, rc.lam0,
        rc.sim["trials"], rc.sim["seed"],
    )


def _sim_row(rc: RunConfig, lam: float, rate: float) -> Row:
    rep = run_sim(_sim_config(rc, lam, rate))
    return Row("sim", lam, rate, D=rep.mean, status=Status.CONVERGED.value, iterations=sum(rep.iterations))


def _point(args) -> list[Row]:
    """Rows of one grid point for one solver (module level so worker processes can run it)."""
    rc, solver, lam, rate, restricted, all_points = args
    sw = rc.sweep
    if solver == "sim":
        return [_sim_row(rc, lam if lam is not None else rc.lam, rate)]
    if sw is not None and sw.minimize:
        cfg = rc.system(lam=1.0, rate=rate)
        if solver == "rs":
            ev = rs_evaluator(cfg, rc.rs_options())
        else:
            ev = rsb_evaluator(cfg, rc.rsb_options())
        best, _ = minimize_over_lambda(ev, sw.lambda_grid, sw.refine, restricted=(restricted and solver == "rs"))
        return [best]
    cfg = rc.system(lam=lam, rate=rate)
    if solver == "rs":
        return rs_rows(cfg, rc.rs_options(), all_points=all_points)
    return [rsb_row(cfg, rc.rsb_options())]


def predict_rows(rc: RunConfig) -> list[Row]:
    rows = []
    for solver in rc.solvers:
        rows += _point((rc, solver, rc.lam, rc.rate, False, True))
    return rows


def sweep_rows(rc: RunConfig, restricted: bool = False, jobs: int = 1) -> list[Row]:
    if rc.sweep is None:
        raise ConfigError("missing key 'sweep'")
    tasks = []
    for v in rc.sweep.grid:
        lam, rate = (v, rc.rate) if rc.sweep.variable == "lambda" else (rc.lam, v)
        for solver in rc.solvers:
            tasks.append((rc, solver, lam, rate, restricted, False))
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            chunks = list(ex.map(_point, tasks))
    else:
        chunks = [_point(t) for t in tasks]
    return [row for chunk in chunks for row in chunk]


def write_rows(rows, second_moment: float, fh) -> None:
    w = csv.writer(fh, lineterminator="\r\n")
    w.writerow(COLUMNS)
    for row in rows:
        w.writerow(row.cells(second_moment))


# ----------------------------------------------------------------------------
# entry points


def _emit_rows(rows, rc: RunConfig, out: Optional[str]) -> None:
    if out is None:
        write_rows(rows, rc.s, sys.stdout)
        sys.stdout.flush()
    else:
        with open(out, "w", newline="", encoding="utf-8") as fh:
            write_rows(rows, rc.s, fh)


def _strict_code(rows, strict: bool) -> int:
    if strict and any(not r.converged for r in rows):
        bad = sorted({r.status for r in rows if not r.converged})
        print(f"error: non-converged rows ({', '.join(bad)})", file=sys.stderr)
        return EXIT_STRICT
    return EXIT_OK


def cmd_predict(args) -> int:
    rc = load_config(args.config)
    rows = predict_rows(rc)
    _emit_rows(rows, rc, args.out)
    return _strict_code(rows, args.strict)


def cmd_sweep(args) -> int:
    rc = load_config(args.config)
    if rc.sweep is None:
        raise ConfigError("missing key 'sweep'")
    rows = sweep_rows(rc, restricted=args.restricted_rs, jobs=args.jobs)
    _emit_rows(rows, rc, args.out)
    return _strict_code(rows, args.strict)


def cmd_simulate(args) -> int:
    rc = load_config(args.config)
    if rc.sim is None:
        raise ConfigError("missing key 'sim'")
    if rc.lam is None:
        raise ConfigError("missing key 'lambda'")
    cfg = _sim_config(rc, rc.lam, rc.rate)
    t0 = time.perf_counter()
    report = run_sim(cfg, jobs=args.jobs)
    extra = {
        "wall_clock_seconds": time.perf_counter() - t0,
        "seed": cfg.seed,
        "penalty": rc.penalty.kind.value,
        "ensemble": rc.ensemble.kind.value,
        "rate": cfg.rate,
        "lambda": cfg.lam,
        "lambda0": cfg.lam0,
        "s": rc.s,
    }
    if args.out is None:
        w = csv.writer(sys.stdout, lineterminator="\r\n")
        w.writerow(["trial", "distortion"])
        for i, d in enumerate(report.distortions):
            w.writerow([i, repr(float(d))])
        sys.stdout.flush()
        data = report.summary()
        data.update(extra)
        print(json.dumps(data, indent=2, sort_keys=True), file=sys.stderr)
    else:
        out = Path(args.out)
        report.write_csv(out)
        report.write_json(out.with_suffix(".json"), extra)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rsbcs", description="Replica predictions for regularized least squares.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, jobs=False, strict=True):
        p.add_argument("--config", required=True, help="JSON configuration file")
        p.add_argument("--out", help="output CSV path (default: standard output)")
        if jobs:
            p.add_argument("--jobs", type=int, default=1, help="worker processes")
        if strict:
            p.add_argument("--strict", action="store_true", help="exit 3 if any row did not converge")

    p = sub.add_parser("predict", help="single-point RS / 1RSB predictions")
    common(p)
    p.set_defaults(func=cmd_predict)
    p = sub.add_parser("sweep", help="lambda or rate sweeps, optionally minimized over lambda")
    common(p, jobs=True)
    p.add_argument("--restricted-rs", action="store_true", help="minimize RS only over its converged lambda run")
    p.set_defaults(func=cmd_sweep)
    p = sub.add_parser("simulate", help="finite-size Monte Carlo reconstructions")
    common(p, jobs=True, strict=False)
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "jobs", 1) < 1:
        print("error: --jobs must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except (ConfigError, SizeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
