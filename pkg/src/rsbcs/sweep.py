"""Grid evaluation and per-point minimization of the distortion over lambda."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import optimize

from .ensemble import EnsembleSpec
from .rs import RsOptions, Status, SystemConfig, solve_rs
from .rsb import RsbOptions, solve_1rsb

COLUMNS = ("solver", "lambda", "rate", "chi", "q", "p", "mu", "xi", "f", "w", "D", "D_dB", "status", "iterations")


@dataclass
class Row:
    solver: str
    lam: float
    rate: float
    chi: float = math.nan
    q: float = math.nan
    p: float = math.nan
    mu: float = math.nan
    xi: float = math.nan
    f: float = math.nan
    w: float = math.nan
    D: float = math.nan
    status: str = Status.NO_SOLUTION.value
    iterations: int = 0
    extra: dict = field(default_factory=dict, repr=False)

    def d_db(self, second_moment: float) -> float:
        if not math.isfinite(self.D) or second_moment <= 0:
            return math.nan
        if self.D <= 0:
            return -math.inf
        return 10.0 * math.log10(self.D / second_moment)

    def cells(self, second_moment: float) -> list[str]:
        def num(v):
            return repr(float(v))

        return [
            self.solver, num(self.lam), num(self.rate), num(self.chi), num(self.q), num(self.p), num(self.mu),
            num(self.xi), num(self.f), num(self.w), num(self.D), num(self.d_db(second_moment)), self.status,
            str(int(self.iterations)),
        ]

    @property
    def converged(self) -> bool:
        return self.status == Status.CONVERGED.value


def rs_rows(cfg: SystemConfig, options: Optional[RsOptions] = None, all_points: bool = False) -> list[Row]:
    sol = solve_rs(cfg, options)
    if not sol.converged:
        return [Row("rs", cfg.lam, cfg.rate, status=sol.status.value, iterations=sol.iterations)]
    pts = sol.fixed_points if all_points else sol.fixed_points[:1]
    return [
        Row("rs", cfg.lam, cfg.rate, fp.chi, fp.q, 0.0, math.nan, fp.xi, fp.f, 0.0, fp.D, sol.status.value,
            sol.iterations)
        for fp in pts
    ]


def rsb_row(cfg: SystemConfig, options: Optional[RsbOptions] = None) -> Row:
    sol = solve_1rsb(cfg, options)
    row = Row(
        "rsb1", cfg.lam, cfg.rate, sol.chi, sol.q, sol.p, sol.mu, sol.xi, sol.f, sol.w, sol.D, sol.status.value,
        sol.iterations,
    )
    if sol.converged and sol.p > 0:
        row.extra["init"] = (sol.chi, sol.q, sol.p, sol.mu)
    return row


def _score(row: Row) -> float:
    return row.D if (row.converged and math.isfinite(row.D)) else math.inf


def converged_run(rows: Sequence[Row]) -> Optional[tuple[int, int]]:
    """Index range ``[i, j]`` of the longest contiguous run of converged rows (ties: larger lambda)."""
    best = None
    i = 0
    while i < len(rows):
        if not rows[i].converged:
            i += 1
            continue
        j = i
        while j + 1 < len(rows) and rows[j + 1].converged:
            j += 1
        if best is None or (j - i) >= (best[1] - best[0]):
            best = (i, j)
        i = j + 1
    return best


def minimize_over_lambda(
    evaluate: Callable[[float, Optional[Row]], Row],
    grid: Sequence[float],
    refine: bool = True,
    restricted: bool = False,
    xatol: float = 1e-3,
) -> tuple[Row, list[Row]]:
    """Minimize ``D`` over lambda: grid search, then bounded refinement in ``log lambda``.

    ``evaluate(lam, neighbour)`` returns a row; ``neighbour`` is the closest
    already-evaluated row and may be used as a warm start.  With
    ``restricted`` only the longest contiguous run of converged grid points is
    eligible and the refinement stays inside the converged interval around it.
    """
    grid = [float(v) for v in grid]
    rows: list[Row] = []
    prev = None
    for lam in grid:
        row = evaluate(lam, prev)
        rows.append(row)
        prev = row if row.converged else prev
    lo_idx, hi_idx = 0, len(grid) - 1
    if restricted:
        run = converged_run(rows)
        if run is None:
            return rows[-1], rows
        lo_idx, hi_idx = run
    scores = [_score(r) for r in rows]
    cand = [i for i in range(lo_idx, hi_idx + 1) if math.isfinite(scores[i])]
    if not cand:
        return min(rows, key=lambda r: r.lam), rows
    best = min(cand, key=lambda i: scores[i])
    best_row = rows[best]
    if not refine:
        return best_row, rows
    # the grid points just outside a restricted run have no converged solution,
    # so they only serve as the far end of the boundary bisection below
    ia, ib = max(best - 1, 0), min(best + 1, len(grid) - 1)
    if ia == ib:
        return best_row, rows
    seen = {grid[best]: best_row}

    def at(ll):
        lam = math.exp(ll)
        near = min(seen.values(), key=lambda r: abs(math.log(r.lam) - ll))
        row = evaluate(lam, near if near.converged else None)
        seen[lam] = row
        return row

    la, lb = math.log(grid[ia]), math.log(grid[ib])
    # a neighbour without a solution: shrink towards the existence boundary first
    for side in (ia, ib):
        if side != best and not math.isfinite(scores[side]):
            good, bad = math.log(grid[best]), math.log(grid[side])
            while abs(good - bad) > xatol:
                mid = 0.5 * (good + bad)
                if math.isfinite(_score(at(mid))):
                    good = mid
                else:
                    bad = mid
            if side == ia:
                la = good
            else:
                lb = good

    def obj(ll):
        s = _score(at(ll))
        return s if math.isfinite(s) else 1e300

    if lb - la > xatol:
        optimize.minimize_scalar(obj, bounds=(la, lb), method="bounded", options={"xatol": xatol})
    final = min(seen.values(), key=lambda r: (_score(r), r.lam))
    return final, rows


def rs_evaluator(cfg: SystemConfig, options: RsOptions):
    def evaluate(lam, near):
        opts = options
        if near is not None and near.solver == "rs" and near.converged:
            opts = replace(options, init=(near.chi, near.q))
        return rs_rows(cfg.with_lambda(lam), opts)[0]

    return evaluate


def rsb_evaluator(cfg: SystemConfig, options: RsbOptions):
    def evaluate(lam, near):
        opts = options
        if near is not None and "init" in near.extra:
            opts = replace(options, init=near.extra["init"])
        return rsb_row(cfg.with_lambda(lam), opts)

    return evaluate


def with_rate(cfg: SystemConfig, rate: float) -> SystemConfig:
    ens = cfg.ensemble
    return replace(cfg, ensemble=EnsembleSpec(ens.kind, rate, ens.eigenvalues, ens.masses))


def default_lambda_grid(num: int = 25) -> np.ndarray:
    return np.geomspace(0.005, 5.0, num)
