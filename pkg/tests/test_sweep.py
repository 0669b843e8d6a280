import math

import numpy as np
import pytest

from rsbcs.sweep import Row, converged_run, minimize_over_lambda


def _evaluator(exists, center=0.03):
    """D = (log lam - log center)^2 + 0.1 wherever ``exists(lam)``."""

    def evaluate(lam, near):
        if not exists(lam):
            return Row("rs", lam, 2.0, status="NoSolution")
        D = (math.log(lam) - math.log(center)) ** 2 + 0.1
        return Row("rs", lam, 2.0, chi=0.1, q=D, D=D, status="Converged")

    return evaluate


GRID = list(np.geomspace(0.01, 5, 13))


def test_interior_minimum_is_refined():
    row, rows = minimize_over_lambda(_evaluator(lambda lam: True, center=0.2), GRID)
    assert len(rows) == len(GRID)
    assert row.lam == pytest.approx(0.2, rel=2e-3)


@pytest.mark.parametrize("restricted", [False, True])
def test_minimum_on_existence_boundary(restricted):
    row, _ = minimize_over_lambda(_evaluator(lambda lam: lam >= 0.05), GRID, restricted=restricted)
    assert row.converged
    assert 0.05 <= row.lam < 0.05 * math.exp(2e-3)


def test_restricted_ignores_isolated_points():
    exists = lambda lam: lam >= 0.1 or lam < 0.012  # noqa: E731
    free, _ = minimize_over_lambda(_evaluator(exists), GRID)
    tied, _ = minimize_over_lambda(_evaluator(exists), GRID, restricted=True)
    assert 0.012 * math.exp(-2e-3) < free.lam < 0.012
    assert 0.1 <= tied.lam < 0.1 * math.exp(2e-3)
    assert tied.D > free.D


def test_no_solution_anywhere():
    row, rows = minimize_over_lambda(_evaluator(lambda lam: False), GRID, restricted=True)
    assert not row.converged and not any(r.converged for r in rows)


def test_converged_run_prefers_longer_then_larger_lambda():
    mk = lambda ok: Row("rs", 1.0, 2.0, status="Converged" if ok else "NoSolution")  # noqa: E731
    assert converged_run([mk(v) for v in (1, 1, 0, 1, 1, 1, 0)]) == (3, 5)
    assert converged_run([mk(v) for v in (1, 1, 0, 1, 1)]) == (3, 4)
    assert converged_run([mk(0), mk(0)]) is None
