"""
CylinderLab Asymptotics Tests
==============================
Rate fits, sweep checks and a small quadratic sweep.
"""

import math
from dataclasses import replace

import pytest
import numpy as np
from pathlib import Path
import sys

# Add src to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from src.schemas import (
    CrossSection,
    CylinderSpec,
    FitModel,
    IntegrandKind,
    SolverOptions,
    SourceForm,
    SourceTerm,
    SweepRecord,
)
from src.integrand import builtin_integrand
from src import asymptotics, solver


def _record(ell, dist, gap=0.1, failed=False):
    return SweepRecord(
        ell=ell,
        h=0.25,
        dist_half=dist,
        energy_cyl=-1.0,
        energy_per_length=-0.5,
        cross_energy=-0.5 - gap,
        sandwich_gap=gap,
        slice_energy_max=-0.1,
        collar_grad_max=0.2,
        iterations=1,
        comparison_gap=gap * 2,
        failed=failed,
    )


# ============================================================
# TEST FIXTURES
# ============================================================

@pytest.fixture(scope="module")
def small_sweep():
    """Quadratic sweep over ell = 3, 4, 5 on the unit strip."""
    problem = asymptotics.SweepProblem(
        omega2=CrossSection.interval(),
        integrand=builtin_integrand(IntegrandKind.POWER, q=2, dim=2),
        source=SourceTerm.constant(1.0),
        h=0.25,
        options=SolverOptions(),
    )
    seen = []
    result = asymptotics.run_sweep([3.0, 4.0, 5.0], problem, on_record=seen.append)
    return problem, result, seen


# ============================================================
# RATE FIT TESTS
# ============================================================

class TestRateFits:

    def test_power_law_recovers_exponent(self):
        """Power fit recovers A / ell."""
        ells = [2.0, 4.0, 8.0, 16.0]
        fit = asymptotics.fit_power_law(ells, [2.0 / e for e in ells], q=2.0)
        assert fit.model == FitModel.POWER
        assert fit.rate == pytest.approx(1.0)
        assert fit.A_fit == pytest.approx(2.0)
        assert fit.r_squared == pytest.approx(1.0)
        assert fit.theory_rate == pytest.approx(1.0)
        assert fit.bound_satisfied

    def test_power_law_below_theory(self):
        """Slow decay should fail the power bound."""
        ells = [2.0, 4.0, 8.0, 16.0]
        fit = asymptotics.fit_power_law(ells, [e ** -0.2 for e in ells], q=2.0)
        assert not fit.bound_satisfied

    def test_exponential_law_recovers_rate(self):
        """Exponential fit recovers A exp(-B ell)."""
        ells = [1.0, 2.0, 3.0, 4.0]
        fit = asymptotics.fit_exponential_law(ells, [3.0 * math.exp(-0.5 * e) for e in ells])
        assert fit.rate == pytest.approx(0.5)
        assert fit.A_fit == pytest.approx(3.0)
        assert fit.bound_satisfied
        assert fit.to_dict()["theory_rate"] == "B > 0 exists"

    def test_noise_floor_excludes_points(self):
        """Points below the noise floor are excluded."""
        fit = asymptotics.fit_exponential_law([1.0, 2.0, 3.0, 4.0], [1e-3, 1e-4, 1e-13, 0.0])
        assert fit.skipped
        assert fit.excluded == [3.0, 4.0]
        assert not fit.bound_satisfied

    def test_failed_records_ignored(self):
        """Failed records do not enter the fit."""
        records = [_record(3.0, 1 / 3), _record(4.0, 0.25), _record(5.0, 0.0, failed=True), _record(6.0, 1 / 6)]
        fit = asymptotics.fit_power(records, q=2.0)
        assert fit.n_points == 3
        assert fit.rate == pytest.approx(1.0)


# ============================================================
# CHECK TESTS
# ============================================================

class TestChecks:

    def test_no_growth(self):
        """Trend test tolerates 10 percent growth only."""
        assert asymptotics.check_no_growth([1.0, 0.9, 1.05])
        assert not asymptotics.check_no_growth([1.0, 1.0, 1.5])
        assert asymptotics.check_no_growth([1.0])

    def test_distance_decay(self):
        """Increasing distances are reported as offending pairs."""
        good = [_record(3.0, 1e-2), _record(4.0, 1e-3), _record(5.0, 1e-4)]
        bad = [_record(3.0, 1e-2), _record(4.0, 2e-2)]
        assert asymptotics.check_distance_decay(good).passed
        report = asymptotics.check_distance_decay(bad)
        assert not report.passed
        assert report.values["offending_pairs"] == [[3.0, 4.0]]

    def test_distance_decay_ignores_noise(self):
        """Distances below the noise floor are not compared."""
        records = [_record(3.0, 1e-14), _record(4.0, 5e-13)]
        assert asymptotics.check_distance_decay(records).passed

    def test_energy_sandwich_passes_for_c_over_ell(self):
        """Gap of order 1/ell passes the sandwich check."""
        records = [_record(e, 1e-3, gap=0.3 / e) for e in (3.0, 4.0, 6.0, 8.0)]
        report = asymptotics.check_energy_sandwich(records)
        assert report.passed
        assert report.values["empirical_C"] == pytest.approx(0.3)

    def test_energy_sandwich_negative_gap_fails(self):
        """Negative gap should fail."""
        records = [_record(3.0, 1e-3, gap=0.1), _record(4.0, 1e-3, gap=-1e-3)]
        assert not asymptotics.check_energy_sandwich(records).passed

    def test_energy_sandwich_growing_gap_times_ell_fails(self):
        """gap * ell more than doubling past the smallest ell fails."""
        # gap * ell = 0.3, 0.4, 0.6, 0.8: max/median stays below 3
        records = [_record(e, 1e-3, gap=0.1) for e in (3.0, 4.0, 6.0, 8.0)]
        report = asymptotics.check_energy_sandwich(records)
        assert report.values["max_over_median"] <= 3.0
        assert not report.values["within_twice_first"]
        assert not report.passed

    def test_energy_sandwich_above_comparison_gap_fails(self):
        """A gap above the comparison-function gap fails."""
        records = [replace(_record(e, 1e-3, gap=0.3 / e), comparison_gap=0.1 / e) for e in (3.0, 4.0, 6.0)]
        report = asymptotics.check_energy_sandwich(records)
        assert not report.values["below_comparison_gap"]
        assert not report.passed

    def test_energy_sandwich_needs_two_records(self):
        """Single record skips the sandwich check."""
        report = asymptotics.check_energy_sandwich([_record(3.0, 1e-3)])
        assert report.skipped
        assert not report.failed

    def test_unit_slabs(self):
        """Unit slabs tile (-ell, ell)."""
        slabs = asymptotics.unit_slabs(3.0)
        assert len(slabs) == 6
        assert (slabs[0].s, slabs[0].t) == (-3.0, -2.0)
        assert (slabs[-1].s, slabs[-1].t) == (2.0, 3.0)

    def test_sweep_rejects_short_cylinders(self, small_sweep):
        """Sweeps need every ell > 2."""
        problem = small_sweep[0]
        with pytest.raises(ValueError, match="> 2"):
            asymptotics.run_sweep([2.0, 3.0], problem)

    def test_sweep_rejects_unordered_ells(self, small_sweep):
        """Sweeps need increasing ells."""
        problem = small_sweep[0]
        with pytest.raises(ValueError, match="strictly increasing"):
            asymptotics.run_sweep([4.0, 3.0], problem)


# ============================================================
# SWEEP TESTS
# ============================================================

class TestSweep:

    def test_records_in_order(self, small_sweep):
        """Records arrive in ell order."""
        _, result, seen = small_sweep
        assert [r.ell for r in result.records] == [3.0, 4.0, 5.0]
        assert [r.ell for r in seen] == [3.0, 4.0, 5.0]
        assert not any(r.failed for r in result.records)

    def test_distance_decreases(self, small_sweep):
        """Half-cylinder distance decreases strictly."""
        _, result, _ = small_sweep
        dists = [r.dist_half for r in result.records]
        assert dists[0] > dists[1] > dists[2] > 0.0
        assert asymptotics.check_distance_decay(result.records, strict=True).passed

    def test_energy_per_length_above_cross_energy(self, small_sweep):
        """Sandwich gap is positive and below the comparison gap."""
        _, result, _ = small_sweep
        for r in result.records:
            assert r.sandwich_gap > 0.0
            assert r.sandwich_gap <= r.comparison_gap + 1e-12

    def test_pointwise_bounds(self, small_sweep):
        """Cylinder minimisers stay below u_infty."""
        problem, result, _ = small_sweep
        for sol in result.solutions.values():
            assert asymptotics.check_pointwise_bounds(sol, result.cross, problem.source).passed

    def test_monotone_in_ell(self, small_sweep):
        """Minimisers increase with ell."""
        problem, result, _ = small_sweep
        report = asymptotics.check_monotone_in_ell(list(result.solutions.values()), problem.source)
        assert report.passed
        assert len(report.values["pairs"]) == 2

    def test_negative_source_skips_order_checks(self, small_sweep):
        """Sign-changing sources skip the order checks."""
        _, result, _ = small_sweep
        f = SourceTerm(SourceForm.POLYNOMIAL, coefficients=(-1.0, 2.0))
        sol = result.solutions[3.0]
        report = asymptotics.check_pointwise_bounds(sol, result.cross, f)
        assert report.skipped
        assert "not nonnegative" in report.notice

    def test_collar_gradient(self, small_sweep):
        """Collar gradients are reported per collar."""
        problem, result, _ = small_sweep
        report = asymptotics.check_collar_gradient(result.solutions[5.0], problem.integrand.q)
        assert report.passed
        assert set(report.values["collars"]) == {"0", "1", "2", "3", "4"}
        assert report.values["max"] > 0.0

    def test_sweep_trends(self, small_sweep):
        """Slice and collar diagnostics do not grow."""
        _, result, _ = small_sweep
        assert all(c.passed for c in asymptotics.check_sweep_trends(result.records))

    def test_sweep_energy_sandwich(self, small_sweep):
        """Sweep gaps pass every sandwich bound."""
        _, result, _ = small_sweep
        report = asymptotics.check_energy_sandwich(result.records)
        assert report.passed, report.values
        assert report.values["within_twice_first"]
        assert report.values["below_comparison_gap"]

    def test_sweep_reports_source_norm(self, small_sweep):
        """The sweep fills the q'-norm of the source."""
        _, result, _ = small_sweep
        assert result.source.q_dual_norm == pytest.approx(1.0)

    def test_monotone_skipped_without_common_grid(self, small_sweep):
        """Solutions on incompatible x1 grids skip the monotone check."""
        problem, result, _ = small_sweep
        other = solver.solve_cylinder(CylinderSpec(3.3, problem.omega2), problem.integrand, problem.source,
                                      problem.h, problem.options, u_inf=result.cross)
        report = asymptotics.check_monotone_in_ell([result.solutions[3.0], other], problem.source)
        assert report.skipped
        assert not report.failed
        assert "no pair" in report.notice
        assert report.values["pairs"][0]["skipped"]


@pytest.fixture(scope="module")
def power4_sweep():
    """F = |xi|**4 sweep over ell = 3, ..., 6 on the unit strip."""
    problem = asymptotics.SweepProblem(
        omega2=CrossSection.interval(),
        integrand=builtin_integrand(IntegrandKind.POWER, q=4, dim=2),
        source=SourceTerm.constant(1.0),
        h=0.25,
        options=SolverOptions(method="iterative", energy_tol=0.0, grad_tol=1e-12),
    )
    return problem, asymptotics.run_sweep([3.0, 4.0, 5.0, 6.0], problem)


class TestPowerSweep:

    def test_distance_nonincreasing(self, power4_sweep):
        """q = 4 distances do not increase with ell."""
        _, result = power4_sweep
        assert not any(r.failed for r in result.records)
        assert asymptotics.check_distance_decay(result.records).passed

    def test_rate_at_least_theory(self, power4_sweep):
        """Power fit decays at least like ell**(-1/3)."""
        _, result = power4_sweep
        fit = asymptotics.fit_power(result.records, q=4.0)
        assert fit.theory_rate == pytest.approx(1.0 / 3.0)
        # every distance below the noise floor means faster decay than any power
        assert fit.skipped or fit.bound_satisfied, fit.to_dict()

    def test_order_checks(self, power4_sweep):
        """q = 4 minimisers lie below u_infty and increase with ell."""
        problem, result = power4_sweep
        solutions = [result.solutions[e] for e in sorted(result.solutions)]
        # nodal tolerance of the iterative solve
        monotone = asymptotics.check_monotone_in_ell(solutions, problem.source, tol=1e-6)
        assert monotone.passed and not monotone.skipped
        for sol in solutions:
            assert asymptotics.check_pointwise_bounds(sol, result.cross, problem.source, tol=1e-6).passed

    def test_energy_sandwich(self, power4_sweep):
        """q = 4 gaps stay within the sandwich bounds."""
        _, result = power4_sweep
        assert asymptotics.check_energy_sandwich(result.records).passed
