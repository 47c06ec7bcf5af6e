"""
CylinderLab Asymptotics
========================
ell-sweeps of the cylinder problem: distances to the cross-section solution
on the half cylinder, energy per unit length, slab and collar diagnostics,
decay-rate fits and the order checks (pointwise bound by u_infty,
monotonicity in ell).
"""

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
from sklearn.linear_model import LinearRegression
from sklearn.metrics import r2_score

from . import domain
from .config import EXP_FIT_R2_THRESHOLD, ORDER_TOL, POWER_FIT_SLACK, SANDWICH_TOL, SWEEP_WORKERS
from .domain import Field
from .schemas import (
    CheckReport,
    CrossSection,
    CylinderSpec,
    FitModel,
    IntegrandSpec,
    MeshError,
    RateFit,
    RegionKind,
    SliceSpec,
    SolverOptions,
    SourceTerm,
    SweepRecord,
)
from .solver import Solution, assemble_energy, solve_cross_section, solve_cylinder

logger = logging.getLogger(__name__)

# Distances at or below this are treated as solver noise
DEFAULT_NOISE_FLOOR = 1e-12

ANCHORS = {
    "distance_decay": "decay of the half-cylinder gradient distance to the cross-section solution",
    "energy_sandwich": "energy per unit length converges to the cross-section energy at rate C/ell",
    "pointwise_bound": "pointwise estimate 0 <= u_ell <= u_infty for nonnegative f",
    "monotone_in_ell": "monotonicity u_ell <= u_ell' for ell < ell' and nonnegative f",
    "collar_gradient": "gradient mass on unit collars is bounded uniformly in ell",
    "slice_energy": "local energy of unit slabs is bounded uniformly in ell",
    "comparison_bound": "energy per unit length of the cut-off comparison function bounds the gap",
}


@dataclass
class SweepProblem:
    """Everything a sweep needs besides the list of ell values."""
    omega2: CrossSection
    integrand: IntegrandSpec
    source: SourceTerm
    h: float
    options: SolverOptions = field(default_factory=SolverOptions)
    noise_floor: float = DEFAULT_NOISE_FLOOR
    workers: int = SWEEP_WORKERS
    keep_solutions: bool = True


@dataclass
class SweepResult:
    """Sweep records in ell order, the shared cross-section solution and (optionally) the u_ell."""
    records: List[SweepRecord]
    cross: Solution
    solutions: Dict[float, Solution] = field(default_factory=dict)
    source: Optional[SourceTerm] = None


def distance_half_cylinder(u_ell: Solution, u_inf: Solution, q: float) -> float:
    """grad_q_norm(u_ell - ext(u_infty)) over the half cylinder |x1| < ell/2."""
    extended = domain.extend_in_x1(u_inf.field, u_ell.field.mesh)
    return domain.grad_q_norm(u_ell.field.difference(extended), q, RegionKind.HALF)


def unit_slabs(ell: float) -> List[SliceSpec]:
    """Unit slabs (s, s+1) covering (-ell, ell) from the left end."""
    count = int(math.floor(2.0 * ell + 1e-9))
    return [SliceSpec(-ell + k, -ell + k + 1.0) for k in range(count)]


def collar_values(u: Field, q: float, ell0_list: Optional[Sequence[float]] = None) -> Dict[float, float]:
    """grad_q_norm of u on the collars Omega_{ell0+1} minus Omega_{ell0}."""
    ell = u.mesh.ell
    if ell0_list is None:
        ell0_list = [float(k) for k in range(int(math.floor(ell + 1e-9)))]
    values = {}
    for ell0 in ell0_list:
        if ell0 + 1.0 > ell + 1e-9:
            raise ValueError(f"collar ell0={ell0} does not fit in ell={ell}")
        values[float(ell0)] = domain.grad_q_norm(u, q, SliceSpec.collar_of(ell0))
    return values


def comparison_energy_gap(u_inf: Solution, mesh: domain.Mesh, F: IntegrandSpec, f: SourceTerm) -> float:
    """
    E(rho u_infty)/(2 ell) - E_omega2(u_infty) with rho = min(1, ell - |x1|).

    rho u_infty is admissible on the cylinder, so this bounds the sandwich gap
    from above.
    """
    extended = domain.extend_in_x1(u_inf.field, mesh)
    rho = np.clip(mesh.ell - np.abs(mesh.nodes[:, 0]), 0.0, 1.0)
    comparison = Field(mesh, rho * extended.values)
    return assemble_energy(comparison, F, f) / (2.0 * mesh.ell) - u_inf.energy


def _measure(ell: float, problem: SweepProblem, u_inf: Solution):
    started = time.perf_counter()
    spec = CylinderSpec(ell=ell, omega2=problem.omega2)
    F, f, q = problem.integrand, problem.source, problem.integrand.q
    try:
        u_ell = solve_cylinder(spec, F, f, problem.h, problem.options, u_inf=u_inf)
        mesh = u_ell.field.mesh
        energy_per_length = u_ell.energy / spec.base_length
        record = SweepRecord(
            ell=ell,
            h=problem.h,
            dist_half=distance_half_cylinder(u_ell, u_inf, q),
            energy_cyl=u_ell.energy,
            energy_per_length=energy_per_length,
            cross_energy=u_inf.energy,
            sandwich_gap=energy_per_length - u_inf.energy,
            slice_energy_max=max(domain.region_energy(u_ell.field, F, f, s) for s in unit_slabs(ell)),
            collar_grad_max=max(collar_values(u_ell.field, q).values()),
            iterations=u_ell.iterations,
            comparison_gap=comparison_energy_gap(u_inf, mesh, F, f),
        )
    except Exception as exc:
        logger.error(f"Sweep solve failed at ell={ell}: {exc}")
        return SweepRecord(ell=ell, h=problem.h, failed=True, error=str(exc),
                           wall_seconds=time.perf_counter() - started), None
    record.wall_seconds = time.perf_counter() - started
    return record, (u_ell if problem.keep_solutions else None)


def _measure_task(args):
    return _measure(*args)


def run_sweep(
    ells: Sequence[float],
    problem: SweepProblem,
    on_record: Optional[Callable[[SweepRecord], None]] = None,
) -> SweepResult:
    """
    One record per ell, in ell order. u_infty is solved once and reused; a
    failed solve marks its record failed and the sweep continues.
    """
    ells = [float(e) for e in ells]
    if any(b <= a for a, b in zip(ells, ells[1:])):
        raise ValueError(f"ells must be strictly increasing, got {ells}")
    if any(e <= 2 for e in ells):
        raise ValueError(f"every ell must be > 2, got {ells}")

    u_inf = solve_cross_section(problem.omega2, problem.integrand, problem.source, problem.h, problem.options)
    source = domain.with_dual_norm(problem.source, u_inf.field.mesh, problem.integrand.q)
    logger.info(
        f"Sweep over {len(ells)} values of ell, cross-section energy {u_inf.energy:.10e}, "
        f"|f|_q' = {source.q_dual_norm:.6e}"
    )

    result = SweepResult(records=[], cross=u_inf, source=source)
    tasks = [(ell, problem, u_inf) for ell in ells]
    if problem.workers > 1 and len(ells) > 1:
        with ProcessPoolExecutor(max_workers=problem.workers) as pool:
            outcomes = pool.map(_measure_task, tasks)
            for record, solution in outcomes:
                _collect(result, record, solution, on_record)
    else:
        for task in tasks:
            _collect(result, *_measure(*task), on_record)
    return result


def _collect(result: SweepResult, record: SweepRecord, solution: Optional[Solution], on_record) -> None:
    result.records.append(record)
    if solution is not None:
        result.solutions[record.ell] = solution
    if on_record is not None:
        on_record(record)
    if not record.failed:
        logger.info(
            f"ell={record.ell:g}: dist_half={record.dist_half:.6e} gap={record.sandwich_gap:.6e} "
            f"({record.iterations} iterations)"
        )


# =============================================================================
# Rate fits
# =============================================================================

def _usable_points(ells, values, noise_floor):
    ells = np.asarray(ells, dtype=float)
    values = np.asarray(values, dtype=float)
    keep = np.isfinite(values) & (values > noise_floor)
    excluded = ells[~keep].tolist()
    if excluded:
        logger.warning(f"Excluded {len(excluded)} points at or below noise floor {noise_floor:g}: ell={excluded}")
    return ells[keep], values[keep], excluded


def _fit_line(x: np.ndarray, y: np.ndarray):
    X = x.reshape(-1, 1)
    model = LinearRegression().fit(X, y)
    r2 = float(np.clip(r2_score(y, model.predict(X)), 0.0, 1.0))
    return float(model.coef_[0]), float(model.intercept_), r2


def _skipped(model: FitModel, theory_rate, n_points, excluded) -> RateFit:
    logger.warning(f"{model.value} fit skipped: {n_points} usable points, need at least 3")
    return RateFit(
        model=model,
        A_fit=float("nan"),
        rate=float("nan"),
        r_squared=0.0,
        theory_rate=theory_rate,
        bound_satisfied=False,
        n_points=n_points,
        excluded=excluded,
        skipped=True,
    )


def fit_power_law(
    ells: Sequence[float],
    values: Sequence[float],
    q: Optional[float] = None,
    noise_floor: float = DEFAULT_NOISE_FLOOR,
) -> RateFit:
    """Least squares of log d on log ell: d ~ A ell**(-rate)."""
    theory = 1.0 / (q - 1.0) if q is not None else None
    x, y, excluded = _usable_points(ells, values, noise_floor)
    if x.size < 3:
        return _skipped(FitModel.POWER, theory, int(x.size), excluded)
    slope, intercept, r2 = _fit_line(np.log(x), np.log(y))
    rate = -slope
    return RateFit(
        model=FitModel.POWER,
        A_fit=math.exp(intercept),
        rate=rate,
        r_squared=r2,
        theory_rate=theory,
        bound_satisfied=theory is None or rate >= theory - POWER_FIT_SLACK,
        n_points=int(x.size),
        excluded=excluded,
    )


def fit_exponential_law(
    ells: Sequence[float],
    values: Sequence[float],
    noise_floor: float = DEFAULT_NOISE_FLOOR,
    r2_threshold: float = EXP_FIT_R2_THRESHOLD,
) -> RateFit:
    """Least squares of log d on ell: d ~ A exp(-rate ell)."""
    x, y, excluded = _usable_points(ells, values, noise_floor)
    if x.size < 3:
        return _skipped(FitModel.EXPONENTIAL, None, int(x.size), excluded)
    slope, intercept, r2 = _fit_line(x, np.log(y))
    rate = -slope
    return RateFit(
        model=FitModel.EXPONENTIAL,
        A_fit=math.exp(intercept),
        rate=rate,
        r_squared=r2,
        theory_rate=None,
        bound_satisfied=rate > 0 and r2 >= r2_threshold,
        n_points=int(x.size),
        excluded=excluded,
    )


def _completed(records: Sequence[SweepRecord]) -> List[SweepRecord]:
    return [r for r in records if not r.failed]


def fit_power(
    records: Sequence[SweepRecord], q: float, noise_floor: float = DEFAULT_NOISE_FLOOR
) -> RateFit:
    """Power-law fit of dist_half against the 1/(q-1) decay rate."""
    done = _completed(records)
    return fit_power_law([r.ell for r in done], [r.dist_half for r in done], q, noise_floor)


def fit_exponential(
    records: Sequence[SweepRecord],
    noise_floor: float = DEFAULT_NOISE_FLOOR,
    r2_threshold: float = EXP_FIT_R2_THRESHOLD,
) -> RateFit:
    """Semilog fit of dist_half."""
    done = _completed(records)
    return fit_exponential_law([r.ell for r in done], [r.dist_half for r in done], noise_floor, r2_threshold)


# =============================================================================
# Checks
# =============================================================================

def check_no_growth(values: Sequence[float], factor: float = 1.1, atol: float = 1e-14) -> bool:
    """True when the last value stays within factor of the largest earlier value."""
    values = [v for v in values if np.isfinite(v)]
    if len(values) < 2:
        return True
    earlier = max(values[:-1])
    return values[-1] <= earlier + (factor - 1.0) * abs(earlier) + atol


def check_energy_sandwich(
    records: Sequence[SweepRecord], C_window: float = 3.0, tol: float = SANDWICH_TOL
) -> CheckReport:
    """
    Lower bound sandwich_gap >= -tol, and gap * ell bounded: the largest value
    stays within C_window of the median and within twice its value at the
    smallest ell. Each gap must also stay below the gap of the cut-off
    comparison function.
    """
    done = _completed(records)
    if len(done) < 2:
        return CheckReport("energy_sandwich", ANCHORS["energy_sandwich"], False, skipped=True,
                           notice="need at least 2 completed records")
    gaps = np.array([r.sandwich_gap for r in done])
    scaled = np.array([r.sandwich_gap * r.ell for r in done])
    lower_ok = bool(np.all(gaps >= -tol))
    empirical_C = float(np.max(scaled))
    median = float(np.median(scaled))
    if np.all(np.abs(gaps) <= tol):
        bounded_ok, ratio = True, 1.0
    else:
        ratio = empirical_C / median if median > 0 else float("inf")
        bounded_ok = ratio <= C_window
    first = float(scaled[0])
    within_twice_first = bool(np.all(scaled <= 2.0 * max(first, 0.0) + tol * max(r.ell for r in done)))
    comparison_ok = all(
        r.sandwich_gap <= r.comparison_gap + tol for r in done if np.isfinite(r.comparison_gap)
    )
    return CheckReport(
        name="energy_sandwich",
        anchor=ANCHORS["energy_sandwich"],
        passed=lower_ok and bounded_ok and within_twice_first and comparison_ok,
        values={
            "min_gap": float(gaps.min()),
            "empirical_C": empirical_C,
            "median_gap_times_ell": median,
            "max_over_median": ratio,
            "within_twice_first": within_twice_first,
            "below_comparison_gap": comparison_ok,
            "tol": tol,
        },
    )


def _sign_notice(f: SourceTerm, mesh: domain.Mesh) -> Optional[str]:
    values = domain.source_values(mesh, f)
    if np.any(values < 0):
        return "source term is not nonnegative on the cross-section nodes; check skipped"
    return None


def check_pointwise_bounds(
    u_ell: Solution, u_inf: Solution, f: SourceTerm, tol: float = ORDER_TOL
) -> CheckReport:
    """Count nodes with u_ell < -tol or u_ell > ext(u_infty) + tol, tol scaled by max u_infty."""
    anchor = ANCHORS["pointwise_bound"]
    notice = _sign_notice(f, u_inf.field.mesh)
    if notice:
        logger.warning(notice)
        return CheckReport("pointwise_bound", anchor, True, skipped=True, notice=notice)
    upper = domain.extend_in_x1(u_inf.field, u_ell.field.mesh).values
    values = u_ell.field.values
    scale = max(float(np.max(np.abs(upper))), float(np.max(np.abs(values))), 1e-300)
    eps = tol * scale
    below = int(np.sum(values < -eps))
    above = int(np.sum(values > upper + eps))
    return CheckReport(
        name="pointwise_bound",
        anchor=anchor,
        passed=below + above == 0,
        values={"violations": below + above, "below_zero": below, "above_u_infty": above, "tol": eps},
    )


def check_monotone_in_ell(solutions: Sequence[Solution], f: SourceTerm, tol: float = ORDER_TOL) -> CheckReport:
    """
    Compare consecutive solutions (increasing ell): the shorter one extended
    by 0 must lie below the longer one nodally.
    """
    anchor = ANCHORS["monotone_in_ell"]
    if not solutions:
        return CheckReport("monotone_in_ell", anchor, True, skipped=True, notice="no solutions")
    cross = solutions[0].field.mesh.cross_section
    notice = _sign_notice(f, cross) if cross is not None else None
    if notice:
        logger.warning(notice)
        return CheckReport("monotone_in_ell", anchor, True, skipped=True, notice=notice)

    ordered = sorted(solutions, key=lambda s: s.field.mesh.ell)
    violations = 0
    pairs = []
    for short, long in zip(ordered, ordered[1:]):
        try:
            embedded = domain.embed_by_zero(short.field, long.field.mesh).values
        except MeshError as exc:
            logger.warning(f"Skipping ell={short.field.mesh.ell:g} vs {long.field.mesh.ell:g}: {exc}")
            pairs.append({"ell": short.field.mesh.ell, "ell_prime": long.field.mesh.ell, "skipped": str(exc)})
            continue
        target = long.field.values
        eps = tol * max(float(np.max(np.abs(target))), 1e-300)
        count = int(np.sum(embedded > target + eps))
        violations += count
        pairs.append({"ell": short.field.mesh.ell, "ell_prime": long.field.mesh.ell, "violations": count})
    compared = sum(1 for p in pairs if "violations" in p)
    if compared == 0:
        notice = "no pair of solutions could be compared on a common x1 grid; check skipped"
        logger.warning(notice)
        return CheckReport("monotone_in_ell", anchor, True, {"violations": 0, "pairs": pairs},
                           skipped=True, notice=notice)
    return CheckReport(
        name="monotone_in_ell",
        anchor=anchor,
        passed=violations == 0,
        values={"violations": violations, "pairs": pairs, "compared": compared},
    )


def check_collar_gradient(
    u_ell: Solution, q: float, ell0_list: Optional[Sequence[float]] = None
) -> CheckReport:
    """Per-collar gradient mass, its max and the growth flag across ell0."""
    values = collar_values(u_ell.field, q, ell0_list)
    series = [values[k] for k in sorted(values)]
    finite = all(np.isfinite(series))
    return CheckReport(
        name="collar_gradient",
        anchor=ANCHORS["collar_gradient"],
        passed=finite,
        values={
            "ell": u_ell.field.mesh.ell,
            "collars": {f"{k:g}": v for k, v in sorted(values.items())},
            "max": max(series) if series else 0.0,
            "no_growth_across_ell0": check_no_growth(series),
        },
    )


def check_sweep_trends(records: Sequence[SweepRecord]) -> List[CheckReport]:
    """No increasing trend of slab energies and collar gradients across ell."""
    done = _completed(records)
    slices = [r.slice_energy_max for r in done]
    collars = [r.collar_grad_max for r in done]
    return [
        CheckReport(
            name="slice_energy_trend",
            anchor=ANCHORS["slice_energy"],
            passed=check_no_growth(slices),
            values={"slice_energy_max": slices},
        ),
        CheckReport(
            name="collar_gradient_trend",
            anchor=ANCHORS["collar_gradient"],
            passed=check_no_growth(collars),
            values={"collar_grad_max": collars},
        ),
    ]


def check_distance_decay(
    records: Sequence[SweepRecord], noise_floor: float = DEFAULT_NOISE_FLOOR, strict: bool = False
) -> CheckReport:
    """
    dist_half nonincreasing (strictly decreasing when strict) along the sweep.
    Pairs whose later value sits at or below the noise floor always pass.
    """
    done = _completed(records)
    offending = []
    for prev, nxt in zip(done, done[1:]):
        if nxt.dist_half <= noise_floor:
            continue
        ok = nxt.dist_half < prev.dist_half if strict else nxt.dist_half <= prev.dist_half
        if not ok:
            offending.append([prev.ell, nxt.ell])
    return CheckReport(
        name="distance_decay",
        anchor=ANCHORS["distance_decay"],
        passed=not offending,
        values={
            "dist_half": [r.dist_half for r in done],
            "strict": strict,
            "offending_pairs": offending,
            "failed_records": [r.ell for r in records if r.failed],
        },
    )
