"""
CylinderLab One-Dimensional Problems
=====================================
Two 1-D problems on (-ell, ell) with closed-form reference behaviour:

- source problem: minimise sum F(u') - gamma u with u(+-ell) = 0. For
  F(x) = x**2/2 the minimiser is gamma (ell**2 - x**2)/2 and u(0) grows
  without bound in ell.
- coercive problem: minimise F(v') + |v|**q with v(-ell) = a, v(ell) = b.
  The solution stays in [0, max(a, b)] and its mass on the middle half decays
  exponentially in ell.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from . import domain
from .asymptotics import DEFAULT_NOISE_FLOOR, check_no_growth, fit_exponential_law
from .domain import Field, Mesh
from .schemas import (
    CheckReport,
    ConstraintTag,
    OneDimCoerciveSpec,
    OneDimSourceSpec,
    RateFit,
    Region,
    RegionKind,
    SliceSpec,
    SolutionRole,
    SolverOptions,
    SourceTerm,
)
from .solver import EnergyFunctional, Solution, solve_on

logger = logging.getLogger(__name__)

ANCHORS = {
    "unimodal": "source solutions are nondecreasing up to their maximum and nonincreasing after it",
    "blowup": "u_ell(0) grows without bound as ell increases",
    "coercive_bounds": "coercive solutions satisfy 0 <= v <= max(a, b)",
    "coercive_energy": "coercive energy is bounded uniformly in ell",
    "middecay": "mass of the coercive solution on the middle half decays exponentially in ell",
    "window_growth": "integral of u over a fixed window grows with ell",
}


def explicit_parabola(gamma: float, ell: float, x):
    """gamma (ell**2 - x**2)/2, the minimiser for F(x) = x**2/2."""
    xs = np.asarray(x, dtype=float)
    if np.any(np.abs(xs) > ell * (1.0 + 1e-12)):
        raise ValueError(f"x must lie in [-{ell}, {ell}]")
    values = gamma * (ell ** 2 - xs ** 2) / 2.0
    return float(values) if values.ndim == 0 else values


def solve_source_1d(spec: OneDimSourceSpec, h: float, opts: SolverOptions) -> Solution:
    """Dirichlet minimiser of the 1-D source problem."""
    mesh = domain.build_interval_mesh(spec.ell, h)
    init = domain.zero_field(mesh, ConstraintTag.DIRICHLET_ALL)
    return solve_on(init, spec.integrand, SourceTerm.constant(spec.gamma), opts, SolutionRole.U_ELL)


def value_at(u: Field, x: float) -> float:
    """Nodal value at the node nearest to x."""
    return float(u.values[int(np.argmin(np.abs(u.mesh.nodes[:, 0] - x)))])


def check_unimodal(u: Solution, rtol: float = 1e-10) -> CheckReport:
    """Nondecreasing left of the argmax node, nonincreasing right of it."""
    values = u.field.values
    x = u.field.mesh.nodes[:, 0]
    peak = int(np.argmax(values))
    eps = rtol * max(float(np.max(np.abs(values))), 1e-300)
    steps = np.diff(values)
    left = int(np.sum(steps[:peak] < -eps))
    right = int(np.sum(steps[peak:] > eps))
    return CheckReport(
        name="unimodal",
        anchor=ANCHORS["unimodal"],
        passed=left + right == 0,
        values={"argmax_x": float(x[peak]), "violations": left + right},
    )


def solve_coercive_1d(spec: OneDimCoerciveSpec, ell: float, h: float, opts: SolverOptions) -> Solution:
    """Minimiser of F(v') + |v|**q with v(-ell) = a, v(ell) = b."""
    mesh = domain.build_interval_mesh(ell, h)
    init = Field(mesh, ramp_values(mesh, spec.bv_left, spec.bv_right), ConstraintTag.ENDPOINT_VALUES)
    return solve_on(init, spec.integrand, SourceTerm.zero(), opts, SolutionRole.V_ELL, reaction_power=spec.q)


def ramp_values(mesh: Mesh, a: float, b: float) -> np.ndarray:
    """
    a and b decaying linearly to 0 over end layers of width min(1, ell), 0
    inside. The layers never overlap, so the endpoints carry exactly a and b.
    """
    x = mesh.nodes[:, 0]
    ell = mesh.ell
    width = min(1.0, ell)
    left = a * np.clip(1.0 - (x + ell) / width, 0.0, 1.0)
    right = b * np.clip(1.0 - (ell - x) / width, 0.0, 1.0)
    return left + right


def coercive_mass(u: Field, q: float, region: Region = RegionKind.WHOLE) -> float:
    """integral |v'|**q + |v|**q over region (vertex rule for the second term)."""
    mesh = u.mesh
    mask = domain.element_mask(mesh, region)
    gradient_part = domain.grad_q_norm(u, q, region)
    vertex_means = np.mean(np.abs(u.values[mesh.elements[mask]]) ** q, axis=1)
    return gradient_part + float(np.sum(mesh.volumes[mask] * vertex_means))


def coercive_comparison_bound(spec: OneDimCoerciveSpec, h: float, ell: float = 1.0) -> float:
    """
    Energy of the ramp test function, an upper bound for E(v_ell) that does not
    depend on ell once ell >= 1.
    """
    mesh = domain.build_interval_mesh(max(ell, 1.0), h)
    fun = EnergyFunctional(mesh, spec.integrand, reaction_power=spec.q)
    return fun.energy(ramp_values(mesh, spec.bv_left, spec.bv_right))


def check_coercive_bounds(u: Solution, spec: OneDimCoerciveSpec, rtol: float = 1e-10) -> CheckReport:
    """Endpoint values exact; interior values within [0, max(a, b)] up to rtol."""
    values = u.field.values
    top = max(spec.bv_left, spec.bv_right)
    eps = rtol * max(top, 1e-300)
    endpoints_exact = bool(values[0] == spec.bv_left and values[-1] == spec.bv_right)
    interior = values[1:-1]
    violations = int(np.sum(interior < -eps) + np.sum(interior > top + eps))
    return CheckReport(
        name="coercive_bounds",
        anchor=ANCHORS["coercive_bounds"],
        passed=endpoints_exact and violations == 0,
        values={
            "endpoints_exact": endpoints_exact,
            "violations": violations,
            "min": float(values.min()),
            "max": float(values.max()),
        },
    )


def window_integral(u: Field, a: float, b: float, s: float = 1.0) -> float:
    """integral over (a, b) of u**s for nonnegative u (vertex rule)."""
    mask = domain.element_mask(u.mesh, SliceSpec(a, b))
    vertex_means = np.mean(np.clip(u.values[u.mesh.elements[mask]], 0.0, None) ** s, axis=1)
    return float(np.sum(u.mesh.volumes[mask] * vertex_means))


def middecay_values(spec: OneDimCoerciveSpec, ells: Sequence[float], h: float, opts: SolverOptions) -> List[float]:
    """m(ell): coercive mass of v_ell on (-ell/2, ell/2)."""
    return [
        coercive_mass(solve_coercive_1d(spec, ell, h, opts).field, spec.q, RegionKind.HALF)
        for ell in ells
    ]


def fit_middecay(
    spec: OneDimCoerciveSpec,
    ells: Sequence[float],
    h: float,
    opts: SolverOptions,
    noise_floor: float = DEFAULT_NOISE_FLOOR,
) -> RateFit:
    """Exponential fit of m(ell); values below the noise floor are excluded."""
    if len(ells) < 3:
        raise ValueError(f"need at least 3 values of ell, got {len(ells)}")
    masses = middecay_values(spec, ells, h, opts)
    fit = fit_exponential_law(ells, masses, noise_floor)
    logger.info(f"Mid-interval decay: B={fit.rate:.4f}, r^2={fit.r_squared:.4f}")
    return fit


@dataclass
class OneDimRow:
    ell: float
    u_at_0: float = float("nan")
    m_mid: float = float("nan")
    max_v: float = float("nan")
    violations: int = 0

    def to_row(self) -> dict:
        return {
            "ell": self.ell,
            "u_at_0": self.u_at_0,
            "m_mid": self.m_mid,
            "max_v": self.max_v,
            "violations": self.violations,
        }


@dataclass
class OneDimRun:
    rows: List[OneDimRow]
    checks: List[CheckReport]
    fit: Optional[RateFit] = None


def run_onedim(
    ells: Sequence[float],
    h: float,
    opts: SolverOptions,
    source: Optional[OneDimSourceSpec] = None,
    coercive: Optional[OneDimCoerciveSpec] = None,
) -> OneDimRun:
    """
    Solve the source and/or coercive problems along ells and collect the table
    rows and checks. The ell of the source spec is replaced by each entry.
    """
    ells = [float(e) for e in ells]
    rows = [OneDimRow(ell=ell) for ell in ells]
    checks: List[CheckReport] = []

    if source is not None:
        peaks, windows = [], []
        unimodal_violations = 0
        for row in rows:
            spec = OneDimSourceSpec(source.gamma, row.ell, source.integrand)
            u = solve_source_1d(spec, h, opts)
            row.u_at_0 = value_at(u.field, 0.0)
            report = check_unimodal(u)
            row.violations += report.values["violations"]
            unimodal_violations += report.values["violations"]
            peaks.append(row.u_at_0)
            windows.append(window_integral(u.field, -1.0, 1.0) if row.ell >= 1.0 else float("nan"))
        checks.append(CheckReport("unimodal", ANCHORS["unimodal"], unimodal_violations == 0,
                                  {"violations": unimodal_violations}))
        increasing = all(b > a for a, b in zip(peaks, peaks[1:]))
        checks.append(CheckReport("blowup", ANCHORS["blowup"], increasing, {"u_at_0": peaks}))
        finite_windows = [w for w in windows if np.isfinite(w)]
        checks.append(CheckReport(
            "window_growth",
            ANCHORS["window_growth"],
            all(b > a for a, b in zip(finite_windows, finite_windows[1:])),
            {"window_integral": windows},
        ))

    fit = None
    if coercive is not None:
        masses, energies, ramps = [], [], []
        bound_violations = 0
        for row in rows:
            v = solve_coercive_1d(coercive, row.ell, h, opts)
            report = check_coercive_bounds(v, coercive)
            bound_violations += report.values["violations"] + (0 if report.values["endpoints_exact"] else 1)
            row.violations += report.values["violations"]
            row.max_v = float(v.field.values.max())
            row.m_mid = coercive_mass(v.field, coercive.q, RegionKind.HALF)
            masses.append(row.m_mid)
            energies.append(v.energy)
            # the ramp is admissible only once the unit end layers do not overlap
            ramps.append(coercive_comparison_bound(coercive, h, row.ell) if row.ell >= 1.0 else float("nan"))
        checks.append(CheckReport("coercive_bounds", ANCHORS["coercive_bounds"], bound_violations == 0,
                                  {"violations": bound_violations}))
        below_ramp = all(e <= r + 1e-10 * max(1.0, abs(r)) for e, r in zip(energies, ramps) if np.isfinite(r))
        checks.append(CheckReport(
            "coercive_energy",
            ANCHORS["coercive_energy"],
            below_ramp and check_no_growth(energies),
            {"energies": energies, "ramp_bounds": ramps},
        ))
        if len(rows) >= 3:
            fit = fit_exponential_law(ells, masses)
            decreasing = all(b < a for a, b in zip(masses, masses[1:]) if b > DEFAULT_NOISE_FLOOR)
            checks.append(CheckReport(
                "middecay",
                ANCHORS["middecay"],
                (fit.skipped or fit.rate > 0) and decreasing,
                {"m_mid": masses, "fit": fit.to_dict()},
                skipped=fit.skipped,
                notice="fit skipped: too few values above the noise floor" if fit.skipped else "",
            ))

    return OneDimRun(rows=rows, checks=checks, fit=fit)
