"""
CylinderLab Domain Schemas
===========================
Validated value types shared by the integrand, domain, solver, asymptotics,
onedim and cli modules.
"""

from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np


class LabError(Exception):
    """Base exception for CylinderLab runs."""

    exit_code: int = 1

    def __init__(self, message: str, exit_code: Optional[int] = None):
        super().__init__(message)
        self.message = message
        if exit_code is not None:
            self.exit_code = exit_code


@dataclass(frozen=True)
class ConfigIssue:
    """One problem found while validating a run configuration."""
    path: str
    message: str

    def __str__(self) -> str:
        return f"{self.path}: {self.message}"


class ConfigError(LabError):
    """Raised when a run configuration is invalid. Carries every issue found."""

    exit_code = 2

    def __init__(self, issues: Sequence[ConfigIssue]):
        self.issues = list(issues)
        super().__init__("; ".join(str(i) for i in self.issues) or "invalid configuration")


class SolverError(LabError):
    """Raised when a solve cannot produce a finite result."""

    exit_code = 3


class CheckFailure(LabError):
    """Raised when an assertion-level check fails."""

    exit_code = 1


class MeshError(ValueError):
    """Degenerate geometry or incompatible grids."""


class IntegrandKind(str, Enum):
    """Built-in energy densities."""
    QUADRATIC_FORM = "quadratic-form"
    POWER = "power"
    ANISO_MAX = "aniso-max"


class BoundaryClass(IntEnum):
    """Per-node boundary classification."""
    INTERIOR = 0
    LATERAL = 1
    END = 2


class ConstraintTag(str, Enum):
    """Which nodal constraints a field satisfies."""
    DIRICHLET_ALL = "dirichlet-all"
    TIED_ENDS = "tied-ends"
    LATERAL_ONLY = "dirichlet-lateral"
    ENDPOINT_VALUES = "endpoint-values"
    NONE = "unconstrained"


class SolutionRole(str, Enum):
    U_ELL = "u_ell"
    U_INFTY = "u_infty"
    W_ELL = "w_ell"
    V_ELL = "v_ell"


# Constraint each role must carry
ROLE_CONSTRAINTS: Dict[SolutionRole, ConstraintTag] = {
    SolutionRole.U_ELL: ConstraintTag.DIRICHLET_ALL,
    SolutionRole.U_INFTY: ConstraintTag.DIRICHLET_ALL,
    SolutionRole.W_ELL: ConstraintTag.TIED_ENDS,
    SolutionRole.V_ELL: ConstraintTag.ENDPOINT_VALUES,
}


class SolverMethod(str, Enum):
    ITERATIVE = "iterative"
    DIRECT = "direct"
    AUTO = "auto"


class SourceForm(str, Enum):
    CONSTANT = "constant"
    POLYNOMIAL = "polynomial"
    NODAL = "nodal"


class RegionKind(str, Enum):
    WHOLE = "whole"
    HALF = "half"


class FitModel(str, Enum):
    POWER = "power"
    EXPONENTIAL = "exponential"


@dataclass(frozen=True)
class IntegrandSpec:
    """
    Convex energy density F on R^dim with its structural constants.

    Constraints:
    - q >= 2 and 0 < lambda_lo <= lambda_hi
    - alpha > 0; beta (when given) >= alpha and only with q = 2
    - quadratic-form requires q = 2 and a symmetric positive-definite matrix
    - aniso-max requires a weight c > 0

    The declared constants are audited against samples by the integrand
    module; construction only checks their ranges.
    """
    kind: IntegrandKind
    q: float
    lambda_lo: float
    lambda_hi: float
    alpha: float
    dim: int
    beta: Optional[float] = None
    matrix: Optional[Tuple[Tuple[float, ...], ...]] = None
    weight: Optional[float] = None
    smoothing_mu: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", IntegrandKind(self.kind))
        if not self.q >= 2:
            raise ValueError(f"q must be >= 2, got {self.q}")
        if self.dim < 1:
            raise ValueError(f"dim must be >= 1, got {self.dim}")
        if not self.lambda_lo > 0:
            raise ValueError(f"lambda_lo must be > 0, got {self.lambda_lo}")
        if self.lambda_hi < self.lambda_lo:
            raise ValueError(
                f"lambda_hi must be >= lambda_lo, got {self.lambda_hi} < {self.lambda_lo}"
            )
        if not self.alpha > 0:
            raise ValueError(f"alpha must be > 0, got {self.alpha}")
        if self.beta is not None:
            if self.q != 2:
                raise ValueError(f"beta is only meaningful for q = 2, got q={self.q}")
            if self.beta < self.alpha:
                raise ValueError(f"beta must be >= alpha, got {self.beta} < {self.alpha}")
        if self.smoothing_mu < 0:
            raise ValueError(f"smoothing_mu must be >= 0, got {self.smoothing_mu}")

        if self.kind == IntegrandKind.QUADRATIC_FORM:
            if self.q != 2:
                raise ValueError(f"quadratic-form requires q = 2, got {self.q}")
            if self.matrix is None:
                raise ValueError("quadratic-form requires a matrix")
            A = np.asarray(self.matrix, dtype=float)
            if A.shape != (self.dim, self.dim):
                raise ValueError(f"matrix must be {self.dim}x{self.dim}, got shape {A.shape}")
            if not np.allclose(A, A.T, rtol=0.0, atol=1e-14 * max(1.0, np.abs(A).max())):
                raise ValueError("matrix must be symmetric")
            if np.linalg.eigvalsh(A)[0] <= 0:
                raise ValueError("matrix must be positive definite")
            object.__setattr__(self, "matrix", tuple(tuple(float(v) for v in row) for row in A))
        elif self.kind == IntegrandKind.ANISO_MAX:
            if self.weight is None or not self.weight > 0:
                raise ValueError(f"aniso-max requires weight c > 0, got {self.weight}")

    @property
    def q_dual(self) -> float:
        return self.q / (self.q - 1.0)

    @property
    def matrix_array(self) -> Optional[np.ndarray]:
        if self.matrix is None:
            return None
        return np.asarray(self.matrix, dtype=float)

    @property
    def is_quadratic(self) -> bool:
        """True when F(xi) = A xi . xi for some matrix A (direct solve applies)."""
        return self.kind == IntegrandKind.QUADRATIC_FORM or (
            self.kind == IntegrandKind.POWER and self.q == 2
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "kind": self.kind.value,
            "q": self.q,
            "q_dual": self.q_dual,
            "lambda_lo": self.lambda_lo,
            "lambda_hi": self.lambda_hi,
            "alpha": self.alpha,
            "beta": self.beta,
            "dim": self.dim,
            "matrix": [list(row) for row in self.matrix] if self.matrix is not None else None,
            "weight": self.weight,
            "smoothing_mu": self.smoothing_mu,
        }


@dataclass(frozen=True)
class CrossSection:
    """
    Axis-aligned cross-section omega2: an interval (n = 2) or a rectangle (n = 3).

    Constraints:
    - one or two (a, b) pairs, each with b > a
    """
    bounds: Tuple[Tuple[float, float], ...]

    def __post_init__(self):
        bounds = tuple((float(a), float(b)) for a, b in self.bounds)
        if len(bounds) not in (1, 2):
            raise MeshError(f"omega2 must have 1 or 2 axes, got {len(bounds)}")
        for a, b in bounds:
            if not b > a:
                raise MeshError(f"omega2 axis ({a}, {b}) has no positive length")
        object.__setattr__(self, "bounds", bounds)

    @classmethod
    def interval(cls, a: float = 0.0, b: float = 1.0) -> "CrossSection":
        return cls(((a, b),))

    @classmethod
    def rectangle(cls, a2: float, b2: float, a3: float, b3: float) -> "CrossSection":
        return cls(((a2, b2), (a3, b3)))

    @property
    def dim(self) -> int:
        return len(self.bounds)

    @property
    def measure(self) -> float:
        return float(np.prod([b - a for a, b in self.bounds]))


@dataclass(frozen=True)
class CylinderSpec:
    """
    Cylinder (-ell, ell) x omega2, the stretched unit interval times omega2.

    Constraints:
    - ell > 1
    - p = 1
    """
    ell: float
    omega2: CrossSection
    p: int = 1

    def __post_init__(self):
        if not self.ell > 1:
            raise ValueError(f"ell must be > 1, got {self.ell}")
        if self.p != 1:
            raise ValueError(f"only p = 1 is supported, got {self.p}")

    @property
    def n(self) -> int:
        return self.p + self.omega2.dim

    @property
    def base_length(self) -> float:
        """|ell * omega1| with omega1 = (-1, 1)."""
        return 2.0 * self.ell

    @property
    def volume(self) -> float:
        return self.base_length * self.omega2.measure


@dataclass(frozen=True)
class SourceTerm:
    """
    Right-hand side f(X2), depending on the cross-section variable only.

    constant:   f = value
    polynomial: f = sum_k coefficients[k] * x2**k (first cross-section axis)
    nodal:      f given by samples on the cross-section mesh nodes
    """
    form: SourceForm = SourceForm.CONSTANT
    value: float = 0.0
    coefficients: Tuple[float, ...] = ()
    samples: Optional[Tuple[float, ...]] = None
    q_dual_norm: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "form", SourceForm(self.form))
        object.__setattr__(self, "coefficients", tuple(float(c) for c in self.coefficients))
        if self.samples is not None:
            object.__setattr__(self, "samples", tuple(float(s) for s in self.samples))
        if self.form == SourceForm.POLYNOMIAL and not self.coefficients:
            raise ValueError("polynomial source requires coefficients")
        if self.form == SourceForm.NODAL and not self.samples:
            raise ValueError("nodal source requires samples")
        if self.q_dual_norm is not None and self.q_dual_norm < 0:
            raise ValueError(f"q_dual_norm must be >= 0, got {self.q_dual_norm}")
        values = [self.value, *self.coefficients, *(self.samples or ())]
        if not np.all(np.isfinite(values)):
            raise ValueError("source values must be finite")

    @classmethod
    def constant(cls, value: float) -> "SourceTerm":
        return cls(SourceForm.CONSTANT, value=float(value))

    @classmethod
    def zero(cls) -> "SourceTerm":
        return cls(SourceForm.CONSTANT, value=0.0)

    def evaluate(self, x2: np.ndarray) -> np.ndarray:
        """Values of f at cross-section coordinates x2 of shape (N, k)."""
        x2 = np.atleast_2d(np.asarray(x2, dtype=float))
        if self.form == SourceForm.CONSTANT:
            return np.full(x2.shape[0], self.value)
        if self.form == SourceForm.POLYNOMIAL:
            # np.polyval wants highest degree first
            return np.polyval(self.coefficients[::-1], x2[:, 0])
        samples = np.asarray(self.samples, dtype=float)
        if samples.shape[0] != x2.shape[0]:
            raise MeshError(
                f"nodal source has {samples.shape[0]} samples, mesh cross-section has {x2.shape[0]} nodes"
            )
        return samples.copy()

    def is_zero(self) -> bool:
        return self.form == SourceForm.CONSTANT and self.value == 0.0

    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {"form": self.form.value}
        if self.form == SourceForm.CONSTANT:
            data["value"] = self.value
        elif self.form == SourceForm.POLYNOMIAL:
            data["coefficients"] = list(self.coefficients)
        else:
            data["values"] = list(self.samples)
        if self.q_dual_norm is not None:
            data["q_dual_norm"] = self.q_dual_norm
        return data


@dataclass(frozen=True)
class SliceSpec:
    """
    Slab (s, t) x omega2, or its collar ((s-1, t+1) minus (s, t)) x omega2.

    Constraints:
    - s < t for slabs; s <= t for collars (s = t = 0 gives the unit collar pair
      around the centre plane)
    """
    s: float
    t: float
    collar: bool = False

    def __post_init__(self):
        if self.collar:
            if self.t < self.s:
                raise ValueError(f"collar requires s <= t, got s={self.s}, t={self.t}")
        elif not self.s < self.t:
            raise ValueError(f"slab requires s < t, got s={self.s}, t={self.t}")

    @classmethod
    def collar_of(cls, ell0: float) -> "SliceSpec":
        """Collar Omega_{ell0+1} minus Omega_{ell0}."""
        if ell0 < 0:
            raise ValueError(f"ell0 must be >= 0, got {ell0}")
        return cls(-float(ell0), float(ell0), collar=True)


Region = Union[RegionKind, SliceSpec]


@dataclass(frozen=True)
class SolverOptions:
    """
    Descent and stopping parameters.

    Constraints:
    - 0 < armijo_c < 1 and 0 < backtrack_rho < 1
    - max_iters >= 1, window >= 1
    """
    max_iters: int = 20000
    energy_tol: float = 1e-10
    window: int = 50
    armijo_c: float = 1e-4
    backtrack_rho: float = 0.5
    bb_steps: bool = True
    smoothing_schedule: Tuple[float, ...] = (1e-2, 1e-4, 0.0)
    seed: int = 0
    grad_tol: float = 1e-10
    method: SolverMethod = SolverMethod.AUTO
    initial_step: float = 1.0
    max_backtracks: int = 60
    roundoff_guard: bool = True
    certificate_tol: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "method", SolverMethod(self.method))
        object.__setattr__(self, "smoothing_schedule", tuple(float(m) for m in self.smoothing_schedule))
        if not 0 < self.armijo_c < 1:
            raise ValueError(f"armijo_c must be in (0, 1), got {self.armijo_c}")
        if not 0 < self.backtrack_rho < 1:
            raise ValueError(f"backtrack_rho must be in (0, 1), got {self.backtrack_rho}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.window < 1:
            raise ValueError(f"window must be >= 1, got {self.window}")
        if self.energy_tol < 0 or self.grad_tol < 0:
            raise ValueError("energy_tol and grad_tol must be >= 0")
        if not self.initial_step > 0:
            raise ValueError(f"initial_step must be > 0, got {self.initial_step}")
        if any(m < 0 for m in self.smoothing_schedule):
            raise ValueError("smoothing_schedule values must be >= 0")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "max_iters": self.max_iters,
            "energy_tol": self.energy_tol,
            "window": self.window,
            "armijo_c": self.armijo_c,
            "backtrack_rho": self.backtrack_rho,
            "bb_steps": self.bb_steps,
            "smoothing_schedule": list(self.smoothing_schedule),
            "seed": self.seed,
            "grad_tol": self.grad_tol,
            "method": self.method.value,
            "initial_step": self.initial_step,
            "max_backtracks": self.max_backtracks,
            "roundoff_guard": self.roundoff_guard,
            "certificate_tol": self.certificate_tol,
        }


@dataclass(frozen=True)
class TraceRow:
    """One accepted descent step."""
    iteration: int
    energy: float
    step: float
    grad_norm: float
    mu: float = 0.0


@dataclass
class SweepRecord:
    """
    Per-ell measurements of a sweep.

    Constraints:
    - dist_half >= 0 (unless the record failed)
    """
    ell: float
    h: float
    dist_half: float = float("nan")
    energy_cyl: float = float("nan")
    energy_per_length: float = float("nan")
    cross_energy: float = float("nan")
    sandwich_gap: float = float("nan")
    slice_energy_max: float = float("nan")
    collar_grad_max: float = float("nan")
    iterations: int = 0
    wall_seconds: float = float("nan")
    comparison_gap: float = float("nan")
    failed: bool = False
    error: str = ""

    def __post_init__(self):
        if not self.failed and self.dist_half < 0:
            raise ValueError(f"dist_half must be >= 0, got {self.dist_half}")

    def to_row(self, include_timing: bool = False) -> Dict[str, Any]:
        """Row of the sweep CSV, in column order."""
        return {
            "ell": self.ell,
            "h": self.h,
            "dist_half": self.dist_half,
            "energy_cyl": self.energy_cyl,
            "energy_per_length": self.energy_per_length,
            "cross_energy": self.cross_energy,
            "sandwich_gap": self.sandwich_gap,
            "slice_energy_max": self.slice_energy_max,
            "collar_grad_max": self.collar_grad_max,
            "iterations": self.iterations,
            "wall_seconds": self.wall_seconds if include_timing else None,
        }


@dataclass
class RateFit:
    """
    Least-squares decay fit of a distance sequence.

    power:       d(ell) ~ A_fit * ell**(-rate)
    exponential: d(ell) ~ A_fit * exp(-rate * ell)
    """
    model: FitModel
    A_fit: float
    rate: float
    r_squared: float
    theory_rate: Optional[float]
    bound_satisfied: bool
    n_points: int
    excluded: List[float] = field(default_factory=list)
    skipped: bool = False

    def __post_init__(self):
        if not self.skipped and not 0.0 <= self.r_squared <= 1.0:
            raise ValueError(f"r_squared must be in [0, 1], got {self.r_squared}")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "model": FitModel(self.model).value,
            "A": self.A_fit,
            "rate": self.rate,
            "r_squared": self.r_squared,
            "theory_rate": self.theory_rate if self.theory_rate is not None else "B > 0 exists",
            "bound_satisfied": self.bound_satisfied,
            "n_points": self.n_points,
            "excluded": list(self.excluded),
            "skipped": self.skipped,
        }


@dataclass
class AuditReport:
    """Outcome of a sampled inequality audit on an integrand."""
    name: str
    passed: bool
    worst_margin: float
    worst_pair: Tuple[List[float], ...]
    n_pairs: int
    details: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "passed": self.passed,
            "worst_margin": self.worst_margin,
            "worst_pair": [list(v) for v in self.worst_pair],
            "n_pairs": self.n_pairs,
            **self.details,
        }


@dataclass
class CheckReport:
    """
    Outcome of an empirical check.

    A skipped check carries a notice and never counts as a failure.
    """
    name: str
    anchor: str
    passed: bool
    values: Dict[str, Any] = field(default_factory=dict)
    skipped: bool = False
    notice: str = ""

    @property
    def failed(self) -> bool:
        return not self.skipped and not self.passed

    def to_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "anchor": self.anchor,
            "passed": self.passed,
            "skipped": self.skipped,
            "notice": self.notice,
            "values": self.values,
        }


@dataclass(frozen=True)
class OneDimSourceSpec:
    """
    1-D problem: minimise sum F(u') - gamma * u on (-ell, ell), u(+-ell) = 0.

    Constraints:
    - gamma > 0, ell > 0, integrand dim 1
    """
    gamma: float
    ell: float
    integrand: IntegrandSpec

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError(f"gamma must be > 0, got {self.gamma}")
        if not self.ell > 0:
            raise ValueError(f"ell must be > 0, got {self.ell}")
        if self.integrand.dim != 1:
            raise ValueError(f"integrand must be one-dimensional, got dim={self.integrand.dim}")


@dataclass(frozen=True)
class OneDimCoerciveSpec:
    """
    1-D coercive problem: minimise F(v') + |v|**q with v(-ell) = a, v(ell) = b.

    Constraints:
    - a, b >= 0 (a = b = 0 is the degenerate zero solution)
    - integrand dim 1
    """
    bv_left: float
    bv_right: float
    q: float
    integrand: IntegrandSpec

    def __post_init__(self):
        if self.bv_left < 0 or self.bv_right < 0:
            raise ValueError(
                f"boundary values must be >= 0, got a={self.bv_left}, b={self.bv_right}"
            )
        if not self.q >= 2:
            raise ValueError(f"q must be >= 2, got {self.q}")
        if self.integrand.dim != 1:
            raise ValueError(f"integrand must be one-dimensional, got dim={self.integrand.dim}")
