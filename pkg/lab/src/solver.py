"""
CylinderLab Solver
===================
Minimises the discrete energy

    E(u) = sum_T |T| F(grad u|_T) - integral f u  [+ integral |u|**r]

over the constrained nodal space: the full cylinder (Dirichlet everywhere),
the cross-section, the tied-ends space and the 1-D endpoint-value problems.

Descent is Armijo backtracking with Barzilai-Borwein initial steps on the
free degrees of freedom. Quadratic integrands can instead be solved directly
by a sparse factorisation of the stiffness system.
"""

import logging
import time
from dataclasses import dataclass, field
from typing import List, Optional, Tuple, Union

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu, spsolve

from . import domain
from .domain import Field, Mesh
from .integrand import evaluate_many, subgradient_many, with_smoothing
from .schemas import (
    ROLE_CONSTRAINTS,
    BoundaryClass,
    ConstraintTag,
    CrossSection,
    CylinderSpec,
    IntegrandKind,
    IntegrandSpec,
    SolutionRole,
    SolverError,
    SolverMethod,
    SolverOptions,
    SourceTerm,
    TraceRow,
)

logger = logging.getLogger(__name__)

EPS = np.finfo(float).eps


# =============================================================================
# Degrees of freedom
# =============================================================================

@dataclass(frozen=True, eq=False)
class DofMap:
    """
    Affine parametrisation u = fixed + P z of the constrained nodal space.

    Tied end faces share one degree of freedom per cross-section node, so P has
    two nonzeros in those rows.
    """
    prolongation: sp.csr_matrix
    fixed: np.ndarray
    representatives: np.ndarray
    constraint: ConstraintTag

    @property
    def n_free(self) -> int:
        return self.prolongation.shape[1]

    def expand(self, z: np.ndarray) -> np.ndarray:
        return self.fixed + self.prolongation @ z

    def restrict(self, u: np.ndarray) -> np.ndarray:
        return u[self.representatives]

    def reduce(self, nodal: np.ndarray) -> np.ndarray:
        """Adjoint of expand: accumulates nodal vectors into degrees of freedom."""
        return self.prolongation.T @ nodal


def build_dof_map(
    mesh: Mesh,
    constraint: ConstraintTag,
    boundary_values: Tuple[float, float] = (0.0, 0.0),
) -> DofMap:
    """Degree-of-freedom map of a constraint tag on a mesh."""
    constraint = ConstraintTag(constraint)
    N = mesh.n_nodes
    fixed = np.zeros(N)
    owner = np.arange(N)

    if constraint == ConstraintTag.DIRICHLET_ALL:
        free = mesh.boundary_class == BoundaryClass.INTERIOR
    elif constraint == ConstraintTag.LATERAL_ONLY:
        free = ~mesh.lateral_mask
    elif constraint == ConstraintTag.TIED_ENDS:
        if mesh.planes is None:
            raise ValueError("tied ends need a mesh with x1 planes")
        free = ~mesh.lateral_mask
        right = mesh.plane_nodes(-1)
        left = mesh.plane_nodes(0)
        # right face nodes share the degree of freedom of their left partner
        owner[right] = left
        free[right] = False
    elif constraint == ConstraintTag.ENDPOINT_VALUES:
        if mesh.dim != 1:
            raise ValueError("endpoint values are defined for 1-D meshes only")
        free = mesh.boundary_class == BoundaryClass.INTERIOR
        fixed[0], fixed[-1] = boundary_values
    else:
        free = np.ones(N, dtype=bool)

    representatives = np.flatnonzero(free)
    dof_of = np.full(N, -1)
    dof_of[representatives] = np.arange(representatives.size)
    dof_of = dof_of[owner]
    rows = np.flatnonzero(dof_of >= 0)
    P = sp.csr_matrix(
        (np.ones(rows.size), (rows, dof_of[rows])), shape=(N, representatives.size)
    )
    return DofMap(prolongation=P, fixed=fixed, representatives=representatives, constraint=constraint)


# =============================================================================
# Energy
# =============================================================================

class EnergyFunctional:
    """
    Discrete energy and its gradient on one mesh.

    When the integrand has one more dimension than the mesh (cross-section
    problems), element gradients are padded with a leading zero: the density is
    xi2 -> F(0, xi2).
    """

    def __init__(
        self,
        mesh: Mesh,
        integrand: IntegrandSpec,
        source: Optional[SourceTerm] = None,
        reaction_power: Optional[float] = None,
    ):
        self.mesh = mesh
        self.integrand = integrand
        self.pad = integrand.dim - mesh.dim
        if self.pad not in (0, 1):
            raise ValueError(
                f"integrand dimension {integrand.dim} does not fit mesh dimension {mesh.dim}"
            )
        self.source = source or SourceTerm.zero()
        if self.source.is_zero():
            self.load = np.zeros(mesh.n_nodes)
        else:
            self.load = domain.load_vector(mesh, domain.source_values(mesh, self.source))
        self.reaction_power = reaction_power
        self._G = mesh.gradient_operator
        self._vol = mesh.volumes

    def with_integrand(self, integrand: IntegrandSpec) -> "EnergyFunctional":
        clone = object.__new__(EnergyFunctional)
        clone.__dict__.update(self.__dict__)
        clone.integrand = integrand
        return clone

    def gradients(self, u: np.ndarray) -> np.ndarray:
        grads = (self._G @ u).reshape(self.mesh.n_elements, self.mesh.dim)
        if self.pad:
            grads = np.hstack([np.zeros((grads.shape[0], self.pad)), grads])
        return grads

    def energy(self, u: np.ndarray) -> float:
        value = float(np.sum(self._vol * evaluate_many(self.integrand, self.gradients(u))))
        value -= float(self.load @ u)
        if self.reaction_power is not None:
            value += float(self.mesh.lumped_weights @ np.abs(u) ** self.reaction_power)
        return value

    def gradient(self, u: np.ndarray) -> np.ndarray:
        """Nodal gradient (before degree-of-freedom reduction)."""
        flux = self._vol[:, None] * subgradient_many(self.integrand, self.gradients(u))
        g = self._G.T @ flux[:, self.pad:].ravel() - self.load
        if self.reaction_power is not None:
            r = self.reaction_power
            g = g + self.mesh.lumped_weights * r * np.abs(u) ** (r - 1.0) * np.sign(u)
        return g


def assemble_energy(u: Field, F: IntegrandSpec, f: SourceTerm) -> float:
    """sum_T |T| F(grad u) - integral f u."""
    return EnergyFunctional(u.mesh, F, f).energy(u.values)


def assemble_subgradient(u: Field, F: IntegrandSpec, f: SourceTerm) -> np.ndarray:
    """Energy subgradient restricted to the free degrees of freedom of u's constraint."""
    dofs = build_dof_map(u.mesh, u.constraint, _endpoint_values(u))
    return dofs.reduce(EnergyFunctional(u.mesh, F, f).gradient(u.values))


def _endpoint_values(u: Field) -> Tuple[float, float]:
    if u.constraint == ConstraintTag.ENDPOINT_VALUES:
        return float(u.values[0]), float(u.values[-1])
    return 0.0, 0.0


# =============================================================================
# Certificate
# =============================================================================

class GapCertificate:
    """
    Upper bound on alpha * integral |grad(u - u*)|**q from the reduced gradient.

    Uniform convexity gives E(v) >= E(u) + <g, v - u> + alpha D(v - u) with
    D(w) = integral |grad w|**q. With a = sup <g, w> / |grad w|_q, minimising
    -a t + alpha t**q over t bounds the energy gap E(u) - E(u*) by
    (1 - 1/q) a t* with t* = (a / (alpha q))**(1/(q-1)); the same inequality
    taken at u* bounds alpha D(u - u*) by that gap.
    """

    def __init__(self, mesh: Mesh, dofs: DofMap, alpha: float, q: float):
        self.alpha = alpha
        self.q = q
        self.volume = float(np.sum(mesh.volumes))
        K = (dofs.prolongation.T @ mesh.stiffness @ dofs.prolongation).tocsc()
        self._lu = splu(K) if dofs.n_free else None

    def __call__(self, g: np.ndarray) -> float:
        if self._lu is None:
            return 0.0
        a = float(np.sqrt(max(g @ self._lu.solve(g), 0.0)))
        if self.q > 2:
            # |grad w|_2 <= |Omega|^(1/2 - 1/q) |grad w|_q
            a *= self.volume ** (0.5 - 1.0 / self.q)
        t_star = (a / (self.alpha * self.q)) ** (1.0 / (self.q - 1.0))
        return (1.0 - 1.0 / self.q) * a * t_star


# =============================================================================
# Solutions
# =============================================================================

@dataclass
class Solution:
    """
    Result of a solve.

    The field's constraint tag matches the role; energy never exceeds the
    energy of the initial iterate.
    """
    field: Field
    role: SolutionRole
    energy: float
    iterations: int
    converged: bool
    certificate: Optional[float] = None
    stop_reason: str = ""
    initial_energy: float = float("nan")
    trace: List[TraceRow] = field(default_factory=list)
    wall_seconds: float = 0.0

    def __post_init__(self):
        expected = ROLE_CONSTRAINTS[SolutionRole(self.role)]
        if self.field.constraint != expected:
            raise ValueError(
                f"role {self.role} requires constraint {expected.value}, got {self.field.constraint.value}"
            )

    def summary(self) -> dict:
        return {
            "role": SolutionRole(self.role).value,
            "energy": self.energy,
            "iterations": self.iterations,
            "converged": self.converged,
            "certificate": self.certificate,
            "stop_reason": self.stop_reason,
            "nodes": self.field.mesh.n_nodes,
        }


@dataclass
class _DescentResult:
    z: np.ndarray
    energy: float
    iterations: int
    stop_reason: str
    trace: List[TraceRow]


def _descend(
    fun: EnergyFunctional,
    dofs: DofMap,
    z0: np.ndarray,
    opts: SolverOptions,
    certificate: Optional[GapCertificate] = None,
    mu: float = 0.0,
) -> _DescentResult:
    """Armijo backtracking descent with spectral step initialisation."""

    def energy(z):
        return fun.energy(dofs.expand(z))

    def grad(z):
        return dofs.reduce(fun.gradient(dofs.expand(z)))

    z = z0.copy()
    E = energy(z)
    if not np.isfinite(E):
        raise SolverError(f"initial energy is not finite ({E})")
    g = grad(z)
    trace: List[TraceRow] = []
    if dofs.n_free == 0:
        return _DescentResult(z, E, 0, "gradient", trace)

    g_scale = max(float(np.linalg.norm(g)), float(np.linalg.norm(dofs.reduce(fun.load))), 1e-300)
    step = opts.initial_step / max(float(np.max(np.abs(g))), 1e-300)
    history = [E]
    stop_reason = "max_iters"
    iterations = 0

    for k in range(opts.max_iters):
        g_norm = float(np.linalg.norm(g))
        if g_norm <= opts.grad_tol * g_scale:
            stop_reason = "gradient"
            break

        direction = -g
        slope = -g_norm ** 2
        e_floor = 64.0 * EPS * max(abs(E), 1e-300)
        accepted = False
        g_trial = None
        for _ in range(opts.max_backtracks):
            z_trial = z + step * direction
            E_trial = energy(z_trial)
            if np.isfinite(E_trial):
                if E_trial <= E + opts.armijo_c * step * slope:
                    accepted = True
                elif opts.roundoff_guard and E - e_floor <= E_trial <= E:
                    # decrease is at roundoff; judge descent by the slope at the trial point
                    g_trial = grad(z_trial)
                    if g_trial @ direction <= (2.0 * opts.armijo_c - 1.0) * slope:
                        accepted = True
                    else:
                        g_trial = None
            if accepted:
                break
            step *= opts.backtrack_rho

        if not accepted:
            stop_reason = "stalled"
            break

        g_new = grad(z_trial) if g_trial is None else g_trial
        s = z_trial - z
        y = g_new - g
        z, E, g = z_trial, E_trial, g_new
        iterations = k + 1
        history.append(E)
        trace.append(TraceRow(iterations, E, step, float(np.linalg.norm(g)), mu))

        if opts.bb_steps:
            sy = float(s @ y)
            step = float(s @ s) / sy if sy > 0 else step / opts.backtrack_rho
        else:
            step = step / opts.backtrack_rho

        if len(history) > opts.window:
            decrease = history[-opts.window - 1] - E
            if opts.energy_tol > 0 and decrease <= opts.energy_tol * max(abs(E), 1e-300):
                stop_reason = "energy_window"
                break
            if iterations % opts.window == 0:
                logger.debug(f"iter {iterations}: E={E:.12e} |g|={trace[-1].grad_norm:.3e} mu={mu}")
                if certificate is not None and opts.certificate_tol is not None:
                    if certificate(g) <= opts.certificate_tol:
                        stop_reason = "certificate"
                        break

    return _DescentResult(z, E, iterations, stop_reason, trace)


def _schedule(F: IntegrandSpec, opts: SolverOptions) -> List[float]:
    if F.kind == IntegrandKind.ANISO_MAX and opts.smoothing_schedule:
        schedule = list(opts.smoothing_schedule)
        if schedule[-1] != 0.0:
            schedule.append(0.0)
        return schedule
    return [F.smoothing_mu]


def minimize(
    init: Field,
    F: IntegrandSpec,
    f: SourceTerm,
    opts: SolverOptions,
    role: Optional[SolutionRole] = None,
    reaction_power: Optional[float] = None,
) -> Solution:
    """
    Minimise the energy over init's constrained space, starting at init.

    Nonsmooth integrands run the smoothing schedule as an outer loop, warm
    starting each phase and finishing with the exact density.
    """
    started = time.perf_counter()
    role = role or _default_role(init.constraint)
    mesh = init.mesh
    dofs = build_dof_map(mesh, init.constraint, _endpoint_values(init))
    exact = EnergyFunctional(mesh, F, f, reaction_power)
    E_init = exact.energy(init.values)

    certificate = GapCertificate(mesh, dofs, F.alpha, F.q) if init.constraint != ConstraintTag.NONE else None

    z = dofs.restrict(init.values)
    iterations = 0
    trace: List[TraceRow] = []
    stop_reason = "gradient"
    for mu in _schedule(F, opts):
        fun = exact.with_integrand(with_smoothing(F, mu)) if mu != F.smoothing_mu else exact
        phase_cert = certificate if mu == 0.0 or F.kind != IntegrandKind.ANISO_MAX else None
        result = _descend(fun, dofs, z, opts, phase_cert, mu)
        z = result.z
        iterations += result.iterations
        trace.extend(result.trace)
        stop_reason = result.stop_reason
        logger.debug(f"phase mu={mu}: {result.iterations} iterations, stop={result.stop_reason}")

    values = dofs.expand(z)
    energy = exact.energy(values)
    if not np.isfinite(energy):
        raise SolverError(f"solver produced a non-finite energy ({energy})")
    if energy > E_init:
        # smoothing phases minimise a different energy; never return worse than the start
        values, energy = np.array(init.values), E_init

    cert_value = None
    if certificate is not None:
        cert_value = certificate(dofs.reduce(exact.gradient(values)))

    solution = Solution(
        field=Field(mesh, values, init.constraint),
        role=role,
        energy=energy,
        iterations=iterations,
        converged=stop_reason != "max_iters",
        certificate=cert_value,
        stop_reason=stop_reason,
        initial_energy=E_init,
        trace=trace,
        wall_seconds=time.perf_counter() - started,
    )
    if not solution.converged:
        logger.warning(f"{solution.role.value}: max_iters={opts.max_iters} reached, returning partial result")
    logger.info(
        f"Solved {solution.role.value}: E={energy:.10e} after {iterations} iterations ({stop_reason})"
    )
    return solution


def _default_role(tag: ConstraintTag) -> SolutionRole:
    for role, expected in ROLE_CONSTRAINTS.items():
        if expected == tag:
            return role
    raise ValueError(f"no solution role carries constraint {tag.value}")


# =============================================================================
# Direct solve for quadratic integrands
# =============================================================================

def _quadratic_matrix(F: IntegrandSpec) -> np.ndarray:
    if F.kind == IntegrandKind.QUADRATIC_FORM:
        return F.matrix_array
    if F.kind == IntegrandKind.POWER and F.q == 2:
        return np.eye(F.dim)
    raise ValueError(
        "direct solve requires a quadratic integrand (quadratic-form, or power with q = 2), "
        f"got {F.kind.value} with q={F.q}"
    )


def quadratic_stiffness(mesh: Mesh, F: IntegrandSpec) -> sp.csr_matrix:
    """K with sum_T |T| A grad u . grad u = u^T K u (cross-section meshes use the trailing block of A)."""
    A = _quadratic_matrix(F)
    pad = F.dim - mesh.dim
    A = A[pad:, pad:]
    G = mesh.gradient_operator
    d = mesh.dim
    V = sp.diags(mesh.volumes)
    K = sp.csr_matrix((mesh.n_nodes, mesh.n_nodes))
    for a in range(d):
        Ga = G[a::d]
        for b in range(d):
            if A[a, b] != 0.0:
                K = K + A[a, b] * (Ga.T @ V @ G[b::d])
    return K.tocsr()


def _direct_on_mesh(
    init: Field,
    F: IntegrandSpec,
    f: SourceTerm,
    role: SolutionRole,
    reaction_power: Optional[float] = None,
) -> Solution:
    started = time.perf_counter()
    mesh = init.mesh
    dofs = build_dof_map(mesh, init.constraint, _endpoint_values(init))
    fun = EnergyFunctional(mesh, F, f, reaction_power)
    K = quadratic_stiffness(mesh, F)
    if reaction_power is not None:
        if reaction_power != 2:
            raise ValueError(f"direct solve needs a quadratic reaction term, got power {reaction_power}")
        K = K + sp.diags(mesh.lumped_weights)

    P = dofs.prolongation
    system = (2.0 * (P.T @ K @ P)).tocsc()
    rhs = dofs.reduce(fun.load - 2.0 * (K @ dofs.fixed))
    if dofs.n_free:
        with np.errstate(all="ignore"):
            z = np.atleast_1d(spsolve(system, rhs))
        if not np.all(np.isfinite(z)):
            raise SolverError("direct solve failed: singular stiffness system")
    else:
        z = np.zeros(0)
    values = dofs.expand(z)
    energy = fun.energy(values)
    residual = float(np.linalg.norm(system @ z - rhs)) if dofs.n_free else 0.0
    logger.info(f"Direct solve {role.value}: E={energy:.10e}, {dofs.n_free} unknowns, residual {residual:.2e}")
    return Solution(
        field=Field(mesh, values, init.constraint),
        role=role,
        energy=energy,
        iterations=1,
        converged=True,
        certificate=None,
        stop_reason="direct",
        initial_energy=fun.energy(init.values),
        wall_seconds=time.perf_counter() - started,
    )


def solve_quadratic_direct(
    target: Union[CylinderSpec, CrossSection],
    F: IntegrandSpec,
    f: SourceTerm,
    h: float,
    constraint: ConstraintTag = ConstraintTag.DIRICHLET_ALL,
) -> Solution:
    """Direct sparse solve of 2 (A grad u, grad v) = (f, v) on the free nodes."""
    if isinstance(target, CylinderSpec):
        mesh = domain.build_cylinder_mesh(target, h)
        role = SolutionRole.W_ELL if constraint == ConstraintTag.TIED_ENDS else SolutionRole.U_ELL
    else:
        mesh = domain.build_cross_section_mesh(target, h)
        role = SolutionRole.U_INFTY
    return _direct_on_mesh(domain.zero_field(mesh, constraint), F, f, role)


def use_direct(F: IntegrandSpec, opts: SolverOptions) -> bool:
    if opts.method == SolverMethod.DIRECT:
        _quadratic_matrix(F)
        return True
    return opts.method == SolverMethod.AUTO and F.is_quadratic


def solve_on(
    init: Field,
    F: IntegrandSpec,
    f: SourceTerm,
    opts: SolverOptions,
    role: SolutionRole,
    reaction_power: Optional[float] = None,
) -> Solution:
    """Dispatch to the direct or iterative path according to opts.method."""
    quadratic_reaction = reaction_power is None or reaction_power == 2
    if use_direct(F, opts) and quadratic_reaction:
        return _direct_on_mesh(init, F, f, role, reaction_power)
    return minimize(init, F, f, opts, role=role, reaction_power=reaction_power)


# =============================================================================
# Problem-level solves
# =============================================================================

def solve_cross_section(
    omega2: CrossSection, F: IntegrandSpec, f: SourceTerm, h: float, opts: SolverOptions
) -> Solution:
    """u_infty: minimiser of integral F(0, grad u) - f u over W0(omega2)."""
    if F.dim != omega2.dim + 1:
        raise ValueError(f"integrand dimension {F.dim} does not match cylinder dimension {omega2.dim + 1}")
    mesh = domain.build_cross_section_mesh(omega2, h)
    init = domain.zero_field(mesh, ConstraintTag.DIRICHLET_ALL)
    return solve_on(init, F, f, opts, SolutionRole.U_INFTY)


def solve_cylinder(
    spec: CylinderSpec,
    F: IntegrandSpec,
    f: SourceTerm,
    h: float,
    opts: SolverOptions,
    u_inf: Optional[Solution] = None,
) -> Solution:
    """
    u_ell: Dirichlet minimiser on the cylinder.

    The iterative path starts from u_infty copied along x1 with the end planes
    set to zero.
    """
    if F.dim != spec.n:
        raise ValueError(f"integrand dimension {F.dim} does not match cylinder dimension {spec.n}")
    mesh = domain.build_cylinder_mesh(spec, h)
    if use_direct(F, opts):
        return _direct_on_mesh(domain.zero_field(mesh, ConstraintTag.DIRICHLET_ALL), F, f, SolutionRole.U_ELL)

    if u_inf is None:
        u_inf = solve_cross_section(spec.omega2, F, f, h, opts)
    values = np.array(domain.extend_in_x1(u_inf.field, mesh).values)
    values[mesh.boundary_class != BoundaryClass.INTERIOR] = 0.0
    init = Field(mesh, values, ConstraintTag.DIRICHLET_ALL)
    return minimize(init, F, f, opts, role=SolutionRole.U_ELL)


def solve_tied_ends(
    spec: CylinderSpec, F: IntegrandSpec, f: SourceTerm, h: float, opts: SolverOptions
) -> Solution:
    """w_ell: minimiser over fields vanishing laterally with equal end-face values."""
    if F.dim != spec.n:
        raise ValueError(f"integrand dimension {F.dim} does not match cylinder dimension {spec.n}")
    mesh = domain.build_cylinder_mesh(spec, h)
    init = domain.zero_field(mesh, ConstraintTag.TIED_ENDS)
    return solve_on(init, F, f, opts, SolutionRole.W_ELL)
