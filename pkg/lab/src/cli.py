"""
CylinderLab Command Runner
===========================
Parses JSON run configurations into a validated RunConfig and executes the
solve / sweep / audit / onedim commands, writing every artifact and a
summary of the checks.

Exit codes: 0 success, 1 check failure, 2 configuration error, 3 solver failure.
"""

import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np

from . import __version__, asymptotics, integrand, onedim, reporting, solver
from .config import AUDIT_SAMPLES, AUDIT_TOL, DEFAULT_OUTPUT_DIR, DEFAULT_SEED, ENGINE_VERSION, SWEEP_WORKERS
from .domain import extend_in_x1, grad_q_norm, poincare_constant, with_dual_norm
from .schemas import (
    AuditReport,
    CheckFailure,
    CheckReport,
    ConfigError,
    ConfigIssue,
    CrossSection,
    CylinderSpec,
    IntegrandKind,
    IntegrandSpec,
    LabError,
    MeshError,
    OneDimCoerciveSpec,
    OneDimSourceSpec,
    SolverError,
    SolverMethod,
    SolverOptions,
    SourceForm,
    SourceTerm,
)

logger = logging.getLogger(__name__)

COMMANDS = ("solve", "sweep", "audit", "onedim")
FORMATS = ("csv", "text", "json")
ONEDIM_PROBLEMS = ("source", "coercive", "both")

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2
EXIT_SOLVER = 3

AUDIT_ANCHORS = {
    "uniform_convexity": "uniform convexity of power q: 2F(mid) + alpha|xi - eta|^q <= F(xi) + F(eta)",
    "growth": "growth envelope lambda|xi|^q <= F(xi) <= Lambda|xi|^q",
    "upper_modulus": "upper modulus for q = 2: F(xi) + F(eta) - 2F(mid) <= beta|xi - eta|^2",
    "lipschitz": "Lipschitz-type estimate |F(Q) - F(P)| <= 2^q Lambda max(|P|,|Q|)^(q-1) |Q - P|",
    "subgradient_inequality": "convexity certificate F(eta) >= F(xi) + dF(xi).(eta - xi)",
}


# =============================================================================
# Configuration tree
# =============================================================================

@dataclass(frozen=True)
class IntegrandConfig:
    kind: str
    q: float
    lambda_lo: float
    lambda_hi: float
    alpha: float
    beta: Optional[float]
    dim: int
    matrix: Optional[Tuple[Tuple[float, ...], ...]] = None
    weight: Optional[float] = None
    smoothing_mu: float = 0.0

    def to_spec(self) -> IntegrandSpec:
        return IntegrandSpec(
            kind=IntegrandKind(self.kind),
            q=self.q,
            lambda_lo=self.lambda_lo,
            lambda_hi=self.lambda_hi,
            alpha=self.alpha,
            beta=self.beta,
            dim=self.dim,
            matrix=self.matrix,
            weight=self.weight,
            smoothing_mu=self.smoothing_mu,
        )


@dataclass(frozen=True)
class DomainConfig:
    ells: Tuple[float, ...]
    omega2: Tuple[Tuple[float, float], ...]
    h: float

    def cross_section(self) -> CrossSection:
        return CrossSection(self.omega2)


@dataclass(frozen=True)
class SourceConfig:
    form: str = "constant"
    value: float = 0.0
    coefficients: Tuple[float, ...] = ()
    values: Tuple[float, ...] = ()

    def to_source(self) -> SourceTerm:
        return SourceTerm(
            form=SourceForm(self.form),
            value=self.value,
            coefficients=self.coefficients,
            samples=self.values or None,
        )


@dataclass(frozen=True)
class OutputConfig:
    directory: str = DEFAULT_OUTPUT_DIR
    formats: Tuple[str, ...] = FORMATS
    timing_in_csv: bool = False
    dump_fields: bool = True


@dataclass(frozen=True)
class AuditConfig:
    n_samples: int = AUDIT_SAMPLES
    tol: float = AUDIT_TOL


@dataclass(frozen=True)
class OneDimConfig:
    problem: str = "both"
    gamma: float = 1.0
    bv_left: float = 1.0
    bv_right: float = 1.0
    ells: Tuple[float, ...] = (2.0, 4.0, 8.0, 16.0)
    h: float = 1.0 / 64.0


@dataclass(frozen=True)
class RunConfig:
    command: str
    integrand: IntegrandConfig
    seed: int = DEFAULT_SEED
    domain: Optional[DomainConfig] = None
    source: SourceConfig = field(default_factory=SourceConfig)
    solver: SolverOptions = field(default_factory=SolverOptions)
    output: OutputConfig = field(default_factory=OutputConfig)
    audit: AuditConfig = field(default_factory=AuditConfig)
    onedim: Optional[OneDimConfig] = None
    workers: int = SWEEP_WORKERS


# =============================================================================
# Parsing
# =============================================================================

_MISSING = object()


class _Reader:
    """Collects every issue while walking a parsed JSON document."""

    def __init__(self):
        self.issues: List[ConfigIssue] = []

    def fail(self, path: str, message: str) -> None:
        self.issues.append(ConfigIssue(path, message))

    def block(self, data: Any, path: str, allowed: Tuple[str, ...]) -> Dict[str, Any]:
        if not isinstance(data, dict):
            self.fail(path, "must be an object")
            return {}
        for key in sorted(set(data) - set(allowed)):
            self.fail(f"{path}.{key}", "unknown key")
        return data

    def number(self, data, key, path, default=_MISSING, lo=None, hi=None, lo_open=False, integer=False):
        value = data.get(key, default)
        where = f"{path}.{key}"
        if value is _MISSING:
            self.fail(where, "is required")
            return None
        if value is None and default is None:
            return None
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            self.fail(where, f"must be a number, got {value!r}")
            return None
        if integer and int(value) != value:
            self.fail(where, f"must be an integer, got {value!r}")
            return None
        if not np.isfinite(value):
            self.fail(where, "must be finite")
            return None
        if lo is not None and (value <= lo if lo_open else value < lo):
            self.fail(where, f"must be {'>' if lo_open else '>='} {lo:g}, got {value:g}")
            return None
        if hi is not None and value > hi:
            self.fail(where, f"must be <= {hi:g}, got {value:g}")
            return None
        return int(value) if integer else float(value)

    def boolean(self, data, key, path, default):
        value = data.get(key, default)
        if not isinstance(value, bool):
            self.fail(f"{path}.{key}", f"must be true or false, got {value!r}")
            return default
        return value

    def choice(self, data, key, path, options, default=_MISSING):
        value = data.get(key, default)
        if value is _MISSING:
            self.fail(f"{path}.{key}", "is required")
            return None
        if value not in options:
            self.fail(f"{path}.{key}", f"must be one of {', '.join(options)}, got {value!r}")
            return None
        return value

    def numbers(self, data, key, path, default=_MISSING, min_len=1):
        value = data.get(key, default)
        where = f"{path}.{key}"
        if value is _MISSING:
            self.fail(where, "is required")
            return None
        if not isinstance(value, (list, tuple)) or len(value) < min_len:
            self.fail(where, f"must be a list of at least {min_len} numbers")
            return None
        if any(isinstance(v, bool) or not isinstance(v, (int, float)) or not np.isfinite(v) for v in value):
            self.fail(where, "must contain finite numbers only")
            return None
        return tuple(float(v) for v in value)


_INTEGRAND_KEYS = ("kind", "q", "lambda_lo", "lambda_hi", "alpha", "beta", "dim", "params", "smoothing_mu")
_DOMAIN_KEYS = ("ell", "ells", "omega2", "h")
_SOURCE_KEYS = ("form", "value", "coefficients", "values")
_OUTPUT_KEYS = ("directory", "formats", "timing_in_csv", "dump_fields")
_AUDIT_KEYS = ("n_samples", "tol")
_ONEDIM_KEYS = ("problem", "gamma", "bv_left", "bv_right", "ells", "h")
_SOLVER_KEYS = tuple(SolverOptions().to_dict())
_TOP_KEYS = ("command", "seed", "workers", "integrand", "domain", "source", "solver", "output", "audit", "onedim")


def _parse_integrand(r: _Reader, data: Any, default_dim: int) -> Optional[IntegrandConfig]:
    path = "integrand"
    data = r.block(data, path, _INTEGRAND_KEYS)
    kind = r.choice(data, "kind", path, tuple(k.value for k in IntegrandKind))
    q = r.number(data, "q", path, default=2.0)
    if q is not None and q < 2:
        r.fail(f"{path}.q", f"q must be >= 2 (no uniformly convex function of power q exists for q < 2), got {q:g}")
        q = None
    dim = r.number(data, "dim", path, default=default_dim, lo=1, integer=True)
    mu = r.number(data, "smoothing_mu", path, default=0.0, lo=0.0)
    params = r.block(data.get("params", {}), f"{path}.params", ("matrix", "weight"))
    if kind is None or q is None or dim is None or mu is None:
        return None

    matrix, weight = None, None
    if kind == IntegrandKind.QUADRATIC_FORM.value:
        raw = params.get("matrix", np.eye(dim).tolist())
        try:
            A = np.asarray(raw, dtype=float)
        except (TypeError, ValueError):
            r.fail(f"{path}.params.matrix", "must be a square matrix of numbers")
            return None
        if A.shape != (dim, dim):
            r.fail(f"{path}.params.matrix", f"must be {dim}x{dim}, got shape {A.shape}")
            return None
        if q != 2:
            r.fail(f"{path}.q", "quadratic-form requires q = 2")
            return None
        if not np.allclose(A, A.T, rtol=0.0, atol=1e-14 * max(1.0, np.abs(A).max())):
            r.fail(f"{path}.params.matrix", "matrix must be symmetric")
            return None
        if np.linalg.eigvalsh(A)[0] <= 0:
            r.fail(f"{path}.params.matrix", "matrix must be positive definite")
            return None
        matrix = tuple(tuple(float(v) for v in row) for row in A)
    elif kind == IntegrandKind.ANISO_MAX.value:
        weight = r.number(params, "weight", f"{path}.params", default=1.0, lo=0.0, lo_open=True)
        if weight is None:
            return None
    elif params:
        r.fail(f"{path}.params", f"{kind} takes no parameters")

    try:
        defaults = integrand.builtin_integrand(IntegrandKind(kind), q=q, dim=dim, matrix=matrix,
                                               weight=weight or 1.0, smoothing_mu=mu)
    except ValueError as exc:
        r.fail(f"{path}.params", str(exc))
        return None
    lam = r.number(data, "lambda_lo", path, default=defaults.lambda_lo, lo=0.0, lo_open=True)
    Lam = r.number(data, "lambda_hi", path, default=defaults.lambda_hi, lo=0.0, lo_open=True)
    alpha = r.number(data, "alpha", path, default=defaults.alpha, lo=0.0, lo_open=True)
    beta = r.number(data, "beta", path, default=defaults.beta if "beta" not in data else None, lo=0.0, lo_open=True)
    if None in (lam, Lam, alpha):
        return None
    if "beta" not in data and beta is not None and alpha > beta:
        # the built-in beta would sit below the declared alpha
        beta = None
    config = IntegrandConfig(kind=kind, q=q, lambda_lo=lam, lambda_hi=Lam, alpha=alpha, beta=beta, dim=dim,
                             matrix=matrix, weight=weight, smoothing_mu=mu)
    try:
        config.to_spec()
    except ValueError as exc:
        r.fail(path, str(exc))
        return None
    return config


def _parse_domain(r: _Reader, data: Any, command: str) -> Optional[DomainConfig]:
    path = "domain"
    data = r.block(data, path, _DOMAIN_KEYS)
    h = r.number(data, "h", path, lo=0.0, lo_open=True)
    raw = data.get("omega2", [[0.0, 1.0]])
    omega2 = None
    if (
        not isinstance(raw, list)
        or not 1 <= len(raw) <= 2
        or not all(isinstance(a, list) and len(a) == 2 for a in raw)
    ):
        r.fail(f"{path}.omega2", "must be a list of one or two [a, b] pairs")
    else:
        try:
            omega2 = CrossSection(tuple((float(a), float(b)) for a, b in raw)).bounds
        except (TypeError, ValueError) as exc:
            r.fail(f"{path}.omega2", str(exc))

    ells = None
    if command == "sweep":
        if "ell" in data:
            r.fail(f"{path}.ell", "sweep takes a list 'ells'")
        ells = r.numbers(data, "ells", path, min_len=1)
        if ells is not None:
            if any(b <= a for a, b in zip(ells, ells[1:])):
                r.fail(f"{path}.ells", "must be strictly increasing")
            if any(e <= 2 for e in ells):
                r.fail(f"{path}.ells", "every ell must be > 2")
    else:
        if "ells" in data:
            r.fail(f"{path}.ells", f"{command} takes a single 'ell'")
        ell = r.number(data, "ell", path, lo=1.0, lo_open=True)
        ells = (ell,) if ell is not None else None
    if h is None or omega2 is None or ells is None:
        return None
    return DomainConfig(ells=ells, omega2=omega2, h=h)


def _parse_source(r: _Reader, data: Any) -> SourceConfig:
    path = "source"
    data = r.block(data, path, _SOURCE_KEYS)
    form = r.choice(data, "form", path, tuple(f.value for f in SourceForm), default="constant")
    if form == "polynomial":
        coefficients = r.numbers(data, "coefficients", path) or ()
        return SourceConfig(form=form, coefficients=coefficients)
    if form == "nodal":
        return SourceConfig(form=form, values=r.numbers(data, "values", path) or ())
    value = r.number(data, "value", path, default=0.0)
    return SourceConfig(form="constant", value=value if value is not None else 0.0)


def _parse_solver(r: _Reader, data: Any, seed: int) -> SolverOptions:
    path = "solver"
    data = r.block(data, path, _SOLVER_KEYS)
    defaults = SolverOptions().to_dict()
    values: Dict[str, Any] = {}
    for key in ("max_iters", "window", "max_backtracks"):
        values[key] = r.number(data, key, path, default=defaults[key], lo=1, integer=True)
    for key in ("energy_tol", "grad_tol"):
        values[key] = r.number(data, key, path, default=defaults[key], lo=0.0)
    values["armijo_c"] = r.number(data, "armijo_c", path, default=defaults["armijo_c"], lo=0.0, lo_open=True, hi=1.0)
    values["backtrack_rho"] = r.number(data, "backtrack_rho", path, default=defaults["backtrack_rho"], lo=0.0,
                                       lo_open=True, hi=1.0)
    values["initial_step"] = r.number(data, "initial_step", path, default=defaults["initial_step"], lo=0.0,
                                      lo_open=True)
    values["certificate_tol"] = r.number(data, "certificate_tol", path, default=None, lo=0.0)
    values["bb_steps"] = r.boolean(data, "bb_steps", path, defaults["bb_steps"])
    values["roundoff_guard"] = r.boolean(data, "roundoff_guard", path, defaults["roundoff_guard"])
    values["method"] = r.choice(data, "method", path, tuple(m.value for m in SolverMethod), default=defaults["method"])
    values["smoothing_schedule"] = r.numbers(data, "smoothing_schedule", path,
                                             default=defaults["smoothing_schedule"], min_len=0)
    values["seed"] = seed
    if "seed" in data:
        values["seed"] = r.number(data, "seed", path, integer=True)
    for key in ("armijo_c", "backtrack_rho"):
        if values[key] is not None and values[key] >= 1.0:
            r.fail(f"{path}.{key}", f"must be < 1, got {values[key]:g}")
            values[key] = None
    if any(v is None for k, v in values.items() if k != "certificate_tol"):
        return SolverOptions()
    try:
        return SolverOptions(**values)
    except ValueError as exc:
        r.fail(path, str(exc))
        return SolverOptions()


def _parse_output(r: _Reader, data: Any) -> OutputConfig:
    path = "output"
    data = r.block(data, path, _OUTPUT_KEYS)
    directory = data.get("directory", DEFAULT_OUTPUT_DIR)
    if not isinstance(directory, str) or not directory:
        r.fail(f"{path}.directory", "must be a non-empty string")
        directory = DEFAULT_OUTPUT_DIR
    formats = data.get("formats", list(FORMATS))
    if not isinstance(formats, list) or any(f not in FORMATS for f in formats):
        r.fail(f"{path}.formats", f"must be a list drawn from {', '.join(FORMATS)}")
        formats = list(FORMATS)
    return OutputConfig(
        directory=directory,
        formats=tuple(f for f in FORMATS if f in formats),
        timing_in_csv=r.boolean(data, "timing_in_csv", path, False),
        dump_fields=r.boolean(data, "dump_fields", path, True),
    )


def _parse_audit(r: _Reader, data: Any) -> AuditConfig:
    path = "audit"
    data = r.block(data, path, _AUDIT_KEYS)
    n = r.number(data, "n_samples", path, default=AUDIT_SAMPLES, lo=1, integer=True)
    tol = r.number(data, "tol", path, default=AUDIT_TOL, lo=0.0)
    return AuditConfig(n_samples=n or AUDIT_SAMPLES, tol=AUDIT_TOL if tol is None else tol)


def _parse_onedim(r: _Reader, data: Any) -> Optional[OneDimConfig]:
    path = "onedim"
    data = r.block(data, path, _ONEDIM_KEYS)
    defaults = OneDimConfig()
    problem = r.choice(data, "problem", path, ONEDIM_PROBLEMS, default=defaults.problem)
    gamma = r.number(data, "gamma", path, default=defaults.gamma, lo=0.0, lo_open=True)
    a = r.number(data, "bv_left", path, default=defaults.bv_left, lo=0.0)
    b = r.number(data, "bv_right", path, default=defaults.bv_right, lo=0.0)
    h = r.number(data, "h", path, default=defaults.h, lo=0.0, lo_open=True)
    ells = r.numbers(data, "ells", path, default=list(defaults.ells))
    if ells is not None:
        if any(e2 <= e1 for e1, e2 in zip(ells, ells[1:])):
            r.fail(f"{path}.ells", "must be strictly increasing")
        if any(e <= 0 for e in ells):
            r.fail(f"{path}.ells", "every ell must be > 0")
    if None in (problem, gamma, a, b, h, ells):
        return None
    return OneDimConfig(problem=problem, gamma=gamma, bv_left=a, bv_right=b, ells=ells, h=h)


def parse_config(text: str) -> RunConfig:
    """
    Validate a JSON run configuration. Raises ConfigError listing every issue
    found, each with its path.
    """
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([ConfigIssue("$", f"not valid JSON: {exc}")])
    r = _Reader()
    data = r.block(data, "$", _TOP_KEYS)
    command = r.choice(data, "command", "$", COMMANDS)
    seed = r.number(data, "seed", "$", default=DEFAULT_SEED, integer=True)
    workers = r.number(data, "workers", "$", default=SWEEP_WORKERS, lo=1, integer=True)
    seed = DEFAULT_SEED if seed is None else seed

    needs_domain = command in ("solve", "sweep")
    if command is not None:
        for block in ("integrand",) + (("domain", "source") if needs_domain else ()) + (
            ("onedim",) if command == "onedim" else ()
        ):
            if block not in data:
                r.fail(f"$.{block}", f"block is required for command '{command}'")
        if command != "onedim" and "onedim" in data:
            r.fail("$.onedim", f"not used by command '{command}'")
        if not needs_domain and "domain" in data:
            r.fail("$.domain", f"not used by command '{command}'")

    domain_config = None
    default_dim = 1 if command == "onedim" else 2
    if needs_domain and "domain" in data:
        domain_config = _parse_domain(r, data["domain"], command)
        raw_omega = data["domain"].get("omega2") if isinstance(data["domain"], dict) else None
        if isinstance(raw_omega, list) and len(raw_omega) in (1, 2):
            default_dim = len(raw_omega) + 1

    integrand_config = _parse_integrand(r, data["integrand"], default_dim) if "integrand" in data else None
    if integrand_config is not None:
        if command == "onedim" and integrand_config.dim != 1:
            r.fail("integrand.dim", "onedim requires a one-dimensional integrand")
        if domain_config is not None and integrand_config.dim != len(domain_config.omega2) + 1:
            r.fail("integrand.dim", f"must equal {len(domain_config.omega2) + 1} for this cross-section")

    source_config = _parse_source(r, data.get("source", {}))
    solver_options = _parse_solver(r, data.get("solver", {}), seed)
    output_config = _parse_output(r, data.get("output", {}))
    audit_config = _parse_audit(r, data.get("audit", {}))
    onedim_config = _parse_onedim(r, data["onedim"]) if "onedim" in data and command == "onedim" else None

    if r.issues:
        raise ConfigError(r.issues)
    return RunConfig(
        command=command,
        integrand=integrand_config,
        seed=seed,
        domain=domain_config,
        source=source_config,
        solver=solver_options,
        output=output_config,
        audit=audit_config,
        onedim=onedim_config,
        workers=workers,
    )


def config_to_dict(config: RunConfig) -> Dict[str, Any]:
    """Fully expanded, JSON-ready form of a RunConfig (parse_config accepts it back)."""
    ic = config.integrand
    params: Dict[str, Any] = {}
    if ic.matrix is not None:
        params["matrix"] = [list(row) for row in ic.matrix]
    if ic.weight is not None:
        params["weight"] = ic.weight
    data: Dict[str, Any] = {
        "command": config.command,
        "seed": config.seed,
        "workers": config.workers,
        "integrand": {
            "kind": ic.kind,
            "q": ic.q,
            "lambda_lo": ic.lambda_lo,
            "lambda_hi": ic.lambda_hi,
            "alpha": ic.alpha,
            "beta": ic.beta,
            "dim": ic.dim,
            "params": params,
            "smoothing_mu": ic.smoothing_mu,
        },
        "source": _source_dict(config.source),
        "solver": config.solver.to_dict(),
        "output": {
            "directory": config.output.directory,
            "formats": list(config.output.formats),
            "timing_in_csv": config.output.timing_in_csv,
            "dump_fields": config.output.dump_fields,
        },
        "audit": asdict(config.audit),
    }
    if config.domain is not None:
        d = config.domain
        data["domain"] = {"omega2": [list(b) for b in d.omega2], "h": d.h}
        if config.command == "sweep":
            data["domain"]["ells"] = list(d.ells)
        else:
            data["domain"]["ell"] = d.ells[0]
    if config.onedim is not None:
        data["onedim"] = {**asdict(config.onedim), "ells": list(config.onedim.ells)}
    return data


def _source_dict(source: SourceConfig) -> Dict[str, Any]:
    if source.form == "polynomial":
        return {"form": "polynomial", "coefficients": list(source.coefficients)}
    if source.form == "nodal":
        return {"form": "nodal", "values": list(source.values)}
    return {"form": "constant", "value": source.value}


def serialize_config(config: RunConfig) -> str:
    return reporting.canonical_json(config_to_dict(config))


# =============================================================================
# Running
# =============================================================================

@dataclass
class RunOutcome:
    exit_code: int
    checks: List[CheckReport]
    audits: List[AuditReport]
    out_dir: Path
    message: str = ""


def run_audits(config: RunConfig) -> List[AuditReport]:
    """Audit the declared constants; every command runs these before solving."""
    spec = config.integrand.to_spec()
    n, tol, seed = config.audit.n_samples, config.audit.tol, config.seed
    audits = [
        integrand.check_growth(spec, n_samples=n, seed=seed, tol=tol),
        integrand.check_uniform_convexity(spec, n_samples=n, seed=seed, tol=tol),
        integrand.check_lipschitz_sampled(spec, n_samples=n, seed=seed, tol=tol),
        integrand.check_subgradient_inequality(spec, n_samples=n, seed=seed, tol=tol),
    ]
    if spec.beta is not None:
        audits.append(integrand.check_upper_modulus(spec, n_samples=n, seed=seed, tol=tol))
    return audits


def _audit_text(audits: List[AuditReport], extra: Dict[str, Any]) -> str:
    blocks = {a.name: a.to_dict() for a in audits}
    blocks.update(extra)
    return reporting.keyed_text(blocks)


def _want(config: RunConfig, fmt: str) -> bool:
    return fmt in config.output.formats


def _dump_solution(config: RunConfig, out: Path, name: str, sol: solver.Solution) -> None:
    if config.output.dump_fields:
        reporting.dump_field(sol.field, out / f"{name}.txt")
    if _want(config, "csv") and sol.trace:
        reporting.write_trace_csv(sol.trace, out / f"trace_{name}.csv")


def _run_solve(config: RunConfig, out: Path) -> Tuple[List[CheckReport], Dict[str, Any]]:
    F = config.integrand.to_spec()
    f = config.source.to_source()
    omega2 = config.domain.cross_section()
    h = config.domain.h
    spec = CylinderSpec(ell=config.domain.ells[0], omega2=omega2)
    opts = config.solver

    u_inf = solver.solve_cross_section(omega2, F, f, h, opts)
    f = with_dual_norm(f, u_inf.field.mesh, F.q)
    u_ell = solver.solve_cylinder(spec, F, f, h, opts, u_inf=u_inf)
    w_ell = solver.solve_tied_ends(spec, F, f, h, opts)
    for name, sol in (("u_infty", u_inf), ("u_ell", u_ell), ("w_ell", w_ell)):
        _dump_solution(config, out, name, sol)

    extended = extend_in_x1(u_inf.field, u_ell.field.mesh)
    tied_distance = grad_q_norm(w_ell.field.difference(extended), F.q)
    per_length = u_ell.energy / spec.base_length
    tied_per_length = w_ell.energy / spec.base_length
    scale = max(abs(u_inf.energy), 1e-300)
    poincare = poincare_constant(omega2, h, F.q)

    checks = [
        CheckReport("energy_nonpositive", "E(u_ell) <= E(0) = 0", u_ell.energy <= 1e-12,
                    {"energy": u_ell.energy}),
        CheckReport("energy_lower_bound", asymptotics.ANCHORS["energy_sandwich"],
                    per_length - u_inf.energy >= -1e-6, {"gap": per_length - u_inf.energy}),
        CheckReport(
            "tied_ends",
            "minimiser over fields with tied end faces equals the cross-section solution",
            abs(tied_per_length - u_inf.energy) <= 1e-6 * max(1.0, scale),
            {"grad_distance": tied_distance, "energy_per_length": tied_per_length, "cross_energy": u_inf.energy},
        ),
        asymptotics.check_pointwise_bounds(u_ell, u_inf, f),
        asymptotics.check_collar_gradient(u_ell, F.q),
        CheckReport(
            "distance_half",
            asymptotics.ANCHORS["distance_decay"],
            True,
            {
                "dist_half": asymptotics.distance_half_cylinder(u_ell, u_inf, F.q),
                "poincare_constant": poincare.value,
                "poincare_exact": poincare.exact,
                "solutions": {s.role.value: s.summary() for s in (u_inf, u_ell, w_ell)},
            },
        ),
    ]
    return checks, {"source": f.to_dict()}


def _run_sweep(config: RunConfig, out: Path) -> Tuple[List[CheckReport], Dict[str, Any]]:
    F = config.integrand.to_spec()
    f = config.source.to_source()
    problem = asymptotics.SweepProblem(
        omega2=config.domain.cross_section(),
        integrand=F,
        source=f,
        h=config.domain.h,
        options=config.solver,
        workers=config.workers,
    )
    writer = None
    if _want(config, "csv"):
        writer = reporting.SweepCsvWriter(out / "sweep.csv", include_timing=config.output.timing_in_csv)
    result = asymptotics.run_sweep(config.domain.ells, problem, on_record=writer)
    if config.output.dump_fields:
        reporting.dump_field(result.cross.field, out / "u_infty.txt")

    records = result.records
    power = asymptotics.fit_power(records, F.q)
    exponential = asymptotics.fit_exponential(records)
    fits = {"power": power.to_dict(), "exponential": exponential.to_dict()}
    if _want(config, "text"):
        reporting.write_text(out / "rates.txt", reporting.keyed_text(fits))

    if F.beta is not None:
        rate_check = CheckReport(
            "exponential_rate",
            "with an upper modulus the distance decays exponentially, A exp(-B ell)",
            exponential.bound_satisfied,
            exponential.to_dict(),
            skipped=exponential.skipped,
        )
    else:
        rate_check = CheckReport(
            "power_rate",
            "distance decays at least like A / ell^(1/(q-1))",
            power.bound_satisfied,
            power.to_dict(),
            skipped=power.skipped,
        )

    solutions = [result.solutions[e] for e in sorted(result.solutions)]
    checks = [
        asymptotics.check_distance_decay(records, problem.noise_floor),
        rate_check,
        asymptotics.check_energy_sandwich(records),
        *asymptotics.check_sweep_trends(records),
        asymptotics.check_monotone_in_ell(solutions, f),
    ]
    pointwise = [asymptotics.check_pointwise_bounds(s, result.cross, f) for s in solutions]
    if pointwise:
        violations = sum(p.values.get("violations", 0) for p in pointwise)
        checks.append(CheckReport(
            "pointwise_bound",
            asymptotics.ANCHORS["pointwise_bound"],
            all(not p.failed for p in pointwise),
            {"violations": violations},
            skipped=all(p.skipped for p in pointwise),
            notice=pointwise[0].notice,
        ))
    return checks, {"failed_ells": [r.ell for r in records if r.failed], "source": result.source.to_dict()}


def _run_onedim(config: RunConfig, out: Path) -> List[CheckReport]:
    F = config.integrand.to_spec()
    cfg = config.onedim
    source = coercive = None
    if cfg.problem in ("source", "both"):
        source = OneDimSourceSpec(gamma=cfg.gamma, ell=cfg.ells[0], integrand=F)
    if cfg.problem in ("coercive", "both"):
        coercive = OneDimCoerciveSpec(bv_left=cfg.bv_left, bv_right=cfg.bv_right, q=F.q, integrand=F)
    run = onedim.run_onedim(cfg.ells, cfg.h, config.solver, source=source, coercive=coercive)
    if _want(config, "csv"):
        reporting.write_onedim_csv([row.to_row() for row in run.rows], out / "onedim.csv")
    if run.fit is not None and _want(config, "text"):
        reporting.write_text(out / "rates.txt", reporting.keyed_text({"middecay": run.fit.to_dict()}))
    return run.checks


def run(config: RunConfig, out_dir: Optional[Path] = None) -> RunOutcome:
    """Execute a validated configuration and write its artifacts."""
    started = time.perf_counter()
    out = Path(out_dir or config.output.directory)
    out.mkdir(parents=True, exist_ok=True)
    logger.info(f"Running '{config.command}' into {out}")

    audits: List[AuditReport] = []
    checks: List[CheckReport] = []
    extra: Dict[str, Any] = {}
    message = ""
    try:
        audits = run_audits(config)
        audit_extra: Dict[str, Any] = {}
        if config.command == "audit":
            spec = config.integrand.to_spec()
            audit_extra["alpha_from_monotonicity"] = integrand.derive_alpha_from_monotonicity(
                spec, config.audit.n_samples, config.seed)
            if spec.q == 2:
                audit_extra["beta_from_monotonicity"] = integrand.derive_beta_from_monotonicity(
                    spec, config.audit.n_samples, config.seed)
        if _want(config, "text"):
            reporting.write_text(out / "audit_report.txt", _audit_text(audits, audit_extra))
        extra.update(audit_extra)
        gate_failures = [a.name for a in audits if not a.passed]
        if gate_failures:
            raise CheckFailure(f"integrand audit failed: {', '.join(gate_failures)}")
        handlers: Dict[str, Callable[[RunConfig, Path], Any]] = {
            "solve": _run_solve,
            "sweep": _run_sweep,
            "onedim": _run_onedim,
        }
        if config.command in handlers:
            produced = handlers[config.command](config, out)
            if isinstance(produced, tuple):
                produced, more = produced
                extra.update(more)
            checks.extend(produced)
        failed = [c.name for c in checks if c.failed]
        code = EXIT_CHECK_FAILED if failed else EXIT_OK
        if failed:
            message = f"checks failed: {', '.join(failed)}"
            logger.error(message)
        if extra.get("failed_ells"):
            message = f"solver failure at ell={extra['failed_ells']}"
            logger.error(message)
            code = EXIT_SOLVER
    except SolverError as exc:
        message = f"solver failure: {exc.message}"
        logger.error(message)
        code = EXIT_SOLVER
    except LabError as exc:
        message = exc.message
        logger.error(message)
        code = exc.exit_code
    except MeshError as exc:
        message = f"geometry does not fit the configuration: {exc}"
        logger.error(message)
        code = EXIT_CONFIG
    except (OSError, ValueError) as exc:
        message = f"run aborted: {exc}"
        logger.error(message)
        code = EXIT_SOLVER

    summary = {
        "command": config.command,
        "exit_code": code,
        "message": message,
        "audits": [{**a.to_dict(), "anchor": AUDIT_ANCHORS.get(a.name, a.name)} for a in audits],
        "checks": [c.to_dict() for c in checks],
        "extra": extra,
        "config": config_to_dict(config),
    }
    if _want(config, "json"):
        reporting.write_json(out / "summary.json", summary)
    reporting.write_metadata(out / "metadata.json", {
        "engine_version": ENGINE_VERSION,
        "package_version": __version__,
        "finished_at": datetime.now(timezone.utc).isoformat(),
        "wall_seconds": time.perf_counter() - started,
    })
    return RunOutcome(exit_code=code, checks=checks, audits=audits, out_dir=out, message=message)


def load_config(path: Path) -> RunConfig:
    """Read and validate a configuration file; unreadable files are configuration errors."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise ConfigError([ConfigIssue(str(path), f"cannot read configuration: {exc}")])
    return parse_config(text)


def with_overrides(config: RunConfig, command: Optional[str] = None, seed: Optional[int] = None) -> RunConfig:
    """Apply command-line overrides; the seed also reseeds the solver options."""
    if seed is not None:
        config = replace(config, seed=seed, solver=replace(config.solver, seed=seed))
    if command is not None and command != config.command:
        raise ConfigError([ConfigIssue("$.command", f"file declares '{config.command}', invoked as '{command}'")])
    return config
