"""
CylinderLab Integrands
=======================
Convex energy densities F and sampled audits of their structural constants:
growth envelope, uniform convexity of power q, the q = 2 upper modulus, the
Lipschitz-type estimate and the monotonicity criterion for alpha.

All audits are pure functions of (spec, n_samples, seed): a fixed seed gives a
bit-identical report.
"""

import logging
from dataclasses import replace
from typing import Optional, Tuple

import numpy as np

from .config import AUDIT_SAMPLES, AUDIT_TOL
from .schemas import AuditReport, IntegrandKind, IntegrandSpec

logger = logging.getLogger(__name__)

# Radii of audit samples are log-uniform on [10**RADIUS_LOG_LO, 10**RADIUS_LOG_HI]
RADIUS_LOG_LO = -3.0
RADIUS_LOG_HI = 3.0

# Relative width of the tie set in aniso-max subgradients
TIE_RTOL = 1e-12


def builtin_integrand(
    kind: IntegrandKind,
    q: float = 2.0,
    dim: int = 2,
    matrix: Optional[np.ndarray] = None,
    weight: float = 1.0,
    smoothing_mu: float = 0.0,
) -> IntegrandSpec:
    """Integrand of a built-in kind with its known constants filled in."""
    kind = IntegrandKind(kind)
    if kind == IntegrandKind.POWER:
        return IntegrandSpec(
            kind=kind,
            q=q,
            lambda_lo=1.0,
            lambda_hi=1.0,
            alpha=2.0 ** (1.0 - q),
            beta=0.5 if q == 2 else None,
            dim=dim,
        )
    if kind == IntegrandKind.QUADRATIC_FORM:
        A = np.eye(dim) if matrix is None else np.asarray(matrix, dtype=float)
        eig = np.linalg.eigvalsh(A)
        return IntegrandSpec(
            kind=kind,
            q=2.0,
            lambda_lo=float(eig[0]),
            lambda_hi=float(eig[-1]),
            alpha=float(eig[0]) / 2.0,
            beta=float(eig[-1]) / 2.0,
            dim=A.shape[0],
            matrix=tuple(tuple(row) for row in A),
        )
    return IntegrandSpec(
        kind=kind,
        q=q,
        lambda_lo=1.0,
        lambda_hi=1.0 + weight,
        alpha=2.0 ** (1.0 - q),
        dim=dim,
        weight=weight,
        smoothing_mu=smoothing_mu,
    )


def with_smoothing(spec: IntegrandSpec, mu: float) -> IntegrandSpec:
    """Copy of spec with the smoothing parameter replaced."""
    return replace(spec, smoothing_mu=mu)


def _as_rows(spec: IntegrandSpec, xi: np.ndarray) -> np.ndarray:
    G = np.asarray(xi, dtype=float)
    if G.ndim == 1:
        G = G[None, :]
    if G.ndim != 2 or G.shape[1] != spec.dim:
        raise ValueError(f"expected vectors of dimension {spec.dim}, got shape {np.shape(xi)}")
    return G


def _soft_max_norm(A: np.ndarray, s: float) -> np.ndarray:
    """Row-wise ||.||_s of nonnegative rows, computed through ratios to the row max."""
    top = A.max(axis=1)
    safe = np.where(top > 0, top, 1.0)
    ratios = A / safe[:, None]
    return top * np.sum(ratios ** s, axis=1) ** (1.0 / s)


def evaluate_many(spec: IntegrandSpec, G: np.ndarray) -> np.ndarray:
    """F at each row of G, shape (m, dim) -> (m,)."""
    G = _as_rows(spec, G)
    q = spec.q
    if spec.kind == IntegrandKind.QUADRATIC_FORM:
        return np.einsum("ij,jk,ik->i", G, spec.matrix_array, G)

    norms = np.linalg.norm(G, axis=1)
    values = norms ** q
    if spec.kind == IntegrandKind.POWER:
        return values

    absG = np.abs(G)
    if spec.smoothing_mu > 0:
        # soft max of |xi_i|**q is ||xi||_s**q with s = q / mu
        values = values + spec.weight * _soft_max_norm(absG, q / spec.smoothing_mu) ** q
    else:
        values = values + spec.weight * absG.max(axis=1) ** q
    return values


def evaluate(spec: IntegrandSpec, xi: np.ndarray) -> float:
    """F(xi) for a single vector."""
    return float(evaluate_many(spec, xi)[0])


def subgradient_many(spec: IntegrandSpec, G: np.ndarray) -> np.ndarray:
    """
    Element of the subdifferential at each row of G.

    For aniso-max at ties the canonical selection is the average of the
    gradients of the active branches.
    """
    G = _as_rows(spec, G)
    q = spec.q
    if spec.kind == IntegrandKind.QUADRATIC_FORM:
        return 2.0 * G @ spec.matrix_array

    norms = np.linalg.norm(G, axis=1)
    grad = q * (norms ** (q - 2.0))[:, None] * G
    if spec.kind == IntegrandKind.POWER:
        return grad

    absG = np.abs(G)
    signs = np.sign(G)
    if spec.smoothing_mu > 0:
        s = q / spec.smoothing_mu
        N = _soft_max_norm(absG, s)
        safe = np.where(N > 0, N, 1.0)
        ratios = absG / safe[:, None]
        branch = q * (N ** (q - 1.0))[:, None] * ratios ** (s - 1.0) * signs
        return grad + spec.weight * branch

    powered = absG ** q
    top = powered.max(axis=1)
    active = powered >= top[:, None] * (1.0 - TIE_RTOL)
    share = active / active.sum(axis=1)[:, None]
    branch = q * absG ** (q - 1.0) * signs
    return grad + spec.weight * share * branch


def subgradient(spec: IntegrandSpec, xi: np.ndarray) -> np.ndarray:
    """Subgradient selection at a single vector."""
    return subgradient_many(spec, xi)[0]


def sample_vectors(dim: int, n_samples: int, rng: np.random.Generator) -> np.ndarray:
    """Vectors with log-uniform radii and uniformly distributed directions."""
    directions = rng.standard_normal((n_samples, dim))
    lengths = np.linalg.norm(directions, axis=1)
    lengths[lengths == 0] = 1.0
    radii = 10.0 ** rng.uniform(RADIUS_LOG_LO, RADIUS_LOG_HI, size=n_samples)
    return directions / lengths[:, None] * radii[:, None]


def _forced_pairs(dim: int) -> Tuple[np.ndarray, np.ndarray]:
    """Origin, coordinate, antipodal and tie pairs."""
    eye = np.eye(dim)
    zero = np.zeros(dim)
    ones = np.ones(dim)
    alternating = np.array([(-1.0) ** i for i in range(dim)])
    xs, ys = [], []
    for i in range(dim):
        xs += [zero, eye[i], eye[i], eye[i] * 2.0]
        ys += [eye[i], zero, -eye[i], -eye[i]]
        for j in range(dim):
            if j != i:
                xs.append(eye[i])
                ys.append(eye[j])
    xs += [ones, ones, ones, alternating]
    ys += [zero, -ones, alternating, -alternating]
    return np.array(xs), np.array(ys)


def sample_pairs(dim: int, n_samples: int, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    """n_samples random pairs followed by the forced special pairs."""
    rng = np.random.default_rng(seed)
    xi = sample_vectors(dim, n_samples, rng)
    eta = sample_vectors(dim, n_samples, rng)
    fx, fy = _forced_pairs(dim)
    return np.vstack([xi, fx]), np.vstack([eta, fy])


def _midpoint_gap(spec: IntegrandSpec, xi: np.ndarray, eta: np.ndarray):
    """F(xi) + F(eta) - 2F(mid) and the normalising scale max(1, F(xi) + F(eta))."""
    fx = evaluate_many(spec, xi)
    fy = evaluate_many(spec, eta)
    fm = evaluate_many(spec, 0.5 * (xi + eta))
    total = fx + fy
    return total - 2.0 * fm, np.maximum(1.0, total)


def _report(name, margins, xi, eta, tol, details) -> AuditReport:
    worst = int(np.argmin(margins))
    return AuditReport(
        name=name,
        passed=bool(margins[worst] >= -tol),
        worst_margin=float(margins[worst]),
        worst_pair=(xi[worst].tolist(), eta[worst].tolist()),
        n_pairs=int(margins.shape[0]),
        details=details,
    )


def check_uniform_convexity(
    spec: IntegrandSpec,
    alpha_claim: Optional[float] = None,
    n_samples: int = AUDIT_SAMPLES,
    seed: int = 0,
    tol: float = AUDIT_TOL,
) -> AuditReport:
    """
    Audit 2F(mid) + alpha|xi - eta|**q <= F(xi) + F(eta) on sampled pairs.

    Margins are divided by max(1, F(xi) + F(eta)). The report also carries the
    sampled sharp alpha, the smallest gap / |xi - eta|**q seen.
    """
    if n_samples < 1:
        raise ValueError(f"n_samples must be >= 1, got {n_samples}")
    alpha = spec.alpha if alpha_claim is None else alpha_claim
    xi, eta = sample_pairs(spec.dim, n_samples, seed)
    gap, scale = _midpoint_gap(spec, xi, eta)
    dist = np.linalg.norm(xi - eta, axis=1) ** spec.q
    margins = (gap - alpha * dist) / scale

    separated = dist > 0
    sharp = float(np.min(gap[separated] / dist[separated])) if separated.any() else float("inf")
    report = _report(
        "uniform_convexity",
        margins,
        xi,
        eta,
        tol,
        {"alpha_claim": alpha, "sampled_sharp_alpha": sharp, "tol": tol, "seed": seed},
    )
    logger.debug(f"Convexity audit alpha={alpha}: worst margin {report.worst_margin:.3e}")
    return report


def check_upper_modulus(
    spec: IntegrandSpec,
    beta_claim: Optional[float] = None,
    n_samples: int = AUDIT_SAMPLES,
    seed: int = 0,
    tol: float = AUDIT_TOL,
) -> AuditReport:
    """
    Audit F(xi) + F(eta) - 2F(mid) <= beta|xi - eta|**2 on sampled pairs (q = 2).
    """
    if spec.q != 2:
        raise ValueError(
            f"upper modulus audit requires q = 2, got q={spec.q}: for q > 2 only "
            "affine functions satisfy the reverse midpoint inequality"
        )
    beta = spec.beta if beta_claim is None else beta_claim
    if beta is None:
        raise ValueError("no beta declared and no beta_claim given")
    xi, eta = sample_pairs(spec.dim, n_samples, seed)
    gap, scale = _midpoint_gap(spec, xi, eta)
    dist = np.linalg.norm(xi - eta, axis=1) ** 2
    margins = (beta * dist - gap) / scale

    separated = dist > 0
    sharp = float(np.max(gap[separated] / dist[separated])) if separated.any() else 0.0
    return _report(
        "upper_modulus",
        margins,
        xi,
        eta,
        tol,
        {"beta_claim": beta, "sampled_sharp_beta": sharp, "tol": tol, "seed": seed},
    )


def check_growth(
    spec: IntegrandSpec,
    n_samples: int = AUDIT_SAMPLES,
    seed: int = 0,
    q_claim: Optional[float] = None,
    lambda_claim: Optional[float] = None,
    Lambda_claim: Optional[float] = None,
    tol: float = AUDIT_TOL,
) -> AuditReport:
    """
    Estimate the envelope lambda_hat <= F(xi)/|xi|**q <= Lambda_hat.

    Samples exclude xi = 0. Passes iff the declared constants contain the
    sampled envelope up to a relative tol. q_claim audits against an exponent
    other than spec.q.
    """
    q = spec.q if q_claim is None else q_claim
    lam = spec.lambda_lo if lambda_claim is None else lambda_claim
    Lam = spec.lambda_hi if Lambda_claim is None else Lambda_claim

    rng = np.random.default_rng(seed)
    xi = np.vstack([sample_vectors(spec.dim, n_samples, rng), np.eye(spec.dim), np.ones((1, spec.dim))])
    ratios = evaluate_many(spec, xi) / np.linalg.norm(xi, axis=1) ** q
    lam_hat = float(ratios.min())
    Lam_hat = float(ratios.max())

    lower_margins = (ratios - lam) / max(1.0, lam)
    upper_margins = (Lam - ratios) / max(1.0, Lam)
    margins = np.minimum(lower_margins, upper_margins)
    worst = int(np.argmin(margins))
    return AuditReport(
        name="growth",
        passed=bool(margins[worst] >= -tol),
        worst_margin=float(margins[worst]),
        worst_pair=(xi[worst].tolist(),),
        n_pairs=int(xi.shape[0]),
        details={
            "lambda_hat": lam_hat,
            "Lambda_hat": Lam_hat,
            "lambda_claim": lam,
            "Lambda_claim": Lam,
            "q": q,
            "tol": tol,
            "seed": seed,
        },
    )


def _lipschitz_sides(spec: IntegrandSpec, P: np.ndarray, Q: np.ndarray):
    lhs = np.abs(evaluate_many(spec, Q) - evaluate_many(spec, P))
    big = np.maximum(np.linalg.norm(P, axis=1), np.linalg.norm(Q, axis=1))
    rhs = 2.0 ** spec.q * spec.lambda_hi * big ** (spec.q - 1.0) * np.linalg.norm(Q - P, axis=1)
    return lhs, rhs


def check_lipschitz_estimate(
    spec: IntegrandSpec, P: np.ndarray, Q: np.ndarray, tol: float = AUDIT_TOL
) -> dict:
    """|F(Q) - F(P)| <= 2**q Lambda max(|P|, |Q|)**(q-1) |Q - P| at one pair."""
    lhs, rhs = _lipschitz_sides(spec, _as_rows(spec, P), _as_rows(spec, Q))
    lhs, rhs = float(lhs[0]), float(rhs[0])
    return {"lhs": lhs, "rhs": rhs, "pass": lhs <= rhs + tol * max(1.0, rhs)}


def check_lipschitz_sampled(
    spec: IntegrandSpec, n_samples: int = AUDIT_SAMPLES, seed: int = 0, tol: float = AUDIT_TOL
) -> AuditReport:
    """Lipschitz-type estimate on sampled pairs."""
    P, Q = sample_pairs(spec.dim, n_samples, seed)
    lhs, rhs = _lipschitz_sides(spec, P, Q)
    margins = (rhs - lhs) / np.maximum(1.0, rhs)
    return _report("lipschitz", margins, P, Q, tol, {"tol": tol, "seed": seed})


def check_subgradient_inequality(
    spec: IntegrandSpec, n_samples: int = AUDIT_SAMPLES, seed: int = 0, tol: float = AUDIT_TOL
) -> AuditReport:
    """F(eta) >= F(xi) + dF(xi).(eta - xi) on sampled pairs."""
    xi, eta = sample_pairs(spec.dim, n_samples, seed)
    fx = evaluate_many(spec, xi)
    fy = evaluate_many(spec, eta)
    lin = np.einsum("ij,ij->i", subgradient_many(spec, xi), eta - xi)
    margins = (fy - fx - lin) / np.maximum(1.0, np.abs(fx) + np.abs(fy) + np.abs(lin))
    return _report("subgradient_inequality", margins, xi, eta, tol, {"tol": tol, "seed": seed})


def _monotonicity_quotients(spec: IntegrandSpec, n_samples: int, seed: int, power: float):
    xi, eta = sample_pairs(spec.dim, n_samples, seed)
    diff = xi - eta
    dist = np.linalg.norm(diff, axis=1)
    keep = dist > 0
    inner = np.einsum(
        "ij,ij->i", subgradient_many(spec, xi[keep]) - subgradient_many(spec, eta[keep]), diff[keep]
    )
    return inner / dist[keep] ** power, int(keep.sum())


def derive_alpha_from_monotonicity(
    spec: IntegrandSpec, n_samples: int = AUDIT_SAMPLES, seed: int = 0
) -> dict:
    """
    a_hat = min (dF(xi) - dF(eta)).(xi - eta) / |xi - eta|**q over sampled
    pairs, and the convexity modulus alpha_derived = a_hat / (2q) it implies.
    Pairs with xi = eta are excluded.
    """
    quotients, used = _monotonicity_quotients(spec, n_samples, seed, spec.q)
    a_hat = float(quotients.min())
    result = {"a_hat": a_hat, "alpha_derived": a_hat / (2.0 * spec.q), "n_pairs": used, "notice": ""}
    if a_hat <= 0:
        result["alpha_derived"] = 0.0
        result["notice"] = "no strong monotonicity detected at sampled pairs"
        logger.warning(result["notice"])
    return result


def derive_beta_from_monotonicity(
    spec: IntegrandSpec, n_samples: int = AUDIT_SAMPLES, seed: int = 0
) -> dict:
    """Upper counterpart for q = 2: beta_derived = max quotient / (2q)."""
    if spec.q != 2:
        raise ValueError(
            f"upper modulus requires q = 2, got q={spec.q}: for q > 2 only "
            "affine functions satisfy the reverse midpoint inequality"
        )
    quotients, used = _monotonicity_quotients(spec, n_samples, seed, 2.0)
    b_hat = float(quotients.max())
    return {"b_hat": b_hat, "beta_derived": b_hat / 4.0, "n_pairs": used}
