"""Optimality certificates: simplex KKT conditions and the dual ellipsoid.

At an optimal design p* the rescaled leverage scores
m_k = ||Omega(p*)^-1 X_k / sigma_k||^2 are equal to a common level
lambda on the support of p* and no larger than lambda off it (these are
minus the loss gradient entries, so this is exactly simplex KKT).  The
same data feeds the dual view: W = Omega(p*)^-2 / lambda defines an
ellipsoid containing every rescaled covariate X_k / sigma_k on its
boundary or inside, and trace(sqrt(W))^2 equals the optimal loss at
strong duality.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import DesignProblem, _weights_array, info_matrix


@dataclass(frozen=True)
class EllipsoidCertificate:
    """KKT report at a candidate design.

    ``marks`` are the m_k values, ``level`` the largest mark over active
    arms (weight above ``active_threshold``), ``slacks`` the per-arm
    level - m_k.  ``certified`` means: active marks agree with the level
    to ``tol`` relative, inactive marks do not exceed it beyond the same
    tolerance, and complementary slackness p_k * slack_k <= tol * level
    holds arm by arm.
    """

    weights: np.ndarray
    marks: np.ndarray
    level: float
    slacks: np.ndarray
    active: np.ndarray
    active_threshold: float
    tol: float
    certified: bool


@dataclass(frozen=True)
class DualReport:
    positive_definite: bool
    max_constraint: float
    feasible: bool
    dual_value: float
    primal_value: float
    duality_gap: float


def kkt_certificate(
    problem: DesignProblem,
    weights,
    active_threshold: float = 1e-6,
    tol: float = 1e-5,
) -> EllipsoidCertificate:
    """Evaluate the simplex KKT conditions at ``weights``.

    Weights below ``active_threshold`` are treated as boundary zeros (and
    reported as exact zeros in the certificate view; the caller's vector
    is not modified).
    """
    p = _weights_array(weights)
    omega = info_matrix(problem, p)
    spectrum = np.linalg.eigvalsh(omega)
    if spectrum[0] <= spectrum[-1] * 1e-12:
        raise np.linalg.LinAlgError(
            "information matrix is singular at the evaluation point"
        )
    x = problem.covariates.columns / problem.noise.sigma
    a = np.linalg.solve(omega, x)
    marks = np.einsum("ij,ij->j", a, a)

    active = p > active_threshold
    if not np.any(active):
        raise ValueError("no active arms above the threshold")
    level = float(np.max(marks[active]))
    slacks = level - marks

    view = np.where(active, p, 0.0)
    scale = tol * level
    ok_active = bool(np.all(np.abs(marks[active] - level) <= scale))
    ok_inactive = bool(np.all(marks[~active] <= level + scale))
    ok_slack = bool(np.all(view * slacks <= scale))
    return EllipsoidCertificate(
        weights=view,
        marks=marks,
        level=level,
        slacks=slacks,
        active=active,
        active_threshold=active_threshold,
        tol=tol,
        certified=ok_active and ok_inactive and ok_slack,
    )


def dual_feasibility(
    problem: DesignProblem,
    certificate: EllipsoidCertificate,
    tol: float = 1e-6,
) -> DualReport:
    """Check the dual ellipsoid induced by a KKT certificate.

    W = Omega(p)^-2 / level must be positive definite with every
    rescaled covariate satisfying (X_k / sigma_k)^T W (X_k / sigma_k)
    <= 1 + tol; the dual objective trace(sqrt(W))^2 then lower-bounds the
    primal loss, with equality at the optimum.
    """
    p = certificate.weights
    omega = info_matrix(problem, p)
    eigs, vecs = np.linalg.eigh(omega)
    if eigs[0] <= eigs[-1] * 1e-12:
        raise ValueError("information matrix is singular at the certificate point")
    primal = float(np.sum(1.0 / eigs))

    # W shares eigenvectors with Omega; eigenvalues 1/(level * eig^2).
    w_eigs = 1.0 / (certificate.level * eigs**2)
    pd = bool(np.all(w_eigs > 0.0))
    w = (vecs * w_eigs) @ vecs.T
    v = problem.covariates.columns / problem.noise.sigma
    constraints = np.einsum("ij,ij->j", v, w @ v)
    max_c = float(np.max(constraints))
    dual = float(np.sum(np.sqrt(w_eigs))) ** 2
    return DualReport(
        positive_definite=pd,
        max_constraint=max_c,
        feasible=pd and max_c <= 1.0 + tol,
        dual_value=dual,
        primal_value=primal,
        duality_gap=primal - dual,
    )
