"""Closed-form error covariance and MSE expressions for the TDOA estimators.

These are linearized (small-noise) predictions meant to be compared with
Monte Carlo statistics of the solvers.
"""

from dataclasses import dataclass

import numpy as np

from .crlb import MAX_CONDITION, efim_schur
from .errors import InvalidInput, SingularFim


@dataclass(frozen=True)
class EstimatorStats:
    covariance: np.ndarray
    mse: float
    eigenvalues: np.ndarray


def _sym(m):
    return 0.5 * (m + m.T)


def _diag_precision(c2):
    c2 = np.asarray(c2, dtype=float)
    var = np.diag(c2) if c2.ndim == 2 else c2
    if c2.ndim == 2 and not np.allclose(c2, np.diag(var), atol=0.0):
        raise InvalidInput("C2 must be diagonal")
    if np.any(var <= 0) or not np.all(np.isfinite(var)):
        raise InvalidInput("C2 must have positive finite diagonal")
    return 1.0 / var


def _invert(m, what):
    if not np.all(np.isfinite(m)) or np.linalg.cond(m) > MAX_CONDITION:
        raise SingularFim(f"{what} is singular")
    return np.linalg.inv(m)


def cov_mse_tswpm(h2, c2):
    """Predicted TS-WPM error statistics from the augmented TOA model.

    The position block of ``H₂ᵀC₂⁻¹H₂`` (range nuisance removed by Schur
    complement) is scaled by ``1/trace(C₂⁻¹)²``; the MSE is its trace, i.e.
    the eigenvalue sum. Note the expression carries no matrix inverse.

    Args:
        h2: B×3 augmented Jacobian ``[H_t | 1]``.
        c2: diagonal TOA covariance, as a B×B matrix or a length-B vector.
    """
    prec = _diag_precision(c2)
    h2 = np.asarray(h2, dtype=float)
    if h2.ndim != 2 or h2.shape != (prec.size, 3):
        raise InvalidInput("h2 must be B×3 and match c2")
    full = _sym((h2 * prec[:, None]).T @ h2)
    f_xy = efim_schur(full)
    eig = np.linalg.eigvalsh(f_xy)
    scale = 1.0 / prec.sum() ** 2
    return EstimatorStats(covariance=scale * f_xy, mse=float(scale * eig.sum()), eigenvalues=eig)


def cov_mse_wnls(h1, c1):
    """Predicted WNLS error statistics ``(H₁ᵀC₁⁻¹H₁)⁻¹`` and its eigenvalue-sum MSE."""
    h1 = np.asarray(h1, dtype=float)
    c1 = np.asarray(c1, dtype=float)
    fim = _sym(h1.T @ np.linalg.solve(c1, h1))
    cov = _sym(_invert(fim, "H₁ᵀC₁⁻¹H₁"))
    eig = np.linalg.eigvalsh(fim)
    if np.any(eig <= 0):
        raise SingularFim("H₁ᵀC₁⁻¹H₁ is not positive definite")
    return EstimatorStats(covariance=cov, mse=float(np.sum(1.0 / eig)), eigenvalues=eig)


def mle_cov_two_stage(j, c1, u=None):
    """Position covariance of the joint (position, reference range) MLE.

    ``(JᵀC⁻¹J − JᵀC⁻¹u uᵀC⁻¹J / uᵀC⁻¹u)⁻¹`` where ``J`` is the Jacobian of the
    measurements with respect to position and ``u`` their derivative with
    respect to the reference range (up to sign).
    """
    j = np.asarray(j, dtype=float)
    c1 = np.asarray(c1, dtype=float)
    u = np.ones(j.shape[0]) if u is None else np.asarray(u, dtype=float)
    cinv_j = np.linalg.solve(c1, j)
    cinv_u = np.linalg.solve(c1, u)
    cross = j.T @ cinv_u
    info = j.T @ cinv_j - np.outer(cross, cross) / (u @ cinv_u)
    return _sym(_invert(_sym(info), "two-stage information"))


def mse_high_gdop_approx(variances, h1, c1):
    """High-GDOP approximations: ``(1/Σ σ_b⁻², 1/λ_min(H₁ᵀC₁⁻¹H₁))``."""
    var = np.asarray(variances, dtype=float)
    if np.any(var <= 0):
        raise InvalidInput("variances must be positive")
    h1 = np.asarray(h1, dtype=float)
    fim = _sym(h1.T @ np.linalg.solve(np.asarray(c1, float), h1))
    lam_min = float(np.linalg.eigvalsh(fim)[0])
    if lam_min <= 0:
        raise SingularFim("smallest eigenvalue is not positive")
    return float(1.0 / np.sum(1.0 / var)), 1.0 / lam_min


def trace_normalization(h1, w1):
    """Scale factor ``1/trace(H₁ᵀW₁H₁)``."""
    h1 = np.asarray(h1, dtype=float)
    tr = float(np.trace(h1.T @ np.asarray(w1, float) @ h1))
    if tr == 0 or not np.isfinite(tr):
        raise InvalidInput("trace is zero")
    return 1.0 / tr
