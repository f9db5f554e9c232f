"""TOA Cramér-Rao bounds (multipath and AWGN) and the TOA → TDOA → position FIM chain."""

from dataclasses import dataclass

import numpy as np

from .errors import (
    InfiniteVariance,
    InvalidInput,
    SingularChannel,
    SingularCovariance,
    SingularFim,
    SingularNuisanceBlock,
)
from .units import SPEED_OF_LIGHT

MAX_CONDITION = 1e12

# QPSK constellation, unit modulus
_QPSK = np.exp(1j * (np.pi / 4 + np.pi / 2 * np.arange(4)))


@dataclass(frozen=True)
class PrsGrid:
    """Positioning reference symbols on an N-subcarrier OFDM grid."""

    symbols: np.ndarray
    scs: float = 15e3

    def __post_init__(self):
        sym = np.asarray(self.symbols, dtype=complex).ravel()
        if sym.size < 1:
            raise InvalidInput("PRS grid needs at least one subcarrier")
        if not np.allclose(np.abs(sym), 1.0, atol=1e-12):
            raise InvalidInput("PRS symbols must be unit modulus")
        if not self.scs > 0:
            raise InvalidInput("scs must be positive")
        object.__setattr__(self, "symbols", sym)

    @property
    def n_subcarriers(self):
        return self.symbols.size

    @classmethod
    def qpsk(cls, n_subcarriers, scs=15e3, rng=None):
        """Random QPSK grid; with no ``rng`` the symbols cycle through the constellation."""
        if rng is None:
            idx = np.arange(n_subcarriers) % 4
        else:
            idx = rng.integers(0, 4, size=n_subcarriers)
        return cls(_QPSK[idx], scs)


def subcarrier_indices(n_subcarriers):
    """Centered indices -N/2 … N/2-1."""
    return np.arange(n_subcarriers) - n_subcarriers // 2


def fim_toa_multipath(cir, prs, snr_linear):
    """Effective Fisher information (1/s²) on the first-path delay under multipath.

    The other tap gains are nuisance parameters; their influence is removed
    by projecting onto the orthogonal complement of the tap steering matrix.
    Steering entries are ``exp(-j2π·scs·n·τ_l)`` with unit modulus, so ``snr_linear``
    is the per-subcarrier SNR.
    """
    if not snr_linear > 0:
        raise InvalidInput("snr_linear must be positive")
    n_sc = prs.n_subcarriers
    if len(cir) >= n_sc:
        raise InvalidInput("CIR length must be smaller than the number of subcarriers")
    omega = 2.0 * np.pi * prs.scs * subcarrier_indices(n_sc)
    steering = np.exp(-1j * np.outer(omega, cir.tap_delays))
    a = prs.symbols[:, None] * steering
    gram = a.conj().T @ a
    if np.linalg.cond(gram) > MAX_CONDITION:
        raise SingularChannel("tap Gram matrix is numerically singular")
    v = omega * (a @ cir.tap_gains)
    coef = np.linalg.solve(gram, a.conj().T @ v)
    projected = v - a @ coef
    return float(2.0 * snr_linear * np.real(np.vdot(projected, projected)))


def fim_toa_awgn(snr_linear, scs, n_subcarriers):
    """Fisher information (1/s²) on the delay of a single path in white noise."""
    if not snr_linear > 0:
        raise InvalidInput("snr_linear must be positive")
    if not scs > 0 or n_subcarriers < 1:
        raise InvalidInput("scs and n_subcarriers must be positive")
    n = subcarrier_indices(n_subcarriers).astype(float)
    return float(2.0 * snr_linear * (2.0 * np.pi * scs) ** 2 * np.sum(n * n))


def toa_variance_meters(fim):
    """Range variance in m² from a delay FIM in 1/s²."""
    if fim < 0:
        raise InvalidInput("Fisher information cannot be negative")
    if fim == 0:
        raise InfiniteVariance("zero Fisher information")
    return SPEED_OF_LIGHT**2 / fim


def tdoa_transform(n_anchors, reference_index):
    """(B-1)×B matrix mapping TOAs to differences against the reference."""
    if not 0 <= reference_index < n_anchors:
        raise InvalidInput("reference_index out of range")
    t = np.delete(np.eye(n_anchors), reference_index, axis=0)
    t[:, reference_index] = -1.0
    return t


def fim_tdoa_from_toa(toa_variances, transform):
    """Information matrix of the differenced measurements, ``(T Σ Tᵀ)⁻¹``."""
    var = np.asarray(toa_variances, dtype=float)
    if np.any(var <= 0) or not np.all(np.isfinite(var)):
        raise InvalidInput("TOA variances must be positive and finite")
    t = np.asarray(transform, dtype=float)
    cov = (t * var) @ t.T
    if np.linalg.cond(cov) > MAX_CONDITION:
        raise SingularCovariance("TDOA covariance is numerically singular")
    fim = np.linalg.inv(cov)
    return 0.5 * (fim + fim.T)


def fim_position(jacobian, meas_fim):
    h = np.asarray(jacobian, dtype=float)
    fim = h.T @ np.asarray(meas_fim, dtype=float) @ h
    return 0.5 * (fim + fim.T)


def efim_schur(full_fim):
    """Position block of a 3×3 FIM after eliminating the trailing nuisance parameter."""
    f = np.asarray(full_fim, dtype=float)
    if f.shape != (3, 3):
        raise InvalidInput("full FIM must be 3×3")
    c = f[2, 2]
    if not c > 0:
        raise SingularNuisanceBlock("nuisance information must be positive")
    b = f[:2, 2]
    efim = f[:2, :2] - np.outer(b, b) / c
    return 0.5 * (efim + efim.T)


def peb(fim):
    """Position error bound sqrt(trace(FIM⁻¹)) in meters."""
    f = np.asarray(fim, dtype=float)
    if not np.all(np.isfinite(f)) or np.linalg.cond(f) > MAX_CONDITION:
        raise SingularFim("position FIM is singular")
    return float(np.sqrt(np.trace(np.linalg.inv(f))))
