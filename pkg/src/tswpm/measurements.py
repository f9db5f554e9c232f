"""NLOS bias model, synthetic TOA/TDOA/TW-TOA generation and measurement covariances."""

from dataclasses import dataclass, field

import numpy as np

from .errors import InconsistentVariances, InvalidInput, InvalidReference


@dataclass(frozen=True)
class LinkModel:
    """Per anchor-UE link statistics, all ranges in meters."""

    true_range: float
    snr_linear: float
    var_awgn: float
    var_multipath: float
    nlos_bias: float = 0.0

    def __post_init__(self):
        if self.var_awgn < 0 or self.nlos_bias < 0:
            raise InvalidInput("var_awgn and nlos_bias must be non-negative")
        if self.var_multipath < self.var_awgn:
            raise InvalidInput("var_multipath must not be below var_awgn")


@dataclass(frozen=True)
class ToaSet:
    values: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float).ravel()
        var = np.asarray(self.variances, dtype=float).ravel()
        if values.size != var.size:
            raise InvalidInput("values and variances must have equal length")
        if np.any(var <= 0):
            raise InvalidInput("TOA variances must be positive")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "variances", var)

    def __len__(self):
        return self.values.size


@dataclass(frozen=True)
class TdoaSet:
    """Range differences against a reference anchor (reference entry excluded).

    ``toa_variances`` keeps the per-anchor variances the differences were built
    from; the covariance is derived from them.
    """

    values: np.ndarray
    reference_index: int
    toa_variances: np.ndarray
    covariance: np.ndarray = field(init=False)

    def __post_init__(self):
        var = np.asarray(self.toa_variances, dtype=float).ravel()
        values = np.asarray(self.values, dtype=float).ravel()
        if var.size < 2:
            raise InvalidInput("TDOA needs at least two anchors")
        if values.size != var.size - 1:
            raise InvalidInput("expected one TDOA value per non-reference anchor")
        if not 0 <= self.reference_index < var.size:
            raise InvalidReference(f"reference index {self.reference_index} out of range")
        if np.any(var <= 0):
            raise InvalidInput("TOA variances must be positive")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "toa_variances", var)
        object.__setattr__(self, "reference_index", int(self.reference_index))
        object.__setattr__(self, "covariance", tdoa_covariance(var, self.reference_index))

    @property
    def n_anchors(self):
        return self.toa_variances.size

    def expanded(self):
        """Length-B vector with a zero in the reference slot."""
        return np.insert(self.values, self.reference_index, 0.0)


@dataclass(frozen=True)
class TwToaSet:
    """Two-way ranges between UE pairs as ``(i, j, range, variance)`` tuples, i < j."""

    pairs: tuple

    def __post_init__(self):
        cleaned = []
        seen = set()
        for i, j, rng_m, var in self.pairs:
            i, j = int(i), int(j)
            if i == j:
                raise InvalidInput(f"TW-TOA pair ({i}, {i}) links a UE to itself")
            if var <= 0:
                raise InvalidInput("TW-TOA variance must be positive")
            key = (min(i, j), max(i, j))
            if key in seen:
                raise InvalidInput(f"duplicate TW-TOA pair {key}")
            seen.add(key)
            cleaned.append((key[0], key[1], float(rng_m), float(var)))
        object.__setattr__(self, "pairs", tuple(cleaned))

    def lookup(self):
        """Dict keyed by both orderings of each pair -> (range, variance)."""
        out = {}
        for i, j, r, v in self.pairs:
            out[(i, j)] = (r, v)
            out[(j, i)] = (r, v)
        return out


def nlos_bias_offset(var_multipath, var_awgn):
    """Deterministic NLOS range offset sqrt(var_multipath - var_awgn)."""
    if var_multipath < 0 or var_awgn < 0:
        raise InvalidInput("variances must be non-negative")
    diff = var_multipath - var_awgn
    if diff < 0:
        scale = max(var_multipath, var_awgn)
        if diff < -1e-9 * scale:
            raise InconsistentVariances(
                f"multipath variance {var_multipath} below AWGN variance {var_awgn}"
            )
        return 0.0
    return float(np.sqrt(diff))


def synth_toa_awgn(link, rng):
    return float(link.true_range + rng.normal(0.0, np.sqrt(link.var_awgn)))


def synth_toa_multipath(link, rng):
    return float(link.true_range + link.nlos_bias + rng.normal(0.0, np.sqrt(link.var_multipath)))


def tdoa_covariance(toa_variances, reference_index):
    """diag(σ_b², b ≠ ref) + σ_ref²·𝟙𝟙ᵀ."""
    var = np.asarray(toa_variances, dtype=float)
    others = np.delete(var, reference_index)
    return np.diag(others) + var[reference_index]


def tdoa_precision(toa_variances, reference_index):
    """Inverse TDOA covariance via Sherman-Morrison (no matrix inversion)."""
    var = np.asarray(toa_variances, dtype=float)
    inv_d = 1.0 / np.delete(var, reference_index)
    s = var[reference_index]
    denom = 1.0 + s * inv_d.sum()
    prec = -s * np.outer(inv_d, inv_d) / denom
    # diagonal rewritten without the cancelling subtraction
    rest = np.array([np.delete(inv_d, i).sum() for i in range(inv_d.size)])
    np.fill_diagonal(prec, inv_d * (1.0 + s * rest) / denom)
    return prec


def form_tdoa(toas, reference_index):
    n = len(toas)
    if n < 2:
        raise InvalidInput("TDOA needs at least two anchors")
    if not 0 <= reference_index < n:
        raise InvalidReference(f"reference index {reference_index} out of range for {n} anchors")
    diffs = np.delete(toas.values, reference_index) - toas.values[reference_index]
    return TdoaSet(diffs, reference_index, toas.variances)


def select_reference(snrs):
    """Index of the strongest link; ties go to the lowest index."""
    snrs = np.asarray(snrs, dtype=float)
    if snrs.size == 0:
        raise InvalidInput("no SNRs given")
    return int(np.argmax(snrs))


def projection_weights(variances):
    """Inverse-variance weights normalized to sum to one."""
    var = np.asarray(variances, dtype=float)
    if var.size == 0 or np.any(~(var > 0)) or not np.all(np.isfinite(var)):
        raise InvalidInput("variances must be positive and finite")
    inv = 1.0 / var
    return inv / inv.sum()


def synth_twtoa(links, rng):
    """Noisy two-way ranges, one per unordered UE pair.

    ``links`` holds ``(i, j, true_range, variance)`` tuples.
    """
    pairs = []
    for i, j, true_range, var in links:
        if var <= 0:
            raise InvalidInput("TW-TOA variance must be positive")
        pairs.append((i, j, true_range + rng.normal(0.0, np.sqrt(var)), var))
    return TwToaSet(tuple(pairs))
