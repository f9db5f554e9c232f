"""Anchor geometry, measurement Jacobians and dilution of precision (2D)."""

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateGeometry, InvalidInput, SingularGeometry

# Condition-number ceiling on H^T H before it is treated as singular.
MAX_CONDITION = 1e12


@dataclass(frozen=True)
class AnchorSet:
    """Ordered anchor positions plus the index of the TDOA reference anchor.

    ``positions`` is stored as a read-only ``(B, 2)`` float array.
    """

    positions: np.ndarray
    reference_index: int = 0

    def __post_init__(self):
        pos = np.array(self.positions, dtype=float)
        if pos.ndim != 2 or pos.shape[1] != 2:
            raise InvalidInput(f"anchor positions must have shape (B, 2), got {pos.shape}")
        if pos.shape[0] < 2:
            raise InvalidInput("at least two anchors are required")
        if not np.all(np.isfinite(pos)):
            raise InvalidInput("anchor coordinates must be finite")
        if not 0 <= self.reference_index < pos.shape[0]:
            raise InvalidInput(
                f"reference_index must be in [0, {pos.shape[0]}), got {self.reference_index}"
            )
        diffs = pos[:, None, :] - pos[None, :, :]
        dist = np.hypot(diffs[..., 0], diffs[..., 1])
        np.fill_diagonal(dist, np.inf)
        if np.any(dist == 0.0):
            raise InvalidInput("anchor positions must be pairwise distinct")
        pos.flags.writeable = False
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "reference_index", int(self.reference_index))

    def __len__(self):
        return self.positions.shape[0]

    @property
    def reference(self):
        return self.positions[self.reference_index]

    @property
    def non_reference(self):
        """Indices of all anchors except the reference, in anchor order."""
        return np.array([b for b in range(len(self)) if b != self.reference_index], dtype=int)

    def with_reference(self, reference_index):
        return AnchorSet(self.positions, reference_index)

    def translated(self, offset):
        return AnchorSet(self.positions + np.asarray(offset, dtype=float), self.reference_index)


def _as_position(theta):
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (2,):
        raise InvalidInput(f"position must have shape (2,), got {theta.shape}")
    if not np.all(np.isfinite(theta)):
        raise InvalidInput("position must be finite")
    return theta


def ranges(anchors, theta):
    """Euclidean distances from ``theta`` to every anchor."""
    theta = _as_position(theta)
    diff = theta - anchors.positions
    return np.hypot(diff[:, 0], diff[:, 1])


def jacobian_toa(anchors, theta):
    """Row ``b`` is the unit vector pointing from anchor ``b`` toward ``theta``."""
    theta = _as_position(theta)
    diff = theta - anchors.positions
    d = np.hypot(diff[:, 0], diff[:, 1])
    if np.any(d == 0.0):
        b = int(np.flatnonzero(d == 0.0)[0])
        raise DegenerateGeometry(f"position coincides with anchor {b}")
    return diff / d[:, None]


def jacobian_tdoa(anchors, theta):
    """Jacobian of the TDOA vector ``||θ-a_b|| - ||θ-a_ref||`` (reference row removed)."""
    h = jacobian_toa(anchors, theta)
    return h[anchors.non_reference] - h[anchors.reference_index]


def jacobian_augmented(anchors, theta):
    """TOA Jacobian with an appended column of ones (the common-range nuisance)."""
    h = jacobian_toa(anchors, theta)
    return np.hstack([h, np.ones((h.shape[0], 1))])


@dataclass(frozen=True)
class DopReport:
    gdop: float
    hdop: float
    per_axis: list = field(default_factory=list)


def dop(jacobian):
    """Dilution of precision from a measurement Jacobian.

    ``gdop = sqrt(trace((HᵀH)⁻¹))``; ``hdop`` uses the first two diagonal
    entries only, so for a pure 2D Jacobian the two coincide.
    """
    h = np.asarray(jacobian, dtype=float)
    if h.ndim != 2 or h.shape[0] < h.shape[1]:
        raise SingularGeometry(f"Jacobian of shape {h.shape} cannot have full column rank")
    hth = h.T @ h
    if not np.all(np.isfinite(hth)) or np.linalg.cond(hth) > MAX_CONDITION:
        raise SingularGeometry("HᵀH is numerically singular")
    diag = np.diag(np.linalg.inv(hth))
    per_axis = [float(v) for v in np.sqrt(diag)]
    return DopReport(
        gdop=float(np.sqrt(diag.sum())),
        hdop=float(np.sqrt(diag[:2].sum())),
        per_axis=per_axis,
    )


_RATINGS = ((2.0, "Excellent"), (5.0, "Good"), (10.0, "Fair"))


def dop_rating(gdop):
    """Qualitative label for a DOP value; a boundary value takes the better band."""
    if not np.isfinite(gdop) or gdop <= 0:
        raise InvalidInput(f"gdop must be positive, got {gdop}")
    for upper, label in _RATINGS:
        if gdop <= upper:
            return label
    return "Poor"
