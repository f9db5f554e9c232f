"""Indoor link budget (dual-stripe path loss, shadowing, thermal noise) and CDL-A taps."""

import csv
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

import numpy as np

from .errors import InvalidInput
from .units import THERMAL_NOISE_DBM_PER_HZ, linear_to_db


@dataclass(frozen=True)
class LinkBudget:
    """Radio parameters shared by every link of a scenario."""

    tx_power: float  # dBm
    carrier_frequency: float = 3.5e9  # Hz
    bandwidth: float = 5e6  # Hz
    noise_figure: float = 9.0  # dB
    shadow_std: float = 8.0  # dB
    scs: float = 15e3  # Hz
    n_subcarriers: int = 300

    def __post_init__(self):
        for name in ("carrier_frequency", "bandwidth", "scs"):
            value = getattr(self, name)
            if not np.isfinite(value) or value <= 0:
                raise InvalidInput(f"{name} must be positive, got {value}")
        if not np.isfinite(self.tx_power):
            raise InvalidInput("tx_power must be finite")
        if self.noise_figure < 0 or self.shadow_std < 0:
            raise InvalidInput("noise_figure and shadow_std must be non-negative")
        if int(self.n_subcarriers) != self.n_subcarriers or self.n_subcarriers < 1:
            raise InvalidInput("n_subcarriers must be a positive integer")
        if self.bandwidth < self.scs * self.n_subcarriers * (1 - 1e-12):
            raise InvalidInput(
                f"bandwidth {self.bandwidth} Hz cannot hold {self.n_subcarriers} "
                f"subcarriers at {self.scs} Hz"
            )

    @property
    def sample_period(self):
        """Time resolution of the subcarrier grid, 1/(N·scs)."""
        return 1.0 / (self.n_subcarriers * self.scs)


@dataclass(frozen=True)
class LinkGeometry:
    distance_3d: float
    indoor_distance_2d: float = 0.0
    n_floors: int = 0
    n_internal_walls: int = 0
    n_external_walls: int = 0

    def __post_init__(self):
        if not self.indoor_distance_2d >= 0:
            raise InvalidInput("indoor_distance_2d must be non-negative")
        for name in ("n_floors", "n_internal_walls", "n_external_walls"):
            if getattr(self, name) < 0:
                raise InvalidInput(f"{name} must be non-negative")


def path_loss(geom):
    """Dual-stripe indoor path loss in dB; distances in meters."""
    r = geom.distance_3d
    if not np.isfinite(r) or r <= 0:
        raise InvalidInput(f"distance_3d must be positive, got {r}")
    log_r = np.log10(r)
    pl = max(15.3 + 37.6 * log_r, 38.46 + 20.0 * log_r)
    pl += 0.7 * geom.indoor_distance_2d
    n = geom.n_floors
    if n > 0:
        pl += 18.3 * n ** ((n + 2) / (n + 1) - 0.46)
    pl += 5.0 * geom.n_internal_walls + 20.0 * geom.n_external_walls
    return float(pl)


def thermal_noise(bandwidth):
    """Thermal noise power in dBm over ``bandwidth`` Hz at room temperature."""
    if not np.isfinite(bandwidth) or bandwidth <= 0:
        raise InvalidInput(f"bandwidth must be positive, got {bandwidth}")
    return float(THERMAL_NOISE_DBM_PER_HZ + linear_to_db(bandwidth))


def snr_db(budget, pl, shadow_draw):
    n0 = thermal_noise(budget.bandwidth)
    return float(budget.tx_power - pl - shadow_draw - n0 - budget.noise_figure)


def sample_shadow(rng, shadow_std):
    """One log-normal shadowing draw in dB."""
    if shadow_std < 0:
        raise InvalidInput("shadow_std must be non-negative")
    return float(rng.normal(0.0, shadow_std)) if shadow_std > 0 else 0.0


@dataclass(frozen=True)
class ChannelImpulseResponse:
    tap_delays: np.ndarray  # seconds, non-decreasing, first is 0
    tap_gains: np.ndarray  # complex, unit total power

    def __post_init__(self):
        delays = np.asarray(self.tap_delays, dtype=float).ravel()
        gains = np.asarray(self.tap_gains, dtype=complex).ravel()
        if delays.size < 1 or delays.size != gains.size:
            raise InvalidInput("CIR needs at least one tap and matching delay/gain lengths")
        if np.any(np.diff(delays) < 0):
            raise InvalidInput("tap delays must be non-decreasing")
        power = float(np.sum(np.abs(gains) ** 2))
        if abs(power - 1.0) > 1e-9:
            raise InvalidInput(f"CIR must have unit power, got {power}")
        object.__setattr__(self, "tap_delays", delays)
        object.__setattr__(self, "tap_gains", gains)

    def __len__(self):
        return self.tap_delays.size


@lru_cache(maxsize=1)
def cdl_a_profile():
    """CDL-A cluster table as ``(normalized_delays, powers_db)`` arrays."""
    text = resources.files("tswpm.data").joinpath("cdl_a.csv").read_text()
    rows = [line for line in text.splitlines() if line and not line.startswith("#")]
    reader = csv.DictReader(rows)
    delays, powers = [], []
    for row in reader:
        delays.append(float(row["normalized_delay"]))
        powers.append(float(row["power_db"]))
    return np.array(delays), np.array(powers)


def truncated_cdl_a(delay_spread, max_taps):
    """Deterministic part of a CDL-A draw: delays (s) and unit-sum linear powers.

    Keeps the ``max_taps`` strongest clusters, sorts them by delay and shifts
    the delays so the earliest kept cluster sits at 0.
    """
    if not np.isfinite(delay_spread) or delay_spread <= 0:
        raise InvalidInput("delay_spread must be positive")
    if int(max_taps) != max_taps or max_taps < 1:
        raise InvalidInput("max_taps must be a positive integer")
    norm_delays, powers_db = cdl_a_profile()
    # stable sort so equal-power clusters keep table order
    keep = np.argsort(-powers_db, kind="stable")[: int(max_taps)]
    keep = keep[np.argsort(norm_delays[keep], kind="stable")]
    delays = (norm_delays[keep] - norm_delays[keep].min()) * delay_spread
    power = 10.0 ** (powers_db[keep] / 10.0)
    return delays, power / power.sum()


def sample_cdl_a(rng, delay_spread=100e-9, max_taps=12):
    """Random CDL-A power-delay-profile realization with complex Gaussian tap gains.

    The gains are rescaled so that each realization has unit total power. That
    rescaling pulls the mean power of the strongest tap below its profile value
    (and lifts the weak ones); :func:`draw_cdl_a_gains` gives the raw draw.
    """
    delays, power = truncated_cdl_a(delay_spread, max_taps)
    gains = draw_cdl_a_gains(rng, power)
    gains /= np.sqrt(np.sum(np.abs(gains) ** 2))
    return ChannelImpulseResponse(delays, gains)


def draw_cdl_a_gains(rng, power):
    """Circularly-symmetric complex Gaussian gains with per-tap mean powers ``power``."""
    power = np.asarray(power, dtype=float)
    g = rng.standard_normal(power.size) + 1j * rng.standard_normal(power.size)
    return g * np.sqrt(power / 2.0)


def to_sample_grid(cir, sample_period):
    """Bin taps onto the nearest multiple of ``sample_period``.

    Taps falling into the same bin add coherently; the result is a contiguous
    sample-spaced CIR (empty bins have zero gain) renormalized to unit power.
    Closely spaced clusters would otherwise make the tap Gram matrix singular.
    """
    if not sample_period > 0:
        raise InvalidInput("sample_period must be positive")
    idx = np.rint(cir.tap_delays / sample_period).astype(int)
    idx -= idx.min()
    gains = np.zeros(idx.max() + 1, dtype=complex)
    np.add.at(gains, idx, cir.tap_gains)
    total = np.sum(np.abs(gains) ** 2)
    if total == 0.0:
        raise InvalidInput("taps cancel completely on the sample grid")
    gains /= np.sqrt(total)
    return ChannelImpulseResponse(np.arange(gains.size) * sample_period, gains)
