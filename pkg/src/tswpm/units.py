"""Unit conversions. Every dB/linear conversion in the package goes through here."""

import numpy as np

SPEED_OF_LIGHT = 299792458.0  # m/s
THERMAL_NOISE_DBM_PER_HZ = -174.0  # kT at 290 K


def db_to_linear(value_db):
    """Power ratio in dB to linear scale."""
    return 10.0 ** (np.asarray(value_db, dtype=float) / 10.0)


def linear_to_db(value):
    """Linear power ratio to dB."""
    return 10.0 * np.log10(np.asarray(value, dtype=float))


def dbm_to_watts(value_dbm):
    return db_to_linear(value_dbm) * 1e-3


def seconds_to_meters(t):
    return SPEED_OF_LIGHT * t


def meters_to_seconds(d):
    return d / SPEED_OF_LIGHT
