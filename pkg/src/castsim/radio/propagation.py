"""Log-distance urban-macro pathloss and the parabolic sector antenna pattern."""
from __future__ import annotations

import math

import numpy as np

PATHLOSS_EXPONENT = 3.76
REFERENCE_DISTANCE_M = 100.0
MIN_DISTANCE_M = 1.0


def pathloss_intercept_db(carrier_ghz: float) -> float:
    """Pathloss at the 100 m reference distance.

    128.1 + 37.6 log10(d_km) at 2 GHz evaluated at 0.1 km, shifted to the carrier
    with a 20 log10(f) frequency term.
    """
    return 128.1 - 37.6 + 20.0 * math.log10(carrier_ghz / 2.0)


def pathloss_db(tx_pos, rx_pos, carrier_ghz: float = 3.5,
                exponent: float = PATHLOSS_EXPONENT):
    """PL = A(f) + 10 * exponent * log10(d / 100 m) on the 3-D distance.

    Positions are (x, y, z) in meters; arrays broadcast. Distances below 1 m are
    clamped to 1 m. Shadowing is added by the caller.
    """
    tx = np.asarray(tx_pos, dtype=float)
    rx = np.asarray(rx_pos, dtype=float)
    d = np.sqrt(np.sum((tx - rx) ** 2, axis=-1))
    d = np.maximum(d, MIN_DISTANCE_M)
    pl = pathloss_intercept_db(carrier_ghz) + 10.0 * exponent * np.log10(d / REFERENCE_DISTANCE_M)
    return float(pl) if np.ndim(pl) == 0 else pl


def max_antenna_gain_db(element_gain_dbi: float = 5.0, elements_per_txru: int = 8) -> float:
    # vertical elements hard-wired to one TXRU add coherent gain
    return element_gain_dbi + 10.0 * math.log10(elements_per_txru)


def antenna_gain_db(azimuth_off_deg, elevation_deg, *, g_max_db: float,
                    beamwidth_az_deg: float = 65.0, beamwidth_el_deg: float = 65.0,
                    downtilt_deg: float = 20.0, max_atten_db: float = 30.0):
    """Separable parabolic pattern, each cut clamped at ``max_atten_db``.

    ``elevation_deg`` is the depression angle from the horizon towards the UE.
    """
    phi = np.asarray(azimuth_off_deg, dtype=float)
    theta = np.asarray(elevation_deg, dtype=float)
    h = np.minimum(12.0 * (phi / beamwidth_az_deg) ** 2, max_atten_db)
    v = np.minimum(12.0 * ((theta - downtilt_deg) / beamwidth_el_deg) ** 2, max_atten_db)
    g = g_max_db - h - v
    return float(g) if np.ndim(g) == 0 else g


def wrap_degrees(angle):
    """Map to [-180, 180)."""
    return (np.asarray(angle, dtype=float) + 180.0) % 360.0 - 180.0


def thermal_noise_dbm(bandwidth_hz: float, noise_figure_db: float) -> float:
    return -174.0 + 10.0 * math.log10(bandwidth_hz) + noise_figure_db


def db_to_lin(x):
    return 10.0 ** (np.asarray(x, dtype=float) / 10.0)


def lin_to_db(x):
    return 10.0 * np.log10(x)
