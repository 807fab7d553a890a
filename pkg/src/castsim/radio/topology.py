"""Cell layout, UE mobility and per-UE link quality."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .propagation import (
    antenna_gain_db,
    db_to_lin,
    lin_to_db,
    max_antenna_gain_db,
    pathloss_db,
    thermal_noise_dbm,
    wrap_degrees,
)

SECTOR_AZIMUTHS_DEG = (30.0, 150.0, 270.0)


@dataclass(frozen=True)
class Cell:
    cell_id: int
    x: float
    y: float
    azimuth_deg: float
    site: int
    simulated: bool = True  # simulated cells form the MBSFN area


@dataclass
class RadioConfig:
    carrier_ghz: float = 3.5
    tx_power_dbm: float = 51.0
    bandwidth_mhz: float = 100.0
    n_prb: int = 273
    element_gain_dbi: float = 5.0
    elements_per_txru: int = 8
    beamwidth_az_deg: float = 65.0
    beamwidth_el_deg: float = 65.0
    downtilt_deg: float = 20.0
    max_atten_db: float = 30.0
    bs_noise_figure_db: float = 5.0
    ue_noise_figure_db: float = 9.0
    site_height_m: float = 25.0
    ue_height_m: float = 1.5
    pathloss_exponent: float = 3.76
    shadowing_std_db: float = 8.0
    shadowing_site_correlation: float = 0.5
    ring_activity: float = 0.1
    ring_mbsfn_useful: bool = False
    layers: int = 4

    @property
    def g_max_db(self) -> float:
        return max_antenna_gain_db(self.element_gain_dbi, self.elements_per_txru)

    @property
    def bandwidth_hz(self) -> float:
        return self.bandwidth_mhz * 1e6

    @property
    def noise_dbm(self) -> float:
        return thermal_noise_dbm(self.bandwidth_hz, self.ue_noise_figure_db)


def hex_site_layout(isd_m: float = 200.0, ring: bool = True,
                    azimuths: Sequence[float] = SECTOR_AZIMUTHS_DEG) -> list[Cell]:
    """One tri-sector site at the origin, optionally wrapped by 6 interfering sites."""
    sites = [(0.0, 0.0)]
    if ring:
        for k in range(6):
            a = math.radians(60.0 * k + 30.0)
            sites.append((isd_m * math.cos(a), isd_m * math.sin(a)))
    cells = []
    for s, (x, y) in enumerate(sites):
        for az in azimuths:
            cells.append(Cell(len(cells), x, y, az, s, simulated=(s == 0)))
    return cells


def equal_area_radius(isd_m: float) -> float:
    """Radius of the disc with the same area as a hexagon of inter-site distance isd."""
    return isd_m * math.sqrt(math.sqrt(3.0) / (2.0 * math.pi))


@dataclass
class LinkQuality:
    serving: np.ndarray        # index into the cell list, per UE
    sinr_unicast_db: np.ndarray
    sinr_mbsfn_db: np.ndarray


class RadioModel:
    """Geometry + frozen shadowing -> SINR for every UE.

    Shadowing is drawn once per (UE, site) with a common per-UE component
    (correlation ``shadowing_site_correlation`` between sites) and never redrawn,
    so SINR moves only with geometry.
    """

    def __init__(self, cfg: RadioConfig, cells: Sequence[Cell], n_ues: int,
                 rng: Optional[np.random.Generator] = None, area_radius_m: float = 105.0):
        self.cfg = cfg
        self.cells = list(cells)
        self.area_radius_m = float(area_radius_m)
        self.n_ues = int(n_ues)
        self.cx = np.array([c.x for c in cells])
        self.cy = np.array([c.y for c in cells])
        self.caz = np.array([c.azimuth_deg for c in cells])
        self.csite = np.array([c.site for c in cells], dtype=int)
        self.in_area = np.array([c.simulated for c in cells], dtype=bool)
        self.simulated_idx = np.flatnonzero(self.in_area)
        n_sites = int(self.csite.max()) + 1 if len(cells) else 0
        self.x = np.zeros(self.n_ues)
        self.y = np.zeros(self.n_ues)
        self.heading = np.zeros(self.n_ues)
        self.speed_mps = np.zeros(self.n_ues)
        if rng is not None and cfg.shadowing_std_db > 0:
            rho = cfg.shadowing_site_correlation
            common = rng.standard_normal((self.n_ues, 1))
            own = rng.standard_normal((self.n_ues, n_sites))
            self.shadowing_db = cfg.shadowing_std_db * (math.sqrt(rho) * common
                                                        + math.sqrt(1.0 - rho) * own)
        else:
            self.shadowing_db = np.zeros((self.n_ues, n_sites))
        self.sinr_override: dict[int, tuple[float, float]] = {}
        self.quality = LinkQuality(np.zeros(self.n_ues, dtype=int),
                                   np.zeros(self.n_ues), np.zeros(self.n_ues))

    # --- placement / mobility -------------------------------------------------
    def place_uniform(self, rng: np.random.Generator, speed_kmph: float = 3.0) -> None:
        r = self.area_radius_m * np.sqrt(rng.random(self.n_ues))
        t = rng.random(self.n_ues) * 2.0 * math.pi
        self.x = r * np.cos(t)
        self.y = r * np.sin(t)
        self.heading = rng.random(self.n_ues) * 2.0 * math.pi
        self.speed_mps = np.full(self.n_ues, speed_kmph / 3.6)

    def set_position(self, ue: int, x: float, y: float, speed_kmph: Optional[float] = None) -> None:
        self.x[ue] = x
        self.y[ue] = y
        if speed_kmph is not None:
            self.speed_mps[ue] = speed_kmph / 3.6

    def mobility_step(self, dt_s: float) -> LinkQuality:
        """Advance every UE along its heading, reflecting off the disc boundary."""
        if dt_s <= 0:
            raise ValueError("dt must be positive")
        R = self.area_radius_m
        left = self.speed_mps * dt_s
        x, y = self.x.copy(), self.y.copy()
        for _ in range(64):  # bounces per step; more only for absurd speeds
            vx, vy = np.cos(self.heading), np.sin(self.heading)
            # distance along the heading to the circle: t^2 + 2 b t + c = 0
            b = x * vx + y * vy
            c = x * x + y * y - R * R
            t_hit = -b + np.sqrt(np.maximum(b * b - c, 0.0))
            hit = (left > t_hit) & (left > 0)
            move = np.where(hit, t_hit, left)
            x = x + move * vx
            y = y + move * vy
            left = left - move
            if not hit.any():
                break
            # specular reflection about the normal at the crossing point
            nx, ny = x[hit] / R, y[hit] / R
            dot = vx[hit] * nx + vy[hit] * ny
            self.heading[hit] = np.arctan2(vy[hit] - 2 * dot * ny, vx[hit] - 2 * dot * nx)
        # guard against round-off leaving a UE a hair outside
        r = np.hypot(x, y)
        scale = np.where(r > R, R / np.maximum(r, 1e-12), 1.0)
        self.x, self.y = x * scale, y * scale
        return self.update()

    # --- link budget ----------------------------------------------------------
    def rx_power_dbm(self, x=None, y=None, shadowing=None) -> np.ndarray:
        """Received power [UE, cell] in dBm."""
        cfg = self.cfg
        x = self.x if x is None else np.atleast_1d(np.asarray(x, dtype=float))
        y = self.y if y is None else np.atleast_1d(np.asarray(y, dtype=float))
        dx = x[:, None] - self.cx[None, :]
        dy = y[:, None] - self.cy[None, :]
        d2 = np.hypot(dx, dy)
        dh = cfg.site_height_m - cfg.ue_height_m
        phi = wrap_degrees(np.degrees(np.arctan2(dy, dx)) - self.caz[None, :])
        theta = np.degrees(np.arctan2(dh, d2))
        gain = antenna_gain_db(phi, theta, g_max_db=cfg.g_max_db,
                               beamwidth_az_deg=cfg.beamwidth_az_deg,
                               beamwidth_el_deg=cfg.beamwidth_el_deg,
                               downtilt_deg=cfg.downtilt_deg, max_atten_db=cfg.max_atten_db)
        tx = np.stack([self.cx, self.cy, np.full_like(self.cx, cfg.site_height_m)], axis=-1)
        rx = np.stack([x, y, np.full_like(x, cfg.ue_height_m)], axis=-1)
        pl = pathloss_db(tx[None, :, :], rx[:, None, :], cfg.carrier_ghz, cfg.pathloss_exponent)
        if shadowing is None:
            shadowing = self.shadowing_db[:, self.csite] if len(x) == self.n_ues else 0.0
        return cfg.tx_power_dbm + gain - pl + shadowing

    def sinr_from_rx(self, rx_dbm: np.ndarray) -> LinkQuality:
        cfg = self.cfg
        p = db_to_lin(rx_dbm)
        activity = np.where(self.in_area, 1.0, cfg.ring_activity)
        noise = db_to_lin(cfg.noise_dbm)
        sim = p[:, self.simulated_idx]
        serving_local = np.argmax(sim, axis=1)
        serving = self.simulated_idx[serving_local]
        s = sim[np.arange(len(p)), serving_local]
        total = (p * activity[None, :]).sum(axis=1)
        uni = lin_to_db(s / (total - s + noise))
        useful = sim.sum(axis=1)
        ring = (p[:, ~self.in_area] * activity[None, ~self.in_area]).sum(axis=1)
        if cfg.ring_mbsfn_useful:
            mb = lin_to_db((useful + ring) / noise)
        else:
            mb = lin_to_db(useful / (ring + noise))
        return LinkQuality(serving, uni, mb)

    def update(self) -> LinkQuality:
        q = self.sinr_from_rx(self.rx_power_dbm())
        for ue, (u, m) in self.sinr_override.items():
            q.sinr_unicast_db[ue] = u
            q.sinr_mbsfn_db[ue] = m
        self.quality = q
        return q


def unicast_sinr_db(rx_dbm: Sequence[float], serving: int, noise_dbm: float,
                    activity: Optional[Sequence[float]] = None) -> float:
    """Serving power over every other cell's power plus thermal noise."""
    p = db_to_lin(np.asarray(rx_dbm, dtype=float))
    a = np.ones_like(p) if activity is None else np.asarray(activity, dtype=float)
    interf = float((p * a).sum() - p[serving] * a[serving])
    return float(lin_to_db(p[serving] / (interf + db_to_lin(noise_dbm))))


def mbsfn_sinr_db(rx_dbm: Sequence[float], in_area: Sequence[bool], noise_dbm: float,
                  activity: Optional[Sequence[float]] = None) -> float:
    """In-area cells combine as useful power; the rest interfere."""
    p = db_to_lin(np.asarray(rx_dbm, dtype=float))
    mask = np.asarray(in_area, dtype=bool)
    a = np.ones_like(p) if activity is None else np.asarray(activity, dtype=float)
    return float(lin_to_db(p[mask].sum() / ((p[~mask] * a[~mask]).sum() + db_to_lin(noise_dbm))))
