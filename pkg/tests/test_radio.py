import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from castsim.kernel import make_rng
from castsim.radio import (
    McsEntry,
    McsTable,
    RadioConfig,
    RadioModel,
    bits_per_prb,
    decodes,
    default_table,
    equal_area_radius,
    hex_site_layout,
    mbsfn_sinr_db,
    pathloss_db,
    pathloss_intercept_db,
    rate_bits_per_prb,
    unicast_sinr_db,
)
from castsim.radio.propagation import antenna_gain_db, max_antenna_gain_db, thermal_noise_dbm

ORIGIN = (0.0, 0.0, 0.0)


# --- pathloss ------------------------------------------------------------------------------------

def test_intercept_at_reference_distance():
    # hand-evaluated: 128.1 - 37.6 + 20 log10(3.5 / 2) = 95.3608 dB
    assert pathloss_intercept_db(3.5) == pytest.approx(95.3608, abs=1e-4)
    assert pathloss_db(ORIGIN, (100.0, 0.0, 0.0)) == pytest.approx(95.3608, abs=1e-4)


@given(st.floats(1.0, 5000.0))
def test_doubling_distance_adds_fixed_step(d):
    a = pathloss_db(ORIGIN, (d, 0.0, 0.0))
    b = pathloss_db(ORIGIN, (2 * d, 0.0, 0.0))
    assert b - a == pytest.approx(37.6 * math.log10(2), abs=1e-9)


def test_sub_metre_distance_is_clamped():
    assert pathloss_db(ORIGIN, (0.2, 0.0, 0.0)) == pathloss_db(ORIGIN, (1.0, 0.0, 0.0))


def test_antenna_peak_and_floor():
    g = max_antenna_gain_db(5.0, 8)
    assert g == pytest.approx(14.0309, abs=1e-4)
    assert antenna_gain_db(0.0, 20.0, g_max_db=g) == pytest.approx(g)
    # horizontal cut saturates at 30 dB
    assert antenna_gain_db(180.0, 20.0, g_max_db=g) == pytest.approx(g - 30.0)
    # half-power point: 12 (32.5/65)^2 = 3 dB
    assert antenna_gain_db(32.5, 20.0, g_max_db=g) == pytest.approx(g - 3.0)


def test_noise_floor():
    assert thermal_noise_dbm(100e6, 9.0) == pytest.approx(-85.0, abs=1e-9)


# --- SINR ----------------------------------------------------------------------------------------

def test_no_interferers_gives_snr():
    assert unicast_sinr_db([-60.0], 0, -90.0) == pytest.approx(30.0)


def test_two_equal_cells_near_zero_db():
    assert unicast_sinr_db([-50.0, -50.0], 0, -200.0) == pytest.approx(0.0, abs=1e-9)


def test_single_cell_area_equals_unicast():
    rx = [-70.0, -85.0, -90.0]
    assert mbsfn_sinr_db(rx, [True, False, False], -95.0) == pytest.approx(
        unicast_sinr_db(rx, 0, -95.0))


def test_mbsfn_adds_useful_power():
    rx = [-70.0, -70.0, -100.0]
    single = unicast_sinr_db(rx, 0, -110.0)
    both = mbsfn_sinr_db(rx, [True, True, False], -110.0)
    assert both > single


def _brute_force_link(x, y, cfg: RadioConfig):
    """Independent link budget with plain loops, full ring activity scaled as configured."""
    rx = []
    in_area = []
    act = []
    for cell in hex_site_layout(200.0):
        dx, dy = x - cell.x, y - cell.y
        d2 = math.hypot(dx, dy)
        d3 = max(math.hypot(d2, cfg.site_height_m - cfg.ue_height_m), 1.0)
        pl = 128.1 - 37.6 + 20 * math.log10(cfg.carrier_ghz / 2) + 37.6 * math.log10(d3 / 100)
        phi = (math.degrees(math.atan2(dy, dx)) - cell.azimuth_deg + 180) % 360 - 180
        theta = math.degrees(math.atan2(cfg.site_height_m - cfg.ue_height_m, d2))
        g = 5 + 10 * math.log10(8) - min(12 * (phi / 65) ** 2, 30) - min(12 * ((theta - 20) / 65) ** 2, 30)
        rx.append(51.0 + g - pl)
        in_area.append(cell.simulated)
        act.append(1.0 if cell.simulated else cfg.ring_activity)
    lin = [10 ** (p / 10) for p in rx]
    noise = 10 ** ((-174 + 80 + 9) / 10)
    sim = [i for i, a in enumerate(in_area) if a]
    serving = max(sim, key=lambda i: lin[i])
    interf = sum(lin[i] * act[i] for i in range(len(lin)) if i != serving)
    uc = 10 * math.log10(lin[serving] / (interf + noise))
    useful = sum(lin[i] for i in sim)
    ring = sum(lin[i] * act[i] for i in range(len(lin)) if not in_area[i])
    mb = 10 * math.log10(useful / (ring + noise))
    return serving, uc, mb


def _model(n_ues=1, **kw):
    cfg = RadioConfig(shadowing_std_db=0.0, **kw)
    return RadioModel(cfg, hex_site_layout(200.0), n_ues)


@pytest.mark.parametrize("x,y", [(30.0, 20.0), (-40.0, 5.0), (0.0, -60.0), (70.0, 70.0), (5.0, 100.0)])
def test_link_budget_matches_brute_force(x, y):
    m = _model()
    m.set_position(0, x, y)
    q = m.update()
    serving, uc, mb = _brute_force_link(x, y, m.cfg)
    assert int(q.serving[0]) == serving
    assert q.sinr_unicast_db[0] == pytest.approx(uc, abs=1e-9)
    assert q.sinr_mbsfn_db[0] == pytest.approx(mb, abs=1e-9)


def test_cell_centre_sanity_band():
    m = _model()
    for az in (30.0, 150.0, 270.0):
        m.set_position(0, 50 * math.cos(math.radians(az)), 50 * math.sin(math.radians(az)))
        q = m.update()
        assert -10.0 <= q.sinr_unicast_db[0] <= 40.0


def test_mbsfn_decreases_away_from_centroid():
    m = _model()
    for az in range(0, 360, 20):
        vals = []
        for r in np.linspace(15.0, 105.0, 19):
            m.set_position(0, r * math.cos(math.radians(az)), r * math.sin(math.radians(az)))
            vals.append(float(m.update().sinr_mbsfn_db[0]))
        assert all(b <= a + 1e-9 for a, b in zip(vals, vals[1:])), (az, vals)


@settings(max_examples=200, deadline=None)
@given(st.floats(-105, 105), st.floats(-105, 105))
def test_mbsfn_dominates_unicast(x, y):
    m = _model()
    m.set_position(0, x, y)
    q = m.update()
    assert q.sinr_mbsfn_db[0] >= q.sinr_unicast_db[0] - 1e-9


def test_power_partition_counts_each_cell_once():
    m = _model(ring_activity=1.0)
    m.set_position(0, 20.0, 40.0)
    rx = m.rx_power_dbm()[0]
    lin = 10 ** (rx / 10)
    q = m.update()
    s = lin[q.serving[0]]
    noise = 10 ** (m.cfg.noise_dbm / 10)
    interf = s / 10 ** (q.sinr_unicast_db[0] / 10) - noise
    assert s + interf == pytest.approx(lin.sum(), rel=1e-12)


def test_shadowing_is_frozen():
    cfg = RadioConfig()
    m = RadioModel(cfg, hex_site_layout(), 4, rng=make_rng(3, "channel"))
    before = m.shadowing_db.copy()
    m.place_uniform(make_rng(3, "mobility"))
    a = m.update().sinr_unicast_db.copy()
    b = m.update().sinr_unicast_db.copy()
    np.testing.assert_array_equal(a, b)
    m.mobility_step(1.0)
    np.testing.assert_array_equal(m.shadowing_db, before)


# --- MCS -----------------------------------------------------------------------------------------

def test_table_shape():
    t = default_table()
    assert len(t) == 29
    assert t[0].spectral_eff == pytest.approx(0.15)
    assert t[28].spectral_eff == pytest.approx(7.4063)


def test_threshold_is_closed_lower_bound():
    t = default_table()
    for e in t.entries:
        assert t.select(e.min_sinr_db).index == e.index
        assert t.select(e.min_sinr_db - 1e-9).index == e.index - 1 if e.index else t.select(
            e.min_sinr_db - 1e-9) is None


def test_below_lowest_threshold_unservable():
    assert rate_bits_per_prb(-20.0) == 0.0


def test_fixed_multicast_rate_ignores_sinr():
    mcs2 = default_table()[2]
    assert rate_bits_per_prb(30.0, mcs2) == rate_bits_per_prb(-3.0, mcs2) == bits_per_prb(mcs2)
    assert decodes(-4.2, mcs2) and not decodes(-4.3, mcs2)


def test_unicast_rate_is_non_decreasing_step():
    grid = np.arange(-12.0, 30.0, 0.1)
    rates = [rate_bits_per_prb(float(s)) for s in grid]
    assert all(b >= a for a, b in zip(rates, rates[1:]))
    assert len(set(rates)) == 30  # zero plus 29 entries


def test_bits_per_prb_hand_values():
    t = default_table()
    assert bits_per_prb(t[2], layers=4) == pytest.approx(0.377 * 336 * 4)
    assert bits_per_prb(t[4], layers=2) == pytest.approx(0.877 * 336 * 2)


def test_table_validation():
    with pytest.raises(ValueError):
        McsTable([McsEntry(0, 1.0, 0.0), McsEntry(1, 0.5, 1.0)])
    with pytest.raises(ValueError):
        McsTable.from_text("0 0.1\n")
    t = McsTable.from_text("# c\n0 0.1 -5\n1, 0.2, -3\n")
    assert len(t) == 2


# --- mobility ------------------------------------------------------------------------------------

def test_displacement_at_walking_speed():
    m = _model()
    m.set_position(0, 0.0, 0.0, speed_kmph=3.0)
    m.heading[0] = 0.0
    m.mobility_step(1.0)
    assert m.x[0] == pytest.approx(3.0 / 3.6)


def test_nonpositive_step_rejected():
    with pytest.raises(ValueError):
        _model().mobility_step(0.0)


def _trajectory(seed):
    m = RadioModel(RadioConfig(), hex_site_layout(), 5, rng=make_rng(seed, "channel"))
    m.place_uniform(make_rng(seed, "mobility"))
    out = []
    for _ in range(50):
        m.mobility_step(1.0)
        out.append((m.x.copy(), m.y.copy()))
    return out


def test_trajectories_deterministic():
    for (xa, ya), (xb, yb) in zip(_trajectory(5), _trajectory(5)):
        np.testing.assert_array_equal(xa, xb)
        np.testing.assert_array_equal(ya, yb)


def test_long_run_stays_bounded_and_uniform():
    r = equal_area_radius(200.0)
    m = RadioModel(RadioConfig(shadowing_std_db=0.0), hex_site_layout(ring=False), 200,
                   area_radius_m=r)
    m.place_uniform(make_rng(11, "mobility"), speed_kmph=30.0)
    inner = []
    for _ in range(500):  # 10^5 UE-steps
        m.mobility_step(1.0)
        rad = np.hypot(m.x, m.y)
        assert rad.max() <= r + 1e-9
        inner.append(np.mean(rad <= r / math.sqrt(2)))
    # half the area lies inside r / sqrt(2)
    assert np.mean(inner) == pytest.approx(0.5, abs=0.05)


def test_equal_area_radius():
    hex_area = math.sqrt(3) / 2 * 200.0 ** 2
    assert math.pi * equal_area_radius(200.0) ** 2 == pytest.approx(hex_area)
