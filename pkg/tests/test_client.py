import csv

import pytest
from hypothesis import given
from hypothesis import strategies as st

from castsim.client import (
    AbrState,
    CancelDecision,
    ClientConfig,
    MediaObject,
    Player,
    PlayerState,
    Popularity,
    QuitDecision,
    TRACE_COLUMNS,
    assign_object_modes,
    check_quit,
    maybe_cancel,
    select_bitrate,
    write_trace,
)
from castsim.delivery import DeliveryMode, DEFAULT_LADDER as LADDER

MBPS = 1_000_000


# --- rate adaptation -----------------------------------------------------------------------------

def test_ten_mbps_estimate_picks_eight_mbps_rung():
    abr = AbrState(buffer_s=10.0, throughput_estimate_bps=10 * MBPS, current_rung=3)
    assert LADDER[select_bitrate(abr, LADDER)].bits_per_s == 8 * MBPS


def test_panic_buffer_demotes():
    for est in (1 * MBPS, 50 * MBPS, 500 * MBPS):
        abr = AbrState(buffer_s=1.0, throughput_estimate_bps=est, current_rung=4)
        assert select_bitrate(abr, LADDER) <= 3


def test_single_step_promotion():
    abr = AbrState(buffer_s=10.0, throughput_estimate_bps=100 * MBPS, current_rung=0)
    assert select_bitrate(abr, LADDER) == 1


def test_no_estimate_keeps_rung():
    assert select_bitrate(AbrState(buffer_s=10.0, current_rung=2), LADDER) == 2


@given(st.floats(0.0, 20.0), st.floats(1e4, 1e9), st.integers(0, 5))
def test_selected_rung_is_feasible(buf, est, cur):
    abr = AbrState(buffer_s=buf, throughput_estimate_bps=est, current_rung=cur)
    r = select_bitrate(abr, LADDER)
    assert 0 <= r < len(LADDER)
    assert r <= cur + 1
    if r > 0:
        assert LADDER[r].bits_per_s <= 0.8 * est


def test_ema_update():
    abr = AbrState()
    assert abr.observe(10.0, 0.1) == 10.0
    assert abr.observe(20.0, 0.1) == pytest.approx(11.0)


def test_config_validation():
    with pytest.raises(ValueError):
        ClientConfig(initial_buffer_target_s=40.0)
    with pytest.raises(ValueError):
        ClientConfig(throughput_ema_alpha=0.0)


# --- cancellation and quitting -------------------------------------------------------------------

def test_cancel_rules():
    # projected = remaining / goodput
    assert maybe_cancel(2 * MBPS, 1 * MBPS, 6.0, 3) is CancelDecision.CONTINUE
    assert maybe_cancel(10 * MBPS, 1 * MBPS, 2.0, 0) is CancelDecision.CONTINUE
    assert maybe_cancel(10 * MBPS, 1 * MBPS, 2.0, 3) is CancelDecision.CANCEL
    assert maybe_cancel(1, 0.0, 2.0, 3) is CancelDecision.CANCEL


def test_quit_rules():
    assert check_quit(29.0, 15.0, True) is QuitDecision.CONTINUE
    assert check_quit(30.0, 15.0, True) is QuitDecision.QUIT
    # cancel too recent, or replacement would make it
    assert check_quit(30.0, 5.0, True) is QuitDecision.CONTINUE
    assert check_quit(30.0, 15.0, False) is QuitDecision.CONTINUE
    # never cancelled: only the lowest rung may quit on starvation alone
    assert check_quit(30.0, None, True) is QuitDecision.CONTINUE
    assert check_quit(30.0, None, True, lowest_rung=True) is QuitDecision.QUIT


# --- object composition --------------------------------------------------------------------------

def test_heavy_shared_video_multicast_icons_unicast():
    objs = [MediaObject("video", 8 * MBPS), MediaObject("icons", 50_000, Popularity.PERSONALIZED)]
    assert assign_object_modes(objs, 1 * MBPS) == {
        "video": DeliveryMode.MULTICAST, "icons": DeliveryMode.UNICAST}


def test_personalized_never_multicast():
    objs = [MediaObject(f"o{i}", b, Popularity.PERSONALIZED) for i, b in enumerate((1, 10**9))]
    assert set(assign_object_modes(objs, 0).values()) == {DeliveryMode.UNICAST}


def test_zero_threshold_every_shared_object_multicast():
    objs = [MediaObject("a", 1), MediaObject("b", 10**6)]
    assert set(assign_object_modes(objs, 0).values()) == {DeliveryMode.MULTICAST}


def test_single_viewer_and_empty_set():
    assert assign_object_modes([MediaObject("a", 10**7)], 0, audience=1) == {"a": DeliveryMode.UNICAST}
    with pytest.raises(ValueError):
        assign_object_modes([], 0)


# --- playback ------------------------------------------------------------------------------------

def _play(arrivals, horizon, initial_s=1.0, lost=()):
    """Drive a Player with a scripted arrival trace, millisecond by millisecond."""
    have = set()
    p = Player(0, 1000, initial_s, ready=have.__contains__, lost=lambda k: k in lost,
               bitrate_of=lambda k: 4e6)
    for t in range(horizon + 1):
        for pos in arrivals.get(t, ()):
            have.add(pos)
            p.poke(t)
        if p.state is PlayerState.PLAYING and p.play_end == t:
            p.segment_end(t)
    return p


def test_alternating_starvation_stall_timeline():
    # one segment every 2 s: each second of play is followed by a 1 s stall
    arrivals = {2000 * k: [k] for k in range(5)}
    p = _play(arrivals, 9500)
    p.stop(9500)
    assert p.record.stalls == [(1000, 1000), (3000, 1000), (5000, 1000), (7000, 1000), (9000, 500)]


def test_initial_buffer_gates_start():
    p = _play({500: [0], 900: [1], 1500: [2], 4000: [3]}, 4500, initial_s=2.0)
    assert p.started_at == 900
    # 0, 1, 2 play back to back from 900 ms; 3 is 100 ms late
    assert p.record.stalls == [(3900, 100)]
    assert p.record.positions[3].played_at == 4000


def test_buffer_drains_with_play():
    have = {0, 1, 2}
    p = Player(0, 1000, 1.0, have.__contains__, lambda k: False, lambda k: 1e6)
    p.poke(0)
    assert p.buffer_s(0) == pytest.approx(3.0)
    assert p.buffer_s(1000) == pytest.approx(2.0)


def test_lost_position_is_skipped_and_scored():
    p = _play({0: [0, 1, 3]}, 3500, lost={2})
    assert p.record.skipped == 1
    assert p.record.positions[2].skipped
    assert p.record.positions[2].stall_ms == 1000
    assert p.record.positions[3].played_at == 2000
    assert p.record.stalls == []


def test_trace_columns(tmp_path):
    path = tmp_path / "trace.csv"
    write_trace(path, [(1500, "segment_start", 2, 3.25)])
    rows = list(csv.reader(open(path)))
    assert tuple(rows[0]) == TRACE_COLUMNS == ("time_s", "event", "rung", "buffer_s")
    assert rows[1] == ["1.500", "segment_start", "2", "3.250"]
