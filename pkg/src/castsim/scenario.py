"""Builds a world from a ScenarioConfig and runs it on the event kernel."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .client import (
    AbrState,
    CancelDecision,
    ClientConfig,
    MediaObject,
    Player,
    PlayerState,
    Popularity,
    QuitDecision,
    assign_object_modes,
    check_quit,
    maybe_cancel,
    select_bitrate,
)
from .config import ScenarioConfig
from .delivery import (
    Burst,
    CellScheduler,
    DeliveryMode,
    LinkTag,
    MulticastChannel,
    Rung,
    Segment,
    Session,
    UnicastFlow,
    make_burst,
    packet_count,
    segment_bytes,
)
from .kernel import EventKind, Simulator, seconds
from .kpi import (
    KpiReport,
    KpiUndefined,
    QoeConfig,
    UNDEFINED,
    WindowEntry,
    al_se,
    consumption_of_logs,
    fraction_at_max,
    mos,
    qoe_cdf,
)
from .mood import Mode, MoodConfig, MoodController, next_boundary
from .multilink import MergeBuffer, MlConfig, RepairAgent, gw_process, ml_decide
from .radio import RadioConfig, RadioModel, default_table, equal_area_radius, hex_site_layout
from .radio.mcs import rate_bits_per_prb

_NA = object()  # segment not yet available


class Content:
    """A live source publishing segment k at (k + 1) segment durations."""

    def __init__(self, cid: str, ladder: list[Rung], seg_ms: int, mood: bool = False):
        self.cid = cid
        self.ladder = ladder
        self.seg_ms = seg_ms
        self.top_bps = ladder[-1].bits_per_s
        self.mood = mood
        self.path: dict[int, Optional["McSession"]] = {}
        self.channel: Optional[MulticastChannel] = None
        self.session: Optional[McSession] = None
        self.sessions: list[McSession] = []
        self.next_k = 0
        self.tracks: list[Track] = []
        self.multicast = False

    def avail(self, k: int) -> int:
        return (k + 1) * self.seg_ms

    def live_edge(self, now: int) -> int:
        return now // self.seg_ms - 1


class McSession:
    """One multicast session of a content (a fresh one per activation)."""

    def __init__(self, content: Content, sid: int):
        self.content = content
        self.sid = sid
        self.session = Session(content.cid, DeliveryMode.MULTICAST)
        self.emitted_upto = 0
        self.rx: dict[int, McRx] = {}
        self.all_rx: list[McRx] = []
        self.eager: set[int] = set()
        self.seg_by_k: dict[int, Segment] = {}
        self.open = True

    def segment_range(self, lo: int, hi: int):
        return self.session.split_by_segment(lo, hi)


class McRx:
    """Per-UE reception state of one multicast session, fronted by the merge buffer."""

    def __init__(self, world: "World", agent: "UeAgent", sess: McSession, track: "Track",
                 start_seq: int):
        self.world = world
        self.agent = agent
        self.ue = agent.ue
        self.sess = sess
        self.track = track
        ml = world.mlcfg
        self.mw = MergeBuffer(start_seq, ml.reorder_window)
        self.repair = RepairAgent(ml) if world.cfg.multilink.repair_enabled else None
        self.synced = start_seq
        self.counts: dict[int, int] = {}
        self.decodable = world.mc_decodable(agent.ue)
        self.dup = False
        self.drop: set[int] = set(agent.drop_seqs.get(sess.content.cid, ()))
        self.dup_bits = 0.0

    def _needs_eager(self) -> bool:
        if self.mw._lo:
            return True
        return any(s >= self.synced for s in self.drop)

    def sync(self, now: int) -> None:
        hi = self.sess.emitted_upto
        lo = self.synced
        if hi > lo:
            self.synced = hi
            if self.decodable:
                self._ingest_multicast(lo, hi, now)
        if self._needs_eager():
            self.sess.eager.add(self.ue)
        else:
            self.sess.eager.discard(self.ue)
        if self.repair is not None and self.mw._lo:
            self.check_repair(now)

    def _ingest_multicast(self, lo: int, hi: int, now: int) -> None:
        if self.drop:
            cuts = sorted(s for s in self.drop if lo <= s < hi)
            for s in cuts:
                if s > lo:
                    self.ingest(lo, s, now)
                lo = s + 1
                self.drop.discard(s)
                self.world.injected_losses.append((now, self.ue, s))
        if hi > lo:
            self.ingest(lo, hi, now)

    def ingest(self, lo: int, hi: int, now: int, repaired: bool = False) -> None:
        lost_before = self.mw.stats.declared_lost
        released = self.mw.ingest(lo, hi, repaired=repaired)
        changed = self.mw.stats.declared_lost != lost_before
        for a, b in released:
            for seg, x, y in self.sess.segment_range(a, b):
                c = self.counts.get(seg.index, 0) + (y - x)
                self.counts[seg.index] = c
                if c == seg.n_packets:
                    self.track.segment_complete(seg.index, seg.bits_per_s, now, via="multicast")
                    changed = True
        if changed:
            self.world.poke(self.agent, now)

    def on_unicast(self, burst: Burst, lo: int, hi: int, now: int) -> None:
        if self.agent.stopped:
            return
        self.ingest(lo, hi, now, repaired=burst.tag is LinkTag.UNICAST_REPAIR)
        if self.mw._lo:
            self.sess.eager.add(self.ue)

    def check_repair(self, now: int) -> None:
        for lo, hi in self.repair.check(now, self.mw):
            self.world.request_repair(self, lo, hi, now)


class Download:
    __slots__ = ("k", "rung", "bits", "bitrate", "requested_at", "first_requested_at", "burst",
                 "last_done", "goodput", "done")

    def __init__(self, k, rung, bitrate, seg_ms, requested_at, first_requested_at):
        self.k = k
        self.rung = rung
        self.bitrate = bitrate
        self.bits = segment_bytes(bitrate, seg_ms / 1000.0) * 8
        self.requested_at = requested_at
        self.first_requested_at = first_requested_at
        self.burst: Optional[Burst] = None
        self.last_done = 0.0
        self.goodput = None
        self.done = False


class Track:
    """One content stream consumed by one UE (one per object for object-based media)."""

    def __init__(self, agent: "UeAgent", content: Content, adaptive: bool):
        self.agent = agent
        self.content = content
        self.adaptive = adaptive
        self.abr = AbrState()
        self.complete: dict[int, float] = {}
        self.next_fetch = 0
        self.inflight: Optional[Download] = None
        self.cancel_time: dict[int, int] = {}

    def ready(self, k: int) -> bool:
        return k in self.complete

    def lost(self, k: int) -> bool:
        sess = self.content.path.get(k, _NA)
        if sess is _NA or sess is None:
            return False
        rx = sess.rx.get(self.agent.ue)
        if rx is None:
            return True
        return rx.mw.next_expected > sess.seg_by_k[k].last_seq

    def segment_complete(self, k: int, bitrate: float, now: int, via: str) -> None:
        if k in self.complete:
            return
        self.complete[k] = bitrate
        rung = self.rung_index(bitrate)
        self.agent.trace(now, "segment_complete", rung)


    def rung_index(self, bitrate: float) -> int:
        for i, r in enumerate(self.content.ladder):
            if r.bits_per_s == bitrate:
                return i
        return len(self.content.ladder) - 1


class UeAgent:
    def __init__(self, world: "World", ue: int, capable: bool):
        self.world = world
        self.ue = ue
        self.capable = capable
        self.flow = UnicastFlow(ue)
        self.tracks: list[Track] = []
        self.player: Optional[Player] = None
        self.active = False
        self.stopped = False
        self.quit = False
        self.quit_at: Optional[int] = None
        self.joined_at: Optional[int] = None
        self.left_at: Optional[int] = None
        self.mos_samples: list[tuple[int, float]] = []
        self.source_bits = 0.0
        self.trace_rows: list[tuple[int, str, int, float]] = []
        self.drop_seqs: dict[str, list[int]] = {}
        self.play_ev = None

    @property
    def top_bps(self) -> float:
        return float(sum(t.content.top_bps for t in self.tracks))

    def buffer_s(self, now: int) -> float:
        return self.player.buffer_s(now) if self.player is not None else 0.0

    def trace(self, now: int, event: str, rung: int) -> None:
        self.trace_rows.append((now, event, rung, self.buffer_s(now)))

    def ready(self, p: int) -> bool:
        return all(t.ready(p) for t in self.tracks)

    def lost(self, p: int) -> bool:
        return any(t.lost(p) and not t.ready(p) for t in self.tracks)

    def bitrate_of(self, p: int) -> float:
        return float(sum(t.complete.get(p, 0.0) for t in self.tracks))


@dataclass
class AlertState:
    n_packets: int
    size_bytes: int
    channel: Optional[MulticastChannel] = None
    emitted_upto: int = 0
    bitmaps: dict = field(default_factory=dict)   # ue -> np.ndarray[bool]
    synced: dict = field(default_factory=dict)
    completion: dict = field(default_factory=dict)
    paths: dict = field(default_factory=dict)
    session: Optional[Session] = None
    done: bool = False


@dataclass
class RunResult:
    cfg: ScenarioConfig
    report: KpiReport
    logs: list
    traces: dict
    mos_series: dict
    switch_log: list
    merge_stats: dict
    event_log: list
    emission_log: list
    warnings: list
    world: "World" = None


class World:
    def __init__(self, cfg: ScenarioConfig, trace_events: bool = False):
        self.cfg = cfg
        self.sim = Simulator(cfg.seed, trace=trace_events)
        self.horizon = seconds(cfg.duration_s)
        self.seg_ms = seconds(cfg.content.segment_duration_s)
        r = cfg.radio
        self.rcfg = RadioConfig(
            carrier_ghz=r.carrier_ghz, tx_power_dbm=r.tx_power_dbm, bandwidth_mhz=r.bandwidth_mhz,
            n_prb=r.n_prb, element_gain_dbi=r.element_gain_dbi,
            elements_per_txru=r.elements_per_txru, beamwidth_az_deg=r.beamwidth_az_deg,
            beamwidth_el_deg=r.beamwidth_el_deg, downtilt_deg=r.downtilt_deg,
            max_atten_db=r.max_atten_db, bs_noise_figure_db=r.bs_noise_figure_db,
            ue_noise_figure_db=r.ue_noise_figure_db, site_height_m=r.site_height_m,
            ue_height_m=r.ue_height_m, pathloss_exponent=r.pathloss_exponent,
            shadowing_std_db=r.shadowing_std_db,
            shadowing_site_correlation=r.shadowing_site_correlation,
            ring_activity=r.ring_activity, ring_mbsfn_useful=r.ring_mbsfn_useful, layers=r.layers)
        self.cells = hex_site_layout(cfg.topology.isd_m, cfg.topology.interference_ring)
        self.n_cells = sum(1 for c in self.cells if c.simulated)
        self.n_ues = cfg.num_ues
        radius = cfg.topology.area_radius_m or equal_area_radius(cfg.topology.isd_m)
        self.radio = RadioModel(self.rcfg, self.cells, self.n_ues, rng=self.sim.rng("channel"),
                                area_radius_m=radius)
        self.radio.place_uniform(self.sim.rng("mobility"), r.ue_speed_kmph)
        self.table = default_table()
        self.mc_mcs = self.table[cfg.multicast_mcs]
        self.sched = CellScheduler(self.n_cells, self.horizon, r.n_prb, cfg.multicast.broadcast_share)
        m = cfg.multilink
        self.mlcfg = MlConfig(m.sinr_threshold_db, m.hysteresis_margin_db, m.reorder_window,
                              m.repair_timeout_ms, m.repair_enabled)
        c = cfg.client
        self.ccfg = ClientConfig(initial_buffer_target_s=c.initial_buffer_target_s,
                                 max_buffer_s=c.max_buffer_s, quit_timer_s=c.quit_timer_s,
                                 throughput_ema_alpha=c.throughput_ema_alpha,
                                 request_delay_ms=c.request_delay_ms)
        self.jitter_ms = c.request_jitter_ms
        self.jitter_rng = self.sim.rng("arrival-jitter")
        self.qcfg = QoeConfig(cfg.qoe.window_segments)
        md = cfg.mood
        self.mood = MoodController(MoodConfig(md.activate_threshold, md.deactivate_threshold,
                                              seconds(md.evaluation_interval_s),
                                              seconds(md.switch_latency_s)))
        self.emission_log: list[tuple[int, str, Optional[int], int, int]] = []
        self.injected_losses: list = []
        self.ml_log: list[tuple[int, int, bool]] = []
        self.repair_log: list[tuple[int, int, int, int]] = []
        self._tick_ev = None
        self._last_tick = -1
        self.alert: Optional[AlertState] = None
        self._sid = 0

        non_capable = set(cfg.alert.non_capable_ues) if cfg.workload == "alert" else set()
        self.agents = [UeAgent(self, u, u not in non_capable) for u in range(self.n_ues)]
        self._apply_overrides()
        self.radio.update()
        self.contents: list[Content] = []
        self._build_workload()
        self._refresh_links(0)

    # --- setup --------------------------------------------------------------------
    def _apply_overrides(self) -> None:
        for o in self.cfg.ue_overrides:
            if o.x_m is not None or o.y_m is not None:
                self.radio.set_position(o.ue, o.x_m if o.x_m is not None else self.radio.x[o.ue],
                                        o.y_m if o.y_m is not None else self.radio.y[o.ue])
            if o.speed_kmph is not None:
                self.radio.speed_mps[o.ue] = o.speed_kmph / 3.6
            if o.drop_multicast_seqs:
                self.agents[o.ue].drop_seqs["live"] = list(o.drop_multicast_seqs)
            for step in o.sinr_script:
                self.sim.schedule(seconds(step.time_s), EventKind.MOBILITY_STEP, self._on_script,
                                  (o.ue, step.sinr_unicast_db, step.sinr_mbsfn_db))
        if self.cfg.workload == "alert":
            for u in self.cfg.alert.edge_ues:
                self._pin_edge(u)

    def _pin_edge(self, ue: int) -> None:
        """Park the UE on the area boundary where its multicast SINR is worst."""
        ang = np.radians(np.arange(0.0, 360.0, 1.0))
        rad = self.radio.area_radius_m
        xs, ys = rad * np.cos(ang), rad * np.sin(ang)
        sh = np.repeat(self.radio.shadowing_db[ue:ue + 1, self.radio.csite], len(ang), axis=0)
        q = self.radio.sinr_from_rx(self.radio.rx_power_dbm(xs, ys, sh))
        i = int(np.argmin(q.sinr_mbsfn_db))
        self.radio.set_position(ue, float(xs[i]), float(ys[i]))
        self.radio.speed_mps[ue] = 0.0

    def _ladder(self) -> list[Rung]:
        ct = self.cfg.content
        return [Rung(b, l) for b, l in zip(ct.ladder_bps, ct.ladder_labels)]

    def _build_workload(self) -> None:
        cfg = self.cfg
        sim = self.sim
        if cfg.workload == "alert":
            sim.schedule(seconds(cfg.alert.trigger_s), EventKind.ALERT_TRIGGER, self._on_alert)
        elif cfg.workload == "objects":
            objs = [MediaObject(o.object_id, o.bitrate_bps, Popularity(o.popularity))
                    for o in cfg.objects.objects]
            modes = assign_object_modes(objs, cfg.objects.heavy_threshold_bps, audience=self.n_ues)
            self.object_modes = modes
            for o in objs:
                content = Content(o.object_id, [Rung(o.bitrate_bps, o.object_id)], self.seg_ms)
                content.multicast = modes[o.object_id] is DeliveryMode.MULTICAST
                self.contents.append(content)
                for a in self.agents:
                    tr = Track(a, content, adaptive=False)
                    a.tracks.append(tr)
                    content.tracks.append(tr)
        else:
            content = Content("live", self._ladder(), self.seg_ms, mood=cfg.delivery == "mood")
            content.multicast = cfg.delivery == "multicast"
            self.contents.append(content)
            for a in self.agents:
                tr = Track(a, content, adaptive=True)
                a.tracks.append(tr)
                content.tracks.append(tr)
        for content in self.contents:
            if content.multicast:
                self._start_session(content, 0)
            sim.schedule(content.avail(0), EventKind.SEGMENT_ENQUEUE, self._on_available, (content, 0))
        if self.contents:
            if cfg.audience_script:
                for step in cfg.audience_script:
                    sim.schedule(seconds(step.time_s), EventKind.CLIENT_TICK, self._on_audience,
                                 step.audience)
            else:
                sim.schedule(0, EventKind.CLIENT_TICK, self._on_audience, self.n_ues)
            if cfg.delivery == "mood":
                iv = self.mood.cfg.evaluation_interval
                sim.schedule(iv // 2, EventKind.MOOD_EVALUATE, self._on_mood_eval)
        step = cfg.radio.mobility_step_ms
        sim.schedule(step, EventKind.MOBILITY_STEP, self._on_mobility)

    # --- radio helpers ------------------------------------------------------------------
    def mc_decodable(self, ue: int, mcs=None) -> bool:
        mcs = mcs or self.mc_mcs
        return bool(self.radio.quality.sinr_mbsfn_db[ue] >= mcs.min_sinr_db)

    def _refresh_links(self, now: int) -> None:
        q = self.radio.quality
        layers = self.rcfg.layers
        for a in self.agents:
            f = a.flow
            cell = int(q.serving[a.ue])
            if f.cell < 0:
                f.cell = cell
            else:
                self.sched.move(f, cell)
            f.bits_per_prb = rate_bits_per_prb(float(q.sinr_unicast_db[a.ue]), table=self.table,
                                               layers=layers)
            if f.backlog_bits > 0:
                self.sched.activate(f)
        for content in self.contents:
            for sess in content.sessions:
                if not sess.rx:
                    continue
                for rx in list(sess.rx.values()):
                    dec = self.mc_decodable(rx.ue, content.channel.mcs)
                    if dec and not rx.decodable:
                        sess.eager.add(rx.ue)
                    rx.decodable = dec
                    if self.cfg.multilink.enabled and sess.open:
                        on = ml_decide(float(q.sinr_mbsfn_db[rx.ue]), rx.dup, self.mlcfg)
                        if on != rx.dup:
                            self._set_dup(rx, on, now)
        if self.alert is not None and not self.alert.done:
            ch = self.alert.channel
            self.alert_decodable = {u: self.mc_decodable(u, ch.mcs) for u in self.alert.bitmaps}
        if self.sched.busy():
            self._wake()

    def _sync_all(self, now: int) -> None:
        for content in self.contents:
            for sess in content.sessions:
                for rx in list(sess.rx.values()):
                    rx.sync(now)
        if self.alert is not None:
            self._alert_sync(now)

    def _on_mobility(self, ev) -> None:
        now = ev.fire_at
        self._sync_all(now)
        self.radio.mobility_step(self.cfg.radio.mobility_step_ms / 1000.0)
        self._refresh_links(now)
        nxt = now + self.cfg.radio.mobility_step_ms
        if nxt <= self.horizon:
            self.sim.schedule(nxt, EventKind.MOBILITY_STEP, self._on_mobility)

    def _on_script(self, ev) -> None:
        now = ev.fire_at
        ue, uni, mb = ev.payload
        self._sync_all(now)
        self.radio.sinr_override[ue] = (uni, mb)
        self.radio.update()
        self._refresh_links(now)

    # --- scheduler --------------------------------------------------------------------
    def _wake(self) -> None:
        if self._tick_ev is None:
            t = max(self.sim.now(), self._last_tick + 1)
            if t < self.horizon:
                self._tick_ev = self.sim.schedule(t, EventKind.SCHEDULER_TTI, self._on_tick)

    def _on_tick(self, ev) -> None:
        self._tick_ev = None
        now = ev.fire_at
        self._last_tick = now
        self.sched.schedule_tti(now)
        if self.sched.busy():
            self._wake()

    def push_unicast(self, agent: UeAgent, burst: Burst, front: bool = False) -> None:
        agent.flow.push(burst, front=front)
        self.sched.activate(agent.flow)
        self._wake()

    # --- multicast sessions -----------------------------------------------------------------
    def _start_session(self, content: Content, now: int) -> McSession:
        if content.channel is None:
            content.channel = MulticastChannel(content.cid, self.mc_mcs, content.top_bps,
                                               self.rcfg.layers)
        sess = McSession(content, self._sid)
        self._sid += 1
        content.session = sess
        content.sessions.append(sess)
        self.sched.reserve(content.channel, now)
        for tr in content.tracks:
            a = tr.agent
            if a.active and not a.stopped and a.capable:
                self._subscribe(a, tr, sess, now)
        return sess

    def _subscribe(self, agent: UeAgent, track: Track, sess: McSession, now: int) -> McRx:
        rx = McRx(self, agent, sess, track, sess.session.next_seq)
        sess.rx[agent.ue] = rx
        sess.all_rx.append(rx)
        sess.session.subscribe(agent.ue)
        if self.cfg.multilink.enabled:
            on = ml_decide(float(self.radio.quality.sinr_mbsfn_db[agent.ue]), False, self.mlcfg)
            if on:
                self._set_dup(rx, True, now)
        return rx

    def _stop_session(self, content: Content, now: int) -> None:
        sess = content.session
        if sess is None:
            return
        sess.open = False
        content.session = None
        if content.channel.backlog_bits <= 0:
            self.sched.release(content.channel, now)

    def _set_dup(self, rx: McRx, on: bool, now: int) -> None:
        rx.dup = on
        self.ml_log.append((now, rx.ue, on))
        if not on:
            return
        # copy what the multicast bearer has not emitted yet
        for b in list(rx.sess.content.channel.queue):
            sess, seg = b.ctx
            if sess is not rx.sess:
                continue
            lo = b.lo + b.released
            if lo < b.hi:
                self._push_dup(rx, seg, lo, b.hi, now)

    def _push_dup(self, rx: McRx, seg: Segment, lo: int, hi: int, now: int) -> None:
        burst = make_burst(LinkTag.UNICAST_DUPLICATE, seg, lo, hi, rx.on_unicast)
        rx.dup_bits += burst.total_bits
        if self.sim.trace:
            self.emission_log.append((now, LinkTag.UNICAST_DUPLICATE.value, rx.ue, lo, hi))
        self.push_unicast(rx.agent, burst)

    def request_repair(self, rx: McRx, lo: int, hi: int, now: int) -> None:
        self.repair_log.append((now, rx.ue, lo, hi))
        self.sim.schedule(now + self.ccfg.request_delay_ms, EventKind.PACKET_ARRIVAL,
                          self._on_repair_request, (rx, lo, hi))

    def _on_repair_request(self, ev) -> None:
        rx, lo, hi = ev.payload
        if rx.agent.stopped:
            return
        for seg, a, b in rx.sess.segment_range(lo, hi):
            self.push_unicast(rx.agent, make_burst(LinkTag.UNICAST_REPAIR, seg, a, b, rx.on_unicast),
                              front=True)

    def _mc_emit(self, burst: Burst, lo: int, hi: int, now: int) -> None:
        sess, seg = burst.ctx
        sess.emitted_upto = hi
        if sess.eager:
            for ue in list(sess.eager):
                rx = sess.rx.get(ue)
                if rx is not None:
                    rx.sync(now)
        if hi == burst.hi:
            if self.sim.trace:
                self.emission_log.append((now, LinkTag.MULTICAST.value, None, burst.lo, burst.hi))
            for rx in list(sess.rx.values()):
                rx.sync(now)
            ch = sess.content.channel
            if sess.content.session is None and len(ch.queue) == 0 and ch.active:
                self.sched.release(ch, now)

    # --- content timeline ---------------------------------------------------------------------
    def _on_available(self, ev) -> None:
        content, k = ev.payload
        now = ev.fire_at
        if content.mood:
            cmd = self.mood.matured(content.cid, now)
            if cmd is not None:
                rec = self.mood.apply_switch(cmd, now)
                if rec.to_mode is Mode.MULTICAST:
                    self._start_session(content, now)
                else:
                    self._stop_session(content, now)
                for tr in content.tracks:
                    if tr.agent.active and not tr.agent.stopped:
                        tr.agent.trace(now, "switch", tr.abr.current_rung)
        content.next_k = k + 1
        sess = content.session
        if sess is not None:
            size = segment_bytes(content.top_bps, self.seg_ms / 1000.0)
            seg = sess.session.enqueue_segment(Segment(content.cid, k, content.top_bps, size),
                                               self.cfg.content.payload_bytes)
            content.path[k] = sess
            sess.seg_by_k[k] = seg
            lo, hi = seg.first_seq, seg.first_seq + seg.n_packets
            flagged = [ue for ue, rx in sess.rx.items() if rx.dup]
            for em in gw_process(lo, hi, flagged):
                if em.ue is None:
                    content.channel.push(make_burst(LinkTag.MULTICAST, seg, lo, hi, self._mc_emit,
                                                    ctx=(sess, seg)))
                else:
                    self._push_dup(sess.rx[em.ue], seg, em.lo, em.hi, now)
            for rx in sess.rx.values():
                rx.agent.source_bits += seg.bits
            self._wake()
        else:
            content.path[k] = None
        for tr in content.tracks:
            self.try_fetch(tr, now)
        nxt = content.avail(k + 1)
        if nxt < self.horizon:
            self.sim.schedule(nxt, EventKind.SEGMENT_ENQUEUE, self._on_available, (content, k + 1))

    # --- audience / clients -------------------------------------------------------------------
    def _on_audience(self, ev) -> None:
        now = ev.fire_at
        target = ev.payload
        for a in self.agents:
            if a.quit:
                continue
            if a.ue < target and not a.active and a.left_at is None:
                self._join(a, now)
            elif a.ue >= target and a.active:
                self._leave(a, now)

    def _start_position(self, content: Content, now: int) -> int:
        if content.session is not None:
            return content.next_k
        back = math.ceil(self.ccfg.initial_buffer_target_s * 1000 / content.seg_ms)
        return max(0, content.live_edge(now) - back + 1)

    def _join(self, a: UeAgent, now: int) -> None:
        a.active = True
        a.joined_at = now
        start = max(self._start_position(t.content, now) for t in a.tracks)
        for tr in a.tracks:
            tr.next_fetch = start
            sess = tr.content.session
            if sess is not None and a.capable:
                self._subscribe(a, tr, sess, now)
        a.player = Player(start, self.seg_ms, self.ccfg.initial_buffer_target_s, a.ready, a.lost,
                          a.bitrate_of, on_trace=lambda t, ev, p, a=a: self._player_trace(a, t, ev))
        self.sim.schedule(now, EventKind.CLIENT_TICK, self._on_client_tick, a)
        for tr in a.tracks:
            self.try_fetch(tr, now)

    def _detach(self, a: UeAgent, now: int) -> None:
        a.active = False
        a.stopped = True
        a.flow.clear()
        for tr in a.tracks:
            tr.inflight = None
            for sess in tr.content.sessions:
                if a.ue in sess.rx:
                    sess.rx[a.ue].sync(now)
                    del sess.rx[a.ue]
                    sess.eager.discard(a.ue)
                    sess.session.unsubscribe(a.ue)
            self.mood.withdraw(a.ue, tr.content.cid)
        if a.player is not None:
            a.player.stop(now)
        if a.play_ev is not None:
            a.play_ev.cancel()

    def _leave(self, a: UeAgent, now: int) -> None:
        a.left_at = now
        self._detach(a, now)

    def _quit(self, a: UeAgent, now: int) -> None:
        if a.quit:
            return
        a.trace(now, "quit", a.tracks[0].abr.current_rung if a.tracks else 0)
        a.quit = True
        a.quit_at = now
        if a.player is not None:
            a.player.record.quit = True
            a.player.record.quit_at = now
        self._detach(a, now)

    def poke(self, a: UeAgent, now: int) -> None:
        if a.stopped or a.player is None:
            return
        end = a.player.poke(now)
        if end is not None:
            self._schedule_play_end(a, end)

    def _player_trace(self, a: UeAgent, now: int, event: str) -> None:
        if event != "play":
            a.trace(now, event, self._rung_now(a))

    def _rung_now(self, a: UeAgent) -> int:
        return a.tracks[0].abr.current_rung if a.tracks else 0

    def _schedule_play_end(self, a: UeAgent, end: int) -> None:
        a.play_ev = self.sim.schedule(end, EventKind.CLIENT_TICK, self._on_play_end, a)

    def _on_play_end(self, ev) -> None:
        a = ev.payload
        if a.stopped:
            return
        now = ev.fire_at
        end = a.player.segment_end(now)
        if end is not None:
            self._schedule_play_end(a, end)
        for tr in a.tracks:
            self.try_fetch(tr, now)

    def _on_client_tick(self, ev) -> None:
        a = ev.payload
        if a.stopped:
            return
        now = ev.fire_at
        for tr in a.tracks:
            self.mood.report(a.ue, tr.content.cid, now)
        self._sample_mos(a, now)
        pl = a.player
        if (self.cfg.multilink.enabled and a.capable and any(t.content.session for t in a.tracks)
                and pl.state is PlayerState.STALLED
                and pl.stalled_for_ms(now) >= seconds(self.ccfg.quit_timer_s)):
            self._quit(a, now)
            return
        nxt = now + self.seg_ms
        if nxt <= self.horizon:
            self.sim.schedule(nxt, EventKind.CLIENT_TICK, self._on_client_tick, a)

    def _sample_mos(self, a: UeAgent, now: int) -> None:
        pl = a.player
        if pl.state is PlayerState.WAITING:
            grace = seconds(self.ccfg.initial_buffer_target_s) + 2 * self.seg_ms
            if now - a.joined_at > grace:
                a.mos_samples.append((now, 1.0))
            return
        cur = pl.position
        lo = max(pl.start_position, cur - self.qcfg.window_segments + 1)
        entries = []
        for p in range(lo, cur + 1):
            r = pl.record.positions.get(p)
            if r is None:
                entries.append(WindowEntry(None, 0, 0.0))
                continue
            stall_ms = r.stall_ms
            if p == cur:
                stall_ms += pl.current_stall_ms(now)
            entries.append(WindowEntry(r.bitrate_bps if r.played_at is not None else None,
                                       r.episodes, stall_ms / 1000.0))
        a.mos_samples.append((now, mos(entries, a.top_bps, self.qcfg)))

    # --- unicast fetching -----------------------------------------------------------------------
    def try_fetch(self, tr: Track, now: int) -> None:
        a = tr.agent
        if not a.active or a.stopped or tr.inflight is not None or a.player is None:
            return
        content = tr.content
        k = tr.next_fetch
        while k < content.next_k:
            if content.path.get(k) is not None or k in tr.complete:
                k += 1
                continue
            break
        tr.next_fetch = k
        if k >= content.next_k:
            return
        if a.player.buffer_s(now) + content.seg_ms / 1000.0 > self.ccfg.max_buffer_s:
            return
        self._start_download(tr, k, now, first=now)

    def _pick_rung(self, tr: Track, now: int) -> int:
        if not tr.adaptive:
            return 0
        tr.abr.buffer_s = tr.agent.buffer_s(now)
        return select_bitrate(tr.abr, tr.content.ladder)

    def _start_download(self, tr: Track, k: int, now: int, first: int, rung: Optional[int] = None) -> None:
        if rung is None:
            rung = self._pick_rung(tr, now)
        tr.abr.current_rung = rung
        bitrate = tr.content.ladder[rung].bits_per_s
        dl = Download(k, rung, bitrate, tr.content.seg_ms, now, first)
        tr.inflight = dl
        tr.agent.trace(now, "segment_start", rung)
        self.sim.schedule(now + self._request_delay(), EventKind.PACKET_ARRIVAL,
                          self._on_request, (tr, dl))
        step = seconds(self.ccfg.cancel_check_interval_s)
        self.sim.schedule(now + step, EventKind.CLIENT_TICK, self._on_cancel_check, (tr, dl))
        if first == now:
            quit_at = now + seconds(self.ccfg.quit_timer_s)
            self.sim.schedule(quit_at, EventKind.CLIENT_TICK, self._on_quit_check, (tr, k))

    def _request_delay(self) -> int:
        if self.jitter_ms <= 0:
            return self.ccfg.request_delay_ms
        return self.ccfg.request_delay_ms + int(self.jitter_rng.integers(0, self.jitter_ms + 1))

    def _on_request(self, ev) -> None:
        tr, dl = ev.payload
        if tr.inflight is not dl or tr.agent.stopped:
            return
        n = packet_count(dl.bits // 8, self.cfg.content.payload_bytes)
        dl.burst = Burst(LinkTag.UNICAST_PRIMARY, 0, n, dl.bits // 8, self._on_download, ctx=(tr, dl))
        self.push_unicast(tr.agent, dl.burst)

    def _on_download(self, burst: Burst, lo: int, hi: int, now: int) -> None:
        tr, dl = burst.ctx
        if tr.inflight is not dl or hi < burst.hi:
            return
        dl.done = True
        tr.inflight = None
        secs = max(now - dl.requested_at, 1) / 1000.0
        tr.abr.observe(dl.bits / secs, self.ccfg.throughput_ema_alpha)
        tr.agent.source_bits += dl.bits
        tr.next_fetch = dl.k + 1
        tr.segment_complete(dl.k, dl.bitrate, now, via="unicast")
        self.poke(tr.agent, now)
        self.try_fetch(tr, now)

    def _progress(self, dl: Download) -> float:
        return dl.burst.done_bits if dl.burst is not None else 0.0

    def _on_cancel_check(self, ev) -> None:
        tr, dl = ev.payload
        if tr.inflight is not dl or tr.agent.stopped:
            return
        now = ev.fire_at
        step_s = self.ccfg.cancel_check_interval_s
        done = self._progress(dl)
        dl.goodput = (done - dl.last_done) / step_s
        dl.last_done = done
        pl = tr.agent.player
        if (tr.adaptive and pl.state is PlayerState.PLAYING and dl.k not in tr.cancel_time):
            remaining = dl.bits - done
            if maybe_cancel(remaining, dl.goodput, pl.buffer_s(now), dl.rung) is CancelDecision.CANCEL:
                self._cancel(tr, dl, now)
                return
        self.sim.schedule(now + seconds(step_s), EventKind.CLIENT_TICK, self._on_cancel_check, (tr, dl))

    def _cancel(self, tr: Track, dl: Download, now: int) -> None:
        a = tr.agent
        if dl.burst is not None:
            a.flow.remove(lambda b: b is dl.burst)
        tr.inflight = None
        tr.cancel_time[dl.k] = now
        a.trace(now, "cancel", dl.rung)
        tr.abr.observe(dl.goodput or 0.0, self.ccfg.throughput_ema_alpha)
        rung = min(self._pick_rung(tr, now), dl.rung - 1)
        self._start_download(tr, dl.k, now, first=dl.first_requested_at, rung=max(rung, 0))

    def _on_quit_check(self, ev) -> None:
        tr, k = ev.payload
        dl = tr.inflight
        a = tr.agent
        if a.stopped or dl is None or dl.k != k:
            return
        now = ev.fire_at
        done = self._progress(dl)
        goodput = dl.goodput if dl.goodput is not None else 0.0
        remaining = dl.bits - done
        buf = a.buffer_s(now)
        will_miss = goodput <= 0 or remaining / goodput > buf
        cancel_at = tr.cancel_time.get(k)
        last_cancel_age = None if cancel_at is None else (now - cancel_at) / 1000.0
        decision = check_quit((now - dl.first_requested_at) / 1000.0, last_cancel_age, will_miss,
                              self.ccfg.quit_timer_s, lowest_rung=dl.rung == 0)
        if decision is QuitDecision.QUIT:
            self._quit(a, now)

    # --- MooD ---------------------------------------------------------------------------------
    def _on_mood_eval(self, ev) -> None:
        now = ev.fire_at
        for content in self.contents:
            if content.mood:
                self.mood.evaluate(content.cid, now)
        nxt = now + self.mood.cfg.evaluation_interval
        if nxt <= self.horizon:
            self.sim.schedule(nxt, EventKind.MOOD_EVALUATE, self._on_mood_eval)

    # --- public warning -----------------------------------------------------------------------
    def _on_alert(self, ev) -> None:
        now = ev.fire_at
        al = self.cfg.alert
        payload = self.cfg.content.payload_bytes
        n = packet_count(al.size_bytes, payload)
        st = self.alert = AlertState(n, al.size_bytes)
        mcs = self.table[al.mcs]
        st.channel = MulticastChannel("alert", mcs, al.bitrate_bps, self.rcfg.layers)
        st.session = Session("alert", DeliveryMode.MULTICAST)
        self.sched.reserve(st.channel, now)
        for r in range(al.carousel_rounds):
            seg = st.session.enqueue_segment(Segment("alert", r, al.bitrate_bps, al.size_bytes), payload)
            st.channel.push(make_burst(LinkTag.MULTICAST, seg, seg.first_seq,
                                       seg.first_seq + seg.n_packets, self._alert_emit, ctx=seg))
        for a in self.agents:
            a.active = True
            if a.capable:
                st.bitmaps[a.ue] = np.zeros(n, dtype=bool)
                st.synced[a.ue] = 0
                a.source_bits += al.size_bytes * 8
            else:
                self.sim.schedule(now + self.ccfg.request_delay_ms, EventKind.PACKET_ARRIVAL,
                                  self._on_alert_unicast, a)
        self.alert_decodable = {u: self.mc_decodable(u, mcs) for u in st.bitmaps}
        self.alert_trigger_at = now
        self._wake()

    def _on_alert_unicast(self, ev) -> None:
        a = ev.payload
        st = self.alert
        seg = Segment("alert-uc", 0, 0, st.size_bytes, 0, st.n_packets)
        self.push_unicast(a, make_burst(LinkTag.UNICAST_PRIMARY, seg, 0, st.n_packets,
                                        self._alert_unicast_done, ctx=a))

    def _alert_unicast_done(self, burst: Burst, lo: int, hi: int, now: int) -> None:
        a = burst.ctx
        if hi == burst.hi:
            self.alert.completion[a.ue] = now
            self.alert.paths[a.ue] = "unicast"
            a.source_bits += self.alert.size_bytes * 8

    def _alert_emit(self, burst: Burst, lo: int, hi: int, now: int) -> None:
        st = self.alert
        st.emitted_upto = hi
        if hi == burst.hi:
            self._alert_sync(now)
            if len(st.channel.queue) == 0:
                st.done = True
                self.sched.release(st.channel, now)
                if self.cfg.alert.unicast_file_repair:
                    self._alert_repair(now)

    def _alert_sync(self, now: int) -> None:
        st = self.alert
        n = st.n_packets
        for ue, bm in st.bitmaps.items():
            lo = st.synced[ue]
            hi = st.emitted_upto
            if hi <= lo:
                continue
            st.synced[ue] = hi
            if ue in st.completion or not self.alert_decodable.get(ue, False):
                continue
            while lo < hi:
                base = (lo // n) * n
                top = min(hi, base + n)
                bm[lo - base:top - base] = True
                lo = top
            if bm.all():
                st.completion[ue] = now
                st.paths[ue] = "multicast"

    def _alert_repair(self, now: int) -> None:
        st = self.alert
        seg = Segment("alert", 0, 0, st.size_bytes, 0, st.n_packets)
        for ue, bm in st.bitmaps.items():
            if ue in st.completion:
                continue
            st.paths[ue] = "multicast+unicast-repair" if bm.any() else "unicast-repair"
            missing = np.flatnonzero(~bm)
            runs = np.split(missing, np.flatnonzero(np.diff(missing) != 1) + 1)
            a = self.agents[ue]
            for run in runs:
                lo, hi = int(run[0]), int(run[-1]) + 1
                b = make_burst(LinkTag.UNICAST_REPAIR, seg, lo, hi, self._alert_repaired, ctx=a)
                self.sim.schedule(now + self.ccfg.request_delay_ms, EventKind.PACKET_ARRIVAL,
                                  lambda ev, a=a, b=b: self.push_unicast(a, b))

    def _alert_repaired(self, burst: Burst, lo: int, hi: int, now: int) -> None:
        st = self.alert
        ue = burst.ctx.ue
        bm = st.bitmaps[ue]
        bm[lo:hi] = True
        if ue not in st.completion and bm.all():
            st.completion[ue] = now

    # --- run ------------------------------------------------------------------------------------
    def run(self) -> RunResult:
        self.sim.run_until(self.horizon)
        now = self.horizon
        self.sched.finish(now)
        return self._collect(now)

    def _collect(self, now: int) -> RunResult:
        cfg = self.cfg
        warm = seconds(cfg.qoe.warmup_s)
        per_ue: dict[int, Optional[float]] = {}
        series: dict[int, list] = {}
        for a in self.agents:
            series[a.ue] = list(a.mos_samples)
            if a.quit:
                per_ue[a.ue] = 1.0
                continue
            if a.joined_at is None or cfg.workload == "alert":
                continue
            after = [m for t, m in a.mos_samples if t >= a.joined_at + warm]
            vals = after or [m for _, m in a.mos_samples]
            per_ue[a.ue] = float(np.mean(vals)) if vals else None
        scored = [v for v in per_ue.values() if v is not None]
        report = KpiReport(preset=cfg.preset, seed=cfg.seed, duration_s=cfg.duration_s,
                           num_ues=self.n_ues)
        report.bandwidth_hz = self.n_cells * self.rcfg.bandwidth_hz
        report.source_bits = float(sum(a.source_bits for a in self.agents))
        try:
            cons = consumption_of_logs(self.sched.logs)
            report.avg_resource_consumption = cons
            report.al_se_bits_per_s_per_hz = al_se(report.source_bits, cfg.duration_s,
                                                   report.bandwidth_hz, cons)
        except KpiUndefined:
            pass
        if scored:
            report.per_ue_mos = {u: v for u, v in per_ue.items() if v is not None}
            report.mean_mos = float(np.mean(scored))
            report.fraction_max_mos = fraction_at_max(scored)
            report.qoe_cdf = qoe_cdf(scored)
        report.quit_ues = [a.ue for a in self.agents if a.quit]
        report.stalls_total = sum(len(a.player.record.stalls) for a in self.agents if a.player)
        report.switches = len(self.mood.log)
        report.warnings = list(self.sched.warnings)
        if self.alert is not None:
            st = self.alert
            report.reached = {u: u in st.completion and st.completion[u] <= now
                              for u in range(self.n_ues)}
            report.alert_paths = {u: st.paths.get(u, "unreached") for u in range(self.n_ues)}
            report.alert_completion_s = {u: (st.completion[u] - self.alert_trigger_at) / 1000.0
                                         for u in sorted(st.completion)}
        report.extra = {
            "multicast_mcs": cfg.multicast_mcs,
            "multicast_prbs": self.contents[0].channel.needed_prbs
            if self.contents and self.contents[0].channel is not None else 0,
            "skipped_segments": sum(a.player.record.skipped for a in self.agents if a.player),
            "repair_requests": len(self.repair_log),
            "ml_transitions": len(self.ml_log),
        }
        merge = {}
        for content in self.contents:
            for sess in content.sessions:
                for rx in sess.all_rx:
                    ue = rx.ue
                    s = merge.setdefault(ue, [0, 0, 0, 0, 0])
                    st_ = rx.mw.stats
                    s[0] += st_.received
                    s[1] += st_.duplicates_discarded
                    s[2] += st_.repaired
                    s[3] += st_.declared_lost
                    s[4] += st_.stale_dropped
        traces = {a.ue: a.trace_rows for a in self.agents}
        return RunResult(cfg, report, self.sched.logs, traces, series, list(self.mood.log), merge,
                         list(self.sim.event_log), list(self.emission_log), list(self.sched.warnings),
                         world=self)


def run(cfg: ScenarioConfig, trace_events: bool = False) -> RunResult:
    return World(cfg, trace_events=trace_events).run()
