"""Scenario configuration: schema, presets and file loading."""
from __future__ import annotations

import copy
from pathlib import Path
from typing import Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

PresetName = Literal["ptp-only", "ptm-only", "ptm-multilink", "mood-demo", "pw-alert", "object-based"]
PRESETS: tuple[str, ...] = ("ptp-only", "ptm-only", "ptm-multilink", "mood-demo", "pw-alert",
                            "object-based")


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_assignment=True)


class TopologyConfig(_Strict):
    isd_m: float = Field(200.0, gt=0)
    ues_per_cell: int = Field(10, ge=0)
    num_simulated_cells: Literal[3] = 3
    interference_ring: bool = True
    area_radius_m: Optional[float] = Field(None, gt=0)  # default: equal-area disc of one site


class RadioSection(_Strict):
    carrier_ghz: float = Field(3.5, gt=0)
    tx_power_dbm: float = 51.0
    bandwidth_mhz: float = Field(100.0, gt=0)
    n_prb: int = Field(273, gt=0)
    element_gain_dbi: float = 5.0
    elements_per_txru: int = Field(8, gt=0)
    beamwidth_az_deg: float = Field(65.0, gt=0)
    beamwidth_el_deg: float = Field(65.0, gt=0)
    downtilt_deg: float = 20.0
    max_atten_db: float = Field(30.0, gt=0)
    bs_noise_figure_db: float = 5.0
    ue_noise_figure_db: float = 9.0
    site_height_m: float = Field(25.0, gt=0)
    ue_height_m: float = Field(1.5, gt=0)
    pathloss_exponent: float = Field(3.76, gt=0)
    shadowing_std_db: float = Field(8.0, ge=0)
    shadowing_site_correlation: float = Field(0.5, ge=0, le=1)
    ring_activity: float = Field(0.1, ge=0, le=1)
    ring_mbsfn_useful: bool = False
    layers: int = Field(4, ge=1, le=8)
    ue_speed_kmph: float = Field(3.0, ge=0)
    mobility_step_ms: int = Field(100, gt=0)


class ContentSection(_Strict):
    ladder_bps: list[int] = [1_000_000, 4_000_000, 8_000_000, 12_000_000, 16_000_000, 20_000_000]
    ladder_labels: list[str] = ["480p", "1080p", "1080p", "2K", "4K", "4K"]
    segment_duration_s: float = Field(1.0, gt=0)
    payload_bytes: int = Field(1500, gt=0)

    @model_validator(mode="after")
    def _ladder(self):
        if not self.ladder_bps or any(b <= 0 for b in self.ladder_bps):
            raise ValueError("ladder_bps must be non-empty and positive")
        if sorted(set(self.ladder_bps)) != list(self.ladder_bps):
            raise ValueError("ladder_bps must be strictly increasing")
        if len(self.ladder_labels) != len(self.ladder_bps):
            raise ValueError("ladder_labels must match ladder_bps")
        return self


class MulticastSection(_Strict):
    mcs: Optional[int] = Field(None, ge=0)  # default: 2 without multi-link, 4 with it
    broadcast_share: float = Field(0.8, gt=0, le=1)


class MoodSection(_Strict):
    activate_threshold: int = Field(2, ge=1)
    deactivate_threshold: int = Field(1, ge=0)
    evaluation_interval_s: float = Field(1.0, gt=0)
    switch_latency_s: float = Field(2.0, ge=0)

    @model_validator(mode="after")
    def _order(self):
        if self.deactivate_threshold >= self.activate_threshold:
            raise ValueError("deactivate_threshold must be below activate_threshold")
        return self


class MultilinkSection(_Strict):
    enabled: bool = False
    sinr_threshold_db: float = 5.0
    hysteresis_margin_db: float = Field(1.0, ge=0)
    reorder_window: int = Field(256, ge=1)
    repair_timeout_ms: int = Field(100, gt=0)
    repair_enabled: bool = False


class ClientSection(_Strict):
    initial_buffer_target_s: float = Field(4.0, gt=0)
    max_buffer_s: float = Field(30.0, gt=0)
    quit_timer_s: Literal[30.0] = 30.0
    throughput_ema_alpha: float = Field(0.1, gt=0, le=1)
    request_delay_ms: int = Field(20, ge=0)
    request_jitter_ms: int = Field(0, ge=0)  # uniform extra delay per request

    @model_validator(mode="after")
    def _bounds(self):
        if self.initial_buffer_target_s > self.max_buffer_s:
            raise ValueError("initial_buffer_target_s must not exceed max_buffer_s")
        return self


class QoeSection(_Strict):
    window_segments: int = Field(15, ge=1)
    warmup_s: float = Field(30.0, ge=0)


class AudienceStep(_Strict):
    time_s: float = Field(ge=0)
    audience: int = Field(ge=0)


class SinrStep(_Strict):
    time_s: float = Field(ge=0)
    sinr_unicast_db: float
    sinr_mbsfn_db: float


class UeOverride(_Strict):
    ue: int = Field(ge=0)
    x_m: Optional[float] = None
    y_m: Optional[float] = None
    speed_kmph: Optional[float] = Field(None, ge=0)
    sinr_script: list[SinrStep] = []
    drop_multicast_seqs: list[int] = []  # scripted single-packet losses on the multicast link


class AlertSection(_Strict):
    size_bytes: int = Field(2_000_000, gt=0)
    trigger_s: float = Field(10.0, ge=0)
    carousel_rounds: int = Field(3, ge=1)
    mcs: int = Field(2, ge=0)
    bitrate_bps: int = Field(20_000_000, gt=0)
    non_capable_ues: list[int] = [0, 1, 2]
    edge_ues: list[int] = [3]
    unicast_file_repair: bool = True


class ObjectSpec(_Strict):
    object_id: str
    bitrate_bps: int = Field(gt=0)
    popularity: Literal["shared", "personalized"] = "shared"


class ObjectsSection(_Strict):
    heavy_threshold_bps: float = Field(1_000_000, ge=0)
    objects: list[ObjectSpec] = [
        ObjectSpec(object_id="video", bitrate_bps=8_000_000),
        ObjectSpec(object_id="audio", bitrate_bps=128_000),
        ObjectSpec(object_id="subtitles", bitrate_bps=16_000),
        ObjectSpec(object_id="icons", bitrate_bps=50_000, popularity="personalized"),
    ]

    @field_validator("objects")
    @classmethod
    def _non_empty(cls, v):
        if not v:
            raise ValueError("at least one object")
        return v


class ScenarioConfig(_Strict):
    preset: PresetName = "ptp-only"
    seed: int = Field(42, ge=0, lt=2 ** 64)
    duration_s: float = Field(300.0, gt=0)
    delivery: Literal["unicast", "multicast", "mood"] = "unicast"
    workload: Literal["stream", "alert", "objects"] = "stream"
    topology: TopologyConfig = TopologyConfig()
    radio: RadioSection = RadioSection()
    content: ContentSection = ContentSection()
    multicast: MulticastSection = MulticastSection()
    mood: MoodSection = MoodSection()
    multilink: MultilinkSection = MultilinkSection()
    client: ClientSection = ClientSection()
    qoe: QoeSection = QoeSection()
    audience_script: list[AudienceStep] = []
    ue_overrides: list[UeOverride] = []
    alert: AlertSection = AlertSection()
    objects: ObjectsSection = ObjectsSection()

    @property
    def num_ues(self) -> int:
        return self.topology.ues_per_cell * self.topology.num_simulated_cells

    @property
    def multicast_mcs(self) -> int:
        if self.multicast.mcs is not None:
            return self.multicast.mcs
        return 4 if self.multilink.enabled else 2

    @model_validator(mode="after")
    def _cross(self):
        for o in self.ue_overrides:
            if o.ue >= self.num_ues:
                raise ValueError(f"ue_overrides: ue {o.ue} out of range (num_ues={self.num_ues})")
        if self.workload == "alert":
            for u in self.alert.non_capable_ues + self.alert.edge_ues:
                if u >= self.num_ues:
                    raise ValueError(f"alert: ue {u} out of range")
        return self


_PRESET_OVERRIDES: dict[str, dict] = {
    "ptp-only": {"delivery": "unicast"},
    "ptm-only": {"delivery": "multicast",
                 "multilink": {"enabled": False, "repair_enabled": False}},
    "ptm-multilink": {"delivery": "multicast",
                      "multilink": {"enabled": True, "repair_enabled": True}},
    "mood-demo": {
        "delivery": "mood",
        "duration_s": 120.0,
        "topology": {"ues_per_cell": 2, "area_radius_m": 60.0},
        "audience_script": [
            {"time_s": 0.0, "audience": 1},
            {"time_s": 20.0, "audience": 2},
            {"time_s": 30.0, "audience": 3},
            {"time_s": 40.0, "audience": 4},
            {"time_s": 50.0, "audience": 6},
            {"time_s": 80.0, "audience": 1},
        ],
    },
    "pw-alert": {"delivery": "multicast", "workload": "alert", "duration_s": 60.0},
    "object-based": {"delivery": "multicast", "workload": "objects"},
}


def _deep_merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def preset_dict(name: str) -> dict:
    if name not in _PRESET_OVERRIDES:
        raise KeyError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    return _deep_merge({"preset": name}, _PRESET_OVERRIDES[name])


def resolve(overrides: dict) -> ScenarioConfig:
    """Preset defaults first, then the caller's keys on top."""
    if not isinstance(overrides, dict):
        raise ValueError("config must be a mapping")
    name = overrides.get("preset", "ptp-only")
    merged = _deep_merge(preset_dict(name) if name in _PRESET_OVERRIDES else {"preset": name},
                         overrides)
    return ScenarioConfig.model_validate(merged)


def preset_config(name: str, **overrides) -> ScenarioConfig:
    return resolve({"preset": name, **overrides})


def load_config(path) -> ScenarioConfig:
    text = Path(path).read_text()
    data = yaml.safe_load(text) or {}
    return resolve(data)


def dump_config(cfg: ScenarioConfig) -> str:
    return yaml.safe_dump(cfg.model_dump(mode="json"), sort_keys=True)


PRESET_SUMMARIES = {
    "ptp-only": "every UE streams its own adaptive unicast copy",
    "ptm-only": "one 20 Mbps multicast stream at MCS 2, no repair",
    "ptm-multilink": "multicast at MCS 4 with unicast duplication below 5 dB and repair",
    "mood-demo": "scripted audience drives unicast/multicast switching",
    "pw-alert": "warning file over a multicast carousel with unicast fallback",
    "object-based": "shared heavy objects over multicast, the rest over unicast",
}
