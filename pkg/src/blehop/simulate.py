"""Ground-truth connection timelines and the sniffer's impaired view of them.

A scenario is a set of concurrent connections plus one sniffed channel.
For every connection the simulator lays out connection events at

    t_n = start_offset + n * interval * (1 + drift_ppm * 1e-6)

computes each event's channel from the hop algorithm, and emits an
observation whenever that channel equals the sniffed channel, subject to a
per-packet miss probability and Gaussian timestamp jitter. The unimpaired
event list is returned as the ground-truth timeline; the merged, impaired
observations form the sniffer trace.

Simulation is pure given the scenario seed: each connection draws from a
child generator derived from (seed, access_address), so a connection's
observations do not depend on what else shares the scenario.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .csa import (
    COUNTER_PERIOD,
    NUM_DATA_CHANNELS,
    ChannelMap,
    ConnectionParams,
    CsaVersion,
    channel_sequence,
)
from .errors import ConfigError
from .trace import Observation, SniffTrace

MAX_DRIFT_PPM = 500.0


@dataclass(frozen=True)
class ImpairmentModel:
    """Sniffer-side imperfections applied to one connection's events.

    ``duration_ns`` is how long the connection is simulated (from its start
    offset). Jitter is the per-observation Gaussian timestamp error, drift
    the connection clock's constant frequency offset relative to the
    sniffer clock, and ``miss_probability`` the chance that a packet on the
    sniffed channel is not captured.
    """

    duration_ns: int
    jitter_sigma_ns: float = 0.0
    clock_drift_ppm: float = 0.0
    miss_probability: float = 0.0

    def __post_init__(self):
        if self.duration_ns < 0:
            raise ConfigError(f"duration_ns must be >= 0, got {self.duration_ns}")
        if self.jitter_sigma_ns < 0:
            raise ConfigError(f"jitter_sigma_ns must be >= 0, got {self.jitter_sigma_ns}")
        if abs(self.clock_drift_ppm) > MAX_DRIFT_PPM:
            raise ConfigError(
                f"|clock_drift_ppm| must be <= {MAX_DRIFT_PPM}, got {self.clock_drift_ppm}"
            )
        if not 0.0 <= self.miss_probability < 1.0:
            raise ConfigError(
                f"miss_probability must be in [0, 1), got {self.miss_probability}"
            )


@dataclass(frozen=True)
class ConnectionScenario:
    """One connection inside a scenario: parameters, placement, impairments."""

    params: ConnectionParams
    impairments: ImpairmentModel
    start_offset_ns: int = 0
    initial_counter: int = 0

    def __post_init__(self):
        if self.start_offset_ns < 0:
            raise ConfigError("start_offset_ns must be >= 0")
        if not 0 <= self.initial_counter < COUNTER_PERIOD:
            raise ConfigError(
                f"initial_counter must be in 0..65535, got {self.initial_counter}"
            )


@dataclass(frozen=True)
class ScenarioConfig:
    connections: tuple
    sniff_channel: int
    rng_seed: int

    def __post_init__(self):
        object.__setattr__(self, "connections", tuple(self.connections))
        if not 0 <= self.sniff_channel < NUM_DATA_CHANNELS:
            raise ConfigError(f"sniff_channel must be in 0..36, got {self.sniff_channel}")
        if not 0 <= self.rng_seed < 2**63:
            raise ConfigError("rng_seed must be a non-negative 63-bit integer")
        addresses = [c.params.access_address for c in self.connections]
        if len(addresses) != len(set(addresses)):
            raise ConfigError("connections must have distinct access addresses")

    @classmethod
    def from_json(cls, source):
        """Load a scenario from a JSON file/stream (durations in microseconds)."""
        if isinstance(source, (str, Path)):
            with open(source) as handle:
                raw = json.load(handle)
        else:
            raw = json.load(source)
        return cls.from_dict(raw)

    @classmethod
    def from_dict(cls, raw):
        try:
            connections = tuple(
                _connection_from_dict(entry) for entry in raw.get("connections", [])
            )
            return cls(
                connections=connections,
                sniff_channel=int(raw["sniff_channel"]),
                rng_seed=int(raw["rng_seed"]),
            )
        except KeyError as exc:
            raise ConfigError(f"scenario is missing required key {exc}") from exc
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad scenario value: {exc}") from exc

    def to_dict(self):
        return {
            "sniff_channel": self.sniff_channel,
            "rng_seed": self.rng_seed,
            "connections": [_connection_to_dict(c) for c in self.connections],
        }


def _params_from_dict(raw):
    version = raw.get("csa_version")
    if version in (1, "1", "CSA1"):
        version = CsaVersion.CSA1
    elif version in (2, "2", "CSA2"):
        version = CsaVersion.CSA2
    else:
        raise ConfigError(f"csa_version must be 1 or 2, got {version!r}")
    aa = raw.get("access_address")
    if isinstance(aa, str):
        aa = int(aa, 16)
    return ConnectionParams(
        csa_version=version,
        interval_us=int(raw["interval_us"]),
        channel_map=ChannelMap.from_hex(raw["channel_map"]),
        access_address=aa,
        hop_increment=raw.get("hop_increment"),
        initial_channel=raw.get("initial_channel"),
    )


def _params_to_dict(params):
    out = {
        "csa_version": params.csa_version.value,
        "interval_us": params.interval_us,
        "channel_map": params.channel_map.to_hex(),
        "access_address": f"0x{params.access_address:08X}",
    }
    if params.csa_version is CsaVersion.CSA1:
        out["hop_increment"] = params.hop_increment
        out["initial_channel"] = params.initial_channel
    return out


def _connection_from_dict(raw):
    imp = raw.get("impairments", {})
    impairments = ImpairmentModel(
        duration_ns=int(imp["duration_us"]) * 1000,
        jitter_sigma_ns=float(imp.get("jitter_sigma_us", 0.0)) * 1000.0,
        clock_drift_ppm=float(imp.get("clock_drift_ppm", 0.0)),
        miss_probability=float(imp.get("miss_probability", 0.0)),
    )
    return ConnectionScenario(
        params=_params_from_dict(raw["params"]),
        impairments=impairments,
        start_offset_ns=int(raw.get("start_offset_us", 0)) * 1000,
        initial_counter=int(raw.get("initial_counter", 0)),
    )


def _connection_to_dict(conn):
    imp = conn.impairments
    return {
        "params": _params_to_dict(conn.params),
        "start_offset_us": conn.start_offset_ns // 1000,
        "initial_counter": conn.initial_counter,
        "impairments": {
            "duration_us": imp.duration_ns // 1000,
            "jitter_sigma_us": imp.jitter_sigma_ns / 1000.0,
            "clock_drift_ppm": imp.clock_drift_ppm,
            "miss_probability": imp.miss_probability,
        },
    }


@dataclass
class EventTimeline:
    """Ground truth for one connection: every event's counter, channel, time.

    ``counters`` is epoch-extended (strictly +1 per event, never wrapped);
    the on-air 16-bit counter is ``counters % 65536``.
    """

    params: ConnectionParams
    counters: np.ndarray
    channels: np.ndarray
    times_ns: np.ndarray

    def __len__(self):
        return len(self.counters)

    def wire_counters(self):
        return self.counters % COUNTER_PERIOD


def _simulate_connection(conn, sniff_channel, rng):
    params, imp = conn.params, conn.impairments
    scale = 1.0 + imp.clock_drift_ppm * 1e-6
    step_ns = params.interval_ns * scale
    count = int(np.floor(imp.duration_ns / step_ns)) + 1
    counters = conn.initial_counter + np.arange(count, dtype=np.int64)
    channels = channel_sequence(params, conn.initial_counter, count)
    times = conn.start_offset_ns + np.rint(np.arange(count) * step_ns).astype(np.int64)
    timeline = EventTimeline(params, counters, channels, times)

    hit_idx = np.flatnonzero(channels == sniff_channel)
    if imp.miss_probability > 0.0:
        keep = rng.random(hit_idx.size) >= imp.miss_probability
        hit_idx = hit_idx[keep]
    stamps = times[hit_idx]
    if imp.jitter_sigma_ns > 0.0:
        jitter = np.rint(rng.normal(0.0, imp.jitter_sigma_ns, hit_idx.size)).astype(np.int64)
        stamps = stamps + jitter
    observations = [
        Observation(int(t), params.access_address, sniff_channel, True)
        for t in stamps
    ]
    return timeline, observations


def simulate(config):
    """Run a scenario; returns (timelines, merged SniffTrace).

    Timelines are returned in the scenario's connection order and carry
    the exact event grid; the trace contains only the captured, impaired
    observations on the sniffed channel, merged and time-sorted.
    """
    timelines = []
    merged = []
    for conn in config.connections:
        rng = np.random.default_rng([config.rng_seed, conn.params.access_address])
        timeline, observations = _simulate_connection(conn, config.sniff_channel, rng)
        timelines.append(timeline)
        merged.extend(observations)
    merged.sort(key=lambda o: (o.timestamp_ns, o.access_address))
    trace = SniffTrace(
        config.sniff_channel,
        merged,
        {"rng_seed": config.rng_seed, "connection_count": len(config.connections)},
    )
    return timelines, trace


def expected_reconstruction_budget(n_ch):
    """Expected connection events until every excluded channel has been seen
    remapped onto the sniffed channel at least once.

    Each event remaps with probability (37 - n_ch)/37, the remapped-from
    channel is uniform over the excluded set, and the remap target is
    uniform over the map: collecting all 37 - n_ch excluded channels on one
    target is a coupon-collector problem. Defined as 0 for a full map.
    """
    if not 2 <= n_ch <= NUM_DATA_CHANNELS:
        raise ConfigError(f"n_ch must be in 2..37, got {n_ch}")
    if n_ch == NUM_DATA_CHANNELS:
        return 0
    missing = NUM_DATA_CHANNELS - n_ch
    harmonic = sum(1.0 / i for i in range(1, missing + 1))
    p_remap = missing / NUM_DATA_CHANNELS
    return round(n_ch * missing * harmonic / p_remap)
