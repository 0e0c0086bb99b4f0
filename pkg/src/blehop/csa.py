"""Bit-exact BLE channel selection algorithms #1 and #2.

A BLE connection hops to a new data channel (0..36) on every connection
event. Both selection algorithms first produce an *unmapped* channel and,
when that channel is not in the connection's allowed channel map, remap it
into the map:

* CSA#1 advances the previous unmapped channel by a fixed hop increment
  modulo 37, so the unmapped sequence repeats every 37 events. Remapping
  indexes the ascending list of allowed channels with ``unmapped mod n_ch``,
  which sends a given excluded channel to the *same* allowed channel every
  time.
* CSA#2 derives a 16-bit pseudo-random number for each value of the
  connection event counter, seeded by the channel identifier (a fold of the
  access address). The unmapped channel is that number mod 37; remapping
  indexes the allowed list with ``floor(n_ch * prn / 2**16)``, so an
  excluded channel lands on varying allowed channels over time.

Scalar operations are pure-Python and bit-exact; the ``*_bulk`` helpers are
vectorized equivalents used by the simulator and the alignment search.
All 16-bit arithmetic is done in wider intermediates and reduced mod 2**16.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import ConfigError

NUM_DATA_CHANNELS = 37
COUNTER_PERIOD = 65536  # the connection event counter is 16 bits wide

INTERVAL_STEP_US = 1250
INTERVAL_MIN_US = 7_500
INTERVAL_MAX_US = 4_000_000

HOP_INCREMENT_MIN = 5
HOP_INCREMENT_MAX = 16

# Map hex form: bit i set means channel i allowed; bits 37..39 must be zero.
_MAP_BITS = 40
_MAP_RESERVED_MASK = 0b111 << NUM_DATA_CHANNELS

# Per-byte bit-reversal table backing the 16-bit permutation stage.
_REV8 = tuple(int(f"{b:08b}"[::-1], 2) for b in range(256))
_REV8_NP = np.array(_REV8, dtype=np.uint32)


class CsaVersion(enum.Enum):
    CSA1 = 1
    CSA2 = 2


def _check_channel(value, what="channel"):
    if not isinstance(value, (int, np.integer)) or isinstance(value, bool):
        raise ConfigError(f"{what} must be an integer, got {value!r}")
    if not 0 <= value < NUM_DATA_CHANNELS:
        raise ConfigError(f"{what} must be in 0..36, got {value}")
    return int(value)


def check_access_address(value):
    """Validate a 32-bit access address and return it as an int."""
    if not isinstance(value, (int, np.integer)) or isinstance(value, bool):
        raise ConfigError(f"access address must be an integer, got {value!r}")
    if not 0 <= value <= 0xFFFFFFFF:
        raise ConfigError(f"access address must fit in 32 bits, got {value:#x}")
    return int(value)


@dataclass(frozen=True)
class ChannelMap:
    """The set of data channels a connection is allowed to use."""

    allowed: frozenset

    def __post_init__(self):
        channels = frozenset(_check_channel(c) for c in self.allowed)
        object.__setattr__(self, "allowed", channels)
        if len(channels) < 2:
            raise ConfigError(
                f"channel map must allow at least 2 channels, got {len(channels)}"
            )

    @classmethod
    def from_channels(cls, channels):
        return cls(frozenset(channels))

    @classmethod
    def full(cls):
        return cls(frozenset(range(NUM_DATA_CHANNELS)))

    @classmethod
    def from_hex(cls, text):
        """Parse the 40-bit hex form, e.g. ``0x1FFFFFFC00``."""
        try:
            value = int(str(text), 16)
        except ValueError as exc:
            raise ConfigError(f"invalid channel map hex {text!r}") from exc
        if value < 0 or value >> _MAP_BITS:
            raise ConfigError(f"channel map {text!r} does not fit in 40 bits")
        if value & _MAP_RESERVED_MASK:
            raise ConfigError(
                f"channel map {text!r} sets reserved bits 37..39 (advertising channels)"
            )
        return cls(frozenset(i for i in range(NUM_DATA_CHANNELS) if value >> i & 1))

    def to_hex(self):
        value = 0
        for ch in self.allowed:
            value |= 1 << ch
        return f"0x{value:010X}"

    @cached_property
    def ordered(self):
        """Allowed channels in ascending order; the remap lookup table."""
        return tuple(sorted(self.allowed))

    @property
    def n_ch(self):
        return len(self.allowed)

    def __contains__(self, channel):
        return channel in self.allowed

    def __iter__(self):
        return iter(self.ordered)

    # cached numpy views used by the vectorized paths
    @cached_property
    def ordered_array(self):
        return np.array(self.ordered, dtype=np.int64)

    @cached_property
    def allowed_mask(self):
        mask = np.zeros(NUM_DATA_CHANNELS, dtype=bool)
        mask[list(self.allowed)] = True
        return mask

    @cached_property
    def remap_table(self):
        """37-entry lookup: unmapped channel -> CSA#1 output channel."""
        table = np.empty(NUM_DATA_CHANNELS, dtype=np.int64)
        for u in range(NUM_DATA_CHANNELS):
            table[u] = u if u in self.allowed else self.ordered[u % self.n_ch]
        return table


@dataclass(frozen=True)
class ConnectionParams:
    """Everything that determines a connection's hop sequence and timing.

    ``interval_us`` is the connection event spacing in microseconds and must
    be a multiple of 1250 in [7500, 4000000]. The access address is required
    for both algorithms (every link-layer packet carries it and traces are
    keyed by it); CSA#2 additionally derives its channel identifier from it.
    ``hop_increment`` (5..16) and ``initial_channel`` (the unmapped-channel
    seed preceding event 0) apply to CSA#1 only.
    """

    csa_version: CsaVersion
    interval_us: int
    channel_map: ChannelMap
    access_address: int
    hop_increment: int | None = None
    initial_channel: int | None = None

    def __post_init__(self):
        if not isinstance(self.csa_version, CsaVersion):
            raise ConfigError(f"csa_version must be a CsaVersion, got {self.csa_version!r}")
        iv = self.interval_us
        if not isinstance(iv, (int, np.integer)) or isinstance(iv, bool):
            raise ConfigError(f"interval_us must be an integer, got {iv!r}")
        if iv % INTERVAL_STEP_US:
            raise ConfigError(f"interval_us must be a multiple of {INTERVAL_STEP_US}, got {iv}")
        if not INTERVAL_MIN_US <= iv <= INTERVAL_MAX_US:
            raise ConfigError(
                f"interval_us must be in [{INTERVAL_MIN_US}, {INTERVAL_MAX_US}], got {iv}"
            )
        if not isinstance(self.channel_map, ChannelMap):
            raise ConfigError("channel_map must be a ChannelMap")
        check_access_address(self.access_address)
        if self.csa_version is CsaVersion.CSA1:
            hop = self.hop_increment
            if hop is None or not HOP_INCREMENT_MIN <= hop <= HOP_INCREMENT_MAX:
                raise ConfigError(
                    f"CSA#1 needs hop_increment in "
                    f"[{HOP_INCREMENT_MIN}, {HOP_INCREMENT_MAX}], got {hop}"
                )
            if self.initial_channel is None:
                raise ConfigError("CSA#1 needs initial_channel (unmapped seed before event 0)")
            _check_channel(self.initial_channel, "initial_channel")
        else:
            if self.hop_increment is not None or self.initial_channel is not None:
                raise ConfigError("hop_increment/initial_channel are CSA#1-only parameters")

    @property
    def interval_ns(self):
        return self.interval_us * 1000


def csa1_unmapped_channel(prev_channel, hop_increment):
    """Advance the CSA#1 unmapped channel by one event.

    The recursion consumes the previous *unmapped* channel, never the
    remapped output, which is what gives the sequence its 37-event period.
    """
    _check_channel(prev_channel, "prev_channel")
    if not HOP_INCREMENT_MIN <= hop_increment <= HOP_INCREMENT_MAX:
        raise ConfigError(f"hop_increment must be in 5..16, got {hop_increment}")
    return (prev_channel + hop_increment) % NUM_DATA_CHANNELS


def remap_csa1(unmapped, channel_map):
    """CSA#1 remap: identity inside the map, else ordered[unmapped mod n_ch]."""
    _check_channel(unmapped, "unmapped")
    if unmapped in channel_map:
        return unmapped
    return channel_map.ordered[unmapped % channel_map.n_ch]


def channel_identifier(access_address):
    """Fold a 32-bit access address into the 16-bit CSA#2 channel identifier."""
    aa = check_access_address(access_address)
    return (aa >> 16) ^ (aa & 0xFFFF)


def perm16(x):
    """Reverse the bits of each byte of a 16-bit value, bytes kept in place."""
    return _REV8[x & 0xFF] | (_REV8[(x >> 8) & 0xFF] << 8)


def mam(x, ci):
    """Multiply-add-modulo stage: (17 * x + ci) mod 2**16."""
    return (17 * x + ci) % 0x10000


def prn_e(k, ci):
    """Per-event 16-bit pseudo-random number for counter ``k`` under ``ci``.

    Composition, innermost first: xor with ci, then three rounds of
    (permute, multiply-add), then a final xor with ci. Every stage is a
    16-bit bijection, so for fixed ci the map k -> prn is a permutation
    of 0..65535.
    """
    x = (k ^ ci) & 0xFFFF
    for _ in range(3):
        x = mam(perm16(x), ci)
    return x ^ ci


def csa2_unmapped_channel(k, ci):
    return prn_e(k, ci) % NUM_DATA_CHANNELS


def remap_csa2(k, ci, channel_map):
    """CSA#2 channel for counter ``k``: unmapped if allowed, else remapped.

    The remap index is ``floor(n_ch * prn / 2**16)``, i.e. the prn scaled
    onto the allowed list, which spreads an excluded channel's traffic
    uniformly over the whole map.
    """
    p = prn_e(k, ci)
    unmapped = p % NUM_DATA_CHANNELS
    if unmapped in channel_map:
        return unmapped
    return channel_map.ordered[(channel_map.n_ch * p) >> 16]


def channel_for_event(params, event_index):
    """Channel used at a given event index (counter, epoch-extended).

    For CSA#2 only ``event_index mod 65536`` matters; for CSA#1 the index
    counts events from the start of the connection and the result repeats
    every 37 events.
    """
    if event_index < 0:
        raise ConfigError(f"event_index must be >= 0, got {event_index}")
    if params.csa_version is CsaVersion.CSA1:
        unmapped = (
            params.initial_channel + (event_index + 1) * params.hop_increment
        ) % NUM_DATA_CHANNELS
        return remap_csa1(unmapped, params.channel_map)
    ci = channel_identifier(params.access_address)
    return remap_csa2(event_index % COUNTER_PERIOD, ci, params.channel_map)


# ---------------------------------------------------------------------------
# vectorized equivalents


def prn_e_bulk(counters, ci):
    """Vectorized ``prn_e`` over an array of counters; returns uint32."""
    x = (np.asarray(counters, dtype=np.int64) % COUNTER_PERIOD).astype(np.uint32)
    ci32 = np.uint32(ci)
    x ^= ci32
    for _ in range(3):
        x = _REV8_NP[x & 0xFF] | (_REV8_NP[(x >> np.uint32(8)) & 0xFF] << np.uint32(8))
        x = (np.uint32(17) * x + ci32) & np.uint32(0xFFFF)
    return x ^ ci32


def csa2_channels_bulk(counters, ci, channel_map):
    """Vectorized CSA#2 mapped channels for an array of counters."""
    p = prn_e_bulk(counters, ci).astype(np.int64)
    unmapped = p % NUM_DATA_CHANNELS
    remapped = channel_map.ordered_array[(channel_map.n_ch * p) >> 16]
    return np.where(channel_map.allowed_mask[unmapped], unmapped, remapped)


def csa1_channels_bulk(event_indices, params):
    """Vectorized CSA#1 mapped channels for an array of event indices."""
    idx = np.asarray(event_indices, dtype=np.int64)
    unmapped = (params.initial_channel + (idx + 1) * params.hop_increment) % NUM_DATA_CHANNELS
    return params.channel_map.remap_table[unmapped]


def channel_sequence(params, start_event, count):
    """Mapped channels for ``count`` consecutive events from ``start_event``."""
    if start_event < 0 or count < 0:
        raise ConfigError("start_event and count must be non-negative")
    idx = np.arange(start_event, start_event + count, dtype=np.int64)
    if params.csa_version is CsaVersion.CSA1:
        return csa1_channels_bulk(idx, params)
    ci = channel_identifier(params.access_address)
    return csa2_channels_bulk(idx, ci, params.channel_map)
