"""Sniffer observation data model and trace file I/O.

A single-channel sniffer parked on one data channel records, for every
captured link-layer packet, an integer-nanosecond timestamp, the 32-bit
access address, the channel it listened on, and whether the packet came
from the central. Traces round-trip through CSV and JSONL; both formats
carry one observation per row/line with identical field names.

CSV columns: ``timestamp_ns,access_address_hex,channel,is_central`` with a
header row; access addresses are 0x-prefixed uppercase hex.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .csa import NUM_DATA_CHANNELS, check_access_address
from .errors import ConfigError, TraceParseError

CSV_FIELDS = ("timestamp_ns", "access_address_hex", "channel", "is_central")


@dataclass(frozen=True)
class Observation:
    """One captured packet, timestamped by the sniffer clock."""

    timestamp_ns: int
    access_address: int
    channel: int
    is_central: bool


@dataclass
class SniffTrace:
    """All observations captured on one sniffed channel, time-ordered.

    ``sniff_channel`` may be None only while the trace is empty (for
    example a header-only file); every observation must carry the sniffed
    channel once it is set.
    """

    sniff_channel: int | None
    observations: list = field(default_factory=list)
    capture_meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.sniff_channel is not None and not 0 <= self.sniff_channel < NUM_DATA_CHANNELS:
            raise ConfigError(f"sniff_channel must be in 0..36, got {self.sniff_channel}")
        if self.observations and self.sniff_channel is None:
            raise ConfigError("non-empty trace needs a sniff_channel")
        last = None
        for obs in self.observations:
            if obs.channel != self.sniff_channel:
                raise ConfigError(
                    f"observation on channel {obs.channel} in a trace sniffing "
                    f"channel {self.sniff_channel}"
                )
            if last is not None and obs.timestamp_ns < last:
                raise ConfigError("observations must be sorted by timestamp")
            last = obs.timestamp_ns

    def __len__(self):
        return len(self.observations)

    def timestamps(self):
        """All observation timestamps as an int64 array (ns)."""
        return np.array([o.timestamp_ns for o in self.observations], dtype=np.int64)


def _parse_bool(text, row):
    norm = str(text).strip().lower()
    if norm in ("true", "1"):
        return True
    if norm in ("false", "0"):
        return False
    raise TraceParseError(row, f"invalid is_central value {text!r}")


def _parse_observation(fields, row):
    try:
        ts = int(fields["timestamp_ns"])
    except (ValueError, TypeError) as exc:
        raise TraceParseError(row, f"invalid timestamp_ns {fields.get('timestamp_ns')!r}") from exc
    aa_text = fields["access_address_hex"]
    try:
        aa = int(str(aa_text), 16)
    except (ValueError, TypeError) as exc:
        raise TraceParseError(row, f"invalid access_address_hex {aa_text!r}") from exc
    try:
        check_access_address(aa)
    except ConfigError as exc:
        raise TraceParseError(row, str(exc)) from exc
    try:
        channel = int(fields["channel"])
    except (ValueError, TypeError) as exc:
        raise TraceParseError(row, f"invalid channel {fields.get('channel')!r}") from exc
    if not 0 <= channel < NUM_DATA_CHANNELS:
        raise TraceParseError(row, f"channel {channel} outside 0..36")
    is_central = fields["is_central"]
    if not isinstance(is_central, bool):
        is_central = _parse_bool(is_central, row)
    return Observation(ts, aa, channel, is_central)


def _open_text(source, mode="r"):
    if isinstance(source, (str, Path)):
        return open(source, mode, newline=""), True
    if isinstance(source, io.TextIOBase):
        return source, False
    # byte stream: wrap without closing the caller's handle
    return io.TextIOWrapper(source, encoding="utf-8", newline=""), False


def load_trace(source, fmt="csv"):
    """Read a trace from a path or stream; ``fmt`` is ``csv`` or ``jsonl``.

    Observations are sorted by timestamp on load. All rows must share one
    channel (a single-channel sniffer cannot produce a mixed trace); parse
    problems raise :class:`TraceParseError` with the offending row number.
    """
    if fmt not in ("csv", "jsonl"):
        raise ConfigError(f"unknown trace format {fmt!r}")
    handle, owned = _open_text(source)
    try:
        if fmt == "csv":
            observations = _load_csv(handle)
        else:
            observations = _load_jsonl(handle)
    finally:
        if owned:
            handle.close()
    observations.sort(key=lambda o: o.timestamp_ns)
    channels = {o.channel for o in observations}
    if len(channels) > 1:
        raise TraceParseError(0, f"mixed sniff channels in one trace: {sorted(channels)}")
    sniff_channel = channels.pop() if channels else None
    return SniffTrace(sniff_channel, observations)


def _load_csv(handle):
    reader = csv.reader(handle)
    try:
        header = next(reader)
    except StopIteration:
        raise TraceParseError(1, "missing CSV header") from None
    if [h.strip() for h in header] != list(CSV_FIELDS):
        raise TraceParseError(1, f"bad CSV header {header!r}, expected {','.join(CSV_FIELDS)}")
    observations = []
    for row_num, row in enumerate(reader, start=2):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) != len(CSV_FIELDS):
            raise TraceParseError(row_num, f"expected {len(CSV_FIELDS)} columns, got {len(row)}")
        observations.append(_parse_observation(dict(zip(CSV_FIELDS, row)), row_num))
    return observations


def _load_jsonl(handle):
    observations = []
    for line_num, line in enumerate(handle, start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise TraceParseError(line_num, f"invalid JSON: {exc.msg}") from exc
        if not isinstance(record, dict):
            raise TraceParseError(line_num, "each line must be a JSON object")
        missing = [f for f in CSV_FIELDS if f not in record]
        if missing:
            raise TraceParseError(line_num, f"missing fields {missing}")
        observations.append(_parse_observation(record, line_num))
    return observations


def save_trace(trace, dest, fmt="csv"):
    """Write a trace to a path or text stream in ``csv`` or ``jsonl`` form."""
    if fmt not in ("csv", "jsonl"):
        raise ConfigError(f"unknown trace format {fmt!r}")
    handle, owned = _open_text(dest, "w")
    try:
        if fmt == "csv":
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(CSV_FIELDS)
            for o in trace.observations:
                writer.writerow(
                    [o.timestamp_ns, f"0x{o.access_address:08X}", o.channel,
                     "true" if o.is_central else "false"]
                )
        else:
            for o in trace.observations:
                handle.write(json.dumps({
                    "timestamp_ns": o.timestamp_ns,
                    "access_address_hex": f"0x{o.access_address:08X}",
                    "channel": o.channel,
                    "is_central": o.is_central,
                }) + "\n")
    finally:
        if owned:
            handle.close()
        else:
            handle.flush()


def split_by_connection(trace):
    """Partition a trace by access address, keeping central packets only.

    Returns ``{access_address: SniffTrace}``. Every address present in the
    input appears in the result, even when all of its packets were
    peripheral-flagged (those yield empty per-connection traces). Order is
    preserved within each part and the parts' central packets union back to
    the central packets of the input.
    """
    by_aa = {}
    for obs in trace.observations:
        by_aa.setdefault(obs.access_address, []).append(obs)
    return {
        aa: SniffTrace(
            trace.sniff_channel,
            [o for o in group if o.is_central],
            dict(trace.capture_meta),
        )
        for aa, group in by_aa.items()
    }
