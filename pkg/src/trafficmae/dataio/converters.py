"""Converters from external formats into the canonical JSON-lines schema.

``canonical``
    Validate an existing canonical file and rewrite it with a manifest line.
``darknet``
    A packet log (CSV with header, or JSON lines) with fields ``ts``,
    ``src_ip``, ``dst_port`` and optionally ``label``.  Each sender becomes one
    record: its IP, most-targeted port, the time-ordered ``(ts, port)`` events
    and a statistics vector (see :data:`DARKNET_STATS`).  Senders with fewer
    than ``min_packets`` packets are dropped.
"""

from __future__ import annotations

import csv
import ipaddress
import json
from collections import Counter, defaultdict
from pathlib import Path

import numpy as np

from ..errors import ConfigError, ParseError
from .records import CanonicalRecord, Dataset, load_canonical, save_canonical

DARKNET_STATS = ("packets", "distinct_ports", "duration", "iat_mean", "iat_std", "iat_min", "iat_max")
DARKNET_MIN_PACKETS = 5


def _read_packets(path):
    path = Path(path)
    with path.open(encoding="utf-8", newline="") as fh:
        first = fh.readline()
        fh.seek(0)
        if first.lstrip().startswith("{"):
            for lineno, raw in enumerate(fh, start=1):
                if raw.strip():
                    try:
                        yield lineno, json.loads(raw)
                    except json.JSONDecodeError as exc:
                        raise ParseError(f"invalid JSON: {exc.msg}", lineno) from None
        else:
            for lineno, row in enumerate(csv.DictReader(fh), start=2):
                yield lineno, row


def read_darknet(path, min_packets=DARKNET_MIN_PACKETS):
    """Per-sender records from a darknet packet log."""
    if min_packets < 1:
        raise ConfigError("min_packets must be >= 1")
    packets = defaultdict(list)
    labels = defaultdict(Counter)
    for lineno, row in _read_packets(path):
        try:
            ts = float(row["ts"])
            src = str(ipaddress.IPv4Address(str(row["src_ip"]).strip()))
            port = str(int(row["dst_port"]))
        except KeyError as exc:
            raise ParseError(f"missing field {exc.args[0]!r}", lineno) from None
        except (TypeError, ValueError) as exc:
            raise ParseError(f"malformed packet: {exc}", lineno) from None
        packets[src].append((ts, port))
        if row.get("label"):
            labels[src][str(row["label"])] += 1
    records = []
    for src in sorted(packets):
        events = sorted(packets[src])
        if len(events) < min_packets:
            continue
        times = np.array([t for t, _ in events])
        iat = np.diff(times) if times.size > 1 else np.zeros(1)
        ports = Counter(p for _, p in events)
        top_port = min(ports, key=lambda p: (-ports[p], int(p)))
        stats = dict(zip(DARKNET_STATS, (
            float(len(events)), float(len(ports)), float(times[-1] - times[0]),
            float(iat.mean()), float(iat.std()), float(iat.min()), float(iat.max()),
        )))
        label = None
        if labels[src]:
            label = min(labels[src], key=lambda lab: (-labels[src][lab], lab))
        records.append(CanonicalRecord(
            sample_id=src, label=label, session_id=src, timestamp=float(times[0]), stats=stats,
            entities={"ip": src, "port": top_port}, events=[(float(t), p) for t, p in events],
        ))
    return Dataset(records, ("ip", "port", "stats"))


def convert(converter, src, dst, **options):
    """Run ``converter`` on ``src`` and write the canonical dataset to ``dst``."""
    if converter == "canonical":
        dataset = load_canonical(src)
    elif converter == "darknet":
        dataset = read_darknet(src, options.get("min_packets", DARKNET_MIN_PACKETS))
    else:
        raise ConfigError(f"unknown converter {converter!r}; expected 'canonical' or 'darknet'")
    save_canonical(dataset, dst)
    return dataset


CONVERTERS = ("canonical", "darknet")
