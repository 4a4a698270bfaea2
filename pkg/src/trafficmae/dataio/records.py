"""Canonical JSON-lines dataset format.

One record per line::

    {"sample_id": "f1", "label": "app_a", "session_id": "s1", "timestamp": 12.5,
     "payload": "16030100", "stats": {"pkt_len_mean": 512.0},
     "sequences": [[60, 0.0, 29200], [1500, 0.01, 29200]],
     "entities": {"ip": "10.0.0.1", "port": "443", "subnet": "10.0.0.0/24"},
     "events": [[12.5, "443"], [13.0, "80"]]}

An optional first line ``{"manifest": {"modalities": [...]}}`` declares the
modalities every record must carry.  Without it the manifest is the union of
what the records hold, and every record must hold all of it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from ..errors import ParseError, SchemaError

MODALITIES = ("ip", "port", "subnet", "payload", "stats", "sequences")
ENTITY_MODALITIES = ("ip", "port")


@dataclass
class CanonicalRecord:
    sample_id: str
    label: str | None = None
    session_id: str | None = None
    timestamp: float | None = None
    payload: bytes | None = None
    stats: dict | None = None
    sequences: list | None = None
    entities: dict = field(default_factory=dict)
    events: list | None = None

    def modalities(self):
        present = set()
        for name in ("ip", "port", "subnet"):
            if self.entities.get(name) is not None:
                present.add(name)
        if self.payload is not None:
            present.add("payload")
        if self.stats is not None:
            present.add("stats")
        if self.sequences is not None:
            present.add("sequences")
        return present

    @property
    def group(self):
        """Session key used to keep related samples in one fold."""
        return self.session_id if self.session_id is not None else self.sample_id

    def to_json(self):
        out = {"sample_id": self.sample_id}
        if self.label is not None:
            out["label"] = self.label
        if self.session_id is not None:
            out["session_id"] = self.session_id
        if self.timestamp is not None:
            out["timestamp"] = self.timestamp
        if self.payload is not None:
            out["payload"] = self.payload.hex()
        if self.stats is not None:
            out["stats"] = dict(self.stats)
        if self.sequences is not None:
            out["sequences"] = [list(row) for row in self.sequences]
        if self.entities:
            out["entities"] = {k: v for k, v in self.entities.items() if v is not None}
        if self.events is not None:
            out["events"] = [list(e) for e in self.events]
        return out

    @classmethod
    def from_json(cls, obj, line=None):
        if not isinstance(obj, dict):
            raise ParseError("record must be a JSON object", line)
        if "sample_id" not in obj or obj["sample_id"] in (None, ""):
            raise ParseError("record has no sample_id", line)
        try:
            payload = bytes.fromhex(obj["payload"]) if obj.get("payload") is not None else None
        except (TypeError, ValueError) as exc:
            raise ParseError(f"payload is not valid hex: {exc}", line) from None
        stats = obj.get("stats")
        if stats is not None:
            if not isinstance(stats, dict):
                raise ParseError("stats must be an object of name -> number", line)
            try:
                stats = {str(k): float(v) for k, v in stats.items()}
            except (TypeError, ValueError):
                raise ParseError("stats values must be numbers", line) from None
        seqs = obj.get("sequences")
        if seqs is not None:
            try:
                seqs = [[float(v) for v in row] for row in seqs]
            except (TypeError, ValueError):
                raise ParseError("sequences must be a list of numeric rows", line) from None
        entities = obj.get("entities") or {}
        if not isinstance(entities, dict):
            raise ParseError("entities must be an object", line)
        events = obj.get("events")
        if events is not None:
            try:
                events = [(float(ts), str(key)) for ts, key in events]
            except (TypeError, ValueError):
                raise ParseError("events must be [timestamp, key] pairs", line) from None
        ts = obj.get("timestamp")
        return cls(
            sample_id=str(obj["sample_id"]),
            label=None if obj.get("label") is None else str(obj["label"]),
            session_id=None if obj.get("session_id") is None else str(obj["session_id"]),
            timestamp=None if ts is None else float(ts),
            payload=payload,
            stats=stats,
            sequences=seqs,
            entities={k: str(v) for k, v in entities.items() if v is not None},
            events=events,
        )


class Dataset:
    """Validated, ordered collection of records."""

    def __init__(self, records, manifest=None):
        self.records = list(records)
        if manifest is None:
            present = set()
            for r in self.records:
                present |= r.modalities()
            manifest = present
        self.manifest = tuple(m for m in MODALITIES if m in set(manifest))
        unknown = set(manifest) - set(MODALITIES)
        if unknown:
            raise SchemaError(f"unknown modalities in manifest: {sorted(unknown)}")
        self._validate()

    def _validate(self):
        seen = set()
        stat_names = None
        for r in self.records:
            if r.sample_id in seen:
                raise SchemaError(f"duplicate sample_id {r.sample_id!r}")
            seen.add(r.sample_id)
            have = r.modalities()
            if not have:
                raise SchemaError(f"record {r.sample_id!r} carries no modality")
            missing = [m for m in self.manifest if m not in have]
            if missing:
                raise SchemaError(f"record {r.sample_id!r} is missing declared modalities {missing}")
            if r.stats is not None:
                names = tuple(r.stats)
                if stat_names is None:
                    stat_names = names
                elif names != stat_names:
                    raise SchemaError(f"record {r.sample_id!r} has stats {list(names)}, expected {list(stat_names)}")
        self.stat_names = stat_names or ()

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, i):
        return self.records[i]

    @property
    def sample_ids(self):
        return [r.sample_id for r in self.records]

    @property
    def labels(self):
        return [r.label for r in self.records]

    @property
    def classes(self):
        return sorted({r.label for r in self.records if r.label is not None})

    def subset(self, indices):
        return Dataset([self.records[i] for i in indices], self.manifest)

    def __eq__(self, other):
        return (isinstance(other, Dataset) and self.manifest == other.manifest
                and self.records == other.records)


def load_canonical(path):
    path = Path(path)
    records, manifest = [], None
    with path.open(encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", lineno) from None
            if lineno == 1 and isinstance(obj, dict) and "manifest" in obj and "sample_id" not in obj:
                manifest = obj["manifest"].get("modalities", [])
                continue
            records.append(CanonicalRecord.from_json(obj, lineno))
    return Dataset(records, manifest)


def save_canonical(dataset, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        fh.write(json.dumps({"manifest": {"modalities": list(dataset.manifest)}}) + "\n")
        for r in dataset.records:
            fh.write(json.dumps(r.to_json(), ensure_ascii=False) + "\n")
