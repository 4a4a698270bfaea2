"""Desk-scale synthetic traffic with a controllable class signal.

Signal placement:

* ``entity``: each class owns a pool of sender IPs and a pool of target
  ports; senders mostly hit their own class ports, so IPs co-occur with
  same-class IPs and port sequences stay within a class.  Quantities carry
  no class information.
* ``stats``: the statistics vector is drawn around a class-specific mean;
  entities are shared by all classes.
* ``both``: both of the above.

Payloads and packet sequences follow protocol-like templates chosen
independently of the class.  Every record also carries ``events``
(timestamped ports it targeted), which feed the entity-embedding corpora.
"""

from __future__ import annotations

import ipaddress
from dataclasses import asdict, dataclass, fields

import numpy as np

from ..errors import ConfigError
from .records import MODALITIES, CanonicalRecord, Dataset

BACKGROUND_PORTS = (22, 23, 53, 80, 123, 443, 445, 1433, 3389, 8080)
# protocol-like payload prefixes; chosen independently of the class
PAYLOAD_TEMPLATES = (
    bytes.fromhex("160301020001") + b"\x00" * 2,
    b"GET / HTTP/1.1\r\nHost: ",
    b"SSH-2.0-OpenSSH_8.",
    bytes.fromhex("000001000001000000000000"),
    b"",
)
PACKET_SIZES = (60.0, 576.0, 1500.0)
WINDOW_SIZES = (29200.0, 64240.0, 65535.0)
SEQ_SIGNALS = ("pkt_len", "iat", "rwnd")
STAT_FAMILIES = ("pkt_len", "iat", "bytes")
STAT_AGGREGATES = ("min", "max", "avg", "std")


@dataclass
class SyntheticSpec:
    n_samples: int = 2000
    n_classes: int = 5
    modalities: tuple = MODALITIES
    signal: str = "entity"
    noise: float = 0.1
    stats_separation: float = 1.5
    ips_per_class: int = 20
    ports_per_class: int = 4
    events_per_sample: int = 4
    max_session_size: int = 4
    seq_len_range: tuple = (8, 40)
    payload_len_range: tuple = (0, 48)
    duration: float = 86400.0
    unknown_fraction: float = 0.0

    @classmethod
    def from_dict(cls, obj):
        obj = dict(obj or {})
        known = {f.name for f in fields(cls)}
        extra = set(obj) - known - {"seed"}
        if extra:
            raise ConfigError(f"unknown synthetic spec fields: {sorted(extra)}")
        obj.pop("seed", None)
        for key in ("modalities", "seq_len_range", "payload_len_range"):
            if key in obj:
                obj[key] = tuple(obj[key])
        return cls(**obj)

    def to_dict(self):
        out = asdict(self)
        for key in ("modalities", "seq_len_range", "payload_len_range"):
            out[key] = list(out[key])
        return out

    def validate(self):
        if self.n_classes < 2:
            raise ConfigError("n_classes must be >= 2")
        if self.n_samples < self.n_classes:
            raise ConfigError("n_samples must be >= n_classes")
        if self.signal not in ("entity", "stats", "both"):
            raise ConfigError(f"signal must be entity, stats or both, got {self.signal!r}")
        if not 0.0 <= self.noise <= 1.0:
            raise ConfigError("noise must lie in [0, 1]")
        if not 0.0 <= self.unknown_fraction < 1.0:
            raise ConfigError("unknown_fraction must lie in [0, 1)")
        bad = set(self.modalities) - set(MODALITIES)
        if bad or not self.modalities:
            raise ConfigError(f"modalities must be a non-empty subset of {MODALITIES}")
        if "ip" not in self.modalities and self.signal == "entity" and "port" not in self.modalities:
            raise ConfigError("entity signal needs the ip or port modality")
        for lo, hi in (self.seq_len_range, self.payload_len_range):
            if lo < 0 or hi < lo:
                raise ConfigError("length ranges must satisfy 0 <= lo <= hi")
        if min(self.ips_per_class, self.ports_per_class, self.events_per_sample, self.max_session_size) < 1:
            raise ConfigError("pool sizes, events_per_sample and max_session_size must be >= 1")


def _draw_ips(rng, n, taken):
    out = []
    while len(out) < n:
        value = int(rng.integers(1 << 24, 224 << 24))
        text = str(ipaddress.IPv4Address(value))
        if text not in taken:
            taken.add(text)
            out.append(text)
    return out


def _flow_sequence(rng, n):
    """Packet length, inter-arrival time and receiver window of one flow.

    A few latent values per flow (typical packet size, pacing, initial
    window and its growth) drive all steps, as in real flows.
    """
    t = np.arange(n)
    size = PACKET_SIZES[rng.integers(len(PACKET_SIZES))] * rng.uniform(0.8, 1.0)
    pkt_len = np.where(t < 3, 60.0, size) * (1.0 + 0.02 * rng.normal(size=n))
    pace = 10.0 ** rng.uniform(-3.0, -1.0)
    iat = np.where(t == 0, 0.0, pace * (1.0 + 0.1 * rng.normal(size=n)))
    window = WINDOW_SIZES[rng.integers(len(WINDOW_SIZES))] + rng.uniform(0.0, 200.0) * t
    return np.column_stack([pkt_len, np.abs(iat), window])


def _payload(rng, n):
    head = PAYLOAD_TEMPLATES[rng.integers(len(PAYLOAD_TEMPLATES))][:n]
    tail = rng.integers(0, 256, size=n - len(head), dtype=np.uint8).tobytes()
    return head + tail


def generate_synthetic(spec=None, seed=0):
    """Deterministic synthetic :class:`Dataset` for ``spec`` (dict or :class:`SyntheticSpec`)."""
    if not isinstance(spec, SyntheticSpec):
        spec = SyntheticSpec.from_dict(spec)
    spec.validate()
    rng = np.random.default_rng(seed)
    C = spec.n_classes
    entity_signal = spec.signal in ("entity", "both")
    stats_signal = spec.signal in ("stats", "both")

    taken = set()
    ip_pools = [_draw_ips(rng, spec.ips_per_class, taken) for _ in range(C)]
    shared_ips = _draw_ips(rng, spec.ips_per_class * C, taken)
    port_space = rng.permutation(np.arange(1024, 65536))[: C * spec.ports_per_class]
    port_pools = [list(port_space[c * spec.ports_per_class:(c + 1) * spec.ports_per_class]) for c in range(C)]
    all_ports = np.array(sorted(set(port_space.tolist()) | set(BACKGROUND_PORTS)))
    stat_names = [f"{fam}_{agg}" for fam in STAT_FAMILIES for agg in STAT_AGGREGATES]
    class_means = rng.normal(0.0, spec.stats_separation, size=(C, len(stat_names)))
    stat_scale = np.repeat([400.0, 0.05, 2e4], len(STAT_AGGREGATES))
    stat_offset = np.repeat([600.0, 0.2, 5e4], len(STAT_AGGREGATES))

    n_unknown = int(round(spec.n_samples * spec.unknown_fraction))
    n_known = spec.n_samples - n_unknown
    labels = np.concatenate([np.arange(n_known) % C, np.full(n_unknown, -1)])
    labels = labels[rng.permutation(spec.n_samples)]

    def pick_port(cls):
        if cls >= 0 and entity_signal and rng.random() >= spec.noise:
            return int(port_pools[cls][rng.integers(len(port_pools[cls]))])
        return int(all_ports[rng.integers(all_ports.size)])

    # Group samples of one class into sessions sharing a sender and a start time.
    sessions = {}
    order = np.argsort(labels, kind="stable")
    i = 0
    while i < order.size:
        cls = int(labels[order[i]])
        size = int(rng.integers(1, spec.max_session_size + 1))
        members = [j for j in order[i:i + size] if labels[j] == cls]
        if cls >= 0 and entity_signal:
            ip = ip_pools[cls][rng.integers(spec.ips_per_class)]
        else:
            ip = shared_ips[rng.integers(len(shared_ips))]
        start = float(rng.uniform(0.0, spec.duration))
        sid = f"s{len(sessions):05d}"
        for j in members:
            sessions[int(j)] = (sid, ip, start)
        i += len(members)

    records = []
    for j in range(spec.n_samples):
        cls = int(labels[j])
        sid, ip, start = sessions[j]
        ts = round(start + float(rng.uniform(0.0, 60.0)), 6)
        port = pick_port(cls)
        event_ts = np.sort(ts + rng.uniform(0.0, 600.0, size=spec.events_per_sample))
        events = [(round(float(t), 6), str(pick_port(cls))) for t in event_ts]
        events[0] = (events[0][0], str(port))

        mean = class_means[cls] if (stats_signal and cls >= 0) else np.zeros(len(stat_names))
        stats_vec = stat_offset + stat_scale * (mean + rng.normal(size=len(stat_names)))
        seq_len = int(rng.integers(spec.seq_len_range[0], spec.seq_len_range[1] + 1))
        seq = _flow_sequence(rng, seq_len)
        pay_len = int(rng.integers(spec.payload_len_range[0], spec.payload_len_range[1] + 1))
        payload = _payload(rng, pay_len)

        mods = set(spec.modalities)
        entities = {}
        if "ip" in mods:
            entities["ip"] = ip
        if "port" in mods:
            entities["port"] = str(port)
        if "subnet" in mods:
            entities["subnet"] = str(ipaddress.IPv4Network(f"{ip}/24", strict=False))
        records.append(CanonicalRecord(
            sample_id=f"syn{j:06d}",
            label="unknown" if cls < 0 else f"class_{cls}",
            session_id=sid,
            timestamp=ts,
            payload=payload if "payload" in mods else None,
            stats={n: round(float(v), 9) for n, v in zip(stat_names, stats_vec)} if "stats" in mods else None,
            sequences=[[round(float(v), 9) for v in row] for row in seq] if "sequences" in mods else None,
            entities=entities,
            events=events,
        ))
    return Dataset(records, spec.modalities)
