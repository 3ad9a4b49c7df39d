"""Event-log loading, planted-block synthetic data, sessionization and splitting."""

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from itertools import groupby
from pathlib import Path

import numpy as np

from .errors import EmptyInputError, InvalidConfigError, MissingColumnError

log = logging.getLogger(__name__)

EVENT_KINDS = ("view", "add_to_cart", "purchase", "rating")


@dataclass(frozen=True)
class InteractionEvent:
    user_id: str
    item_id: str
    event_kind: str
    timestamp: int
    value: float | None = None

    def __post_init__(self):
        if self.event_kind not in EVENT_KINDS:
            raise ValueError(f"unknown event kind {self.event_kind!r}")
        if self.timestamp < 0:
            raise ValueError("timestamp must be non-negative")
        if self.event_kind == "rating":
            if self.value is None or not 0.5 <= self.value <= 5.0:
                raise ValueError("rating value must lie in [0.5, 5.0]")
        elif self.value is not None:
            raise ValueError("only rating events carry a value")


@dataclass
class ItemRecord:
    item_id: str
    category: str | None
    numeric_features: list[float] = field(default_factory=list)
    text_fields: list[str] = field(default_factory=list)


@dataclass(frozen=True)
class Session:
    """A run of one user's activity.

    ``items`` is the collapsed item sequence. ``raw`` keeps every underlying
    ``(item_id, timestamp)`` event, so a session list can be flattened back
    into events.
    """

    session_id: str
    user_id: str
    items: tuple
    start_ts: int
    end_ts: int
    raw: tuple = ()

    def __post_init__(self):
        if not self.items:
            raise ValueError("session must contain at least one item")
        if self.end_ts < self.start_ts:
            raise ValueError("end_ts precedes start_ts")


@dataclass
class SplitDataset:
    train: list[Session]
    test: list[Session]
    split_ratio: float


# -------------------------------------------------------------------- loading


@dataclass
class EventSchema:
    """Column mapping for an event CSV.

    ``kind`` may be None for logs holding a single event kind (``default_kind``),
    e.g. a ratings export. Timestamps are divided by ``timestamp_divisor``
    (1000 for millisecond logs).
    """

    user: str = "user_id"
    item: str = "item_id"
    kind: str | None = "event"
    timestamp: str = "timestamp"
    value: str | None = None
    kind_map: dict = field(default_factory=lambda: {k: k for k in EVENT_KINDS})
    default_kind: str = "view"
    timestamp_divisor: int = 1


RETAIL_ROCKET_SCHEMA = EventSchema(
    user="visitorid",
    item="itemid",
    kind="event",
    timestamp="timestamp",
    kind_map={"view": "view", "addtocart": "add_to_cart", "transaction": "purchase"},
    timestamp_divisor=1000,
)

RATINGS_SCHEMA = EventSchema(
    user="user_id", item="item_id", kind=None, timestamp="timestamp", value="rating", default_kind="rating"
)


class EventList(list):
    """List of events that also remembers which input rows were skipped."""

    def __init__(self, events=(), skipped=None):
        super().__init__(events)
        self.skipped: list[tuple[int, str]] = skipped or []

    @property
    def skip_count(self) -> int:
        return len(self.skipped)


def _parse_row(row, schema):
    user = (row[schema.user] or "").strip()
    item = (row[schema.item] or "").strip()
    if not user or not item:
        raise ValueError("missing user or item")
    if schema.kind is None:
        kind = schema.default_kind
    else:
        raw_kind = (row[schema.kind] or "").strip()
        if raw_kind not in schema.kind_map:
            raise ValueError(f"unmapped event kind {raw_kind!r}")
        kind = schema.kind_map[raw_kind]
    ts = int(row[schema.timestamp].strip()) // schema.timestamp_divisor
    value = None
    if schema.value is not None and kind == "rating":
        value = float(row[schema.value])
    return InteractionEvent(user, item, kind, ts, value)


def load_events(path, schema: EventSchema | None = None) -> EventList:
    """Read an event CSV (header required). Malformed rows are skipped and counted."""
    schema = schema or EventSchema()
    required = [schema.user, schema.item, schema.timestamp]
    if schema.kind is not None:
        required.append(schema.kind)
    if schema.value is not None:
        required.append(schema.value)
    out = EventList()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in required if c not in (reader.fieldnames or [])]
        if missing:
            raise MissingColumnError(f"columns missing from {path}: {missing}", stage="ingest")
        for idx, row in enumerate(reader):
            try:
                out.append(_parse_row(row, schema))
            except (ValueError, TypeError, AttributeError) as exc:
                out.skipped.append((idx, str(exc)))
    if out.skipped:
        log.warning("skipped %d malformed rows in %s (first at row %d)", out.skip_count, path, out.skipped[0][0])
    return out


def load_items(path, numeric_columns=(), text_columns=(), id_column="item_id", category_column="category"):
    """Read an item catalog CSV. Empty numeric cells become NaN (imputed later)."""
    items = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in (id_column, category_column, *numeric_columns, *text_columns) if c not in (reader.fieldnames or [])]
        if missing:
            raise MissingColumnError(f"columns missing from {path}: {missing}", stage="ingest")
        for row in reader:
            feats = []
            for c in numeric_columns:
                try:
                    feats.append(float(row[c]))
                except (TypeError, ValueError):
                    feats.append(math.nan)
            items.append(
                ItemRecord(
                    item_id=(row[id_column] or "").strip(),
                    category=(row[category_column] or "").strip() or None,
                    numeric_features=feats,
                    text_fields=[row[c] or "" for c in text_columns],
                )
            )
    return items


# ------------------------------------------------------------------ synthetic


@dataclass
class SyntheticConfig:
    n_items: int = 200
    n_sessions: int = 2000
    n_blocks: int = 4
    noise: float = 0.1
    seed: int = 1
    popularity_skew: float = 1.0

    def validate(self):
        if self.n_blocks < 2:
            raise InvalidConfigError("n_blocks must be >= 2", stage="synth")
        if self.n_items <= 0 or self.n_items % self.n_blocks:
            raise InvalidConfigError("n_items must be a positive multiple of n_blocks", stage="synth")
        if self.n_sessions < 1:
            raise InvalidConfigError("n_sessions must be >= 1", stage="synth")
        if not 0.0 <= self.noise <= 1.0:
            raise InvalidConfigError("noise must lie in [0, 1]", stage="synth")


def _item_id(i):
    return f"i{i:05d}"


def generate_synthetic(n_items, n_sessions, n_blocks, noise, seed, popularity_skew=1.0):
    """Planted-block catalog and sessions.

    Items are split into ``n_blocks`` contiguous equal blocks (the block is the
    category). A session picks one block; each position is drawn from that block
    with probability ``1 - noise`` and from the other blocks otherwise. Within a
    block, items follow a Zipf-like popularity (exponent ``popularity_skew``,
    0 gives uniform) over a seeded random ranking. Items do not repeat inside a
    session while the pool allows it.
    """
    cfg = SyntheticConfig(n_items, n_sessions, n_blocks, noise, seed, popularity_skew)
    cfg.validate()
    rng = np.random.default_rng(seed)
    size = n_items // n_blocks
    block_of = np.arange(n_items) // size

    weight = np.empty(n_items)
    for b in range(n_blocks):
        ranks = rng.permutation(size)
        weight[b * size : (b + 1) * size] = 1.0 / (ranks + 1.0) ** popularity_skew

    items = []
    for i in range(n_items):
        b = int(block_of[i])
        feats = [
            round(b / (n_blocks - 1) + float(rng.normal(0.0, 0.05)), 6),
            round(float(weight[i]), 6),
            round(float(rng.uniform(0.0, 10.0)), 6),
        ]
        items.append(ItemRecord(_item_id(i), f"block{b:02d}", feats, [f"Item {i} / Block-{b}!"]))

    n_users = max(1, n_sessions // 4)
    sessions = []
    for s in range(n_sessions):
        b = int(rng.integers(n_blocks))
        length = int(rng.integers(2, 13))
        user = f"u{int(rng.integers(n_users)):05d}"
        start = s * 7200 + int(rng.integers(0, 3600))
        in_block = block_of == b
        chosen: list[int] = []
        for _ in range(length):
            pool = in_block if rng.random() >= noise else ~in_block
            w = np.where(pool, weight, 0.0)
            w[chosen] = 0.0
            if w.sum() == 0.0:
                # pool exhausted: allow repeats, but never the previous item
                w = np.where(pool, weight, 0.0)
                w[chosen[-1]] = 0.0
                if w.sum() == 0.0:
                    w = np.where(pool, weight, 0.0)
            chosen.append(int(rng.choice(n_items, p=w / w.sum())))
        ids = tuple(_item_id(i) for i in chosen)
        raw = tuple((iid, start + 60 * p) for p, iid in enumerate(ids))
        sessions.append(Session(f"s{s:06d}", user, ids, start, start + 60 * (length - 1), raw))
    return items, sessions


def sessions_to_events(sessions) -> list[InteractionEvent]:
    return [InteractionEvent(s.user_id, iid, "view", ts) for s in sessions for iid, ts in s.raw]


def write_synthetic(out_dir, items, sessions, config: SyntheticConfig):
    """Persist a synthetic dataset as items.csv, sessions.csv and manifest.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n_feat = max((len(it.numeric_features) for it in items), default=0)
    with open(out / "items.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["item_id", "category", *[f"f{j}" for j in range(n_feat)], "title"])
        for it in items:
            w.writerow([it.item_id, it.category, *[repr(v) for v in it.numeric_features], " | ".join(it.text_fields)])
    with open(out / "sessions.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["session_id", "user_id", "position", "item_id", "timestamp"])
        for s in sessions:
            for pos, (iid, ts) in enumerate(s.raw):
                w.writerow([s.session_id, s.user_id, pos, iid, ts])
    manifest = {"generator": "planted_blocks", "config": asdict(config), "n_items": len(items), "n_sessions": len(sessions)}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_synthetic(data_dir):
    """Load a directory written by :func:`write_synthetic` as (items, events, manifest)."""
    d = Path(data_dir)
    manifest = json.loads((d / "manifest.json").read_text(encoding="utf-8"))
    with open(d / "items.csv", newline="", encoding="utf-8") as fh:
        header = next(csv.reader(fh))
    numeric = [c for c in header if c.startswith("f") and c[1:].isdigit()]
    items = load_items(d / "items.csv", numeric_columns=numeric, text_columns=["title"])
    schema = EventSchema(user="user_id", item="item_id", kind=None, timestamp="timestamp")
    events = load_events(d / "sessions.csv", schema)
    return items, events, manifest


# ------------------------------------------------------------ sessionization


def sessionize(events, gap_seconds: int = 1800) -> list[Session]:
    """Group each user's events into sessions split at gaps longer than ``gap_seconds``.

    Consecutive repeats of the same item inside a session collapse to the first
    occurrence. Output is ordered by user id, then time.
    """
    if gap_seconds <= 0:
        raise InvalidConfigError("gap_seconds must be positive", stage="sessionize")
    ordered = sorted(events, key=lambda e: (str(e.user_id), e.timestamp, str(e.item_id)))
    sessions = []
    for user, evs in groupby(ordered, key=lambda e: str(e.user_id)):
        evs = list(evs)
        runs = [[evs[0]]]
        for prev, cur in zip(evs, evs[1:]):
            if cur.timestamp - prev.timestamp > gap_seconds:
                runs.append([cur])
            else:
                runs[-1].append(cur)
        for n, run in enumerate(runs):
            items = [run[0].item_id]
            for e in run[1:]:
                if e.item_id != items[-1]:
                    items.append(e.item_id)
            raw = tuple((e.item_id, e.timestamp) for e in run)
            sessions.append(Session(f"{user}#{n:04d}", user, tuple(items), run[0].timestamp, run[-1].timestamp, raw))
    return sessions


def split_chronological(sessions, ratio: float = 0.7) -> SplitDataset:
    """First ceil(ratio * N) sessions by (start_ts, session_id) train, the rest test."""
    if not 0.0 < ratio < 1.0:
        raise InvalidConfigError("ratio must lie strictly between 0 and 1", stage="split")
    if not sessions:
        raise EmptyInputError("no sessions to split", stage="split")
    ordered = sorted(sessions, key=lambda s: (s.start_ts, s.session_id))
    # rounding guards against 0.7 * 10 = 7.000000000000001
    n_train = math.ceil(round(ratio * len(ordered), 9))
    return SplitDataset(ordered[:n_train], ordered[n_train:], ratio)
