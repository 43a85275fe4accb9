"""Collections of short time series: containers, ingestion and preprocessing.

The data unit throughout the package is a collection of short series that are
assumed to share one stationary dynamics. The sufficient statistics for the
likelihood are the per-series consecutive transitions (x, dx, dt), which never
cross series boundaries.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateDataError, IngestError, PreconditionError

__all__ = [
    "TimeSeries",
    "TimeSeriesCollection",
    "Transition",
    "TransitionSet",
    "TimescaleSummary",
    "to_transitions",
    "characteristic_timescale",
    "filter_by_timestep",
    "clr_transform",
    "apply_pseudocount",
    "read_observations_csv",
    "write_observations_csv",
    "collection_to_json",
    "collection_from_json",
]


def _as_readonly(a) -> np.ndarray:
    out = np.asarray(a, dtype=float)
    out = out.copy()
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class TimeSeries:
    """One sampling unit's observations: strictly increasing times, >= 2 points."""

    unit_id: str
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "times", _as_readonly(self.times))
        object.__setattr__(self, "values", _as_readonly(self.values))
        if self.times.ndim != 1 or self.values.ndim != 1:
            raise IngestError(f"series {self.unit_id!r}: times and values must be 1-D")
        if len(self.times) != len(self.values):
            raise IngestError(f"series {self.unit_id!r}: length mismatch")
        if len(self.times) < 2:
            raise IngestError(f"series {self.unit_id!r}: needs at least 2 points")
        if not np.all(np.isfinite(self.times)) or not np.all(np.isfinite(self.values)):
            raise IngestError(f"series {self.unit_id!r}: non-finite entries")
        if np.any(np.diff(self.times) <= 0):
            raise IngestError(f"series {self.unit_id!r}: times must be strictly increasing")

    def __len__(self) -> int:
        return len(self.times)


@dataclass(frozen=True)
class TimeSeriesCollection:
    """Non-empty set of series sharing one (assumed) stationary dynamics."""

    series: tuple[TimeSeries, ...]
    value_range: tuple[float, float] = field(init=False)

    def __post_init__(self):
        series = tuple(self.series)
        if not series:
            raise IngestError("collection must contain at least one series")
        object.__setattr__(self, "series", series)
        lo = min(float(s.values.min()) for s in series)
        hi = max(float(s.values.max()) for s in series)
        object.__setattr__(self, "value_range", (lo, hi))

    @property
    def n_points(self) -> int:
        return sum(len(s) for s in self.series)

    def all_values(self) -> np.ndarray:
        return np.concatenate([s.values for s in self.series])


@dataclass(frozen=True)
class Transition:
    """One consecutive pair within a series: state x, increment dx over dt > 0."""

    x: float
    dx: float
    dt: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.dx) and math.isfinite(self.dt)):
            raise PreconditionError("transition fields must be finite")
        if self.dt <= 0:
            raise PreconditionError("transition dt must be positive")


@dataclass(frozen=True)
class TransitionSet:
    """Flattened (x, dx, dt) triples; the likelihood's sufficient data."""

    transitions: tuple[Transition, ...]
    source: TimeSeriesCollection | None = None

    def __len__(self) -> int:
        return len(self.transitions)

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Return (x, dx, dt) as float arrays, in stable series-then-time order."""
        n = len(self.transitions)
        x = np.empty(n)
        dx = np.empty(n)
        dt = np.empty(n)
        for i, t in enumerate(self.transitions):
            x[i], dx[i], dt[i] = t.x, t.dx, t.dt
        return x, dx, dt


@dataclass(frozen=True)
class TimescaleSummary:
    """Characteristic time scale t_c = d^2 / <dx^2/dt> plus its ingredients."""

    t_c: float
    d: float
    mean_sq_rate: float


def to_transitions(c: TimeSeriesCollection) -> TransitionSet:
    """Difference each series into (x, dx, dt) triples.

    One transition per consecutive pair within a series; nothing crosses a
    series boundary. Ordering is stable: series order, then time order.
    """
    out = []
    for s in c.series:
        dts = np.diff(s.times)
        dxs = np.diff(s.values)
        for x, dx, dt in zip(s.values[:-1], dxs, dts):
            out.append(Transition(float(x), float(dx), float(dt)))
    return TransitionSet(tuple(out), source=c)


def characteristic_timescale(c: TimeSeriesCollection) -> TimescaleSummary:
    """Apparent time to traverse the observed range by fluctuations.

    t_c = d^2 / <dx^2/dt>, with d the full observed value range and the mean
    taken over all transitions. Undefined (degenerate) when every dx is zero.
    """
    x, dx, dt = to_transitions(c).arrays()
    if len(x) == 0:
        raise PreconditionError("collection yields no transitions")
    mean_sq_rate = float(np.mean(dx * dx / dt))
    if mean_sq_rate == 0.0:
        raise DegenerateDataError("all increments are zero; t_c is undefined")
    d = float(c.value_range[1] - c.value_range[0])
    return TimescaleSummary(t_c=d * d / mean_sq_rate, d=d, mean_sq_rate=mean_sq_rate)


def filter_by_timestep(c: TimeSeriesCollection, max_dt: float) -> TimeSeriesCollection:
    """Split series at any gap exceeding max_dt and drop fragments shorter than 2.

    A series that splits gets fragment-indexed ids ("unit#0", "unit#1", ...);
    an unsplit series keeps its id, which makes the operation idempotent.
    """
    if max_dt <= 0:
        raise PreconditionError("max_dt must be positive")
    kept = []
    for s in c.series:
        gaps = np.diff(s.times)
        cut = np.flatnonzero(gaps > max_dt) + 1
        pieces = np.split(np.arange(len(s)), cut)
        frags = [idx for idx in pieces if len(idx) >= 2]
        split = len(pieces) > 1
        for k, idx in enumerate(frags):
            uid = f"{s.unit_id}#{k}" if split else s.unit_id
            kept.append(TimeSeries(uid, s.times[idx], s.values[idx]))
    if not kept:
        raise DegenerateDataError(f"no fragments of length >= 2 survive max_dt={max_dt}")
    return TimeSeriesCollection(tuple(kept))


def apply_pseudocount(m, policy: str = "half-min") -> np.ndarray:
    """Replace zeros in an abundance matrix before a log-ratio transform.

    "half-min" (default) substitutes half the smallest strictly positive entry
    of the whole matrix; "none" leaves the matrix untouched.
    """
    m = np.asarray(m, dtype=float)
    if policy == "none":
        return m
    if policy != "half-min":
        raise PreconditionError(f"unknown pseudocount policy {policy!r}")
    if np.any(m < 0):
        raise PreconditionError("abundance matrix must be non-negative")
    positive = m[m > 0]
    if positive.size == 0:
        raise DegenerateDataError("abundance matrix has no positive entries")
    out = m.copy()
    out[out == 0] = 0.5 * positive.min()
    return out


def clr_transform(m) -> np.ndarray:
    """Centred log-ratio transform, row-wise: log(r_i) - mean_j log(r_j).

    Rows are samples. Entries must be strictly positive (apply a pseudocount
    upstream); every output row sums to zero.
    """
    m = np.atleast_2d(np.asarray(m, dtype=float))
    if np.any(m <= 0) or not np.all(np.isfinite(m)):
        raise PreconditionError("clr_transform requires strictly positive finite entries")
    logs = np.log(m)
    return logs - logs.mean(axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# Ingestion / serialization
# ---------------------------------------------------------------------------

CSV_HEADER = ("unit_id", "time", "value")


def read_observations_csv(path) -> TimeSeriesCollection:
    """Read the one-row-per-observation CSV format (unit_id, time, value).

    Rows are grouped by unit_id and sorted by time. Duplicate (unit_id, time)
    pairs and malformed rows raise IngestError with the offending line number.
    """
    groups: dict[str, list[tuple[float, float]]] = {}
    order: list[str] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestError(f"{path}: empty file") from None
        if [h.strip() for h in header[:3]] != list(CSV_HEADER):
            raise IngestError(f"{path}: line 1: expected header {','.join(CSV_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) < 3:
                raise IngestError(f"{path}: line {lineno}: expected 3 columns, got {len(row)}")
            uid = row[0].strip()
            try:
                t = float(row[1])
                v = float(row[2])
            except ValueError as exc:
                raise IngestError(f"{path}: line {lineno}: {exc}") from None
            if uid not in groups:
                groups[uid] = []
                order.append(uid)
            groups[uid].append((t, v))
    series = []
    for uid in order:
        rows = sorted(groups[uid])
        times = [t for t, _ in rows]
        if len(set(times)) != len(times):
            raise IngestError(f"{path}: duplicate (unit_id, time) pair for unit {uid!r}")
        series.append(TimeSeries(uid, times, [v for _, v in rows]))
    return TimeSeriesCollection(tuple(series))


def write_observations_csv(c: TimeSeriesCollection, path) -> None:
    """Write a collection in the one-row-per-observation CSV format."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for s in c.series:
            for t, v in zip(s.times, s.values):
                writer.writerow([s.unit_id, repr(float(t)), repr(float(v))])


def collection_to_json(c: TimeSeriesCollection) -> dict:
    return {
        "series": [
            {"unit_id": s.unit_id, "times": s.times.tolist(), "values": s.values.tolist()}
            for s in c.series
        ],
        "value_range": list(c.value_range),
    }


def collection_from_json(doc: dict) -> TimeSeriesCollection:
    try:
        series = tuple(
            TimeSeries(str(s["unit_id"]), s["times"], s["values"]) for s in doc["series"]
        )
    except (KeyError, TypeError) as exc:
        raise IngestError(f"malformed collection document: {exc}") from None
    return TimeSeriesCollection(series)


def timescale_to_json(ts: TimescaleSummary) -> dict:
    return {"t_c": ts.t_c, "d": ts.d, "mean_sq_rate": ts.mean_sq_rate}


def dump_json(doc, path) -> None:
    """Write a JSON document with a stable key order (byte-reproducible)."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)
