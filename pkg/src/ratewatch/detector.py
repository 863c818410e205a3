"""Usage detection from the monitor's event timestamps.

Pipeline per sensor: instant rates from consecutive timestamps, removal of
short-lived outlier values, then thresholding at ``f_min + 0.5`` Hz.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from ._validation import TraceError, check_rates, check_timestamps
from .device import (
    ALL_SENSORS,
    CustomRate,
    DetectionThreshold,
    DeviceProfile,
    NamedConstant,
    SensorKind,
    classify_rate,
)

__all__ = [
    "OutlierCleaner",
    "RateSeries",
    "SensorEventTrace",
    "TraceError",
    "UsageDetector",
    "UsageInterval",
    "UsageReport",
    "clean_outliers",
    "detect_all",
    "detect_usage",
    "instant_rates",
]

NS = 1_000_000_000
MIN_RUN = 3
DEFAULT_BUCKET_HZ = 0.1
DEFAULT_MIN_DURATION_MS = 100
DEFAULT_MERGE_GAP_MS = 500
DEFAULT_PHASE_SLACK_MS = 300


@dataclass(frozen=True, eq=False)
class SensorEventTrace:
    sensor: SensorKind
    timestamps: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "sensor", SensorKind.parse(self.sensor))
        arr = check_timestamps(self.timestamps)
        arr.setflags(write=False)
        object.__setattr__(self, "timestamps", arr)

    def __len__(self):
        return len(self.timestamps)

    def __eq__(self, other):
        if not isinstance(other, SensorEventTrace):
            return NotImplemented
        return self.sensor is other.sensor and np.array_equal(self.timestamps, other.timestamps)

    @property
    def duration_s(self) -> float:
        return float(self.timestamps[-1] - self.timestamps[0]) / NS if len(self) else 0.0


@dataclass(frozen=True, eq=False)
class RateSeries:
    """Instant rates; element ``i`` covers the gap ending at ``times[i]``.

    ``status`` is ``"ok"``, ``"insufficient"`` (fewer than two timestamps) or
    ``"degenerate"`` (too short for outlier cleaning).
    """

    times: np.ndarray
    rates: np.ndarray
    origin: int = 0
    cleaned: bool = False
    status: str = "ok"

    def __len__(self):
        return len(self.rates)

    @property
    def starts(self) -> np.ndarray:
        if not len(self.times):
            return self.times
        return np.concatenate(([self.origin], self.times[:-1])).astype(np.int64)

    def with_rates(self, rates: np.ndarray, **changes) -> "RateSeries":
        fields = dict(times=self.times, rates=rates, origin=self.origin,
                      cleaned=self.cleaned, status=self.status)
        fields.update(changes)
        return RateSeries(**fields)


def instant_rates(trace: SensorEventTrace) -> RateSeries:
    ts = trace.timestamps
    if len(ts) < 2:
        empty = np.empty(0, dtype=np.int64)
        return RateSeries(empty, np.empty(0), int(ts[0]) if len(ts) else 0, status="insufficient")
    gaps = np.diff(ts)
    return RateSeries(ts[1:].copy(), NS / gaps.astype(np.float64), int(ts[0]))


def _clean_values(values: np.ndarray, bucket_hz: float) -> np.ndarray:
    values = values.copy()
    n = len(values)
    buckets = np.rint(values / bucket_hz).astype(np.int64)
    cut = np.flatnonzero(np.diff(buckets)) + 1
    starts = np.concatenate(([0], cut)).tolist()
    ends = np.concatenate((cut, [n])).tolist()
    m = len(starts)
    start = starts
    length = [e - s for s, e in zip(starts, ends)]
    bucket = [int(buckets[s]) for s in starts]
    prev = [i - 1 for i in range(m)]
    nxt = [i + 1 if i + 1 < m else -1 for i in range(m)]
    alive = [True] * m

    def interior(r):
        return prev[r] != -1 and nxt[r] != -1

    heap = [(length[r], start[r], r) for r in range(m) if length[r] < MIN_RUN and interior(r)]
    heapq.heapify(heap)

    def merge(a, b):
        # b is the right-hand neighbour of a
        length[a] += length[b]
        nxt[a] = nxt[b]
        if nxt[b] != -1:
            prev[nxt[b]] = a
        alive[b] = False
        return a

    while heap:
        ln, st, r = heapq.heappop(heap)
        if not alive[r] or length[r] != ln or start[r] != st or ln >= MIN_RUN or not interior(r):
            continue
        p, q = prev[r], nxt[r]
        magnitude = values[st:st + ln].mean()
        before, after = values[st - 1], values[st + ln]
        if abs(magnitude - before) <= abs(magnitude - after):
            values[st:st + ln] = before
            merged = merge(p, r)
            if nxt[merged] != -1 and bucket[nxt[merged]] == bucket[merged]:
                merged = merge(merged, nxt[merged])
        else:
            values[st:st + ln] = after
            bucket[r] = bucket[q]
            merged = merge(r, q)
            if prev[merged] != -1 and bucket[prev[merged]] == bucket[merged]:
                merged = merge(prev[merged], merged)
        if length[merged] < MIN_RUN and interior(merged):
            heapq.heappush(heap, (length[merged], start[merged], merged))
    return values


def clean_outliers(series: RateSeries, bucket_hz: float = DEFAULT_BUCKET_HZ) -> RateSeries:
    """Replace value runs shorter than three samples by the closer neighbouring value.

    Values are grouped into runs after rounding to ``bucket_hz`` buckets. Runs
    are absorbed shortest-first; on a tie the preceding value wins. Runs at
    either end of the series are left alone.
    """
    if bucket_hz <= 0:
        raise ValueError("bucket_hz must be positive")
    if len(series) < MIN_RUN:
        status = series.status if series.status == "insufficient" else "degenerate"
        return series.with_rates(series.rates.copy(), cleaned=True, status=status)
    return series.with_rates(_clean_values(series.rates, bucket_hz), cleaned=True)


@dataclass(frozen=True)
class UsageInterval:
    sensor: SensorKind
    start_ns: int
    end_ns: int
    estimated_rate: float
    constant: NamedConstant | CustomRate | None = None
    phase: str | None = None

    @property
    def duration_s(self) -> float:
        return (self.end_ns - self.start_ns) / NS

    @property
    def constant_label(self) -> str | None:
        return None if self.constant is None else self.constant.value


def _threshold_for(threshold, sensor: SensorKind) -> float:
    if isinstance(threshold, DetectionThreshold):
        return threshold.threshold(sensor)
    return float(threshold)


def detect_usage(series: RateSeries, threshold: "DetectionThreshold | float", sensor: "SensorKind | str",
                 min_duration_ms: int = DEFAULT_MIN_DURATION_MS,
                 merge_gap_ms: int = DEFAULT_MERGE_GAP_MS) -> list[UsageInterval]:
    """Stretches where the cleaned rate exceeds the threshold.

    Stretches separated by less than ``merge_gap_ms`` are merged; merged
    stretches shorter than ``min_duration_ms`` are dropped.
    """
    if not series.cleaned:
        raise ValueError("detect_usage requires a cleaned rate series")
    sensor = SensorKind.parse(sensor)
    thr = _threshold_for(threshold, sensor)
    if not len(series):
        return []
    above = series.rates > thr
    edges = np.diff(np.concatenate(([0], above.astype(np.int8), [0])))
    first = np.flatnonzero(edges == 1)
    last = np.flatnonzero(edges == -1) - 1
    starts = series.starts
    spans: list[list] = []
    merge_ns = merge_gap_ms * 1_000_000
    for i0, i1 in zip(first, last):
        s, e = int(starts[i0]), int(series.times[i1])
        peak = float(series.rates[i0:i1 + 1].max())
        if spans and s - spans[-1][1] < merge_ns:
            spans[-1][1] = e
            spans[-1][2] = max(spans[-1][2], peak)
        else:
            spans.append([s, e, peak])
    min_ns = min_duration_ms * 1_000_000
    return [UsageInterval(sensor, s, e, r) for s, e, r in spans if e - s >= min_ns]


@dataclass
class UsageReport:
    profile_name: str | None
    thresholds: DetectionThreshold
    intervals: dict[SensorKind, list[UsageInterval]] = field(default_factory=dict)
    status: dict[SensorKind, str] = field(default_factory=dict)
    flags: dict[str, object] = field(default_factory=dict)

    @property
    def blind_spots(self) -> dict[SensorKind, float]:
        """Usage at or below these rates cannot be observed by the monitor."""
        return dict(self.thresholds.f_min)

    @property
    def sensors(self) -> list[SensorKind]:
        return [s for s in ALL_SENSORS if s in self.intervals or s in self.status]

    def any_usage(self, sensor: "SensorKind | str") -> bool:
        return bool(self.intervals.get(SensorKind.parse(sensor)))

    @property
    def used_sensors(self) -> set[SensorKind]:
        return {s for s, ivs in self.intervals.items() if ivs}

    @property
    def all_three(self) -> bool:
        return all(self.any_usage(s) for s in ALL_SENSORS)

    @property
    def any(self) -> bool:
        return bool(self.used_sensors)

    def all_intervals(self) -> list[UsageInterval]:
        return [iv for s in self.sensors for iv in self.intervals.get(s, [])]

    def max_rate(self, sensor: "SensorKind | str") -> float | None:
        ivs = self.intervals.get(SensorKind.parse(sensor))
        return max(iv.estimated_rate for iv in ivs) if ivs else None


def _split_by_phase(iv: UsageInterval, series: RateSeries, windows, slack_ns: int) -> list[UsageInterval]:
    pieces = []
    for phase, a, b in windows:
        s, e = max(iv.start_ns, a), min(iv.end_ns, b)
        if e > s:
            pieces.append([phase, s, e])
    # slivers caused by event quantisation at phase edges join their neighbour
    changed = True
    while changed and len(pieces) > 1:
        changed = False
        for k, (phase, s, e) in enumerate(pieces):
            if e - s < slack_ns:
                if k == 0:
                    j = 1
                elif k == len(pieces) - 1:
                    j = k - 1
                else:
                    left, right = pieces[k - 1], pieces[k + 1]
                    j = k - 1 if left[2] - left[1] >= right[2] - right[1] else k + 1
                pieces[j][1] = min(pieces[j][1], s)
                pieces[j][2] = max(pieces[j][2], e)
                del pieces[k]
                changed = True
                break
    out = []
    starts = series.starts
    for phase, s, e in pieces:
        mask = (series.times > s) & (starts < e)
        rate = float(series.rates[mask].max()) if mask.any() else iv.estimated_rate
        out.append(UsageInterval(iv.sensor, s, e, min(rate, iv.estimated_rate), iv.constant, phase))
    return out


def detect_all(traces: Mapping[SensorKind, SensorEventTrace], profile: DeviceProfile | None = None,
               thresholds: DetectionThreshold | None = None, *,
               min_duration_ms: int = DEFAULT_MIN_DURATION_MS,
               merge_gap_ms: int = DEFAULT_MERGE_GAP_MS,
               bucket_hz: float = DEFAULT_BUCKET_HZ,
               timeline=None,
               phase_slack_ms: int = DEFAULT_PHASE_SLACK_MS) -> UsageReport:
    """Run the full pipeline on every sensor of one monitoring session.

    ``thresholds`` default to the profile's ``f_min + 0.5``. With a
    ``timeline`` (anything with a ``windows(end_s)`` method) intervals are split
    at phase boundaries and labelled with their phase.
    """
    if thresholds is None:
        if profile is None:
            raise ValueError("detect_all needs a device profile or explicit thresholds")
        thresholds = DetectionThreshold.from_profile(profile)
    report = UsageReport(profile.name if profile is not None else None, thresholds)
    for key, trace in traces.items():
        sensor = SensorKind.parse(key)
        if sensor not in thresholds.f_min:
            report.status[sensor] = "unprofiled"
            continue
        series = clean_outliers(instant_rates(trace), bucket_hz)
        report.status[sensor] = series.status
        found = detect_usage(series, thresholds, sensor, min_duration_ms, merge_gap_ms)
        if timeline is not None:
            end_s = float(trace.timestamps[-1]) / NS if len(trace) else 0.0
            windows = [(p, int(round(a * NS)), int(round(b * NS))) for p, a, b in timeline.windows(end_s)]
            found = [piece for iv in found
                     for piece in _split_by_phase(iv, series, windows, phase_slack_ms * 1_000_000)]
        if profile is not None and sensor in profile.sensors:
            found = [UsageInterval(iv.sensor, iv.start_ns, iv.end_ns, iv.estimated_rate,
                                   classify_rate(profile, sensor, iv.estimated_rate), iv.phase)
                     for iv in found]
        report.intervals[sensor] = found
    return report


class OutlierCleaner(TransformerMixin, BaseEstimator):
    """Transformer form of :func:`clean_outliers` for rate arrays or series."""

    def __init__(self, bucket_hz: float = DEFAULT_BUCKET_HZ):
        self.bucket_hz = bucket_hz

    def fit(self, X=None, y=None):
        if not self.bucket_hz > 0:
            raise ValueError("bucket_hz must be positive")
        self.n_features_in_ = 1
        return self

    def transform(self, X):
        check_is_fitted(self, "n_features_in_")
        if isinstance(X, RateSeries):
            return clean_outliers(X, self.bucket_hz)
        rates = check_rates(check_array(X, ensure_2d=False, dtype=np.float64))
        if len(rates) < MIN_RUN:
            return rates.copy()
        return _clean_values(rates, self.bucket_hz)


class UsageDetector(BaseEstimator):
    """Estimator wrapper around :func:`detect_all`.

    ``fit`` derives per-sensor thresholds, either from ``profile`` or, when
    given monitor-only traces, from their measured idle rate (rounded to
    0.5 Hz). ``predict`` maps a dict of traces to a :class:`UsageReport`.
    """

    def __init__(self, profile: DeviceProfile | None = None, margin_hz: float = 0.5,
                 min_duration_ms: int = DEFAULT_MIN_DURATION_MS,
                 merge_gap_ms: int = DEFAULT_MERGE_GAP_MS,
                 bucket_hz: float = DEFAULT_BUCKET_HZ, timeline=None):
        self.profile = profile
        self.margin_hz = margin_hz
        self.min_duration_ms = min_duration_ms
        self.merge_gap_ms = merge_gap_ms
        self.bucket_hz = bucket_hz
        self.timeline = timeline

    def fit(self, X: Mapping[SensorKind, SensorEventTrace] | None = None, y=None):
        if X is not None:
            f_min = {}
            for key, trace in X.items():
                series = clean_outliers(instant_rates(trace), self.bucket_hz)
                if series.status == "insufficient":
                    continue
                f_min[SensorKind.parse(key)] = round(float(np.median(series.rates)) * 2) / 2
            if not f_min:
                raise ValueError("no usable baseline traces to fit on")
        elif self.profile is not None:
            f_min = {s: c.f_min for s, c in self.profile.sensors.items()}
        else:
            raise ValueError("UsageDetector.fit needs baseline traces or a profile")
        self.f_min_ = f_min
        self.thresholds_ = DetectionThreshold(f_min, self.margin_hz)
        return self

    def predict(self, X: Mapping[SensorKind, SensorEventTrace]) -> UsageReport:
        check_is_fitted(self, "thresholds_")
        return detect_all(X, self.profile, self.thresholds_, min_duration_ms=self.min_duration_ms,
                          merge_gap_ms=self.merge_gap_ms, bucket_hz=self.bucket_hz,
                          timeline=self.timeline)

    def fit_predict(self, X, y=None) -> UsageReport:
        return self.fit(None if self.profile is not None else X).predict(X)
