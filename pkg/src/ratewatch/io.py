"""File formats: trace CSV, report / ground-truth / scenario JSON, histogram CSV.

Timestamps are integer nanoseconds everywhere. Rates are written with three
fractional digits. JSON is emitted with sorted keys so identical inputs give
byte-identical files.
"""

from __future__ import annotations

import csv
import io
import json
import math
import re
from importlib import resources
from pathlib import Path
from typing import Mapping

import jsonschema

from .detector import SensorEventTrace, UsageInterval, UsageReport
from .device import (
    ALL_SENSORS,
    CustomRate,
    DetectionThreshold,
    DeviceProfile,
    NamedConstant,
    ProfileError,
    RateRequest,
    SensorKind,
    get_profile,
    load_profile,
)
from .simulator import (
    AppState,
    GroundTruthInterval,
    GroundTruthLog,
    Registration,
    Scenario,
    ScenarioError,
    SimApp,
    StandardTimeline,
)

__all__ = [
    "FormatError",
    "dumps_json",
    "ground_truth_from_dict",
    "ground_truth_to_dict",
    "histogram_csv",
    "parse_request",
    "parse_traces",
    "read_profile",
    "report_from_dict",
    "report_to_dict",
    "scenario_from_dict",
    "scenario_to_dict",
    "validate_report",
    "write_traces",
]

TRACE_HEADER = ("sensor", "timestamp_ns")
REPORT_FORMAT = "ratewatch-report/1"
TRUTH_FORMAT = "ratewatch-ground-truth/1"
SCENARIO_FORMAT = "ratewatch-scenario/1"


class FormatError(ValueError):
    """Malformed input file."""


def _hz(x: float) -> float:
    return round(float(x), 3)


def dumps_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


# -- traces -----------------------------------------------------------------

def write_traces(traces: Mapping[SensorKind, SensorEventTrace]) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACE_HEADER)
    for key in sorted(traces, key=lambda k: SensorKind.parse(k).value):
        trace = traces[key]
        name = trace.sensor.value
        for ts in trace.timestamps.tolist():
            w.writerow((name, ts))
    return buf.getvalue().encode("utf-8")


def parse_traces(data: "bytes | str") -> dict[SensorKind, SensorEventTrace]:
    """Parse a trace CSV; errors name the offending line (the header is line 1)."""
    text = data.decode("utf-8") if isinstance(data, bytes) else data
    rows = csv.reader(io.StringIO(text))
    header = next(rows, None)
    if header is None or tuple(h.strip() for h in header) != TRACE_HEADER:
        raise FormatError(f"trace file must start with header {','.join(TRACE_HEADER)!r}")
    grouped: dict[SensorKind, list[int]] = {}
    last: tuple[str, int] | None = None
    for lineno, row in enumerate(rows, start=2):
        if not row:
            continue
        if len(row) != 2:
            raise FormatError(f"line {lineno}: expected 2 fields, got {len(row)}")
        try:
            sensor = SensorKind.parse(row[0])
        except ProfileError as exc:
            raise FormatError(f"line {lineno}: {exc}") from None
        try:
            ts = int(row[1])
        except ValueError:
            raise FormatError(f"line {lineno}: timestamp {row[1]!r} is not an integer") from None
        key = (sensor.value, ts)
        if last is not None and key <= last:
            raise FormatError(f"line {lineno}: rows must be sorted by (sensor, timestamp_ns) "
                              f"with strictly increasing timestamps")
        last = key
        grouped.setdefault(sensor, []).append(ts)
    return {s: SensorEventTrace(s, ts) for s, ts in grouped.items()}


# -- reports ----------------------------------------------------------------

_SCHEMA = None


def _report_schema() -> dict:
    global _SCHEMA
    if _SCHEMA is None:
        _SCHEMA = json.loads(resources.files("ratewatch").joinpath("schemas/report.schema.json").read_text())
    return _SCHEMA


def validate_report(doc: dict) -> None:
    try:
        jsonschema.validate(doc, _report_schema())
    except jsonschema.ValidationError as exc:
        raise FormatError(f"report does not match schema: {exc.message}") from None


def _interval_to_dict(iv: UsageInterval) -> dict:
    return {
        "start_ns": int(iv.start_ns),
        "end_ns": int(iv.end_ns),
        "rate_hz": _hz(iv.estimated_rate),
        "constant": iv.constant_label,
        "phase": iv.phase,
    }


def report_to_dict(report: UsageReport, metrics: Mapping | None = None) -> dict:
    sensors = {}
    for sensor in report.sensors:
        ivs = report.intervals.get(sensor, [])
        sensors[sensor.value] = {
            "status": report.status.get(sensor, "ok"),
            "any_usage": bool(ivs),
            "intervals": [_interval_to_dict(iv) for iv in ivs],
        }
    flags = {k: v for k, v in report.flags.items()}
    flags["all_three"] = report.all_three
    flags["blind_spot_at_or_below_hz"] = {s.value: _hz(f) for s, f in report.blind_spots.items()}
    doc = {
        "format": REPORT_FORMAT,
        "profile": report.profile_name,
        "f_min_hz": {s.value: _hz(f) for s, f in report.thresholds.f_min.items()},
        "thresholds_hz": {s.value: _hz(t) for s, t in report.thresholds.thresholds.items()},
        "sensors": sensors,
        "flags": flags,
        "metrics": dict(metrics or {}),
    }
    validate_report(doc)
    return doc


def _constant_from_label(label: str | None, rate: float):
    if label is None:
        return None
    if label == "CUSTOM":
        return CustomRate(rate)
    return NamedConstant(label)


def report_from_dict(doc: dict) -> UsageReport:
    validate_report(doc)
    thresholds = DetectionThreshold({SensorKind.parse(k): v for k, v in doc["f_min_hz"].items()})
    report = UsageReport(doc.get("profile"), thresholds)
    for name, body in doc["sensors"].items():
        sensor = SensorKind.parse(name)
        report.status[sensor] = body["status"]
        report.intervals[sensor] = [
            UsageInterval(sensor, iv["start_ns"], iv["end_ns"], iv["rate_hz"],
                          _constant_from_label(iv["constant"], iv["rate_hz"]), iv["phase"])
            for iv in body["intervals"]]
    report.flags = {k: v for k, v in doc["flags"].items()
                    if k not in ("all_three", "blind_spot_at_or_below_hz")}
    return report


# -- ground truth -----------------------------------------------------------

def _timeline_to_dict(tl: StandardTimeline | None):
    if tl is None:
        return None
    return {"launch_s": tl.launch_s, "background_s": tl.background_s, "terminate_s": tl.terminate_s}


def _timeline_from_dict(d) -> StandardTimeline | None:
    return None if d is None else StandardTimeline(**d)


def ground_truth_to_dict(truth: GroundTruthLog) -> dict:
    return {
        "format": TRUTH_FORMAT,
        "duration_s": truth.duration_s,
        "timeline": _timeline_to_dict(truth.timeline),
        "monitor_rates_hz": {s.value: _hz(r) for s, r in truth.monitor_rates.items()},
        "sensors": {
            s.value: [{
                "start_s": g.start_s,
                "end_s": g.end_s,
                "rate_hz": _hz(g.rate_hz),
                "app_ids": sorted(g.app_ids),
                "state": None if g.state is None else g.state.value,
            } for g in ivs]
            for s, ivs in truth.intervals.items()
        },
    }


def ground_truth_from_dict(doc: dict) -> GroundTruthLog:
    if doc.get("format") != TRUTH_FORMAT:
        raise FormatError(f"not a ground-truth file (format {doc.get('format')!r})")
    try:
        intervals = {
            SensorKind.parse(s): [GroundTruthInterval(g["start_s"], g["end_s"], g["rate_hz"],
                                                      frozenset(g["app_ids"]),
                                                      None if g["state"] is None else AppState(g["state"]))
                                  for g in ivs]
            for s, ivs in doc["sensors"].items()}
        monitor = {SensorKind.parse(s): r for s, r in doc["monitor_rates_hz"].items()}
        return GroundTruthLog(intervals, monitor, doc["duration_s"], _timeline_from_dict(doc["timeline"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"bad ground-truth file: {exc}") from exc


# -- scenarios --------------------------------------------------------------

_REQ_RE = re.compile(r"^\s*([0-9]*\.?[0-9]+(?:[eE][-+]?[0-9]+)?)\s*(hz|us|ms)\s*$", re.IGNORECASE)


def parse_request(raw: str, permission: bool = False) -> RateRequest:
    """Parse ``GAME``, ``20Hz``, ``5000us`` or ``20ms`` into a request.

    Interval forms are converted to Hz; a bare number is rejected because its
    unit would be ambiguous.
    """
    text = str(raw).strip()
    if text.upper() in NamedConstant.__members__:
        return RateRequest.named(text.upper(), permission)
    m = _REQ_RE.match(text)
    if not m:
        raise ScenarioError(f"bad rate request {raw!r}: use a constant name or a value "
                            f"with an Hz, us or ms suffix")
    value, unit = float(m.group(1)), m.group(2).lower()
    if value <= 0:
        raise ScenarioError(f"rate request {raw!r} must be positive")
    hz = {"hz": value, "us": 1e6 / value, "ms": 1e3 / value}[unit]
    return RateRequest.custom(hz, permission)


def _request_str(req: RateRequest) -> str:
    return req.constant.value if req.constant is not None else f"{req.hz:g}Hz"


def scenario_to_dict(sc: Scenario) -> dict:
    return {
        "format": SCENARIO_FORMAT,
        "name": sc.name,
        "profile": sc.profile.name,
        "duration_s": sc.duration_s,
        "seed": sc.seed,
        "noise_half_width": sc.noise_half_width,
        "max_outlier_run": sc.max_outlier_run,
        "sensors": [s.value for s in sc.sensors],
        "timeline": _timeline_to_dict(sc.timeline),
        "monitor": {s.value: {"request": _request_str(r), "high_rate_permission": r.high_rate_permission}
                    for s, r in sc.monitor_requests.items()},
        "apps": [{
            "id": app.app_id,
            "persists_after_termination": app.persists_after_termination,
            "lifecycle": [[t, state.value] for t, state in app.lifecycle],
            "registrations": [{
                "sensor": reg.sensor.value,
                "request": _request_str(reg.request),
                "high_rate_permission": reg.request.high_rate_permission,
                "register_s": reg.register_s,
                "unregister_s": reg.unregister_s,
            } for reg in app.registrations],
        } for app in sc.apps],
    }


def scenario_from_dict(doc: dict, profile: DeviceProfile | None = None) -> Scenario:
    """Build a scenario; ``profile`` overrides the built-in named in the file."""
    try:
        if profile is None:
            profile = get_profile(doc["profile"])
        apps = []
        for a in doc.get("apps", []):
            regs = [Registration(SensorKind.parse(r["sensor"]),
                                 parse_request(r["request"], r.get("high_rate_permission", False)),
                                 float(r["register_s"]),
                                 None if r.get("unregister_s") is None else float(r["unregister_s"]))
                    for r in a.get("registrations", [])]
            life = [(float(t), AppState(s)) for t, s in a.get("lifecycle", [])]
            apps.append(SimApp(str(a["id"]), tuple(regs), tuple(life),
                               bool(a.get("persists_after_termination", False))))
        monitor = {SensorKind.parse(s): parse_request(m["request"], m.get("high_rate_permission", False))
                   for s, m in (doc.get("monitor") or {}).items()}
        kwargs = {}
        for key in ("noise_half_width", "seed", "max_outlier_run"):
            if key in doc:
                kwargs[key] = doc[key]
        return Scenario(profile, tuple(apps), duration_s=float(doc["duration_s"]),
                        monitor_requests=monitor,
                        sensors=tuple(SensorKind.parse(s) for s in doc.get("sensors", [s.value for s in ALL_SENSORS])),
                        name=doc.get("name", "scenario"),
                        timeline=_timeline_from_dict(doc.get("timeline")), **kwargs)
    except (KeyError, TypeError) as exc:
        raise ScenarioError(f"bad scenario file: missing or malformed {exc}") from exc


# -- profiles / aggregates --------------------------------------------------

def read_profile(ref: str) -> DeviceProfile:
    """Resolve ``ref`` as a profile file path, falling back to a built-in name."""
    path = Path(ref)
    if path.is_file():
        return load_profile(path.read_text(encoding="utf-8"))
    return get_profile(ref)


def histogram_csv(hist: Mapping[str, Mapping[str, int]]) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("sensor", "bin", "count"))
    for sensor in sorted(hist):
        for b, count in hist[sensor].items():
            w.writerow((sensor, b, count))
    return buf.getvalue().encode("utf-8")


def finite_json(obj):
    """Round floats to 3 digits and reject non-finite values."""
    if isinstance(obj, float):
        if not math.isfinite(obj):
            raise ValueError("non-finite value in output")
        return round(obj, 3)
    if isinstance(obj, dict):
        return {str(k): finite_json(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [finite_json(v) for v in obj]
    return obj
