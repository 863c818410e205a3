"""Device profiling: measure each sensor's minimum deliverable rate by probing."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .detector import SensorEventTrace, clean_outliers, instant_rates
from .device import (
    ALL_SENSORS,
    DetectionThreshold,
    DeviceProfile,
    RateRequest,
    SensorKind,
    load_profile,
    synthesize_caps,
)
from .simulator import Scenario, simulate

__all__ = [
    "DeviceProfiler",
    "ProbePlan",
    "ProfilingResult",
    "derive_thresholds",
    "profile_device",
    "merge_fragment",
    "profile_fragment",
    "simulated_probe",
]

log = logging.getLogger(__name__)

MAX_PROFILING_S = 120.0
Probe = Callable[[RateRequest, SensorKind], SensorEventTrace]


@dataclass(frozen=True)
class ProbePlan:
    candidates: tuple[float, ...] = (10.0, 7.0, 5.0, 2.0, 1.0, 0.5)
    dwell_s: float = 5.0

    def __post_init__(self):
        cands = tuple(float(c) for c in self.candidates)
        object.__setattr__(self, "candidates", cands)
        if not cands or any(b >= a for a, b in zip(cands, cands[1:])):
            raise ValueError("probe candidates must be non-empty and strictly descending")
        if cands[-1] <= 0:
            raise ValueError("probe candidates must be positive")
        if self.dwell_s < 2:
            raise ValueError("dwell must be at least 2 s")


@dataclass
class ProfilingResult:
    f_min: dict[SensorKind, float] = field(default_factory=dict)
    unprofiled: set[SensorKind] = field(default_factory=set)
    elapsed_s: float = 0.0


def _round_half(x: float) -> float:
    return round(x * 2.0) / 2.0


def profile_device(probe: Probe, plan: ProbePlan = ProbePlan(),
                   sensors: Iterable["SensorKind | str"] = ALL_SENSORS) -> ProfilingResult:
    """Request each candidate rate in turn and keep the lowest rate actually delivered."""
    result = ProfilingResult()
    floor = plan.candidates[-1]
    for sensor in (SensorKind.parse(s) for s in sensors):
        observed = []
        try:
            for hz in plan.candidates:
                trace = probe(RateRequest.custom(hz), sensor)
                series = clean_outliers(instant_rates(trace))
                if series.status == "insufficient":
                    raise RuntimeError(f"probe at {hz} Hz returned {len(trace)} events")
                result.elapsed_s += plan.dwell_s
                observed.append(float(np.median(series.rates)))
        except Exception as exc:  # a failing sensor must not stop the others
            log.warning("profiling %s failed: %s", sensor.value, exc)
            result.unprofiled.add(sensor)
            continue
        result.f_min[sensor] = max(_round_half(min(observed)), floor)
    if result.elapsed_s > MAX_PROFILING_S:
        log.warning("profiling took %.1f s of simulated time", result.elapsed_s)
    return result


def derive_thresholds(f_min: "ProfilingResult | dict") -> tuple[DetectionThreshold, set[SensorKind]]:
    """Thresholds at ``f_min + 0.5`` Hz; sensors without a value are returned as excluded."""
    if isinstance(f_min, ProfilingResult):
        values, excluded = dict(f_min.f_min), set(f_min.unprofiled)
    else:
        values, excluded = {}, set()
        for k, v in f_min.items():
            if v is None:
                excluded.add(SensorKind.parse(k))
            else:
                values[SensorKind.parse(k)] = v
    return DetectionThreshold(values), excluded


def simulated_probe(profile: DeviceProfile, plan: ProbePlan = ProbePlan(), seed: int = 0,
                    noise_half_width: float = 0.2) -> Probe:
    """Probe backed by the simulator: the monitor alone on an otherwise idle device."""
    calls = iter(range(10**9))

    def probe(request: RateRequest, sensor: SensorKind) -> SensorEventTrace:
        scenario = Scenario(profile, duration_s=plan.dwell_s, monitor_requests={sensor: request},
                            sensors=(sensor,), noise_half_width=noise_half_width,
                            seed=seed * 1000 + next(calls), name="probe")
        traces, _ = simulate(scenario)
        return traces[sensor]

    return probe


def profile_fragment(result: ProfilingResult, name: str, android_version: int) -> str:
    """Profile file text carrying only the measured ``f_min`` values.

    :func:`ratewatch.device.load_profile` completes such a fragment with the
    stock rate ladder; :func:`merge_fragment` applies it to an existing profile.
    """
    lines = ["[device]", f"name = {name}", f"android_version = {android_version}", ""]
    for sensor in ALL_SENSORS:
        if sensor in result.f_min:
            lines += [f"[{sensor.value}]", f"f_min = {result.f_min[sensor]:g}", ""]
    return "\n".join(lines)


def merge_fragment(profile: DeviceProfile, fragment: "str | ProfilingResult") -> DeviceProfile:
    """Replace a profile's minimum rates with measured ones."""
    f_min = fragment.f_min if isinstance(fragment, ProfilingResult) else load_profile(fragment).sensors
    sensors = dict(profile.sensors)
    for sensor, value in f_min.items():
        value = value.f_min if hasattr(value, "f_min") else value
        sensors[sensor] = synthesize_caps(sensor, value, profile.android_version)
    return DeviceProfile(profile.name, profile.android_version, sensors)


class DeviceProfiler(BaseEstimator):
    """Estimator form of the profiling stage; ``fit`` takes a probe callable."""

    def __init__(self, candidates=(10.0, 7.0, 5.0, 2.0, 1.0, 0.5), dwell_s: float = 5.0,
                 sensors=ALL_SENSORS):
        self.candidates = candidates
        self.dwell_s = dwell_s
        self.sensors = sensors

    def fit(self, X: Probe, y=None):
        plan = ProbePlan(tuple(self.candidates), self.dwell_s)
        result = profile_device(X, plan, self.sensors)
        self.f_min_ = result.f_min
        self.unprofiled_ = result.unprofiled
        self.elapsed_s_ = result.elapsed_s
        self.thresholds_, _ = derive_thresholds(result)
        return self

    def transform(self, X=None) -> DetectionThreshold:
        check_is_fitted(self, "thresholds_")
        return self.thresholds_
