"""Event-driven model of the Android sensor stack's listener arbitration.

Every active listener of a sensor receives events at the highest granted rate
among all listeners. The simulator produces the event timestamps a permanently
registered monitor would see, plus the ground-truth log of which scripted apps
were using each sensor and at what rate.
"""

from __future__ import annotations

import dataclasses
import enum
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .device import ALL_SENSORS, DeviceProfile, RateRequest, SensorKind, resolve_request
from .detector import SensorEventTrace

__all__ = [
    "AppState",
    "GroundTruthInterval",
    "GroundTruthLog",
    "Registration",
    "Scenario",
    "ScenarioError",
    "SimApp",
    "StandardTimeline",
    "arbitrate",
    "rate_schedule",
    "simulate",
    "standard_procedure_scenario",
]

NS = 1_000_000_000
MAX_NOISE_HALF_WIDTH = 0.25


class ScenarioError(ValueError):
    pass


class AppState(str, enum.Enum):
    FOREGROUND = "foreground"
    BACKGROUND = "background"
    TERMINATED = "terminated"


PHASES = ("baseline", "foreground", "background", "post_termination")


@dataclass(frozen=True)
class Registration:
    sensor: SensorKind
    request: RateRequest
    register_s: float
    unregister_s: float | None = None  # None: until the app is terminated

    def __post_init__(self):
        object.__setattr__(self, "sensor", SensorKind.parse(self.sensor))
        if self.register_s < 0:
            raise ScenarioError("register time must be >= 0")
        if self.unregister_s is not None and not self.register_s < self.unregister_s:
            raise ScenarioError(
                f"register ({self.register_s}) must precede unregister ({self.unregister_s})")


@dataclass(frozen=True)
class SimApp:
    app_id: str
    registrations: tuple[Registration, ...] = ()
    lifecycle: tuple[tuple[float, AppState], ...] = ()
    persists_after_termination: bool = False

    def __post_init__(self):
        object.__setattr__(self, "registrations", tuple(self.registrations))
        life = tuple((float(t), AppState(s)) for t, s in self.lifecycle)
        object.__setattr__(self, "lifecycle", life)
        times = [t for t, _ in life]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ScenarioError(f"app {self.app_id}: lifecycle times must be strictly increasing")

    @property
    def termination_s(self) -> float | None:
        for t, s in self.lifecycle:
            if s is AppState.TERMINATED:
                return t
        return None

    def state_at(self, t: float) -> AppState | None:
        """Lifecycle state in force at ``t``; None before launch."""
        state = None
        for when, s in self.lifecycle:
            if when <= t:
                state = s
            else:
                break
        return state

    def active_windows(self, sensor: SensorKind, duration_s: float) -> list[tuple[float, float, RateRequest]]:
        """Effective listener windows after applying termination."""
        end_of_life = self.termination_s
        out = []
        for reg in self.registrations:
            if reg.sensor is not sensor:
                continue
            stop = duration_s if reg.unregister_s is None else reg.unregister_s
            if end_of_life is not None and not self.persists_after_termination:
                stop = min(stop, end_of_life)
            start = reg.register_s
            stop = min(stop, duration_s)
            if start < stop:
                out.append((start, stop, reg.request))
        return out


@dataclass(frozen=True)
class Scenario:
    profile: DeviceProfile
    apps: tuple[SimApp, ...] = ()
    duration_s: float = 37.0
    monitor_requests: Mapping[SensorKind, RateRequest] = field(default_factory=dict)
    sensors: tuple[SensorKind, ...] = ALL_SENSORS
    noise_half_width: float = 0.2
    max_outlier_run: int = 2
    seed: int = 0
    name: str = "scenario"
    timeline: "StandardTimeline | None" = None

    def __post_init__(self):
        object.__setattr__(self, "apps", tuple(self.apps))
        object.__setattr__(self, "sensors", tuple(SensorKind.parse(s) for s in self.sensors))
        object.__setattr__(self, "monitor_requests",
                           {SensorKind.parse(k): v for k, v in self.monitor_requests.items()})
        if not self.duration_s > 0:
            raise ScenarioError(f"duration must be positive, got {self.duration_s}")
        if not 0 <= self.noise_half_width < MAX_NOISE_HALF_WIDTH:
            raise ScenarioError(f"noise half-width must be in [0, {MAX_NOISE_HALF_WIDTH})")
        if self.max_outlier_run not in (0, 1, 2):
            raise ScenarioError("transition outlier runs are 0 to 2 samples long")
        ids = [a.app_id for a in self.apps]
        if len(set(ids)) != len(ids):
            raise ScenarioError("app ids must be unique")
        for s in self.sensors:
            self.profile.caps(s)

    def monitor_request(self, sensor: SensorKind) -> RateRequest:
        req = self.monitor_requests.get(sensor)
        return req if req is not None else RateRequest.custom(self.profile.f_min(sensor))

    def replace(self, **changes) -> "Scenario":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class GroundTruthInterval:
    start_s: float
    end_s: float
    rate_hz: float
    app_ids: frozenset[str]
    state: AppState | None

    @property
    def duration_s(self) -> float:
        return self.end_s - self.start_s


@dataclass
class GroundTruthLog:
    intervals: dict[SensorKind, list[GroundTruthInterval]]
    monitor_rates: dict[SensorKind, float]
    duration_s: float
    timeline: "StandardTimeline | None" = None

    def for_sensor(self, sensor: "SensorKind | str") -> list[GroundTruthInterval]:
        return self.intervals.get(SensorKind.parse(sensor), [])

    def is_empty(self) -> bool:
        return not any(self.intervals.values())


@dataclass(frozen=True)
class StandardTimeline:
    """Phase boundaries of the evaluation procedure, in seconds."""

    launch_s: float = 5.0
    background_s: float = 20.0
    terminate_s: float = 35.0

    def phase_at(self, t: float) -> str:
        if t < self.launch_s:
            return "baseline"
        if t < self.background_s:
            return "foreground"
        if t < self.terminate_s:
            return "background"
        return "post_termination"

    def windows(self, end_s: float) -> list[tuple[str, float, float]]:
        edges = [0.0, self.launch_s, self.background_s, self.terminate_s, max(end_s, self.terminate_s)]
        return [(p, a, b) for p, a, b in zip(PHASES, edges, edges[1:]) if b > a]


def arbitrate(profile: DeviceProfile, sensor: "SensorKind | str", active_requests: Iterable[float]) -> float:
    """Rate delivered to every listener: the highest granted rate among them."""
    profile.caps(sensor)
    rates = list(active_requests)
    if not rates:
        raise ValueError("arbitration needs at least one active listener (the monitor)")
    return max(rates)


def _to_ns(t: float) -> int:
    return int(round(t * NS))


def rate_schedule(scenario: Scenario, sensor: SensorKind) -> list[tuple[int, float]]:
    """Piecewise-constant delivered rate as ``(start_ns, hz)`` steps with distinct rates."""
    profile = scenario.profile
    monitor = resolve_request(profile, sensor, scenario.monitor_request(sensor))
    windows = []
    for app in scenario.apps:
        for start, stop, req in app.active_windows(sensor, scenario.duration_s):
            windows.append((_to_ns(start), _to_ns(stop), resolve_request(profile, sensor, req)))
    edges = sorted({0, *(w[0] for w in windows), *(w[1] for w in windows)})
    steps: list[tuple[int, float]] = []
    for t in edges:
        if t >= _to_ns(scenario.duration_s):
            break
        granted = [monitor] + [r for a, b, r in windows if a <= t < b]
        rate = arbitrate(profile, sensor, granted)
        if not steps or steps[-1][1] != rate:
            steps.append((t, rate))
    return steps


def _period_ns(rng: np.random.Generator, rate: float, half_width: float, n: int | None = None):
    # uniform jitter in the period domain, bounded so the rate error stays within half_width
    lo_rate, hi_rate = max(rate - half_width, rate * 0.5), rate + half_width
    u = rng.random(n)
    period = 1.0 / hi_rate + u * (1.0 / lo_rate - 1.0 / hi_rate)
    return np.rint(period * NS).astype(np.int64) if n is not None else int(round(float(period) * NS))


def _simulate_sensor(scenario: Scenario, sensor: SensorKind, rng: np.random.Generator) -> np.ndarray:
    steps = rate_schedule(scenario, sensor)
    end = _to_ns(scenario.duration_s)
    h = scenario.noise_half_width
    change_times = [t for t, _ in steps[1:]] + [end]
    rates = [r for _, r in steps]

    chunks = [np.array([0], dtype=np.int64)]
    t = 0
    rate = rates[0]
    for idx, t_change in enumerate(change_times):
        # steady delivery at `rate` up to the next change (or the end of the run)
        while True:
            expected = int((t_change - t) * rate / NS) + 2
            gaps = _period_ns(rng, rate, h, max(expected, 4))
            times = t + np.cumsum(gaps)
            keep = times[times < t_change]
            if keep.size:
                chunks.append(keep)
                t = int(keep[-1])
            if keep.size < times.size:
                break
        if t_change >= end:
            break
        new_rate = rates[idx + 1]
        mid = 0.5 * (rate + new_rate)
        k = int(rng.integers(1, scenario.max_outlier_run + 1)) if scenario.max_outlier_run else 0
        if k:
            # first transition gap: midpoint-rate gap, or the partial gap up to the change
            first = max(t + int(round(NS / mid)), t_change)
            outliers = [first]
            for _ in range(k - 1):
                outliers.append(outliers[-1] + int(round(NS / mid)))
            outliers = [x for x in outliers if x < end]
            if outliers:
                chunks.append(np.array(outliers, dtype=np.int64))
                t = outliers[-1]
        rate = new_rate
    ts = np.concatenate(chunks)
    return ts[ts < end]


def ground_truth(scenario: Scenario, timeline: StandardTimeline | None = None) -> GroundTruthLog:
    intervals: dict[SensorKind, list[GroundTruthInterval]] = {}
    monitor_rates = {}
    dur = scenario.duration_s
    for sensor in scenario.sensors:
        monitor = resolve_request(scenario.profile, sensor, scenario.monitor_request(sensor))
        monitor_rates[sensor] = monitor
        windows = []
        for app in scenario.apps:
            for start, stop, req in app.active_windows(sensor, dur):
                windows.append((start, stop, app, resolve_request(scenario.profile, sensor, req)))
        edges = {0.0, dur}
        for start, stop, _, _ in windows:
            edges.update((start, stop))
        for app in scenario.apps:
            edges.update(t for t, _ in app.lifecycle if 0 < t < dur)
        edges = sorted(e for e in edges if 0 <= e <= dur)
        out: list[GroundTruthInterval] = []
        for a, b in zip(edges, edges[1:]):
            active = [(app, r) for s, e, app, r in windows if s <= a < e]
            if not active:
                continue
            rate = arbitrate(scenario.profile, sensor, [monitor] + [r for _, r in active])
            ids = frozenset(app.app_id for app, _ in active)
            top = max(active, key=lambda ar: (ar[1], ar[0].app_id))[0]
            state = top.state_at(a)
            if out and out[-1].end_s == a and (out[-1].rate_hz, out[-1].app_ids, out[-1].state) == (rate, ids, state):
                prev = out.pop()
                out.append(GroundTruthInterval(prev.start_s, b, rate, ids, state))
            else:
                out.append(GroundTruthInterval(a, b, rate, ids, state))
        intervals[sensor] = out
    return GroundTruthLog(intervals, monitor_rates, dur, timeline)


def simulate(scenario: Scenario) -> tuple[dict[SensorKind, SensorEventTrace], GroundTruthLog]:
    """Run ``scenario``; a pure function of the scenario (its seed included)."""
    traces = {}
    for i, sensor in enumerate(scenario.sensors):
        rng = np.random.default_rng([scenario.seed, i])
        traces[sensor] = SensorEventTrace(sensor, _simulate_sensor(scenario, sensor, rng))
    return traces, ground_truth(scenario, scenario.timeline)


STANDARD_TAIL_S = 2.0


def standard_app(app_id: str, registrations: Sequence[Registration] = (),
                 persists_after_termination: bool = False,
                 timeline: StandardTimeline = StandardTimeline()) -> SimApp:
    """An app following the evaluation procedure's lifecycle."""
    return SimApp(app_id, tuple(registrations),
                  ((timeline.launch_s, AppState.FOREGROUND),
                   (timeline.background_s, AppState.BACKGROUND),
                   (timeline.terminate_s, AppState.TERMINATED)),
                  persists_after_termination)


def standard_procedure_scenario(app: SimApp, profile: DeviceProfile, seed: int = 0,
                                noise_half_width: float = 0.2) -> Scenario:
    """5 s monitor-only baseline, 15 s foreground, 15 s background, then termination.

    The app's lifecycle is replaced by the procedure's; its registrations are kept.
    """
    tl = StandardTimeline()
    scripted = standard_app(app.app_id, app.registrations, app.persists_after_termination, tl)
    return Scenario(profile=profile, apps=(scripted,), duration_s=tl.terminate_s + STANDARD_TAIL_S,
                    noise_half_width=noise_half_width, seed=seed, name=f"standard:{app.app_id}",
                    timeline=tl)
