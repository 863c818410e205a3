"""Scenario library, detector scoring against ground truth, and population statistics."""

from __future__ import annotations

from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .detector import (
    DEFAULT_MERGE_GAP_MS,
    DEFAULT_MIN_DURATION_MS,
    DEFAULT_PHASE_SLACK_MS,
    UsageInterval,
    UsageReport,
    detect_all,
)
from .device import (
    ALL_SENSORS,
    DetectionThreshold,
    DeviceProfile,
    NamedConstant,
    RateRequest,
    SensorKind,
    get_profile,
)
from .simulator import (
    GroundTruthLog,
    Registration,
    Scenario,
    SimApp,
    StandardTimeline,
    simulate,
    standard_app,
    standard_procedure_scenario,
)

__all__ = [
    "AppEvaluation",
    "CaseScenario",
    "EvaluationResult",
    "SuiteResult",
    "aggregate_stats",
    "case_signature_scenarios",
    "fg_bg_breakdown",
    "fg_bg_population",
    "no_usage_scenario",
    "rate_histogram",
    "run_case",
    "run_standard_suite",
    "score_report",
    "synthetic_population",
]

NS = 1_000_000_000
IOU_MATCH = 0.8
HISTOGRAM_BINS = ("5", "15", "52", "100", "~200", "416", "other")


@dataclass
class AppEvaluation:
    scenario: str
    true_positives: int = 0
    false_positives: int = 0
    false_negatives: int = 0
    mismatched: int = 0
    blind_spots: int = 0
    too_short: int = 0
    rate_errors: list[float] = field(default_factory=list)
    boundary_errors_ms: list[float] = field(default_factory=list)
    baseline_violation: bool = False
    detected: bool = False
    has_usage: bool = False

    @property
    def n_detected(self) -> int:
        return self.true_positives + self.false_positives + self.mismatched


@dataclass
class EvaluationResult:
    """Interval-level scores over one or more scenarios.

    Recall is matched ground-truth spans over detectable spans (rate above the
    threshold, long enough to report). Precision is the share of detected
    intervals that overlap any ground-truth usage. Spans at or below ``f_min``
    are counted as blind spots, never as misses.
    """

    per_scenario: list[AppEvaluation] = field(default_factory=list)

    def _sum(self, attr):
        return sum(getattr(e, attr) for e in self.scored)

    @property
    def scored(self) -> list[AppEvaluation]:
        return [e for e in self.per_scenario if not e.baseline_violation]

    @property
    def flagged(self) -> list[str]:
        return [e.scenario for e in self.per_scenario if e.baseline_violation]

    @property
    def true_positives(self) -> int:
        return self._sum("true_positives")

    @property
    def false_positives(self) -> int:
        return self._sum("false_positives")

    @property
    def false_negatives(self) -> int:
        return self._sum("false_negatives")

    @property
    def blind_spots(self) -> int:
        return self._sum("blind_spots")

    @property
    def recall(self) -> float:
        denom = self.true_positives + self.false_negatives
        return self.true_positives / denom if denom else 1.0

    @property
    def precision(self) -> float:
        detected = sum(e.n_detected for e in self.scored)
        return (detected - self.false_positives) / detected if detected else 1.0

    @property
    def rate_mae(self) -> float:
        errs = [x for e in self.scored for x in e.rate_errors]
        return float(np.mean(np.abs(errs))) if errs else 0.0

    @property
    def boundary_error_ms(self) -> float:
        errs = [x for e in self.scored for x in e.boundary_errors_ms]
        return float(np.mean(errs)) if errs else 0.0

    @property
    def apps_with_usage(self) -> int:
        return sum(e.has_usage for e in self.scored)

    @property
    def apps_detected(self) -> int:
        return sum(e.has_usage and e.detected for e in self.scored)

    def summary(self) -> dict:
        return {
            "scenarios": len(self.per_scenario),
            "flagged_baseline": self.flagged,
            "true_positives": self.true_positives,
            "false_positives": self.false_positives,
            "false_negatives": self.false_negatives,
            "blind_spots": self.blind_spots,
            "recall": self.recall,
            "precision": self.precision,
            "rate_mae_hz": self.rate_mae,
            "boundary_error_ms": self.boundary_error_ms,
            "apps_with_usage": self.apps_with_usage,
            "apps_detected": self.apps_detected,
            "ground_truth_source": "simulator",
        }

    def to_dict(self) -> dict:
        return {"summary": self.summary(), "per_scenario": [asdict(e) for e in self.per_scenario]}


def _merge_spans(spans: Iterable[tuple[int, int, float]], gap_ns: int) -> list[list]:
    out: list[list] = []
    for s, e, r in sorted(spans):
        if out and s - out[-1][1] < gap_ns:
            out[-1][1] = max(out[-1][1], e)
            out[-1][2] = max(out[-1][2], r)
        else:
            out.append([s, e, r])
    return out


def _iou(a, b) -> float:
    inter = min(a[1], b[1]) - max(a[0], b[0])
    if inter <= 0:
        return 0.0
    return inter / (max(a[1], b[1]) - min(a[0], b[0]))


def score_report(report: UsageReport, truth: GroundTruthLog, name: str = "scenario", *,
                 min_duration_ms: int = DEFAULT_MIN_DURATION_MS,
                 merge_gap_ms: int = DEFAULT_MERGE_GAP_MS,
                 iou: float = IOU_MATCH,
                 slack_ms: int = DEFAULT_PHASE_SLACK_MS) -> AppEvaluation:
    ev = AppEvaluation(name)
    gap_ns = merge_gap_ms * 1_000_000
    min_ns = min_duration_ms * 1_000_000
    tl = truth.timeline
    if tl is not None:
        # overlap shorter than the phase slack is event quantisation at launch
        launch_ns = int(round(tl.launch_s * NS))
        ev.baseline_violation = any(
            iv.phase == "baseline" or min(iv.end_ns, launch_ns) - iv.start_ns >= slack_ms * 1_000_000
            for iv in report.all_intervals())
    for sensor in set(truth.intervals) | set(report.intervals):
        if sensor not in report.thresholds.f_min:
            continue
        thr = report.thresholds.threshold(sensor)
        gt = truth.for_sensor(sensor)
        to_ns = lambda t: int(round(t * NS))  # noqa: E731
        detectable, quiet = [], []
        for g in gt:
            span = (to_ns(g.start_s), to_ns(g.end_s), g.rate_hz)
            (detectable if g.rate_hz > thr else quiet).append(span)
        ev.blind_spots += len(_merge_spans(quiet, 1))
        spans = _merge_spans(detectable, gap_ns)
        ev.too_short += sum(1 for s in spans if s[1] - s[0] < min_ns)
        spans = [s for s in spans if s[1] - s[0] >= min_ns]
        ev.has_usage = ev.has_usage or bool(spans)
        found = _merge_spans(((iv.start_ns, iv.end_ns, iv.estimated_rate)
                              for iv in report.intervals.get(sensor, [])), 1)
        ev.detected = ev.detected or bool(found)
        all_truth = [(to_ns(g.start_s), to_ns(g.end_s)) for g in gt]
        pairs = sorted(((_iou(d, s), i, j) for i, d in enumerate(found) for j, s in enumerate(spans)),
                       reverse=True)
        used_d, used_s = set(), set()
        for score, i, j in pairs:
            if score < iou or i in used_d or j in used_s:
                continue
            used_d.add(i)
            used_s.add(j)
            d, s = found[i], spans[j]
            ev.true_positives += 1
            ev.rate_errors.append(d[2] - s[2])
            ev.boundary_errors_ms.append(max(abs(d[0] - s[0]), abs(d[1] - s[1])) / 1e6)
        ev.false_negatives += len(spans) - len(used_s)
        for i, d in enumerate(found):
            if i in used_d:
                continue
            if any(_iou(d, t) > 0 for t in all_truth):
                ev.mismatched += 1
            else:
                ev.false_positives += 1
    return ev


@dataclass
class SuiteResult:
    reports: dict[str, UsageReport]
    truths: dict[str, GroundTruthLog]
    evaluation: EvaluationResult


def run_standard_suite(apps: Sequence[SimApp], profile: DeviceProfile, seed: int = 0, *,
                       noise_half_width: float = 0.2,
                       min_duration_ms: int = DEFAULT_MIN_DURATION_MS,
                       merge_gap_ms: int = DEFAULT_MERGE_GAP_MS) -> SuiteResult:
    """Run every app through the 5 s / 15 s / 15 s procedure, detect, and score.

    Runs whose baseline window already shows usage are flagged and left out of
    the scores, as the procedure requires a quiet device before launch.
    """
    thresholds = DetectionThreshold.from_profile(profile)
    reports, truths = {}, {}
    evaluation = EvaluationResult()
    for i, app in enumerate(apps):
        scenario = standard_procedure_scenario(app, profile, seed=seed * 100_003 + i,
                                               noise_half_width=noise_half_width)
        traces, truth = simulate(scenario)
        report = detect_all(traces, profile, thresholds, min_duration_ms=min_duration_ms,
                            merge_gap_ms=merge_gap_ms, timeline=scenario.timeline)
        ev = score_report(report, truth, app.app_id, min_duration_ms=min_duration_ms,
                          merge_gap_ms=merge_gap_ms)
        report.flags["baseline_violation"] = ev.baseline_violation
        reports[app.app_id] = report
        truths[app.app_id] = truth
        evaluation.per_scenario.append(ev)
    return SuiteResult(reports, truths, evaluation)


# -- populations ------------------------------------------------------------

_HIGH_REQUESTS = (
    RateRequest.named(NamedConstant.GAME),
    RateRequest.named(NamedConstant.FASTEST),
    RateRequest.named(NamedConstant.FASTEST, permission=True),
    RateRequest.custom(100.0),
    RateRequest.custom(200.0),
)


def synthetic_population(n: int, seed: int = 0, requests: Sequence[RateRequest] = _HIGH_REQUESTS,
                         background_fraction: float = 0.3) -> list[SimApp]:
    """Apps that each use at least one sensor at GAME rate or faster."""
    rng = np.random.default_rng(seed)
    tl = StandardTimeline()
    apps = []
    for k in range(n):
        n_sensors = int(rng.integers(1, 4))
        chosen = sorted(rng.choice(3, size=n_sensors, replace=False).tolist())
        regs = []
        for idx in chosen:
            req = requests[int(rng.integers(len(requests)))]
            start = tl.launch_s + float(rng.integers(0, 4))
            stop = None if rng.random() < background_fraction else tl.background_s
            regs.append(Registration(ALL_SENSORS[idx], req, start, stop))
        apps.append(standard_app(f"app{k:03d}", regs))
    return apps


def fg_bg_population(n_apps: int = 125, n_background: int = 36, n_post_termination: int = 0,
                     seed: int = 0) -> list[SimApp]:
    """Apps that all use sensors in the foreground; exactly ``n_background`` keep going in background.

    Background users drop to an equal or lower rate for the whole background
    window. The first ``n_post_termination`` of them keep their listener after
    being killed.
    """
    if not 0 <= n_post_termination <= n_background <= n_apps:
        raise ValueError("need 0 <= n_post_termination <= n_background <= n_apps")
    rng = np.random.default_rng(seed)
    tl = StandardTimeline()
    ladder = (NamedConstant.UI, NamedConstant.GAME, NamedConstant.FASTEST)
    order = rng.permutation(n_apps)
    bg_set = set(order[:n_background].tolist())
    post_set = set(order[:n_post_termination].tolist())
    apps = []
    for k in range(n_apps):
        sensor = ALL_SENSORS[int(rng.integers(3))]
        fg_level = int(rng.integers(1, 3))
        fg = RateRequest.named(ladder[fg_level])
        regs = [Registration(sensor, fg, tl.launch_s, tl.background_s)]
        if k in bg_set:
            bg = RateRequest.named(ladder[int(rng.integers(0, fg_level + 1))])
            regs.append(Registration(sensor, bg, tl.background_s, None))
        apps.append(standard_app(f"app{k:03d}", regs, persists_after_termination=k in post_set))
    return apps


# -- aggregation ------------------------------------------------------------

def _phase_intervals(report: UsageReport, phase: str) -> list[UsageInterval]:
    return [iv for iv in report.all_intervals() if iv.phase == phase]


def fg_bg_breakdown(reports: dict[str, UsageReport] | Sequence[UsageReport],
                    tolerance_s: float = 0.3, rate_tolerance_hz: float = 0.5) -> dict:
    """Foreground/background split of detected usage (reports must carry phases).

    ``decreasing_or_equal`` counts apps used in both phases whose background
    peak rate is no higher than the foreground one and whose background usage
    lasts at least as long.
    """
    items = list(reports.values()) if isinstance(reports, dict) else list(reports)
    using = fg = bg = both = post = pattern = 0
    for report in items:
        if not report.any:
            continue
        using += 1
        f = _phase_intervals(report, "foreground")
        b = _phase_intervals(report, "background")
        p = _phase_intervals(report, "post_termination")
        fg += bool(f)
        bg += bool(b)
        post += bool(p)
        if f and b:
            both += 1
            f_rate = max(iv.estimated_rate for iv in f)
            b_rate = max(iv.estimated_rate for iv in b)
            f_dur = sum(iv.duration_s for iv in f)
            b_dur = sum(iv.duration_s for iv in b)
            if b_rate <= f_rate + rate_tolerance_hz and b_dur >= f_dur - tolerance_s:
                pattern += 1
    frac = lambda x: x / using if using else 0.0  # noqa: E731
    return {
        "apps": len(items),
        "apps_using_sensors": using,
        "foreground": fg,
        "background": bg,
        "foreground_and_background": both,
        "post_termination": post,
        "decreasing_or_equal": pattern,
        "foreground_fraction": frac(fg),
        "background_fraction": frac(bg),
        "post_termination_fraction": frac(post),
    }


def rate_bin(rate: float) -> str:
    for centre in (5.0, 15.0, 52.0, 100.0, 416.0):
        if abs(rate - centre) <= 1.0:
            return f"{centre:g}"
    if 195.0 <= rate <= 210.0:
        return "~200"
    return "other"


def rate_histogram(reports: dict[str, UsageReport] | Sequence[UsageReport]) -> dict[str, dict[str, int]]:
    """Per-sensor counts of each app's peak detected rate, in constant-aligned bins."""
    items = list(reports.values()) if isinstance(reports, dict) else list(reports)
    hist = {}
    for sensor in ALL_SENSORS:
        counts = Counter({b: 0 for b in HISTOGRAM_BINS})
        for report in items:
            peak = report.max_rate(sensor)
            if peak is not None:
                counts[rate_bin(peak)] += 1
        hist[sensor.value] = {b: counts[b] for b in HISTOGRAM_BINS}
    return hist


def aggregate_stats(reports: dict[str, UsageReport] | Sequence[UsageReport]) -> dict:
    items = list(reports.values()) if isinstance(reports, dict) else list(reports)
    n = len(items)
    frac = lambda x: x / n if n else 0.0  # noqa: E731
    per_sensor = {s.value: sum(r.any_usage(s) for r in items) for s in ALL_SENSORS}
    any_count = sum(r.any for r in items)
    all_three = sum(r.all_three for r in items)
    stats = {
        "apps": n,
        "sensor_counts": per_sensor,
        "sensor_fractions": {k: frac(v) for k, v in per_sensor.items()},
        "any_count": any_count,
        "any_fraction": frac(any_count),
        "all_three_count": all_three,
        "all_three_fraction": frac(all_three),
        "histogram": rate_histogram(items),
    }
    if any(iv.phase is not None for r in items for iv in r.all_intervals()):
        stats["fg_bg"] = fg_bg_breakdown(items)
    return stats


# -- case studies -----------------------------------------------------------

@dataclass
class CaseScenario:
    name: str
    scenario: Scenario
    check: Callable[[UsageReport], list[str]]
    description: str = ""


def _appsflyer_check(report: UsageReport) -> list[str]:
    errors = []
    for s in ALL_SENSORS:
        ivs = report.intervals.get(s, [])
        if len(ivs) != 1:
            errors.append(f"{s.value}: expected 1 interval, got {len(ivs)}")
        elif abs(ivs[0].duration_s - 0.5) > 0.05:
            errors.append(f"{s.value}: burst lasted {ivs[0].duration_s:.3f} s, expected 0.5 +- 0.05")
    return errors


def _magnes_check(report: UsageReport) -> list[str]:
    ivs = report.intervals.get(SensorKind.ACCELEROMETER, [])
    if len(ivs) != 1:
        return [f"expected one accelerometer interval, got {len(ivs)}"]
    iv = ivs[0]
    errors = []
    if iv.constant_label != "CUSTOM" or abs(iv.estimated_rate - 20.0) > 0.5:
        errors.append(f"expected Custom(~20), got {iv.constant} at {iv.estimated_rate:.2f} Hz")
    if iv.duration_s < 25:
        errors.append(f"continuous usage too short: {iv.duration_s:.1f} s")
    return errors


def _shake_check(report: UsageReport) -> list[str]:
    errors = []
    for s in (SensorKind.ACCELEROMETER, SensorKind.GYROSCOPE):
        labels = [iv.constant_label for iv in report.intervals.get(s, [])]
        if labels != ["UI", "GAME"]:
            errors.append(f"{s.value}: expected UI then GAME, got {labels}")
    return errors


def _post_termination_check(terminate_s: float):
    def check(report: UsageReport) -> list[str]:
        ivs = report.intervals.get(SensorKind.ACCELEROMETER, [])
        if not ivs or max(iv.end_ns for iv in ivs) <= terminate_s * NS:
            return [f"no accelerometer usage after termination at {terminate_s} s"]
        return []
    return check


def case_signature_scenarios(profile: DeviceProfile | None = None, seed: int = 0) -> list[CaseScenario]:
    """Canned access signatures of well-known SDKs and app behaviours."""
    profile = profile or get_profile("OnePlus Nord N200")
    tl = StandardTimeline()
    fastest = RateRequest.named(NamedConstant.FASTEST)
    end = tl.terminate_s + 2.0

    appsflyer = standard_app("appsflyer", [
        Registration(s, fastest, tl.launch_s + 1.0, tl.launch_s + 1.5) for s in ALL_SENSORS])
    magnes = standard_app("magnes", [
        Registration(SensorKind.ACCELEROMETER, RateRequest.custom(20.0), tl.launch_s, None)])
    # the ad redirects to the shopping app, whose cold start takes a few seconds;
    # at a 1 Hz idle rate a shorter pause yields < 3 idle samples and is cleaned away
    shake_ad = standard_app("shake_ad", [
        Registration(s, RateRequest.named(NamedConstant.UI), tl.launch_s + 1.0, tl.launch_s + 6.0)
        for s in (SensorKind.ACCELEROMETER, SensorKind.GYROSCOPE)])
    shop = standard_app("shopping", [
        Registration(s, RateRequest.named(NamedConstant.GAME), tl.launch_s + 10.0, None)
        for s in (SensorKind.ACCELEROMETER, SensorKind.GYROSCOPE)])
    persistent = standard_app("persistent", [
        Registration(SensorKind.ACCELEROMETER, RateRequest.named(NamedConstant.GAME), tl.launch_s, None)],
        persists_after_termination=True)

    def make(name, apps, duration=end):
        return Scenario(profile, tuple(apps), duration_s=duration, seed=seed, name=name, timeline=tl)

    return [
        CaseScenario("appsflyer", make("appsflyer", [appsflyer]), _appsflyer_check,
                     "500 ms burst on all three sensors at the fastest rate"),
        CaseScenario("magnes", make("magnes", [magnes]), _magnes_check,
                     "continuous accelerometer collection at about 20 Hz"),
        CaseScenario("shake_ad", make("shake_ad", [shake_ad, shop]), _shake_check,
                     "UI-rate shake detection followed by GAME-rate collection"),
        CaseScenario("post_termination", make("post_termination", [persistent], tl.terminate_s + 5.0),
                     _post_termination_check(tl.terminate_s),
                     "accelerometer listener that survives the app being killed"),
    ]


def no_usage_scenario(profile: DeviceProfile, duration_s: float = 1800.0, seed: int = 0,
                      noise_half_width: float = 0.2) -> Scenario:
    return Scenario(profile, (), duration_s=duration_s, seed=seed,
                    noise_half_width=noise_half_width, name="no_usage")


def run_case(case: CaseScenario) -> tuple[UsageReport, GroundTruthLog, list[str]]:
    traces, truth = simulate(case.scenario)
    report = detect_all(traces, case.scenario.profile)
    return report, truth, case.check(report)
