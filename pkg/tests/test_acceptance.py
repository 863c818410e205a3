"""Acceptance criteria. Each test prints one PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v`` to see the verdicts inline.
"""

import json
import time
from contextlib import contextmanager

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ratewatch.detector import (
    RateSeries,
    SensorEventTrace,
    UsageInterval,
    UsageReport,
    clean_outliers,
    detect_all,
)
from ratewatch.device import (
    ALL_SENSORS,
    DetectionThreshold,
    NamedConstant,
    RateRequest,
    builtin_profiles,
    get_profile,
)
from ratewatch.harness import (
    case_signature_scenarios,
    no_usage_scenario,
    run_case,
    run_standard_suite,
    synthetic_population,
)
from ratewatch.io import dumps_json, finite_json, parse_traces, report_from_dict, report_to_dict, write_traces
from ratewatch.profiler import derive_thresholds, profile_device, simulated_probe
from ratewatch.simulator import Registration, Scenario, SimApp, rate_schedule, simulate

A12 = get_profile("OnePlus Nord N200")
A10 = get_profile("Samsung Galaxy S9")
ACC, GYR, MAG = ALL_SENSORS
NS = 1_000_000_000
PROPERTY_CASES = 1000


@pytest.fixture
def verdict(capsys):
    @contextmanager
    def _verdict(label):
        detail = {}
        try:
            yield detail
        except BaseException:
            with capsys.disabled():
                print(f"\nFAIL  {label} {detail.get('msg', '')}".rstrip())
            raise
        with capsys.disabled():
            print(f"\nPASS  {label} {detail.get('msg', '')}".rstrip())
    return _verdict


def test_ac1_recall_on_50_app_suite(verdict):
    with verdict("AC1 detection recall, 50 apps") as out:
        apps = synthetic_population(50, seed=0)
        t0 = time.perf_counter()
        res = run_standard_suite(apps, A12, seed=0).evaluation
        wall = time.perf_counter() - t0
        out["msg"] = f"{res.apps_detected}/{res.apps_with_usage} detected, {wall:.2f} s"
        assert res.apps_with_usage == 50 and res.apps_detected == 50
        assert not res.flagged
        assert wall < 5.0


def test_ac2_no_false_positives(verdict):
    with verdict("AC2 zero false positives, 10 x 30 min idle") as out:
        t0 = time.perf_counter()
        found = 0
        for seed in range(10):
            sc = no_usage_scenario(A12, 1800.0, seed=seed, noise_half_width=0.2)
            traces, truth = simulate(sc)
            assert truth.is_empty()
            found += len(detect_all(traces, A12).all_intervals())
        wall = time.perf_counter() - t0
        out["msg"] = f"{found} intervals, {wall:.2f} s"
        assert found == 0
        assert wall < 30.0


def test_ac3_threshold_derivation(verdict):
    with verdict("AC3 thresholds are f_min + 0.5 on all six profiles") as out:
        checked = 0
        for profile in builtin_profiles():
            f_min = {s: profile.f_min(s) for s in ALL_SENSORS}
            thr, excluded = derive_thresholds(f_min)
            assert not excluded
            for s in ALL_SENSORS:
                assert thr.threshold(s) == f_min[s] + 0.5
                checked += 1
        a12 = derive_thresholds({s: A12.f_min(s) for s in ALL_SENSORS})[0]
        assert a12.thresholds == {ACC: 5.5, GYR: 1.5, MAG: 1.5}
        out["msg"] = f"{checked} sensor thresholds"


def test_ac4_profiling_fidelity(verdict):
    with verdict("AC4 profiling recovers every f_min") as out:
        t0 = time.perf_counter()
        wrong = []
        for i, profile in enumerate(builtin_profiles()):
            result = profile_device(simulated_probe(profile, seed=i))
            for s in ALL_SENSORS:
                if result.f_min.get(s) != profile.f_min(s):
                    wrong.append(f"{profile.name}/{s.value}")
        wall = time.perf_counter() - t0
        out["msg"] = f"{18 - len(wrong)}/18 exact, {wall:.2f} s"
        assert wrong == []
        assert wall < 10.0


def _fastest_peak(profile, sensor, permission, seed):
    app = SimApp("fast", (Registration(sensor, RateRequest.named(NamedConstant.FASTEST, permission), 2.0, 8.0),))
    traces, _ = simulate(Scenario(profile, (app,), duration_s=10.0, sensors=(sensor,), seed=seed))
    return detect_all(traces, profile).max_rate(sensor)


def test_ac5_cap_behaviour(verdict):
    with verdict("AC5 FASTEST cap with and without permission") as out:
        peaks = {}
        for sensor in (ACC, GYR):
            peaks[("A12", sensor.value, "perm")] = _fastest_peak(A12, sensor, True, 1)
            peaks[("A12", sensor.value, "none")] = _fastest_peak(A12, sensor, False, 2)
            peaks[("A10", sensor.value, "perm")] = _fastest_peak(A10, sensor, True, 3)
            peaks[("A10", sensor.value, "none")] = _fastest_peak(A10, sensor, False, 4)
        out["msg"] = ", ".join(f"{'/'.join(k)}={v:.2f}" for k, v in peaks.items() if k[1] == "accelerometer")
        for (dev, _, perm), peak in peaks.items():
            expected = 206.0 if dev == "A12" and perm == "none" else 416.0
            assert peak == pytest.approx(expected, abs=0.5)


SCRIPTED_RATES = (5.0, 15.0, 20.0, 52.0, 100.0, 206.0, 416.0)


def test_ac6_rate_estimation_accuracy(verdict):
    # gyroscope: f_min 1 Hz, so every scripted rate including 5 Hz is observable
    with verdict("AC6 rate estimation MAE") as out:
        errors = []
        for i in range(100):
            rate = SCRIPTED_RATES[i % len(SCRIPTED_RATES)]
            req = RateRequest.custom(rate, True)
            app = SimApp("r", (Registration(GYR, req, 3.0, 13.0),))
            traces, _ = simulate(Scenario(A12, (app,), duration_s=16.0, sensors=(GYR,), seed=1000 + i))
            ivs = detect_all(traces, A12).intervals[GYR]
            assert len(ivs) == 1, f"scenario {i} at {rate} Hz gave {len(ivs)} intervals"
            errors.append(abs(ivs[0].estimated_rate - rate))
        mae = float(np.mean(errors))
        out["msg"] = f"MAE {mae:.3f} Hz over {len(errors)} scenarios, worst {max(errors):.3f}"
        assert mae <= 0.4


def test_ac7_case_signatures(verdict):
    with verdict("AC7 case signatures") as out:
        cases = {c.name: c for c in case_signature_scenarios(A12, seed=0)}

        report, _, errors = run_case(cases["appsflyer"])
        assert errors == []
        durations = [iv.duration_s for iv in report.all_intervals()]
        assert len(durations) == 3 and all(abs(d - 0.5) <= 0.05 for d in durations)

        report, _, errors = run_case(cases["shake_ad"])
        assert errors == []
        for s in (ACC, GYR):
            assert [iv.constant_label for iv in report.intervals[s]] == ["UI", "GAME"]

        report, _, errors = run_case(cases["post_termination"])
        terminate = cases["post_termination"].scenario.timeline.terminate_s
        assert errors == []
        assert max(iv.end_ns for iv in report.intervals[ACC]) > terminate * NS

        out["msg"] = "appsflyer " + ", ".join(f"{d:.3f}" for d in durations) + " s"


# -- AC8 property suites -------------------------------------------------------

rate_values = st.lists(st.one_of(st.sampled_from([1.0, 1.2, 5.0, 15.0, 52.0, 52.04, 206.0, 416.0]),
                                 st.floats(0.5, 500)), min_size=0, max_size=80)


def _series(values):
    rates = np.asarray(values, dtype=float)
    times = np.cumsum(np.round(NS / rates)).astype(np.int64) if len(rates) else np.empty(0, np.int64)
    return RateSeries(times, rates)


def _interior_runs(values, bucket=0.1):
    keys = np.rint(np.asarray(values) / bucket)
    edges = np.concatenate(([0], np.flatnonzero(np.diff(keys)) + 1, [len(values)]))
    return np.diff(edges)[1:-1]


@settings(max_examples=PROPERTY_CASES, deadline=None, derandomize=True)
@given(rate_values)
def _idempotence(values):
    once = clean_outliers(_series(values))
    assert np.array_equal(clean_outliers(once).rates, once.rates)


@settings(max_examples=PROPERTY_CASES, deadline=None, derandomize=True)
@given(rate_values)
def _run_length(values):
    out = clean_outliers(_series(values)).rates
    if len(out) >= 3:
        assert np.all(_interior_runs(out) >= 3)


registration = st.tuples(st.sampled_from(ALL_SENSORS),
                         st.one_of(st.sampled_from(list(NamedConstant)), st.floats(0.1, 1000)),
                         st.booleans(), st.floats(0, 20), st.floats(0.1, 10))


def _app(i, row):
    sensor, req, perm, start, length = row
    request = RateRequest.named(req, perm) if isinstance(req, NamedConstant) else RateRequest.custom(req, perm)
    return SimApp(f"a{i}", (Registration(sensor, request, start, start + length),))


def _delivered(steps, t_ns):
    rate = steps[0][1]
    for start, hz in steps:
        if start <= t_ns:
            rate = hz
    return rate


@settings(max_examples=PROPERTY_CASES, deadline=None, derandomize=True)
@given(st.sampled_from(builtin_profiles()), st.lists(registration, max_size=4), registration)
def _arbitration_monotone(profile, base, extra):
    apps = tuple(_app(i, s) for i, s in enumerate(base))
    without = Scenario(profile, apps, duration_s=30.0)
    with_extra = without.replace(apps=apps + (_app(len(apps), extra),))
    grid = np.arange(0, 30 * NS, NS // 4)
    for sensor in ALL_SENSORS:
        a, b = rate_schedule(without, sensor), rate_schedule(with_extra, sensor)
        assert all(_delivered(b, t) >= _delivered(a, t) for t in grid)


interval_rows = st.lists(st.tuples(st.integers(0, 10**12), st.integers(1, 10**10), st.floats(0.5, 500)),
                         max_size=4)


@settings(max_examples=PROPERTY_CASES, deadline=None, derandomize=True)
@given(st.dictionaries(st.sampled_from(ALL_SENSORS), st.sets(st.integers(0, 2**62), max_size=15), max_size=3),
       st.dictionaries(st.sampled_from(ALL_SENSORS), interval_rows, max_size=3))
def _file_round_trip(raw_traces, raw_intervals):
    traces = {s: SensorEventTrace(s, np.array(sorted(ts), dtype=np.int64)) for s, ts in raw_traces.items() if ts}
    assert parse_traces(write_traces(traces)) == traces

    intervals = {s: [UsageInterval(s, a, a + d, round(r, 3)) for a, d, r in rows]
                 for s, rows in raw_intervals.items()}
    report = UsageReport("OnePlus Nord N200", DetectionThreshold.from_profile(A12), intervals,
                         {s: "ok" for s in intervals})
    text = dumps_json(finite_json(report_to_dict(report)))
    back = report_from_dict(json.loads(text))
    assert back.intervals == report.intervals
    assert dumps_json(finite_json(report_to_dict(back))) == text


@pytest.mark.parametrize("name,prop", [
    ("cleaning idempotence", _idempotence),
    ("run-length invariant", _run_length),
    ("arbitration monotonicity", _arbitration_monotone),
    ("file round-trip", _file_round_trip),
])
def test_ac8_property_suites(verdict, name, prop):
    with verdict(f"AC8 {name}") as out:
        out["msg"] = f"{PROPERTY_CASES} cases"
        prop()
