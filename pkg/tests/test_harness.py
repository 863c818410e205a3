import pytest

from ratewatch.detector import UsageInterval, UsageReport
from ratewatch.device import ALL_SENSORS, DetectionThreshold, get_profile
from ratewatch.harness import (
    EvaluationResult,
    aggregate_stats,
    case_signature_scenarios,
    fg_bg_breakdown,
    fg_bg_population,
    rate_bin,
    rate_histogram,
    run_case,
    run_standard_suite,
    score_report,
    synthetic_population,
)
from ratewatch.simulator import AppState, GroundTruthInterval, GroundTruthLog, StandardTimeline

A12 = get_profile("OnePlus Nord N200")
ACC, GYR, MAG = ALL_SENSORS
NS = 1_000_000_000
THR = DetectionThreshold.from_profile(A12)


def _truth(spans, timeline=None):
    ivs = {s: [GroundTruthInterval(a, b, r, frozenset({"x"}), AppState.FOREGROUND) for a, b, r in rows]
           for s, rows in spans.items()}
    return GroundTruthLog(ivs, {s: A12.f_min(s) for s in ALL_SENSORS}, 37.0, timeline)


def _report(spans):
    def iv(sensor, a, b, r, phase=None):
        return UsageInterval(sensor, int(a * NS), int(b * NS), r, phase=phase)

    ivs = {s: [iv(s, *row) for row in rows] for s, rows in spans.items()}
    return UsageReport(A12.name, THR, ivs)


def test_exact_match_is_true_positive():
    ev = score_report(_report({ACC: [(5.0, 20.0, 52.0)]}), _truth({ACC: [(5.0, 20.0, 52.0)]}))
    assert (ev.true_positives, ev.false_positives, ev.false_negatives) == (1, 0, 0)
    assert ev.rate_errors == [0.0] and ev.boundary_errors_ms == [0.0]


def test_low_iou_is_miss_plus_mismatch():
    ev = score_report(_report({ACC: [(5.0, 9.0, 52.0)]}), _truth({ACC: [(5.0, 20.0, 52.0)]}))
    assert (ev.true_positives, ev.false_negatives, ev.mismatched, ev.false_positives) == (0, 1, 1, 0)


def test_detection_without_truth_is_false_positive():
    ev = score_report(_report({GYR: [(1.0, 3.0, 52.0)]}), _truth({}))
    assert ev.false_positives == 1 and not ev.has_usage


def test_usage_at_fmin_is_a_blind_spot():
    ev = score_report(_report({}), _truth({ACC: [(5.0, 20.0, 5.0)]}))
    assert ev.blind_spots == 1 and ev.false_negatives == 0 and not ev.has_usage


def test_baseline_usage_flags_the_run():
    tl = StandardTimeline()
    ev = score_report(_report({ACC: [(2.0, 20.0, 52.0)]}), _truth({ACC: [(2.0, 20.0, 52.0)]}, tl))
    assert ev.baseline_violation
    res = EvaluationResult([ev])
    assert res.flagged == [ev.scenario]
    assert res.scored == []


def test_quantisation_before_launch_is_not_a_violation():
    tl = StandardTimeline()
    ev = score_report(_report({ACC: [(4.98, 20.0, 52.0, "foreground")]}),
                      _truth({ACC: [(5.0, 20.0, 52.0)]}, tl))
    assert not ev.baseline_violation


def test_evaluation_aggregates():
    good = score_report(_report({ACC: [(5.0, 20.0, 52.5)]}), _truth({ACC: [(5.0, 20.0, 52.0)]}), "a")
    bad = score_report(_report({GYR: [(1.0, 3.0, 52.0)]}), _truth({ACC: [(5.0, 20.0, 52.0)]}), "b")
    res = EvaluationResult([good, bad])
    assert res.recall == 0.5 and res.precision == 0.5
    assert res.rate_mae == pytest.approx(0.5)
    s = res.summary()
    assert s["ground_truth_source"] == "simulator" and s["apps_detected"] == 2


def test_small_suite_is_perfect():
    apps = synthetic_population(8, seed=1)
    res = run_standard_suite(apps, A12, seed=1).evaluation
    assert res.apps_detected == res.apps_with_usage == 8
    assert res.recall == 1.0 and res.precision == 1.0 and not res.flagged


def test_synthetic_population_is_seeded():
    assert synthetic_population(5, seed=2) == synthetic_population(5, seed=2)
    assert synthetic_population(5, seed=2) != synthetic_population(5, seed=3)


def test_fg_bg_breakdown_on_population():
    apps = fg_bg_population(20, 6, 2, seed=4)
    suite = run_standard_suite(apps, A12, seed=4)
    out = fg_bg_breakdown(suite.reports)
    assert out["apps_using_sensors"] == 20 and out["foreground"] == 20
    assert out["background"] == 6 and out["post_termination"] == 2
    assert out["decreasing_or_equal"] == 6
    assert out["background_fraction"] == pytest.approx(0.3)


def test_fg_bg_population_validation():
    with pytest.raises(ValueError):
        fg_bg_population(10, 11)


@pytest.mark.parametrize("rate,label", [(52.3, "52"), (206, "~200"), (199, "~200"), (416.4, "416"),
                                        (20, "other"), (4.5, "5")])
def test_rate_bins(rate, label):
    assert rate_bin(rate) == label


def test_aggregate_conservation_and_histogram():
    reports = {
        "a": _report({ACC: [(5, 6, 416.0)], GYR: [(5, 6, 416.0)], MAG: [(5, 6, 100.0)]}),
        "b": _report({ACC: [(5, 9, 52.0), (10, 12, 206.0)], GYR: [], MAG: []}),
        "c": _report({ACC: [], GYR: [], MAG: []}),
    }
    stats = aggregate_stats(reports)
    assert stats["any_count"] == 2 and stats["all_three_count"] == 1
    assert stats["sensor_counts"] == {"accelerometer": 2, "gyroscope": 1, "magnetometer": 1}
    assert stats["any_count"] >= max(stats["sensor_counts"].values()) >= stats["all_three_count"]
    hist = rate_histogram(reports)
    assert hist["accelerometer"]["416"] == 1 and hist["accelerometer"]["~200"] == 1
    assert sum(hist["magnetometer"].values()) == 1


@pytest.mark.parametrize("case", case_signature_scenarios(A12, seed=6), ids=lambda c: c.name)
def test_case_signatures(case):
    _, _, errors = run_case(case)
    assert errors == []


def test_case_check_reports_problems():
    case = next(c for c in case_signature_scenarios(A12) if c.name == "magnes")
    assert case.check(_report({ACC: [], GYR: [], MAG: []}))
    shake = next(c for c in case_signature_scenarios(A12) if c.name == "shake_ad")
    wrong = _report({ACC: [(6, 11, 52.0)], GYR: []})
    assert shake.check(wrong)



def test_precision_and_recall_over_100_seeded_suites():
    for seed in range(100):
        res = run_standard_suite(synthetic_population(3, seed=seed), A12, seed=seed).evaluation
        assert res.precision == 1.0, seed
        # every synthetic request is GAME or faster, far above threshold + 0.4 Hz
        assert res.recall == 1.0, seed
