import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ratewatch.detector import SensorEventTrace, detect_all
from ratewatch.device import ALL_SENSORS, NamedConstant, get_profile
from ratewatch.harness import case_signature_scenarios
from ratewatch.io import (
    FormatError,
    dumps_json,
    finite_json,
    ground_truth_from_dict,
    ground_truth_to_dict,
    histogram_csv,
    parse_request,
    parse_traces,
    read_profile,
    report_from_dict,
    report_to_dict,
    scenario_from_dict,
    scenario_to_dict,
    validate_report,
    write_traces,
)
from ratewatch.simulator import ScenarioError, StandardTimeline, simulate

A12 = get_profile("OnePlus Nord N200")
ACC, GYR, MAG = ALL_SENSORS


def _shake():
    return next(c for c in case_signature_scenarios(A12, seed=2) if c.name == "shake_ad").scenario


def test_trace_csv_shape():
    traces = {GYR: SensorEventTrace(GYR, [0, 10]), ACC: SensorEventTrace(ACC, [5])}
    assert write_traces(traces) == b"sensor,timestamp_ns\naccelerometer,5\ngyroscope,0\ngyroscope,10\n"


def test_trace_round_trip_on_simulated_session():
    traces, _ = simulate(_shake())
    data = write_traces(traces)
    assert parse_traces(data) == traces
    assert write_traces(parse_traces(data)) == data


@settings(max_examples=1000, deadline=None)
@given(st.dictionaries(st.sampled_from(ALL_SENSORS),
                       st.sets(st.integers(0, 2**62), min_size=1, max_size=20), max_size=3))
def test_trace_round_trip_property(raw):
    traces = {s: SensorEventTrace(s, np.array(sorted(ts), dtype=np.int64)) for s, ts in raw.items()}
    assert parse_traces(write_traces(traces)) == traces


@pytest.mark.parametrize("text,line", [
    ("sensor,timestamp_ns\ngyroscope,10\ngyroscope,5\n", 3),
    ("sensor,timestamp_ns\ngyroscope,10\naccelerometer,11\n", 3),
    ("sensor,timestamp_ns\ngyroscope,1.5\n", 2),
    ("sensor,timestamp_ns\nbarometer,1\n", 2),
    ("sensor,timestamp_ns\ngyroscope\n", 2),
])
def test_trace_errors_name_the_line(text, line):
    with pytest.raises(FormatError, match=f"line {line}"):
        parse_traces(text)


def test_trace_header_required():
    with pytest.raises(FormatError):
        parse_traces("gyroscope,1\n")


def test_report_round_trip():
    sc = _shake()
    traces, _ = simulate(sc)
    report = detect_all(traces, A12, timeline=sc.timeline)
    report.flags["baseline_violation"] = False
    doc = finite_json(report_to_dict(report))
    back = report_from_dict(json.loads(dumps_json(doc)))
    assert back.intervals[ACC][0].constant is NamedConstant.UI
    assert finite_json(report_to_dict(back)) == doc
    assert doc["thresholds_hz"] == {"accelerometer": 5.5, "gyroscope": 1.5, "magnetometer": 1.5}
    assert doc["flags"]["blind_spot_at_or_below_hz"]["accelerometer"] == 5.0


def test_report_schema_rejects_bad_documents():
    traces, _ = simulate(_shake())
    doc = report_to_dict(detect_all(traces, A12))
    bad = json.loads(json.dumps(doc))
    bad["sensors"]["gyroscope"]["intervals"][0]["rate_hz"] = -1
    with pytest.raises(FormatError):
        validate_report(bad)
    bad = json.loads(json.dumps(doc))
    del bad["format"]
    with pytest.raises(FormatError):
        report_from_dict(bad)


def test_ground_truth_round_trip():
    _, truth = simulate(_shake())
    doc = ground_truth_to_dict(truth)
    assert ground_truth_from_dict(json.loads(dumps_json(doc))) == truth
    assert ground_truth_from_dict(doc).timeline == StandardTimeline()
    with pytest.raises(FormatError):
        ground_truth_from_dict({"format": "other"})


def test_scenario_round_trip():
    sc = _shake()
    doc = scenario_to_dict(sc)
    assert scenario_from_dict(json.loads(dumps_json(doc))) == sc
    assert doc["timeline"] == {"launch_s": 5.0, "background_s": 20.0, "terminate_s": 35.0}


@pytest.mark.parametrize("text,hz", [("20Hz", 20.0), ("50ms", 20.0), ("5000us", 200.0), (" 2.5 hz ", 2.5)])
def test_parse_request_units(text, hz):
    assert parse_request(text).hz == pytest.approx(hz)


def test_parse_request_constants_and_errors():
    assert parse_request("game").constant is NamedConstant.GAME
    assert parse_request("FASTEST", True).high_rate_permission
    for bad in ("20", "fast", "0Hz", "-5ms"):
        with pytest.raises(ScenarioError):
            parse_request(bad)


def test_scenario_file_errors():
    with pytest.raises(ScenarioError):
        scenario_from_dict({"profile": "OnePlus Nord N200"})
    with pytest.raises(ScenarioError):
        scenario_from_dict({"profile": "OnePlus Nord N200", "duration_s": 10,
                            "apps": [{"id": "a", "registrations": [
                                {"sensor": "gyroscope", "request": "20", "register_s": 1}]}]})


def test_read_profile_file_or_builtin(tmp_path):
    from ratewatch.device import dump_profile
    path = tmp_path / "p.ini"
    path.write_text(dump_profile(A12))
    assert read_profile(str(path)) == A12
    assert read_profile("oneplus-a12") == A12


def test_histogram_csv():
    out = histogram_csv({"gyroscope": {"52": 2, "other": 0}, "accelerometer": {"52": 1}})
    assert out == b"sensor,bin,count\naccelerometer,52,1\ngyroscope,52,2\ngyroscope,other,0\n"


def test_finite_json():
    assert finite_json({"a": [1.23456, 2]}) == {"a": [1.235, 2]}
    with pytest.raises(ValueError):
        finite_json({"a": float("nan")})
