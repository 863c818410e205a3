"""Command-line entry point: ``ratewatch {profile,simulate,detect,evaluate,report}``.

Exit status is 0 on success, 1 on bad input and 2 when an internal invariant
fails.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import harness
from ._validation import TraceError
from .detector import detect_all
from .device import ProfileError
from .io import (
    FormatError,
    dumps_json,
    finite_json,
    ground_truth_from_dict,
    ground_truth_to_dict,
    histogram_csv,
    parse_traces,
    read_profile,
    report_from_dict,
    report_to_dict,
    scenario_from_dict,
    scenario_to_dict,
    write_traces,
)
from .profiler import ProbePlan, derive_thresholds, profile_device, profile_fragment, simulated_probe
from .simulator import ScenarioError, StandardTimeline, simulate, standard_procedure_scenario

log = logging.getLogger("ratewatch")

TRACES = "traces.csv"
TRUTH = "ground_truth.json"
SCENARIO = "scenario.json"
REPORT = "report.json"
BUILTIN_SCENARIOS = ("appsflyer", "magnes", "shake_ad", "post_termination", "no_usage")


class InputError(Exception):
    pass


INPUT_ERRORS = (InputError, ProfileError, ScenarioError, FormatError, TraceError,
                FileNotFoundError, json.JSONDecodeError)


def _write(path: Path, data: "bytes | str") -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, str):
        data = data.encode("utf-8")
    path.write_bytes(data)


def _read_json(path: Path) -> dict:
    return json.loads(path.read_text(encoding="utf-8"))


def _builtin_scenario(name: str, profile, seed: int):
    if name == "no_usage":
        return harness.no_usage_scenario(profile, seed=seed)
    for case in harness.case_signature_scenarios(profile, seed=seed):
        if case.name == name:
            return case.scenario
    raise InputError(f"unknown scenario {name!r}; built-ins are {', '.join(BUILTIN_SCENARIOS)} "
                     f"or pass a scenario file")


def _write_session(out: Path, scenario) -> None:
    traces, truth = simulate(scenario)
    _write(out / TRACES, write_traces(traces))
    _write(out / TRUTH, dumps_json(finite_json(ground_truth_to_dict(truth))))
    _write(out / SCENARIO, dumps_json(finite_json(scenario_to_dict(scenario))))


def cmd_profile(args) -> int:
    if not args.profile:
        raise InputError("profile needs --profile naming the (simulated) device to probe")
    device = read_profile(args.profile)
    plan = ProbePlan(dwell_s=args.dwell)
    result = profile_device(simulated_probe(device, plan, seed=args.seed), plan)
    thresholds, excluded = derive_thresholds(result)
    out = Path(args.out)
    _write(out / "profile.ini", profile_fragment(result, device.name, device.android_version))
    for sensor, f in result.f_min.items():
        print(f"{sensor.value}: f_min {f:g} Hz, threshold {thresholds.threshold(sensor):g} Hz")
    for sensor in sorted(excluded, key=lambda s: s.value):
        print(f"{sensor.value}: unprofiled")
    print(f"profiling time: {result.elapsed_s:g} s")
    return 0


def cmd_simulate(args) -> int:
    out = Path(args.out)
    profile = read_profile(args.profile) if args.profile else None
    if args.suite:
        profile = profile or read_profile("OnePlus Nord N200")
        apps = harness.synthetic_population(args.suite, seed=args.seed)
        for i, app in enumerate(apps):
            scenario = standard_procedure_scenario(app, profile, seed=args.seed * 100_003 + i)
            _write_session(out / app.app_id, scenario)
        print(f"wrote {len(apps)} sessions to {out}")
        return 0
    if not args.scenario:
        raise InputError("simulate needs --scenario or --suite")
    path = Path(args.scenario)
    if path.is_file():
        scenario = scenario_from_dict(_read_json(path), profile)
        if args.seed is not None:
            scenario = scenario.replace(seed=args.seed)
    else:
        scenario = _builtin_scenario(args.scenario, profile or read_profile("OnePlus Nord N200"),
                                     args.seed or 0)
    _write_session(out, scenario)
    print(f"wrote {out / TRACES}")
    return 0


def _sessions(root: Path, filename: str) -> list[Path]:
    if root.is_file():
        return [root]
    if not root.is_dir():
        raise FileNotFoundError(f"no such file or directory: {root}")
    return sorted(root.rglob(filename))


def _timeline_for(trace_path: Path, mode: str):
    if mode == "none":
        return None
    if mode == "standard":
        return StandardTimeline()
    scenario_file = trace_path.parent / SCENARIO
    if scenario_file.is_file():
        tl = _read_json(scenario_file).get("timeline")
        return StandardTimeline(**tl) if tl else None
    return None


def cmd_detect(args) -> int:
    if not args.profile:
        raise InputError("no device profile given (--profile). Run the profiling stage first "
                         "(`ratewatch profile`) or name a built-in device profile.")
    profile = read_profile(args.profile)
    root = Path(args.trace)
    paths = _sessions(root, TRACES)
    if not paths:
        raise InputError(f"no {TRACES} found under {root}")
    out = Path(args.out)
    for path in paths:
        traces = parse_traces(path.read_bytes())
        report = detect_all(traces, profile, timeline=_timeline_for(path, args.timeline))
        rel = Path(".") if root.is_file() else path.parent.relative_to(root)
        _write(out / rel / REPORT, dumps_json(finite_json(report_to_dict(report))))
        n = len(report.all_intervals())
        print(f"{rel}: {n} usage interval{'s' if n != 1 else ''}")
    return 0


def _load_pairs(reports_root: Path, truth_root: Path):
    pairs = []
    for path in _sessions(reports_root, REPORT):
        rel = Path(".") if reports_root.is_file() else path.parent.relative_to(reports_root)
        truth_path = truth_root if truth_root.is_file() else truth_root / rel / TRUTH
        if not truth_path.is_file():
            raise InputError(f"no ground truth for {path} (looked for {truth_path})")
        pairs.append((str(rel), report_from_dict(_read_json(path)),
                      ground_truth_from_dict(_read_json(truth_path))))
    if not pairs:
        raise InputError(f"no {REPORT} found under {reports_root}")
    return pairs


def cmd_evaluate(args) -> int:
    reports_root = Path(args.reports)
    truth_root = Path(args.truth) if args.truth else reports_root
    evaluation = harness.EvaluationResult()
    for name, report, truth in _load_pairs(reports_root, truth_root):
        evaluation.per_scenario.append(harness.score_report(report, truth, name))
    summary = evaluation.summary()
    out = Path(args.out) if args.out else (reports_root if reports_root.is_dir() else reports_root.parent)
    _write(out / "evaluation.json", dumps_json(finite_json(evaluation.to_dict())))
    print(f"apps detected: {summary['apps_detected']}/{summary['apps_with_usage']}")
    print(f"recall: {summary['recall']:.3f}")
    print(f"precision: {summary['precision']:.3f}")
    print(f"rate MAE: {summary['rate_mae_hz']:.3f} Hz")
    print(f"blind spots: {summary['blind_spots']}")
    return 0


def cmd_report(args) -> int:
    root = Path(args.reports)
    reports = {}
    for path in _sessions(root, REPORT):
        rel = path.parent.relative_to(root) if root.is_dir() else Path(path.stem)
        reports[str(rel)] = report_from_dict(_read_json(path))
    if not reports:
        raise InputError(f"no {REPORT} found under {root}")
    stats = harness.aggregate_stats(reports)
    counts = stats["sensor_counts"]
    if not (stats["any_count"] >= max(counts.values()) and min(counts.values()) >= stats["all_three_count"]):
        raise AssertionError("aggregation conservation violated")
    out = Path(args.out)
    _write(out / "aggregate_stats.json", dumps_json(finite_json(stats)))
    _write(out / "rate_histogram.csv", histogram_csv(stats["histogram"]))
    print(f"{stats['apps']} reports; any sensor {stats['any_fraction']:.3f}, "
          f"all three {stats['all_three_fraction']:.3f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ratewatch", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("profile", help="measure per-sensor minimum rates of a simulated device")
    p.add_argument("--profile", help="built-in device name or profile file to simulate")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dwell", type=float, default=5.0, help="seconds per probe")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("simulate", help="write monitor traces and ground truth for a scenario")
    p.add_argument("--scenario", help=f"scenario file or one of {', '.join(BUILTIN_SCENARIOS)}")
    p.add_argument("--suite", type=int, help="simulate N synthetic apps through the standard procedure")
    p.add_argument("--profile", help="built-in device name or profile file")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("detect", help="detect sensor usage in trace files")
    p.add_argument("--trace", required=True, help=f"{TRACES} file or directory of sessions")
    p.add_argument("--profile", help="built-in device name or profile file")
    p.add_argument("--timeline", choices=("auto", "standard", "none"), default="auto",
                   help="phase labelling: from scenario.json (auto), the standard procedure, or none")
    p.add_argument("--seed", type=int, default=None, help="accepted for symmetry; detection is deterministic")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("evaluate", help="score reports against ground truth")
    p.add_argument("--reports", required=True, help=f"{REPORT} file or directory")
    p.add_argument("--truth", help=f"{TRUTH} file or directory (default: alongside the reports)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="aggregate many reports into population statistics")
    p.add_argument("--reports", required=True, help="directory of report files")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # invariant failures and bugs
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
