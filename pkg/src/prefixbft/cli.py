"""Command-line front end: single runs, seeded campaigns, variant comparison.

Exit status mirrors the observer verdict: 0 for a clean run (all invariants
held), 1 when any invariant was violated (a counterexample file is written),
2 for an invalid scenario.
"""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from importlib import resources
from pathlib import Path

from .sim.runner import Simulation, run_scenario
from .sim.scenario import (Scenario, ScenarioError, dump_scenario,
                           load_scenario, scenario_from_dict)

OUT_DIR_ENV = "PREFIXBFT_OUT_DIR"


def resolve_scenario_path(name: str) -> Path:
    path = Path(name)
    if path.exists():
        return path
    if "/" not in name and not name.endswith(".yaml"):
        bundled = resources.files("prefixbft") / "scenarios" / f"{name}.yaml"
        if bundled.is_file():
            return Path(str(bundled))
    raise FileNotFoundError(f"scenario {name!r} not found")


def _out_dir(arg) -> Path:
    base = Path(arg) if arg else Path(os.environ.get(OUT_DIR_ENV, "."))
    base.mkdir(parents=True, exist_ok=True)
    return base


def _load(args) -> Scenario:
    scenario = load_scenario(resolve_scenario_path(args.scenario))
    if getattr(args, "variant", None):
        scenario = scenario.with_overrides(variant=args.variant)
    return scenario


def write_counterexample(scenario: Scenario, seed: int, path: Path) -> None:
    """Replay the failing run with tracing and emit the event-log prefix."""
    sim = Simulation(scenario, seed=seed, trace=True)
    report = sim.run()
    lines = [f"counterexample for scenario={scenario.name} seed={seed}"]
    if report.violation:
        for key in sorted(report.violation):
            lines.append(f"{key}: {report.violation[key]}")
    lines.append(f"trace ({len(sim.trace)} events up to the violation):")
    kinds = {0: "msg", 1: "timer", 2: "submit", 3: "maint"}
    for event in sim.trace:
        time, seq, kind, target, a, b = event
        if kind == 0:
            desc = f"from={a} {type(b).__name__}"
        elif kind == 1:
            desc = f"timer={a}"
        elif kind == 2:
            desc = f"tx_index={a}"
        else:
            desc = ""
        lines.append(f"  t={time!r} seq={seq} {kinds[kind]} -> {target} {desc}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def cmd_run(args) -> int:
    try:
        scenario = _load(args)
    except (ScenarioError, FileNotFoundError) as exc:
        print(f"invalid scenario: {exc}", file=sys.stderr)
        return 2
    seed = args.seed if args.seed is not None else scenario.seed
    report = run_scenario(scenario, seed=seed, hop_counts=args.hop_count_mode)
    out_dir = _out_dir(args.out)
    report_path = out_dir / f"{scenario.name}.seed{seed}.report.txt"
    report_path.write_text(report.render(), encoding="utf-8")
    print(report.render(), end="")
    if not report.ok:
        ce_path = out_dir / f"{scenario.name}.seed{seed}.counterexample.txt"
        write_counterexample(scenario, seed, ce_path)
        print(f"counterexample written to {ce_path}", file=sys.stderr)
        return 1
    return 0


def _campaign_worker(payload) -> tuple[int, str, str]:
    raw, seed, variant = payload
    scenario = scenario_from_dict(raw)
    if variant:
        scenario = scenario.with_overrides(variant=variant)
    report = run_scenario(scenario, seed=seed)
    return seed, report.verdict, report.digest()


def run_campaign(scenario: Scenario, seeds, parallelism: int = 1,
                 variant: str | None = None):
    """Deterministic per-seed verdicts, independent of worker count."""
    jobs = [(scenario.raw, seed, variant) for seed in seeds]
    if parallelism > 1:
        with ProcessPoolExecutor(max_workers=parallelism) as pool:
            results = list(pool.map(_campaign_worker, jobs, chunksize=8))
    else:
        results = [_campaign_worker(job) for job in jobs]
    results.sort()
    return results


def cmd_campaign(args) -> int:
    try:
        scenario = _load(args)
    except (ScenarioError, FileNotFoundError) as exc:
        print(f"invalid scenario: {exc}", file=sys.stderr)
        return 2
    seeds = list(range(args.seed_start, args.seed_start + args.seeds))
    results = run_campaign(scenario, seeds, parallelism=args.parallelism)
    failures = [(seed, verdict) for seed, verdict, _ in results if verdict != "ok"]
    out_dir = _out_dir(args.out)
    lines = [f"campaign: {scenario.name} seeds={args.seed_start}..{seeds[-1]}"]
    lines.extend(f"seed {seed}: {verdict}" for seed, verdict, _ in results)
    lines.append(f"result: {'FAIL' if failures else 'PASS'} "
                 f"({len(results) - len(failures)}/{len(results)} clean)")
    text = "\n".join(lines) + "\n"
    (out_dir / f"{scenario.name}.campaign.txt").write_text(text, encoding="utf-8")
    print(text, end="")
    if failures:
        seed = failures[0][0]
        ce_path = out_dir / f"{scenario.name}.seed{seed}.counterexample.txt"
        write_counterexample(scenario, seed, ce_path)
        print(f"first failing seed {seed}; counterexample at {ce_path}",
              file=sys.stderr)
        return 1
    return 0


def cmd_compare(args) -> int:
    try:
        scenario = _load(args)
    except (ScenarioError, FileNotFoundError) as exc:
        print(f"invalid scenario: {exc}", file=sys.stderr)
        return 2
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    seeds = list(range(args.seed_start, args.seed_start + args.seeds))
    columns = ["variant", "verdicts", "p50", "mean", "block_rate", "tc_rounds",
               "prefix_hist", "hops"]
    rows = []
    for variant in variants:
        try:
            var_scenario = scenario.with_overrides(variant=variant)
        except ScenarioError as exc:
            print(f"invalid variant {variant!r}: {exc}", file=sys.stderr)
            return 2
        p50s, means, rates, tcs = [], [], [], []
        hists: dict[int, int] = {}
        verdicts = 0
        hops = None
        for seed in seeds:
            report = run_scenario(var_scenario, seed=seed,
                                  hop_counts=args.hop_count_mode)
            if report.ok:
                verdicts += 1
            agg = report.aggregates
            p50s.append(agg["ordering_p50"])
            means.append(agg["ordering_mean"])
            rates.append(agg["block_rate"])
            tcs.append(report.tc_rounds)
            for k, v in report.prefix_histogram.items():
                hists[k] = hists.get(k, 0) + v
            if report.hops is not None:
                hops = report.hops["ordering_hops_mean"]
        def avg(xs):
            xs = [x for x in xs if x == x]  # drop NaNs
            return sum(xs) / len(xs) if xs else float("nan")
        rows.append([
            variant, f"{verdicts}/{len(seeds)} ok", f"{avg(p50s):.3f}",
            f"{avg(means):.3f}", f"{avg(rates):.4f}", f"{sum(tcs)}",
            ",".join(f"{k}:{v}" for k, v in sorted(hists.items())),
            f"{hops:.2f}" if hops is not None else "-",
        ])
    widths = [max(len(str(row[i])) for row in rows + [columns])
              for i in range(len(columns))]
    def fmt(row):
        return "  ".join(str(cell).ljust(widths[i]) for i, cell in enumerate(row))
    text = "\n".join([fmt(columns)] + [fmt(row) for row in rows]) + "\n"
    (_out_dir(args.out) / f"{scenario.name}.compare.txt").write_text(
        text, encoding="utf-8")
    print(text, end="")
    return 0


def cmd_show(args) -> int:
    try:
        scenario = _load(args)
    except (ScenarioError, FileNotFoundError) as exc:
        print(f"invalid scenario: {exc}", file=sys.stderr)
        return 2
    print(dump_scenario(scenario), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="prefixbft",
        description="Simulate prefix-consensus BFT replication scenarios")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute one scenario run")
    run.add_argument("--scenario", required=True)
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--variant", default=None)
    run.add_argument("--out", default=None)
    run.add_argument("--hop-count-mode", action="store_true")
    run.set_defaults(func=cmd_run)

    campaign = sub.add_parser("campaign", help="run many seeds of one scenario")
    campaign.add_argument("--scenario", required=True)
    campaign.add_argument("--seeds", type=int, default=100)
    campaign.add_argument("--seed-start", type=int, default=0)
    campaign.add_argument("--variant", default=None)
    campaign.add_argument("--parallelism", type=int, default=1)
    campaign.add_argument("--out", default=None)
    campaign.set_defaults(func=cmd_campaign)

    compare = sub.add_parser("compare", help="side-by-side variant comparison")
    compare.add_argument("--scenario", required=True)
    compare.add_argument("--variants", default="RAPTR,BABY_RAPTR,BASELINE_QS")
    compare.add_argument("--seeds", type=int, default=3)
    compare.add_argument("--seed-start", type=int, default=0)
    compare.add_argument("--out", default=None)
    compare.add_argument("--hop-count-mode", action="store_true")
    compare.set_defaults(func=cmd_compare)

    show = sub.add_parser("show", help="parse, validate, and print a scenario")
    show.add_argument("--scenario", required=True)
    show.add_argument("--variant", default=None)
    show.set_defaults(func=cmd_show)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
