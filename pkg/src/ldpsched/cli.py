"""Command-line front end.

Subcommands::

    gen-topology  draw a random multi-cell deployment and its conflict graph
    gen-traffic   draw traffic for a topology and thin it until links pass the test
    test          run the per-link schedulability test
    simulate      run the slot-level scheduler and report deadline outcomes
    experiment    run a full (seed x channels) experiment grid from a config file
    report        print a persisted metrics table
    ratios        histogram CSV of the approximation-ratio bounds

Exit codes: 0 success, 1 input error, 2 capacity error, 3 internal invariant
violation.  The number of experiment worker processes is read from the
``LDPSCHED_WORKERS`` environment variable unless ``--workers`` is given.
"""

import argparse
import csv
import json
import sys
from types import SimpleNamespace

import numpy as np

from .conflict_graph import load_graph
from .errors import InputError, LDPError
from .experiments import (
    PAPER_HORIZON,
    ExperimentConfig,
    MetricsTable,
    ratio_histogram,
    run_experiment,
)
from .ldp import run_simulation
from .schedulability import LocalAnalyzer
from .traffic import (
    DeploymentParams,
    generate_topology,
    generate_traffic,
    load_traffic,
    save_topology,
    save_traffic,
)


def _write_json(path, obj):
    if path is None or path == "-":
        json.dump(obj, sys.stdout, indent=1)
        sys.stdout.write("\n")
    else:
        with open(path, "w") as fh:
            json.dump(obj, fh, indent=1)


def _config(args):
    return ExperimentConfig.load(args.config) if getattr(args, "config", None) else ExperimentConfig()


# -- subcommands ----------------------------------------------------------------


def cmd_gen_topology(args):
    if args.network is not None:
        params = DeploymentParams.network_1() if args.network == 1 else DeploymentParams.network_2()
    else:
        params = _config(args).deployment
    changes = {
        "seed": args.seed, "n_nodes": args.nodes, "n_links": args.links, "width": args.width,
        "height": args.height, "rows": args.rows, "cols": args.cols,
    }
    params = DeploymentParams.from_dict(dict(params.to_dict(), **{k: v for k, v in changes.items() if v is not None}))
    topo = generate_topology(params)
    save_topology(topo, args.out)
    g = topo.graph
    mean_deg = 2 * g.n_edges / len(g) if len(g) else 0.0
    print(f"{len(topo.positions)} nodes, {len(g)} links, {g.n_edges} conflicts, mean degree {mean_deg:.2f} -> {args.out}")
    return 0


def cmd_gen_traffic(args):
    cfg = _config(args)
    if args.deadline_range:
        cfg = cfg.with_overrides(deadline_range=tuple(args.deadline_range))
    g = load_graph(args.topology)
    rng = np.random.default_rng(args.seed)
    traffic, flagged = generate_traffic(
        g, args.channels, rng,
        deadline_range=cfg.deadline_range,
        slack_fraction=cfg.slack_fraction,
        demand_fraction=cfg.demand_fraction,
        link_reliability=cfg.link_reliability,
        first_arrival=cfg.first_arrival,
    )
    save_traffic(traffic, args.out)
    print(f"{len(traffic)} links, {len(flagged)} flagged unschedulable at X=1 -> {args.out}")
    if flagged:
        print("flagged:", " ".join(str(l) for l in flagged))
    return 0


def cmd_test(args):
    g = load_graph(args.topology)
    traffic = load_traffic(args.traffic)
    analyzer = LocalAnalyzer(g, method=args.method)
    links = args.link or list(g.node_ids)
    for l in links:
        if l not in g:
            raise InputError(f"unknown link id {l}")
    verdicts = [analyzer.test(l, traffic, args.channels) for l in links]
    for v in verdicts:
        worst = max(u for _, u in v.clique_U)
        print(f"link {v.link:>4}: {'pass' if v.schedulable else 'FAIL'}  max U {float(worst):.4f}"
              f"  necessary {'ok' if v.necessary_ok else 'violated'}  delta {float(v.delta):.4f}"
              f"  delta' {float(v.delta_prime):.4f}")
    ok = sum(v.schedulable for v in verdicts)
    print(f"{ok}/{len(verdicts)} links pass on {args.channels} channels")
    if args.out:
        _write_json(args.out, [v.to_dict() for v in verdicts])
    return 0


def cmd_simulate(args):
    g = load_graph(args.topology)
    traffic = load_traffic(args.traffic)
    report = run_simulation(
        g, traffic, args.channels, args.horizon, args.mode, scheduler=args.scheduler,
        seed=args.seed, check_invariants=args.check_invariants, record_slots=bool(args.slots_csv),
    )
    print(f"{report.scheduler} {report.mode}: {report.total_packets} packets, {report.total_misses} misses, "
          f"schedulable ratio {report.schedulable_ratio:.4f}, rounds max {report.max_rounds} "
          f"mean {report.mean_rounds:.2f}")
    if args.out:
        _write_json(args.out, report.to_dict())
    if args.slots_csv:
        report.write_slot_csv(args.slots_csv)
    return 0


def cmd_experiment(args):
    cfg = _config(args)
    horizon = PAPER_HORIZON if args.paper_horizon else args.horizon
    cfg = cfg.with_overrides(
        seeds=tuple(args.seeds) if args.seeds else None,
        channels=tuple(args.channels) if args.channels else None,
        horizon=horizon,
        mode={"det": "deterministic", "bern": "bernoulli"}.get(args.mode, args.mode),
        schedulers=tuple(args.schedulers) if args.schedulers else None,
        output_dir=args.out_dir,
        check_invariants=True if args.check_invariants else None,
    )
    cfg.validate()
    table = run_experiment(cfg, workers=args.workers)
    print(table.format_text())
    failed = [r for r in table.rows if r.get("error")]
    if failed:
        print(f"{len(failed)} rows recorded errors", file=sys.stderr)
    return 0


def cmd_report(args):
    table = MetricsTable.load(args.table)
    if args.format == "json":
        _write_json(None, table.to_dict())
    elif args.format == "csv":
        table.write_csv(sys.stdout)
    else:
        print(table.format_text())
        for r in table.rows:
            if r.get("bin_ratios"):
                cells = ", ".join(
                    f"[{b['lo']},{b['hi']}): {'absent' if b['ratio'] is None else format(b['ratio'], '.3f')}"
                    for b in r["bin_ratios"]
                )
                print(f"seed {r['seed']} N={r['channels']} {r['scheduler']} infeasible by deadline: {cells}")
    return 0


def cmd_ratios(args):
    with open(args.verdicts) as fh:
        data = json.load(fh)
    if not isinstance(data, list):
        raise InputError("verdict file must hold a list of verdict objects")
    verdicts = [SimpleNamespace(delta=v["delta"], delta_prime=v["delta_prime"]) for v in data]
    summary = ratio_histogram(verdicts, bins=args.bins)
    rows = []
    for name, s in summary.items():
        for lo, hi, c in zip(s.edges[:-1], s.edges[1:], s.counts):
            rows.append([name, f"{lo:.4g}", f"{hi:.4g}", c])
        print(f"{name}: n={s.n} mean {s.mean:.4f} 95% CI [{s.ci_low:.4f}, {s.ci_high:.4f}]")
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(out)
        w.writerow(["metric", "lo", "hi", "count"])
        w.writerows(rows)
    finally:
        if args.out:
            out.close()
    return 0


# -- parser ---------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="ldpsched", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("gen-topology", help="random deployment and conflict graph")
    s.add_argument("--config", help="experiment config JSON (its deployment section is used)")
    s.add_argument("--network", type=int, choices=(1, 2), help="preset: 91-node or 151-node deployment")
    s.add_argument("--seed", type=int)
    s.add_argument("--nodes", type=int)
    s.add_argument("--links", type=int)
    s.add_argument("--width", type=float)
    s.add_argument("--height", type=float)
    s.add_argument("--rows", type=int)
    s.add_argument("--cols", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_gen_topology)

    s = sub.add_parser("gen-traffic", help="random traffic thinned to pass the test")
    s.add_argument("--topology", required=True, help="topology or conflict-graph JSON")
    s.add_argument("--channels", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--config", help="experiment config JSON (traffic parameters)")
    s.add_argument("--deadline-range", type=int, nargs=2, metavar=("LO", "HI"))
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_gen_traffic)

    s = sub.add_parser("test", help="per-link schedulability test")
    s.add_argument("--topology", required=True)
    s.add_argument("--traffic", required=True)
    s.add_argument("--channels", type=int, required=True)
    s.add_argument("--link", type=int, action="append", help="restrict to these links (repeatable)")
    s.add_argument("--method", choices=("search", "mis"), default="search")
    s.add_argument("--out", help="write verdicts JSON here")
    s.set_defaults(func=cmd_test)

    s = sub.add_parser("simulate", help="slot-level simulation")
    s.add_argument("--topology", required=True)
    s.add_argument("--traffic", required=True)
    s.add_argument("--channels", type=int, required=True)
    s.add_argument("--horizon", type=int, default=20_000)
    s.add_argument("--mode", choices=("det", "bern", "deterministic", "bernoulli"), default="det")
    s.add_argument("--scheduler", choices=("ldp", "edf"), default="ldp")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--check-invariants", action="store_true")
    s.add_argument("--out", help="write the report JSON here")
    s.add_argument("--slots-csv", help="write per-slot active counts per channel here")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("experiment", help="full experiment grid")
    s.add_argument("--config", help="experiment config JSON; flags below override it")
    s.add_argument("--seeds", type=int, nargs="+")
    s.add_argument("--channels", type=int, nargs="+")
    s.add_argument("--horizon", type=int)
    s.add_argument("--paper-horizon", action="store_true", help=f"simulate {PAPER_HORIZON} slots")
    s.add_argument("--mode", choices=("det", "bern", "deterministic", "bernoulli"))
    s.add_argument("--schedulers", nargs="+", choices=("ldp", "edf", "edf-baseline"))
    s.add_argument("--check-invariants", action="store_true")
    s.add_argument("--out-dir")
    s.add_argument("--workers", type=int)
    s.set_defaults(func=cmd_experiment)

    s = sub.add_parser("report", help="print a metrics table")
    s.add_argument("--table", required=True, help="metrics.json written by 'experiment'")
    s.add_argument("--format", choices=("text", "csv", "json"), default="text")
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("ratios", help="delta / delta' histogram CSV")
    s.add_argument("--verdicts", required=True, help="verdicts JSON written by 'test --out'")
    s.add_argument("--bins", type=int, default=10)
    s.add_argument("--out", help="CSV path (default stdout)")
    s.set_defaults(func=cmd_ratios)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except LDPError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return InputError.exit_code


if __name__ == "__main__":
    sys.exit(main())
