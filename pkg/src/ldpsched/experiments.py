"""Experiment orchestration: topology -> traffic -> test -> simulation -> metrics.

An :class:`ExperimentConfig` describes a grid of (seed, channel count)
cells.  Each cell draws one topology per seed, generates traffic for the
channel count, runs the schedulability test on every link and simulates
every selected scheduler.  One :class:`MetricsTable` row is produced per
(seed, channels, scheduler); cells may run in worker processes, but rows
are always assembled in (seed, channels, scheduler) order so the output is
reproducible byte for byte.
"""

import csv
import json
import math
import os
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from fractions import Fraction
from pathlib import Path

import numpy as np

from .errors import GenerationError, InputError, LDPError
from .ldp import run_simulation
from .schedulability import LocalAnalyzer
from .traffic import (
    DeploymentParams,
    generate_topology,
    generate_traffic,
    save_topology,
    save_traffic,
    traffic_map,
)

__all__ = [
    "ExperimentConfig",
    "MetricsTable",
    "RatioSummary",
    "run_experiment",
    "run_cell",
    "schedulable_instance",
    "deadline_bins",
    "deadline_bin_report",
    "ratio_histogram",
    "baseline_concentration",
    "recompute_rows",
    "worker_count",
    "PAPER_HORIZON",
    "WORKERS_ENV",
]

DEFAULT_HORIZON = 20_000
PAPER_HORIZON = 200_000
WORKERS_ENV = "LDPSCHED_WORKERS"

_SCHEDULER_ALIASES = {"ldp": "ldp", "edf": "edf", "edf-baseline": "edf"}


def _pair(value, name):
    try:
        lo, hi = value
    except (TypeError, ValueError):
        raise InputError(f"{name} must be a [lo, hi] pair, got {value!r}") from None
    return lo, hi


@dataclass
class ExperimentConfig:
    """Everything needed to reproduce one experiment grid.

    ``slack_fraction`` bounds ``T - D`` as a fraction of ``D`` and
    ``demand_fraction`` bounds ``X`` as fractions of ``D``.  ``bin_width``
    sets the relative-deadline bins of the per-bin report.
    """

    deployment: DeploymentParams = field(default_factory=DeploymentParams.network_1)
    deadline_range: tuple = (10, 40)
    slack_fraction: Fraction = Fraction(1, 6)
    demand_fraction: tuple = (Fraction(1, 6), Fraction(5, 6))
    link_reliability: float = 0.5
    first_arrival: int = 0
    channels: tuple = (4,)
    horizon: int = DEFAULT_HORIZON
    mode: str = "deterministic"
    schedulers: tuple = ("ldp", "edf")
    seeds: tuple = (0,)
    bin_width: int = 10
    histogram_bins: int = 10
    check_invariants: bool = False
    output_dir: str = None

    def __post_init__(self):
        if isinstance(self.deployment, dict):
            self.deployment = DeploymentParams.from_dict(self.deployment)
        self.deadline_range = tuple(int(v) for v in _pair(self.deadline_range, "deadline_range"))
        self.demand_fraction = tuple(Fraction(v) for v in _pair(self.demand_fraction, "demand_fraction"))
        self.slack_fraction = Fraction(self.slack_fraction)
        self.channels = tuple(int(n) for n in self.channels)
        self.seeds = tuple(int(s) for s in self.seeds)
        self.schedulers = tuple(self.schedulers)
        self.validate()

    def validate(self):
        lo, hi = self.deadline_range
        if not 1 <= lo <= hi:
            raise InputError(f"deadline_range must satisfy 1 <= lo <= hi, got {self.deadline_range}")
        f_lo, f_hi = self.demand_fraction
        if not 0 < f_lo <= f_hi <= 1:
            raise InputError(f"demand_fraction must satisfy 0 < lo <= hi <= 1, got {self.demand_fraction}")
        if self.slack_fraction < 0:
            raise InputError("slack_fraction must be non-negative")
        if not 0 < self.link_reliability < 1:
            raise InputError("link_reliability must lie in (0, 1)")
        if not self.channels or min(self.channels) < 1:
            raise InputError("channel sweep must be non-empty with values >= 1")
        if self.horizon < 1:
            raise InputError("horizon must be >= 1")
        if self.mode not in ("deterministic", "bernoulli"):
            raise InputError("mode must be 'deterministic' or 'bernoulli'")
        if not self.schedulers:
            raise InputError("at least one scheduler is required")
        for s in self.schedulers:
            if s not in _SCHEDULER_ALIASES:
                raise InputError(f"unknown scheduler {s!r}; choose from ldp, edf")
        if not self.seeds:
            raise InputError("at least one seed is required")
        if self.bin_width < 1 or self.histogram_bins < 1:
            raise InputError("bin widths must be >= 1")

    def to_dict(self):
        d = asdict(self)
        d["deployment"] = self.deployment.to_dict()
        d["slack_fraction"] = str(self.slack_fraction)
        d["demand_fraction"] = [str(f) for f in self.demand_fraction]
        for key in ("deadline_range", "channels", "schedulers", "seeds"):
            d[key] = list(d[key])
        return d

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(data) - known)
        if unknown:
            raise InputError(f"unknown config keys: {unknown}")
        if "slack_fraction" in data:
            data["slack_fraction"] = Fraction(data["slack_fraction"])
        if "demand_fraction" in data:
            data["demand_fraction"] = tuple(Fraction(v) for v in _pair(data["demand_fraction"], "demand_fraction"))
        return cls(**data)

    @classmethod
    def load(cls, path):
        try:
            with open(path) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read config {path}: {exc}") from None
        return cls.from_dict(data)

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)

    def with_overrides(self, **changes):
        """Copy with the non-None keyword arguments replaced."""
        return replace(self, **{k: v for k, v in changes.items() if v is not None})


# ---------------------------------------------------------------------------
# Reports over verdicts


def deadline_bins(deadline_range, width):
    """Half-open ``[lo, hi)`` bins of ``width`` slots covering the range.

    The last bin is stretched to include the top of the range.
    """
    lo, hi = deadline_range
    starts = list(range(lo, hi, width)) or [lo]
    bins = [(a, a + width) for a in starts]
    bins[-1] = (starts[-1], max(starts[-1] + width, hi + 1))
    return bins


def _ok(v):
    if hasattr(v, "schedulable"):
        return bool(v.schedulable)
    return bool(v)


def deadline_bin_report(verdicts, traffic, bins):
    """Infeasible-link ratio per relative-deadline bin.

    ``verdicts`` maps link id to a truthy "meets its requirement" value or an
    object with a ``schedulable`` attribute.  Bins are ``(lo, hi)`` pairs
    matching ``lo <= D < hi``.  A bin with no links gets ``ratio`` None.
    """
    tr = traffic_map(traffic)
    rows = []
    placed = set()
    for lo, hi in bins:
        members = [l for l in verdicts if lo <= tr[l].D < hi]
        placed.update(members)
        bad = sum(1 for l in members if not _ok(verdicts[l]))
        rows.append({
            "lo": lo,
            "hi": hi,
            "links": len(members),
            "infeasible": bad,
            "ratio": bad / len(members) if members else None,
        })
    stray = sorted(set(verdicts) - placed)
    if stray:
        raise InputError(f"bins do not cover the deadlines of links {stray}")
    return rows


@dataclass
class RatioSummary:
    """Histogram, mean and normal-approximation 95% CI of a set of ratios."""

    n: int
    mean: float
    ci_low: float
    ci_high: float
    edges: list
    counts: list

    def to_dict(self):
        return asdict(self)


def _summarize(values, bins):
    values = [float(v) for v in values]
    n = len(values)
    mean = statistics.fmean(values)
    if n > 1:
        half = 1.96 * statistics.stdev(values) / math.sqrt(n)
    else:
        half = 0.0
    counts, edges = np.histogram(values, bins=bins, range=(0.0, 1.0))
    return RatioSummary(n, mean, mean - half, mean + half, [float(e) for e in edges], [int(c) for c in counts])


def ratio_histogram(verdicts, bins=10):
    """Summaries of delta and delta' over the given verdicts.

    Returns ``{"delta": RatioSummary, "delta_prime": RatioSummary}``.
    """
    verdicts = list(verdicts.values()) if isinstance(verdicts, dict) else list(verdicts)
    if not verdicts:
        raise InputError("ratio_histogram needs at least one verdict")
    return {
        "delta": _summarize([v.delta for v in verdicts], bins),
        "delta_prime": _summarize([v.delta_prime for v in verdicts], bins),
    }


def baseline_concentration(traffic, failed):
    """Whether a scheduler's failures sit at the short-deadline end.

    Compares the mean relative deadline of the ``failed`` links with that
    of all links.  ``status`` is ``"short-deadline"`` when the failures have
    the lower mean and ``"flagged"`` otherwise (including when nothing failed).
    """
    tr = traffic_map(traffic)
    all_d = [t.D for t in tr.values()]
    fail_d = [tr[l].D for l in failed]
    mean_all = statistics.fmean(all_d) if all_d else None
    mean_fail = statistics.fmean(fail_d) if fail_d else None
    short = mean_fail is not None and mean_fail < mean_all
    return {
        "status": "short-deadline" if short else "flagged",
        "failed": len(fail_d),
        "mean_deadline_failed": mean_fail,
        "mean_deadline_all": mean_all,
    }


# ---------------------------------------------------------------------------
# Metrics table


COLUMNS = (
    "seed", "channels", "scheduler", "links", "flagged", "test_ratio",
    "schedulable_ratio", "mean_delta", "delta_ci_low", "delta_ci_high",
    "mean_delta_prime", "packets", "misses", "consistency_violations",
    "bin_ratios", "error",
)


@dataclass
class MetricsTable:
    rows: list = field(default_factory=list)

    def __len__(self):
        return len(self.rows)

    def to_dict(self):
        return {"columns": list(COLUMNS), "rows": self.rows}

    def save_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)

    def write_csv(self, fh):
        w = csv.writer(fh)
        w.writerow(COLUMNS)
        for row in self.rows:
            out = []
            for c in COLUMNS:
                v = row.get(c)
                if c == "bin_ratios" and v is not None:
                    v = ";".join(
                        f"[{b['lo']},{b['hi']}):{'-' if b['ratio'] is None else format(b['ratio'], '.6g')}"
                        for b in v
                    )
                elif isinstance(v, float):
                    v = format(v, ".6g")
                out.append("" if v is None else v)
            w.writerow(out)

    def save_csv(self, path):
        with open(path, "w", newline="") as fh:
            self.write_csv(fh)

    @classmethod
    def load(cls, path):
        try:
            with open(path) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read metrics table {path}: {exc}") from None
        if "rows" not in data:
            raise InputError(f"{path} is not a metrics table")
        return cls(data["rows"])

    def format_text(self):
        head = ("seed", "N", "sched", "links", "test", "sim", "delta", "delta_ci", "delta'", "misses")
        lines = ["  ".join(f"{h:>8}" for h in head)]
        for r in self.rows:
            if r.get("error"):
                lines.append(f"{r['seed']:>8}  {r['channels']:>8}  {r['scheduler']:>8}  error: {r['error']}")
                continue

            def num(v):
                return "-" if v is None else f"{v:.4f}"

            ci = "-" if r["delta_ci_low"] is None else f"{r['delta_ci_low']:.3f}..{r['delta_ci_high']:.3f}"
            cells = (r["seed"], r["channels"], r["scheduler"], r["links"], num(r["test_ratio"]),
                     num(r["schedulable_ratio"]), num(r["mean_delta"]), ci, num(r["mean_delta_prime"]), r["misses"])
            lines.append("  ".join(f"{c:>8}" for c in cells))
        return "\n".join(lines)


# ---------------------------------------------------------------------------
# Pipeline


def worker_count():
    """Worker processes to use, from the environment (default 1)."""
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise InputError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
    return max(1, n)


def _cell_seed(seed, channels):
    return np.random.SeedSequence([seed, channels])


def _cell_dir(out, seed, channels=None):
    d = Path(out) / f"seed{seed}"
    if channels is not None:
        d = d / f"ch{channels}"
    d.mkdir(parents=True, exist_ok=True)
    return d


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1)


def _error_rows(config, seed, channels, message):
    return [
        dict({c: None for c in COLUMNS}, seed=seed, channels=channels,
             scheduler=_SCHEDULER_ALIASES[s], error=message)
        for s in config.schedulers
    ]


def run_cell(config, seed, channels, topology=None):
    """Run one (seed, channels) cell and return its rows (one per scheduler)."""
    try:
        params = replace(config.deployment, seed=seed, channels=channels)
        if topology is None:
            topology = generate_topology(params)
        g = topology.graph
        if len(g) == 0:
            return []
        analyzer = LocalAnalyzer(g)

        def test(graph, i, traffic, n):
            return analyzer.test(i, traffic, n).schedulable

        rng = np.random.default_rng(_cell_seed(seed, channels))
        traffic, flagged = generate_traffic(
            g, channels, rng, test,
            deadline_range=config.deadline_range,
            slack_fraction=config.slack_fraction,
            demand_fraction=config.demand_fraction,
            link_reliability=config.link_reliability,
            first_arrival=config.first_arrival,
        )
        verdicts = {i: analyzer.test(i, traffic, channels) for i in g.node_ids}
        summary = ratio_histogram(verdicts, config.histogram_bins)
        bins = deadline_bins(config.deadline_range, config.bin_width)

        if config.output_dir:
            d = _cell_dir(config.output_dir, seed, channels)
            save_traffic(traffic, d / "traffic.json")
            _write_json(d / "verdicts.json", [verdicts[i].to_dict() for i in sorted(verdicts)])

        rows = []
        for name in config.schedulers:
            sched = _SCHEDULER_ALIASES[name]
            report = run_simulation(g, traffic, channels, config.horizon, config.mode,
                                    scheduler=sched, seed=seed,
                                    check_invariants=config.check_invariants)
            met = {l: r.requirement_met(report.mode) for l, r in report.links.items()}
            violations = 0
            if sched == "ldp" and report.mode == "deterministic":
                violations = sum(1 for l, v in verdicts.items() if v.schedulable and not met[l])
            rows.append({
                "seed": seed,
                "channels": channels,
                "scheduler": sched,
                "links": len(g),
                "flagged": len(flagged),
                "test_ratio": sum(v.schedulable for v in verdicts.values()) / len(verdicts),
                "schedulable_ratio": report.schedulable_ratio,
                "mean_delta": summary["delta"].mean,
                "delta_ci_low": summary["delta"].ci_low,
                "delta_ci_high": summary["delta"].ci_high,
                "mean_delta_prime": summary["delta_prime"].mean,
                "packets": report.total_packets,
                "misses": report.total_misses,
                "consistency_violations": violations,
                "bin_ratios": deadline_bin_report(met, traffic, bins),
                "error": None,
            })
            if config.output_dir:
                _write_json(d / f"sim_{sched}.json", report.to_dict())
        return rows
    except LDPError as exc:
        return _error_rows(config, seed, channels, f"{type(exc).__name__}: {exc}")


def schedulable_instance(params, channels, seed=None, max_passes=20, **traffic_kw):
    """A (graph, traffic) pair on which every link passes the schedulability test.

    Draws a topology from ``params`` and traffic for it; links still failing
    at demand 1 are removed and traffic is redrawn on the remaining conflict
    graph until nothing is flagged.  Returns ``(graph, traffic, dropped)``.
    """
    seed = params.seed if seed is None else seed
    g = generate_topology(replace(params, seed=seed)).graph
    rng = np.random.default_rng(_cell_seed(seed, channels))
    dropped = []
    for _ in range(max_passes):
        traffic, flagged = generate_traffic(g, channels, rng, **traffic_kw)
        if not flagged:
            return g, traffic, sorted(dropped)
        dropped.extend(flagged)
        g = g.induced(set(g.node_ids) - set(flagged))
    raise GenerationError(f"still flagging links after {max_passes} passes (seed {seed})")


def _run_cell_args(args):
    return run_cell(*args)


def run_experiment(config, workers=None):
    """Run every (seed, channels) cell of ``config`` and collect a :class:`MetricsTable`.

    Topologies are drawn once per seed and shared by that seed's channel
    counts.  ``workers`` defaults to the ``LDPSCHED_WORKERS`` environment
    variable.  Failures inside a cell become rows with an ``error`` message.
    """
    workers = worker_count() if workers is None else max(1, int(workers))
    if config.output_dir:
        Path(config.output_dir).mkdir(parents=True, exist_ok=True)
        config.save(Path(config.output_dir) / "config.json")

    jobs = []
    for seed in config.seeds:
        params = replace(config.deployment, seed=seed)
        try:
            topo = generate_topology(params)
        except LDPError as exc:
            for n in config.channels:
                jobs.append(("error", seed, n, f"{type(exc).__name__}: {exc}"))
            continue
        if config.output_dir:
            save_topology(topo, _cell_dir(config.output_dir, seed) / "topology.json")
        for n in config.channels:
            jobs.append(("run", seed, n, topo))

    runnable = [(config, seed, n, topo) for kind, seed, n, topo in jobs if kind == "run"]
    if workers > 1 and len(runnable) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_cell_args, runnable))
    else:
        results = [_run_cell_args(a) for a in runnable]

    rows, it = [], iter(results)
    for kind, seed, n, payload in jobs:
        if kind == "run":
            rows.extend(next(it))
        else:
            rows.extend(_error_rows(config, seed, n, payload))
    order = {s: k for k, s in enumerate(("ldp", "edf"))}
    rows.sort(key=lambda r: (r["seed"], r["channels"], order[r["scheduler"]]))
    table = MetricsTable(rows)
    if config.output_dir:
        table.save_json(Path(config.output_dir) / "metrics.json")
        table.save_csv(Path(config.output_dir) / "metrics.csv")
    return table


def recompute_rows(output_dir):
    """Rebuild the ratio columns of a table from the persisted per-link reports.

    Returns ``{(seed, channels, scheduler): {"test_ratio", "schedulable_ratio",
    "misses"}}`` for every simulation report found under ``output_dir``.
    """
    out = {}
    for sim in sorted(Path(output_dir).glob("seed*/ch*/sim_*.json")):
        seed = int(sim.parent.parent.name[4:])
        channels = int(sim.parent.name[2:])
        with open(sim) as fh:
            report = json.load(fh)
        with open(sim.parent / "verdicts.json") as fh:
            verdicts = json.load(fh)
        links = report["links"]
        out[(seed, channels, report["scheduler"])] = {
            "test_ratio": sum(v["schedulable"] for v in verdicts) / len(verdicts),
            "schedulable_ratio": sum(l["requirement_met"] for l in links) / len(links),
            "misses": sum(l["misses"] for l in links),
        }
    return out
