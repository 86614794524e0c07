"""Compare LDP and the EDF baseline on a random small deployment.

Draws a 2x2-cell deployment, generates traffic that passes the
schedulability test on every link, simulates both schedulers and prints the
per-deadline-bin miss report.

    python3 demos/ldp_vs_edf.py [seed] [channels]
"""

import sys

from ldpsched import DeploymentParams, run_simulation, schedulable_instance
from ldpsched.experiments import baseline_concentration, deadline_bin_report, deadline_bins


def main(seed=0, channels=2, horizon=5000):
    params = DeploymentParams(width=600, height=600, rows=2, cols=2, n_nodes=30, n_links=24, seed=seed)
    g, traffic, dropped = schedulable_instance(params, channels)
    print(f"{len(g)} links, {g.n_edges} conflicts, {len(dropped)} links dropped as unschedulable at X=1")
    bins = deadline_bins((10, 40), 10)
    for scheduler in ("ldp", "edf"):
        report = run_simulation(g, traffic, channels, horizon, scheduler=scheduler)
        met = {l: r.requirement_met(report.mode) for l, r in report.links.items()}
        cells = ", ".join(f"[{b['lo']},{b['hi']}): {b['infeasible']}/{b['links']}"
                          for b in deadline_bin_report(met, traffic, bins))
        conc = baseline_concentration(traffic, report.unschedulable_links())
        print(f"{scheduler}: ratio {report.schedulable_ratio:.3f}, {report.total_misses} misses "
              f"of {report.total_packets}; failing links by deadline {cells}; {conc['status']}")


if __name__ == "__main__":
    args = [int(a) for a in sys.argv[1:3]]
    main(*args)
