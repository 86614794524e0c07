"""Approximation-ratio study on the 91-node deployment.

For each seed: draw the topology, generate traffic thinned to pass the test
on 4 channels, and summarize delta and delta' with a 95% interval.

    python3 demos/delta_study.py [n_seeds]
"""

import sys

from ldpsched import DeploymentParams, ExperimentConfig, run_experiment


def main(n_seeds=3):
    cfg = ExperimentConfig(deployment=DeploymentParams.network_1(), channels=(4,), seeds=tuple(range(n_seeds)),
                           horizon=2000, schedulers=("ldp",))
    table = run_experiment(cfg)
    print(table.format_text())
    means = [r["mean_delta"] for r in table.rows]
    print(f"mean delta over {len(means)} seeds: {sum(means) / len(means):.4f}")


if __name__ == "__main__":
    main(*(int(a) for a in sys.argv[1:2]))
