"""Sweep candidate seeds on the planted hierarchical fixture.

Runs one root split with a configurable seed list and prints each seed's
consistency scores and selection objective, plus which seed won. Useful
for eyeballing how sensitive a split is to the training seed.
"""

from __future__ import annotations

import argparse

from concepttree import MockBackend, TreeBuilder
from concepttree.synth import fixture_config, hierarchical_images, hierarchical_space


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument(
        "--seeds", type=int, nargs="+", default=[0, 1000, 1234, 111, 7, 99]
    )
    parser.add_argument("--candidate-steps", type=int, default=200)
    args = parser.parse_args()

    space = hierarchical_space()
    backend = MockBackend(space)
    config = fixture_config(
        k_seeds=tuple(args.seeds),
        candidate_steps=args.candidate_steps,
        max_depth=1,
    )
    tree = TreeBuilder(backend).build_tree(
        hierarchical_images(space), config, tree_id="sweep"
    )
    record = tree.build_log[0]

    print(f"{'seed':>6}  {'self L':>7}  {'self R':>7}  {'cross':>7}  {'objective':>9}")
    for seed in args.seeds:
        if seed in record.failed_seeds:
            print(f"{seed:>6}  diverged: {record.failed_seeds[seed]}")
            continue
        report = record.candidate_reports[seed]
        print(
            f"{seed:>6}  {report.self_left:>7.4f}  {report.self_right:>7.4f}  "
            f"{report.cross:>7.4f}  {report.objective:>9.4f}"
        )
    print(f"winner: seed {record.chosen_seed}, decision {record.decision.value}")


if __name__ == "__main__":
    main()
