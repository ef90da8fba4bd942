"""Plot the skewed timestep distribution for several skew strengths.

At skew 0 every timestep is equally likely; at 0.5 the largest timestep is
drawn about three times as often as the smallest, which biases training
toward the coarse, layout-defining end of the noise schedule.
"""

from __future__ import annotations

import argparse
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from concepttree import build_distribution


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", type=Path, default=Path("timestep-skew.png"))
    parser.add_argument("--total-steps", type=int, default=1000)
    parser.add_argument(
        "--alphas", type=float, nargs="+", default=[0.0, 0.25, 0.5, 1.0]
    )
    args = parser.parse_args()

    fig, ax = plt.subplots(figsize=(7, 4))
    for alpha in args.alphas:
        dist = build_distribution(args.total_steps, alpha)
        ax.plot(range(1, args.total_steps + 1), dist.pmf, label=f"skew {alpha:g}")
        ratio = dist.pmf[-1] / dist.pmf[0]
        print(f"skew {alpha:g}: p(T)/p(1) = {ratio:.3f}")
    ax.set_xlabel("timestep")
    ax.set_ylabel("probability")
    ax.legend()
    fig.tight_layout()
    fig.savefig(args.out, dpi=120)
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
