"""Write a demo concept space plus a matching directory of image vectors.

The output is everything the CLI needs for a first build:

    python3 scripts/make_demo_space.py --out demo
    concepttree build demo/images --space demo/space.json --out demo/trees \
        --init exemplar --learning-rate 0.08 --max-depth 2
"""

from __future__ import annotations

import argparse
from pathlib import Path

from concepttree.store import write_vector
from concepttree.synth import (
    hierarchical_images,
    hierarchical_space,
    two_cluster_images,
    two_cluster_space,
)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", type=Path, default=Path("demo"))
    parser.add_argument(
        "--kind",
        choices=["two-cluster", "hierarchical"],
        default="hierarchical",
        help="two planted modes, or one solo mode plus a splittable pair",
    )
    parser.add_argument("--seed", type=int, default=3)
    parser.add_argument(
        "--count", type=int, default=10, help="total number of image vectors"
    )
    args = parser.parse_args()

    if args.kind == "two-cluster":
        space = two_cluster_space()
        images = two_cluster_images(space, per_side=args.count // 2, seed=args.seed)
    else:
        space = hierarchical_space()
        per = max(args.count // 3, 2)
        images = hierarchical_images(space, counts=(per + args.count - 3 * per, per, per), seed=args.seed)

    images_dir = args.out / "images"
    images_dir.mkdir(parents=True, exist_ok=True)
    space_path = args.out / "space.json"
    space.to_file(space_path)
    for ref in images:
        write_vector(images_dir / f"{ref.image_id}.bin", ref.payload)

    print(f"wrote {space_path} and {len(images)} vectors under {images_dir}")
    print(
        f"try: concepttree build {images_dir} --space {space_path} "
        f"--out {args.out / 'trees'} --init exemplar --learning-rate 0.08 --max-depth 2"
    )


if __name__ == "__main__":
    main()
