"""Command-line interface: build, split, sample, combine, score, serve."""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np

from .builder import TreeBuilder, adopt_tree
from .core import (
    BuildConfig,
    ConceptTreeError,
    ImageRef,
    ImageSet,
    ImageSource,
)
from .mock import ConceptSpace, MockBackend
from .scoring import consistency, consistency_matrix, render_heatmap
from .store import load_tree, save_tree, write_vector


def _fail(message: str) -> "click.ClickException":
    return click.ClickException(message)


def _make_backend(backend_name: str, space_path: str | None):
    if backend_name == "mock":
        space = (
            ConceptSpace.from_file(space_path)
            if space_path
            else ConceptSpace.default()
        )
        return MockBackend(space)
    if backend_name == "real":
        from .real import RealBackend

        return RealBackend()
    raise click.UsageError(f"unknown backend {backend_name!r} (mock or real)")


def _load_images_dir(images_dir: Path) -> ImageSet:
    """Read every vector file in a directory as one user image set."""
    paths = sorted(images_dir.glob("*.bin"))
    if not paths:
        raise _fail(f"no .bin image vectors found in {images_dir}")
    refs = tuple(
        ImageRef(image_id=path.stem, payload=path, source=ImageSource.USER)
        for path in paths
    )
    return ImageSet(refs)


def _parse_seeds(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(part) for part in text.split(",") if part.strip())
    except ValueError as exc:
        raise click.UsageError(f"bad --seeds value {text!r}: {exc}") from exc


def _emit(payload: dict, as_json: bool, human: str) -> None:
    if as_json:
        click.echo(json.dumps(payload, indent=2, sort_keys=True))
    else:
        click.echo(human)


def _tree_summary(tree) -> dict:
    return {
        "tree_id": tree.tree_id,
        "nodes": {
            str(node_id): {
                "status": node.status.value,
                "token": node.token,
                "children": list(node.child_ids),
                "self_consistency": node.self_consistency,
                "sibling_cross_consistency": node.sibling_cross_consistency,
            }
            for node_id, node in sorted(tree.nodes.items())
        },
        "splits": len(tree.build_log),
    }


def _save_image_set(images: ImageSet, out_dir: Path) -> dict:
    out_dir.mkdir(parents=True, exist_ok=True)
    listing = []
    for i, ref in enumerate(images):
        payload = ref.payload
        if isinstance(payload, np.ndarray):
            name = f"{i:03d}.bin"
            write_vector(out_dir / name, payload)
        elif isinstance(payload, bytes):
            name = f"{i:03d}.png"
            (out_dir / name).write_bytes(payload)
        elif isinstance(payload, Path):
            name = f"{i:03d}{payload.suffix or '.dat'}"
            (out_dir / name).write_bytes(payload.read_bytes())
        else:
            name = None
        listing.append(
            {"image_id": ref.image_id, "file": name, "seed": ref.seed, "prompt": ref.prompt}
        )
    index = {"images": listing}
    (out_dir / "images.json").write_text(
        json.dumps(index, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return index


@click.group()
@click.version_option(package_name="concepttree")
def main() -> None:
    """Grow, inspect and serve concept trees."""


@main.command()
@click.argument("images_dir", type=click.Path(exists=True, file_okay=False, path_type=Path))
@click.option("--tree-id", default="tree", show_default=True, help="Archive name.")
@click.option("--out", "out_dir", type=click.Path(file_okay=False, path_type=Path), default=Path("trees"), show_default=True, help="Directory that holds tree archives.")
@click.option("--backend", "backend_name", default="mock", show_default=True)
@click.option("--space", "space_path", type=click.Path(exists=True, dir_okay=False), default=None, help="Concept-space JSON for the mock backend.")
@click.option("--alpha", type=float, default=None, help="Timestep skew in [0, 1].")
@click.option("--max-depth", type=int, default=None)
@click.option("--seeds", default=None, help="Comma-separated candidate seeds.")
@click.option("--learning-rate", type=float, default=None)
@click.option("--candidate-steps", type=int, default=None)
@click.option("--final-steps", type=int, default=None)
@click.option("--init", "init_strategy", type=click.Choice(["word", "exemplar"]), default=None, help="How sibling tokens are initialized.")
@click.option("--json", "as_json", is_flag=True, help="Machine-readable output.")
def build(images_dir, tree_id, out_dir, backend_name, space_path, alpha, max_depth,
          seeds, learning_rate, candidate_steps, final_steps, init_strategy, as_json):
    """Build a tree from a directory of image vectors."""
    overrides = {}
    if alpha is not None:
        overrides["alpha"] = alpha
    if max_depth is not None:
        overrides["max_depth"] = max_depth
    if seeds is not None:
        overrides["k_seeds"] = _parse_seeds(seeds)
    if learning_rate is not None:
        overrides["learning_rate"] = learning_rate
    if candidate_steps is not None:
        overrides["candidate_steps"] = candidate_steps
    if final_steps is not None:
        overrides["final_steps"] = final_steps
    if init_strategy is not None:
        overrides["init_strategy"] = init_strategy
    try:
        config = BuildConfig(**overrides)
        backend = _make_backend(backend_name, space_path)
        builder = TreeBuilder(backend)
        images = _load_images_dir(images_dir)
        tree = builder.build_tree(images, config, tree_id=tree_id, checkpoint_dir=out_dir)
        archive = save_tree(tree, out_dir)
    except ConceptTreeError as exc:
        raise _fail(str(exc)) from exc
    summary = _tree_summary(tree)
    summary["archive"] = str(archive)
    _emit(
        summary,
        as_json,
        f"built {tree.tree_id}: {len(tree.nodes)} nodes, "
        f"{len(tree.build_log)} splits -> {archive}",
    )


@main.command()
@click.argument("tree_path", type=click.Path(exists=True, file_okay=False, path_type=Path))
@click.argument("node_id", type=int)
@click.option("--backend", "backend_name", default="mock", show_default=True)
@click.option("--space", "space_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--json", "as_json", is_flag=True)
def split(tree_path, node_id, backend_name, space_path, as_json):
    """Split one node of a saved tree and rewrite its archive."""
    try:
        tree = load_tree(tree_path)
        backend = _make_backend(backend_name, space_path)
        adopt_tree(tree, backend)
        record = TreeBuilder(backend).split_node(tree, node_id)
        save_tree(tree, tree_path.parent)
    except ConceptTreeError as exc:
        raise _fail(str(exc)) from exc
    decision = record.decision.value if record.decision else "no-candidate"
    payload = {
        "node_id": node_id,
        "decision": decision,
        "children": list(record.child_ids),
        "chosen_seed": record.chosen_seed,
    }
    _emit(payload, as_json, f"split node {node_id}: {decision}, children {list(record.child_ids)}")


@main.command()
@click.argument("tree_path", type=click.Path(exists=True, file_okay=False, path_type=Path))
@click.argument("node_id", type=int)
@click.option("-n", "count", type=int, default=8, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_dir", type=click.Path(file_okay=False, path_type=Path), default=Path("samples"), show_default=True)
@click.option("--backend", "backend_name", default="mock", show_default=True)
@click.option("--space", "space_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--json", "as_json", is_flag=True)
def sample(tree_path, node_id, count, seed, out_dir, backend_name, space_path, as_json):
    """Generate fresh images from one node's token."""
    try:
        tree = load_tree(tree_path)
        node = tree.nodes.get(node_id)
        if node is None:
            raise _fail(f"tree has no node {node_id}")
        if node.token is None:
            raise _fail(f"node {node_id} has no learned token (root?)")
        backend = _make_backend(backend_name, space_path)
        adopt_tree(tree, backend)
        images = backend.generate(node.token, tree.dictionary, seed, count)
    except ConceptTreeError as exc:
        raise _fail(str(exc)) from exc
    index = _save_image_set(images, out_dir)
    index.update({"prompt": node.token, "seed": seed, "out": str(out_dir)})
    _emit(index, as_json, f"wrote {len(images)} samples of node {node_id} to {out_dir}")


@main.command()
@click.option("--trees", "tree_paths", required=True, help="Comma-separated archive paths.")
@click.option("--tokens", required=True, help="Comma-separated tokens to place in the template.")
@click.option("--template", default=None, help='Template with {} slots, e.g. "A photo of {} {}".')
@click.option("-n", "count", type=int, default=8, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_dir", type=click.Path(file_okay=False, path_type=Path), default=Path("combined"), show_default=True)
@click.option("--backend", "backend_name", default="mock", show_default=True)
@click.option("--space", "space_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--json", "as_json", is_flag=True)
def combine(tree_paths, tokens, template, count, seed, out_dir, backend_name, space_path, as_json):
    """Generate from a prompt mixing tokens of one or more trees."""
    token_list = [t for t in tokens.split(",") if t]
    if not token_list:
        raise click.UsageError("--tokens must name at least one token")
    if template is None:
        template = "A photo of " + " ".join("{}" for _ in token_list)
    try:
        backend = _make_backend(backend_name, space_path)
        merged = None
        for path in tree_paths.split(","):
            tree = load_tree(Path(path))
            adopt_tree(tree, backend)
            merged = tree.dictionary if merged is None else merged.merge(tree.dictionary)
        if merged is None:
            raise click.UsageError("--trees must name at least one archive")
        prompt = merged.compose_prompt(template, token_list)
        images = backend.generate(prompt, merged, seed, count)
    except ConceptTreeError as exc:
        raise _fail(str(exc)) from exc
    index = _save_image_set(images, out_dir)
    index.update({"prompt": prompt, "seed": seed, "out": str(out_dir)})
    _emit(index, as_json, f'wrote {len(images)} images for "{prompt}" to {out_dir}')


@main.command()
@click.argument("tree_path", type=click.Path(exists=True, file_okay=False, path_type=Path))
@click.option("--backend", "backend_name", default="mock", show_default=True)
@click.option("--space", "space_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--heatmap", "heatmap_path", type=click.Path(dir_okay=False, path_type=Path), default=None, help="Also render the matrix as a PNG.")
@click.option("--json", "as_json", is_flag=True)
def score(tree_path, backend_name, space_path, heatmap_path, as_json):
    """Recompute consistency scores of a saved tree from its sample sets."""
    try:
        tree = load_tree(tree_path)
        # generated sets come out of the archive with cached embeddings; the
        # backend only embeds sets that lack them (the root's user images)
        embedder = _make_backend(backend_name, space_path).embed_image
        named = {
            f"v{node_id}": node.samples
            for node_id, node in sorted(tree.nodes.items())
            if len(node.samples) >= 2
        }
        matrix = consistency_matrix(named, embedder)
        checks = {}
        for node_id, node in sorted(tree.nodes.items()):
            if node.self_consistency is None or len(node.samples) < 2:
                continue
            recomputed = consistency(node.samples, node.samples, embedder)
            checks[str(node_id)] = {
                "stored": node.self_consistency,
                "recomputed": recomputed,
                "drift": abs(node.self_consistency - recomputed),
            }
    except ConceptTreeError as exc:
        raise _fail(str(exc)) from exc
    if heatmap_path is not None:
        render_heatmap(matrix, heatmap_path)
    payload = {"matrix": matrix.to_json(), "stored_scores": checks}
    lines = [f"{len(matrix.labels)} scored sets"]
    for node_id, check in checks.items():
        lines.append(
            f"node {node_id}: stored {check['stored']:.4f} "
            f"recomputed {check['recomputed']:.4f}"
        )
    _emit(payload, as_json, "\n".join(lines))


@main.command()
@click.argument("trees_dir", type=click.Path(exists=True, file_okay=False, path_type=Path))
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
@click.option("--backend", "backend_name", default="mock", show_default=True)
@click.option("--space", "space_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--no-backend", is_flag=True, help="Serve archives read-only.")
def serve(trees_dir, host, port, backend_name, space_path, no_backend):
    """Serve tree archives over HTTP for the explorer UI."""
    import uvicorn

    from .service import create_app

    backend = None if no_backend else _make_backend(backend_name, space_path)
    app = create_app(trees_dir, backend=backend)
    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    sys.exit(main())
