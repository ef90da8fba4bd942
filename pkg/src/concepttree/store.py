"""On-disk archives for concept trees.

An archive is one directory per tree:

    <base>/<tree-id>/
        manifest.json        canonical JSON, sorted keys, schema version 1
        embeddings/*.bin     one vector file per learned token
        images/*             image payloads (vectors, or copied files)
        sets/*.bin           cached embedding matrices for image sets

Vector files start with magic ``CTE1`` then a little-endian uint32 length
and float32 data; matrices use ``CTM1`` with two dimensions. The manifest
records a sha256 for every binary file and loading verifies all of them,
so a truncated or edited archive fails with a clear error instead of
producing a silently wrong tree.

Saving writes a complete sibling directory and swaps it into place, so a
crash mid-save never leaves a half-written archive under the tree's name.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import shutil
import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .core import (
    BuildConfig,
    ConceptNode,
    ConceptTree,
    ConceptTreeError,
    ConsistencyReport,
    ImageRef,
    ImageSet,
    ImageSource,
    NodeStatus,
    validate_tree,
)
from .dictionary import TokenDictionary
from .scoring import StopDecision

SCHEMA_VERSION = 1
VECTOR_MAGIC = b"CTE1"
MATRIX_MAGIC = b"CTM1"
MANIFEST_NAME = "manifest.json"

_SAFE_ID = re.compile(r"^[A-Za-z0-9][A-Za-z0-9_.-]*$")


class StoreError(ConceptTreeError):
    pass


class ArchiveCorruptError(StoreError):
    pass


# -- binary vector/matrix files ---------------------------------------------


def write_vector(path: Path, vector) -> None:
    arr = np.ascontiguousarray(np.asarray(vector, dtype="<f4"))
    if arr.ndim != 1 or arr.size == 0:
        raise StoreError("vector files hold non-empty 1-D arrays")
    path = Path(path)
    path.write_bytes(VECTOR_MAGIC + struct.pack("<I", arr.shape[0]) + arr.tobytes())


def read_vector(path: Path) -> np.ndarray:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise ArchiveCorruptError(f"cannot read {path}: {exc}") from exc
    if len(data) < 8 or data[:4] != VECTOR_MAGIC:
        raise ArchiveCorruptError(f"{path} is not an embedding vector file")
    (dim,) = struct.unpack("<I", data[4:8])
    body = data[8:]
    if len(body) != 4 * dim:
        raise ArchiveCorruptError(
            f"{path} is truncated: expected {4 * dim} payload bytes, got {len(body)}"
        )
    return np.frombuffer(body, dtype="<f4").astype(np.float32)


def write_matrix(path: Path, matrix) -> None:
    arr = np.ascontiguousarray(np.asarray(matrix, dtype="<f4"))
    if arr.ndim != 2 or arr.size == 0:
        raise StoreError("matrix files hold non-empty 2-D arrays")
    header = MATRIX_MAGIC + struct.pack("<II", arr.shape[0], arr.shape[1])
    Path(path).write_bytes(header + arr.tobytes())


def read_matrix(path: Path) -> np.ndarray:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise ArchiveCorruptError(f"cannot read {path}: {exc}") from exc
    if len(data) < 12 or data[:4] != MATRIX_MAGIC:
        raise ArchiveCorruptError(f"{path} is not an embedding matrix file")
    rows, cols = struct.unpack("<II", data[4:12])
    body = data[12:]
    if len(body) != 4 * rows * cols:
        raise ArchiveCorruptError(f"{path} is truncated")
    return np.frombuffer(body, dtype="<f4").astype(np.float32).reshape(rows, cols)


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _file_ref(root: Path, rel: str) -> dict:
    return {"file": rel, "sha256": _sha256(root / rel)}


def _verified(root: Path, ref: dict) -> Path:
    rel = ref.get("file")
    expected = ref.get("sha256")
    if not isinstance(rel, str) or not isinstance(expected, str):
        raise ArchiveCorruptError(f"malformed file reference {ref!r}")
    path = root / rel
    if not path.is_file():
        raise ArchiveCorruptError(f"archive is missing {rel}")
    actual = _sha256(path)
    if actual != expected:
        raise ArchiveCorruptError(
            f"checksum mismatch for {rel}: manifest {expected}, file {actual}"
        )
    return path


# -- serialization ------------------------------------------------------------


def _report_to_json(report: ConsistencyReport | None) -> dict | None:
    if report is None:
        return None
    return {
        "self_left": float(report.self_left),
        "self_right": float(report.self_right),
        "cross": float(report.cross),
        "objective": float(report.objective),
    }


def _report_from_json(data: dict | None) -> ConsistencyReport | None:
    if data is None:
        return None
    try:
        return ConsistencyReport(
            self_left=data["self_left"],
            self_right=data["self_right"],
            cross=data["cross"],
            objective=data["objective"],
        )
    except (KeyError, TypeError, ConceptTreeError) as exc:
        raise ArchiveCorruptError(f"malformed consistency report: {exc}") from exc


def _write_image_set(images: ImageSet, key: str, root: Path) -> dict:
    entries = []
    for idx, ref in enumerate(images):
        payload = ref.payload
        if payload is None:
            payload_json: dict = {"kind": "none"}
        elif isinstance(payload, np.ndarray):
            rel = f"images/{key}-{idx}.bin"
            write_vector(root / rel, payload)
            payload_json = {"kind": "vector", **_file_ref(root, rel)}
        else:
            if isinstance(payload, Path):
                data = payload.read_bytes()
                suffix = payload.suffix if payload.suffix else ".dat"
            else:
                data = bytes(payload)
                suffix = ".dat"
            if suffix == ".bin":
                kind = "vector"
            else:
                kind = "file"
            rel = f"images/{key}-{idx}{suffix}"
            (root / rel).write_bytes(data)
            payload_json = {"kind": kind, **_file_ref(root, rel)}
        entries.append(
            {
                "image_id": ref.image_id,
                "source": ref.source.value,
                "seed": ref.seed,
                "prompt": ref.prompt,
                "payload": payload_json,
            }
        )
    embeddings_json = None
    if images.cached_embeddings is not None:
        rel = f"sets/{key}.bin"
        write_matrix(root / rel, images.cached_embeddings)
        embeddings_json = _file_ref(root, rel)
    return {"images": entries, "embeddings": embeddings_json}


def _read_image_set(data: dict, root: Path) -> ImageSet:
    refs = []
    for entry in data.get("images", []):
        payload_json = entry.get("payload") or {"kind": "none"}
        kind = payload_json.get("kind")
        if kind == "none":
            payload = None
        elif kind in ("vector", "file"):
            payload = _verified(root, payload_json)
        else:
            raise ArchiveCorruptError(f"unknown payload kind {kind!r}")
        try:
            refs.append(
                ImageRef(
                    image_id=entry["image_id"],
                    payload=payload,
                    source=ImageSource(entry["source"]),
                    seed=entry.get("seed"),
                    prompt=entry.get("prompt"),
                )
            )
        except (KeyError, ValueError, ConceptTreeError) as exc:
            raise ArchiveCorruptError(f"malformed image entry: {exc}") from exc
    cached = None
    if data.get("embeddings") is not None:
        cached = read_matrix(_verified(root, data["embeddings"]))
        if cached.shape[0] != len(refs):
            raise ArchiveCorruptError(
                f"cached embeddings have {cached.shape[0]} rows "
                f"for {len(refs)} images"
            )
    return ImageSet(images=tuple(refs), cached_embeddings=cached)


def _record_to_json(record, index: int, root: Path) -> dict:
    return {
        "parent_node_id": record.parent_node_id,
        "tokens": list(record.tokens),
        "child_ids": list(record.child_ids),
        "train_set": _write_image_set(record.train_set, f"split-{index}-train", root),
        "candidate_reports": {
            str(seed): _report_to_json(report)
            for seed, report in record.candidate_reports.items()
        },
        "failed_seeds": {str(seed): msg for seed, msg in record.failed_seeds.items()},
        "chosen_seed": record.chosen_seed,
        "final_report": _report_to_json(record.final_report),
        "decision": record.decision.value if record.decision is not None else None,
        "wall_time_s": record.wall_time_s,
        "extra": record.extra,
    }


def _record_from_json(data: dict, root: Path):
    from .builder import SplitRecord  # circular at import time, not at call time

    try:
        return SplitRecord(
            parent_node_id=data["parent_node_id"],
            tokens=tuple(data["tokens"]),
            child_ids=tuple(data["child_ids"]),
            train_set=_read_image_set(data["train_set"], root),
            candidate_reports={
                int(seed): _report_from_json(report)
                for seed, report in data.get("candidate_reports", {}).items()
            },
            failed_seeds={
                int(seed): msg for seed, msg in data.get("failed_seeds", {}).items()
            },
            chosen_seed=data.get("chosen_seed"),
            final_report=_report_from_json(data.get("final_report")),
            decision=(
                StopDecision(data["decision"])
                if data.get("decision") is not None
                else None
            ),
            wall_time_s=data.get("wall_time_s", 0.0),
            extra=data.get("extra", {}),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ArchiveCorruptError(f"malformed build log entry: {exc}") from exc


def _write_archive(tree: ConceptTree, root: Path) -> None:
    root.mkdir(parents=True)
    for sub in ("embeddings", "images", "sets"):
        (root / sub).mkdir()
    nodes_json = []
    for node_id in sorted(tree.nodes):
        node = tree.nodes[node_id]
        embedding_json = None
        if node.embedding is not None:
            rel = f"embeddings/node-{node_id}.bin"
            write_vector(root / rel, node.embedding)
            embedding_json = _file_ref(root, rel)
        nodes_json.append(
            {
                "node_id": node.node_id,
                "parent_id": node.parent_id,
                "child_ids": list(node.child_ids),
                "token": node.token,
                "status": node.status.value,
                "self_consistency": node.self_consistency,
                "sibling_cross_consistency": node.sibling_cross_consistency,
                "embedding": embedding_json,
                "samples": _write_image_set(node.samples, f"node-{node_id}", root),
            }
        )
    config = asdict(tree.config)
    config["k_seeds"] = list(config["k_seeds"])
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "kind": "concept-tree",
        "tree_id": tree.tree_id,
        "embed_dim": tree.dictionary.embed_dim,
        "vocabulary_checksum": tree.vocabulary_checksum,
        "config": config,
        "dictionary": {"tokens": sorted(tree.dictionary.injected)},
        "nodes": nodes_json,
        "build_log": [
            _record_to_json(r, i, root) for i, r in enumerate(tree.build_log)
        ],
    }
    text = json.dumps(manifest, sort_keys=True, indent=2) + "\n"
    (root / MANIFEST_NAME).write_text(text, encoding="utf-8")


def save_tree(tree: ConceptTree, base_dir: Path) -> Path:
    """Write the tree's archive under ``base_dir`` and return its directory.

    The archive is assembled in a temporary sibling directory and swapped
    into place, replacing any previous version of the same tree.
    """
    if not _SAFE_ID.match(tree.tree_id):
        raise StoreError(
            f"tree id {tree.tree_id!r} is not a safe directory name"
        )
    base_dir = Path(base_dir)
    base_dir.mkdir(parents=True, exist_ok=True)
    target = base_dir / tree.tree_id
    tmp = base_dir / f".{tree.tree_id}.tmp-{os.getpid()}"
    old = base_dir / f".{tree.tree_id}.old-{os.getpid()}"
    for leftover in (tmp, old):
        if leftover.exists():
            shutil.rmtree(leftover)
    try:
        _write_archive(tree, tmp)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    if target.exists():
        os.replace(target, old)
        os.replace(tmp, target)
        shutil.rmtree(old)
    else:
        os.replace(tmp, target)
    return target


def load_tree(archive_dir: Path) -> ConceptTree:
    """Rebuild a tree from its archive, verifying every checksum.

    The returned tree has no base vocabulary bound; attach a backend before
    training or generating from it.
    """
    root = Path(archive_dir)
    manifest_path = root / MANIFEST_NAME
    if not manifest_path.is_file():
        raise StoreError(f"{root} is not a tree archive (no {MANIFEST_NAME})")
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ArchiveCorruptError(f"cannot parse {manifest_path}: {exc}") from exc
    if not isinstance(manifest, dict):
        raise ArchiveCorruptError("manifest must be a JSON object")
    version = manifest.get("schema_version")
    if version != SCHEMA_VERSION:
        raise StoreError(
            f"unsupported archive schema version {version!r} "
            f"(this build reads version {SCHEMA_VERSION})"
        )
    try:
        config_data = dict(manifest["config"])
        config_data["k_seeds"] = tuple(config_data["k_seeds"])
        config = BuildConfig(**config_data)
        embed_dim = int(manifest["embed_dim"])
        tree_id = manifest["tree_id"]
        node_entries = manifest["nodes"]
    except (KeyError, TypeError, ValueError, ConceptTreeError) as exc:
        raise ArchiveCorruptError(f"malformed manifest: {exc}") from exc

    nodes: dict[int, ConceptNode] = {}
    injected: dict[str, np.ndarray] = {}
    for entry in node_entries:
        try:
            embedding = None
            if entry.get("embedding") is not None:
                embedding = read_vector(_verified(root, entry["embedding"]))
                if embedding.shape[0] != embed_dim:
                    raise ArchiveCorruptError(
                        f"node {entry.get('node_id')} embedding has dim "
                        f"{embedding.shape[0]}, manifest says {embed_dim}"
                    )
            node = ConceptNode(
                node_id=entry["node_id"],
                samples=_read_image_set(entry["samples"], root),
                token=entry.get("token"),
                embedding=embedding,
                parent_id=entry.get("parent_id"),
                child_ids=tuple(entry.get("child_ids", ())),
                self_consistency=entry.get("self_consistency"),
                sibling_cross_consistency=entry.get("sibling_cross_consistency"),
                status=NodeStatus(entry["status"]),
            )
        except (KeyError, TypeError, ValueError, ConceptTreeError) as exc:
            raise ArchiveCorruptError(f"malformed node entry: {exc}") from exc
        if node.node_id in nodes:
            raise ArchiveCorruptError(f"duplicate node id {node.node_id}")
        nodes[node.node_id] = node
        if node.token is not None and node.embedding is not None:
            injected[node.token] = node.embedding

    declared = manifest.get("dictionary", {}).get("tokens", [])
    if sorted(declared) != sorted(injected):
        raise ArchiveCorruptError(
            "dictionary tokens do not match node tokens: "
            f"{sorted(declared)} vs {sorted(injected)}"
        )
    dictionary = TokenDictionary(embed_dim=embed_dim, base=None, injected=injected)
    tree = ConceptTree(
        tree_id=tree_id,
        nodes=nodes,
        dictionary=dictionary,
        config=config,
        build_log=[_record_from_json(r, root) for r in manifest.get("build_log", [])],
        vocabulary_checksum=manifest.get("vocabulary_checksum"),
    )
    problems = validate_tree(tree)
    if problems:
        raise ArchiveCorruptError(
            "archive holds an invalid tree: " + "; ".join(problems)
        )
    return tree


def list_trees(base_dir: Path) -> list[str]:
    base_dir = Path(base_dir)
    if not base_dir.is_dir():
        return []
    found = []
    for child in sorted(base_dir.iterdir()):
        if child.is_dir() and (child / MANIFEST_NAME).is_file():
            found.append(child.name)
    return found


# -- equality -----------------------------------------------------------------


def _arrays_equal(a: np.ndarray | None, b: np.ndarray | None) -> bool:
    if a is None or b is None:
        return a is None and b is None
    return a.dtype == b.dtype and a.shape == b.shape and np.array_equal(a, b)


def _payload_key(payload) -> tuple[str, bytes] | None:
    """Normalize a payload to comparable bytes, whether in memory or on disk."""
    if payload is None:
        return None
    if isinstance(payload, np.ndarray):
        return ("vector", np.ascontiguousarray(payload, dtype="<f4").tobytes())
    if isinstance(payload, Path):
        try:
            return ("vector", read_vector(payload).astype("<f4").tobytes())
        except ArchiveCorruptError:
            return ("bytes", payload.read_bytes())
    return ("bytes", bytes(payload))


def _image_sets_equal(a: ImageSet, b: ImageSet) -> bool:
    if len(a) != len(b):
        return False
    for ra, rb in zip(a, b):
        if (ra.image_id, ra.source, ra.seed, ra.prompt) != (
            rb.image_id,
            rb.source,
            rb.seed,
            rb.prompt,
        ):
            return False
        if _payload_key(ra.payload) != _payload_key(rb.payload):
            return False
    return _arrays_equal(a.cached_embeddings, b.cached_embeddings)


def _reports_equal(a: ConsistencyReport | None, b: ConsistencyReport | None) -> bool:
    if a is None or b is None:
        return a is None and b is None
    return (a.self_left, a.self_right, a.cross, a.objective) == (
        b.self_left,
        b.self_right,
        b.cross,
        b.objective,
    )


def trees_equal(a: ConceptTree, b: ConceptTree) -> bool:
    """Structural equality: ids, statuses, scores, embeddings, samples, log.

    Wall-clock timings in the build log are ignored; they are the only part
    of a build that is not a pure function of inputs and seeds.
    """
    if a.tree_id != b.tree_id or a.config != b.config:
        return False
    if set(a.nodes) != set(b.nodes):
        return False
    for node_id, na in a.nodes.items():
        nb = b.nodes[node_id]
        if (
            na.parent_id != nb.parent_id
            or na.child_ids != nb.child_ids
            or na.token != nb.token
            or na.status != nb.status
            or na.self_consistency != nb.self_consistency
            or na.sibling_cross_consistency != nb.sibling_cross_consistency
        ):
            return False
        if not _arrays_equal(na.embedding, nb.embedding):
            return False
        if not _image_sets_equal(na.samples, nb.samples):
            return False
    if sorted(a.dictionary.injected) != sorted(b.dictionary.injected):
        return False
    for token, va in a.dictionary.injected.items():
        if not _arrays_equal(np.asarray(va), np.asarray(b.dictionary.injected[token])):
            return False
    if len(a.build_log) != len(b.build_log):
        return False
    for ra, rb in zip(a.build_log, b.build_log):
        if (
            ra.parent_node_id != rb.parent_node_id
            or ra.tokens != rb.tokens
            or ra.child_ids != rb.child_ids
            or ra.chosen_seed != rb.chosen_seed
            or ra.decision != rb.decision
            or sorted(ra.failed_seeds) != sorted(rb.failed_seeds)
            or sorted(ra.candidate_reports) != sorted(rb.candidate_reports)
        ):
            return False
        if not _reports_equal(ra.final_report, rb.final_report):
            return False
        if not _image_sets_equal(ra.train_set, rb.train_set):
            return False
        for seed, report in ra.candidate_reports.items():
            if not _reports_equal(report, rb.candidate_reports[seed]):
                return False
    return True
