import numpy as np
import pytest

from concepttree import (
    BuildConfig,
    ConceptNode,
    ConceptTree,
    ConsistencyReport,
    ImageRef,
    ImageSet,
    ImageSource,
    MockBackend,
    NodeStatus,
    StopDecision,
    TokenDictionary,
)
from concepttree.builder import SplitRecord
from concepttree.store import write_vector
from concepttree.synth import (
    fixture_config,
    hierarchical_images,
    hierarchical_space,
    two_cluster_images,
    two_cluster_space,
)


def vector_set(rows, prefix="img", cache=False, source=ImageSource.USER) -> ImageSet:
    """Image set over raw concept vectors, optionally with the cache filled."""
    rows = [np.asarray(r, dtype=np.float32) for r in rows]
    refs = []
    for i, row in enumerate(rows):
        if source is ImageSource.GENERATED:
            refs.append(
                ImageRef(
                    image_id=f"{prefix}-{i}",
                    payload=row,
                    source=source,
                    seed=0,
                    prompt="p",
                )
            )
        else:
            refs.append(ImageRef(image_id=f"{prefix}-{i}", payload=row, source=source))
    cached = np.stack(rows) if cache else None
    return ImageSet(tuple(refs), cached_embeddings=cached)


@pytest.fixture
def two_cluster():
    space = two_cluster_space()
    backend = MockBackend(space)
    images = two_cluster_images(space, per_side=5, seed=3)
    return space, backend, images


@pytest.fixture
def hier():
    space = hierarchical_space()
    backend = MockBackend(space)
    images = hierarchical_images(space)
    return space, backend, images


@pytest.fixture
def hier_config():
    return fixture_config()


def random_image_set(rng, dim, prefix, payload_dir, min_images=0) -> ImageSet:
    """Image set with a random mix of payload kinds, as archives must hold."""
    n = int(rng.integers(min_images, 6))
    refs = []
    rows = []
    for i in range(n):
        vec = rng.standard_normal(dim).astype(np.float32)
        kind = int(rng.integers(0, 4))
        if kind == 0:
            payload = vec
        elif kind == 1:
            path = payload_dir / f"{prefix}-{i}.bin"
            write_vector(path, vec)
            payload = path
        elif kind == 2:
            payload = b"blob" + rng.bytes(12)
        else:
            payload = None
        if rng.integers(0, 2):
            refs.append(
                ImageRef(
                    image_id=f"{prefix}-{i}",
                    payload=payload,
                    source=ImageSource.GENERATED,
                    seed=int(rng.integers(0, 10_000)),
                    prompt=f"<{prefix}>",
                )
            )
        else:
            refs.append(ImageRef(image_id=f"{prefix}-{i}", payload=payload))
        rows.append(vec)
    cache = None
    if rows and rng.integers(0, 2):
        cache = np.stack(rows)
    return ImageSet(tuple(refs), cached_embeddings=cache)


def _random_report(rng) -> ConsistencyReport:
    values = rng.uniform(-0.9, 0.95, size=3)
    return ConsistencyReport.from_scores(values[0], values[1], values[2])


def random_tree(rng, tree_id, payload_dir) -> ConceptTree:
    """A structurally valid tree with randomized shape, payloads, and log."""
    arity = 3 if rng.random() < 0.2 else 2
    dim = int(rng.integers(3, 10))
    config = BuildConfig(
        children_per_node=arity,
        alpha=float(np.round(rng.uniform(0.0, 1.0), 3)),
        max_depth=int(rng.integers(1, 4)),
        k_seeds=tuple(
            sorted(int(s) for s in rng.choice(10_000, size=int(rng.integers(1, 5)), replace=False))
        ),
    )
    tree = ConceptTree(
        tree_id=tree_id,
        nodes={
            0: ConceptNode(
                node_id=0,
                samples=random_image_set(rng, dim, f"{tree_id}-root", payload_dir, min_images=2),
                status=NodeStatus.ROOT,
            )
        },
        dictionary=TokenDictionary(embed_dim=dim, base=None),
        config=config,
        vocabulary_checksum=f"check-{int(rng.integers(0, 1 << 30)):x}",
    )
    injected = {}
    for _ in range(int(rng.integers(0, 4))):
        leaves = [n for n in tree.nodes.values() if n.splittable()]
        if not leaves:
            break
        parent = leaves[int(rng.integers(0, len(leaves)))]
        child_ids = tree.next_child_ids(arity)
        for cid in child_ids:
            token = tree.token_for(cid)
            embedding = rng.standard_normal(dim).astype(np.float32)
            tree.nodes[cid] = ConceptNode(
                node_id=cid,
                samples=random_image_set(rng, dim, f"{tree_id}-n{cid}", payload_dir),
                token=token,
                embedding=embedding,
                parent_id=parent.node_id,
                self_consistency=float(np.round(rng.uniform(-0.5, 1.0), 6)),
                sibling_cross_consistency=float(np.round(rng.uniform(-0.5, 1.0), 6)),
                status=NodeStatus.ACTIVE,
            )
            injected[token] = embedding
        parent.child_ids = child_ids
    for node in tree.nodes.values():
        if node.is_root or not node.is_leaf:
            continue
        roll = rng.random()
        if roll < 0.2:
            node.status = NodeStatus.LEAF_STOPPED
        elif roll < 0.3:
            node.status = NodeStatus.LEAF_INCOHERENT
    if tree.root.is_leaf and rng.random() < 0.3:
        tree.root.status = NodeStatus.LEAF_STOPPED
    tree.dictionary = TokenDictionary(embed_dim=dim, base=None, injected=injected)

    for index in range(int(rng.integers(0, 3))):
        node_ids = list(tree.nodes)
        parent_id = int(node_ids[int(rng.integers(0, len(node_ids)))])
        children = tree.nodes[parent_id].child_ids
        decision = [None, *StopDecision][int(rng.integers(0, 4))]
        reports = {
            int(seed): _random_report(rng)
            for seed in rng.choice(config.k_seeds, size=int(rng.integers(0, len(config.k_seeds) + 1)), replace=False)
        }
        tree.build_log.append(
            SplitRecord(
                parent_node_id=parent_id,
                tokens=tuple(f"<{tree_id}_v{parent_id}t{index}{j}>" for j in range(arity)),
                child_ids=children if decision is StopDecision.SPLIT_OK else (),
                train_set=random_image_set(rng, dim, f"{tree_id}-log{index}", payload_dir),
                candidate_reports=reports,
                failed_seeds={int(s): "diverged" for s in config.k_seeds if int(s) not in reports and rng.random() < 0.3},
                chosen_seed=int(rng.choice(config.k_seeds)) if rng.random() < 0.8 else None,
                final_report=_random_report(rng) if rng.random() < 0.8 else None,
                decision=decision,
                wall_time_s=float(rng.uniform(0.0, 5.0)),
                extra={"reason": "synthetic"} if rng.random() < 0.4 else {},
            )
        )
    return tree
