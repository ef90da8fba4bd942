"""Breadth-first construction of concept trees.

Splitting a node fits two fresh sibling tokens to the node's training set
(the root uses the user images verbatim; any other node generates a
40-image pool from its own token and curates the 10 most mutually
consistent). Each configured seed trains a short candidate run; candidates
are scored on freshly generated per-token sample sets, the best seed is
finalized with the remaining step budget, and the stop rule then decides
whether the children join the tree. A rejected split rolls its tokens back
and marks the node as a stopped leaf, so the dictionary always holds
exactly one token per non-root node.

Every stochastic stage derives its seed from (tree id, node id, stage,
configured seed), which makes builds deterministic and safely resumable.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

from .backend import DiffusionBackend
from .core import (
    ROOT_ID,
    BuildConfig,
    CandidatePair,
    ConceptNode,
    ConceptTree,
    ConceptTreeError,
    ConsistencyReport,
    ImageSet,
    NodeStatus,
    validate_tree,
)
from .dictionary import TokenDictionary
from .scoring import (
    StopDecision,
    consistency,
    curate_training_set,
    evaluate_stop,
    score_candidate,
    select_best_seed,
)
from .seeding import derive_rng, derive_seed
from .trainer import TrainJob, TrainingDivergedError, snapshot_embeddings, train_pair

logger = logging.getLogger(__name__)

PROGRESS_EVERY = 25


class BuilderError(ConceptTreeError):
    pass


class SplitPreconditionError(BuilderError):
    pass


@dataclass(frozen=True, eq=False)
class BuildEvent:
    kind: str
    node_id: int | None
    data: Mapping


@dataclass(eq=False)
class SplitRecord:
    """Everything recorded about one split attempt, kept in the build log.

    ``train_set`` is the image set the sibling pair actually trained on
    (the root's user images, or the curated top of a generated pool), kept
    so any split can be re-derived from its archive alone.
    """

    parent_node_id: int
    tokens: tuple[str, ...]
    child_ids: tuple[int, ...]
    train_set: ImageSet
    candidate_reports: dict[int, ConsistencyReport]
    failed_seeds: dict[int, str]
    chosen_seed: int | None
    final_report: ConsistencyReport | None
    decision: StopDecision | None
    wall_time_s: float
    extra: dict = field(default_factory=dict)


EventCallback = Callable[[BuildEvent], None]


class TreeBuilder:
    """Runs splits against one backend and reports progress via events."""

    def __init__(self, backend: DiffusionBackend, on_event: EventCallback | None = None):
        self.backend = backend
        self.on_event = on_event

    # -- event plumbing ---------------------------------------------------

    def _emit(self, kind: str, node_id: int | None = None, **data) -> None:
        if self.on_event is not None:
            self.on_event(BuildEvent(kind=kind, node_id=node_id, data=data))

    # -- tree lifecycle ---------------------------------------------------

    def new_tree(
        self, tree_id: str, root_images: ImageSet, config: BuildConfig
    ) -> ConceptTree:
        if len(root_images) < 2:
            raise BuilderError("a root image set needs at least two images")
        dictionary = TokenDictionary(
            embed_dim=self.backend.embed_dim,
            base=self.backend.base_vocabulary(),
        )
        root = ConceptNode(
            node_id=ROOT_ID, samples=root_images, status=NodeStatus.ROOT
        )
        return ConceptTree(
            tree_id=tree_id,
            nodes={ROOT_ID: root},
            dictionary=dictionary,
            config=config,
            vocabulary_checksum=self.backend.vocabulary_checksum(),
        )

    def pending_nodes(self, tree: ConceptTree) -> list[int]:
        """Splittable nodes within the depth budget, in id (breadth-first) order."""
        return [
            node.node_id
            for node in tree.active_leaves()
            if tree.depth(node.node_id) < tree.config.max_depth
        ]

    def build_tree(
        self,
        root_images: ImageSet,
        config: BuildConfig,
        tree_id: str = "tree",
        checkpoint_dir: Path | None = None,
    ) -> ConceptTree:
        """Build a tree breadth-first until max depth or all leaves stop."""
        tree = self.new_tree(tree_id, root_images, config)
        return self.resume_build(tree, checkpoint_dir=checkpoint_dir)

    def resume_build(
        self, tree: ConceptTree, checkpoint_dir: Path | None = None
    ) -> ConceptTree:
        """Continue splitting wherever the tree state says work remains.

        Completed splits are never redone: pending work is derived from node
        statuses alone. With checkpointing enabled the archive is rewritten
        after every split and once more if a split raises, so an interrupted
        build resumes from its last completed split.
        """
        problems = validate_tree(tree)
        if problems:
            raise BuilderError(f"refusing to build on an invalid tree: {problems}")
        while True:
            pending = self.pending_nodes(tree)
            if not pending:
                break
            node_id = pending[0]
            try:
                self.split_node(tree, node_id)
            except Exception:
                if checkpoint_dir is not None:
                    self._checkpoint(tree, checkpoint_dir)
                raise
            if checkpoint_dir is not None:
                self._checkpoint(tree, checkpoint_dir)
        return tree

    def _checkpoint(self, tree: ConceptTree, checkpoint_dir: Path) -> None:
        from .store import save_tree  # deferred: store depends on core only

        save_tree(tree, checkpoint_dir)

    # -- splitting ----------------------------------------------------------

    def split_node(self, tree: ConceptTree, node_id: int) -> SplitRecord:
        """Split one node; returns the record appended to the build log."""
        node = tree.nodes.get(node_id)
        if node is None:
            raise SplitPreconditionError(f"tree has no node {node_id}")
        if not node.splittable():
            raise SplitPreconditionError(
                f"node {node_id} is not splittable (status {node.status.value}, "
                f"{len(node.child_ids)} children)"
            )
        config = tree.config
        started = time.monotonic()
        arity = config.children_per_node
        child_ids = tree.next_child_ids(arity)
        tokens = tuple(tree.token_for(cid) for cid in child_ids)
        self._emit("split-started", node_id, tokens=list(tokens))

        train_set = self._training_set(tree, node)

        candidates: list[CandidatePair] = []
        jobs: dict[int, TrainJob] = {}
        reports: dict[int, ConsistencyReport] = {}
        failures: dict[int, str] = {}
        sample_sets: dict[int, dict[str, ImageSet]] = {}
        for seed in config.k_seeds:
            try:
                job, sets, report = self._run_candidate(
                    tree, node_id, tokens, train_set, seed
                )
            except TrainingDivergedError as exc:
                logger.warning("seed %s diverged on node %s: %s", seed, node_id, exc)
                failures[seed] = str(exc)
                continue
            jobs[seed] = job
            sample_sets[seed] = sets
            reports[seed] = report
            snapshot = snapshot_embeddings(job)
            candidates.append(
                CandidatePair(
                    seed=seed,
                    left_embedding=snapshot[tokens[0]],
                    right_embedding=snapshot[tokens[-1]],
                    left_samples=sets[tokens[0]],
                    right_samples=sets[tokens[-1]],
                    report=report,
                )
            )
            self._emit(
                "candidate-scored",
                node_id,
                seed=seed,
                objective=report.objective,
                report=_report_json(report),
            )

        threshold = config.self_coherency_threshold
        all_incoherent = bool(candidates) and all(
            c.report.self_left < threshold and c.report.self_right < threshold
            for c in candidates
        )
        if not candidates or all_incoherent:
            reason = "all candidates diverged" if not candidates else "all candidates incoherent"
            node.status = NodeStatus.LEAF_STOPPED
            record = SplitRecord(
                parent_node_id=node_id,
                tokens=tokens,
                child_ids=(),
                train_set=train_set,
                candidate_reports=reports,
                failed_seeds=failures,
                chosen_seed=None,
                final_report=None,
                decision=None,
                wall_time_s=time.monotonic() - started,
                extra={"reason": reason},
            )
            tree.build_log.append(record)
            self._emit("split-finished", node_id, decision=None, reason=reason)
            return record

        winner = select_best_seed(candidates)
        self._emit("seed-chosen", node_id, seed=winner.seed)
        job = jobs[winner.seed]
        remaining = config.final_steps - config.candidate_steps
        if remaining > 0:
            train_pair(job, remaining)

        final_sets = {
            token: self.backend.generate(
                token,
                job.dictionary,
                derive_seed(tree.tree_id, node_id, "final-samples", winner.seed, token),
                config.score_set_size,
            )
            for token in tokens
        }
        final_embeddings = snapshot_embeddings(job)
        final_report, decision, pair_scores = self._judge(
            tokens, final_sets, config
        )
        self._emit(
            "split-scored",
            node_id,
            seed=winner.seed,
            decision=decision.value,
            report=_report_json(final_report) if final_report else None,
        )

        if decision is StopDecision.SPLIT_OK:
            dictionary = tree.dictionary.extend(tokens, config.init_word)
            for token in tokens:
                dictionary = dictionary.update_embedding(token, final_embeddings[token])
            tree.dictionary = dictionary
            for cid, token in zip(child_ids, tokens):
                self_score, cross_score = pair_scores[token]
                tree.nodes[cid] = ConceptNode(
                    node_id=cid,
                    samples=final_sets[token],
                    token=token,
                    embedding=final_embeddings[token],
                    parent_id=node_id,
                    self_consistency=self_score,
                    sibling_cross_consistency=cross_score,
                    status=NodeStatus.ACTIVE,
                )
            node.child_ids = child_ids
            attached = child_ids
        else:
            node.status = (
                NodeStatus.LEAF_INCOHERENT
                if decision is StopDecision.LEAF_INCOHERENT
                else NodeStatus.LEAF_STOPPED
            )
            attached = ()

        record = SplitRecord(
            parent_node_id=node_id,
            tokens=tokens,
            child_ids=attached,
            train_set=train_set,
            candidate_reports=reports,
            failed_seeds=failures,
            chosen_seed=winner.seed,
            final_report=final_report,
            decision=decision,
            wall_time_s=time.monotonic() - started,
        )
        tree.build_log.append(record)
        self._emit(
            "split-finished",
            node_id,
            decision=decision.value,
            children=list(attached),
        )
        return record

    # -- pieces -------------------------------------------------------------

    def _training_set(self, tree: ConceptTree, node: ConceptNode) -> ImageSet:
        """Root trains on the user images verbatim; other nodes generate."""
        if node.is_root:
            return node.samples
        config = tree.config
        pool = self.backend.generate(
            node.token,
            tree.dictionary,
            derive_seed(tree.tree_id, node.node_id, "pool"),
            config.score_set_size,
        )
        return curate_training_set(
            pool, config.train_set_size, self.backend.embed_image
        )

    def _run_candidate(
        self,
        tree: ConceptTree,
        node_id: int,
        tokens: tuple[str, ...],
        train_set: ImageSet,
        seed: int,
    ) -> tuple[TrainJob, dict[str, ImageSet], ConsistencyReport]:
        config = tree.config
        dictionary = tree.dictionary.extend(tokens, config.init_word)
        if config.init_strategy == "exemplar":
            dictionary = self._exemplar_init(tree, node_id, tokens, train_set, seed, dictionary)

        def forward_progress(job: TrainJob, step: int, loss: float) -> None:
            if step % PROGRESS_EVERY == 0 or step == config.final_steps:
                self._emit(
                    "training-progress", node_id, seed=seed, step=step, loss=loss
                )

        job = TrainJob(
            parent_images=train_set,
            tokens=tokens,
            dictionary=dictionary,
            config=config,
            seed=derive_seed(tree.tree_id, node_id, "train", seed),
            backend=self.backend,
            on_step=forward_progress,
        )
        train_pair(job, config.candidate_steps)
        sets = {
            token: self.backend.generate(
                token,
                job.dictionary,
                derive_seed(tree.tree_id, node_id, "samples", seed, token),
                config.score_set_size,
            )
            for token in tokens
        }
        report, _, _ = self._judge(tokens, sets, config)
        return job, sets, report

    def _exemplar_init(
        self,
        tree: ConceptTree,
        node_id: int,
        tokens: tuple[str, ...],
        train_set: ImageSet,
        seed: int,
        dictionary: TokenDictionary,
    ) -> TokenDictionary:
        """Start each sibling at a spread-out training latent.

        With identical starts on a symmetric surrogate loss, one sibling can
        capture every sample and leave nothing to pull the other one away.
        Seeding the pair at mutually distant exemplars gives each candidate
        seed a genuinely different starting partition instead.
        """
        if self.backend.latent_dim != self.backend.embed_dim:
            raise BuilderError(
                "exemplar init needs the latent and embedding spaces to "
                f"coincide ({self.backend.latent_dim} != {self.backend.embed_dim})"
            )
        rng = derive_rng(tree.tree_id, node_id, "init", seed)
        latents = np.stack([self.backend.encode_image(ref) for ref in train_set])
        for token, index in zip(tokens, _exemplar_indices(latents, len(tokens), rng)):
            dictionary = dictionary.update_embedding(
                token, latents[index].astype(np.float32)
            )
        return dictionary

    def _judge(
        self,
        tokens: tuple[str, ...],
        sets: dict[str, ImageSet],
        config: BuildConfig,
    ) -> tuple[ConsistencyReport, StopDecision, dict[str, tuple[float, float]]]:
        """Report, stop decision, and per-child (self, cross) scores.

        For the standard two-child split this is the pair report and stop
        rule. The experimental three-child mode reuses the same shape by
        reporting the two weakest selves and the largest pairwise cross.
        """
        embedder = self.backend.embed_image
        selves = {
            token: consistency(sets[token], sets[token], embedder) for token in tokens
        }
        crosses: dict[str, float] = {}
        worst_cross = -1.0
        for i, a in enumerate(tokens):
            for b in tokens[i + 1 :]:
                value = consistency(sets[a], sets[b], embedder)
                worst_cross = max(worst_cross, value)
                crosses[a] = max(crosses.get(a, -1.0), value)
                crosses[b] = max(crosses.get(b, -1.0), value)
        if len(tokens) == 2:
            report = score_candidate(sets[tokens[0]], sets[tokens[1]], embedder)
        else:
            ranked = sorted(selves.values())
            report = ConsistencyReport.from_scores(ranked[1], ranked[0], worst_cross)
        decision = evaluate_stop(report, config)
        pair_scores = {
            token: (selves[token], crosses[token]) for token in tokens
        }
        return report, decision, pair_scores


def _exemplar_indices(latents: np.ndarray, count: int, rng) -> list[int]:
    """Pick ``count`` sample indices, each far from the ones already picked."""
    chosen = [int(rng.integers(len(latents)))]
    while len(chosen) < count:
        gaps = np.min(
            np.stack([np.sum((latents - latents[c]) ** 2, axis=1) for c in chosen]),
            axis=0,
        )
        total = float(gaps.sum())
        if total <= 0.0:
            leftovers = [i for i in range(len(latents)) if i not in chosen]
            chosen.append(int(rng.choice(leftovers)) if leftovers else chosen[0])
        else:
            chosen.append(int(rng.choice(len(latents), p=gaps / total)))
    return chosen


def adopt_tree(tree: ConceptTree, backend: DiffusionBackend) -> ConceptTree:
    """Re-attach a loaded tree to a backend so it can train and generate.

    Archives carry only the learned tokens; the frozen base vocabulary
    comes from the backend and must be the one the tree was built against.
    """
    checksum = backend.vocabulary_checksum()
    if tree.vocabulary_checksum is not None and tree.vocabulary_checksum != checksum:
        raise BuilderError(
            "tree was built against a different base vocabulary "
            f"({tree.vocabulary_checksum} != {checksum})"
        )
    tree.dictionary = tree.dictionary.attach_base(backend.base_vocabulary())
    tree.vocabulary_checksum = checksum
    return tree


def _report_json(report: ConsistencyReport) -> dict:
    return {
        "self_left": report.self_left,
        "self_right": report.self_right,
        "cross": report.cross,
        "objective": report.objective,
    }
