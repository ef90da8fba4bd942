"""HTTP service over a directory of tree archives.

Reads always come from the last persisted archive state. Mutations (node
splits, combined generation) run as asynchronous jobs: the client receives
a job handle, polls it or follows its event stream, and the archive is
rewritten only when a job completes. A job that dies mid-way therefore
leaves every archive exactly as it was.

Split jobs take a per-tree slot so two splits can never interleave on one
tree; generation jobs are independent and may run alongside anything.

The payload cap (64 images per generation) bounds one job's work.
"""

from __future__ import annotations

import json
import logging
import queue
import threading
import uuid
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np
from fastapi import FastAPI, HTTPException, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import FileResponse, StreamingResponse
from pydantic import BaseModel, Field

from .builder import BuildEvent, TreeBuilder, adopt_tree
from .core import ConceptTree, ImageSet
from .dictionary import TemplateArityError, TokenDictionary, UnknownWordError
from .store import MANIFEST_NAME, StoreError, list_trees, load_tree, save_tree, write_vector

logger = logging.getLogger(__name__)

GENERATION_CAP = 64
JOB_WORKERS = 4


class GenerateRequest(BaseModel):
    tree_ids: list[str] = Field(min_length=1)
    tokens: list[str] = Field(min_length=1)
    template: str | None = None
    n: int = 8
    seed: int = 0


@dataclass(eq=False)
class Job:
    """One unit of background work plus everything observers may read."""

    job_id: str
    kind: str
    state: str = "queued"
    progress_step: int = 0
    progress_loss: float | None = None
    result: dict | None = None
    error: str | None = None
    lock: threading.Lock = field(default_factory=threading.Lock)
    events: list[dict] = field(default_factory=list)
    listeners: list[queue.Queue] = field(default_factory=list)

    def to_json(self) -> dict:
        with self.lock:
            return {
                "job_id": self.job_id,
                "kind": self.kind,
                "state": self.state,
                "progress": {"step": self.progress_step, "loss": self.progress_loss},
                "result": self.result,
                "error": self.error,
            }

    def push_event(self, kind: str, **data) -> None:
        with self.lock:
            if self.state in ("done", "failed"):
                return
            event = {"event": kind, "job_id": self.job_id, **data}
            self.events.append(event)
            for listener in self.listeners:
                listener.put(event)

    def advance(self, step: int, loss: float | None) -> None:
        with self.lock:
            if self.state in ("done", "failed"):
                return
            self.progress_step = max(self.progress_step, step)
            self.progress_loss = loss

    def finish(self, result: dict) -> None:
        with self.lock:
            self.state = "done"
            self.result = result
            event = {"event": "job-done", "job_id": self.job_id, "result": result}
            self.events.append(event)
            for listener in self.listeners:
                listener.put(event)
                listener.put(None)

    def fail(self, message: str) -> None:
        with self.lock:
            self.state = "failed"
            self.error = message
            event = {"event": "job-failed", "job_id": self.job_id, "error": message}
            self.events.append(event)
            for listener in self.listeners:
                listener.put(event)
                listener.put(None)

    def subscribe(self) -> tuple[list[dict], queue.Queue | None]:
        """Snapshot of past events plus a live queue (None when terminal)."""
        with self.lock:
            history = list(self.events)
            if self.state in ("done", "failed"):
                return history, None
            channel: queue.Queue = queue.Queue()
            self.listeners.append(channel)
            return history, channel


class ServiceState:
    def __init__(self, trees_dir: Path, backend):
        self.trees_dir = Path(trees_dir)
        self.backend = backend
        self.jobs: dict[str, Job] = {}
        self.registry_lock = threading.Lock()
        self.splitting: set[str] = set()
        self.executor = ThreadPoolExecutor(max_workers=JOB_WORKERS)

    def new_job(self, kind: str) -> Job:
        job = Job(job_id=uuid.uuid4().hex, kind=kind)
        with self.registry_lock:
            self.jobs[job.job_id] = job
        return job

    def claim_split(self, tree_id: str) -> bool:
        with self.registry_lock:
            if tree_id in self.splitting:
                return False
            self.splitting.add(tree_id)
            return True

    def release_split(self, tree_id: str) -> None:
        with self.registry_lock:
            self.splitting.discard(tree_id)


def _node_json(tree: ConceptTree, node_id: int) -> dict:
    node = tree.nodes[node_id]
    return {
        "node_id": node.node_id,
        "parent_id": node.parent_id,
        "child_ids": list(node.child_ids),
        "token": node.token,
        "status": node.status.value,
        "self_consistency": node.self_consistency,
        "sibling_cross_consistency": node.sibling_cross_consistency,
        "depth": tree.depth(node.node_id),
        "splittable": node.splittable(),
        "sample_count": len(node.samples),
    }


def _samples_json(tree_id: str, node_id: int, samples: ImageSet) -> dict:
    images = []
    for ref in samples:
        url = None
        if isinstance(ref.payload, Path):
            url = f"/trees/{tree_id}/files/{_relative_url(ref.payload, tree_id)}"
        images.append(
            {
                "image_id": ref.image_id,
                "source": ref.source.value,
                "seed": ref.seed,
                "prompt": ref.prompt,
                "url": url,
            }
        )
    return {"tree_id": tree_id, "node_id": node_id, "images": images}


def _relative_url(path: Path, tree_id: str) -> str | None:
    parts = list(path.parts)
    if tree_id in parts:
        idx = len(parts) - 1 - parts[::-1].index(tree_id)
        return "/".join(parts[idx + 1 :])
    return None


def create_app(trees_dir: Path, backend=None) -> FastAPI:
    """Application over one archive directory and an optional backend."""
    app = FastAPI(title="concept tree exploration service")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )
    state = ServiceState(Path(trees_dir), backend)
    app.state.service = state

    def load_or_404(tree_id: str) -> ConceptTree:
        archive = state.trees_dir / tree_id
        if not (archive / MANIFEST_NAME).is_file():
            raise HTTPException(status_code=404, detail=f"no tree {tree_id!r}")
        try:
            return load_tree(archive)
        except StoreError as exc:
            raise HTTPException(status_code=500, detail=str(exc)) from exc

    def require_backend():
        if state.backend is None:
            raise HTTPException(
                status_code=503, detail="no generation backend is configured"
            )
        return state.backend

    @app.get("/health")
    def health() -> dict:
        return {
            "status": "ok",
            "backend": type(state.backend).__name__ if state.backend else None,
            "trees": len(list_trees(state.trees_dir)),
        }

    @app.get("/trees")
    def all_trees() -> dict:
        out = []
        for tree_id in list_trees(state.trees_dir):
            try:
                tree = load_tree(state.trees_dir / tree_id)
            except StoreError as exc:
                logger.warning("skipping unreadable archive %s: %s", tree_id, exc)
                continue
            out.append(
                {
                    "tree_id": tree_id,
                    "node_count": len(tree.nodes),
                    "max_depth": max(tree.depth(n) for n in tree.nodes),
                    "splitting": tree_id in state.splitting,
                }
            )
        return {"trees": out}

    @app.get("/trees/{tree_id}")
    def one_tree(tree_id: str) -> dict:
        tree = load_or_404(tree_id)
        return {
            "tree_id": tree.tree_id,
            "config": {
                "max_depth": tree.config.max_depth,
                "children_per_node": tree.config.children_per_node,
                "k_seeds": list(tree.config.k_seeds),
                "train_template": tree.config.train_template,
            },
            "nodes": [_node_json(tree, node_id) for node_id in sorted(tree.nodes)],
            "splits": [
                {
                    "parent_node_id": record.parent_node_id,
                    "decision": record.decision.value if record.decision else None,
                    "chosen_seed": record.chosen_seed,
                    "child_ids": list(record.child_ids),
                }
                for record in tree.build_log
            ],
            "splitting": tree_id in state.splitting,
        }

    @app.get("/trees/{tree_id}/nodes/{node_id}/samples")
    def node_samples(tree_id: str, node_id: int) -> dict:
        tree = load_or_404(tree_id)
        node = tree.nodes.get(node_id)
        if node is None:
            raise HTTPException(status_code=404, detail=f"no node {node_id}")
        return _samples_json(tree_id, node_id, node.samples)

    @app.get("/trees/{tree_id}/files/{rel_path:path}")
    def tree_file(tree_id: str, rel_path: str):
        archive = (state.trees_dir / tree_id).resolve()
        if not (archive / MANIFEST_NAME).is_file():
            raise HTTPException(status_code=404, detail=f"no tree {tree_id!r}")
        target = (archive / rel_path).resolve()
        if archive not in target.parents or not target.is_file():
            raise HTTPException(status_code=404, detail="no such file")
        media = "image/png" if target.suffix == ".png" else "application/octet-stream"
        return FileResponse(target, media_type=media)

    @app.post("/trees/{tree_id}/nodes/{node_id}/split", status_code=202)
    def split_node(tree_id: str, node_id: int) -> dict:
        backend = require_backend()
        tree = load_or_404(tree_id)
        node = tree.nodes.get(node_id)
        if node is None:
            raise HTTPException(status_code=404, detail=f"no node {node_id}")
        if not node.splittable():
            raise HTTPException(
                status_code=409,
                detail=f"node {node_id} is not splittable "
                f"(status {node.status.value}, {len(node.child_ids)} children)",
            )
        if not state.claim_split(tree_id):
            raise HTTPException(
                status_code=409, detail=f"tree {tree_id!r} is already splitting"
            )
        job = state.new_job("split")

        def run() -> None:
            try:
                job.state = "running"
                job.push_event("job-started", tree_id=tree_id, node_id=node_id)
                work_tree = load_tree(state.trees_dir / tree_id)
                adopt_tree(work_tree, backend)

                def forward(event: BuildEvent) -> None:
                    if event.kind == "training-progress":
                        job.advance(event.data["step"], event.data["loss"])
                    job.push_event(event.kind, node_id=event.node_id, **dict(event.data))

                record = TreeBuilder(backend, on_event=forward).split_node(
                    work_tree, node_id
                )
                save_tree(work_tree, state.trees_dir)
                job.finish(
                    {
                        "tree_id": tree_id,
                        "node_id": node_id,
                        "decision": record.decision.value if record.decision else None,
                        "children": list(record.child_ids),
                        "chosen_seed": record.chosen_seed,
                    }
                )
            except Exception as exc:
                logger.exception("split job %s failed", job.job_id)
                job.fail(str(exc))
            finally:
                state.release_split(tree_id)

        state.executor.submit(run)
        return {"job": job.to_json()}

    @app.post("/generate", status_code=202)
    def generate(request: GenerateRequest) -> dict:
        backend = require_backend()
        if not 1 <= request.n <= GENERATION_CAP:
            raise HTTPException(
                status_code=422,
                detail=f"n must lie in [1, {GENERATION_CAP}], got {request.n}",
            )
        template = request.template
        if template is None:
            template = "A photo of " + " ".join("{}" for _ in request.tokens)
        merged: TokenDictionary | None = None
        for tree_id in request.tree_ids:
            tree = load_or_404(tree_id)
            adopt_tree(tree, backend)
            merged = tree.dictionary if merged is None else merged.merge(tree.dictionary)
        try:
            prompt = merged.compose_prompt(template, request.tokens)
        except (TemplateArityError, UnknownWordError) as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        job = state.new_job("generate")

        def run() -> None:
            try:
                job.state = "running"
                job.push_event("job-started", prompt=prompt)
                images = backend.generate(prompt, merged, request.seed, request.n)
                out_dir = state.trees_dir / "_generated" / job.job_id
                out_dir.mkdir(parents=True, exist_ok=True)
                listing = []
                for i, ref in enumerate(images):
                    name = None
                    if isinstance(ref.payload, np.ndarray):
                        name = f"{i:03d}.bin"
                        write_vector(out_dir / name, ref.payload)
                    elif isinstance(ref.payload, bytes):
                        name = f"{i:03d}.png"
                        (out_dir / name).write_bytes(ref.payload)
                    listing.append(
                        {
                            "image_id": ref.image_id,
                            "file": name,
                            "url": f"/generated/{job.job_id}/{name}" if name else None,
                        }
                    )
                (out_dir / "images.json").write_text(
                    json.dumps({"prompt": prompt, "images": listing}, indent=2) + "\n",
                    encoding="utf-8",
                )
                job.finish({"prompt": prompt, "seed": request.seed, "images": listing})
            except Exception as exc:
                logger.exception("generate job %s failed", job.job_id)
                job.fail(str(exc))

        state.executor.submit(run)
        return {"job": job.to_json()}

    @app.get("/generated/{job_id}/{name}")
    def generated_file(job_id: str, name: str):
        base = (state.trees_dir / "_generated" / job_id).resolve()
        target = (base / name).resolve()
        if base not in target.parents or not target.is_file():
            raise HTTPException(status_code=404, detail="no such file")
        media = "image/png" if target.suffix == ".png" else "application/octet-stream"
        return FileResponse(target, media_type=media)

    @app.get("/jobs/{job_id}")
    def job_status(job_id: str) -> dict:
        job = state.jobs.get(job_id)
        if job is None:
            raise HTTPException(status_code=404, detail=f"no job {job_id!r}")
        return job.to_json()

    @app.get("/jobs/{job_id}/events")
    def job_events(job_id: str, request: Request) -> StreamingResponse:
        job = state.jobs.get(job_id)
        if job is None:
            raise HTTPException(status_code=404, detail=f"no job {job_id!r}")

        def stream() -> Iterator[str]:
            history, channel = job.subscribe()
            for event in history:
                yield f"data: {json.dumps(event)}\n\n"
            if channel is None:
                return
            while True:
                event = channel.get()
                if event is None:
                    return
                yield f"data: {json.dumps(event)}\n\n"

        return StreamingResponse(stream(), media_type="text/event-stream")

    return app
