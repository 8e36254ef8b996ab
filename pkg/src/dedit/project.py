"""Project persistence: a plain directory tree with JSON manifests.

Layout under the store root:

    base.ckpt                       the live pretrained checkpoint; every
                                    project injects its tokens here so id
                                    ranges stay globally disjoint
    store.json                      id counters
    projects/<pid>/manifest.json
    projects/<pid>/image.ppm        original upload, never rewritten
    projects/<pid>/mask.pgm         current segmentation (pre-finetune edits)
    projects/<pid>/checkpoint.ckpt  finetuned copy, present once trained
    projects/<pid>/loss_trace.csv
    projects/<pid>/results/<rid>/   result.json + image.ppm + mask.pgm
    pairs/<pair_id>/checkpoint.ckpt shared by both pair members

Finetuning trains a copy of the base, so foreign projects' untrained
rows ride along untouched; a pair job trains one copy for both members
and both manifests point at the same file, which is what makes
image-based edits between them legal.

All manifest and asset writes go through temp files and os.replace, so
a killed process never leaves a project referencing missing or partial
files.
"""

from __future__ import annotations

import json
import os
import threading
from typing import Callable, Dict, List, Optional, Tuple, Union

import numpy as np

from .checkpoint_io import (clone_checkpoint, load_checkpoint, save_checkpoint)
from .editing import (EditRequest, EditResult, ProjectState, apply_request)
from .errors import (ConfigError, DimensionError, IntegrityError,
                     NotFoundError, StateError)
from .finetune import (FinetuneConfig, TrainExample, finetune_pair,
                       finetune_stage1, finetune_stage2, write_loss_trace)
from .imagefiles import (image_to_ppm, mask_to_pgm, pgm_to_mask, ppm_to_image)
from .masks import (MaskEdit, SegmentationMap, apply_edit,
                    validate_partition)
from .model import Checkpoint
from .text import ItemPrompt, inject_item_tokens

MANIFEST_SCHEMA = 1
PROJECT_STATUSES = ("awaiting-finetune", "queued", "stage1", "stage2",
                    "done", "failed")
DEFAULT_TOKENS_PER_ITEM = 2


def _write_bytes(path: str, data: bytes) -> None:
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(data)
    os.replace(tmp, path)


def _write_json(path: str, obj) -> None:
    _write_bytes(path, json.dumps(obj, indent=1, sort_keys=True).encode("utf-8"))


def _read_json(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


class ProjectStore:
    """Owns the directory tree and the live base checkpoint."""

    def __init__(self, root: str, base: Union[Checkpoint, str, None] = None):
        self.root = os.path.abspath(root)
        os.makedirs(os.path.join(self.root, "projects"), exist_ok=True)
        os.makedirs(os.path.join(self.root, "pairs"), exist_ok=True)
        self._lock = threading.RLock()
        self._ckpt_cache: Dict[str, Checkpoint] = {}

        base_path = os.path.join(self.root, "base.ckpt")
        if isinstance(base, Checkpoint):
            save_checkpoint(base, base_path)
            self.base = base
        elif isinstance(base, str):
            self.base = load_checkpoint(base)
            save_checkpoint(self.base, base_path)
        elif os.path.exists(base_path):
            self.base = load_checkpoint(base_path)
        else:
            raise ConfigError(
                f"{self.root} holds no base.ckpt; pass a pretrained checkpoint")

        state_path = os.path.join(self.root, "store.json")
        if os.path.exists(state_path):
            self._counters = _read_json(state_path)
        else:
            self._counters = {"next_project": 1, "next_pair": 1}
            _write_json(state_path, self._counters)

    # ------------------------------------------------------------ paths

    def project_dir(self, pid: str) -> str:
        return os.path.join(self.root, "projects", pid)

    def manifest_path(self, pid: str) -> str:
        return os.path.join(self.project_dir(pid), "manifest.json")

    def result_dir(self, result_id: str) -> str:
        pid = result_id.rsplit("-", 1)[0]
        return os.path.join(self.project_dir(pid), "results", result_id)

    def _bump(self, key: str) -> int:
        with self._lock:
            n = self._counters[key]
            self._counters[key] = n + 1
            _write_json(os.path.join(self.root, "store.json"), self._counters)
            return n

    # ------------------------------------------------------------ manifests

    def get_manifest(self, pid: str) -> dict:
        path = self.manifest_path(pid)
        if not os.path.exists(path):
            raise NotFoundError(f"no project {pid!r}")
        return _read_json(path)

    def _put_manifest(self, manifest: dict) -> None:
        _write_json(self.manifest_path(manifest["id"]), manifest)

    def list_projects(self) -> List[str]:
        pdir = os.path.join(self.root, "projects")
        return sorted(p for p in os.listdir(pdir)
                      if os.path.exists(self.manifest_path(p)))

    def set_status(self, pid: str, status: str, error: str = "") -> None:
        if status not in PROJECT_STATUSES:
            raise ConfigError(f"unknown project status {status!r}")
        with self._lock:
            m = self.get_manifest(pid)
            m["status"] = status
            m["error"] = error
            self._put_manifest(m)

    # ------------------------------------------------------------ creation

    def create_project(self, image_bytes: bytes, mask_bytes: bytes,
                       tokens_per_item: int = DEFAULT_TOKENS_PER_ITEM) -> dict:
        image = ppm_to_image(image_bytes)
        mask = pgm_to_mask(mask_bytes)
        size = self.base.config.image_size
        if image.shape[0] != size or image.shape[1] != size:
            raise DimensionError(
                f"image is {image.shape[0]}x{image.shape[1]}, model wants "
                f"{size}x{size}")
        if mask.height != image.shape[0] or mask.width != image.shape[1]:
            raise DimensionError(
                f"mask is {mask.height}x{mask.width}, image is "
                f"{image.shape[0]}x{image.shape[1]}")
        # empty items are tolerated in mask algebra, but a new project would
        # allocate untrainable tokens for them, so reject the upload
        report = validate_partition(mask)
        if report.empty_items:
            raise IntegrityError(
                "mask assigns no pixels to item(s) "
                + ", ".join(str(i) for i in report.empty_items))

        with self._lock:
            pid = f"p{self._bump('next_project'):04d}"
            # allocate this project's token rows in the shared base so all
            # projects' id ranges stay disjoint, then persist the base
            prompts = inject_item_tokens(self.base.vocab, mask.n_items,
                                         tokens_per_item, seed=0, owner=pid)
            save_checkpoint(self.base, os.path.join(self.root, "base.ckpt"))

            pdir = self.project_dir(pid)
            os.makedirs(os.path.join(pdir, "results"), exist_ok=True)
            _write_bytes(os.path.join(pdir, "image.ppm"), image_bytes)
            _write_bytes(os.path.join(pdir, "mask.pgm"), mask_bytes)

            counts = mask.pixel_counts()
            manifest = {
                "schema": MANIFEST_SCHEMA,
                "id": pid,
                "status": "awaiting-finetune",
                "error": "",
                "n_items": mask.n_items,
                "tokens_per_item": tokens_per_item,
                "items": [{"id": i, "pixel_count": int(counts[i]),
                           "token_ids": list(prompts[i].token_ids)}
                          for i in range(mask.n_items)],
                "checkpoint": None,
                "pair": None,
                "trace": None,
                "history": [],
                "results": [],
            }
            self._register_original(manifest, image_bytes, mask_bytes)
            self._put_manifest(manifest)
            return manifest

    def _register_original(self, manifest: dict, image_bytes: bytes,
                           mask_bytes: bytes) -> None:
        """The upload itself is served through the results endpoints, so a
        reloaded client can always fetch what it is editing."""
        rid = f"{manifest['id']}-orig"
        rdir = self.result_dir(rid)
        os.makedirs(rdir, exist_ok=True)
        _write_bytes(os.path.join(rdir, "image.ppm"), image_bytes)
        _write_bytes(os.path.join(rdir, "mask.pgm"), mask_bytes)
        _write_json(os.path.join(rdir, "result.json"), {
            "schema": MANIFEST_SCHEMA, "result_id": rid,
            "project_id": manifest["id"], "request": None, "metrics": None,
            "n_items": manifest["n_items"],
        })
        manifest["results"].append(rid)

    # ------------------------------------------------------------ assets

    def load_image(self, pid: str) -> np.ndarray:
        self.get_manifest(pid)
        with open(os.path.join(self.project_dir(pid), "image.ppm"), "rb") as f:
            return ppm_to_image(f.read())

    def load_mask(self, pid: str) -> SegmentationMap:
        m = self.get_manifest(pid)
        with open(os.path.join(self.project_dir(pid), "mask.pgm"), "rb") as f:
            return pgm_to_mask(f.read(), n_items=m["n_items"])

    def put_mask(self, pid: str, edits: List[MaskEdit]) -> dict:
        with self._lock:
            manifest = self.get_manifest(pid)
            if manifest["status"] != "awaiting-finetune":
                raise StateError(
                    "mask replacement is a pre-finetune operation; edit the "
                    "mask through an edit request instead")
            mask = self.load_mask(pid)
            for e in edits:
                mask = apply_edit(mask, e)
            data = mask_to_pgm(mask)
            _write_bytes(os.path.join(self.project_dir(pid), "mask.pgm"), data)
            # the -orig result mirrors what the client is editing, so a
            # reloaded client sees the replaced mask, not the stale upload
            _write_bytes(os.path.join(self.result_dir(f"{pid}-orig"),
                                      "mask.pgm"), data)
            counts = mask.pixel_counts()
            for item in manifest["items"]:
                item["pixel_count"] = int(counts[item["id"]])
            self._put_manifest(manifest)
            return manifest

    # ------------------------------------------------------------ prompts

    def learned_prompts(self, manifest: dict) -> List[ItemPrompt]:
        return [ItemPrompt(item_id=item["id"],
                           token_ids=list(item["token_ids"]), kind="learned")
                for item in manifest["items"]]

    def _example(self, pid: str) -> TrainExample:
        manifest = self.get_manifest(pid)
        return TrainExample(image=self.load_image(pid),
                            mask=self.load_mask(pid),
                            prompts=self.learned_prompts(manifest))

    # ------------------------------------------------------------ finetuning

    def _checkpoint_at(self, rel: str) -> Checkpoint:
        path = os.path.join(self.root, rel)
        with self._lock:
            if rel not in self._ckpt_cache:
                if not os.path.exists(path):
                    raise NotFoundError(f"missing checkpoint {rel}")
                self._ckpt_cache[rel] = load_checkpoint(path)
            return self._ckpt_cache[rel]

    def _store_checkpoint(self, ckpt: Checkpoint, rel: str) -> None:
        with self._lock:
            save_checkpoint(ckpt, os.path.join(self.root, rel))
            self._ckpt_cache[rel] = ckpt

    def run_finetune(self, pid: str, cfg: FinetuneConfig,
                     on_status: Optional[Callable[[str], None]] = None
                     ) -> List[Tuple[int, float]]:
        """Train a copy of the base for one project. Synchronous; callers
        wanting a queue wrap it in a job."""
        cfg.validate()
        example = self._example(pid)
        with self._lock:
            ckpt = clone_checkpoint(self.base)

        def step(status: str) -> None:
            self.set_status(pid, status)
            if on_status:
                on_status(status)

        trace: List[Tuple[int, float]] = []
        try:
            step("stage1")
            finetune_stage1(ckpt, example, cfg, trace_out=trace)
            step("stage2")
            t2: List[Tuple[int, float]] = []
            finetune_stage2(ckpt, example, cfg, trace_out=t2)
            trace.extend((cfg.stage1_steps + s, l) for s, l in t2)
        except Exception as e:
            self.set_status(pid, "failed", error=f"{type(e).__name__}: {e}")
            raise

        rel = f"projects/{pid}/checkpoint.ckpt"
        trace_rel = f"projects/{pid}/loss_trace.csv"
        with self._lock:
            self._store_checkpoint(ckpt, rel)
            write_loss_trace(os.path.join(self.root, trace_rel), trace)
            manifest = self.get_manifest(pid)
            manifest["checkpoint"] = rel
            manifest["trace"] = trace_rel
            manifest["status"] = "done"
            manifest["error"] = ""
            self._put_manifest(manifest)
        return trace

    def run_pair_finetune(self, target_id: str, reference_id: str,
                          cfg: FinetuneConfig) -> List[Tuple[int, float]]:
        """Train one shared copy over both projects' examples."""
        cfg.validate()
        if target_id == reference_id:
            raise ConfigError("pair finetuning needs two distinct projects")
        target = self._example(target_id)
        reference = self._example(reference_id)
        with self._lock:
            pair_id = f"pair{self._bump('next_pair'):04d}"
            ckpt = clone_checkpoint(self.base)

        def set_both(status: str, error: str = "") -> None:
            self.set_status(target_id, status, error)
            self.set_status(reference_id, status, error)

        trace: List[Tuple[int, float]] = []
        try:
            set_both("stage1")
            finetune_pair(ckpt, target, reference, cfg, trace_out=trace)
        except Exception as e:
            set_both("failed", error=f"{type(e).__name__}: {e}")
            raise

        rel = f"pairs/{pair_id}/checkpoint.ckpt"
        trace_rel = f"pairs/{pair_id}/loss_trace.csv"
        with self._lock:
            self._store_checkpoint(ckpt, rel)
            write_loss_trace(os.path.join(self.root, trace_rel), trace)
            for pid, role, partner in ((target_id, "target", reference_id),
                                       (reference_id, "reference", target_id)):
                manifest = self.get_manifest(pid)
                manifest["checkpoint"] = rel
                manifest["trace"] = trace_rel
                manifest["status"] = "done"
                manifest["error"] = ""
                manifest["pair"] = {"pair_id": pair_id, "partner": partner,
                                    "role": role}
                self._put_manifest(manifest)
        return trace

    # ------------------------------------------------------------ editing

    def load_state(self, pid: str) -> ProjectState:
        manifest = self.get_manifest(pid)
        if manifest["checkpoint"] is None:
            raise StateError(f"project {pid} is not finetuned yet")
        ckpt = self._checkpoint_at(manifest["checkpoint"])
        return ProjectState(ckpt=ckpt, mask=self.load_mask(pid),
                            prompts=self.learned_prompts(manifest))

    def run_edit(self, pid: str, req: EditRequest) -> Tuple[str, EditResult]:
        req.validate()
        state = self.load_state(pid)
        reference = None
        if req.kind == "image" or (req.kind == "interpolate"
                                   and req.reference_item >= 0):
            if not req.reference_project:
                raise ConfigError(f"{req.kind} request needs reference_project")
            reference = self.load_state(req.reference_project)
        result = apply_request(state, req, reference=reference)

        with self._lock:
            manifest = self.get_manifest(pid)
            rid = f"{pid}-r{len(manifest['results'])}"
            rdir = self.result_dir(rid)
            os.makedirs(rdir, exist_ok=True)
            _write_bytes(os.path.join(rdir, "image.ppm"),
                         image_to_ppm(result.image))
            _write_bytes(os.path.join(rdir, "mask.pgm"),
                         mask_to_pgm(result.mask))
            doc = result.to_dict()
            doc["result_id"] = rid
            doc["project_id"] = pid
            _write_json(os.path.join(rdir, "result.json"), doc)
            manifest["results"].append(rid)
            manifest["history"].append({"request": req.to_dict(),
                                        "result_id": rid})
            self._put_manifest(manifest)
        return rid, result

    # ------------------------------------------------------------ results

    def _result_file(self, result_id: str, name: str) -> str:
        path = os.path.join(self.result_dir(result_id), name)
        if not os.path.exists(path):
            raise NotFoundError(f"no result {result_id!r}")
        return path

    def result_json(self, result_id: str) -> dict:
        return _read_json(self._result_file(result_id, "result.json"))

    def result_image_bytes(self, result_id: str) -> bytes:
        with open(self._result_file(result_id, "image.ppm"), "rb") as f:
            return f.read()

    def result_mask_bytes(self, result_id: str) -> bytes:
        with open(self._result_file(result_id, "mask.pgm"), "rb") as f:
            return f.read()
