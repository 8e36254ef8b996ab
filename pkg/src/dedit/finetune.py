"""Two-stage prompt-association training over one image or a pair.

Stage 1 moves only the injected embedding rows; stage 2 moves only the
cross-attention projections. The restriction is enforced through the
parameter lists handed to the optimizer, so everything outside the
declared scope stays bit-identical without any masking tricks.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import tensor as tc
from .attention import Assignment, assignment_from_mask
from .errors import (ConfigError, DivergenceError, InjectionError, OrderingError,
                     StateError)
from .masks import SegmentationMap
from .model import Checkpoint, select_params, training_loss
from .schedule import make_schedule, noise_rng
from .text import ItemPrompt, encode_prompt

EMA_WINDOW = 50
STAGE1_STREAM = 0x465431
STAGE2_STREAM = 0x465432
JOB_STATUSES = ("queued", "stage1", "stage2", "done", "failed")


@dataclass
class FinetuneConfig:
    stage1_steps: int = 400
    stage2_steps: int = 400
    lr_stage1: float = 1e-4
    lr_stage2: float = 5e-5
    accumulation: int = 10
    seed: int = 0

    def validate(self) -> None:
        if self.stage1_steps < 0 or self.stage2_steps < 0:
            raise ConfigError("step counts must be >= 0")
        if self.lr_stage1 <= 0 or self.lr_stage2 <= 0:
            raise ConfigError("learning rates must be positive")
        if self.accumulation < 1:
            raise ConfigError(
                f"accumulation must be >= 1, got {self.accumulation}")

    def to_dict(self) -> dict:
        return {"stage1_steps": self.stage1_steps,
                "stage2_steps": self.stage2_steps,
                "lr_stage1": self.lr_stage1, "lr_stage2": self.lr_stage2,
                "accumulation": self.accumulation, "seed": self.seed}

    @staticmethod
    def from_dict(d: dict) -> "FinetuneConfig":
        base = FinetuneConfig()
        known = base.to_dict()
        unknown = set(d) - set(known)
        if unknown:
            raise ConfigError(f"unknown finetune options: {sorted(unknown)}")
        known.update(d)
        cfg = FinetuneConfig(
            stage1_steps=int(known["stage1_steps"]),
            stage2_steps=int(known["stage2_steps"]),
            lr_stage1=float(known["lr_stage1"]),
            lr_stage2=float(known["lr_stage2"]),
            accumulation=int(known["accumulation"]), seed=int(known["seed"]))
        cfg.validate()
        return cfg


@dataclass
class TrainExample:
    """One image with its segmentation and per-item prompts."""
    image: np.ndarray
    mask: SegmentationMap
    prompts: List[ItemPrompt]

    def assignment(self, patch: int) -> Assignment:
        return assignment_from_mask(self.mask, patch)


@dataclass
class FinetuneJob:
    projects: List[str]
    config: FinetuneConfig
    status: str = "queued"
    trace: List[Tuple[int, float]] = field(default_factory=list)
    error: str = ""

    def advance(self, new_status: str) -> None:
        if new_status not in JOB_STATUSES:
            raise ConfigError(f"unknown job status {new_status!r}")
        if JOB_STATUSES.index(new_status) < JOB_STATUSES.index(self.status):
            raise StateError(
                f"job status cannot move back from {self.status!r} to {new_status!r}")
        self.status = new_status


def write_loss_trace(path: str, trace: Sequence[Tuple[int, float]]) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as f:
        f.write("step,loss\n")
        for step, loss in trace:
            f.write(f"{step},{loss!r}\n")
    os.replace(tmp, path)


def read_loss_trace(path: str) -> List[Tuple[int, float]]:
    out = []
    with open(path, "r", encoding="utf-8") as f:
        header = f.readline()
        if header.strip() != "step,loss":
            raise ConfigError(f"{path} is not a loss trace file")
        for line in f:
            step, loss = line.strip().split(",")
            out.append((int(step), float(loss)))
    return out


def _normalize_examples(examples) -> List[TrainExample]:
    if isinstance(examples, TrainExample):
        return [examples]
    out = list(examples)
    if not 1 <= len(out) <= 2:
        raise ConfigError(f"finetuning takes 1 or 2 examples, got {len(out)}")
    return out


def _run_stage(ckpt: Checkpoint, examples: List[TrainExample], *, steps: int,
               lr: float, accumulation: int, seed: int, stream_base: int,
               scope: str) -> List[Tuple[int, float]]:
    params = select_params(ckpt, scope)
    if not params:
        raise StateError("no injected tokens: inject item tokens before stage 1")
    ckpt.set_requires_grad(params)
    adam = tc.AdamState(params)
    sched = make_schedule(ckpt.schedule_T, ckpt.schedule_curve)
    patch = ckpt.config.patch
    assigns = [ex.assignment(patch) for ex in examples]

    trace: List[Tuple[int, float]] = []
    smoothed: Optional[float] = None
    alpha = 2.0 / (EMA_WINDOW + 1)
    for step in range(steps):
        ex, assign = examples[step % len(examples)], assigns[step % len(examples)]
        rng = noise_rng(seed, stream_base + step)
        try:
            with tc.tape_scope():
                total = None
                for _ in range(accumulation):
                    embs = [encode_prompt(ckpt.vocab, ckpt.encoder, p)
                            for p in ex.prompts]
                    loss = training_loss(ckpt, ex.image, embs, assign, sched, rng)
                    total = loss if total is None else tc.add(total, loss)
                total = tc.scale(total, 1.0 / accumulation)
                tc.backprop(total)
        except DivergenceError as e:
            raise DivergenceError(f"finetuning step {step}: {e}") from None
        tc.adam_step(params, adam, lr)
        for p in params:
            p.grad = None
        raw = total.item()
        smoothed = raw if smoothed is None else alpha * raw + (1 - alpha) * smoothed
        if not math.isfinite(smoothed):
            raise DivergenceError(f"finetuning step {step}: smoothed loss diverged")
        trace.append((step, smoothed))
    return trace


def finetune_stage1(ckpt: Checkpoint, examples, cfg: FinetuneConfig,
                    trace_out: Optional[list] = None) -> Checkpoint:
    """Optimize the injected embedding rows against the example image(s)."""
    cfg.validate()
    examples = _normalize_examples(examples)
    if ckpt.vocab.injected_rows.shape[0] == 0:
        raise StateError("no injected tokens: inject item tokens before stage 1")
    for i, ex in enumerate(examples):
        if not any(p.kind == "learned" for p in ex.prompts):
            raise StateError(
                f"example {i} has no learned prompts; stage 1 would be a no-op")
    trace = _run_stage(ckpt, examples, steps=cfg.stage1_steps, lr=cfg.lr_stage1,
                       accumulation=cfg.accumulation, seed=cfg.seed,
                       stream_base=STAGE1_STREAM, scope="embeddings_injected")
    if trace_out is not None:
        trace_out.extend(trace)
    ckpt.tag = "stage1"
    return ckpt


def finetune_stage2(ckpt: Checkpoint, examples, cfg: FinetuneConfig,
                    trace_out: Optional[list] = None) -> Checkpoint:
    """Optimize the cross-attention projections; requires stage 1 first."""
    cfg.validate()
    examples = _normalize_examples(examples)
    if ckpt.tag not in ("stage1", "stage2"):
        raise OrderingError(
            f"stage 2 requires a stage-1 checkpoint, got tag {ckpt.tag!r}")
    trace = _run_stage(ckpt, examples, steps=cfg.stage2_steps, lr=cfg.lr_stage2,
                       accumulation=cfg.accumulation, seed=cfg.seed,
                       stream_base=STAGE2_STREAM, scope="cross_attention")
    if trace_out is not None:
        trace_out.extend(trace)
    ckpt.tag = "stage2"
    return ckpt


def finetune_pair(ckpt: Checkpoint, target: TrainExample, reference: TrainExample,
                  cfg: FinetuneConfig, trace_out: Optional[list] = None) -> Checkpoint:
    """Both stages over two images, steps strictly alternating target-first."""
    tgt_ids = {t for p in target.prompts if p.kind == "learned"
               for t in p.token_ids}
    ref_ids = {t for p in reference.prompts if p.kind == "learned"
               for t in p.token_ids}
    shared = tgt_ids & ref_ids
    if shared:
        raise InjectionError(
            f"target and reference share learned token ids {sorted(shared)}")
    t1: List[Tuple[int, float]] = []
    t2: List[Tuple[int, float]] = []
    finetune_stage1(ckpt, [target, reference], cfg, t1)
    finetune_stage2(ckpt, [target, reference], cfg, t2)
    if trace_out is not None:
        trace_out.extend(t1)
        trace_out.extend((cfg.stage1_steps + s, l) for s, l in t2)
    return ckpt
