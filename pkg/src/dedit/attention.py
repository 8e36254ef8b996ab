"""Cross-attention over prompt embeddings, full and per-item grouped forms.

The grouped form routes each latent position to exactly one item's
prompt: positions are gathered per item, attended against that item's
embedding only, and scattered back. Projection weights are shared
across items within a layer, so grouping changes the attention support,
never the parameterization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from . import tensor as tc
from .errors import AssignmentError, ConfigError, ContractError, DimensionError, EmptyPromptError
from .text import PromptEmbedding


@dataclass
class AttentionWeights:
    w_q: tc.Tensor  # [D_z x D]
    w_k: tc.Tensor  # [D_c x D]
    w_v: tc.Tensor  # [D_c x D]
    w_out: tc.Tensor  # [D x D_z]

    def params(self, prefix: str) -> dict:
        return {f"{prefix}.w_q": self.w_q, f"{prefix}.w_k": self.w_k,
                f"{prefix}.w_v": self.w_v, f"{prefix}.w_out": self.w_out}


def init_attention_weights(d_z: int, d_ctx: int, d_proj: int,
                           rng: np.random.Generator) -> AttentionWeights:
    def w(rows, cols):
        return tc.Tensor((rng.standard_normal((rows, cols)) / math.sqrt(rows))
                         .astype(np.float32))
    return AttentionWeights(w_q=w(d_z, d_proj), w_k=w(d_ctx, d_proj),
                            w_v=w(d_ctx, d_proj), w_out=w(d_proj, d_z))


class Assignment:
    """One item label per latent position; labels partition the positions."""

    def __init__(self, labels, n_items: int):
        arr = np.asarray(labels, dtype=np.int64).reshape(-1)
        if n_items < 1:
            raise AssignmentError(f"n_items must be >= 1, got {n_items}")
        if arr.size and (arr.min() < 0 or arr.max() >= n_items):
            raise AssignmentError(
                f"labels must lie in [0, {n_items}), got range "
                f"[{arr.min()}, {arr.max()}]")
        self.labels = arr
        self.n_items = n_items

    def positions(self, item: int) -> np.ndarray:
        return np.where(self.labels == item)[0]

    def empty_items(self) -> List[int]:
        present = set(np.unique(self.labels).tolist())
        return [i for i in range(self.n_items) if i not in present]


def _attend(z_rows: tc.Tensor, ctx: tc.Tensor, wts: AttentionWeights) -> tc.Tensor:
    d_proj = wts.w_q.shape[1]
    q = tc.matmul(z_rows, wts.w_q)
    k = tc.matmul(ctx, wts.w_k)
    v = tc.matmul(ctx, wts.w_v)
    att = tc.row_softmax(tc.scale(tc.matmul(q, tc.transpose(k)), 1.0 / math.sqrt(d_proj)))
    return tc.matmul(tc.matmul(att, v), wts.w_out)


def full_cross_attention(z: tc.Tensor, c: tc.Tensor, wts: AttentionWeights) -> tc.Tensor:
    if c.shape[0] == 0:
        raise EmptyPromptError("cross-attention against an empty prompt")
    if z.shape[1] != wts.w_q.shape[0]:
        raise DimensionError(f"latent width {z.shape[1]} vs w_q rows {wts.w_q.shape[0]}")
    if c.shape[1] != wts.w_k.shape[0]:
        raise DimensionError(f"context width {c.shape[1]} vs w_k rows {wts.w_k.shape[0]}")
    return _attend(z, c, wts)


def grouped_cross_attention(z: tc.Tensor, prompts: Sequence[PromptEmbedding],
                            assign: Assignment, wts: AttentionWeights) -> tc.Tensor:
    """Per-item attention scattered back over disjoint position sets.

    Rows labeled i see only prompts[i]; an item without positions is
    skipped and its prompt has no influence on the output.
    """
    n = z.shape[0]
    if assign.labels.size != n:
        raise AssignmentError(f"{assign.labels.size} labels for {n} latent positions")
    if len(prompts) != assign.n_items:
        raise ContractError(f"{len(prompts)} prompts for {assign.n_items} items")
    groups = []
    for i in range(assign.n_items):
        pos = assign.positions(i)
        if pos.size == 0:
            continue
        ctx = prompts[i].values
        if ctx.shape[0] == 0:
            raise EmptyPromptError(f"item {i} has an empty prompt embedding")
        rows = tc.gather_rows(z, pos.tolist())
        groups.append((pos.tolist(), _attend(rows, ctx, wts)))
    return tc.assemble_rows(groups, n)


def assignment_from_mask(mask, patch: int) -> Assignment:
    """Patch-level item labels by majority vote; ties go to the smaller id."""
    labels = np.asarray(getattr(mask, "labels", mask), dtype=np.int64)
    if labels.ndim != 2:
        raise ConfigError(f"mask must be 2-D, got shape {labels.shape}")
    h, w = labels.shape
    if patch < 1 or h % patch or w % patch:
        raise ConfigError(f"mask {h}x{w} not divisible into {patch}x{patch} patches")
    n_items = int(getattr(mask, "n_items", labels.max() + 1))
    tiles = labels.reshape(h // patch, patch, w // patch, patch).transpose(0, 2, 1, 3)
    tiles = tiles.reshape(-1, patch * patch)
    counts = np.zeros((tiles.shape[0], n_items), dtype=np.int64)
    for i in range(n_items):
        counts[:, i] = (tiles == i).sum(axis=1)
    votes = counts.argmax(axis=1)  # argmax takes the first max: smallest id wins ties
    return Assignment(votes, n_items)
