"""Prompt-conditioned image sampling on top of the bare sampler loops.

Builds the conditional and unconditional model closures for a
checkpoint, runs the requested sampler, and returns a [-1,1] image.
The unconditional branch swaps every item prompt for a same-width
null-token encoding, so guidance compares like against like.
"""

from __future__ import annotations

from typing import List, Optional, Sequence

import numpy as np

from . import tensor as tc
from .attention import Assignment
from .errors import DimensionError
from .model import Checkpoint, denoise_forward
from .schedule import NoiseSchedule, SampleRun, ddim_sample, euler_sample, make_schedule
from .text import ItemPrompt, PromptEmbedding, encode_prompt, null_embedding


def schedule_for(ckpt: Checkpoint) -> NoiseSchedule:
    return make_schedule(ckpt.schedule_T, ckpt.schedule_curve)


def sample_from_embeddings(ckpt: Checkpoint, embeddings: Sequence[PromptEmbedding],
                           assign: Assignment, run: SampleRun,
                           sched: Optional[NoiseSchedule] = None) -> np.ndarray:
    if sched is None:
        sched = schedule_for(ckpt)
    if len(embeddings) != assign.n_items:
        raise DimensionError(
            f"{len(embeddings)} prompts for {assign.n_items} items")
    cfg = ckpt.config
    shape = (cfg.image_size, cfg.image_size, cfg.channels)
    with tc.no_grad():
        nulls = [null_embedding(ckpt.vocab, ckpt.encoder, e.width) for e in embeddings]

        def cond(z, t):
            return denoise_forward(ckpt, z, t, embeddings, assign).values

        def uncond(z, t):
            return denoise_forward(ckpt, z, t, nulls, assign).values

        sampler = euler_sample if run.sampler == "euler" else ddim_sample
        return sampler(cond, uncond, run, sched, shape)


def sample_image(ckpt: Checkpoint, prompts: Sequence[ItemPrompt], assign: Assignment,
                 run: SampleRun, sched: Optional[NoiseSchedule] = None) -> np.ndarray:
    with tc.no_grad():
        embs: List[PromptEmbedding] = [
            encode_prompt(ckpt.vocab, ckpt.encoder, p) for p in prompts]
    return sample_from_embeddings(ckpt, embs, assign, run, sched)


def words_prompt(ckpt: Checkpoint, item_id: int, text: str) -> ItemPrompt:
    """Base-vocabulary prompt for an item from whitespace-separated words."""
    return ItemPrompt(item_id=item_id,
                      token_ids=ckpt.vocab.ids_for_words(text), kind="text")
