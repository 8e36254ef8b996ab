"""Vocabulary, item-token injection, the toy text encoder, and embedding math.

The embedding table is stored in two physical pieces: the base rows,
which are frozen after pretraining, and the injected per-item rows,
which are the only thing stage-1 finetuning may touch. Splitting the
storage makes the base-row immutability guarantee structural instead
of a training-loop promise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import tensor as tc
from .errors import ConfigError, ContractError, DimensionError, StateError, VocabularyError
from .schedule import noise_rng

NULL_WORD = "<null>"
INJECT_STREAM = 0x494E4A  # distinct noise stream tag for token injection


@dataclass
class ItemPrompt:
    item_id: int
    token_ids: List[int]
    kind: str  # "learned", "text", or "mixed" (learned tokens plus words)

    def __post_init__(self):
        if len(self.token_ids) < 1:
            raise ConfigError("prompt needs at least one token")
        if self.kind not in ("learned", "text", "mixed"):
            raise ConfigError(f"unknown prompt kind {self.kind!r}")


@dataclass
class PromptEmbedding:
    values: tc.Tensor  # [width x dim]
    source_item: int

    @property
    def width(self) -> int:
        return self.values.shape[0]


class Vocabulary:
    """Base word list plus appended per-item learned tokens."""

    def __init__(self, words: Sequence[str], dim: int, seed: int = 0):
        words = list(words)
        if NULL_WORD not in words:
            words.append(NULL_WORD)
        if len(set(words)) != len(words):
            raise ConfigError("duplicate words in vocabulary")
        self.words = words
        self.word_to_id = {w: i for i, w in enumerate(words)}
        self.dim = dim
        rng = noise_rng(seed, 0)
        init = (rng.standard_normal((len(words), dim)) / math.sqrt(dim)).astype(np.float32)
        self.base_rows = tc.Tensor(init)
        self.injected_rows = tc.Tensor(np.zeros((0, dim), dtype=np.float32))
        self.injected_items: List[tuple] = []  # (token_id, global item ordinal)
        self.injection_owners: Dict[str, tuple] = {}  # owner -> (first ordinal, n_items)

    @property
    def base_size(self) -> int:
        return self.base_rows.shape[0]

    @property
    def total_size(self) -> int:
        return self.base_size + self.injected_rows.shape[0]

    @property
    def null_id(self) -> int:
        return self.word_to_id[NULL_WORD]

    def ids_for_words(self, text: str) -> List[int]:
        out = []
        for w in text.split():
            if w not in self.word_to_id:
                raise VocabularyError(f"unknown word {w!r}")
            out.append(self.word_to_id[w])
        if not out:
            raise VocabularyError("empty prompt text")
        return out

    def validate_prompt(self, prompt: ItemPrompt) -> None:
        v = self.base_size
        for i in prompt.token_ids:
            if not 0 <= i < self.total_size:
                raise VocabularyError(f"token id {i} outside table of {self.total_size} rows")
            if prompt.kind == "learned" and i < v:
                raise VocabularyError(f"learned prompt holds base id {i}")
            if prompt.kind == "text" and i >= v:
                raise VocabularyError(f"text prompt holds injected id {i}")
        # "mixed" may hold both, so only the range check applies


def inject_item_tokens(vocab: Vocabulary, n_items: int, tokens_per_item: int,
                       seed: int, owner: str = "default") -> List[ItemPrompt]:
    """Append n_items * M fresh rows drawn from the base table's statistics.

    Per-dimension mean and standard deviation come from the existing base
    rows, so a degenerate all-zero table yields all-zero tokens. Several
    owners (target and reference projects) may inject into one vocabulary;
    their id ranges are appended contiguously in call order, and a second
    injection by the same owner is refused.
    """
    if tokens_per_item < 1:
        raise ConfigError(f"tokens_per_item must be >= 1, got {tokens_per_item}")
    if n_items < 1:
        raise ConfigError(f"n_items must be >= 1, got {n_items}")
    if owner in vocab.injection_owners:
        raise StateError(f"item tokens were already injected for {owner!r}")

    base = vocab.base_rows.values.astype(np.float64)
    mu = base.mean(axis=0)
    sigma = base.std(axis=0)
    rng = noise_rng(seed, INJECT_STREAM + len(vocab.injection_owners))
    count = n_items * tokens_per_item
    rows = (mu + sigma * rng.standard_normal((count, vocab.dim))).astype(np.float32)

    first_id = vocab.total_size
    first_item = sum(n for _, n in vocab.injection_owners.values())
    vocab.injected_rows = tc.Tensor(
        np.concatenate([vocab.injected_rows.values, rows], axis=0))
    prompts = []
    for i in range(n_items):
        ids = [first_id + i * tokens_per_item + j for j in range(tokens_per_item)]
        for tid in ids:
            vocab.injected_items.append((tid, first_item + i))
        prompts.append(ItemPrompt(item_id=i, token_ids=ids, kind="learned"))
    vocab.injection_owners[owner] = (first_item, n_items)
    return prompts


def embed_ids(vocab: Vocabulary, ids: Sequence[int]) -> tc.Tensor:
    """Gather rows for a mixed base/injected id list, gradients intact."""
    v = vocab.base_size
    for i in ids:
        if not 0 <= i < vocab.total_size:
            raise VocabularyError(f"token id {i} outside table of {vocab.total_size} rows")
    base_pos = [k for k, i in enumerate(ids) if i < v]
    inj_pos = [k for k, i in enumerate(ids) if i >= v]
    groups = []
    if base_pos:
        groups.append((base_pos, tc.gather_rows(vocab.base_rows, [ids[k] for k in base_pos])))
    if inj_pos:
        groups.append((inj_pos, tc.gather_rows(vocab.injected_rows,
                                               [ids[k] - v for k in inj_pos])))
    if len(groups) == 1:
        return groups[0][1]
    return tc.assemble_rows(groups, len(ids))


class EncoderBlock:
    """Pre-norm single-head self-attention with a residual connection.

    Zeroing w_out turns the block into the identity map, which the tests
    use to isolate the gather + positional stage.
    """

    def __init__(self, dim: int, rng: np.random.Generator):
        s = 1.0 / math.sqrt(dim)
        def w():
            return tc.Tensor((rng.standard_normal((dim, dim)) * s).astype(np.float32))
        self.wq, self.wk, self.wv, self.wo = w(), w(), w(), w()
        self.ln_gain = tc.Tensor(np.ones(dim, dtype=np.float32))
        self.ln_bias = tc.Tensor(np.zeros(dim, dtype=np.float32))

    def apply(self, x: tc.Tensor) -> tc.Tensor:
        h = tc.layer_norm(x, self.ln_gain, self.ln_bias)
        q = tc.matmul(h, self.wq)
        k = tc.matmul(h, self.wk)
        vv = tc.matmul(h, self.wv)
        logits = tc.scale(tc.matmul(q, tc.transpose(k)), 1.0 / math.sqrt(q.shape[1]))
        att = tc.matmul(tc.row_softmax(logits), vv)
        return tc.add(x, tc.matmul(att, self.wo))

    def params(self, prefix: str) -> Dict[str, tc.Tensor]:
        return {f"{prefix}.wq": self.wq, f"{prefix}.wk": self.wk,
                f"{prefix}.wv": self.wv, f"{prefix}.wo": self.wo,
                f"{prefix}.ln_gain": self.ln_gain, f"{prefix}.ln_bias": self.ln_bias}


class TextEncoder:
    """Positional vectors plus two self-attention blocks over the token rows."""

    MAX_LEN = 16

    def __init__(self, dim: int, seed: int = 0):
        self.dim = dim
        rng = noise_rng(seed, 1)
        self.positional = tc.Tensor(
            (rng.standard_normal((self.MAX_LEN, dim)) * 0.02).astype(np.float32))
        self.blocks = [EncoderBlock(dim, rng) for _ in range(2)]

    def params(self) -> Dict[str, tc.Tensor]:
        out = {"enc.positional": self.positional}
        for b, blk in enumerate(self.blocks):
            out.update(blk.params(f"enc.block{b}"))
        return out


def encode_prompt(vocab: Vocabulary, enc: TextEncoder, prompt: ItemPrompt) -> PromptEmbedding:
    """Run one item's tokens through the encoder, isolated from all others."""
    vocab.validate_prompt(prompt)
    n = len(prompt.token_ids)
    if n > enc.MAX_LEN:
        raise ConfigError(f"prompt of {n} tokens exceeds encoder window {enc.MAX_LEN}")
    x = embed_ids(vocab, prompt.token_ids)
    pos = tc.gather_rows(enc.positional, list(range(n)))
    x = tc.add(x, pos)
    for blk in enc.blocks:
        x = blk.apply(x)
    return PromptEmbedding(values=x, source_item=prompt.item_id)


def null_embedding(vocab: Vocabulary, enc: TextEncoder, width: int) -> PromptEmbedding:
    """Encoding of the reserved null token repeated `width` times; the
    unconditional branch for guidance."""
    if width < 1:
        raise ContractError(f"null embedding width must be >= 1, got {width}")
    prompt = ItemPrompt(item_id=-1, token_ids=[vocab.null_id] * width, kind="text")
    emb = encode_prompt(vocab, enc, prompt)
    emb.source_item = -1
    return emb


def interpolate_embeddings(c_orig: PromptEmbedding, c_guide: PromptEmbedding,
                           alpha: float) -> PromptEmbedding:
    if c_orig.values.shape != c_guide.values.shape:
        raise DimensionError(
            f"embedding shapes {c_orig.values.shape} and {c_guide.values.shape} differ; "
            f"pad the shorter prompt to a common width with null-token encodings")
    if not 0.0 <= alpha <= 1.0:
        raise ContractError(f"alpha must lie in [0, 1], got {alpha}")
    if alpha == 0.0:
        vals = c_orig.values.values.copy()
    elif alpha == 1.0:
        vals = c_guide.values.values.copy()
    else:
        vals = alpha * c_guide.values.values + (1.0 - alpha) * c_orig.values.values
    return PromptEmbedding(values=tc.Tensor(vals), source_item=c_orig.source_item)


# ---- manifest serialization ------------------------------------------------

ITEM_MARKER_PREFIX = "<item:"


def prompt_to_string(vocab: Vocabulary, prompt: ItemPrompt) -> str:
    if prompt.kind == "learned":
        return f"{ITEM_MARKER_PREFIX}{prompt.item_id}>"
    v = vocab.base_size
    parts = []
    in_run = False
    for i in prompt.token_ids:
        if i >= v:
            # a learned run renders as one marker; mixed prompts hold the
            # item's own tokens ahead of the words, so item_id labels it
            if not in_run:
                parts.append(f"{ITEM_MARKER_PREFIX}{prompt.item_id}>")
                in_run = True
        else:
            parts.append(vocab.words[i])
            in_run = False
    return " ".join(parts)


def string_to_prompt(vocab: Vocabulary, s: str, item_id: int,
                     learned_tokens: Optional[Dict[int, List[int]]] = None) -> ItemPrompt:
    """Parse a manifest prompt string; markers resolve through the
    project's item -> token-id table. Markers and words may mix."""
    ids: List[int] = []
    seen_learned = seen_word = False
    for tok in s.split():
        if tok.startswith(ITEM_MARKER_PREFIX) and tok.endswith(">"):
            try:
                ref = int(tok[len(ITEM_MARKER_PREFIX):-1])
            except ValueError:
                raise VocabularyError(f"malformed item marker {tok!r}") from None
            if learned_tokens is None or ref not in learned_tokens:
                raise VocabularyError(f"no learned tokens recorded for item {ref}")
            ids.extend(learned_tokens[ref])
            seen_learned = True
        else:
            ids.extend(vocab.ids_for_words(tok))
            seen_word = True
    if not ids:
        raise VocabularyError("empty prompt text")
    if seen_learned and seen_word:
        kind = "mixed"
    elif seen_learned:
        kind = "learned"
    else:
        kind = "text"
    return ItemPrompt(item_id=item_id, token_ids=ids, kind=kind)
