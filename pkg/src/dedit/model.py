"""The patch-transformer denoiser and its training loss.

Blocks alternate self-attention over patch tokens, per-item grouped
cross-attention into the prompt embeddings, and an MLP, all pre-norm
residual. The network predicts the noise added to the input image.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import tensor as tc
from .attention import Assignment, AttentionWeights, grouped_cross_attention, init_attention_weights
from .errors import ConfigError, ContractError, DimensionError, DivergenceError
from .schedule import NoiseSchedule, add_noise, noise_rng
from .text import PromptEmbedding, TextEncoder, Vocabulary

SCOPES = ("embeddings_injected", "cross_attention", "all")
CHECKPOINT_VERSION = 1


@dataclass
class DenoiserConfig:
    image_size: int = 32
    patch: int = 4
    width: int = 128
    blocks: int = 4
    time_embed_dim: int = 128
    context_dim: int = 128
    channels: int = 3

    def validate(self) -> None:
        dims = (self.image_size, self.patch, self.width, self.blocks,
                self.time_embed_dim, self.context_dim, self.channels)
        if any(d < 1 for d in dims):
            raise ConfigError(f"all config dims must be positive: {self}")
        if self.image_size % self.patch:
            raise ConfigError(
                f"patch {self.patch} does not divide image size {self.image_size}")
        if self.time_embed_dim % 2:
            raise ConfigError("time_embed_dim must be even for sin/cos pairs")

    @property
    def patches_per_side(self) -> int:
        return self.image_size // self.patch

    @property
    def n_patches(self) -> int:
        return self.patches_per_side ** 2

    @property
    def patch_dim(self) -> int:
        return self.patch * self.patch * self.channels

    def to_array(self) -> np.ndarray:
        return np.array([self.image_size, self.patch, self.width, self.blocks,
                         self.time_embed_dim, self.context_dim, self.channels],
                        dtype=np.float32)

    @staticmethod
    def from_array(arr) -> "DenoiserConfig":
        vals = [int(v) for v in np.asarray(arr).ravel()]
        if len(vals) != 7:
            raise ConfigError(f"config array must hold 7 fields, got {len(vals)}")
        cfg = DenoiserConfig(*vals)
        cfg.validate()
        return cfg


def patchify(img: np.ndarray, patch: int) -> np.ndarray:
    """[H, W, C] image -> [n_patches, patch*patch*C] rows, row-major tiles."""
    h, w, c = img.shape
    g = img.reshape(h // patch, patch, w // patch, patch, c)
    return np.ascontiguousarray(g.transpose(0, 2, 1, 3, 4)).reshape(-1, patch * patch * c)


def unpatchify(rows: np.ndarray, image_size: int, patch: int, channels: int) -> np.ndarray:
    side = image_size // patch
    g = rows.reshape(side, side, patch, patch, channels).transpose(0, 2, 1, 3, 4)
    return np.ascontiguousarray(g).reshape(image_size, image_size, channels)


def time_embedding(t: int, dim: int) -> np.ndarray:
    """Sinusoidal features of the schedule index, geometric frequency ladder."""
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half, dtype=np.float64) / half)
    angles = t * freqs
    return np.concatenate([np.sin(angles), np.cos(angles)]).astype(np.float32)


class _SelfAttention:
    def __init__(self, width: int, rng: np.random.Generator):
        s = 1.0 / math.sqrt(width)
        def w():
            return tc.Tensor((rng.standard_normal((width, width)) * s).astype(np.float32))
        self.wq, self.wk, self.wv, self.wo = w(), w(), w(), w()

    def apply(self, x: tc.Tensor) -> tc.Tensor:
        d = self.wq.shape[1]
        q = tc.matmul(x, self.wq)
        k = tc.matmul(x, self.wk)
        v = tc.matmul(x, self.wv)
        att = tc.row_softmax(tc.scale(tc.matmul(q, tc.transpose(k)), 1.0 / math.sqrt(d)))
        return tc.matmul(tc.matmul(att, v), self.wo)

    def params(self, prefix: str) -> Dict[str, tc.Tensor]:
        return {f"{prefix}.wq": self.wq, f"{prefix}.wk": self.wk,
                f"{prefix}.wv": self.wv, f"{prefix}.wo": self.wo}


class _Mlp:
    def __init__(self, width: int, rng: np.random.Generator):
        hidden = 4 * width
        self.w1 = tc.Tensor((rng.standard_normal((width, hidden)) / math.sqrt(width))
                            .astype(np.float32))
        self.b1 = tc.Tensor(np.zeros(hidden, dtype=np.float32))
        self.w2 = tc.Tensor((rng.standard_normal((hidden, width)) / math.sqrt(hidden))
                            .astype(np.float32))
        self.b2 = tc.Tensor(np.zeros(width, dtype=np.float32))

    def apply(self, x: tc.Tensor) -> tc.Tensor:
        h = tc.gelu(tc.add(tc.matmul(x, self.w1), self.b1))
        return tc.add(tc.matmul(h, self.w2), self.b2)

    def params(self, prefix: str) -> Dict[str, tc.Tensor]:
        return {f"{prefix}.w1": self.w1, f"{prefix}.b1": self.b1,
                f"{prefix}.w2": self.w2, f"{prefix}.b2": self.b2}


def _norm_params(width: int) -> tuple:
    return (tc.Tensor(np.ones(width, dtype=np.float32)),
            tc.Tensor(np.zeros(width, dtype=np.float32)))


class DenoiserBlock:
    def __init__(self, cfg: DenoiserConfig, rng: np.random.Generator):
        w = cfg.width
        self.ln1_g, self.ln1_b = _norm_params(w)
        self.self_attn = _SelfAttention(w, rng)
        self.ln2_g, self.ln2_b = _norm_params(w)
        self.cross = init_attention_weights(w, cfg.context_dim, w, rng)
        self.ln3_g, self.ln3_b = _norm_params(w)
        self.mlp = _Mlp(w, rng)

    def apply(self, h: tc.Tensor, prompts: Sequence[PromptEmbedding],
              assign: Assignment) -> tc.Tensor:
        h = tc.add(h, self.self_attn.apply(tc.layer_norm(h, self.ln1_g, self.ln1_b)))
        normed = tc.layer_norm(h, self.ln2_g, self.ln2_b)
        h = tc.add(h, grouped_cross_attention(normed, prompts, assign, self.cross))
        return tc.add(h, self.mlp.apply(tc.layer_norm(h, self.ln3_g, self.ln3_b)))

    def params(self, prefix: str) -> Dict[str, tc.Tensor]:
        out = {f"{prefix}.ln1_g": self.ln1_g, f"{prefix}.ln1_b": self.ln1_b,
               f"{prefix}.ln2_g": self.ln2_g, f"{prefix}.ln2_b": self.ln2_b,
               f"{prefix}.ln3_g": self.ln3_g, f"{prefix}.ln3_b": self.ln3_b}
        out.update(self.self_attn.params(f"{prefix}.self"))
        out.update(self.cross.params(f"{prefix}.cross"))
        out.update(self.mlp.params(f"{prefix}.mlp"))
        return out


class Denoiser:
    def __init__(self, cfg: DenoiserConfig, rng: np.random.Generator):
        cfg.validate()
        self.cfg = cfg
        pd, w = cfg.patch_dim, cfg.width
        self.patch_w = tc.Tensor((rng.standard_normal((pd, w)) / math.sqrt(pd))
                                 .astype(np.float32))
        self.patch_b = tc.Tensor(np.zeros(w, dtype=np.float32))
        self.time_w1 = tc.Tensor((rng.standard_normal((cfg.time_embed_dim, w))
                                  / math.sqrt(cfg.time_embed_dim)).astype(np.float32))
        self.time_b1 = tc.Tensor(np.zeros(w, dtype=np.float32))
        self.time_w2 = tc.Tensor((rng.standard_normal((w, w)) / math.sqrt(w))
                                 .astype(np.float32))
        self.time_b2 = tc.Tensor(np.zeros(w, dtype=np.float32))
        self.blocks = [DenoiserBlock(cfg, rng) for _ in range(cfg.blocks)]
        self.ln_f_g, self.ln_f_b = _norm_params(w)
        self.out_w = tc.Tensor((rng.standard_normal((w, pd)) / math.sqrt(w))
                               .astype(np.float32))
        self.out_b = tc.Tensor(np.zeros(pd, dtype=np.float32))

    def params(self) -> Dict[str, tc.Tensor]:
        out = {"den.patch_w": self.patch_w, "den.patch_b": self.patch_b,
               "den.time_w1": self.time_w1, "den.time_b1": self.time_b1,
               "den.time_w2": self.time_w2, "den.time_b2": self.time_b2,
               "den.ln_f_g": self.ln_f_g, "den.ln_f_b": self.ln_f_b,
               "den.out_w": self.out_w, "den.out_b": self.out_b}
        for i, blk in enumerate(self.blocks):
            out.update(blk.params(f"den.block{i}"))
        return out


TAGS = ("fresh", "pretrained", "stage1", "stage2")
CURVES = ("linear", "cosine")


class Checkpoint:
    """Model weights, text encoder, vocabulary, and config as one unit.

    The tag records how far through the training pipeline the weights
    have come; downstream stages check it instead of trusting callers.
    """

    def __init__(self, config: DenoiserConfig, vocab: Vocabulary,
                 encoder: TextEncoder, denoiser: Denoiser):
        self.version = CHECKPOINT_VERSION
        self.config = config
        self.vocab = vocab
        self.encoder = encoder
        self.denoiser = denoiser
        self.tag = "fresh"
        self.schedule_T = 100
        self.schedule_curve = "cosine"

    def params(self) -> Dict[str, tc.Tensor]:
        out = {"vocab.base_rows": self.vocab.base_rows,
               "vocab.injected_rows": self.vocab.injected_rows}
        out.update(self.encoder.params())
        out.update(self.denoiser.params())
        return out

    def param_count(self) -> int:
        return sum(t.size for t in self.params().values())

    def set_requires_grad(self, tensors: Sequence[tc.Tensor]) -> None:
        chosen = {id(t) for t in tensors}
        for t in self.params().values():
            t.requires_grad = id(t) in chosen
            t.grad = None


def init_model(config: DenoiserConfig, seed: int,
               vocab_words: Optional[Sequence[str]] = None) -> Checkpoint:
    """Fresh checkpoint; every weight drawn from the seeded stream with
    1/sqrt(fan_in) scaling."""
    config.validate()
    vocab = Vocabulary(vocab_words if vocab_words is not None else [],
                       dim=config.context_dim, seed=seed)
    encoder = TextEncoder(config.context_dim, seed=seed)
    denoiser = Denoiser(config, noise_rng(seed, 2))
    return Checkpoint(config, vocab, encoder, denoiser)


def denoise_forward(ckpt: Checkpoint, z_t, t: int, prompts: Sequence[PromptEmbedding],
                    assign: Assignment) -> tc.Tensor:
    """Predict the noise component of z_t; output shape equals input shape."""
    cfg = ckpt.config
    zv = z_t.values if isinstance(z_t, tc.Tensor) else np.asarray(z_t, dtype=np.float32)
    expect = (cfg.image_size, cfg.image_size, cfg.channels)
    if zv.shape != expect:
        raise DimensionError(f"denoiser input shape {zv.shape}, expected {expect}")
    if assign.labels.size != cfg.n_patches:
        raise DimensionError(
            f"assignment has {assign.labels.size} labels for {cfg.n_patches} patches")

    den = ckpt.denoiser
    x = tc.Tensor(patchify(zv, cfg.patch))
    h = tc.add(tc.matmul(x, den.patch_w), den.patch_b)

    te = tc.Tensor(time_embedding(t, cfg.time_embed_dim).reshape(1, -1))
    te = tc.gelu(tc.add(tc.matmul(te, den.time_w1), den.time_b1))
    te = tc.add(tc.matmul(te, den.time_w2), den.time_b2)
    h = tc.add(h, tc.reshape(te, (cfg.width,)))

    for blk in den.blocks:
        h = blk.apply(h, prompts, assign)

    h = tc.layer_norm(h, den.ln_f_g, den.ln_f_b)
    rows = tc.add(tc.matmul(h, den.out_w), den.out_b)

    side = cfg.patches_per_side
    g = tc.reshape(rows, (side, side, cfg.patch, cfg.patch, cfg.channels))
    g = tc.transpose(g, (0, 2, 1, 3, 4))
    return tc.reshape(g, expect)


def training_loss(ckpt: Checkpoint, x0: np.ndarray, prompts: Sequence[PromptEmbedding],
                  assign: Assignment, sched: NoiseSchedule,
                  rng: np.random.Generator) -> tc.Tensor:
    """One-draw estimate of the noise-prediction objective."""
    t = int(rng.integers(1, sched.T + 1))
    eps = rng.standard_normal(x0.shape).astype(np.float32)
    z_t = add_noise(np.asarray(x0, dtype=np.float32), t, eps, sched)
    eps_hat = denoise_forward(ckpt, z_t, t, prompts, assign)
    loss = tc.mean_square(tc.sub(tc.Tensor(eps), eps_hat))
    if not math.isfinite(loss.item()):
        raise DivergenceError("training loss is non-finite")
    return loss


def select_params(ckpt: Checkpoint, scope: str) -> List[tc.Tensor]:
    if scope not in SCOPES:
        raise ConfigError(f"unknown parameter scope {scope!r}")
    if scope == "embeddings_injected":
        if ckpt.vocab.injected_rows.shape[0] == 0:
            return []
        return [ckpt.vocab.injected_rows]
    if scope == "cross_attention":
        out = []
        for blk in ckpt.denoiser.blocks:
            out.extend([blk.cross.w_q, blk.cross.w_k, blk.cross.w_v, blk.cross.w_out])
        return out
    return list(ckpt.params().values())
