"""Shared heavy fixtures, disk-cached under tests/.cache.

The cache holds artifacts that are expensive to build (corpus, trained
checkpoints) keyed by the parameters that define them. Every artifact is
deterministic, so deleting .cache and rerunning reproduces it bit for
bit; a .meta.json sidecar records the original build wall time, which
the throughput-bound tests assert against instead of re-measuring cache
hits.
"""

import json
import os
import time

import pytest

import dedit.model as md
import dedit.scenes as sn
from dedit.checkpoint_io import load_checkpoint, save_checkpoint
from dedit.editing import ProjectState
from dedit.finetune import (FinetuneConfig, TrainExample, finetune_stage1,
                            finetune_stage2)
from dedit.text import ItemPrompt, inject_item_tokens

CACHE = os.path.join(os.path.dirname(__file__), ".cache")

CORPUS_SCENES = 5000
PRETRAIN_STEPS = 14000
PRETRAIN_SEED = 0


def _write_meta(path, **fields):
    with open(path + ".meta.json", "w", encoding="utf-8") as f:
        json.dump(fields, f, indent=1)


def read_meta(path):
    with open(path + ".meta.json", "r", encoding="utf-8") as f:
        return json.load(f)


def fixture_spec():
    """Hand-placed two-shape scene; not part of the generated corpus."""
    return sn.SceneSpec(background="black", items=[
        sn.ShapeSpec(shape="circle", color="red", center=(10.0, 10.0), scale=5.0),
        sn.ShapeSpec(shape="square", color="blue", center=(22.0, 22.0), scale=5.0),
    ])


@pytest.fixture(scope="session")
def corpus5000():
    root = os.path.join(CACHE, f"corpus{CORPUS_SCENES}")
    if not os.path.isdir(root):
        os.makedirs(CACHE, exist_ok=True)
        t0 = time.time()
        sn.generate_corpus(CORPUS_SCENES, 0, root)
        _write_meta(root, build_seconds=time.time() - t0, scenes=CORPUS_SCENES)
    return sn.load_corpus(root)


@pytest.fixture(scope="session")
def pretrained_path(corpus5000):
    """Base model trained on the big corpus; ~15 min to build once."""
    path = os.path.join(CACHE, f"pretrained-{PRETRAIN_STEPS}.ckpt")
    if not os.path.exists(path):
        t0 = time.time()
        ckpt = md.init_model(md.DenoiserConfig(), seed=PRETRAIN_SEED,
                             vocab_words=list(sn.BASE_WORDS))
        sn.pretrain(ckpt, corpus5000, steps=PRETRAIN_STEPS, seed=PRETRAIN_SEED)
        save_checkpoint(ckpt, path)
        _write_meta(path, build_seconds=time.time() - t0,
                    steps=PRETRAIN_STEPS, seed=PRETRAIN_SEED)
    return path


@pytest.fixture(scope="session")
def pretrained(pretrained_path):
    """Session-shared pretrained checkpoint. Tests must clone before
    mutating (injection included)."""
    return load_checkpoint(pretrained_path)


@pytest.fixture(scope="session")
def recon_path(pretrained_path):
    """Fixture scene finetuned with the default two-stage recipe."""
    path = os.path.join(CACHE, "recon-default.ckpt")
    if not os.path.exists(path):
        ckpt = load_checkpoint(pretrained_path)
        image, mask, _ = sn.render_scene(fixture_spec())
        prompts = inject_item_tokens(ckpt.vocab, mask.n_items, 2, seed=0,
                                     owner="fixture")
        example = TrainExample(image=image, mask=mask, prompts=prompts)
        cfg = FinetuneConfig()
        t0 = time.time()
        finetune_stage1(ckpt, example, cfg)
        finetune_stage2(ckpt, example, cfg)
        save_checkpoint(ckpt, path)
        _write_meta(path, build_seconds=time.time() - t0,
                    prompts=[{"item_id": p.item_id,
                              "token_ids": list(p.token_ids)}
                             for p in prompts])
    return path


class ReconFixture:
    def __init__(self, path):
        self.ckpt = load_checkpoint(path)
        self.meta = read_meta(path)
        self.image, self.mask, self.captions = sn.render_scene(fixture_spec())
        self.prompts = [ItemPrompt(item_id=p["item_id"],
                                   token_ids=list(p["token_ids"]),
                                   kind="learned")
                        for p in self.meta["prompts"]]

    def state(self):
        return ProjectState(ckpt=self.ckpt, mask=self.mask,
                            prompts=list(self.prompts))


@pytest.fixture(scope="session")
def recon(recon_path):
    return ReconFixture(recon_path)
