"""Edit engine: reconstruction, prompt edits, mask edits, removal,
and prompt interpolation over a finetuned checkpoint.

Every operation is non-destructive. It samples an image from modified
prompts or a modified segmentation, leaving the input state untouched,
and returns an EditResult carrying everything needed to iterate: the
effective segmentation, the effective prompt registry, the request echo,
and region metrics measured against a same-seed reconstruction so the
numbers isolate the edit itself from reconstruction error.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .attention import assignment_from_mask
from .errors import (ConfigError, EditError, StateError, VocabularyError)
from .masks import MaskEdit, SegmentationMap, apply_edit, remove_item_repartition
from .model import Checkpoint
from .sampling import sample_from_embeddings
from .scenes import RegionMetrics, region_metrics
from .schedule import SampleRun
from .text import (ITEM_MARKER_PREFIX, ItemPrompt, encode_prompt,
                   interpolate_embeddings)

SCHEMA_VERSION = 1
REQUEST_KINDS = ("reconstruct", "text", "image", "mask", "remove", "interpolate")


@dataclass
class ProjectState:
    """A finetuned checkpoint plus one image's segmentation and prompts.

    prompts is positional: prompts[i] belongs to item i. The engine never
    mutates a state; derived states come from EditResult.derived_state.
    """
    ckpt: Checkpoint
    mask: SegmentationMap
    prompts: List[ItemPrompt]

    def validate(self) -> None:
        if len(self.prompts) != self.mask.n_items:
            raise ConfigError(f"{len(self.prompts)} prompts for "
                              f"{self.mask.n_items} items")
        for i, p in enumerate(self.prompts):
            if p.item_id != i:
                raise ConfigError(f"prompt at slot {i} claims item {p.item_id}")

    def learned_table(self) -> Dict[int, List[int]]:
        return {i: list(p.token_ids) for i, p in enumerate(self.prompts)
                if p.kind == "learned"}


def _run_to_dict(run: SampleRun) -> dict:
    return {"seed": run.seed, "steps": run.steps,
            "guidance_scale": run.guidance_scale, "sampler": run.sampler}


def _run_from_dict(d: dict) -> SampleRun:
    return SampleRun(seed=int(d["seed"]), steps=int(d.get("steps", 20)),
                     guidance_scale=float(d.get("guidance_scale", 3.0)),
                     sampler=d.get("sampler", "euler"))


@dataclass
class EditRequest:
    kind: str
    run: SampleRun
    target_item: int = -1
    words: Optional[List[str]] = None
    combine: bool = False
    reference_project: str = ""
    reference_item: int = -1
    mask_edits: List[MaskEdit] = field(default_factory=list)
    alpha: float = 0.0
    guide_words: Optional[List[str]] = None

    def validate(self) -> None:
        if self.kind not in REQUEST_KINDS:
            raise ConfigError(f"unknown edit kind {self.kind!r}")
        allowed = {
            "reconstruct": set(),
            "text": {"target_item", "words", "combine"},
            "image": {"target_item", "reference_project", "reference_item"},
            "mask": {"target_item", "mask_edits"},
            "remove": {"target_item"},
            "interpolate": {"target_item", "alpha", "guide_words",
                            "reference_project", "reference_item"},
        }[self.kind]
        defaults = {"target_item": -1, "words": None, "combine": False,
                    "reference_project": "", "reference_item": -1,
                    "mask_edits": [], "alpha": 0.0, "guide_words": None}
        for name, default in defaults.items():
            if name not in allowed and getattr(self, name) != default:
                raise ConfigError(
                    f"{self.kind} request does not take {name}")
        if self.kind in ("text", "image", "remove", "interpolate"):
            if self.target_item < 0:
                raise ConfigError(f"{self.kind} request needs a target item")
        if self.kind == "text" and not self.words:
            raise ConfigError("text request needs a word list")
        if self.kind == "image" and self.reference_item < 0:
            raise ConfigError("image request needs a reference item")
        if self.kind == "interpolate":
            if not 0.0 <= self.alpha <= 1.0:
                raise ConfigError(f"alpha must lie in [0, 1], got {self.alpha}")
            has_words = bool(self.guide_words)
            has_ref = self.reference_item >= 0
            if has_words == has_ref:
                raise ConfigError(
                    "interpolate request needs exactly one guide: "
                    "guide_words or a reference item")
        for e in self.mask_edits:
            e.validate()

    def to_dict(self) -> dict:
        d = {"schema": SCHEMA_VERSION, "kind": self.kind,
             "run": _run_to_dict(self.run)}
        if self.target_item >= 0:
            d["target_item"] = self.target_item
        if self.kind == "text":
            d["words"] = list(self.words)
            d["combine"] = self.combine
        elif self.kind == "image":
            d["reference_project"] = self.reference_project
            d["reference_item"] = self.reference_item
        elif self.kind == "mask":
            d["mask_edits"] = [e.to_dict() for e in self.mask_edits]
        elif self.kind == "interpolate":
            d["alpha"] = self.alpha
            if self.guide_words:
                d["guide_words"] = list(self.guide_words)
            else:
                d["reference_project"] = self.reference_project
                d["reference_item"] = self.reference_item
        return d

    @staticmethod
    def from_dict(d: dict) -> "EditRequest":
        if int(d.get("schema", SCHEMA_VERSION)) != SCHEMA_VERSION:
            raise ConfigError(f"unsupported request schema {d.get('schema')!r}")
        if "run" not in d:
            raise ConfigError("edit request needs a run block")
        req = EditRequest(
            kind=d.get("kind", ""),
            run=_run_from_dict(d["run"]),
            target_item=int(d.get("target_item", -1)),
            words=list(d["words"]) if d.get("words") is not None else None,
            combine=bool(d.get("combine", False)),
            reference_project=d.get("reference_project", ""),
            reference_item=int(d.get("reference_item", -1)),
            mask_edits=[MaskEdit.from_dict(e) for e in d.get("mask_edits", [])],
            alpha=float(d.get("alpha", 0.0)),
            guide_words=list(d["guide_words"])
            if d.get("guide_words") is not None else None)
        req.validate()
        return req


@dataclass
class EditResult:
    image: np.ndarray
    mask: SegmentationMap
    prompts: List[ItemPrompt]
    request: EditRequest
    metrics: Optional[RegionMetrics]
    remap: Optional[Dict[int, int]] = None  # set by removal only

    def derived_state(self, ckpt: Checkpoint) -> ProjectState:
        """State to continue editing from, for iterative refinement."""
        return ProjectState(ckpt=ckpt, mask=self.mask, prompts=list(self.prompts))

    def to_dict(self) -> dict:
        # pixels and labels travel as binary image files next to this
        # manifest, not inline
        return {
            "schema": SCHEMA_VERSION,
            "request": self.request.to_dict(),
            "image_shape": list(self.image.shape),
            "n_items": self.mask.n_items,
            "prompts": [{"item_id": p.item_id, "token_ids": list(p.token_ids),
                         "kind": p.kind} for p in self.prompts],
            "metrics": self.metrics.to_dict() if self.metrics else None,
            "remap": {str(k): v for k, v in self.remap.items()}
            if self.remap is not None else None,
        }


def _require_finetuned(state: ProjectState) -> None:
    if state.ckpt.tag != "stage2":
        raise StateError(
            f"editing needs a fully finetuned checkpoint; tag is {state.ckpt.tag!r}")


def _check_item(state: ProjectState, item: int) -> None:
    if not 0 <= item < state.mask.n_items:
        raise EditError(
            f"item {item} outside map with {state.mask.n_items} items")


def _sample(ckpt: Checkpoint, prompts: Sequence[ItemPrompt],
            mask: SegmentationMap, run: SampleRun) -> np.ndarray:
    assign = assignment_from_mask(mask, ckpt.config.patch)
    embs = [encode_prompt(ckpt.vocab, ckpt.encoder, p) for p in prompts]
    return sample_from_embeddings(ckpt, embs, assign, run)


def _metrics(state: ProjectState, edited: np.ndarray, run: SampleRun,
             metric_mask: SegmentationMap, item: int) -> Tuple[RegionMetrics, np.ndarray]:
    """Same-seed reconstruction baseline, then region metrics against it."""
    baseline = _sample(state.ckpt, state.prompts, state.mask, run)
    return region_metrics(baseline, edited, metric_mask, item), baseline


def _resolve_words(state: ProjectState, item_id: int,
                   words: Sequence[str]) -> ItemPrompt:
    """Word list -> prompt. Words come from the base vocabulary; an item
    marker like <item:2> expands to that item's learned tokens."""
    vocab = state.ckpt.vocab
    table = state.learned_table()
    ids: List[int] = []
    seen_learned = seen_word = False
    for w in words:
        if w.startswith(ITEM_MARKER_PREFIX) and w.endswith(">"):
            try:
                ref = int(w[len(ITEM_MARKER_PREFIX):-1])
            except ValueError:
                raise VocabularyError(f"malformed item marker {w!r}") from None
            if ref not in table:
                raise VocabularyError(f"no learned tokens recorded for item {ref}")
            ids.extend(table[ref])
            seen_learned = True
        elif w in vocab.word_to_id:
            ids.append(vocab.word_to_id[w])
            seen_word = True
        else:
            raise VocabularyError(
                f"unknown word {w!r}; known words: {', '.join(vocab.words)}")
    if not ids:
        raise VocabularyError("empty prompt text")
    if seen_learned and seen_word:
        kind = "mixed"
    elif seen_learned:
        kind = "learned"
    else:
        kind = "text"
    return ItemPrompt(item_id=item_id, token_ids=ids, kind=kind)


def _replace_prompt(prompts: Sequence[ItemPrompt], item: int,
                    new: ItemPrompt) -> List[ItemPrompt]:
    out = list(prompts)
    out[item] = new
    return out


def reconstruct(state: ProjectState, run: SampleRun) -> EditResult:
    """Sample the project's own prompts over its own segmentation.

    This is the baseline every preservation metric compares against, so
    it carries no metrics itself.
    """
    _require_finetuned(state)
    state.validate()
    image = _sample(state.ckpt, state.prompts, state.mask, run)
    return EditResult(image=image, mask=state.mask, prompts=list(state.prompts),
                      request=EditRequest(kind="reconstruct", run=run),
                      metrics=None)


def edit_text(state: ProjectState, item: int, words: Sequence[str],
              run: SampleRun, combine: bool = False) -> EditResult:
    """Replace one item's prompt with words, or append words to its
    learned tokens when combine is set (tokens first, then words)."""
    _require_finetuned(state)
    state.validate()
    _check_item(state, item)
    new = _resolve_words(state, item, words)
    if combine:
        own = state.prompts[item].token_ids
        merged = list(own) + list(new.token_ids)
        kind = "mixed" if any(i < state.ckpt.vocab.base_size for i in merged) \
            else "learned"
        new = ItemPrompt(item_id=item, token_ids=merged, kind=kind)
    prompts = _replace_prompt(state.prompts, item, new)
    image = _sample(state.ckpt, prompts, state.mask, run)
    metrics, _ = _metrics(state, image, run, state.mask, item)
    req = EditRequest(kind="text", run=run, target_item=item,
                      words=list(words), combine=combine)
    return EditResult(image=image, mask=state.mask, prompts=prompts,
                      request=req, metrics=metrics)


def edit_image(state: ProjectState, item: int, reference: ProjectState,
               reference_item: int, run: SampleRun,
               reference_project: str = "") -> EditResult:
    """Swap one item's prompt for another project's learned prompt.

    Both projects must have been finetuned into the same checkpoint
    (pair finetuning); the target's segmentation governs geometry.
    """
    _require_finetuned(state)
    state.validate()
    reference.validate()
    _check_item(state, item)
    _check_item(reference, reference_item)
    if reference.ckpt is not state.ckpt:
        raise StateError(
            "projects live in different checkpoints; pair finetuning must "
            "put both in one model before image-based edits")
    ref_prompt = reference.prompts[reference_item]
    new = ItemPrompt(item_id=item, token_ids=list(ref_prompt.token_ids),
                     kind=ref_prompt.kind)
    prompts = _replace_prompt(state.prompts, item, new)
    image = _sample(state.ckpt, prompts, state.mask, run)
    metrics, _ = _metrics(state, image, run, state.mask, item)
    req = EditRequest(kind="image", run=run, target_item=item,
                      reference_project=reference_project,
                      reference_item=reference_item)
    return EditResult(image=image, mask=state.mask, prompts=prompts,
                      request=req, metrics=metrics)


def edit_mask(state: ProjectState, edits: Sequence[MaskEdit], run: SampleRun,
              target_item: int = -1) -> EditResult:
    """Apply segmentation edits in order, then sample unchanged prompts
    over the new partition. target_item only selects which region the
    metrics describe."""
    _require_finetuned(state)
    state.validate()
    mask = state.mask
    for e in edits:
        mask = apply_edit(mask, e)
    image = _sample(state.ckpt, state.prompts, mask, run)
    metrics = None
    if target_item >= 0:
        if target_item >= mask.n_items:
            raise EditError(
                f"item {target_item} outside map with {mask.n_items} items")
        metrics, _ = _metrics(state, image, run, mask, target_item)
    req = EditRequest(kind="mask", run=run, target_item=target_item,
                      mask_edits=list(edits))
    return EditResult(image=image, mask=mask, prompts=list(state.prompts),
                      request=req, metrics=metrics)


def remove_item(state: ProjectState, item: int, run: SampleRun) -> EditResult:
    """Drop an item and its prompt; neighbors absorb its region.

    Metrics are measured over the removed item's former region so the
    fill quality is what they report. Surviving item ids shift down per
    the returned remap, and the result's prompt list follows it.
    """
    _require_finetuned(state)
    state.validate()
    _check_item(state, item)
    removal = remove_item_repartition(state.mask, item)
    prompts = []
    for old, p in enumerate(state.prompts):
        if old == item:
            continue
        new_id = removal.remap[old]
        prompts.append(ItemPrompt(item_id=new_id, token_ids=list(p.token_ids),
                                  kind=p.kind))
    prompts.sort(key=lambda p: p.item_id)
    image = _sample(state.ckpt, prompts, removal.map, run)
    metrics, _ = _metrics(state, image, run, state.mask, item)
    req = EditRequest(kind="remove", run=run, target_item=item)
    return EditResult(image=image, mask=removal.map, prompts=prompts,
                      request=req, metrics=metrics, remap=dict(removal.remap))


def edit_interpolate(state: ProjectState, item: int, alpha: float,
                     run: SampleRun, guide_words: Optional[Sequence[str]] = None,
                     reference: Optional[ProjectState] = None,
                     reference_item: int = -1,
                     reference_project: str = "") -> EditResult:
    """Blend an item's embedding toward a guide: alpha 0 is the original
    prompt, alpha 1 is the guide, linear in between after encoding."""
    _require_finetuned(state)
    state.validate()
    _check_item(state, item)
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError(f"alpha must lie in [0, 1], got {alpha}")
    has_words = guide_words is not None
    has_ref = reference is not None
    if has_words == has_ref:
        raise ConfigError("interpolation needs exactly one guide: "
                          "guide_words or a reference item")
    if has_words:
        guide_prompt = _resolve_words(state, item, guide_words)
    else:
        reference.validate()
        _check_item(reference, reference_item)
        if reference.ckpt is not state.ckpt:
            raise StateError(
                "projects live in different checkpoints; pair finetuning must "
                "put both in one model before interpolating across them")
        ref = reference.prompts[reference_item]
        guide_prompt = ItemPrompt(item_id=item, token_ids=list(ref.token_ids),
                                  kind=ref.kind)
    ckpt = state.ckpt
    assign = assignment_from_mask(state.mask, ckpt.config.patch)
    embs = [encode_prompt(ckpt.vocab, ckpt.encoder, p) for p in state.prompts]
    guide_emb = encode_prompt(ckpt.vocab, ckpt.encoder, guide_prompt)
    embs[item] = interpolate_embeddings(embs[item], guide_emb, alpha)
    image = sample_from_embeddings(ckpt, embs, assign, run)
    metrics, _ = _metrics(state, image, run, state.mask, item)
    req = EditRequest(kind="interpolate", run=run, target_item=item,
                      alpha=alpha,
                      guide_words=list(guide_words) if has_words else None,
                      reference_project=reference_project if has_ref else "",
                      reference_item=reference_item if has_ref else -1)
    return EditResult(image=image, mask=state.mask, prompts=list(state.prompts),
                      request=req, metrics=metrics)


def apply_request(state: ProjectState, req: EditRequest,
                  reference: Optional[ProjectState] = None) -> EditResult:
    """Dispatch a deserialized request; the echo is the request itself."""
    req.validate()
    needs_ref = req.kind == "image" or (
        req.kind == "interpolate" and req.reference_item >= 0)
    if needs_ref and reference is None:
        raise ConfigError(f"{req.kind} request needs the reference project")
    if req.kind == "reconstruct":
        result = reconstruct(state, req.run)
    elif req.kind == "text":
        result = edit_text(state, req.target_item, req.words, req.run,
                           combine=req.combine)
    elif req.kind == "image":
        result = edit_image(state, req.target_item, reference,
                            req.reference_item, req.run,
                            reference_project=req.reference_project)
    elif req.kind == "mask":
        result = edit_mask(state, req.mask_edits, req.run,
                           target_item=req.target_item)
    elif req.kind == "remove":
        result = remove_item(state, req.target_item, req.run)
    else:
        result = edit_interpolate(
            state, req.target_item, req.alpha, req.run,
            guide_words=req.guide_words, reference=reference,
            reference_item=req.reference_item if reference is not None else -1,
            reference_project=req.reference_project)
    result.request = req
    return result
