"""End-to-end quality gates over the whole engine.

Each test prints one [PASS]/[FAIL] summary line (visible even under
capture) and then asserts, so a full run reads as a checklist. Heavy
artifacts come from the cached session fixtures in conftest.
"""

import time

import numpy as np
import pytest

import dedit.attention as at
import dedit.model as md
import dedit.scenes as sn
import dedit.tensor as tc
from dedit.checkpoint_io import load_checkpoint
from dedit.editing import (ProjectState, edit_interpolate, edit_mask,
                           edit_text, reconstruct, remove_item)
from dedit.finetune import (FinetuneConfig, TrainExample, finetune_stage1,
                            finetune_stage2)
from dedit.masks import (MaskEdit, SegmentationMap, apply_edit,
                         remove_item_repartition, validate_partition)
from dedit.schedule import SampleRun, make_schedule
from dedit.text import (PromptEmbedding, encode_prompt, inject_item_tokens)

from conftest import fixture_spec, read_meta

SMALL = md.DenoiserConfig(image_size=32, patch=4, width=48, blocks=2,
                          time_embed_dim=48, context_dim=48)


def report(capsys, ok, text):
    with capsys.disabled():
        print(f"\n{'[PASS]' if ok else '[FAIL]'} {text}", flush=True)
    assert ok, text


# ------------------------------------------------------------------ gradients

def _t64(values, requires_grad=False):
    # float32 central differences at step 1e-3 sit below the rounding
    # floor, so every gradcheck case runs in float64
    return tc.Tensor(values, requires_grad=requires_grad, dtype=np.float64)


def _chain_case(i):
    """Random op pipeline ending in a scalar; returns (f, param)."""
    rng = np.random.default_rng(1000 + i)
    n, m = int(rng.integers(2, 6)), int(rng.integers(2, 6))
    p = _t64(rng.standard_normal((n, m)), requires_grad=True)
    a = _t64(rng.standard_normal((m, m)))
    b = _t64(rng.standard_normal((n, m)))
    g = _t64(rng.standard_normal(m))
    h = _t64(rng.standard_normal(m))
    steps = rng.integers(0, 2, size=5)

    def f(x):
        y = tc.matmul(x, a)
        if steps[0]:
            y = tc.add(y, b)
        if steps[1]:
            y = tc.gelu(y)
        if steps[2]:
            y = tc.layer_norm(y, g, h)
        if steps[3]:
            y = tc.row_softmax(tc.scale(y, 1.7))
        if steps[4]:
            y = tc.mul(y, b)
        return tc.mean_square(y)

    return f, p


def _attention_cases():
    rng = np.random.default_rng(77)
    wts = at.init_attention_weights(6, 5, 4, rng)
    for w in (wts.w_q, wts.w_k, wts.w_v, wts.w_out):
        w.values = w.values.astype(np.float64)
    wts.w_q.requires_grad = True
    wts.w_v.requires_grad = True
    z = _t64(rng.standard_normal((7, 6)))
    c0 = _t64(rng.standard_normal((3, 5)))
    c1 = _t64(rng.standard_normal((2, 5)))
    assign = at.Assignment(np.array([0, 1, 0, 1, 0, 0, 1]), 2)
    prompts = [PromptEmbedding(values=c0, source_item=0),
               PromptEmbedding(values=c1, source_item=1)]

    def f_full(_):
        return tc.mean_square(at.full_cross_attention(z, c0, wts))

    def f_grouped(_):
        return tc.mean_square(at.grouped_cross_attention(z, prompts, assign, wts))

    return [(f_full, wts.w_q), (f_grouped, wts.w_v)]


def _model_cases():
    ckpt = md.init_model(SMALL, seed=5, vocab_words=list(sn.BASE_WORDS))
    image, mask, _ = sn.render_scene(fixture_spec())
    prompts = inject_item_tokens(ckpt.vocab, mask.n_items, 2, seed=0)
    assign = at.assignment_from_mask(mask, SMALL.patch)
    sched = make_schedule(ckpt.schedule_T, ckpt.schedule_curve)
    for t in ckpt.params().values():
        t.values = t.values.astype(np.float64)
    ckpt.vocab.injected_rows.requires_grad = True
    cross = ckpt.denoiser.blocks[0].cross.w_q
    cross.requires_grad = True

    def loss(_):
        rng = np.random.default_rng(9)
        embs = [encode_prompt(ckpt.vocab, ckpt.encoder, p) for p in prompts]
        return md.training_loss(ckpt, image, embs, assign, sched, rng)

    def enc(_):
        e = encode_prompt(ckpt.vocab, ckpt.encoder, prompts[1])
        return tc.mean_square(e.values)

    return [(enc, ckpt.vocab.injected_rows),
            (loss, ckpt.vocab.injected_rows),
            (loss, cross)]


def test_gradients_match_finite_differences(capsys):
    cases = [_chain_case(i) for i in range(20)]
    cases += _attention_cases()
    cases += _model_cases()
    assert len(cases) == 25
    t0 = time.time()
    worst = 0.0
    for f, p in cases:
        worst = max(worst, tc.finite_diff_check(f, p, step=1e-3))
    dt = time.time() - t0
    ok = worst < 1e-3 and dt < 120
    report(capsys, ok,
           f"gradient check: max rel err {worst:.2e} < 1e-3 over 25 "
           f"compositions incl. denoiser loss, {dt:.1f}s < 120s")


# ------------------------------------------------------- attention algebra

def _dense_masked_oracle(z, contexts, labels, wts):
    z = np.asarray(z, dtype=np.float64)
    ctx = np.concatenate([np.asarray(c, dtype=np.float64) for c in contexts])
    owner = np.concatenate([np.full(len(c), i) for i, c in enumerate(contexts)])
    q = z @ wts.w_q.values
    k = ctx @ wts.w_k.values
    v = ctx @ wts.w_v.values
    logits = q @ k.T / np.sqrt(wts.w_q.shape[1])
    logits = np.where(owner[None, :] == np.asarray(labels)[:, None],
                      logits, -np.inf)
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    att = e / e.sum(axis=1, keepdims=True)
    return (att @ v) @ wts.w_out.values


def test_grouped_attention_equals_references(capsys):
    worst_single = 0.0
    for i in range(100):
        rng = np.random.default_rng(3000 + i)
        n, w = int(rng.integers(1, 9)), int(rng.integers(1, 5))
        wts = at.init_attention_weights(6, 5, 4, rng)
        z = tc.Tensor(rng.standard_normal((n, 6)).astype(np.float32))
        c = tc.Tensor(rng.standard_normal((w, 5)).astype(np.float32))
        full = at.full_cross_attention(z, c, wts).values
        grouped = at.grouped_cross_attention(
            z, [PromptEmbedding(values=c, source_item=0)],
            at.Assignment(np.zeros(n, dtype=np.int64), 1), wts).values
        worst_single = max(worst_single,
                           float(np.abs(full - grouped).max()))

    worst_multi = 0.0
    for i in range(100):
        rng = np.random.default_rng(4000 + i)
        n_items = int(rng.integers(2, 5))
        n = int(rng.integers(n_items, 12))
        labels = rng.integers(0, n_items, size=n)
        labels[:n_items] = np.arange(n_items)  # every item owns a row
        wts = at.init_attention_weights(6, 5, 4, rng)
        z = tc.Tensor(rng.standard_normal((n, 6)).astype(np.float32))
        ctxs = [rng.standard_normal((int(rng.integers(1, 4)), 5)).astype(np.float32)
                for _ in range(n_items)]
        prompts = [PromptEmbedding(values=tc.Tensor(c), source_item=j)
                   for j, c in enumerate(ctxs)]
        got = at.grouped_cross_attention(
            z, prompts, at.Assignment(labels, n_items), wts).values
        want = _dense_masked_oracle(z.values, ctxs, labels, wts)
        worst_multi = max(worst_multi, float(np.abs(got - want).max()))

    ok = worst_single < 1e-6 and worst_multi < 1e-5
    report(capsys, ok,
           f"grouped attention: single-item vs full max diff "
           f"{worst_single:.2e} < 1e-6, multi-item vs block-diagonal oracle "
           f"{worst_multi:.2e} < 1e-5 (100 cases each)")


def test_items_are_disentangled_at_the_layer(capsys):
    rng = np.random.default_rng(42)
    failures = 0
    for _ in range(1000):
        n_items = int(rng.integers(2, 5))
        n = int(rng.integers(n_items, 10))
        labels = rng.integers(0, n_items, size=n)
        labels[:n_items] = np.arange(n_items)
        wts = at.init_attention_weights(5, 4, 3, rng)
        z = tc.Tensor(rng.standard_normal((n, 5)).astype(np.float32))
        ctxs = [rng.standard_normal((2, 4)).astype(np.float32)
                for _ in range(n_items)]
        assign = at.Assignment(labels, n_items)
        j = int(rng.integers(0, n_items))

        def run(cs):
            prompts = [PromptEmbedding(values=tc.Tensor(c), source_item=i)
                       for i, c in enumerate(cs)]
            return at.grouped_cross_attention(z, prompts, assign, wts).values

        before = run(ctxs)
        noised = [c if i == j else c + rng.standard_normal(c.shape).astype(np.float32)
                  for i, c in enumerate(ctxs)]
        after = run(noised)
        rows = assign.positions(j)
        if not np.array_equal(before[rows], after[rows]):
            failures += 1
    ok = failures == 0
    report(capsys, ok,
           f"disentanglement: item rows bit-identical under perturbation of "
           f"all other items, 1000 trials, {failures} failures")


# ----------------------------------------------------------------- masks

def _removal_oracle(labels, removed, n_items):
    """Per-pixel nearest donor label, Manhattan metric, smallest id wins."""
    h, w = labels.shape
    out = labels.copy()
    donors = [(r, c, labels[r, c]) for r in range(h) for c in range(w)
              if labels[r, c] != removed]
    for r in range(h):
        for c in range(w):
            if labels[r, c] != removed:
                continue
            best_d, best_l = 10 ** 9, None
            for rr, cc, ll in donors:
                d = abs(rr - r) + abs(cc - c)
                if d < best_d or (d == best_d and ll < best_l):
                    best_d, best_l = d, ll
            out[r, c] = best_l
    for old in range(n_items):
        if old > removed:
            out[out == old] = old - 1
    return out


def _random_map(rng, size=16, max_items=6):
    n = int(rng.integers(2, max_items + 1))
    labels = rng.integers(0, n, size=(size, size))
    labels[0, :n] = np.arange(n)  # no empty items
    return SegmentationMap(labels, n)


def test_removal_matches_bruteforce_and_ops_keep_partitions(capsys):
    mismatches = 0
    for i in range(200):
        rng = np.random.default_rng(5000 + i)
        m = _random_map(rng)
        removed = int(rng.integers(0, m.n_items))
        got = remove_item_repartition(m, removed).map.labels
        want = _removal_oracle(m.labels, removed, m.n_items)
        mismatches += not np.array_equal(got, want)

    checked = 0
    rng = np.random.default_rng(99)
    while checked < 10000:
        m = _random_map(rng)
        kind = ("translate", "scale", "paint", "swap")[int(rng.integers(4))]
        if kind == "translate":
            e = MaskEdit(kind="translate", item_id=int(rng.integers(m.n_items)),
                         dx=int(rng.integers(-6, 7)), dy=int(rng.integers(-6, 7)))
        elif kind == "scale":
            e = MaskEdit(kind="scale", item_id=int(rng.integers(m.n_items)),
                         factor=float(rng.uniform(0.5, 2.0)),
                         anchor=(float(rng.uniform(0, 15)), float(rng.uniform(0, 15))))
        elif kind == "paint":
            px = [(int(rng.integers(16)), int(rng.integers(16)))
                  for _ in range(int(rng.integers(1, 12)))]
            e = MaskEdit(kind="paint", item_id=int(rng.integers(m.n_items)),
                         pixels=px,
                         polarity=("add", "erase")[int(rng.integers(2))])
        else:
            i1, i2 = rng.choice(m.n_items, size=2, replace=False)
            e = MaskEdit(kind="swap", item_id=int(i1), other_item=int(i2))
        try:
            out = apply_edit(m, e)
        except Exception:
            continue  # off-canvas and similar rejections produce no output
        validate_partition(out)
        assert out.labels.shape == m.labels.shape
        checked += 1

    ok = mismatches == 0
    report(capsys, ok,
           f"mask algebra: removal equals brute-force nearest-label oracle on "
           f"200 maps ({mismatches} mismatches); 10000 random op outputs all "
           f"valid partitions")


# -------------------------------------------------------------- finetuning

def test_finetune_touches_only_its_scope(capsys):
    ckpt = md.init_model(SMALL, seed=3, vocab_words=list(sn.BASE_WORDS))
    image, mask, _ = sn.render_scene(fixture_spec())
    prompts = inject_item_tokens(ckpt.vocab, mask.n_items, 2, seed=0)
    example = TrainExample(image=image, mask=mask, prompts=prompts)
    cfg = FinetuneConfig(stage1_steps=3, stage2_steps=3, accumulation=1)

    def snap():
        return {k: v.values.copy() for k, v in ckpt.params().items()}

    def diff(a, b):
        return {k for k in a if not np.array_equal(a[k], b[k])}

    s0 = snap()
    finetune_stage1(ckpt, example, cfg)
    s1 = snap()
    stage1_diff = diff(s0, s1)
    finetune_stage2(ckpt, example, cfg)
    s2 = snap()
    stage2_diff = diff(s1, s2)

    cross = {f"den.block{i}.cross.{n}" for i in range(SMALL.blocks)
             for n in ("w_q", "w_k", "w_v", "w_out")}
    ok = stage1_diff == {"vocab.injected_rows"} and stage2_diff == cross
    report(capsys, ok,
           f"finetune scope purity: stage 1 changed {sorted(stage1_diff)}, "
           f"stage 2 changed exactly the {len(cross)} cross-attention tensors")


# ------------------------------------------------------- trained-model gates

def test_pretrained_model_draws_the_prompted_color(capsys, pretrained,
                                                   pretrained_path):
    prompt = sn.caption_prompt(pretrained, 0, ["blue", "square"])
    emb = encode_prompt(pretrained.vocab, pretrained.encoder, prompt)
    assign = at.Assignment(
        np.zeros(pretrained.config.n_patches, dtype=np.int64), 1)
    black = np.asarray(sn.PALETTE["black"], dtype=np.float32)
    from dedit.sampling import sample_from_embeddings
    wins = 0
    for seed in range(10):
        img = sample_from_embeddings(pretrained, [emb], assign,
                                     SampleRun(seed=seed, steps=20,
                                               guidance_scale=3.0))
        fg = np.linalg.norm(img - black, axis=-1) > sn.FOREGROUND_THRESHOLD
        wins += fg.any() and sn.dominant_color(img, fg) == "blue"
    build = read_meta(pretrained_path)["build_seconds"]
    ok = wins >= 8 and build <= 3600
    report(capsys, ok,
           f"pretraining gate: 'blue square' blue-dominant for {wins}/10 seeds "
           f"(need >= 8); base built in {build/60:.1f} min <= 60 min")


def test_finetuned_model_reconstructs_the_scene(capsys, recon, recon_path):
    run = SampleRun(seed=0, steps=20, guidance_scale=3.0)
    sample = reconstruct(recon.state(), run).image
    orig = recon.image
    dists = []
    for item in range(recon.mask.n_items):
        region = recon.mask.labels == item
        d = float(np.linalg.norm(sample[region].mean(axis=0)
                                 - orig[region].mean(axis=0)))
        dists.append(d)
    mse = float(((sample - orig) ** 2).mean())
    build = read_meta(recon_path)["build_seconds"]
    ok = max(dists) < 0.15 and mse < 0.05 and build <= 600
    report(capsys, ok,
           f"reconstruction: per-item color dist {[round(d, 3) for d in dists]}"
           f" all < 0.15, image MSE {mse:.4f} < 0.05; finetune took "
           f"{build/60:.1f} min <= 10 min")


def test_each_edit_kind_behaves_as_specified(capsys, recon):
    run = SampleRun(seed=5, steps=20, guidance_scale=3.0)
    state = recon.state()
    baseline = reconstruct(state, run).image
    lines = []

    res = edit_text(state, 1, ["blue", "square"], run)
    region = recon.mask.labels == 1
    flipped = sn.dominant_color(res.image, region)
    text_ok = flipped == "blue" and res.metrics.untouched_mse < 0.05
    lines.append(f"text: region now {flipped}, untouched MSE "
                 f"{res.metrics.untouched_mse:.4f}")

    moved = edit_mask(state, [MaskEdit(kind="translate", item_id=1, dx=8)],
                      run, target_item=1)
    red_before = sn.color_region(baseline, "red")
    red_after = sn.color_region(moved.image, "red")
    move_ok = red_before.any() and red_after.any()
    if move_ok:
        shift = (sn.region_centroid(red_after)[1]
                 - sn.region_centroid(red_before)[1])
        move_ok = abs(shift - 8) <= 2
        lines.append(f"translate dx=8: centroid moved {shift:.2f} px")

    removed = remove_item(state, 1, run)
    hole = recon.mask.labels == 1
    absorbed = removed.mask.labels[hole]
    dist_w = 0.0
    for new_label in np.unique(absorbed):
        part = hole & (removed.mask.labels == new_label)
        outside = (removed.mask.labels == new_label) & ~hole
        if not outside.any():
            continue
        d = float(np.linalg.norm(removed.image[part].mean(axis=0)
                                 - removed.image[outside].mean(axis=0)))
        dist_w += d * part.sum() / hole.sum()
    remove_ok = dist_w < 0.15
    lines.append(f"removal: filled-region color dist {dist_w:.3f}")

    lo = edit_interpolate(state, 1, 0.0, run, guide_words=["blue", "square"])
    hi = edit_interpolate(state, 1, 1.0, run, guide_words=["blue", "square"])
    interp_ok = (np.array_equal(lo.image, baseline)
                 and np.array_equal(hi.image, res.image))
    lines.append("interpolation endpoints bit-match reconstruct/full edit: "
                 f"{interp_ok}")

    ok = text_ok and move_ok and remove_ok and interp_ok
    report(capsys, ok, "edit behaviors: " + "; ".join(lines))


def test_token_count_sweep_reports_quality(capsys, pretrained_path):
    image, mask, _ = sn.render_scene(fixture_spec())
    cfg = FinetuneConfig(stage1_steps=40, stage2_steps=40, accumulation=2)
    run_seeds = (0, 1, 2)
    rows = []
    for m_tokens in (1, 2, 5, 10):
        ckpt = load_checkpoint(pretrained_path)
        prompts = inject_item_tokens(ckpt.vocab, mask.n_items, m_tokens,
                                     seed=0, owner=f"sweep{m_tokens}")
        example = TrainExample(image=image, mask=mask, prompts=prompts)
        finetune_stage1(ckpt, example, cfg)
        finetune_stage2(ckpt, example, cfg)
        state = ProjectState(ckpt=ckpt, mask=mask, prompts=prompts)
        region = mask.labels == 1
        hits, mses = 0, []
        for seed in run_seeds:
            res = edit_text(state, 1, ["blue"],
                            SampleRun(seed=seed, steps=20, guidance_scale=3.0))
            hits += sn.dominant_color(res.image, region) == "blue"
            mses.append(res.metrics.untouched_mse)
        rows.append((m_tokens, float(np.mean(mses)), hits))
    ok = len(rows) == 4 and all(np.isfinite(r[1]) for r in rows)
    table = "  ".join(f"M={m}: mse {mse:.4f}, success {h}/{len(run_seeds)}"
                      for m, mse, h in rows)
    report(capsys, ok, "tokens-per-item sweep: " + table)


def test_sampling_and_edits_are_bit_reproducible(capsys):
    ckpt = md.init_model(SMALL, seed=11, vocab_words=list(sn.BASE_WORDS))
    image, mask, _ = sn.render_scene(fixture_spec())
    prompts = inject_item_tokens(ckpt.vocab, mask.n_items, 2, seed=0)
    example = TrainExample(image=image, mask=mask, prompts=prompts)
    cfg = FinetuneConfig(stage1_steps=1, stage2_steps=1, accumulation=1)
    finetune_stage1(ckpt, example, cfg)
    finetune_stage2(ckpt, example, cfg)
    state = ProjectState(ckpt=ckpt, mask=mask, prompts=prompts)
    run = SampleRun(seed=7, steps=6)

    ops = {
        "reconstruct": lambda: reconstruct(state, run).image,
        "text": lambda: edit_text(state, 1, ["green"], run).image,
        "mask": lambda: edit_mask(state, [MaskEdit(kind="translate",
                                                   item_id=1, dx=2)],
                                  run).image,
        "remove": lambda: remove_item(state, 1, run).image,
        "interpolate": lambda: edit_interpolate(
            state, 1, 0.5, run, guide_words=["green", "circle"]).image,
    }
    bad = [name for name, fn in ops.items()
           if not np.array_equal(fn(), fn())]
    ok = not bad
    report(capsys, ok,
           f"determinism: two same-seed runs bit-equal for "
           f"{', '.join(ops)}{'; FAILED: ' + ', '.join(bad) if bad else ''}")
