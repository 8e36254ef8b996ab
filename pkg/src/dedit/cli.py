"""Command line driver for the full pipeline.

Every flag can also be set through an environment variable named
DEDIT_<FLAG> with dashes turned into underscores, e.g. --data-dir
becomes DEDIT_DATA_DIR. Explicit flags win over the environment.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from typing import List, Optional

from .checkpoint_io import load_checkpoint, save_checkpoint
from .editing import EditRequest
from .errors import ConfigError, DeditError
from .finetune import FinetuneConfig
from .masks import MaskEdit
from .model import DenoiserConfig, init_model
from .project import DEFAULT_TOKENS_PER_ITEM, ProjectStore
from .scenes import BASE_WORDS, generate_corpus, load_corpus, pretrain
from .schedule import SampleRun


def _env(flag: str) -> Optional[str]:
    return os.environ.get("DEDIT_" + flag.replace("-", "_").upper())


class _Parser(argparse.ArgumentParser):
    """add_flag falls back to DEDIT_* before declaring a flag missing,
    so scripts can configure everything through the environment."""

    def add_flag(self, flag: str, *, required: bool = False, **kw):
        env_val = _env(flag)
        if env_val is not None:
            if kw.get("action") == "store_true":
                kw["default"] = env_val.lower() in ("1", "true", "yes", "on")
            elif "type" in kw:
                kw["default"] = kw["type"](env_val)
            else:
                kw["default"] = env_val
            required = False
        self.add_argument("--" + flag, required=required, **kw)


def _store(args) -> ProjectStore:
    base = getattr(args, "base", None)
    return ProjectStore(args.data_dir, base=base)


def _cmd_pretrain(args) -> int:
    if not os.path.isdir(args.corpus) and args.generate_scenes > 0:
        generate_corpus(args.generate_scenes, args.seed, args.corpus)
    corpus = load_corpus(args.corpus)
    ckpt = init_model(DenoiserConfig(), seed=args.seed,
                      vocab_words=list(BASE_WORDS))

    def report(step: int, loss: float) -> None:
        if step % max(1, args.steps // 20) == 0 or step == args.steps - 1:
            print(f"step {step}/{args.steps} loss {loss:.5f}", flush=True)

    pretrain(ckpt, corpus, steps=args.steps, seed=args.seed, lr=args.lr,
             accumulation=args.accumulation, mix=args.mix, on_step=report)
    save_checkpoint(ckpt, args.out)
    print(f"saved {args.out}")
    return 0


def _cmd_new_project(args) -> int:
    store = _store(args)
    with open(args.image, "rb") as f:
        image = f.read()
    with open(args.mask, "rb") as f:
        mask = f.read()
    manifest = store.create_project(image, mask,
                                    tokens_per_item=args.tokens_per_item)
    print(json.dumps({"project_id": manifest["id"],
                      "items": manifest["items"]}, indent=1))
    return 0


def _finetune_config(args) -> FinetuneConfig:
    cfg = FinetuneConfig(stage1_steps=args.stage1_steps,
                         stage2_steps=args.stage2_steps,
                         lr_stage1=args.lr1, lr_stage2=args.lr2,
                         accumulation=args.accumulation, seed=args.seed)
    cfg.validate()
    return cfg


def _cmd_finetune(args) -> int:
    store = _store(args)
    cfg = _finetune_config(args)
    if args.reference:
        trace = store.run_pair_finetune(args.project, args.reference, cfg)
    else:
        trace = store.run_finetune(args.project, cfg)
    last = trace[-1][1] if trace else float("nan")
    print(f"finetuned {args.project}: {len(trace)} steps, "
          f"final smoothed loss {last:.5f}")
    return 0


def _run_from_args(args) -> SampleRun:
    return SampleRun(seed=args.seed, steps=args.steps,
                     guidance_scale=args.guidance, sampler=args.sampler)


def _cmd_edit(args) -> int:
    store = _store(args)
    req = EditRequest(
        kind=args.kind, run=_run_from_args(args), target_item=args.item,
        words=args.words.split() if args.words else None,
        combine=args.combine,
        reference_project=args.reference_project or "",
        reference_item=args.reference_item,
        mask_edits=[MaskEdit.from_dict(d)
                    for d in json.loads(args.mask_edits or "[]")],
        alpha=args.alpha,
        guide_words=args.guide_words.split() if args.guide_words else None)
    rid, result = store.run_edit(args.project, req)
    out = {"result_id": rid,
           "metrics": result.metrics.to_dict() if result.metrics else None}
    print(json.dumps(out, indent=1))
    return 0


def _cmd_sample(args) -> int:
    store = _store(args)
    req = EditRequest(kind="reconstruct", run=_run_from_args(args))
    rid, _ = store.run_edit(args.project, req)
    print(json.dumps({"result_id": rid,
                      "image": os.path.join(store.result_dir(rid),
                                            "image.ppm")}, indent=1))
    return 0


def _cmd_serve(args) -> int:
    import uvicorn

    from .jobs import JobQueue
    from .service import create_app

    app = create_app(_store(args), JobQueue(max_workers=args.workers))
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    top = argparse.ArgumentParser(prog="dedit")
    sub = top.add_subparsers(dest="command", required=True,
                             parser_class=_Parser)

    p = sub.add_parser("pretrain", help="train a base checkpoint on a corpus")
    p.add_flag("corpus", required=True)
    p.add_flag("steps", type=int, default=2000)
    p.add_flag("seed", type=int, default=0)
    p.add_flag("out", required=True)
    p.add_flag("lr", type=float, default=3e-4)
    p.add_flag("accumulation", type=int, default=4)
    p.add_flag("mix", default="joint", choices=("joint", "dense"))
    p.add_flag("generate-scenes", type=int, default=0,
               help="create the corpus first with this many scenes "
                    "if the directory does not exist")
    p.set_defaults(fn=_cmd_pretrain)

    p = sub.add_parser("new-project", help="register an image + mask")
    p.add_flag("image", required=True)
    p.add_flag("mask", required=True)
    p.add_flag("base", default=None,
               help="pretrained checkpoint; optional once the store exists")
    p.add_flag("data-dir", required=True)
    p.add_flag("tokens-per-item", type=int, default=DEFAULT_TOKENS_PER_ITEM)
    p.set_defaults(fn=_cmd_new_project)

    p = sub.add_parser("finetune", help="two-stage finetune of one project")
    p.add_flag("project", required=True)
    p.add_flag("data-dir", required=True)
    p.add_flag("reference", default=None,
               help="second project id for pair finetuning")
    p.add_flag("stage1-steps", type=int, default=400)
    p.add_flag("stage2-steps", type=int, default=400)
    p.add_flag("lr1", type=float, default=1e-4)
    p.add_flag("lr2", type=float, default=5e-5)
    p.add_flag("accumulation", type=int, default=10)
    p.add_flag("seed", type=int, default=0)
    p.set_defaults(fn=_cmd_finetune)

    p = sub.add_parser("edit", help="run one edit request")
    p.add_flag("project", required=True)
    p.add_flag("data-dir", required=True)
    p.add_flag("kind", required=True)
    p.add_flag("item", type=int, default=-1)
    p.add_flag("words", default=None)
    p.add_flag("combine", action="store_true", default=False)
    p.add_flag("reference-project", default=None)
    p.add_flag("reference-item", type=int, default=-1)
    p.add_flag("mask-edits", default=None, help="JSON list of mask edits")
    p.add_flag("alpha", type=float, default=0.0)
    p.add_flag("guide-words", default=None)
    p.add_flag("seed", type=int, default=0)
    p.add_flag("steps", type=int, default=20)
    p.add_flag("guidance", type=float, default=3.0)
    p.add_flag("sampler", default="euler", choices=("euler", "ddim"))
    p.set_defaults(fn=_cmd_edit)

    p = sub.add_parser("sample", help="reconstruct a finetuned project")
    p.add_flag("project", required=True)
    p.add_flag("data-dir", required=True)
    p.add_flag("seed", type=int, default=0)
    p.add_flag("steps", type=int, default=20)
    p.add_flag("guidance", type=float, default=3.0)
    p.add_flag("sampler", default="euler", choices=("euler", "ddim"))
    p.set_defaults(fn=_cmd_sample)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_flag("data-dir", required=True)
    p.add_flag("base", default=None)
    p.add_flag("port", type=int, default=8000)
    p.add_flag("host", default="127.0.0.1")
    p.add_flag("workers", type=int, default=2)
    p.set_defaults(fn=_cmd_serve)

    return top


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except DeditError as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
