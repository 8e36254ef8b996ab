"""Build the assets the contract suite's server needs: a small base
checkpoint plus a two-shape fixture scene as PPM/PGM files.

Usage: python3 make_server_fixture.py OUT_DIR
"""

import os
import sys

from dedit.checkpoint_io import save_checkpoint
from dedit.imagefiles import image_to_ppm, mask_to_pgm
from dedit.model import DenoiserConfig, init_model
from dedit.scenes import BASE_WORDS, SceneSpec, ShapeSpec, render_scene


def main(out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    # narrow model keeps the finetune + sampling portion of the suite fast
    cfg = DenoiserConfig(image_size=32, patch=4, width=48, blocks=2,
                         time_embed_dim=48, context_dim=48)
    ckpt = init_model(cfg, seed=0, vocab_words=list(BASE_WORDS))
    save_checkpoint(ckpt, os.path.join(out_dir, "base.ckpt"))

    spec = SceneSpec(background="black", items=[
        ShapeSpec(shape="circle", color="red", center=(10.0, 10.0), scale=5.0),
        ShapeSpec(shape="square", color="blue", center=(22.0, 22.0), scale=5.0),
    ])
    image, mask, _ = render_scene(spec)
    with open(os.path.join(out_dir, "image.ppm"), "wb") as f:
        f.write(image_to_ppm(image))
    with open(os.path.join(out_dir, "mask.pgm"), "wb") as f:
        f.write(mask_to_pgm(mask))
    print(out_dir)


if __name__ == "__main__":
    main(sys.argv[1])
