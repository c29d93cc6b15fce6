"""
Sampling grids and rendering them to PPM images
===============================================

Loads the checkpoint produced by ``02_train_small_model.py`` (training
one on the spot if it is missing), samples class-conditional grids with
classifier-free guidance, and writes PPM images plus ``.tokens`` files.
"""

import pathlib

from neighborgen import (Palette, SamplingConfig, generate, load_checkpoint,
                         save_tokens, write_ppm)

here = pathlib.Path(__file__).parent
ckpt = here / "demo_model.ckpt"
if not ckpt.exists():
    print("no checkpoint found; running the training demo first...")
    exec(compile((here / "02_train_small_model.py").read_text(),
                 "02_train_small_model.py", "exec"), {"__file__": str(ckpt)})

params = load_checkpoint(ckpt)
cfg = params.config
print(f"loaded: {cfg.mode} model, {cfg.shape}, vocab {cfg.vocab_size}, "
      f"{cfg.num_classes} classes")

palette = Palette.make(cfg.vocab_size, seed=0)
for class_id in range(cfg.num_classes):
    # Guidance sharpens class identity: logits are extrapolated away from
    # a null-conditioned prediction before sampling.  A per-class seed
    # keeps the noise streams independent.
    sampling = SamplingConfig(temperature=1.0, top_k=0, cfg_scale=2.0,
                              seed=40 + class_id)
    grid, stats = generate(params, class_id, cfg.shape, sampling)
    print(f"\nclass {class_id}: {stats.tokens_generated} tokens in "
          f"{stats.forward_passes} forward passes "
          f"({sum(stats.step_wall_ms):.0f} ms)")
    print(grid)
    save_tokens(here / f"sample_c{class_id}.tokens", grid)
    paths = write_ppm(grid, palette, str(here / f"sample_c{class_id}.ppm"),
                      zoom=32)
    print("wrote", ", ".join(pathlib.Path(p).name for p in paths),
          f"and sample_c{class_id}.tokens")
