"""
Benchmarking near-to-far decoding against the raster baseline
=============================================================

Builds two models sharing one backbone configuration — near-to-far with
per-axis heads, and a raster next-token baseline — and measures forward
passes, latency, and throughput per sample on the same grid.
"""

import json

from neighborgen import (GridShape, ModelConfig, NEIGHBOR, RASTER, bench,
                         init_model, step_count)

shape = GridShape((8, 8))
common = dict(vocab_size=8, num_classes=4, embed_dim=64, num_blocks=2,
              num_attn_heads=4, shape=shape)
neighbor = init_model(ModelConfig(mode=NEIGHBOR, **common), seed=0)
raster = init_model(ModelConfig(mode=RASTER, **common), seed=0)

print(f"grid {shape}: {step_count(shape)} near-to-far passes "
      f"vs {shape.num_tokens} raster passes per sample\n")

report = bench(neighbor, raster, shape, batch_sizes=(1, 4), repetitions=3)
for e in report.entries:
    print(f"  {e.mode:9s} batch={e.batch_size}  "
          f"passes/sample={e.forward_passes_per_sample:3d}  "
          f"median={e.wall_s_per_sample * 1000:8.1f} ms/sample  "
          f"throughput={e.samples_per_second:6.2f} samples/s")

print("\nfull report as JSON:")
print(json.dumps(json.loads(report.to_json()), indent=2)[:400], "...")
