"""
Decoding schedules and attention masks
======================================

A near-to-far decoder emits every grid position in ascending Manhattan
distance from the origin, one wavefront per forward pass.  This script
prints the schedule for a small 2D grid, shows why the pass count is so
much smaller than one-token-at-a-time decoding, and renders the
attention mask that keeps training consistent with that order.
"""

import numpy as np

from neighborgen import (GridShape, build_mask, build_raster_mask,
                         build_schedule, serialize_mask, serialize_schedule,
                         step_count, target_table)

# ---------------------------------------------------------------------------
# The schedule: wavefronts of constant Manhattan distance
# ---------------------------------------------------------------------------
shape = GridShape((4, 4))
schedule = build_schedule(shape)
print(serialize_schedule(schedule))

# A step index per cell makes the diagonal wavefronts easy to see:
steps = np.empty(shape.dims, dtype=int)
for pos in schedule.order:
    steps[pos] = schedule.step_of[pos]
print("\nstep index per cell:")
print(steps)

# One forward pass per wavefront: (sum of dims) - ndim + 1 passes total.
for dims in ((16, 16), (4, 16, 16)):
    s = GridShape(dims)
    print(f"\n{s}: {step_count(s)} passes near-to-far "
          f"vs {s.num_tokens} raster passes")

# ---------------------------------------------------------------------------
# The training routes: one prediction per grid edge
# ---------------------------------------------------------------------------
# Every token supervises its +1 neighbor along each axis through that
# axis's decoding head; the condition token supervises the origin.
table = target_table(schedule)
print(f"\n{len(table)} supervised routes on {shape} "
      f"(first five: {table[:5]})")

# ---------------------------------------------------------------------------
# The mask: causal across steps, bidirectional within a step
# ---------------------------------------------------------------------------
small = build_schedule(GridShape((3, 3)))
print(f"\nattention mask for {small.shape} "
      "(row = query slot, col = key slot, slot 0 = condition):")
print(serialize_mask(build_mask(small)))

print("raster baseline mask for the same grid (strictly causal):")
print(serialize_mask(build_raster_mask(small.shape.num_tokens)))
