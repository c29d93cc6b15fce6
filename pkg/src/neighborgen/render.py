"""Token-grid rendering to binary PPM (P6) images."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Palette:
    """vocab_size RGB triples, deterministic from a seed."""

    colors: np.ndarray  # (vocab, 3) uint8

    @classmethod
    def make(cls, vocab_size: int, seed: int = 0) -> "Palette":
        rng = np.random.default_rng([seed, vocab_size])
        colors = rng.integers(0, 256, size=(vocab_size, 3), dtype=np.uint8)
        colors[0] = (16, 16, 16)  # dark background for token 0
        return cls(colors=colors)

    def __len__(self):
        return len(self.colors)


def render_grid(grid: np.ndarray, palette: Palette, zoom: int = 1) -> list[bytes]:
    """PPM bytes, one pixel per token scaled by `zoom`.

    2D grids yield a single image; 3D grids yield one image per time slice.
    """
    grid = np.asarray(grid)
    if grid.max(initial=0) >= len(palette) or grid.min(initial=0) < 0:
        raise ValueError("token id out of palette range")
    if zoom < 1:
        raise ValueError("zoom must be >= 1")
    frames = grid[None] if grid.ndim == 2 else grid
    out = []
    for frame in frames:
        rgb = palette.colors[frame]  # (h, w, 3)
        rgb = np.repeat(np.repeat(rgb, zoom, axis=0), zoom, axis=1)
        h, w, _ = rgb.shape
        header = f"P6\n{w} {h}\n255\n".encode("ascii")
        out.append(header + rgb.tobytes())
    return out


def write_ppm(grid: np.ndarray, palette: Palette, path: str,
              zoom: int = 1) -> list[str]:
    """Write PPM file(s); 3D grids get zero-padded frame suffixes."""
    images = render_grid(grid, palette, zoom)
    if len(images) == 1 and grid.ndim == 2:
        with open(path, "wb") as f:
            f.write(images[0])
        return [path]
    base = path[:-4] if path.endswith(".ppm") else path
    width = max(4, len(str(len(images) - 1)))
    paths = []
    for i, img in enumerate(images):
        p = f"{base}_{i:0{width}d}.ppm"
        with open(p, "wb") as f:
            f.write(img)
        paths.append(p)
    return paths
