"""Generation loops: frontier expansion with per-axis logit routing,
overlap mixing, classifier-free guidance, and the raster baseline sampler.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .grid import GridShape, build_schedule, step_count, successors
from .model import (NEIGHBOR, RASTER, KVCache, ModelParams, embed_condition,
                    embed_tokens, forward_incremental)


@dataclass(frozen=True)
class SamplingConfig:
    temperature: float = 1.0
    top_k: int = 0  # 0 disables
    cfg_scale: float = 1.0  # paper-style defaults: 2.0 images, 1.25 video
    seed: int = 0
    greedy: bool = False  # temperature -> 0 limit (argmax)

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("temperature must be > 0")
        if self.top_k < 0:
            raise ValueError("top_k must be >= 0")
        if self.cfg_scale < 0:
            raise ValueError("cfg_scale must be >= 0")


@dataclass
class GenerationStats:
    forward_passes: int = 0
    tokens_generated: int = 0
    step_wall_ms: list[float] = field(default_factory=list)


def log_softmax(x: np.ndarray) -> np.ndarray:
    m = x.max(axis=-1, keepdims=True)
    z = x - m
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def mix_logits(contributions: list[np.ndarray]) -> np.ndarray:
    """Log-domain ensemble: mean of log-softmax-normalized contributions.

    Normalizing first means heads with different logit scales contribute
    equally; the result is a valid unnormalized log-distribution.
    """
    if len(contributions) == 0:
        raise ValueError("need at least one contribution")
    n = len(contributions[0])
    if any(len(c) != n for c in contributions):
        raise ValueError("contribution length mismatch")
    acc = np.zeros(n, dtype=np.float64)
    for c in contributions:
        acc += log_softmax(np.asarray(c, dtype=np.float64))
    return acc / len(contributions)


def apply_cfg(cond: np.ndarray, uncond: np.ndarray, scale: float) -> np.ndarray:
    """Classifier-free guidance: uncond + scale * (cond - uncond).

    scale 1 returns cond exactly and scale 0 returns uncond exactly, so both
    endpoints are bitwise-faithful.
    """
    cond = np.asarray(cond)
    uncond = np.asarray(uncond)
    if cond.shape != uncond.shape:
        raise ValueError("cond/uncond length mismatch")
    if scale == 1.0:
        return cond.copy()
    if scale == 0.0:
        return uncond.copy()
    return uncond + scale * (cond - uncond)


def sample_token(logits: np.ndarray, config: SamplingConfig, rng) -> int:
    """Temperature / top-k categorical sampling; greedy takes the argmax."""
    logits = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(logits)):
        raise ValueError("non-finite logits")
    if config.greedy or config.top_k == 1:
        return int(np.argmax(logits))
    x = logits / config.temperature
    if config.top_k > 0 and config.top_k < len(x):
        kth = np.partition(x, -config.top_k)[-config.top_k]
        x = np.where(x < kth, -np.inf, x)
    x = x - x.max()
    p = np.exp(x)
    p /= p.sum()
    u = rng.random()
    return int(np.searchsorted(np.cumsum(p), u, side="right").clip(0, len(p) - 1))


def _pos_rng(seed: int, step: int, flat_index: int):
    """Counter-based RNG keyed by (seed, step, position): evaluation order
    of positions within a step cannot change the sampled tokens."""
    return np.random.default_rng([seed, step, flat_index])


def generate(params: ModelParams, class_id: int, shape: GridShape,
             config: SamplingConfig, schedule=None):
    """Near-to-far generation: one forward pass per Manhattan-distance step.

    Pass 1 feeds the condition slot (plus a null-class twin when guidance is
    active) and predicts the origin through all heads, mixed.  Pass s >= 2
    feeds the step-(s-2) tokens, routes each per-axis prediction to its
    target, guides each contribution, mixes per target, and samples all
    step-(s-1) tokens.  Returns (token grid, GenerationStats).
    """
    cfg = params.config
    if cfg.mode != NEIGHBOR:
        raise ValueError("generate requires a neighbor-mode model")
    if shape != cfg.shape:
        raise ValueError(f"shape {shape} does not match model shape {cfg.shape}")
    if not (0 <= class_id < cfg.num_classes):
        raise ValueError("class id out of range")
    schedule = schedule or build_schedule(shape)
    use_cfg = config.cfg_scale != 1.0
    class_ids = [class_id, cfg.null_class] if use_cfg else [class_id]

    grid = np.zeros(shape.dims, dtype=np.int64)
    stats = GenerationStats()
    cache = KVCache.empty(cfg)
    axes = range(shape.ndim)

    def guided(head_logits, row):
        if use_cfg:
            return apply_cfg(head_logits[0, row], head_logits[1, row],
                             config.cfg_scale)
        return head_logits[0, row]

    t0 = time.perf_counter()
    logits = forward_incremental(params, embed_condition(params, class_ids),
                                 cache)
    stats.forward_passes += 1
    origin = schedule.order[0]
    contribs = [guided(logits[cfg.head_for_axis(a)], 0) for a in axes]
    grid[origin] = sample_token(
        mix_logits(contribs), config,
        _pos_rng(config.seed, 0, _flat(origin, shape)))
    stats.tokens_generated += 1
    stats.step_wall_ms.append((time.perf_counter() - t0) * 1000)

    for s in range(1, schedule.num_steps):
        t0 = time.perf_counter()
        prev = schedule.step_positions(s - 1)
        ids = np.array([grid[p] for p in prev], dtype=np.int64)
        emb = embed_tokens(params, ids, list(prev))
        logits = forward_incremental(
            params, np.repeat(emb[None], len(class_ids), axis=0), cache)
        stats.forward_passes += 1
        pending: dict = {}
        for j, p in enumerate(prev):
            for q, axis in successors(p, shape):
                if schedule.step_of[q] != s:
                    continue
                pending.setdefault(q, []).append(
                    guided(logits[cfg.head_for_axis(axis)], j))
        for q in schedule.step_positions(s):
            grid[q] = sample_token(
                mix_logits(pending[q]), config,
                _pos_rng(config.seed, s, _flat(q, shape)))
            stats.tokens_generated += 1
        stats.step_wall_ms.append((time.perf_counter() - t0) * 1000)

    assert stats.forward_passes == step_count(shape)
    return grid, stats


def generate_raster(params: ModelParams, class_id: int, shape: GridShape,
                    config: SamplingConfig):
    """Raster baseline: one forward pass per token."""
    cfg = params.config
    if cfg.mode != RASTER:
        raise ValueError("generate_raster requires a raster-mode model")
    if shape != cfg.shape:
        raise ValueError(f"shape {shape} does not match model shape {cfg.shape}")
    if not (0 <= class_id < cfg.num_classes):
        raise ValueError("class id out of range")
    use_cfg = config.cfg_scale != 1.0
    class_ids = [class_id, cfg.null_class] if use_cfg else [class_id]
    order = list(shape.positions())
    grid = np.zeros(shape.dims, dtype=np.int64)
    stats = GenerationStats()
    cache = KVCache.empty(cfg)

    def guided(head_logits):
        if use_cfg:
            return apply_cfg(head_logits[0, 0], head_logits[1, 0],
                             config.cfg_scale)
        return head_logits[0, 0]

    x = embed_condition(params, class_ids)
    for i, pos in enumerate(order):
        t0 = time.perf_counter()
        logits = forward_incremental(params, x, cache)
        stats.forward_passes += 1
        grid[pos] = sample_token(
            guided(logits[0]), config,
            _pos_rng(config.seed, i, _flat(pos, shape)))
        stats.tokens_generated += 1
        stats.step_wall_ms.append((time.perf_counter() - t0) * 1000)
        if i + 1 < len(order):
            e = embed_tokens(params, np.array([grid[pos]]), [pos])
            x = np.repeat(e[None], len(class_ids), axis=0)
    assert stats.forward_passes == shape.num_tokens
    return grid, stats


def _flat(pos, shape: GridShape) -> int:
    return int(np.ravel_multi_index(pos, shape.dims))
