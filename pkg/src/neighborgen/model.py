"""Toy decoder-only transformer with per-axis decoding heads.

Two modes:
  * "neighbor": backbone under the proximity-aware mask, one decoding head
    per grid axis (each a transformer block plus an output projection);
    every head predicts the next token along its axis.
  * "raster": same backbone under a plain causal mask with a single
    next-token head, used as the controlled baseline.

Training forwards run on the autodiff engine; inference forwards are plain
numpy with a KV cache.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from . import tensor as T
from .grid import (AttentionMask, GridShape, Schedule, build_mask,
                   build_raster_mask, build_schedule, target_table)

NEIGHBOR = "neighbor"
RASTER = "raster"

CKPT_MAGIC = b"NARCKPT1"


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    num_classes: int
    embed_dim: int
    num_blocks: int
    num_attn_heads: int
    shape: GridShape
    mode: str = NEIGHBOR
    shared_head: bool = False  # ablation: one head serves every axis
    dropout: float = 0.0

    def __post_init__(self):
        if self.mode not in (NEIGHBOR, RASTER):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.embed_dim % self.num_attn_heads != 0:
            raise ValueError("embed_dim must be divisible by num_attn_heads")
        if min(self.vocab_size, self.num_classes, self.embed_dim,
               self.num_blocks, self.num_attn_heads) < 1:
            raise ValueError("all config counts must be positive")

    @property
    def num_decode_heads(self) -> int:
        if self.mode == RASTER or self.shared_head:
            return 1
        return self.shape.ndim

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.num_attn_heads

    @property
    def null_class(self) -> int:
        """Id of the learned null-class row (for classifier-free guidance)."""
        return self.num_classes

    def head_for_axis(self, axis: int) -> int:
        return 0 if (self.mode == RASTER or self.shared_head) else axis

    def to_json(self) -> str:
        d = asdict(self)
        d["shape"] = list(self.shape.dims)
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ModelConfig":
        d = json.loads(text)
        d["shape"] = GridShape(tuple(d["shape"]))
        return cls(**d)


def _block_param_shapes(cfg: ModelConfig):
    d = cfg.embed_dim
    return [
        ("ln1_g", (d,)), ("ln1_b", (d,)),
        ("w_qkv", (d, 3 * d)), ("b_qkv", (3 * d,)),
        ("w_o", (d, d)), ("b_o", (d,)),
        ("ln2_g", (d,)), ("ln2_b", (d,)),
        ("w_fc1", (d, 4 * d)), ("b_fc1", (4 * d,)),
        ("w_fc2", (4 * d, d)), ("b_fc2", (d,)),
    ]


def param_shapes(cfg: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Parameter names and shapes in checkpoint declaration order."""
    d = cfg.embed_dim
    shapes = [
        ("tok_emb", (cfg.vocab_size, d)),
        ("cls_emb", (cfg.num_classes + 1, d)),  # +1 null-class row for CFG
        ("cond_pos", (d,)),
    ]
    for a, n in enumerate(cfg.shape.dims):
        shapes.append((f"pos{a}", (n, d)))
    for i in range(cfg.num_blocks):
        shapes += [(f"bb{i}.{n}", s) for n, s in _block_param_shapes(cfg)]
    for h in range(cfg.num_decode_heads):
        shapes += [(f"head{h}.{n}", s) for n, s in _block_param_shapes(cfg)]
        shapes += [
            (f"head{h}.lnf_g", (d,)), (f"head{h}.lnf_b", (d,)),
            (f"head{h}.w_out", (d, cfg.vocab_size)),
            (f"head{h}.b_out", (cfg.vocab_size,)),
        ]
    return shapes


def param_count(cfg: ModelConfig) -> int:
    return sum(int(np.prod(s)) for _, s in param_shapes(cfg))


@dataclass
class ModelParams:
    config: ModelConfig
    tensors: dict[str, T.Tensor]

    def __getitem__(self, name: str) -> T.Tensor:
        return self.tensors[name]

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.tensors.items()}


def init_model(cfg: ModelConfig, seed: int = 0) -> ModelParams:
    """Deterministic init: scaled normal projections, zero biases.

    Head output projections start at zero so an untrained model predicts the
    uniform distribution (loss == ln vocab).  Residual-branch output
    projections are shrunk by 1/sqrt(2 * num_blocks).
    """
    rng = np.random.default_rng(seed)
    std = 0.02
    resid_std = std / math.sqrt(2.0 * cfg.num_blocks)
    tensors = {}
    for name, shape in param_shapes(cfg):
        leaf = name.rsplit(".", 1)[-1]
        if leaf.startswith(("ln1_g", "ln2_g", "lnf_g")):
            data = np.ones(shape, dtype=np.float32)
        elif leaf.startswith("b_") or leaf.endswith("_b") or leaf == "cond_pos":
            data = np.zeros(shape, dtype=np.float32)
        elif leaf == "w_out":
            data = np.zeros(shape, dtype=np.float32)
        elif leaf in ("w_o", "w_fc2"):
            data = rng.normal(0.0, resid_std, shape).astype(np.float32)
        else:
            data = rng.normal(0.0, std, shape).astype(np.float32)
        tensors[name] = T.Tensor(data)
    return ModelParams(config=cfg, tensors=tensors)


# ---------------------------------------------------------------------------
# training forward (autodiff graph)
# ---------------------------------------------------------------------------


def _block_train(p: ModelParams, prefix: str, x: T.Tensor,
                 bias: np.ndarray, n_heads: int) -> T.Tensor:
    """Pre-norm transformer block: x + attn(ln(x)); x + mlp(ln(x))."""
    B, S, D = x.shape
    dh = D // n_heads
    h = T.layernorm(x, p[f"{prefix}.ln1_g"], p[f"{prefix}.ln1_b"])
    qkv = T.add(T.matmul(h, p[f"{prefix}.w_qkv"]), p[f"{prefix}.b_qkv"])
    qkv = T.reshape(qkv, (B, S, 3, n_heads, dh))
    qkv = T.transpose(qkv, (2, 0, 3, 1, 4))  # (3, B, H, S, dh)
    q = T.take(qkv, np.array(0), axis=0)
    k = T.take(qkv, np.array(1), axis=0)
    v = T.take(qkv, np.array(2), axis=0)
    att = T.masked_attention(q, k, v, bias)  # (B, H, S, dh)
    att = T.reshape(T.transpose(att, (0, 2, 1, 3)), (B, S, D))
    x = T.add(x, T.add(T.matmul(att, p[f"{prefix}.w_o"]), p[f"{prefix}.b_o"]))
    h = T.layernorm(x, p[f"{prefix}.ln2_g"], p[f"{prefix}.ln2_b"])
    h = T.gelu(T.add(T.matmul(h, p[f"{prefix}.w_fc1"]), p[f"{prefix}.b_fc1"]))
    h = T.add(T.matmul(h, p[f"{prefix}.w_fc2"]), p[f"{prefix}.b_fc2"])
    return T.add(x, h)


class _SequenceLayout:
    """Cached index arrays mapping a grid to its flattened sequence."""

    def __init__(self, cfg: ModelConfig, order):
        shape = cfg.shape
        self.order = tuple(order)
        self.raster_idx = np.array(
            [int(np.ravel_multi_index(pos, shape.dims)) for pos in order],
            dtype=np.int64,
        )
        self.coords = [np.array([pos[a] for pos in order], dtype=np.int64)
                       for a in range(shape.ndim)]


def sequence_layout(cfg: ModelConfig, schedule: Schedule | None = None):
    if cfg.mode == RASTER:
        order = list(cfg.shape.positions())
    else:
        sched = schedule or build_schedule(cfg.shape)
        order = sched.order
    return _SequenceLayout(cfg, order)


def _embed_train(p: ModelParams, layout: _SequenceLayout,
                 tokens_in_order: np.ndarray, class_ids: np.ndarray) -> T.Tensor:
    cfg = p.config
    B = tokens_in_order.shape[0]
    tok = T.embedding(p["tok_emb"], tokens_in_order)  # (B, N, D)
    pos = T.embedding(p[f"pos0"], layout.coords[0])
    for a in range(1, cfg.shape.ndim):
        pos = T.add(pos, T.embedding(p[f"pos{a}"], layout.coords[a]))
    tok = T.add(tok, pos)
    cond = T.add(T.embedding(p["cls_emb"], class_ids), p["cond_pos"])
    cond = T.reshape(cond, (B, 1, cfg.embed_dim))
    return T.concat([cond, tok], axis=1)


def _backbone_and_heads(p: ModelParams, x: T.Tensor,
                        bias: np.ndarray) -> list[T.Tensor]:
    """Run backbone then every decoding head; return per-head logits."""
    cfg = p.config
    for i in range(cfg.num_blocks):
        x = _block_train(p, f"bb{i}", x, bias, cfg.num_attn_heads)
    logits = []
    for h in range(cfg.num_decode_heads):
        y = _block_train(p, f"head{h}", x, bias, cfg.num_attn_heads)
        y = T.layernorm(y, p[f"head{h}.lnf_g"], p[f"head{h}.lnf_b"])
        logits.append(T.add(T.matmul(y, p[f"head{h}.w_out"]),
                            p[f"head{h}.b_out"]))
    return logits


def _routes_by_head(cfg: ModelConfig, table):
    """Group target-table routes by decoding head: (src slots, tgt slots)."""
    by_head = [([], []) for _ in range(cfg.num_decode_heads)]
    for src, axis, tgt in table:
        h = cfg.head_for_axis(axis)
        by_head[h][0].append(src)
        by_head[h][1].append(tgt)
    return [(np.array(s, dtype=np.int64), np.array(t, dtype=np.int64))
            for s, t in by_head]


def forward_train(p: ModelParams, grids: np.ndarray, class_ids: np.ndarray,
                  schedule: Schedule, mask: AttentionMask):
    """Training loss for "neighbor" mode over a batch of grids.

    grids: (B, *shape.dims) int token grids; class_ids: (B,).  Returns
    (per-head logits (B, S, vocab), scalar loss).  The loss is the uniform
    mean of cross-entropy over every (source, axis) route in the target
    table, including the condition->origin routes, across the batch.
    """
    cfg = p.config
    if cfg.mode != NEIGHBOR:
        raise ValueError("forward_train requires neighbor mode")
    grids = np.asarray(grids)
    single = grids.ndim == cfg.shape.ndim
    if single:
        grids = grids[None]
        class_ids = np.atleast_1d(class_ids)
    if grids.shape[1:] != cfg.shape.dims:
        raise ValueError(f"grid shape {grids.shape[1:]} != config {cfg.shape.dims}")
    if np.any(class_ids < 0) or np.any(class_ids > cfg.null_class):
        raise ValueError("class id out of range")

    layout = sequence_layout(cfg, schedule)
    flat = grids.reshape(grids.shape[0], -1)
    tokens_in_order = flat[:, layout.raster_idx]
    x = _embed_train(p, layout, tokens_in_order, np.asarray(class_ids))
    logits = _backbone_and_heads(p, x, mask.bias())
    loss = _routed_loss(cfg, logits, tokens_in_order,
                        _routes_by_head(cfg, target_table(schedule)))
    return logits, loss


def raster_forward_train(p: ModelParams, grids: np.ndarray,
                         class_ids: np.ndarray):
    """Causal next-token loss for the raster baseline; one term per token."""
    cfg = p.config
    if cfg.mode != RASTER:
        raise ValueError("raster_forward_train requires raster mode")
    grids = np.asarray(grids)
    if grids.ndim == cfg.shape.ndim:
        grids = grids[None]
        class_ids = np.atleast_1d(class_ids)
    if grids.shape[1:] != cfg.shape.dims:
        raise ValueError(f"grid shape {grids.shape[1:]} != config {cfg.shape.dims}")
    layout = sequence_layout(cfg)
    tokens = grids.reshape(grids.shape[0], -1)
    mask = build_raster_mask(cfg.shape.num_tokens)
    x = _embed_train(p, layout, tokens, np.asarray(class_ids))
    logits = _backbone_and_heads(p, x, mask.bias())
    n = cfg.shape.num_tokens
    # slot i predicts token i (slot 0 is the condition)
    routes = [(np.arange(n, dtype=np.int64), np.arange(1, n + 1, dtype=np.int64))]
    loss = _routed_loss(cfg, logits, tokens, routes)
    return logits, loss


def _routed_loss(cfg, logits, tokens_in_order, routes):
    parts, targets = [], []
    for h, (src, tgt) in enumerate(routes):
        if len(src) == 0:
            continue
        sel = T.take(logits[h], src, axis=1)  # (B, Th, V)
        parts.append(T.reshape(sel, (-1, cfg.vocab_size)))
        targets.append(tokens_in_order[:, tgt - 1].reshape(-1))
    stacked = T.concat(parts, axis=0) if len(parts) > 1 else parts[0]
    return T.cross_entropy(stacked, np.concatenate(targets))


# ---------------------------------------------------------------------------
# inference (plain numpy, KV cache)
# ---------------------------------------------------------------------------


@dataclass
class KVCache:
    """Append-only per-block key/value caches for one generation."""

    keys: list[np.ndarray | None] = field(default_factory=list)
    values: list[np.ndarray | None] = field(default_factory=list)
    length: int = 0

    @classmethod
    def empty(cls, cfg: ModelConfig) -> "KVCache":
        n = cfg.num_blocks + cfg.num_decode_heads
        return cls(keys=[None] * n, values=[None] * n, length=0)


def _gelu_np(x):
    c = np.float32(math.sqrt(2.0 / math.pi))
    return 0.5 * x * (1.0 + np.tanh(c * (x + np.float32(0.044715) * x ** 3)))


def _ln_np(x, g, b, eps=1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    return xc / np.sqrt(var + np.float32(eps)) * g + b


def _block_infer(arr, prefix, x, cache: KVCache, slot, n_heads,
                 bias=None):
    """One block over m new slots, attending cache + new (all allowed
    unless an explicit bias over [cached + new] keys is given)."""
    B, m, D = x.shape
    dh = D // n_heads
    h = _ln_np(x, arr[f"{prefix}.ln1_g"], arr[f"{prefix}.ln1_b"])
    qkv = h @ arr[f"{prefix}.w_qkv"] + arr[f"{prefix}.b_qkv"]
    qkv = qkv.reshape(B, m, 3, n_heads, dh).transpose(2, 0, 3, 1, 4)
    q, k, v = qkv[0], qkv[1], qkv[2]
    if cache.keys[slot] is None:
        kf, vf = k, v
    else:
        kf = np.concatenate([cache.keys[slot], k], axis=2)
        vf = np.concatenate([cache.values[slot], v], axis=2)
    cache.keys[slot] = kf
    cache.values[slot] = vf
    scores = q @ kf.swapaxes(-1, -2) / np.float32(math.sqrt(dh))
    if bias is not None:
        scores = scores + bias
    scores -= scores.max(axis=-1, keepdims=True)
    e = np.exp(scores)
    att = (e / e.sum(axis=-1, keepdims=True)) @ vf
    att = att.transpose(0, 2, 1, 3).reshape(B, m, D)
    x = x + att @ arr[f"{prefix}.w_o"] + arr[f"{prefix}.b_o"]
    h = _ln_np(x, arr[f"{prefix}.ln2_g"], arr[f"{prefix}.ln2_b"])
    h = _gelu_np(h @ arr[f"{prefix}.w_fc1"] + arr[f"{prefix}.b_fc1"])
    return x + h @ arr[f"{prefix}.w_fc2"] + arr[f"{prefix}.b_fc2"]


def embed_condition(p: ModelParams, class_ids: np.ndarray) -> np.ndarray:
    arr = p.arrays()
    return (arr["cls_emb"][np.asarray(class_ids)] + arr["cond_pos"])[:, None, :]


def embed_tokens(p: ModelParams, token_ids: np.ndarray,
                 positions: list) -> np.ndarray:
    """Embeddings for token ids at explicit grid positions: (B, m, D)."""
    arr = p.arrays()
    e = arr["tok_emb"][np.asarray(token_ids)]
    for a in range(p.config.shape.ndim):
        coords = np.array([pos[a] for pos in positions], dtype=np.int64)
        e = e + arr[f"pos{a}"][coords]
    return e


def forward_incremental(p: ModelParams, new_embeds: np.ndarray,
                        cache: KVCache, bias=None) -> list[np.ndarray]:
    """Process m new slots against the cache; return per-head logits.

    new_embeds: (B, m, D), all slots belonging to one schedule step;
    attention is bidirectional among them and causal to the cache, so no
    mask is needed unless `bias` explicitly overrides.  Extends the cache.
    """
    cfg = p.config
    if new_embeds.ndim != 3 or new_embeds.shape[1] == 0:
        raise ValueError("need at least one new slot of shape (B, m, D)")
    if cache.keys[0] is not None:
        if cache.keys[0].shape[2] != cache.length:
            raise ValueError("cache desync: slot count mismatch")
    arr = p.arrays()
    x = new_embeds.astype(np.float32)
    for i in range(cfg.num_blocks):
        x = _block_infer(arr, f"bb{i}", x, cache, i, cfg.num_attn_heads, bias)
    logits = []
    for h in range(cfg.num_decode_heads):
        slot = cfg.num_blocks + h
        y = _block_infer(arr, f"head{h}", x, cache, slot,
                         cfg.num_attn_heads, bias)
        y = _ln_np(y, arr[f"head{h}.lnf_g"], arr[f"head{h}.lnf_b"])
        logits.append(y @ arr[f"head{h}.w_out"] + arr[f"head{h}.b_out"])
    cache.length += new_embeds.shape[1]
    return logits


def infer_logits(p: ModelParams, tokens_in_order: np.ndarray,
                 class_ids: np.ndarray, mask: AttentionMask,
                 layout=None) -> list[np.ndarray]:
    """Full-sequence no-grad forward; per-head logits (B, S, vocab).

    Used for evaluation and as the full-recompute oracle against the KV
    cache path.
    """
    cfg = p.config
    arr = p.arrays()
    layout = layout or sequence_layout(cfg)
    tok = arr["tok_emb"][tokens_in_order]
    for a in range(cfg.shape.ndim):
        tok = tok + arr[f"pos{a}"][layout.coords[a]]
    cond = (arr["cls_emb"][np.asarray(class_ids)] + arr["cond_pos"])[:, None, :]
    x = np.concatenate([cond, tok], axis=1)
    bias = mask.bias()
    cache = KVCache.empty(cfg)  # holds nothing; bias does the masking
    n_heads = cfg.num_attn_heads
    for i in range(cfg.num_blocks):
        x = _block_infer(arr, f"bb{i}", x, cache, i, n_heads, bias)
        cache.keys[i] = None
        cache.values[i] = None
    logits = []
    for h in range(cfg.num_decode_heads):
        slot = cfg.num_blocks + h
        y = _block_infer(arr, f"head{h}", x, cache, slot, n_heads, bias)
        cache.keys[slot] = None
        cache.values[slot] = None
        y = _ln_np(y, arr[f"head{h}.lnf_g"], arr[f"head{h}.lnf_b"])
        logits.append(y @ arr[f"head{h}.w_out"] + arr[f"head{h}.b_out"])
    return logits


# ---------------------------------------------------------------------------
# checkpoint format
# ---------------------------------------------------------------------------

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def fnv1a64(data: bytes, h: int = _FNV_OFFSET) -> int:
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


class CheckpointError(RuntimeError):
    """Corrupt or mismatched checkpoint file."""


def save_checkpoint(p: ModelParams, path) -> None:
    """NARCKPT1 | u32 config length | config JSON | f32 LE tensors | FNV-1a64."""
    cfg_bytes = p.config.to_json().encode("utf-8")
    payload = bytearray()
    payload += len(cfg_bytes).to_bytes(4, "little")
    payload += cfg_bytes
    for name, _ in param_shapes(p.config):
        payload += p[name].data.astype("<f4").tobytes()
    digest = fnv1a64(bytes(payload))
    with open(path, "wb") as f:
        f.write(CKPT_MAGIC)
        f.write(payload)
        f.write(digest.to_bytes(8, "little"))


def load_checkpoint(path) -> ModelParams:
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < len(CKPT_MAGIC) + 12 or not blob.startswith(CKPT_MAGIC):
        raise CheckpointError("not a checkpoint file (bad magic)")
    payload, tail = blob[len(CKPT_MAGIC):-8], blob[-8:]
    if fnv1a64(payload) != int.from_bytes(tail, "little"):
        raise CheckpointError("checksum mismatch")
    cfg_len = int.from_bytes(payload[:4], "little")
    try:
        cfg = ModelConfig.from_json(payload[4:4 + cfg_len].decode("utf-8"))
    except (ValueError, KeyError, TypeError) as e:
        raise CheckpointError(f"bad config: {e}") from None
    offset = 4 + cfg_len
    tensors = {}
    for name, shape in param_shapes(cfg):
        nbytes = int(np.prod(shape)) * 4
        raw = payload[offset:offset + nbytes]
        if len(raw) != nbytes:
            raise CheckpointError("truncated tensor data")
        tensors[name] = T.Tensor(
            np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
        )
        offset += nbytes
    if offset != len(payload):
        raise CheckpointError("trailing bytes after tensors")
    return ModelParams(config=cfg, tensors=tensors)
