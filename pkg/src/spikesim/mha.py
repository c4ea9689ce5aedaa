"""Spiking multi-head attention.

Queries, keys, and values are all binary spike tensors.  Per head and per
timestep the attention map is a plain coincidence count A[t] = Q[t] @ K[t].T,
so every entry lies in [0, d] where d is the head width.  There is no
softmax, no scaling, and no masking; X[t] = A[t] @ V[t] feeds the neuron
update and head outputs are concatenated along the feature axis in head
order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError
from .tensors import (
    IntegrationTensor,
    LifParams,
    SpikeTensor,
    saturate_i16,
    lif_run,
)


@dataclass(frozen=True)
class MhaConfig:
    """Head partitioning and neuron parameters for one attention layer."""

    heads: int
    d_head: int
    lif: LifParams = field(default_factory=LifParams)

    def __post_init__(self):
        if self.heads < 1:
            raise ConfigError(f"head count must be >= 1, got {self.heads}")
        if self.d_head < 1:
            raise ConfigError(f"head width must be >= 1, got {self.d_head}")

    @property
    def d_model(self) -> int:
        return self.heads * self.d_head


@dataclass(frozen=True)
class AttentionMap:
    """Per-timestep coincidence counts for one head: (t, n, n) integers in [0, d]."""

    data: np.ndarray
    d_head: int

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 3 or arr.shape[1] != arr.shape[2]:
            raise ShapeError(f"attention map must be (t, n, n), got shape {arr.shape}")
        if not np.issubdtype(arr.dtype, np.integer):
            raise ValueError("attention map entries must be integers")
        if arr.size and (arr.min() < 0 or arr.max() > self.d_head):
            raise ValueError(f"attention map entries must lie in [0, {self.d_head}]")
        arr = arr.astype(np.int32, copy=True)
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def t(self) -> int:
        return self.data.shape[0]

    @property
    def n(self) -> int:
        return self.data.shape[1]


def partition_heads(
    q: SpikeTensor, k: SpikeTensor, v: SpikeTensor, cfg: MhaConfig
) -> list[tuple[SpikeTensor, SpikeTensor, SpikeTensor]]:
    """Split the model feature axis into contiguous per-head slices."""
    for name, tensor in (("q", q), ("k", k), ("v", v)):
        if tensor.data.shape != q.data.shape:
            raise ShapeError(f"{name} shape {tensor.data.shape} does not match q {q.data.shape}")
    if q.d != cfg.d_model:
        raise ShapeError(
            f"feature width {q.d} does not equal heads*d_head = {cfg.heads}*{cfg.d_head} = {cfg.d_model}"
        )
    out = []
    for h in range(cfg.heads):
        lo, hi = h * cfg.d_head, (h + 1) * cfg.d_head
        out.append((q.feature_slice(lo, hi), k.feature_slice(lo, hi), v.feature_slice(lo, hi)))
    return out


def spiking_attention_map(q_h: SpikeTensor, k_h: SpikeTensor) -> AttentionMap:
    """Coincidence counts between query and key spikes, per timestep."""
    if q_h.data.shape != k_h.data.shape:
        raise ShapeError(f"query shape {q_h.data.shape} does not match key shape {k_h.data.shape}")
    q64 = q_h.data.astype(np.int64)
    k64 = k_h.data.astype(np.int64)
    # (t, n, d) @ (t, d, n) -> (t, n, n)
    maps = np.matmul(q64.transpose(1, 0, 2), k64.transpose(1, 2, 0))
    return AttentionMap(maps, q_h.d)


def attention_weighted_integration(a: AttentionMap, v_h: SpikeTensor) -> IntegrationTensor:
    """X[t] = A[t] @ V[t] with 16-bit saturating accumulation."""
    if a.n != v_h.n:
        raise ShapeError(f"attention map covers {a.n} tokens, values cover {v_h.n}")
    if a.t != v_h.t:
        raise ShapeError(f"attention map has {a.t} timesteps, values have {v_h.t}")
    slabs = []
    saturations = 0
    for t in range(a.t):
        acc = a.data[t].astype(np.int64) @ v_h.data[:, t, :].astype(np.int64)
        x_t, sat = saturate_i16(acc)
        slabs.append(x_t)
        saturations += sat
    return IntegrationTensor(np.stack(slabs, axis=1), saturations)


def spiking_attention_head(
    q_h: SpikeTensor, k_h: SpikeTensor, v_h: SpikeTensor, lif: LifParams
) -> SpikeTensor:
    """One head end to end: coincidence map, weighted integration, neuron update."""
    a = spiking_attention_map(q_h, k_h)
    x = attention_weighted_integration(a, v_h)
    return lif_run(x, lif)


def mha_forward(q: SpikeTensor, k: SpikeTensor, v: SpikeTensor, cfg: MhaConfig) -> SpikeTensor:
    """All heads, outputs concatenated along the feature axis in head order."""
    heads = partition_heads(q, k, v, cfg)
    outs = [spiking_attention_head(q_h, k_h, v_h, cfg.lif) for q_h, k_h, v_h in heads]
    return SpikeTensor(np.concatenate([o.data for o in outs], axis=2))
