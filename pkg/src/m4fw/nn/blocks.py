"""Pre-norm transformer blocks (bidirectional encoder or causal decoder)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor
from .trace import OpTrace

MASK_VALUE = -1e9


@dataclass(frozen=True)
class TransformerBlockSpec:
    dim: int
    heads: int
    ffn: int
    kind: str = "encoder"  # "encoder" (bidirectional) or "decoder" (causal)

    def __post_init__(self):
        if self.dim % self.heads:
            raise ValueError("model dim must be divisible by heads")
        if self.kind not in ("encoder", "decoder"):
            raise ValueError(f"unknown block kind: {self.kind}")

    @property
    def head_dim(self) -> int:
        return self.dim // self.heads


# weight names; matrices are stored (d_in, d_out) so activations multiply on the right
BLOCK_WEIGHTS = ("ln1_g", "ln1_b", "wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo",
                 "ln2_g", "ln2_b", "w1", "b1", "w2", "b2")


def init_block(spec: TransformerBlockSpec, rng: np.random.Generator) -> dict[str, np.ndarray]:
    d, f = spec.dim, spec.ffn

    def lin(i, o):
        return rng.normal(0.0, 1.0 / np.sqrt(i), size=(i, o))

    return {
        "ln1_g": np.ones(d), "ln1_b": np.zeros(d),
        "wq": lin(d, d), "bq": np.zeros(d),
        "wk": lin(d, d), "bk": np.zeros(d),
        "wv": lin(d, d), "bv": np.zeros(d),
        "wo": lin(d, d) * 0.5, "bo": np.zeros(d),
        "ln2_g": np.ones(d), "ln2_b": np.zeros(d),
        "w1": lin(d, f), "b1": np.zeros(f),
        "w2": lin(f, d) * 0.5, "b2": np.zeros(d),
    }


def identity_block(spec: TransformerBlockSpec) -> dict[str, np.ndarray]:
    """Identity attention projections and a zeroed output path: forward is the residual."""
    d, f = spec.dim, spec.ffn
    eye = np.eye(d)
    return {
        "ln1_g": np.ones(d), "ln1_b": np.zeros(d),
        "wq": eye.copy(), "bq": np.zeros(d), "wk": eye.copy(), "bk": np.zeros(d),
        "wv": eye.copy(), "bv": np.zeros(d), "wo": np.zeros((d, d)), "bo": np.zeros(d),
        "ln2_g": np.ones(d), "ln2_b": np.zeros(d),
        "w1": np.zeros((d, f)), "b1": np.zeros(f), "w2": np.zeros((f, d)), "b2": np.zeros(d),
    }


def _linear(x, w, b, trace, lora=None):
    y = T.add(T.matmul(x, w, trace), b, trace)
    if lora is not None:
        a, bmat, s = lora  # a: (r, d_in), bmat: (d_out, r)
        delta = T.matmul(T.matmul(x, T.transpose(a, trace), trace), T.transpose(bmat, trace), trace)
        y = T.add(y, T.scale(delta, s, trace), trace)
    return y


def _split_heads(x: Tensor, heads: int) -> Tensor:
    *lead, t, d = x.shape
    hd = d // heads

    def fwd(a):
        return np.swapaxes(a.reshape(*lead, t, heads, hd), -2, -3)

    def inv(g):
        return np.swapaxes(g, -2, -3).reshape(*lead, t, d)

    return T.view(x, fwd, inv)


def _merge_heads(x: Tensor) -> Tensor:
    *lead, h, t, hd = x.shape

    def fwd(a):
        return np.swapaxes(a, -2, -3).reshape(*lead, t, h * hd)

    def inv(g):
        return np.swapaxes(g.reshape(*lead, t, h, hd), -2, -3)

    return T.view(x, fwd, inv)


def block_forward(spec: TransformerBlockSpec, weights: dict, x, trace: OpTrace | None = None,
                  lora: dict | None = None, key_mask: np.ndarray | None = None) -> Tensor:
    """One pre-norm block: x + MHA(LN(x)), then h + FFN(LN(h)).

    ``lora`` maps "query"/"value" to (A, B, scaling) low-rank bypasses.
    ``key_mask`` (batch, tokens) marks padding keys with False.
    """
    x = T.as_tensor(x)
    if x.shape[-1] != spec.dim:
        raise ValueError(f"dimension mismatch: input has {x.shape[-1]} features, block expects {spec.dim}")
    lora = lora or {}
    w = weights
    t = x.shape[-2]

    h = T.layer_norm(x, w["ln1_g"], w["ln1_b"], trace=trace)
    q = _linear(h, w["wq"], w["bq"], trace, lora.get("query"))
    k = _linear(h, w["wk"], w["bk"], trace)
    v = _linear(h, w["wv"], w["bv"], trace, lora.get("value"))
    q, k, v = (_split_heads(z, spec.heads) for z in (q, k, v))
    scores = T.scale(T.matmul(q, T.transpose(k, trace), trace), 1.0 / np.sqrt(spec.head_dim), trace)
    mask = None
    if spec.kind == "decoder":
        mask = np.triu(np.full((t, t), MASK_VALUE), k=1)
    if key_mask is not None:
        km = np.where(np.asarray(key_mask, dtype=bool), 0.0, MASK_VALUE)[..., None, None, :]
        mask = km if mask is None else mask + km
    if mask is not None:
        scores = T.add(scores, mask, trace)
    attn = T.softmax(scores, trace)
    ctx = _merge_heads(T.matmul(attn, v, trace))
    x = T.add(x, _linear(ctx, w["wo"], w["bo"], trace), trace)

    h = T.layer_norm(x, w["ln2_g"], w["ln2_b"], trace=trace)
    h = T.gelu(_linear(h, w["w1"], w["b1"], trace), trace)
    h = _linear(h, w["w2"], w["b2"], trace)
    return T.add(x, h, trace)
