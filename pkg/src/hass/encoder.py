"""Hybrid attention encoder: an intra-channel block followed by an inter-channel block.

Layout conventions (per sample, a leading batch axis is allowed everywhere):

* input ``I`` is ``C x T x D``;
* the intra-channel block attends across channels: tokens are the ``C``
  channels, each embedded as its flattened ``T*D`` time series;
* the inter-channel block attends across time slices: tokens are the ``T``
  slices, each embedded as its ``C*D`` cross-channel vector.

Inside a block the working matrix is ``embedding x tokens``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

DEFAULT_EPS = 1e-5


@dataclass
class AttentionParams:
    w_q: list[Tensor]
    b_q: list[Tensor]
    w_k: list[Tensor]
    b_k: list[Tensor]
    w_v: list[Tensor]
    b_v: list[Tensor]
    w_o: Tensor
    b_o: Tensor

    def __post_init__(self):
        m = len(self.w_q)
        if m < 1 or not all(len(x) == m for x in (self.b_q, self.w_k, self.b_k, self.w_v, self.b_v)):
            raise ValueError("attention params need exactly m (Q, K, V) projection triples")
        d_k, d_v = self.w_q[0].shape[1], self.w_v[0].shape[1]
        if d_k % m or d_v % m:
            raise ValueError(f"head count {m} must divide d_k={d_k} and d_v={d_v}")
        for n in range(m):
            for w, b, d in ((self.w_q[n], self.b_q[n], d_k), (self.w_k[n], self.b_k[n], d_k),
                            (self.w_v[n], self.b_v[n], d_v)):
                if w.shape != (d // m, d) or b.shape != (d // m,):
                    raise ValueError(f"head {n}: projection shape {w.shape}/{b.shape}, expected ({d // m}, {d})")
        if self.w_o.shape != (d_v, d_v) or self.b_o.shape != (d_v,):
            raise ValueError(f"output projection must be ({d_v}, {d_v}), got {self.w_o.shape}")

    @property
    def heads(self) -> int:
        return len(self.w_q)

    @property
    def d_k(self) -> int:
        return self.w_q[0].shape[1]

    @property
    def d_v(self) -> int:
        return self.w_v[0].shape[1]

    def named(self) -> dict[str, Tensor]:
        out = {}
        for n in range(self.heads):
            for key in ("w_q", "b_q", "w_k", "b_k", "w_v", "b_v"):
                out[f"{key}.{n}"] = getattr(self, key)[n]
        out["w_o"] = self.w_o
        out["b_o"] = self.b_o
        return out


@dataclass
class FfnParams:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    def __post_init__(self):
        d_f, D = self.w1.shape
        if self.b1.shape != (d_f,) or self.w2.shape != (D, d_f) or self.b2.shape != (D,):
            raise ValueError(
                f"ffn shapes disagree: w1 {self.w1.shape}, b1 {self.b1.shape}, "
                f"w2 {self.w2.shape}, b2 {self.b2.shape}"
            )

    def named(self) -> dict[str, Tensor]:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}


@dataclass
class LayerNormParams:
    gain: Tensor
    bias: Tensor
    eps: float = DEFAULT_EPS

    def __post_init__(self):
        if self.eps <= 0:
            raise ValueError("layer norm eps must be positive")
        if self.gain.ndim != 1 or self.gain.shape != self.bias.shape:
            raise ValueError("layer norm gain and bias must be vectors of equal length")

    def named(self) -> dict[str, Tensor]:
        return {"gain": self.gain, "bias": self.bias}


@dataclass
class BlockParams:
    attn: AttentionParams
    ffn: FfnParams
    ln1: LayerNormParams
    ln2: LayerNormParams

    def __post_init__(self):
        D = self.attn.d_k
        if self.attn.d_v != D or self.ffn.w1.shape[1] != D or self.ln1.gain.shape != (D,) \
                or self.ln2.gain.shape != (D,):
            raise ValueError(f"block sub-parameters disagree on embedding dim {D}")

    @property
    def dim(self) -> int:
        return self.attn.d_k

    def named(self) -> dict[str, Tensor]:
        out = {}
        for part in ("attn", "ffn", "ln1", "ln2"):
            for k, v in getattr(self, part).named().items():
                out[f"{part}.{k}"] = v
        return out


@dataclass
class HassEncoderParams:
    intra: BlockParams
    inter: BlockParams
    depth: int = 1

    def __post_init__(self):
        # intra embeds T*D, inter embeds C*D
        if self.depth < 1 or self.intra.dim % self.depth or self.inter.dim % self.depth:
            raise ValueError(
                f"block dims {self.intra.dim}, {self.inter.dim} not divisible by depth {self.depth}"
            )
        if any(a is b for a in self.intra.named().values() for b in self.inter.named().values()):
            raise ValueError("intra and inter blocks must not share tensors")

    @property
    def channels(self) -> int:
        return self.inter.dim // self.depth

    @property
    def timesteps(self) -> int:
        return self.intra.dim // self.depth

    @property
    def input_shape(self) -> tuple[int, int, int]:
        return self.channels, self.timesteps, self.depth

    def named(self) -> dict[str, Tensor]:
        out = {}
        for block in ("intra", "inter"):
            for k, v in getattr(self, block).named().items():
                out[f"{block}.{k}"] = v
        return out

    def tensors(self) -> list[Tensor]:
        return list(self.named().values())


# ---------------------------------------------------------------- operations


def dot_product_attention(Q: Tensor, K: Tensor, V: Tensor, params: AttentionParams,
                          return_weights: bool = False):
    """Multi-head dot-product attention on ``d x N`` inputs (optionally batched).

    Each head projects Q, K, V to ``d/m`` rows, forms
    ``A = softmax_rows(Q_n^T K_n / sqrt(d_k / m))`` and contributes ``V_n A^T``;
    the heads are stacked in order and mapped through ``W_O`` plus ``b_O``.
    """
    m, d_k, d_v = params.heads, params.d_k, params.d_v
    if Q.shape[-2] != d_k or K.shape[-2] != d_k or V.shape[-2] != d_v:
        raise ValueError(
            f"attention expects d_k={d_k}, d_v={d_v}; got Q {Q.shape}, K {K.shape}, V {V.shape}"
        )
    if not (Q.shape[-1] == K.shape[-1] == V.shape[-1]):
        raise ValueError(f"token counts differ: Q {Q.shape}, K {K.shape}, V {V.shape}")
    scale = 1.0 / math.sqrt(d_k / m)
    heads, weights = [], []
    for n in range(m):
        q = ad.add_bias_broadcast(ad.matmul(params.w_q[n], Q), params.b_q[n])
        k = ad.add_bias_broadcast(ad.matmul(params.w_k[n], K), params.b_k[n])
        v = ad.add_bias_broadcast(ad.matmul(params.w_v[n], V), params.b_v[n])
        a = ad.softmax_rows(ad.scale(ad.matmul(ad.transpose(q), k), scale))
        heads.append(ad.matmul(v, ad.transpose(a)))
        weights.append(a)
    stacked = heads[0] if m == 1 else ad.concat(heads, axis=-2)
    out = ad.add_bias_broadcast(ad.matmul(params.w_o, stacked), params.b_o)
    return (out, weights) if return_weights else out


def ffn(x: Tensor, params: FfnParams) -> Tensor:
    """Two dense layers with a ReLU between, applied to every column of ``x``."""
    if x.shape[-2] != params.w1.shape[1]:
        raise ValueError(f"ffn expects {params.w1.shape[1]} rows, got {x.shape}")
    h = ad.relu(ad.add_bias_broadcast(ad.matmul(params.w1, x), params.b1))
    return ad.add_bias_broadcast(ad.matmul(params.w2, h), params.b2)


def _block(x: Tensor, p: BlockParams) -> Tensor:
    f = ad.layer_norm(ad.add(x, dot_product_attention(x, x, x, p.attn)), p.ln1.gain, p.ln1.bias, p.ln1.eps)
    return ad.layer_norm(ad.add(f, ffn(f, p.ffn)), p.ln2.gain, p.ln2.bias, p.ln2.eps)


def intra_channel_block(I: Tensor, params: HassEncoderParams | BlockParams) -> Tensor:
    """Self-attention across channels; returns a tensor shaped like ``I``."""
    p = params.intra if isinstance(params, HassEncoderParams) else params
    if I.ndim not in (3, 4):
        raise ValueError(f"intra block: input must be C x T x D (optionally batched), got {I.shape}")
    C, T, D = I.shape[-3:]
    if T * D != p.dim:
        raise ValueError(f"intra block: T*D = {T * D} but parameters expect {p.dim}")
    lead = I.shape[:-3]
    x = ad.transpose(ad.reshape(I, (*lead, C, T * D)))       # (.., T*D, C)
    y = _block(x, p)
    return ad.reshape(ad.transpose(y), (*lead, C, T, D))


def inter_channel_block(F: Tensor, params: HassEncoderParams | BlockParams) -> Tensor:
    """Self-attention across time slices; returns a tensor shaped like ``F``."""
    p = params.inter if isinstance(params, HassEncoderParams) else params
    if F.ndim not in (3, 4):
        raise ValueError(f"inter block: input must be C x T x D (optionally batched), got {F.shape}")
    C, T, D = F.shape[-3:]
    if C * D != p.dim:
        raise ValueError(f"inter block: C*D = {C * D} but parameters expect {p.dim}")
    lead = F.shape[:-3]
    nb = len(lead)
    swap = (*range(nb), nb + 1, nb, nb + 2)                   # C,T,D <-> T,C,D
    x = ad.transpose(ad.reshape(ad.transpose(F, swap), (*lead, T, C * D)))   # (.., C*D, T)
    y = _block(x, p)
    return ad.transpose(ad.reshape(ad.transpose(y), (*lead, T, C, D)), swap)


def encode(I: Tensor, params: HassEncoderParams) -> Tensor:
    return inter_channel_block(intra_channel_block(I, params), params)


# ---------------------------------------------------------------- init


def glorot(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (rows + cols))
    return rng.uniform(-limit, limit, size=(rows, cols))


def default_heads(dim: int) -> int:
    return 2 if dim % 2 == 0 else 1


def _init_block(rng: np.random.Generator, dim: int, heads: int, d_f: int) -> BlockParams:
    h = dim // heads
    mats = {key: [] for key in ("w_q", "b_q", "w_k", "b_k", "w_v", "b_v")}
    for _ in range(heads):
        for w, b in (("w_q", "b_q"), ("w_k", "b_k"), ("w_v", "b_v")):
            mats[w].append(Tensor(glorot(rng, h, dim)))
            mats[b].append(Tensor(np.zeros(h)))
    attn = AttentionParams(**mats, w_o=Tensor(glorot(rng, dim, dim)), b_o=Tensor(np.zeros(dim)))
    ff = FfnParams(Tensor(glorot(rng, d_f, dim)), Tensor(np.zeros(d_f)),
                   Tensor(glorot(rng, dim, d_f)), Tensor(np.zeros(dim)))
    ln = [LayerNormParams(Tensor(np.ones(dim)), Tensor(np.zeros(dim))) for _ in range(2)]
    return BlockParams(attn, ff, *ln)


def init_encoder(channels: int, timesteps: int, depth: int = 1, heads_intra: int | None = None,
                 heads_inter: int | None = None, d_f_intra: int | None = None,
                 d_f_inter: int | None = None, seed: int | np.random.Generator = 0) -> HassEncoderParams:
    """Glorot-uniform weights, zero biases, identity layer-norm affine.

    Head counts default to 2 when the block dim is even, else 1; FFN widths
    default to 4x the block dim.
    """
    for name, v in (("channels", channels), ("timesteps", timesteps), ("depth", depth)):
        if v < 1:
            raise ValueError(f"{name} must be >= 1, got {v}")
    d_intra, d_inter = timesteps * depth, channels * depth
    m_intra = heads_intra or default_heads(d_intra)
    m_inter = heads_inter or default_heads(d_inter)
    if m_intra < 1 or d_intra % m_intra:
        raise ValueError(f"intra heads {m_intra} must divide T*D = {d_intra}")
    if m_inter < 1 or d_inter % m_inter:
        raise ValueError(f"inter heads {m_inter} must divide C*D = {d_inter}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    intra = _init_block(rng, d_intra, m_intra, d_f_intra or 4 * d_intra)
    inter = _init_block(rng, d_inter, m_inter, d_f_inter or 4 * d_inter)
    return HassEncoderParams(intra, inter, depth)


def encoder_from_named(tensors: dict[str, Tensor], depth: int = 1, eps: float = DEFAULT_EPS) -> HassEncoderParams:
    """Rebuild encoder params from ``intra.*`` / ``inter.*`` names (as produced by ``named()``)."""
    blocks = {}
    for block in ("intra", "inter"):
        get = lambda k: tensors[f"{block}.{k}"]  # noqa: E731
        m = 0
        while f"{block}.attn.w_q.{m}" in tensors:
            m += 1
        if m == 0:
            raise KeyError(f"no {block} attention heads found")
        per_head = {key: [get(f"attn.{key}.{n}") for n in range(m)]
                    for key in ("w_q", "b_q", "w_k", "b_k", "w_v", "b_v")}
        attn = AttentionParams(**per_head, w_o=get("attn.w_o"), b_o=get("attn.b_o"))
        ff = FfnParams(get("ffn.w1"), get("ffn.b1"), get("ffn.w2"), get("ffn.b2"))
        ln1 = LayerNormParams(get("ln1.gain"), get("ln1.bias"), eps)
        ln2 = LayerNormParams(get("ln2.gain"), get("ln2.bias"), eps)
        blocks[block] = BlockParams(attn, ff, ln1, ln2)
    return HassEncoderParams(blocks["intra"], blocks["inter"], depth)
