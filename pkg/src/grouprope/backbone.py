"""Tiny fused-token transformer backbone with hand-written input gradients.

The backbone predicts a velocity over a noisy latent. Each block does four
things in a fixed order: self-attention over the latent tokens concatenated
with the auxiliary dense tokens (queries and keys rotated by their positional
phases), truncation back to the latent tokens, cross-attention to a seeded
text stub (no rotation), and a GELU feed-forward. Every sublayer carries a
residual connection. There is no normalization layer; at this scale none is
needed and its absence keeps the backward pass short.

Parameters are frozen after seeded initialization, so gradients are only ever
taken with respect to the input latent. `velocity_input_vjp` implements that
path analytically: softmax attention backward, rotation backward (multiply by
conjugate phases), GELU backward, and the patchify permutations. Dense and
text tokens are constants; their gradient contributions stop at the fused
sequence boundary.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .latents import PatchSpec, patchify, unpatchify
from .rope_core import RopeDims, from_complex_pairs, to_complex_pairs
from .synthetic import DenseTokenGrid

SQRT_2_OVER_PI = 0.7978845608028654
GELU_CUBIC = 0.044715


@dataclass(frozen=True)
class BackboneConfig:
    """Shape of the toy backbone; d_model is n_heads * d_total by construction."""

    dims: RopeDims = RopeDims()
    n_heads: int = 2
    n_blocks: int = 2
    d_ff: int = 128
    d_text: int = 32
    text_len: int = 4

    def __post_init__(self):
        if self.n_heads < 1 or self.n_blocks < 1:
            raise ValueError("need at least one head and one block")
        if self.d_ff < 1 or self.d_text < 1 or self.text_len < 1:
            raise ValueError("d_ff, d_text, text_len must be positive")

    @property
    def d_head(self) -> int:
        # one full rotary encoding per head
        return self.dims.d_total

    @property
    def d_model(self) -> int:
        return self.n_heads * self.d_head


@dataclass(frozen=True)
class BlockParams:
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    cq: np.ndarray
    ck: np.ndarray
    cv: np.ndarray
    co: np.ndarray
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray


@dataclass(frozen=True)
class BackboneParams:
    config: BackboneConfig
    w_in: np.ndarray
    b_in: np.ndarray
    w_out: np.ndarray
    b_out: np.ndarray
    blocks: tuple[BlockParams, ...]
    adapter: np.ndarray | None = None  # [d_dense, d_model] when dense width differs


def init_params(
    config: BackboneConfig, token_dim: int, seed: int, d_dense: int | None = None
) -> BackboneParams:
    """Gaussian init scaled by 1/sqrt(fan_in), fully determined by the seed."""
    rng = np.random.default_rng(seed)
    d = config.d_model

    def mat(n_in, n_out):
        return rng.standard_normal((n_in, n_out)) / np.sqrt(n_in)

    blocks = []
    for _ in range(config.n_blocks):
        blocks.append(
            BlockParams(
                wq=mat(d, d),
                wk=mat(d, d),
                wv=mat(d, d),
                wo=mat(d, d),
                cq=mat(d, d),
                ck=mat(config.d_text, d),
                cv=mat(config.d_text, d),
                co=mat(d, d),
                w1=mat(d, config.d_ff),
                b1=np.zeros(config.d_ff),
                w2=mat(config.d_ff, d),
                b2=np.zeros(d),
            )
        )
    adapter = None
    if d_dense is not None and d_dense != d:
        adapter = mat(d_dense, d)
    return BackboneParams(
        config=config,
        w_in=mat(token_dim, d),
        b_in=np.zeros(d),
        w_out=mat(d, token_dim),
        b_out=np.zeros(token_dim),
        blocks=tuple(blocks),
        adapter=adapter,
    )


def make_text_stub(caption: str, seed: int, length: int, d_text: int) -> np.ndarray:
    """Deterministic [length, d_text] embeddings from a caption hash and seed."""
    if length < 1 or d_text < 1:
        raise ValueError("length and d_text must be positive")
    digest = hashlib.sha256(caption.encode("utf-8")).digest()
    entropy = [seed & 0xFFFFFFFF] + [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)]
    rng = np.random.default_rng(entropy)
    return rng.standard_normal((length, d_text))


def tau_embedding(tau: float, d_model: int, theta: float = 10000.0) -> np.ndarray:
    """Sinusoidal scalar embedding, (sin, cos) interleaved over a frequency bank."""
    if d_model % 2:
        raise ValueError(f"d_model must be even, got {d_model}")
    half = d_model // 2
    freqs = theta ** (-np.arange(half, dtype=np.float64) / half)
    ang = tau * freqs
    out = np.empty(d_model)
    out[0::2] = np.sin(ang)
    out[1::2] = np.cos(ang)
    return out


def gelu(x: np.ndarray) -> np.ndarray:
    u = SQRT_2_OVER_PI * (x + GELU_CUBIC * x**3)
    return 0.5 * x * (1.0 + np.tanh(u))


def gelu_grad(x: np.ndarray) -> np.ndarray:
    u = SQRT_2_OVER_PI * (x + GELU_CUBIC * x**3)
    t = np.tanh(u)
    du = SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_CUBIC * x * x)
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du


def split_heads(x: np.ndarray, n_heads: int) -> np.ndarray:
    """[S, d_model] -> [n_heads, S, d_head]."""
    s, d = x.shape
    return x.reshape(s, n_heads, d // n_heads).transpose(1, 0, 2)


def merge_heads(x: np.ndarray) -> np.ndarray:
    """[n_heads, S, d_head] -> [S, n_heads * d_head]."""
    h, s, dh = x.shape
    return x.transpose(1, 0, 2).reshape(s, h * dh)


def rotate_heads(x: np.ndarray, phases: np.ndarray) -> np.ndarray:
    """Rotate [H, S, d_head] by per-token phases [S, d_head/2]."""
    return from_complex_pairs(to_complex_pairs(x) * phases[None, :, :])


def rotate_heads_grad(d_out: np.ndarray, phases: np.ndarray) -> np.ndarray:
    """VJP of rotate_heads: rotation is orthogonal, so rotate by the conjugate."""
    return from_complex_pairs(to_complex_pairs(d_out) * np.conj(phases)[None, :, :])


def attention_forward(q, k, v, scale):
    """Softmax attention batched over heads: q [H,S,d], k,v [H,L,d]."""
    z = np.einsum("hsd,hld->hsl", q, k) * scale
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)
    o = np.einsum("hsl,hld->hsd", p, v)
    return o, (q, k, v, p)


def attention_backward(d_o, cache, scale):
    q, k, v, p = cache
    dp = np.einsum("hsd,hld->hsl", d_o, v)
    dv = np.einsum("hsl,hsd->hld", p, d_o)
    dz = p * (dp - np.sum(dp * p, axis=-1, keepdims=True))
    dq = np.einsum("hsl,hld->hsd", dz, k) * scale
    dk = np.einsum("hsl,hsd->hld", dz, q) * scale
    return dq, dk, dv


def fuse_tokens(
    latent_tokens: np.ndarray,
    latent_positions: np.ndarray,
    dense: DenseTokenGrid | None,
    adapter: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray, int]:
    """Append dense tokens (and their phase rows) after the latent ones.

    Returns (fused_tokens, fused_positions, latent_count); the count is what
    a block later truncates back to. A missing or empty grid is a no-op.
    """
    s, d_model = latent_tokens.shape
    if latent_positions.shape[0] != s:
        raise ValueError(
            f"position rows {latent_positions.shape[0]} != token count {s}"
        )
    if dense is None or dense.n_tokens == 0:
        return latent_tokens, latent_positions, s

    g = dense.flat_tokens()
    if g.shape[1] != d_model:
        if adapter is None:
            raise ValueError(
                f"dense token dim {g.shape[1]} != d_model {d_model} and no adapter given"
            )
        g = g @ adapter
    pos_g = dense.flat_positions()
    if pos_g.shape[1] != latent_positions.shape[1]:
        raise ValueError(
            f"dense position width {pos_g.shape[1]} != latent {latent_positions.shape[1]}"
        )
    fused = np.concatenate([latent_tokens, g], axis=0)
    fused_pos = np.concatenate([latent_positions, pos_g], axis=0)
    return fused, fused_pos, s


def block_forward(x, positions, text, dense, adapter, blk, n_heads):
    """One block: fused rotary self-attention, truncate, cross-attn, FFN."""
    scale = 1.0 / np.sqrt(x.shape[1] // n_heads)
    fused, fpos, s = fuse_tokens(x, positions, dense, adapter)

    qh = split_heads(fused @ blk.wq, n_heads)
    kh = split_heads(fused @ blk.wk, n_heads)
    vh = split_heads(fused @ blk.wv, n_heads)
    qr = rotate_heads(qh, fpos)
    kr = rotate_heads(kh, fpos)
    o, self_cache = attention_forward(qr, kr, vh, scale)
    x1 = x + (merge_heads(o) @ blk.wo)[:s]

    cqh = split_heads(x1 @ blk.cq, n_heads)
    ckh = split_heads(text @ blk.ck, n_heads)
    cvh = split_heads(text @ blk.cv, n_heads)
    o2, cross_cache = attention_forward(cqh, ckh, cvh, scale)
    x2 = x1 + merge_heads(o2) @ blk.co

    pre = x2 @ blk.w1 + blk.b1
    x3 = x2 + gelu(pre) @ blk.w2 + blk.b2

    cache = (s, fused.shape[0], fpos, self_cache, cross_cache, pre, scale)
    return x3, cache


def block_backward(d_out, cache, blk, n_heads):
    """Input gradient of block_forward; parameters and conditioners are constant."""
    s, n_fused, fpos, self_cache, cross_cache, pre, scale = cache

    d_x2 = d_out + ((d_out @ blk.w2.T) * gelu_grad(pre)) @ blk.w1.T

    d_o2 = split_heads(d_x2 @ blk.co.T, n_heads)
    dcq, _, _ = attention_backward(d_o2, cross_cache, scale)
    d_x1 = d_x2 + merge_heads(dcq) @ blk.cq.T

    d_attn = np.zeros((n_fused, d_x1.shape[1]))
    d_attn[:s] = d_x1 @ blk.wo.T
    d_o = split_heads(d_attn, n_heads)
    dqr, dkr, dv = attention_backward(d_o, self_cache, scale)
    dq = rotate_heads_grad(dqr, fpos)
    dk = rotate_heads_grad(dkr, fpos)
    d_fused = (
        merge_heads(dq) @ blk.wq.T
        + merge_heads(dk) @ blk.wk.T
        + merge_heads(dv) @ blk.wv.T
    )
    return d_x1 + d_fused[:s]


def _run_forward(x, tau, params, positions, text, dense, spec, keep):
    t, c, h, w = x.shape
    tokens = patchify(x, spec) @ params.w_in + params.b_in
    if tokens.shape[0] != positions.shape[0]:
        raise ValueError(
            f"{tokens.shape[0]} tokens but {positions.shape[0]} position rows"
        )
    tokens = tokens + tau_embedding(tau, params.config.d_model)

    caches = []
    for blk in params.blocks:
        tokens, cache = block_forward(
            tokens, positions, text, dense, params.adapter, blk, params.config.n_heads
        )
        if keep:
            caches.append(cache)
    velocity = unpatchify(tokens @ params.w_out + params.b_out, spec, (t, c, h, w))
    return velocity, caches


def predict_velocity(
    x: np.ndarray,
    tau: float,
    params: BackboneParams,
    positions: np.ndarray,
    text: np.ndarray,
    spec: PatchSpec,
    dense: DenseTokenGrid | None = None,
) -> np.ndarray:
    """Velocity prediction with the same shape as the input latent.

    positions: flattened complex phase rows, one per latent token, matching
    the patch token grid in row-major order.
    """
    velocity, _ = _run_forward(x, tau, params, positions, text, dense, spec, keep=False)
    return velocity


def velocity_input_vjp(
    x: np.ndarray,
    tau: float,
    params: BackboneParams,
    positions: np.ndarray,
    text: np.ndarray,
    spec: PatchSpec,
    d_velocity: np.ndarray,
    dense: DenseTokenGrid | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Velocity plus the gradient of <velocity, d_velocity> w.r.t. the input."""
    if d_velocity.shape != x.shape:
        raise ValueError(
            f"cotangent shape {d_velocity.shape} != input shape {x.shape}"
        )
    velocity, caches = _run_forward(
        x, tau, params, positions, text, dense, spec, keep=True
    )
    d_tokens = patchify(d_velocity, spec) @ params.w_out.T
    for blk, cache in zip(reversed(params.blocks), reversed(caches)):
        d_tokens = block_backward(d_tokens, cache, blk, params.config.n_heads)
    d_x = unpatchify(d_tokens @ params.w_in.T, spec, x.shape)
    return velocity, d_x
