"""Backbone blocks: spatial mix (Bi-WKV aggregation), channel mix, and
feature-wise affine conditioning driven by a target-luminance embedding.

Both mixes follow pre-norm residual wiring and start as the identity:
their output matrices are zero-initialized, and the conditioning MLP's
final layer starts at zero so the affine modulation begins as (1, 0).
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import ContractViolation
from .tensor import Parameter, Tensor
from .wkv import biwkv, default_decay, softplus_inverse


def _uniform(rng, shape, scale):
    return rng.uniform(-scale, scale, size=shape)


class SpatialMixParams:
    """LN, per-path depthwise 3x3 kernels, R/K/V/O projections, wkv decay."""

    def __init__(self, c_model: int, rng, prefix: str, dtype=np.float32):
        s = 1.0 / np.sqrt(c_model)
        mk = lambda name, arr: Parameter(np.asarray(arr, dtype=dtype), f"{prefix}.{name}")
        self.ln_scale = mk("ln_scale", np.ones(c_model))
        self.ln_offset = mk("ln_offset", np.zeros(c_model))
        self.dw_r = mk("dw_r", _uniform(rng, (3, 3, c_model), s))
        self.dw_k = mk("dw_k", _uniform(rng, (3, 3, c_model), s))
        self.dw_v = mk("dw_v", _uniform(rng, (3, 3, c_model), s))
        self.w_r = mk("w_r", _uniform(rng, (c_model, c_model), s))
        self.w_k = mk("w_k", _uniform(rng, (c_model, c_model), s))
        self.w_v = mk("w_v", _uniform(rng, (c_model, c_model), s))
        self.w_o = mk("w_o", np.zeros((c_model, c_model)))
        self.wkv_w_raw = mk("wkv_w_raw", softplus_inverse(default_decay(c_model)))
        self.wkv_u = mk("wkv_u", np.zeros(c_model))

    def named_params(self):
        for attr in ("ln_scale", "ln_offset", "dw_r", "dw_k", "dw_v",
                     "w_r", "w_k", "w_v", "w_o", "wkv_w_raw", "wkv_u"):
            p = getattr(self, attr)
            yield p.name, p


class ChannelMixParams:
    def __init__(self, c_model: int, rng, prefix: str, dtype=np.float32):
        s = 1.0 / np.sqrt(c_model)
        mk = lambda name, arr: Parameter(np.asarray(arr, dtype=dtype), f"{prefix}.{name}")
        self.ln_scale = mk("ln_scale", np.ones(c_model))
        self.ln_offset = mk("ln_offset", np.zeros(c_model))
        self.dw_r = mk("dw_r", _uniform(rng, (3, 3, c_model), s))
        self.dw_k = mk("dw_k", _uniform(rng, (3, 3, c_model), s))
        self.w_r = mk("w_r", _uniform(rng, (c_model, c_model), s))
        self.w_k = mk("w_k", _uniform(rng, (c_model, c_model), s))
        self.w_val = mk("w_val", _uniform(rng, (c_model, c_model), s))
        self.w_o = mk("w_o", np.zeros((c_model, c_model)))

    def named_params(self):
        for attr in ("ln_scale", "ln_offset", "dw_r", "dw_k",
                     "w_r", "w_k", "w_val", "w_o"):
            p = getattr(self, attr)
            yield p.name, p


class FilmParams:
    """Anchor embedding table over uniformly spaced control values in [0, 1]
    plus the MLP that maps an embedding to per-channel (delta-gamma, mu)."""

    def __init__(self, c_model: int, rng, prefix: str,
                 anchors: int = 16, dim: int = 32, hidden: int = 64,
                 dtype=np.float32):
        if anchors < 2:
            raise ContractViolation("need at least two embedding anchors")
        self.anchors = anchors
        self.dim = dim
        self.hidden = hidden
        self.c_model = c_model
        sd = 1.0 / np.sqrt(dim)
        mk = lambda name, arr: Parameter(np.asarray(arr, dtype=dtype), f"{prefix}.{name}")
        self.table = mk("table", _uniform(rng, (anchors, dim), sd))
        self.w1 = mk("w1", _uniform(rng, (dim, hidden), sd))
        self.b1 = mk("b1", np.zeros(hidden))
        # zero final layer: modulation starts as the identity (gamma=1, mu=0)
        self.w2 = mk("w2", np.zeros((hidden, 2 * c_model)))
        self.b2 = mk("b2", np.zeros(2 * c_model))

    def named_params(self):
        for attr in ("table", "w1", "b1", "w2", "b2"):
            p = getattr(self, attr)
            yield p.name, p


def illumination_embedding(beta: float, film: FilmParams) -> Tensor:
    """Piecewise-linear interpolation of the anchor table at control value beta."""
    beta = min(max(float(beta), 0.0), 1.0)
    pos = beta * (film.anchors - 1)
    i = min(int(np.floor(pos)), film.anchors - 2)
    t = pos - i
    e_lo = T.reshape(T.slice_axis(film.table, 0, i, i + 1), (film.dim,))
    e_hi = T.reshape(T.slice_axis(film.table, 0, i + 1, i + 2), (film.dim,))
    return T.add(T.mul(e_lo, 1.0 - t), T.mul(e_hi, t))


def film_gamma_mu(embedding: Tensor, film: FilmParams):
    """(gamma, mu) = affine head over the embedding; gamma = 1 + delta."""
    hidden = T.squared_relu(T.add(T.matmul(embedding, film.w1), film.b1))
    out = T.add(T.matmul(hidden, film.w2), film.b2)
    dgamma = T.slice_axis(out, 0, 0, film.c_model)
    mu = T.slice_axis(out, 0, film.c_model, 2 * film.c_model)
    return T.add(dgamma, 1.0), mu


def film_modulate(x: Tensor, gamma: Tensor, mu: Tensor) -> Tensor:
    """Per-channel affine map over the trailing axis."""
    return T.add(T.mul(x, gamma), mu)


def _check_layout(x: Tensor, hw):
    hh, ww = hw
    if hh * ww != x.shape[0]:
        raise ContractViolation(f"layout {hw} does not cover {x.shape[0]} tokens")


def _path(x2d, dw_kernel, proj, tokens_shape):
    feat = T.dwconv3x3(x2d, dw_kernel)
    return T.matmul(T.reshape(feat, tokens_shape), proj)


def spatial_mix(x: Tensor, hw, p: SpatialMixParams) -> Tensor:
    """Global aggregation: per-path DWConv+projection, Bi-WKV, sigmoid gate."""
    _check_layout(x, hw)
    tn, c = x.shape
    xn = T.layer_norm(x, p.ln_scale, p.ln_offset)
    x2d = T.reshape(xn, (hw[0], hw[1], c))
    r = _path(x2d, p.dw_r, p.w_r, (tn, c))
    k = _path(x2d, p.dw_k, p.w_k, (tn, c))
    v = _path(x2d, p.dw_v, p.w_v, (tn, c))
    wkv = biwkv(k, v, T.softplus(p.wkv_w_raw), p.wkv_u)
    return T.matmul(T.mul(T.sigmoid(r), wkv), p.w_o)


def channel_mix(x: Tensor, hw, p: ChannelMixParams) -> Tensor:
    """Channel fusion: value path derived from the key via a squared ReLU."""
    _check_layout(x, hw)
    tn, c = x.shape
    xn = T.layer_norm(x, p.ln_scale, p.ln_offset)
    x2d = T.reshape(xn, (hw[0], hw[1], c))
    r = _path(x2d, p.dw_r, p.w_r, (tn, c))
    k = _path(x2d, p.dw_k, p.w_k, (tn, c))
    v = T.matmul(T.squared_relu(k), p.w_val)
    return T.matmul(T.mul(T.sigmoid(r), v), p.w_o)


class LRwkvBlockParams:
    def __init__(self, c_model: int, rng, prefix: str, dtype=np.float32):
        self.spatial = SpatialMixParams(c_model, rng, f"{prefix}.spatial", dtype)
        self.channel = ChannelMixParams(c_model, rng, f"{prefix}.channel", dtype)

    def named_params(self):
        yield from self.spatial.named_params()
        yield from self.channel.named_params()


def l_rwkv_block(x: Tensor, hw, block: LRwkvBlockParams,
                 condition: Tensor | None = None,
                 film: FilmParams | None = None) -> Tensor:
    """Residual spatial + channel mixing, optionally FiLM-conditioned."""
    y = T.add(x, spatial_mix(x, hw, block.spatial))
    z = T.add(y, channel_mix(y, hw, block.channel))
    if condition is not None:
        if film is None:
            raise ContractViolation("conditioning embedding given without FiLM params")
        gamma, mu = film_gamma_mu(condition, film)
        z = film_modulate(z, gamma, mu)
    return z
