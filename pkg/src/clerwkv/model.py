"""End-to-end conditional enhancement network and its fixed-target variant.

Pipeline: color decoupling -> shallow 3x3 conv -> space-to-depth embedding ->
N mixing blocks (optionally FiLM-conditioned on the target luminance) ->
depth-to-space embedding -> residual head back onto the input decomposition.
The head is zero-initialized, so a fresh model is the identity up to the
color-space round trip.

Checkpoint layout (little-endian):
    magic "CLERWKV1"
    u32 length + UTF-8 config block (key=value lines)
    repeated parameter records:
        u32 name length, name bytes,
        u32 rank, u32 dims[rank],
        float32 raw values
Reload is bit-exact.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, fields

import numpy as np

from . import tensor as T
from .blocks import (FilmParams, LRwkvBlockParams, illumination_embedding,
                     l_rwkv_block)
from .errors import ContractViolation
from .hvi import hvit, phvit_t, validate_rgb
from .s2d import ps_ds_embed, ps_us_embed
from .tensor import Parameter, Tensor

MAGIC = b"CLERWKV1"


@dataclass
class CleRwkvConfig:
    r: int = 4
    c_model: int = 32
    num_blocks: int = 4
    c_in: int = 16
    c_out: int = 16
    film_anchors: int = 16
    film_dim: int = 32
    film_hidden: int = 64
    variant: str = "conditional"  # "conditional" | "base"
    color_space: str = "hvi"      # "hvi" | "srgb" (ablation)

    def __post_init__(self):
        if self.r < 1 or self.num_blocks < 1:
            raise ContractViolation("r and num_blocks must be >= 1")
        if self.variant not in ("conditional", "base"):
            raise ContractViolation(f"unknown variant '{self.variant}'")
        if self.color_space not in ("hvi", "srgb"):
            raise ContractViolation(f"unknown color space '{self.color_space}'")


@dataclass
class CleRwkvModel:
    config: CleRwkvConfig
    seed: int
    shallow_w: Parameter = field(repr=False, default=None)
    shallow_b: Parameter = field(repr=False, default=None)
    ds_proj: Parameter = field(repr=False, default=None)
    ds_bias: Parameter = field(repr=False, default=None)
    blocks: list = field(repr=False, default_factory=list)
    film: FilmParams | None = field(repr=False, default=None)
    us_proj: Parameter = field(repr=False, default=None)
    us_bias: Parameter = field(repr=False, default=None)
    head_w: Parameter = field(repr=False, default=None)
    head_b: Parameter = field(repr=False, default=None)

    def named_params(self):
        yield "shallow.w", self.shallow_w
        yield "shallow.b", self.shallow_b
        yield "ds.proj", self.ds_proj
        yield "ds.bias", self.ds_bias
        for blk in self.blocks:
            yield from blk.named_params()
        if self.film is not None:
            yield from self.film.named_params()
        yield "us.proj", self.us_proj
        yield "us.bias", self.us_bias
        yield "head.w", self.head_w
        yield "head.b", self.head_b

    def parameters(self):
        return [p for _, p in self.named_params()]

    def parameter_count(self) -> int:
        return sum(p.size for p in self.parameters())


def build_model(config: CleRwkvConfig, seed: int = 0, dtype=np.float32) -> CleRwkvModel:
    rng = np.random.default_rng(seed)
    c = config
    s_in = 1.0 / np.sqrt(3 * 9)
    s_ds = 1.0 / np.sqrt(c.c_in * c.r * c.r)
    s_us = 1.0 / np.sqrt(c.c_model)
    mk = lambda name, arr: Parameter(np.asarray(arr, dtype=dtype), name)
    model = CleRwkvModel(config=c, seed=seed)
    model.shallow_w = mk("shallow.w", rng.uniform(-s_in, s_in, (3, 3, 3, c.c_in)))
    model.shallow_b = mk("shallow.b", np.zeros(c.c_in))
    model.ds_proj = mk("ds.proj", rng.uniform(-s_ds, s_ds, (c.c_in * c.r * c.r, c.c_model)))
    model.ds_bias = mk("ds.bias", np.zeros(c.c_model))
    model.blocks = [LRwkvBlockParams(c.c_model, rng, f"blocks.{i}", dtype=dtype)
                    for i in range(c.num_blocks)]
    if c.variant == "conditional":
        model.film = FilmParams(c.c_model, rng, "film", anchors=c.film_anchors,
                                dim=c.film_dim, hidden=c.film_hidden, dtype=dtype)
    model.us_proj = mk("us.proj", rng.uniform(-s_us, s_us, (c.c_model, c.c_out * c.r * c.r)))
    model.us_bias = mk("us.bias", np.zeros(c.c_out * c.r * c.r))
    # zero head: the untrained model is the identity through the color round trip
    model.head_w = mk("head.w", np.zeros((c.c_out, 3)))
    model.head_b = mk("head.b", np.zeros(3))
    return model


def _plane(x, idx):
    return T.reshape(T.slice_axis(x, 2, idx, idx + 1), (x.shape[0], x.shape[1]))


def forward_tensors(model: CleRwkvModel, img: np.ndarray, beta: float | None):
    """Run the pipeline on the tape; returns (rgb tensor, decomposition tensor).

    For the sRGB ablation the second element is None.
    """
    cfg = model.config
    img = validate_rgb(img)
    H, W, _ = img.shape
    if H % cfg.r or W % cfg.r:
        raise ContractViolation(f"dims {H}x{W} not divisible by r={cfg.r}; pad first")
    if cfg.variant == "conditional":
        if beta is None:
            raise ContractViolation("conditional variant requires a beta value")
        beta = min(max(float(beta), 0.0), 1.0)
    elif beta is not None:
        raise ContractViolation("base variant accepts no beta input")

    dtype = model.head_w.dtype
    if cfg.color_space == "hvi":
        planes_np = hvit(img).stacked().astype(dtype)
    else:
        planes_np = img.astype(dtype)
    planes = Tensor(planes_np)

    feat = T.conv3x3(planes, model.shallow_w, model.shallow_b)
    tok_map = ps_ds_embed(feat, cfg.r, model.ds_proj, model.ds_bias)
    hw = (H // cfg.r, W // cfg.r)
    tokens = T.reshape(tok_map, (hw[0] * hw[1], cfg.c_model))
    cond = None
    if cfg.variant == "conditional":
        cond = illumination_embedding(beta, model.film)
    for blk in model.blocks:
        tokens = l_rwkv_block(tokens, hw, blk, condition=cond, film=model.film)
    up = ps_us_embed(T.reshape(tokens, (hw[0], hw[1], cfg.c_model)),
                     cfg.r, model.us_proj, model.us_bias)
    residual = T.conv1x1(up, model.head_w, model.head_b)

    out_planes = T.add(planes, residual)
    if cfg.color_space == "srgb":
        return T.clamp01(out_planes), None

    hc = _plane(out_planes, 0)
    vc = _plane(out_planes, 1)
    imax = T.clamp01(_plane(out_planes, 2))
    mag = T.sqrt(T.add(T.add(T.mul(hc, hc), T.mul(vc, vc)), 1e-24))
    scale = T.div(1.0, T.maximum(mag, 1.0))  # radial clip to chroma magnitude 1
    hc = T.mul(hc, scale)
    vc = T.mul(vc, scale)
    hvi_out = T.concat_channels(
        T.reshape(hc, (H, W, 1)), T.reshape(vc, (H, W, 1)), T.reshape(imax, (H, W, 1)))
    rgb = phvit_t(hc, vc, imax)
    return rgb, hvi_out


def forward(model: CleRwkvModel, img: np.ndarray, beta: float) -> np.ndarray:
    """Conditional inference; output is a valid [0,1] image of the input shape."""
    if model.config.variant != "conditional":
        raise ContractViolation("forward requires the conditional variant")
    with T.no_grad():
        rgb, _ = forward_tensors(model, img, beta)
    return np.asarray(rgb.data, dtype=np.float64)


def forward_base(model: CleRwkvModel, img: np.ndarray) -> np.ndarray:
    """Fixed-target inference; the control pathway does not exist here."""
    if model.config.variant != "base":
        raise ContractViolation("forward_base requires the base variant")
    with T.no_grad():
        rgb, _ = forward_tensors(model, img, None)
    return np.asarray(rgb.data, dtype=np.float64)


@dataclass
class CropRecord:
    height: int
    width: int


def pad_reflect_to_multiple(img: np.ndarray, r: int):
    """Reflect-pad H and W up to the next multiples of r."""
    H, W = img.shape[:2]
    ph = (-H) % r
    pw = (-W) % r
    rec = CropRecord(height=H, width=W)
    if ph == 0 and pw == 0:
        return img, rec
    return np.pad(img, ((0, ph), (0, pw), (0, 0)), mode="reflect"), rec


def crop_to_record(img: np.ndarray, rec: CropRecord) -> np.ndarray:
    return img[:rec.height, :rec.width]


def enhance(model: CleRwkvModel, img: np.ndarray, beta: float | None = None) -> np.ndarray:
    """Pad, run the appropriate variant, crop back."""
    padded, rec = pad_reflect_to_multiple(img, model.config.r)
    if model.config.variant == "conditional":
        out = forward(model, padded, beta)
    else:
        out = forward_base(model, padded)
    return crop_to_record(out, rec)


# ---------------------------------------------------------------------------
# checkpoint serialization
# ---------------------------------------------------------------------------

_CONFIG_INT_FIELDS = ("r", "c_model", "num_blocks", "c_in", "c_out",
                      "film_anchors", "film_dim", "film_hidden")


def _config_text(model: CleRwkvModel, extra: dict | None) -> str:
    lines = []
    for f in fields(CleRwkvConfig):
        lines.append(f"{f.name}={getattr(model.config, f.name)}")
    lines.append(f"seed={model.seed}")
    for key, val in (extra or {}).items():
        lines.append(f"{key}={val}")
    return "\n".join(lines) + "\n"


def save_checkpoint(model: CleRwkvModel, path, extra: dict | None = None):
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        cfg = _config_text(model, extra).encode("utf-8")
        fh.write(struct.pack("<I", len(cfg)))
        fh.write(cfg)
        for name, p in model.named_params():
            nb = name.encode("utf-8")
            fh.write(struct.pack("<I", len(nb)))
            fh.write(nb)
            dims = p.data.shape
            fh.write(struct.pack("<I", len(dims)))
            for d in dims:
                fh.write(struct.pack("<I", d))
            fh.write(np.ascontiguousarray(p.data, dtype="<f4").tobytes())


def load_checkpoint(path):
    """Rebuild the model bit-exactly; returns (model, metadata dict)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != MAGIC:
        raise ContractViolation(f"{path}: not a checkpoint (bad magic)")
    off = 8
    (clen,) = struct.unpack_from("<I", blob, off)
    off += 4
    meta = {}
    for line in blob[off:off + clen].decode("utf-8").splitlines():
        if line.strip():
            key, _, val = line.partition("=")
            meta[key] = val
    off += clen

    kwargs = {}
    for f in fields(CleRwkvConfig):
        raw = meta[f.name]
        kwargs[f.name] = int(raw) if f.name in _CONFIG_INT_FIELDS else raw
    config = CleRwkvConfig(**kwargs)
    model = build_model(config, seed=int(meta["seed"]))
    by_name = dict(model.named_params())

    while off < len(blob):
        (nlen,) = struct.unpack_from("<I", blob, off)
        off += 4
        name = blob[off:off + nlen].decode("utf-8")
        off += nlen
        (rank,) = struct.unpack_from("<I", blob, off)
        off += 4
        dims = struct.unpack_from(f"<{rank}I", blob, off)
        off += 4 * rank
        count = int(np.prod(dims)) if rank else 1
        data = np.frombuffer(blob, dtype="<f4", count=count, offset=off).reshape(dims)
        off += 4 * count
        if name not in by_name:
            raise ContractViolation(f"checkpoint parameter '{name}' unknown to this config")
        p = by_name.pop(name)
        if p.data.shape != tuple(dims):
            raise ContractViolation(f"shape mismatch for '{name}'")
        p.data = data.astype(np.float32).copy()
    if by_name:
        raise ContractViolation(f"checkpoint missing parameters: {sorted(by_name)}")
    return model, meta
