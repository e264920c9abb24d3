"""Synthetic multi-illumination scene generator and parametric ISP.

Each scene is a high-dynamic-range linear radiance field rendered at L light
power fractions k = 1/L .. 1 through an ISP with shot/read noise, a low-light
color cast, a Reinhard-style tone knee, gamma encoding and 8-bit
quantization. Every level carries a label: the mean luma of its own rendered
capture. The reference level for hybrid supervision is the brightest level
that stays essentially free of highlight clipping.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ContractViolation
from .hvi import luma

TEST_SEED_MODULUS = 11  # every 11th scene seed is held out (10:1 split)
CLIP_FRACTION_LIMIT = 1e-3


@dataclass
class RadianceScene:
    seed: int
    radiance: np.ndarray  # (H, W, 3), linear, >= 0, unclipped

    @property
    def shape(self):
        return self.radiance.shape


@dataclass
class IspConfig:
    gamma: float = 2.2
    tone_scale: float | None = 4.0  # Reinhard knee x/(1+x/knee); None = identity
    shot_noise: float = 0.04        # std = shot_noise * sqrt(signal)
    read_noise: float = 0.01
    cast: tuple = (-0.08, 0.0, 0.10)  # per-channel gain error, scaled by (1-k)
    bits: int = 8

    def __post_init__(self):
        if self.gamma <= 0:
            raise ContractViolation("gamma exponent must be positive")
        if self.shot_noise < 0 or self.read_noise < 0:
            raise ContractViolation("noise scales must be non-negative")

    def noiseless(self) -> "IspConfig":
        return replace(self, shot_noise=0.0, read_noise=0.0, cast=(0.0, 0.0, 0.0))


DEGENERATE_ISP = IspConfig(gamma=1.0, tone_scale=None, shot_noise=0.0,
                           read_noise=0.0, cast=(0.0, 0.0, 0.0))


def generate_scene(seed: int, size: int = 64) -> RadianceScene:
    """Procedural radiance field: an ambient gradient mostly covered by
    colored shapes, a dark hole and a few specular pixels for dynamic-range
    coverage, and a high-frequency texture band. Deterministic per seed."""
    if size < 12:
        raise ContractViolation("scene size must be at least 12 pixels")
    rng = np.random.default_rng(seed)
    h = w = int(size)
    yy, xx = np.mgrid[0:h, 0:w] / max(h, w)

    ambient = np.exp(rng.uniform(np.log(0.08), np.log(0.2), 3))
    direction = rng.uniform(-1, 1, 2)
    phase = rng.uniform(0, 2 * np.pi)
    gradient = 0.55 + 0.45 * np.cos(np.pi * (direction[0] * xx + direction[1] * yy) + phase)
    field_ = ambient[None, None, :] * gradient[:, :, None]

    def tint(base):
        t = rng.uniform(0.35, 1.0, 3)
        return base * t / t.max()

    for _ in range(rng.integers(8, 13)):  # rectangles, high coverage
        albedo = tint(np.exp(rng.uniform(np.log(0.22), np.log(0.85))))
        y0, x0 = rng.integers(0, h - 4), rng.integers(0, w - 4)
        rh = rng.integers(h // 6, 2 * h // 3)
        rw = rng.integers(w // 6, 2 * w // 3)
        field_[y0:y0 + rh, x0:x0 + rw] = albedo

    for _ in range(rng.integers(4, 8)):  # disks
        albedo = tint(np.exp(rng.uniform(np.log(0.22), np.log(0.85))))
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        rad = rng.uniform(3, min(h, w) / 4)
        mask = (np.mgrid[0:h, 0:w][0] - cy) ** 2 + (np.mgrid[0:h, 0:w][1] - cx) ** 2 <= rad ** 2
        field_[mask] = albedo

    # dark hole for the low end of the radiance histogram
    cy, cx = rng.uniform(0, h), rng.uniform(0, w)
    rad = rng.uniform(2.0, 3.5)
    mask = (np.mgrid[0:h, 0:w][0] - cy) ** 2 + (np.mgrid[0:h, 0:w][1] - cx) ** 2 <= rad ** 2
    field_[mask] *= 0.01

    band0 = rng.integers(0, h // 2)
    band1 = band0 + rng.integers(h // 6, h // 3)
    f1, f2 = rng.uniform(6, 14, 2)
    p1, p2 = rng.uniform(0, 2 * np.pi, 2)
    texture = 1.0 + 0.15 * np.sin(2 * np.pi * f1 * xx + p1) * np.sin(2 * np.pi * f2 * yy + p2)
    field_[band0:band1] *= texture[band0:band1, :, None]
    field_ = np.maximum(field_, 0.0)

    # exposure calibration absorbed into the radiance scale: the noiseless
    # full-power capture lands at a per-scene target mean luma, capped so the
    # bulk of the scene honors the capture protocol's no-saturation guarantee
    target = rng.uniform(0.50, 0.60)
    ref_isp = IspConfig(shot_noise=0.0, read_noise=0.0, cast=(0.0, 0.0, 0.0))
    lo, hi = 1e-3, 50.0
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        if luma(isp_transform(mid * field_, ref_isp)).mean() < target:
            lo = mid
        else:
            hi = mid
    scale = 0.5 * (lo + hi)
    knee = ref_isp.tone_scale
    saturating = knee / (knee - 1.0)
    scale = min(scale, 0.97 * saturating / field_.max())
    field_ = scale * field_

    # specular pixels extend the high end of the radiance histogram; placed
    # only while they fit under half the clipped-fraction reference limit
    for _ in range(int(0.5 * CLIP_FRACTION_LIMIT * h * w)):
        field_[rng.integers(0, h), rng.integers(0, w)] = 3.0 * saturating

    return RadianceScene(seed=int(seed), radiance=field_)


def isp_transform(signal: np.ndarray, isp: IspConfig) -> np.ndarray:
    """The deterministic non-linearity T: tone knee, gamma encode, clip."""
    x = np.maximum(np.asarray(signal, dtype=np.float64), 0.0)
    if isp.tone_scale is not None:
        x = x / (1.0 + x / isp.tone_scale)
    if isp.gamma != 1.0:
        x = x ** (1.0 / isp.gamma)
    return np.clip(x, 0.0, 1.0)


def _mapped_pre_clip(signal: np.ndarray, isp: IspConfig) -> np.ndarray:
    x = np.maximum(np.asarray(signal, dtype=np.float64), 0.0)
    if isp.tone_scale is not None:
        x = x / (1.0 + x / isp.tone_scale)
    if isp.gamma != 1.0:
        x = x ** (1.0 / isp.gamma)
    return x


def expose(scene: RadianceScene, k: float, isp: IspConfig, rng) -> np.ndarray:
    """Linear sensor stage: scaled radiance plus shot/read noise and the
    low-light color cast. Unclipped (noise may go negative)."""
    if not 0.0 < k <= 1.0:
        raise ContractViolation("power fraction k must be in (0, 1]")
    signal = k * scene.radiance
    noisy = signal
    if isp.shot_noise > 0:
        noisy = noisy + rng.standard_normal(signal.shape) * (isp.shot_noise * np.sqrt(signal))
    if isp.read_noise > 0:
        noisy = noisy + rng.standard_normal(signal.shape) * isp.read_noise
    gains = 1.0 + (1.0 - k) * np.asarray(isp.cast)
    return noisy * gains[None, None, :]


def quantize(img: np.ndarray, bits: int = 8) -> np.ndarray:
    levels = (1 << bits) - 1
    return np.round(np.clip(img, 0.0, 1.0) * levels) / levels


def render_level(scene: RadianceScene, k: float, isp: IspConfig, noise_seed):
    """One capture; returns (quantized image, clipped-pixel fraction)."""
    rng = np.random.default_rng(noise_seed)
    linear = expose(scene, k, isp, rng)
    mapped = _mapped_pre_clip(linear, isp)
    clip_frac = float((mapped >= 1.0).any(axis=-1).mean())
    return quantize(np.clip(mapped, 0.0, 1.0), isp.bits), clip_frac


def apply_isp(scene: RadianceScene, k: float, isp: IspConfig, noise_seed=0) -> np.ndarray:
    """Rendered 8-bit capture as floats on the {0..255}/255 grid."""
    return render_level(scene, k, isp, noise_seed)[0]


@dataclass
class IlluminationStack:
    scene_seed: int
    height: int
    width: int
    k: np.ndarray                  # strictly increasing power fractions
    images: np.ndarray             # (L, H, W, 3) quantized captures
    beta: np.ndarray               # label per level: mean luma of the capture
    clip_frac: np.ndarray
    reference_index: int
    isp: IspConfig

    @property
    def levels(self) -> int:
        return len(self.k)

    @property
    def reference(self) -> np.ndarray:
        return self.images[self.reference_index]

    def darkest_quartile(self):
        return list(range(max(1, self.levels // 4)))


def noise_seed_for(scene_seed: int, level_index: int):
    return np.random.SeedSequence([int(scene_seed), int(level_index)])


def select_reference(clip_fracs: np.ndarray) -> int:
    """Highest level essentially free of highlight saturation."""
    ok = np.nonzero(np.asarray(clip_fracs) < CLIP_FRACTION_LIMIT)[0]
    return int(ok[-1]) if len(ok) else len(clip_fracs) - 1


def build_stack(scene: RadianceScene, levels: int, isp: IspConfig) -> IlluminationStack:
    if levels < 2:
        raise ContractViolation("need at least two illumination levels")
    h, w, _ = scene.shape
    ks = np.arange(1, levels + 1, dtype=np.float64) / levels
    images = np.empty((levels, h, w, 3))
    clip = np.empty(levels)
    beta = np.empty(levels)
    for i, k in enumerate(ks):
        img, cf = render_level(scene, k, isp, noise_seed_for(scene.seed, i))
        images[i] = img
        clip[i] = cf
        beta[i] = luma(img).mean()
    return IlluminationStack(scene_seed=scene.seed, height=h, width=w, k=ks,
                             images=images, beta=beta, clip_frac=clip,
                             reference_index=select_reference(clip), isp=isp)


def noise_gain_variance_ratio(gain: float, samples: int = 10_000, seed: int = 0) -> float:
    """Sample variance ratio Var(gain*n)/Var(n) for a zero-mean noise field."""
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(samples) * 0.05
    return float(np.var(gain * noise) / np.var(noise))


# ---------------------------------------------------------------------------
# on-disk dataset
# ---------------------------------------------------------------------------

@dataclass
class SyntheticDataset:
    stacks: list = field(default_factory=list)

    def train_stacks(self):
        return [s for s in self.stacks if s.scene_seed % TEST_SEED_MODULUS != 0]

    def test_stacks(self):
        return [s for s in self.stacks if s.scene_seed % TEST_SEED_MODULUS == 0]

    def beta_range(self):
        lo = min(float(s.beta.min()) for s in self.stacks)
        hi = max(float(s.beta.max()) for s in self.stacks)
        return lo, hi


def synthesize_dataset(num_scenes: int, levels: int = 16, size: int = 64,
                       base_seed: int = 0, isp: IspConfig | None = None) -> SyntheticDataset:
    isp = isp if isp is not None else IspConfig()
    stacks = [build_stack(generate_scene(base_seed + i, size), levels, isp)
              for i in range(num_scenes)]
    return SyntheticDataset(stacks=stacks)


def _isp_meta_lines(isp: IspConfig):
    tone = "none" if isp.tone_scale is None else repr(float(isp.tone_scale))
    return [f"isp.gamma={float(isp.gamma)!r}",
            f"isp.tone_scale={tone}",
            f"isp.shot_noise={float(isp.shot_noise)!r}",
            f"isp.read_noise={float(isp.read_noise)!r}",
            "isp.cast=" + ",".join(repr(float(c)) for c in isp.cast),
            f"isp.bits={isp.bits}"]


def _isp_from_meta(meta: dict) -> IspConfig:
    tone = meta["isp.tone_scale"]
    return IspConfig(gamma=float(meta["isp.gamma"]),
                     tone_scale=None if tone == "none" else float(tone),
                     shot_noise=float(meta["isp.shot_noise"]),
                     read_noise=float(meta["isp.read_noise"]),
                     cast=tuple(float(c) for c in meta["isp.cast"].split(",")),
                     bits=int(meta["isp.bits"]))


def export_dataset(dataset: SyntheticDataset, directory):
    root = Path(directory)
    for stack in dataset.stacks:
        sdir = root / "scenes" / f"scene_{stack.scene_seed:05d}"
        sdir.mkdir(parents=True, exist_ok=True)
        lines = [f"seed={stack.scene_seed}",
                 f"height={stack.height}",
                 f"width={stack.width}",
                 f"levels={stack.levels}",
                 f"reference_index={stack.reference_index}"]
        lines += _isp_meta_lines(stack.isp)
        for i in range(stack.levels):
            img8 = np.round(stack.images[i] * 255).astype(np.uint8)
            Image.fromarray(img8, mode="RGB").save(sdir / f"level_{i + 1:02d}.png")
            lines.append(f"level_{i + 1}.k={float(stack.k[i])!r}")
            lines.append(f"level_{i + 1}.beta={float(stack.beta[i])!r}")
            lines.append(f"level_{i + 1}.clip={float(stack.clip_frac[i])!r}")
        (sdir / "meta").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return root


def _read_meta(path: Path) -> dict:
    meta = {}
    for line in path.read_text(encoding="utf-8").splitlines():
        if line.strip():
            key, _, val = line.partition("=")
            meta[key] = val
    return meta


def load_dataset(directory) -> SyntheticDataset:
    root = Path(directory)
    scene_root = root / "scenes"
    if not scene_root.is_dir():
        raise ContractViolation(f"no scenes directory under {root}")
    stacks = []
    for sdir in sorted(scene_root.iterdir()):
        if not re.fullmatch(r"scene_\d+", sdir.name):
            continue
        meta_path = sdir / "meta"
        if not meta_path.exists():
            raise ContractViolation(f"missing meta record: {meta_path}")
        meta = _read_meta(meta_path)
        levels = int(meta["levels"])
        h, w = int(meta["height"]), int(meta["width"])
        images = np.empty((levels, h, w, 3))
        ks = np.empty(levels)
        beta = np.empty(levels)
        clip = np.empty(levels)
        for i in range(levels):
            png = sdir / f"level_{i + 1:02d}.png"
            if not png.exists():
                raise ContractViolation(f"missing capture: {png}")
            try:
                arr = np.asarray(Image.open(png).convert("RGB"), dtype=np.float64)
            except Exception as exc:
                raise ContractViolation(f"corrupt capture {png}: {exc}") from exc
            if arr.shape != (h, w, 3):
                raise ContractViolation(f"unexpected capture shape in {png}")
            images[i] = arr / 255.0
            ks[i] = float(meta[f"level_{i + 1}.k"])
            beta[i] = float(meta[f"level_{i + 1}.beta"])
            clip[i] = float(meta[f"level_{i + 1}.clip"])
        stacks.append(IlluminationStack(
            scene_seed=int(meta["seed"]), height=h, width=w, k=ks, images=images,
            beta=beta, clip_frac=clip, reference_index=int(meta["reference_index"]),
            isp=_isp_from_meta(meta)))
    if not stacks:
        raise ContractViolation(f"no scenes found under {scene_root}")
    return SyntheticDataset(stacks=stacks)
