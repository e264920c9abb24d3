"""Intensity/chroma decoupling and hybrid-target synthesis.

An sRGB image is mapped to two polar chroma planes plus the per-pixel
intensity max(R,G,B). The transform is exactly invertible, and scaling the
RGB image scales only the intensity plane, which is what makes the hybrid
supervision targets possible: chroma/texture from a clean reference,
intensity from the capture at the requested brightness level.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ContractViolation

TWO_PI = 2.0 * np.pi


@dataclass
class HviDecomposition:
    """Polar chroma planes in [-1, 1] and the intensity plane in [0, 1]."""

    hc: np.ndarray
    vc: np.ndarray
    imax: np.ndarray

    def stacked(self) -> np.ndarray:
        return np.stack([self.hc, self.vc, self.imax], axis=-1)

    @classmethod
    def from_stacked(cls, planes: np.ndarray) -> "HviDecomposition":
        return cls(planes[..., 0], planes[..., 1], planes[..., 2])


def validate_rgb(img: np.ndarray):
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[-1] != 3:
        raise ContractViolation(f"expected (H, W, 3) RGB image, got {img.shape}")
    if img.min() < 0.0 or img.max() > 1.0:
        raise ContractViolation("RGB components must lie in [0, 1]")
    return img


def hvit(img: np.ndarray) -> HviDecomposition:
    """RGB -> (Hc, Vc, Imax). Black / achromatic pixels take hue 0."""
    img = validate_rgb(img).astype(np.float64)
    r, g, b = img[..., 0], img[..., 1], img[..., 2]
    v = img.max(axis=-1)
    c = v - img.min(axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        s = np.where(v > 0, c / v, 0.0)
        # ties in max(R,G,B) resolve in R > G > B order via argmax
        amax = img.argmax(axis=-1)
        safe_c = np.where(c > 0, c, 1.0)
        h6 = np.choose(amax, [np.mod((g - b) / safe_c, 6.0),
                              (b - r) / safe_c + 2.0,
                              (r - g) / safe_c + 4.0])
    h6 = np.where(c > 0, h6, 0.0)
    angle = h6 * (TWO_PI / 6.0)
    return HviDecomposition(hc=s * np.cos(angle), vc=s * np.sin(angle), imax=v)


def _hue_weight(k: np.ndarray) -> np.ndarray:
    return np.clip(np.minimum(k, 4.0 - k), 0.0, 1.0)


def phvit(hvi: HviDecomposition) -> np.ndarray:
    """(Hc, Vc, Imax) -> RGB; chroma radially clipped to magnitude 1."""
    s = np.sqrt(hvi.hc.astype(np.float64) ** 2 + hvi.vc.astype(np.float64) ** 2)
    s = np.minimum(s, 1.0)
    h = np.arctan2(hvi.vc, hvi.hc) / TWO_PI  # in (-0.5, 0.5]
    v = np.clip(hvi.imax.astype(np.float64), 0.0, 1.0)
    h6 = 6.0 * h
    out = np.empty(hvi.hc.shape + (3,), dtype=np.float64)
    for ch, n in enumerate((5.0, 3.0, 1.0)):
        k = np.mod(n + h6, 6.0)
        out[..., ch] = v * (1.0 - s * _hue_weight(k))
    return np.clip(out, 0.0, 1.0)


def phvit_t(hc: T.Tensor, vc: T.Tensor, imax: T.Tensor) -> T.Tensor:
    """Differentiable perceptual inverse; same math as phvit, on the tape.

    Pixels with exactly zero chroma have an unbounded sqrt derivative; the
    tiny floor below keeps the tape finite without affecting values.
    """
    s2 = T.add(T.mul(hc, hc), T.mul(vc, vc))
    s = T.sqrt(T.maximum(s2, 1e-24))
    s = T.minimum(s, 1.0)
    h6 = T.mul(T.atan2(vc, hc), 6.0 / TWO_PI)
    v = T.clamp01(imax)
    chans = []
    for n in (5.0, 3.0, 1.0):
        z = T.add(h6, n)
        k = T.sub(z, T.mul(T.floor_const(T.mul(z, 1.0 / 6.0)), 6.0))
        w = T.maximum(T.minimum(T.minimum(k, T.sub(4.0, k)), 1.0), 0.0)
        chan = T.mul(v, T.sub(1.0, T.mul(s, w)))
        chans.append(T.reshape(chan, chan.shape + (1,)))
    return T.clamp01(T.concat_channels(*chans))


def synthesize_hybrid_target(reference: np.ndarray, beta_capture: np.ndarray) -> np.ndarray:
    """Chroma/texture from the reference, per-pixel intensity from the capture."""
    reference = validate_rgb(reference)
    beta_capture = validate_rgb(beta_capture)
    if reference.shape != beta_capture.shape:
        raise ContractViolation(
            f"dimension mismatch: {reference.shape} vs {beta_capture.shape}")
    ref = hvit(reference)
    cap = hvit(beta_capture)
    return phvit(HviDecomposition(hc=ref.hc, vc=ref.vc, imax=cap.imax))


def luma(img: np.ndarray) -> np.ndarray:
    """Rec.601 luma per pixel."""
    return 0.299 * img[..., 0] + 0.587 * img[..., 1] + 0.114 * img[..., 2]


def mean_luma(img: np.ndarray) -> float:
    return float(luma(img).mean())
