"""Composite training objective, quality metrics and evaluation utilities.

The objective combines pixel, structural, edge and pyramid terms in the sRGB
domain plus (weighted by lam) the same combination over the intensity/chroma
decomposition. The perceptual term of the original four-slot combination
needs a pretrained network, which is out of scope here; its weight slot
drives a blurred-pyramid proxy instead and defaults to zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ContractViolation
from .hvi import luma, mean_luma
from .lightsynth import IspConfig, RadianceScene, isp_transform
from .tensor import Tensor

SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2
PSNR_CAP = 99.0


@dataclass
class LossWeights:
    w_l1: float = 1.0
    w_ssim: float = 0.2
    w_edge: float = 0.1
    w_lpips: float = 0.0  # drives the pyramid proxy, not a learned metric
    lam: float = 1.0

    def __post_init__(self):
        if min(self.w_l1, self.w_ssim, self.w_edge, self.w_lpips, self.lam) < 0:
            raise ContractViolation("loss weights must be non-negative")


def _gaussian_window(size=11, sigma=1.5) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(ax ** 2) / (2.0 * sigma ** 2))
    k = np.outer(g, g)
    return k / k.sum()

_SSIM_WINDOW = _gaussian_window()
_SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
_SOBEL_Y = _SOBEL_X.T
_BLUR3 = _gaussian_window(3, 0.8)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def _check_pair(pred: Tensor, target: Tensor):
    if pred.shape != target.shape:
        raise ContractViolation(f"shape mismatch: {pred.shape} vs {target.shape}")


def l1_loss(pred, target) -> Tensor:
    pred, target = _as_tensor(pred), _as_tensor(target)
    _check_pair(pred, target)
    return T.mean_reduce(T.absval(T.sub(pred, target)))


def _ssim_map(x: Tensor, y: Tensor) -> Tensor:
    mu_x = T.filter2d(x, _SSIM_WINDOW)
    mu_y = T.filter2d(y, _SSIM_WINDOW)
    xx = T.filter2d(T.mul(x, x), _SSIM_WINDOW)
    yy = T.filter2d(T.mul(y, y), _SSIM_WINDOW)
    xy = T.filter2d(T.mul(x, y), _SSIM_WINDOW)
    var_x = T.sub(xx, T.mul(mu_x, mu_x))
    var_y = T.sub(yy, T.mul(mu_y, mu_y))
    cov = T.sub(xy, T.mul(mu_x, mu_y))
    num = T.mul(T.add(T.mul(T.mul(mu_x, mu_y), 2.0), SSIM_C1),
                T.add(T.mul(cov, 2.0), SSIM_C2))
    den = T.mul(T.add(T.add(T.mul(mu_x, mu_x), T.mul(mu_y, mu_y)), SSIM_C1),
                T.add(T.add(var_x, var_y), SSIM_C2))
    return T.div(num, den)


def ssim_loss(pred, target) -> Tensor:
    pred, target = _as_tensor(pred), _as_tensor(target)
    _check_pair(pred, target)
    return T.sub(1.0, T.mean_reduce(_ssim_map(pred, target)))


def _sobel_magnitude(x: Tensor) -> Tensor:
    gx = T.filter2d(x, _SOBEL_X)
    gy = T.filter2d(x, _SOBEL_Y)
    mag = T.sqrt(T.add(T.add(T.mul(gx, gx), T.mul(gy, gy)), 1e-12))
    # zero padding makes border gradients depend on absolute level; compare
    # interior gradients only so a constant offset has zero edge loss
    return T.slice_axis(T.slice_axis(mag, 0, 1, x.shape[0] - 1), 1, 1, x.shape[1] - 1)


def edge_loss(pred, target) -> Tensor:
    pred, target = _as_tensor(pred), _as_tensor(target)
    _check_pair(pred, target)
    return T.mean_reduce(T.absval(T.sub(_sobel_magnitude(pred), _sobel_magnitude(target))))


def _pyramid(x: Tensor, levels=3):
    out = [T.filter2d(x, _BLUR3)]
    for _ in range(levels - 1):
        h, w, _ = out[-1].shape
        trimmed = T.slice_axis(T.slice_axis(out[-1], 0, 0, h - h % 2), 1, 0, w - w % 2)
        out.append(T.filter2d(T.avgpool2(trimmed), _BLUR3))
    return out


def perceptual_proxy(pred, target) -> Tensor:
    """Structural stand-in for a learned perceptual metric: l1 between
    blurred-and-downsampled 3-level pyramids."""
    pred, target = _as_tensor(pred), _as_tensor(target)
    _check_pair(pred, target)
    terms = [T.mean_reduce(T.absval(T.sub(a, b)))
             for a, b in zip(_pyramid(pred), _pyramid(target))]
    total = terms[0]
    for t in terms[1:]:
        total = T.add(total, t)
    return T.mul(total, 1.0 / len(terms))


def base_loss(pred, target, weights: LossWeights) -> Tensor:
    total = Tensor(np.zeros((), dtype=_as_tensor(pred).dtype))
    if weights.w_l1:
        total = T.add(total, T.mul(l1_loss(pred, target), weights.w_l1))
    if weights.w_ssim:
        total = T.add(total, T.mul(ssim_loss(pred, target), weights.w_ssim))
    if weights.w_edge:
        total = T.add(total, T.mul(edge_loss(pred, target), weights.w_edge))
    if weights.w_lpips:
        total = T.add(total, T.mul(perceptual_proxy(pred, target), weights.w_lpips))
    return total


def rescale_hvi(hvi: Tensor) -> Tensor:
    """Map chroma planes from [-1, 1] to [0, 1]; intensity stays put."""
    h, w, _ = hvi.shape
    hc = T.mul(T.add(T.slice_axis(hvi, 2, 0, 1), 1.0), 0.5)
    vc = T.mul(T.add(T.slice_axis(hvi, 2, 1, 2), 1.0), 0.5)
    imax = T.slice_axis(hvi, 2, 2, 3)
    return T.concat_channels(hc, vc, imax)


def total_loss(pred_rgb, pred_hvi, target_rgb, target_hvi,
               weights: LossWeights) -> Tensor:
    """sRGB-domain base loss plus lam times the decomposition-domain base loss."""
    total = base_loss(pred_rgb, target_rgb, weights)
    if weights.lam and pred_hvi is not None:
        if target_hvi is None:
            raise ContractViolation("decomposition target missing")
        total = T.add(total, T.mul(
            base_loss(rescale_hvi(_as_tensor(pred_hvi)),
                      rescale_hvi(_as_tensor(target_hvi)), weights), weights.lam))
    return total


# ---------------------------------------------------------------------------
# metrics (plain numpy, evaluation side)
# ---------------------------------------------------------------------------

def psnr(pred: np.ndarray, target: np.ndarray) -> float:
    if pred.shape != target.shape:
        raise ContractViolation("psnr: shape mismatch")
    mse = float(np.mean((np.asarray(pred, dtype=np.float64) - target) ** 2))
    if mse <= 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(1.0 / mse))


def ssim_metric(pred: np.ndarray, target: np.ndarray) -> float:
    with T.no_grad():
        val = 1.0 - float(ssim_loss(Tensor(np.asarray(pred, dtype=np.float64)),
                                    Tensor(np.asarray(target, dtype=np.float64))).data)
    return val


def gt_mean_adjust(pred: np.ndarray, gt: np.ndarray) -> np.ndarray:
    """Scale the prediction so its mean luma matches the target's, then clip."""
    k = mean_luma(gt) / max(mean_luma(pred), 1e-6)
    return np.clip(k * np.asarray(pred, dtype=np.float64), 0.0, 1.0)


def luminance_histogram(img: np.ndarray, bins: int = 64) -> np.ndarray:
    counts, _ = np.histogram(np.clip(luma(img), 0.0, 1.0), bins=bins, range=(0.0, 1.0))
    return counts / counts.sum()


def histogram_divergence(a: np.ndarray, b: np.ndarray, bins: int = 64) -> float:
    """Total-variation distance between luminance histograms."""
    return 0.5 * float(np.abs(luminance_histogram(a, bins) - luminance_histogram(b, bins)).sum())


def isp_noncommute_gap(scene: RadianceScene, k: float, isp: IspConfig) -> float:
    """Mean absolute gap between enhancing radiance and scaling pixels."""
    true_path = isp_transform(k * scene.radiance, isp)
    heuristic = np.clip(k * isp_transform(scene.radiance, isp), 0.0, 1.0)
    return float(np.abs(true_path - heuristic).mean())


@dataclass
class ImageMetrics:
    name: str
    psnr: float
    ssim: float
    mean_luma_err: float
    hist_divergence: float
    psnr_gtmean: float
    ssim_gtmean: float


@dataclass
class MetricReport:
    images: list = field(default_factory=list)

    def add(self, name: str, pred: np.ndarray, gt: np.ndarray):
        adjusted = gt_mean_adjust(pred, gt)
        self.images.append(ImageMetrics(
            name=name,
            psnr=psnr(pred, gt),
            ssim=ssim_metric(pred, gt),
            mean_luma_err=abs(mean_luma(pred) - mean_luma(gt)),
            hist_divergence=histogram_divergence(pred, gt),
            psnr_gtmean=psnr(adjusted, gt),
            ssim_gtmean=ssim_metric(adjusted, gt)))

    def aggregate(self) -> dict:
        if not self.images:
            return {}
        keys = ("psnr", "ssim", "mean_luma_err", "hist_divergence",
                "psnr_gtmean", "ssim_gtmean")
        return {k: float(np.mean([getattr(im, k) for im in self.images])) for k in keys}

    def text(self) -> str:
        lines = []
        for im in self.images:
            lines.append(f"[image {im.name}]")
            for key in ("psnr", "ssim", "mean_luma_err", "hist_divergence",
                        "psnr_gtmean", "ssim_gtmean"):
                lines.append(f"{key}={getattr(im, key):.6f}")
            lines.append("")
        lines.append("[aggregate]")
        lines.append(f"count={len(self.images)}")
        for key, val in self.aggregate().items():
            lines.append(f"{key}={val:.6f}")
        return "\n".join(lines) + "\n"
