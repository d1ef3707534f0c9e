"""Image quality metrics: PSNR, SSIM, and their geometric-mean summary.

All metrics run in float64 on [0,1] images before any 8-bit quantization.
The summary (AVGE) here is the two-term variant: the perceptual term
requires pretrained network weights and is out of scope, so values are not
comparable to three-term reports. The report flags this explicitly.
"""

from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.signal import convolve2d

from .errors import ShapeMismatch

PSNR_CAP = 99.0
_SSIM_WINDOW = 11
_SSIM_SIGMA = 1.5
_SSIM_C1 = 0.01 ** 2
_SSIM_C2 = 0.03 ** 2


def _check_pair(img_a, img_b):
    a = np.asarray(img_a, dtype=np.float64)
    b = np.asarray(img_b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatch(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def psnr(img_a, img_b) -> float:
    """10*log10(1/MSE) for [0,1] images, capped at 99 dB for identical inputs."""
    a, b = _check_pair(img_a, img_b)
    mse = float(np.mean((a - b) ** 2))
    if mse <= 0.0:
        return PSNR_CAP
    return min(10.0 * np.log10(1.0 / mse), PSNR_CAP)


def _gaussian_window() -> np.ndarray:
    half = (_SSIM_WINDOW - 1) / 2.0
    x = np.arange(_SSIM_WINDOW) - half
    g = np.exp(-(x ** 2) / (2.0 * _SSIM_SIGMA ** 2))
    kernel = np.outer(g, g)
    return kernel / kernel.sum()


def ssim(img_a, img_b) -> float:
    """Mean local SSIM with an 11x11 Gaussian window (sigma 1.5), computed per
    channel over valid window positions and averaged."""
    a, b = _check_pair(img_a, img_b)
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    if a.shape[0] < _SSIM_WINDOW or a.shape[1] < _SSIM_WINDOW:
        raise ShapeMismatch(f"image smaller than the {_SSIM_WINDOW}x{_SSIM_WINDOW} window")
    kernel = _gaussian_window()
    values = []
    for ch in range(a.shape[2]):
        x, y = a[..., ch], b[..., ch]
        mu_x = convolve2d(x, kernel, mode="valid")
        mu_y = convolve2d(y, kernel, mode="valid")
        var_x = convolve2d(x * x, kernel, mode="valid") - mu_x ** 2
        var_y = convolve2d(y * y, kernel, mode="valid") - mu_y ** 2
        cov = convolve2d(x * y, kernel, mode="valid") - mu_x * mu_y
        num = (2 * mu_x * mu_y + _SSIM_C1) * (2 * cov + _SSIM_C2)
        den = (mu_x ** 2 + mu_y ** 2 + _SSIM_C1) * (var_x + var_y + _SSIM_C2)
        values.append(np.mean(num / den))
    return float(np.mean(values))


def avge(psnr_db: float, ssim_value: float, lpips_value: float | None = None) -> float:
    """Geometric mean of the transformed errors 10^(-PSNR/10), sqrt(1-SSIM),
    and (when supplied) the perceptual term. With two terms the result is the
    2-term variant and must not be compared against 3-term numbers."""
    terms = [10.0 ** (-psnr_db / 10.0), np.sqrt(max(0.0, 1.0 - ssim_value))]
    if lpips_value is not None:
        terms.append(lpips_value)
    return float(np.prod(terms) ** (1.0 / len(terms)))


@dataclass
class MetricsReport:
    psnr: float
    ssim: float
    avge: float
    avge_terms: int = 2
    per_image: list = dc_field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "psnr": self.psnr,
            "ssim": self.ssim,
            "avge": self.avge,
            "avge_terms": self.avge_terms,
            "per_image": self.per_image,
        }


def evaluate_images(predicted: list, reference: list, names: list | None = None) -> MetricsReport:
    """PSNR/SSIM/AVGE per image pair plus means across the set."""
    if len(predicted) != len(reference):
        raise ShapeMismatch(f"{len(predicted)} predictions vs {len(reference)} references")
    if not predicted:
        raise ShapeMismatch("no images to evaluate")
    rows = []
    for i, (p, r) in enumerate(zip(predicted, reference)):
        p_db = psnr(p, r)
        s = ssim(p, r)
        rows.append({
            "name": names[i] if names else f"image_{i:03d}",
            "psnr": p_db,
            "ssim": s,
            "avge": avge(p_db, s),
        })
    mean_psnr = float(np.mean([r["psnr"] for r in rows]))
    mean_ssim = float(np.mean([r["ssim"] for r in rows]))
    return MetricsReport(
        psnr=mean_psnr, ssim=mean_ssim, avge=avge(mean_psnr, mean_ssim), per_image=rows
    )
