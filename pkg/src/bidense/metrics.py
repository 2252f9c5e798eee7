"""Y-channel PSNR/SSIM with scale-dependent border cropping.

Protocol: the reconstruction is clamped to [0, 1] and rounded to the
8-bit grid, both images are converted to studio-swing luma (the
rgb2ycbcr convention, values on a 0..255 scale), ``scale`` pixels are
discarded from every border, and PSNR/SSIM are computed on what remains.
SSIM uses an 11x11 Gaussian window (sigma 1.5) with valid-region
convolution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import convolve2d

from . import data as dat
from .autograd import Tensor
from .model import Network, forward

__all__ = [
    "rgb_to_y",
    "psnr",
    "ssim",
    "ImageScore",
    "EvalReport",
    "evaluate",
    "evaluate_upscaler",
    "network_upscaler",
    "bicubic_upscaler",
    "write_report_csv",
    "save_triptych",
]

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
C1 = (0.01 * 255.0) ** 2
C2 = (0.03 * 255.0) ** 2
MIN_EVAL_SIZE = 8   # LR images smaller than this are skipped


def rgb_to_y(img: np.ndarray) -> np.ndarray:
    """Studio-swing luma: 16 + 65.481 R + 128.553 G + 24.966 B, inputs in [0,1]."""
    img = np.asarray(img, dtype=np.float64)
    return 16.0 + 65.481 * img[..., 0] + 128.553 * img[..., 1] + 24.966 * img[..., 2]


def _crop(a: np.ndarray, crop: int) -> np.ndarray:
    if crop == 0:
        return a
    if a.shape[0] <= 2 * crop or a.shape[1] <= 2 * crop:
        raise ValueError(
            f"crop {crop} leaves nothing of a {a.shape[0]}x{a.shape[1]} image"
        )
    return a[crop:-crop, crop:-crop]


def psnr(a: np.ndarray, b: np.ndarray, crop: int = 0) -> float:
    """Peak signal-to-noise ratio in dB on a 255 peak; +inf when identical."""
    if a.shape != b.shape:
        raise ValueError(f"psnr dimension mismatch: {a.shape} vs {b.shape}")
    a = _crop(np.asarray(a, dtype=np.float64), crop)
    b = _crop(np.asarray(b, dtype=np.float64), crop)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(255.0 ** 2 / mse)


def _gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    ax = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(ax ** 2) / (2.0 * sigma ** 2))
    win = np.outer(g, g)
    return win / win.sum()


def ssim(a: np.ndarray, b: np.ndarray, crop: int = 0) -> float:
    """Mean local structural similarity over all fully valid 11x11 windows."""
    if a.shape != b.shape:
        raise ValueError(f"ssim dimension mismatch: {a.shape} vs {b.shape}")
    a = _crop(np.asarray(a, dtype=np.float64), crop)
    b = _crop(np.asarray(b, dtype=np.float64), crop)
    if a.shape[0] < SSIM_WINDOW or a.shape[1] < SSIM_WINDOW:
        raise ValueError(
            f"image {a.shape} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window after crop"
        )
    win = _gaussian_window()
    mu_a = convolve2d(a, win, mode="valid")
    mu_b = convolve2d(b, win, mode="valid")
    mu_aa = mu_a * mu_a
    mu_bb = mu_b * mu_b
    mu_ab = mu_a * mu_b
    var_a = convolve2d(a * a, win, mode="valid") - mu_aa
    var_b = convolve2d(b * b, win, mode="valid") - mu_bb
    cov = convolve2d(a * b, win, mode="valid") - mu_ab
    num = (2.0 * mu_ab + C1) * (2.0 * cov + C2)
    den = (mu_aa + mu_bb + C1) * (var_a + var_b + C2)
    return float(np.mean(num / den))


# ---------------------------------------------------------------------------
# Dataset evaluation


@dataclass
class ImageScore:
    name: str
    psnr: float
    ssim: float


@dataclass
class EvalReport:
    scale: int
    crop: int
    per_image: list[ImageScore]
    skipped: list[tuple[str, str]] = field(default_factory=list)

    @property
    def infinite(self) -> list[str]:
        """Identical-image cases, excluded from the PSNR mean."""
        return [s.name for s in self.per_image if math.isinf(s.psnr)]

    @property
    def mean_psnr(self) -> float:
        finite = [s.psnr for s in self.per_image if math.isfinite(s.psnr)]
        if finite:
            return float(np.mean(finite))
        return math.inf if self.per_image else math.nan

    @property
    def mean_ssim(self) -> float:
        if not self.per_image:
            return math.nan
        return float(np.mean([s.ssim for s in self.per_image]))

    def summary(self) -> str:
        note = f" ({len(self.infinite)} identical excluded)" if self.infinite else ""
        return (f"x{self.scale} crop={self.crop} n={len(self.per_image)}: "
                f"PSNR {self.mean_psnr:.4f} dB, SSIM {self.mean_ssim:.4f}{note}")


def network_upscaler(net: Network):
    """Wrap a network as an (h,w,3) -> (scale*h, scale*w, 3) image function."""
    def upscale(lr: np.ndarray) -> np.ndarray:
        x = Tensor(np.ascontiguousarray(lr.transpose(2, 0, 1))[None])
        y = forward(net, x)
        return np.ascontiguousarray(y.data[0].transpose(1, 2, 0))
    return upscale


def bicubic_upscaler(scale: int):
    def upscale(lr: np.ndarray) -> np.ndarray:
        return dat.bicubic_resize(lr, lr.shape[0] * scale, lr.shape[1] * scale)
    return upscale


def evaluate_upscaler(upscale, index: dat.DatasetIndex, scale: int,
                      crop: int | None = None, image_dir=None) -> EvalReport:
    """Full-image evaluation: upscale, clamp, 8-bit quantize, luma, crop, score.

    With ``image_dir`` set, a bicubic/reconstruction/truth triptych is
    written per image for qualitative inspection.
    """
    crop = scale if crop is None else crop
    report = EvalReport(scale=scale, crop=crop, per_image=[])
    if image_dir is not None:
        image_dir = Path(image_dir)
        image_dir.mkdir(parents=True, exist_ok=True)
    for entry in index.entries:
        if scale not in entry.lr_paths:
            report.skipped.append((entry.hr_path, f"no x{scale} cache"))
            continue
        lr = index.load_lr(entry, scale)
        if min(lr.shape[:2]) < MIN_EVAL_SIZE:
            report.skipped.append(
                (entry.hr_path, f"LR {lr.shape[1]}x{lr.shape[0]} below {MIN_EVAL_SIZE}px"))
            continue
        hr = index.load_hr(entry)
        sr = dat.quantize(np.clip(upscale(lr), 0.0, 1.0))
        if image_dir is not None:
            stem = Path(entry.hr_path).stem
            save_triptych(lr, sr, hr, image_dir / f"{stem}_x{scale}.png", scale)
        y_sr = rgb_to_y(sr)
        y_hr = rgb_to_y(hr)
        report.per_image.append(ImageScore(entry.hr_path,
                                           psnr(y_sr, y_hr, crop),
                                           ssim(y_sr, y_hr, crop)))
    return report


def evaluate(net: Network, index: dat.DatasetIndex, scale: int) -> EvalReport:
    if net.config.scale != scale:
        raise ValueError(
            f"network upscales x{net.config.scale} but x{scale} was requested"
        )
    return evaluate_upscaler(network_upscaler(net), index, scale)


def _fmt(value: float) -> str:
    if math.isinf(value):
        return "inf"
    return f"{value:.6f}"


def write_report_csv(report: EvalReport, path) -> Path:
    path = Path(path)
    lines = ["image,psnr,ssim"]
    lines += [f"{s.name},{_fmt(s.psnr)},{_fmt(s.ssim)}" for s in report.per_image]
    path.write_text("\n".join(lines) + "\n")
    return path


def save_triptych(lr: np.ndarray, sr: np.ndarray, hr: np.ndarray, path,
                  scale: int) -> None:
    """Side-by-side bicubic / reconstruction / ground truth panel."""
    up = np.clip(dat.bicubic_resize(lr, hr.shape[0], hr.shape[1]), 0.0, 1.0)
    panel = np.concatenate([up, np.clip(sr, 0.0, 1.0), hr], axis=1)
    dat.save_image(path, panel)
