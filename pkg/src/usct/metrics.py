"""Field and image quality metrics: relative L2 error, PSNR, SSIM.

PSNR and SSIM take an explicit data_range; the convention used by the CLI
and tests is max - min of the ground-truth sound-speed map. SSIM follows the
standard mean-of-local-SSIM construction: Gaussian window (default 11 taps,
sigma 1.5), stabilizers k1 = 0.01 and k2 = 0.03 on the stated range, and
only windows fully inside the image contribute.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import convolve2d

from .fields import ComplexField, RealField

__all__ = ["MetricReport", "rrmse", "psnr", "ssim", "report"]


@dataclass(frozen=True)
class MetricReport:
    name: str
    value: float
    parameters: tuple[tuple[str, float], ...]
    operands: tuple[str, str]


def rrmse(u: ComplexField | RealField, u_hat: ComplexField | RealField) -> float:
    """sqrt(sum |u - u_hat|^2 / sum |u|^2); the reference u must be nonzero."""
    if u.grid.shape != u_hat.grid.shape:
        raise ValueError("fields live on different grids")
    den = np.sum(np.abs(u.values) ** 2)
    if den == 0:
        raise ValueError("reference field is identically zero")
    num = np.sum(np.abs(u.values - u_hat.values) ** 2)
    return float(np.sqrt(num / den))


def psnr(ref: RealField, est: RealField, data_range: float) -> float:
    """10 log10(range^2 / MSE); +inf when the fields are identical."""
    if ref.grid.shape != est.grid.shape:
        raise ValueError("fields live on different grids")
    if not data_range > 0:
        raise ValueError("data_range must be positive")
    mse = float(np.mean((ref.values - est.values) ** 2))
    if mse == 0.0:
        return float("inf")
    return float(10.0 * np.log10(data_range ** 2 / mse))


def _gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    k = np.exp(-0.5 * (r / sigma) ** 2)
    k2 = np.outer(k, k)
    return k2 / k2.sum()


def ssim(ref: RealField, est: RealField, data_range: float,
         window: int = 11, sigma: float = 1.5) -> float:
    """Mean local SSIM over valid (fully interior) windows, in [-1, 1]."""
    if ref.grid.shape != est.grid.shape:
        raise ValueError("fields live on different grids")
    if window % 2 != 1 or window < 3:
        raise ValueError("window must be odd and >= 3")
    ny, nx = ref.grid.shape
    if window > min(nx, ny):
        raise ValueError(f"window {window} exceeds field extent {(ny, nx)}")
    if not data_range > 0:
        raise ValueError("data_range must be positive")

    x = ref.as_2d().astype(np.float64)
    y = est.as_2d().astype(np.float64)
    k = _gaussian_kernel(window, sigma)

    def filt(a):
        return convolve2d(a, k, mode="valid")

    mu_x, mu_y = filt(x), filt(y)
    sxx = filt(x * x) - mu_x ** 2
    syy = filt(y * y) - mu_y ** 2
    sxy = filt(x * y) - mu_x * mu_y
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    num = (2 * mu_x * mu_y + c1) * (2 * sxy + c2)
    den = (mu_x ** 2 + mu_y ** 2 + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


def report(name: str, value: float, parameters: dict, ref_desc: str, est_desc: str) -> MetricReport:
    """Freeze a metric evaluation with its parameters for reproducible tables."""
    params = tuple(sorted((str(k), float(v)) for k, v in parameters.items()))
    return MetricReport(name=name, value=float(value), parameters=params,
                        operands=(str(ref_desc), str(est_desc)))
