"""Classical image kernels: grayscale, blur, edge operators, binary morphology.

Images are plain numpy arrays. A gray image is a 2-D float array in [0, 1],
an RGB image is (3, H, W) channel-first, and a binary mask is a 2-D uint8
array holding only 0 and 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

SOBEL_X = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=np.float64)
PREWITT_X = np.array([[-1, 0, 1], [-1, 0, 1], [-1, 0, 1]], dtype=np.float64)
# gain of the Sobel kernel on a unit step; maps Canny magnitudes onto [0, 1]
SOBEL_GAIN = 4.0

CANNY_SIGMA = 1.4
CANNY_LOW = 0.1
CANNY_HIGH = 0.2


@dataclass(frozen=True)
class StructuringElement:
    footprint: np.ndarray

    def __post_init__(self):
        fp = np.asarray(self.footprint, dtype=bool)
        if fp.ndim != 2 or fp.shape[0] != fp.shape[1] or fp.shape[0] % 2 == 0:
            raise ValueError(f"structuring element must be square with odd side, got shape {fp.shape}")
        r = fp.shape[0] // 2
        if not fp[r, r]:
            raise ValueError("structuring element must contain its center")
        object.__setattr__(self, "footprint", fp)

    @property
    def side(self) -> int:
        return self.footprint.shape[0]

    @property
    def radius(self) -> int:
        return self.side // 2

    def offsets(self):
        r = self.radius
        ys, xs = np.nonzero(self.footprint)
        return list(zip((ys - r).tolist(), (xs - r).tolist()))

    @classmethod
    def square(cls, side: int = 3) -> "StructuringElement":
        return cls(np.ones((side, side), dtype=bool))

    @classmethod
    def cross(cls, side: int = 3) -> "StructuringElement":
        fp = np.zeros((side, side), dtype=bool)
        fp[side // 2, :] = True
        fp[:, side // 2] = True
        return cls(fp)


def to_gray(rgb: np.ndarray) -> np.ndarray:
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[0] != 3:
        raise ValueError(f"to_gray expects a (3, H, W) image, got {rgb.shape}")
    gray = 0.299 * rgb[0].astype(np.float64) + 0.587 * rgb[1] + 0.114 * rgb[2]
    return np.clip(gray, 0.0, 1.0).astype(np.float32)


def gaussian_kernel1d(sigma: float) -> np.ndarray:
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    r = math.ceil(3 * sigma)
    x = np.arange(-r, r + 1, dtype=np.float64)
    k = np.exp(-(x * x) / (2 * sigma * sigma))
    return k / k.sum()


def _correlate_rows(img: np.ndarray, k: np.ndarray) -> np.ndarray:
    r = len(k) // 2
    padded = np.pad(img, ((0, 0), (r, r)), mode="symmetric")
    w = img.shape[1]
    out = np.zeros(img.shape, dtype=np.float64)
    for i, kv in enumerate(k):
        out += kv * padded[:, i:i + w]
    return out


def gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur, radius ceil(3*sigma), mirrored borders."""
    k = gaussian_kernel1d(sigma)
    a = np.asarray(img, dtype=np.float64)
    out = _correlate_rows(a, k)
    out = _correlate_rows(out.T, k).T
    return out.astype(np.float32)


def correlate3x3(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    a = np.pad(np.asarray(img, dtype=np.float64), 1, mode="symmetric")
    h, w = np.shape(img)
    out = np.zeros((h, w), dtype=np.float64)
    for dy in range(3):
        for dx in range(3):
            if kernel[dy, dx]:
                out += kernel[dy, dx] * a[dy:dy + h, dx:dx + w]
    return out


def sobel_gradients(img: np.ndarray) -> tuple:
    return correlate3x3(img, SOBEL_X), correlate3x3(img, SOBEL_X.T)


def prewitt_gradients(img: np.ndarray) -> tuple:
    return correlate3x3(img, PREWITT_X), correlate3x3(img, PREWITT_X.T)


def sobel_edges(img: np.ndarray, threshold: float) -> np.ndarray:
    gx, gy = sobel_gradients(img)
    return (np.hypot(gx, gy) > threshold).astype(np.uint8)


def prewitt_edges(img: np.ndarray, threshold: float) -> np.ndarray:
    gx, gy = prewitt_gradients(img)
    return (np.hypot(gx, gy) > threshold).astype(np.uint8)


# neighbour offsets (dy, dx) along the quantized gradient direction, y pointing down
_NMS_STEPS = {0: (0, 1), 45: (1, 1), 90: (1, 0), 135: (1, -1)}


def quantize_direction(gx: np.ndarray, gy: np.ndarray) -> np.ndarray:
    angle = np.degrees(np.arctan2(gy, gx)) % 180.0
    bins = np.zeros(angle.shape, dtype=np.int16)
    bins[(angle >= 22.5) & (angle < 67.5)] = 45
    bins[(angle >= 67.5) & (angle < 112.5)] = 90
    bins[(angle >= 112.5) & (angle < 157.5)] = 135
    return bins


def non_max_suppression(mag: np.ndarray, bins: np.ndarray) -> np.ndarray:
    """Keep pixels that beat the forward neighbour (>) and tie-or-beat the backward one (>=)."""
    h, w = mag.shape
    padded = np.pad(mag, 1, mode="constant")
    keep = np.zeros(mag.shape, dtype=bool)
    for b, (dy, dx) in _NMS_STEPS.items():
        ahead = padded[1 + dy:1 + dy + h, 1 + dx:1 + dx + w]
        behind = padded[1 - dy:1 - dy + h, 1 - dx:1 - dx + w]
        keep |= (bins == b) & (mag > ahead) & (mag >= behind)
    return np.where(keep, mag, 0.0)


def hysteresis(mag: np.ndarray, t_low: float, t_high: float) -> np.ndarray:
    """Weak pixels (> t_low) survive iff 8-connected to a strong pixel (> t_high)."""
    weak = mag > t_low
    strong = mag > t_high
    labels, _ = ndimage.label(weak, structure=np.ones((3, 3), dtype=bool))
    keep = np.unique(labels[strong])
    keep = keep[keep > 0]
    return (np.isin(labels, keep) & weak).astype(np.uint8)


def canny(img: np.ndarray, sigma: float = CANNY_SIGMA, t_low: float = CANNY_LOW, t_high: float = CANNY_HIGH) -> np.ndarray:
    if not 0 < t_low < t_high:
        raise ValueError(f"canny needs 0 < t_low < t_high, got t_low={t_low}, t_high={t_high}")
    smooth = gaussian_blur(img, sigma)
    gx, gy = sobel_gradients(smooth)
    mag = np.hypot(gx, gy) / SOBEL_GAIN
    thin = non_max_suppression(mag, quantize_direction(gx, gy))
    return hysteresis(thin, t_low, t_high)


def _window_reduce(a: np.ndarray, k: StructuringElement, reduce) -> np.ndarray:
    r = k.radius
    h, w = a.shape
    padded = np.pad(a, r, mode="constant", constant_values=0)
    out = None
    for dy, dx in k.offsets():
        view = padded[r + dy:r + dy + h, r + dx:r + dx + w]
        out = view.copy() if out is None else reduce(out, view)
    return out


def grey_dilate(a: np.ndarray, k: StructuringElement) -> np.ndarray:
    """Windowed max over the footprint; outside the raster counts as 0."""
    return _window_reduce(np.asarray(a), k, np.maximum)


def grey_erode(a: np.ndarray, k: StructuringElement) -> np.ndarray:
    """Windowed min over the footprint; outside the raster counts as 0."""
    return _window_reduce(np.asarray(a), k, np.minimum)


def _check_binary(mask: np.ndarray) -> np.ndarray:
    m = np.asarray(mask)
    if m.ndim != 2:
        raise ValueError(f"binary mask must be 2-D, got {m.shape}")
    return (m != 0).astype(np.uint8)


def dilate(mask: np.ndarray, k: StructuringElement) -> np.ndarray:
    return grey_dilate(_check_binary(mask), k)


def erode(mask: np.ndarray, k: StructuringElement) -> np.ndarray:
    return grey_erode(_check_binary(mask), k)


def minmax_normalize(img: np.ndarray) -> np.ndarray:
    a = np.asarray(img, dtype=np.float64)
    lo, hi = a.min(), a.max()
    if hi <= lo:
        return np.zeros(a.shape, dtype=np.float32)
    return ((a - lo) / (hi - lo)).astype(np.float32)


def step(img: np.ndarray, tau: float) -> np.ndarray:
    return (np.asarray(img) > tau).astype(np.uint8)
