"""Feature-difference (FD) and edge-difference (ED) prior maps.

Both maps come out of the same difference operation: absolute difference,
then dilation, then erosion with one structuring element (a closing). FD
maps are built from the features of a frozen extractor at 1/8 resolution,
ED maps from binary edge masks at full resolution.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import imgproc
from .idtn import read_idtn
from .imgproc import StructuringElement
from .optim import kaiming_uniform
from .tensor import Tensor, conv2d, max_pool2d, no_grad, relu

DOWNSAMPLE = 8
EDGE_OPS = ("canny", "sobel", "prewitt")
# raw-magnitude thresholds for the plain gradient operators (0.2 of a unit step)
DEFAULT_EDGE_THRESHOLD = {"sobel": 0.8, "prewitt": 0.6}


def difference_op(a, b, kernel: Optional[StructuringElement] = None) -> np.ndarray:
    """|a - b| closed by ``kernel``, channel by channel.

    Accepts (H, W) or (C, H, W). Binary inputs (uint8/bool) stay binary and
    go through set morphology; anything else uses windowed max/min.
    """
    kernel = kernel or StructuringElement.square(3)
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"difference_op: shape mismatch {a.shape} vs {b.shape}")
    if a.ndim not in (2, 3):
        raise ValueError(f"difference_op expects (H, W) or (C, H, W), got {a.shape}")
    binary = a.dtype in (np.uint8, np.bool_) and b.dtype in (np.uint8, np.bool_)
    if binary:
        r = ((a != 0) ^ (b != 0)).astype(np.uint8)
    else:
        r = np.abs(a.astype(np.float32) - b.astype(np.float32))
    planes = r[None] if r.ndim == 2 else r
    out = np.stack([imgproc.grey_erode(imgproc.grey_dilate(p, kernel), kernel) for p in planes])
    return out[0] if r.ndim == 2 else out


class RandomCNNExtractor:
    """Frozen three-block CNN (3x3 conv, ReLU, 2x2 max-pool) seeded from ``seed``.

    Channels go 3 -> c_p/4 -> c_p/2 -> c_p and the output is at 1/8 of the
    input resolution.
    """

    kind = "seeded-random-cnn"
    downsample_factor = DOWNSAMPLE

    def __init__(self, seed: int, c_p: int):
        if c_p < 4 or c_p % 4:
            raise ValueError(f"c_p must be a positive multiple of 4, got {c_p}")
        self.seed = int(seed)
        self.output_channels = c_p
        rng = np.random.default_rng(self.seed)
        chans = [3, c_p // 4, c_p // 2, c_p]
        self.weights = [
            kaiming_uniform((chans[i + 1], chans[i], 3, 3), rng).astype(np.float32) for i in range(3)
        ]

    def __call__(self, images: np.ndarray) -> np.ndarray:
        """Map (3, H, W) or (N, 3, H, W) images to (c_p, H/8, W/8) / (N, c_p, H/8, W/8)."""
        x = np.asarray(images, dtype=np.float32)
        single = x.ndim == 3
        if single:
            x = x[None]
        _check_divisible(x.shape[-2:])
        with no_grad():
            t = Tensor(x)
            for w in self.weights:
                t = max_pool2d(relu(conv2d(t, Tensor(w), padding=1)), 2)
        out = t.data.astype(np.float32)
        return out[0] if single else out

    def features(self, img_a, img_b) -> tuple:
        both = self(np.stack([np.asarray(img_a), np.asarray(img_b)]))
        return both[0], both[1]


class FeatureFileExtractor:
    """Features computed elsewhere and stored as IDTN files, one per image."""

    kind = "feature-file"
    downsample_factor = DOWNSAMPLE

    def __init__(self, path_a, path_b):
        self.fa = load_feature_file(path_a)
        self.fb = load_feature_file(path_b)
        if self.fa.shape != self.fb.shape:
            raise ValueError(f"feature files disagree in shape: {self.fa.shape} vs {self.fb.shape}")
        self.output_channels = self.fa.shape[0]

    def features(self, img_a, img_b) -> tuple:
        h, w = np.shape(img_a)[-2:]
        want = (h // DOWNSAMPLE, w // DOWNSAMPLE)
        if self.fa.shape[1:] != want:
            raise ValueError(f"feature map spatial shape {self.fa.shape[1:]} does not match image/8 = {want}")
        return self.fa, self.fb


def random_cnn_extractor(seed: int, c_p: int) -> RandomCNNExtractor:
    return RandomCNNExtractor(seed, c_p)


def load_feature_file(path) -> np.ndarray:
    t = read_idtn(path)
    if t.ndim == 4 and t.shape[0] == 1:
        t = t[0]
    if t.ndim != 3:
        raise ValueError(f"feature file {path} must hold a rank-3 tensor (or rank-4 with batch 1), got {t.shape}")
    return t


def _check_divisible(hw) -> None:
    h, w = hw
    if h % DOWNSAMPLE or w % DOWNSAMPLE:
        raise ValueError(f"image dims {h}x{w} must be divisible by {DOWNSAMPLE}")


def build_fd_map(img_a, img_b, extractor, kernel: Optional[StructuringElement] = None) -> np.ndarray:
    img_a = np.asarray(img_a)
    img_b = np.asarray(img_b)
    if img_a.shape != img_b.shape:
        raise ValueError(f"image sizes differ: {img_a.shape} vs {img_b.shape}")
    _check_divisible(img_a.shape[-2:])
    fa, fb = extractor.features(img_a, img_b)
    return difference_op(fa, fb, kernel).astype(np.float32)


def edge_mask(gray: np.ndarray, edge_op: str = "canny", params: Optional[dict] = None) -> np.ndarray:
    params = dict(params or {})
    if edge_op == "canny":
        return imgproc.canny(gray, **params)
    if edge_op == "sobel":
        return imgproc.sobel_edges(gray, params.get("threshold", DEFAULT_EDGE_THRESHOLD["sobel"]))
    if edge_op == "prewitt":
        return imgproc.prewitt_edges(gray, params.get("threshold", DEFAULT_EDGE_THRESHOLD["prewitt"]))
    raise ValueError(f"edge operator must be one of {EDGE_OPS}, got {edge_op!r}")


def build_ed_map(img_a, img_b, edge_op: str = "canny", params: Optional[dict] = None,
                 kernel: Optional[StructuringElement] = None) -> np.ndarray:
    img_a = np.asarray(img_a)
    img_b = np.asarray(img_b)
    if img_a.shape != img_b.shape:
        raise ValueError(f"image sizes differ: {img_a.shape} vs {img_b.shape}")
    ea = edge_mask(imgproc.to_gray(img_a), edge_op, params)
    eb = edge_mask(imgproc.to_gray(img_b), edge_op, params)
    return difference_op(ea, eb, kernel)


@dataclass
class MapBuilder:
    """Bundles the FD/ED settings so a sample's prior maps can be built in one call."""

    extractor: object
    edge_op: str = "canny"
    edge_params: dict = field(default_factory=dict)
    kernel_size: int = 3

    def __call__(self, img_a, img_b) -> tuple:
        k = StructuringElement.square(self.kernel_size)
        fd = build_fd_map(img_a, img_b, self.extractor, k)
        ed = build_ed_map(img_a, img_b, self.edge_op, self.edge_params, k)
        return fd, ed
