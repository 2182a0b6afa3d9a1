"""Dataset machinery: tiling, 1-in-k split, quarter crops, augmentation,
PNG I/O, the on-disk dataset layout, and the synthetic change-pair generator.

RGB rasters are (3, H, W) float32 in [0, 1]; labels are (H, W) uint8 in {0, 1}.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from PIL import Image

from .tensor import bilinear_matrix

log = logging.getLogger(__name__)

SPLITS = ("train", "test", "val")


@dataclass
class SamplePair:
    image_before: np.ndarray
    image_after: np.ndarray
    label: np.ndarray
    origin: tuple = ()

    def __post_init__(self):
        hw = self.label.shape
        if self.image_before.shape[1:] != hw or self.image_after.shape[1:] != hw:
            raise ValueError(
                f"sample rasters disagree: {self.image_before.shape}, {self.image_after.shape}, label {hw}"
            )


@dataclass(frozen=True)
class TileSpec:
    window: int = 512
    stride: int = 512
    test_every_k: int = 5

    def __post_init__(self):
        if self.window < 1 or self.stride < 1 or self.test_every_k < 1:
            raise ValueError(f"invalid TileSpec {self}")


@dataclass(frozen=True)
class AugmentConfig:
    pad_to: int = 1024
    crop_scale_range: tuple = (0.7, 1.3)
    output_size: int = 512
    rotation_range_deg: tuple = (-15.0, 15.0)
    illumination_range: tuple = (0.8, 1.2)

    def __post_init__(self):
        lo, hi = self.crop_scale_range
        if not 0 < lo <= hi:
            raise ValueError(f"crop_scale_range must be positive with min <= max, got {self.crop_scale_range}")
        if self.rotation_range_deg[0] > self.rotation_range_deg[1]:
            raise ValueError(f"rotation range reversed: {self.rotation_range_deg}")
        ilo, ihi = self.illumination_range
        if not 0 < ilo <= ihi:
            raise ValueError(f"illumination range must be positive with min <= max, got {self.illumination_range}")
        if self.output_size < 1 or self.pad_to < 1:
            raise ValueError(f"invalid sizes in {self}")

    def crop_side_range(self) -> tuple:
        lo, hi = self.crop_scale_range
        return int(round(lo * self.output_size)), int(round(hi * self.output_size))


# ---------------------------------------------------------------------------
# tiling and splits


def tile_origins(width: int, height: int, spec: TileSpec) -> list:
    """Row-major (x, y) tile corners; border remainders smaller than the window are dropped."""
    if width < spec.window or height < spec.window:
        log.warning("raster %dx%d is smaller than the %d window; no tiles", width, height, spec.window)
        return []
    nx = (width - spec.window) // spec.stride + 1
    ny = (height - spec.window) // spec.stride + 1
    return [(ix * spec.stride, iy * spec.stride) for iy in range(ny) for ix in range(nx)]


def tile_pair(img_a: np.ndarray, img_b: np.ndarray, label: np.ndarray, spec: TileSpec = TileSpec()) -> list:
    if img_a.shape != img_b.shape or img_a.shape[1:] != label.shape:
        raise ValueError(f"rasters disagree: {img_a.shape}, {img_b.shape}, label {label.shape}")
    h, w = label.shape
    win = spec.window
    return [
        SamplePair(img_a[:, y:y + win, x:x + win], img_b[:, y:y + win, x:x + win], label[y:y + win, x:x + win], (x, y))
        for x, y in tile_origins(w, h, spec)
    ]


def split_every_k(items: Sequence, k: int = 5) -> tuple:
    """Items at 1-based positions divisible by k go to test, the rest to train."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    train = [it for i, it in enumerate(items, start=1) if i % k]
    test = [it for i, it in enumerate(items, start=1) if i % k == 0]
    return train, test


def crop_quarters(sample: SamplePair) -> list:
    """Non-overlapping quadrants in order TL, TR, BL, BR."""
    h, w = sample.label.shape
    if h % 2 or w % 2:
        raise ValueError(f"crop_quarters needs even dims, got {h}x{w}")
    hh, hw = h // 2, w // 2
    out = []
    for y, x in ((0, 0), (0, hw), (hh, 0), (hh, hw)):
        out.append(SamplePair(
            sample.image_before[:, y:y + hh, x:x + hw],
            sample.image_after[:, y:y + hh, x:x + hw],
            sample.label[y:y + hh, x:x + hw],
            (x, y),
        ))
    return out


# ---------------------------------------------------------------------------
# augmentation


@dataclass(frozen=True)
class AugmentParams:
    side: int
    y0: int
    x0: int
    angle_deg: float
    gain_before: float
    gain_after: float


def sample_augment_params(rng: np.random.Generator, cfg: AugmentConfig, size: tuple) -> AugmentParams:
    ph, pw = max(cfg.pad_to, size[0]), max(cfg.pad_to, size[1])
    lo, hi = cfg.crop_side_range()
    side = int(round(rng.uniform(lo, hi)))
    side = min(side, ph, pw)
    y0 = int(rng.integers(0, ph - side + 1))
    x0 = int(rng.integers(0, pw - side + 1))
    angle = float(rng.uniform(*cfg.rotation_range_deg))
    g_before = float(rng.uniform(*cfg.illumination_range))
    g_after = float(rng.uniform(*cfg.illumination_range))
    return AugmentParams(side, y0, x0, angle, g_before, g_after)


def _pad_to(a: np.ndarray, size: int) -> np.ndarray:
    h, w = a.shape[-2:]
    py, px = max(0, size - h), max(0, size - w)
    pad = [(0, 0)] * (a.ndim - 2) + [(py // 2, py - py // 2), (px // 2, px - px // 2)]
    return np.pad(a, pad)


def _resize_bilinear(img: np.ndarray, n: int) -> np.ndarray:
    mh = bilinear_matrix(img.shape[-2], n)
    mw = bilinear_matrix(img.shape[-1], n)
    return mh @ img @ mw.T


def _resize_nearest(mask: np.ndarray, n: int) -> np.ndarray:
    h, w = mask.shape
    ys = np.minimum(np.floor((np.arange(n) + 0.5) * h / n).astype(int), h - 1)
    xs = np.minimum(np.floor((np.arange(n) + 0.5) * w / n).astype(int), w - 1)
    return mask[np.ix_(ys, xs)]


def _rotation_source(n: int, angle_deg: float) -> tuple:
    """Source coordinates for rotating an n x n raster about its center (inverse map)."""
    c = (n - 1) / 2.0
    t = math.radians(angle_deg)
    cos, sin = math.cos(t), math.sin(t)
    yy, xx = np.mgrid[0:n, 0:n].astype(np.float64)
    dy, dx = yy - c, xx - c
    sy = cos * dy - sin * dx + c
    sx = sin * dy + cos * dx + c
    return sy, sx


def _sample_bilinear(img: np.ndarray, sy: np.ndarray, sx: np.ndarray) -> np.ndarray:
    """Bilinear lookup with zero fill outside the raster; img is (C, H, W)."""
    _, h, w = img.shape
    y0 = np.floor(sy).astype(int)
    x0 = np.floor(sx).astype(int)
    fy, fx = sy - y0, sx - x0
    out = np.zeros((img.shape[0],) + sy.shape, dtype=np.float64)
    for oy, wy in ((0, 1 - fy), (1, fy)):
        for ox, wx in ((0, 1 - fx), (1, fx)):
            yy, xx = y0 + oy, x0 + ox
            ok = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
            vals = img[:, np.clip(yy, 0, h - 1), np.clip(xx, 0, w - 1)]
            out += np.where(ok, wy * wx, 0.0) * vals
    return out


def _sample_nearest(mask: np.ndarray, sy: np.ndarray, sx: np.ndarray) -> np.ndarray:
    h, w = mask.shape
    yy = np.floor(sy + 0.5).astype(int)
    xx = np.floor(sx + 0.5).astype(int)
    ok = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
    return np.where(ok, mask[np.clip(yy, 0, h - 1), np.clip(xx, 0, w - 1)], 0).astype(mask.dtype)


def apply_augment(sample: SamplePair, params: AugmentParams, cfg: AugmentConfig,
                  illuminate: bool = True) -> SamplePair:
    """Pad, crop, resize, rotate (shared geometry), then per-image brightness gain."""
    n = cfg.output_size
    s, y0, x0 = params.side, params.y0, params.x0
    images = []
    for img in (sample.image_before, sample.image_after):
        a = _pad_to(np.asarray(img, dtype=np.float64), cfg.pad_to)[:, y0:y0 + s, x0:x0 + s]
        images.append(_resize_bilinear(a, n) if s != n else a)
    lab = _pad_to(np.asarray(sample.label, dtype=np.uint8), cfg.pad_to)[y0:y0 + s, x0:x0 + s]
    lab = _resize_nearest(lab, n) if s != n else lab
    if params.angle_deg != 0.0:
        sy, sx = _rotation_source(n, params.angle_deg)
        images = [_sample_bilinear(a, sy, sx) for a in images]
        lab = _sample_nearest(lab, sy, sx)
    if illuminate:
        images = [images[0] * params.gain_before, images[1] * params.gain_after]
    before, after = (np.clip(a, 0.0, 1.0).astype(np.float32) for a in images)
    return SamplePair(before, after, np.ascontiguousarray(lab, dtype=np.uint8), sample.origin)


def augment(sample: SamplePair, rng: np.random.Generator, cfg: AugmentConfig = AugmentConfig()) -> SamplePair:
    params = sample_augment_params(rng, cfg, sample.label.shape)
    return apply_augment(sample, params, cfg)


# ---------------------------------------------------------------------------
# PNG I/O and dataset layout


def load_png(path, label: bool = False) -> np.ndarray:
    """RGB(A) -> (3, H, W) float32 in [0, 1]; grayscale -> (H, W); labels -> {0, 1} uint8."""
    with Image.open(path) as im:
        if label:
            return (np.asarray(im.convert("L")) > 127).astype(np.uint8)
        if im.mode in ("L", "I;16", "I", "F", "1"):
            return np.asarray(im.convert("L"), dtype=np.float32) / 255.0
        arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def to_uint8(values: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(values, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def save_png(path, image: np.ndarray, label: bool = False) -> None:
    a = np.asarray(image)
    if label:
        Image.fromarray(((a != 0) * 255).astype(np.uint8), mode="L").save(path)
        return
    if a.dtype != np.uint8:
        a = to_uint8(a)
    if a.ndim == 3:
        a = a.transpose(1, 2, 0)
        Image.fromarray(np.ascontiguousarray(a), mode="RGBA" if a.shape[2] == 4 else "RGB").save(path)
    else:
        Image.fromarray(a, mode="L").save(path)


def png_size(path) -> tuple:
    """(width, height) from the header, without decoding pixels."""
    with Image.open(path) as im:
        return im.size


def write_dataset(root, entries: Sequence[tuple]) -> None:
    """entries: (tile_id, SamplePair, split). Writes ``{A,B,label}/<id>.png`` and ``index.txt``."""
    root = Path(root)
    for sub in ("A", "B", "label"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    lines = []
    for tile_id, sample, split in entries:
        if split not in SPLITS:
            raise ValueError(f"unknown split {split!r}")
        save_png(root / "A" / f"{tile_id}.png", sample.image_before)
        save_png(root / "B" / f"{tile_id}.png", sample.image_after)
        save_png(root / "label" / f"{tile_id}.png", sample.label, label=True)
        lines.append(f"{tile_id} {split}")
    (root / "index.txt").write_text("\n".join(lines) + "\n")


def read_index(root) -> list:
    out = []
    for n, line in enumerate(Path(root, "index.txt").read_text().splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 2 or parts[1] not in SPLITS:
            raise ValueError(f"index.txt line {n}: expected '<tile_id> <train|test|val>', got {line!r}")
        out.append((parts[0], parts[1]))
    return out


def read_dataset(root, split: Optional[str] = None) -> list:
    root = Path(root)
    out = []
    for tile_id, sp in read_index(root):
        if split is not None and sp != split:
            continue
        sample = SamplePair(
            load_png(root / "A" / f"{tile_id}.png"),
            load_png(root / "B" / f"{tile_id}.png"),
            load_png(root / "label" / f"{tile_id}.png", label=True),
            (tile_id,),
        )
        out.append((tile_id, sample, sp))
    return out


def quarter_manifest(entries: Sequence[tuple]) -> list:
    """(group_id, split) -> four (group_id_q<i>, split) rows, quadrant order TL, TR, BL, BR."""
    return [(f"{gid}_q{i}", split) for gid, split in entries for i in range(4)]


# ---------------------------------------------------------------------------
# synthetic corpus


def _smooth_noise(rng: np.random.Generator, size: int, cells: int) -> np.ndarray:
    coarse = rng.uniform(0.0, 1.0, size=(3, cells, cells))
    m = bilinear_matrix(cells, size)
    return m @ coarse @ m.T


def _rect(rng: np.random.Generator, size: int) -> tuple:
    lo, hi = max(2, int(round(0.1 * size))), max(3, int(round(0.3 * size)))
    h = int(rng.integers(lo, hi + 1))
    w = int(rng.integers(lo, hi + 1))
    y = int(rng.integers(0, size - h + 1))
    x = int(rng.integers(0, size - w + 1))
    return y, x, h, w


def _roof_color(rng: np.random.Generator) -> np.ndarray:
    base = rng.uniform(0.0, 0.12) if rng.random() < 0.5 else rng.uniform(0.78, 1.0)
    return np.clip(base + rng.uniform(-0.06, 0.06, size=3), 0.0, 1.0)


def synth_sample(rng: np.random.Generator, size: int = 64) -> SamplePair:
    """One before/after pair: shared smooth background, 0-4 changed rectangles, 0-2 unchanged ones."""
    bg = 0.25 + 0.35 * _smooth_noise(rng, size, max(2, size // 8))
    before, after = bg.copy(), bg.copy()
    for _ in range(int(rng.integers(0, 3))):
        y, x, h, w = _rect(rng, size)
        col = _roof_color(rng)[:, None, None]
        before[:, y:y + h, x:x + w] = col
        after[:, y:y + h, x:x + w] = col
    label = np.zeros((size, size), dtype=np.uint8)
    n_changed = int(rng.choice(5, p=[0.1, 0.3, 0.25, 0.2, 0.15]))
    for _ in range(n_changed):
        y, x, h, w = _rect(rng, size)
        target = before if rng.random() < 0.5 else after
        target[:, y:y + h, x:x + w] = _roof_color(rng)[:, None, None]
        label[y:y + h, x:x + w] = 1
    before = before + rng.normal(0.0, 0.02, size=before.shape)
    after = after + rng.normal(0.0, 0.02, size=after.shape) + rng.uniform(-0.08, 0.08)
    return SamplePair(
        np.clip(before, 0, 1).astype(np.float32),
        np.clip(after, 0, 1).astype(np.float32),
        label,
    )


def synth_dataset(seed: int, count: int, size: int = 64) -> list:
    rng = np.random.default_rng(seed)
    out = []
    for i in range(count):
        s = synth_sample(rng, size)
        s.origin = (int(seed), i)
        out.append(s)
    return out
