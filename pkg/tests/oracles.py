"""Slow, literal reference implementations used as test oracles."""

import math

import numpy as np


def set_dilate(mask, footprint):
    """Pixel is set iff the footprint placed at it meets the foreground (outside = background)."""
    h, w = mask.shape
    r = footprint.shape[0] // 2
    out = np.zeros((h, w), dtype=np.uint8)
    for y in range(h):
        for x in range(w):
            hit = False
            for dy in range(-r, r + 1):
                for dx in range(-r, r + 1):
                    yy, xx = y + dy, x + dx
                    if footprint[dy + r, dx + r] and 0 <= yy < h and 0 <= xx < w and mask[yy, xx]:
                        hit = True
            out[y, x] = hit
    return out


def set_erode(mask, footprint):
    """Pixel is set iff the whole footprint placed at it lies inside the foreground."""
    h, w = mask.shape
    r = footprint.shape[0] // 2
    out = np.zeros((h, w), dtype=np.uint8)
    for y in range(h):
        for x in range(w):
            inside = True
            for dy in range(-r, r + 1):
                for dx in range(-r, r + 1):
                    if not footprint[dy + r, dx + r]:
                        continue
                    yy, xx = y + dy, x + dx
                    if not (0 <= yy < h and 0 <= xx < w and mask[yy, xx]):
                        inside = False
            out[y, x] = inside
    return out


def set_closing(mask, footprint):
    return set_erode(set_dilate(mask, footprint), footprint)


def blur_2d(img, sigma):
    """Non-separable Gaussian blur with mirrored borders, one output pixel at a time."""
    r = math.ceil(3 * sigma)
    xs = np.arange(-r, r + 1)
    k1 = np.exp(-(xs ** 2) / (2 * sigma ** 2))
    k2 = np.outer(k1, k1)
    k2 /= k2.sum()
    padded = np.pad(np.asarray(img, dtype=np.float64), r, mode="symmetric")
    h, w = img.shape
    out = np.zeros((h, w))
    for y in range(h):
        for x in range(w):
            out[y, x] = np.sum(padded[y:y + 2 * r + 1, x:x + 2 * r + 1] * k2)
    return out


def bilinear_resize(img, out_h, out_w):
    """Half-pixel-centre bilinear resize of a 2-D array, edges clamped."""
    h, w = img.shape
    out = np.zeros((out_h, out_w))
    for i in range(out_h):
        sy = min(max((i + 0.5) * h / out_h - 0.5, 0.0), h - 1)
        y0 = int(math.floor(sy))
        y1 = min(y0 + 1, h - 1)
        fy = sy - y0
        for j in range(out_w):
            sx = min(max((j + 0.5) * w / out_w - 0.5, 0.0), w - 1)
            x0 = int(math.floor(sx))
            x1 = min(x0 + 1, w - 1)
            fx = sx - x0
            out[i, j] = ((1 - fy) * (1 - fx) * img[y0, x0] + (1 - fy) * fx * img[y0, x1]
                         + fy * (1 - fx) * img[y1, x0] + fy * fx * img[y1, x1])
    return out
