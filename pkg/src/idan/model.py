"""IDAN: U-net backbone on the concatenated image pair, FDA and EC modules,
split/subtract change head, and an analytic FLOP counter.

Parameters live in one flat ``{name: Tensor}`` dict so checkpoints, the
optimizer and gradient checks can address them by name.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import imgproc
from . import tensor as T
from .optim import init_parameter
from .tensor import Tensor, bilinear_matrix

FD_FACTOR = 8
EC_STEP_TAU = 0.5


@dataclass(frozen=True)
class UNetConfig:
    in_channels: int = 6
    base_channels: int = 8
    depth: int = 3
    head_channels: Optional[int] = None

    def __post_init__(self):
        if self.in_channels < 1 or self.base_channels < 1 or self.depth < 1:
            raise ValueError(f"invalid UNetConfig {self}")
        if self.head_channels is None:
            object.__setattr__(self, "head_channels", self.base_channels)
        if self.head_channels < 2 or self.head_channels % 2:
            raise ValueError(f"head_channels must be even, got {self.head_channels}")

    def channels(self, level: int) -> int:
        return self.base_channels * 2 ** level


def _conv_spec(config: UNetConfig, fd_channels: int, use_fda: bool, use_ec: bool) -> list:
    """(name, c_in, c_out, k, bias) for every convolution, in forward order."""
    specs = []
    c_prev = config.in_channels
    for lvl in range(config.depth):
        c = config.channels(lvl)
        specs += [(f"enc{lvl}.conv1", c_prev, c, 3, True), (f"enc{lvl}.conv2", c, c, 3, True)]
        c_prev = c
    c_mid = config.channels(config.depth)
    specs += [("mid.conv1", c_prev, c_mid, 3, True), ("mid.conv2", c_mid, c_mid, 3, True)]
    if use_fda:
        specs += [("fda.conv_a", fd_channels, c_mid, 1, True), ("fda.conv_b", fd_channels, c_mid, 1, False)]
    c_prev = c_mid
    for lvl in reversed(range(config.depth)):
        c = config.channels(lvl)
        c_out = config.head_channels if lvl == 0 else c
        specs += [
            (f"dec{lvl}.up", c_prev, c, 3, True),
            (f"dec{lvl}.conv1", 2 * c, c, 3, True),
            (f"dec{lvl}.conv2", c, c_out, 3, True),
        ]
        c_prev = c_out
    if use_ec:
        specs.append(("ec.conv_e", 1, config.head_channels, 1, False))
    specs.append(("head.conv", config.head_channels // 2, 1, 1, True))
    return specs


def _conv(params: dict, name: str, x: Tensor) -> Tensor:
    w = params[f"{name}.weight"]
    b = params.get(f"{name}.bias")
    return T.conv2d(x, w, b, stride=1, padding=w.shape[-1] // 2)


def fda_module(params: dict, x1: Tensor, fd: Tensor) -> Tensor:
    """x1 * sigmoid(ConvA(fd)) + ConvB(fd); fd is resized to x1's grid when they differ."""
    if x1.shape[0] != fd.shape[0]:
        raise T.ShapeError(f"fda_module: batch mismatch x1 {x1.shape} vs fd {fd.shape}")
    if fd.shape[2:] != x1.shape[2:]:
        fd = T.resize_bilinear(fd, x1.shape[2], x1.shape[3])
    wa = params["fda.conv_a.weight"]
    if wa.shape[1] != fd.shape[1] or wa.shape[0] != x1.shape[1]:
        raise T.ShapeError(f"fda_module: fd {fd.shape} / x1 {x1.shape} do not fit conv_a {wa.shape}")
    gate = T.sigmoid(_conv(params, "fda.conv_a", fd))
    return T.mul(x1, gate) + _conv(params, "fda.conv_b", fd)


def ec_mask(ed: np.ndarray, fd: np.ndarray) -> np.ndarray:
    """ed * step(minmax(upsample(mean_c(fd))), 0.5), per sample; returns (N, 1, H, W)."""
    ed = np.asarray(ed)
    fd = np.asarray(fd, dtype=np.float64)
    if ed.ndim == 3:
        ed = ed[:, None]
    n, _, h, w = ed.shape
    if fd.shape[0] != n:
        raise T.ShapeError(f"ec mask: batch mismatch ed {ed.shape} vs fd {fd.shape}")
    mh = bilinear_matrix(fd.shape[2], h)
    mw = bilinear_matrix(fd.shape[3], w)
    out = np.zeros((n, 1, h, w), dtype=np.float32)
    for i in range(n):
        up = mh @ fd[i].mean(axis=0) @ mw.T
        gate = imgproc.step(imgproc.minmax_normalize(up), EC_STEP_TAU)
        out[i, 0] = ed[i, 0] * gate
    return out


def ec_module(params: dict, x2: Tensor, ed, fd) -> Tensor:
    """x2 + ConvE(m) with the no-bias ConvE, so an all-zero mask leaves x2 untouched."""
    ed = np.asarray(ed)
    if ed.ndim == 3:
        ed = ed[:, None]
    if ed.shape[0] != x2.shape[0] or ed.shape[2:] != x2.shape[2:]:
        raise T.ShapeError(f"ec_module: ed {ed.shape} does not match x2 {x2.shape}")
    m = ec_mask(ed, fd)
    if not m.any():
        return x2
    return x2 + _conv(params, "ec.conv_e", Tensor(m))


def split_subtract_head(params: dict, f: Tensor, return_logits: bool = False) -> Tensor:
    f1, f2 = T.split_channels_half(f)
    logits = _conv(params, "head.conv", f1 - f2)
    return logits if return_logits else T.sigmoid(logits)


class IDANModel:
    def __init__(self, config: UNetConfig = UNetConfig(), fd_channels: int = 16,
                 use_fda: bool = True, use_ec: bool = True, seed: int = 0):
        self.config = config
        self.fd_channels = fd_channels
        self.use_fda = use_fda
        self.use_ec = use_ec
        rng = np.random.default_rng(seed)
        self.params: dict = {}
        for name, cin, cout, k, bias in _conv_spec(config, fd_channels, use_fda, use_ec):
            self.params[f"{name}.weight"] = init_parameter((cout, cin, k, k), "kaiming-uniform", rng)
            if bias:
                self.params[f"{name}.bias"] = init_parameter((cout,), "zeros", rng)

    @classmethod
    def from_params(cls, params: dict) -> "IDANModel":
        """Rebuild a model whose architecture is implied by checkpoint tensor shapes."""
        depth = 0
        while f"enc{depth}.conv1.weight" in params:
            depth += 1
        if depth == 0:
            raise ValueError("checkpoint has no encoder parameters")
        w0 = params["enc0.conv1.weight"]
        config = UNetConfig(
            in_channels=int(w0.shape[1]),
            base_channels=int(w0.shape[0]),
            depth=depth,
            head_channels=int(params["dec0.conv2.weight"].shape[0]),
        )
        use_fda = "fda.conv_a.weight" in params
        fd_channels = int(params["fda.conv_a.weight"].shape[1]) if use_fda else 16
        model = cls(config, fd_channels, use_fda, "ec.conv_e.weight" in params)
        if set(params) != set(model.params):
            raise ValueError(f"checkpoint parameter names do not match architecture: {sorted(set(params) ^ set(model.params))}")
        for name, value in params.items():
            arr = np.asarray(value.data if isinstance(value, Tensor) else value)
            if arr.shape != model.params[name].shape:
                raise ValueError(f"parameter {name}: checkpoint shape {arr.shape} != expected {model.params[name].shape}")
            model.params[name] = Tensor(arr, requires_grad=True)
        return model

    def __call__(self, img_a, img_b, fd, ed, return_logits: bool = False) -> Tensor:
        return self.forward(img_a, img_b, fd, ed, return_logits)

    def forward(self, img_a, img_b, fd, ed, return_logits: bool = False) -> Tensor:
        a = T.as_tensor(img_a)
        b = T.as_tensor(img_b)
        cfg = self.config
        if a.shape != b.shape or a.data.ndim != 4:
            raise T.ShapeError(f"input stage: image pair shapes {a.shape} / {b.shape} must match and be NCHW")
        n, _, h, w = a.shape
        if h % 2 ** cfg.depth or w % 2 ** cfg.depth:
            raise T.ShapeError(f"input stage: {h}x{w} not divisible by 2^{cfg.depth}")
        x = T.concat_channels(a, b)
        if x.shape[1] != cfg.in_channels:
            raise T.ShapeError(f"input stage: concatenated pair has {x.shape[1]} channels, config expects {cfg.in_channels}")

        fd_t = T.as_tensor(fd)
        ed_arr = np.asarray(ed)
        if ed_arr.ndim == 3:
            ed_arr = ed_arr[:, None]
        if self.use_fda or self.use_ec:
            if fd_t.data.ndim != 4 or fd_t.shape[0] != n or fd_t.shape[2:] != (h // FD_FACTOR, w // FD_FACTOR):
                raise T.ShapeError(f"fd stage: FD-map {fd_t.shape} must be (N, c_p, {h // FD_FACTOR}, {w // FD_FACTOR})")
        if self.use_ec and ed_arr.shape != (n, 1, h, w):
            raise T.ShapeError(f"ec stage: ED-map {ed_arr.shape} must be ({n}, 1, {h}, {w})")

        p = self.params
        skips = []
        for lvl in range(cfg.depth):
            x = T.relu(_conv(p, f"enc{lvl}.conv1", x))
            x = T.relu(_conv(p, f"enc{lvl}.conv2", x))
            skips.append(x)
            x = T.max_pool2d(x, 2)
        x = T.relu(_conv(p, "mid.conv1", x))
        x = T.relu(_conv(p, "mid.conv2", x))
        if self.use_fda:
            x = fda_module(p, x, fd_t)
        for lvl in reversed(range(cfg.depth)):
            x = _conv(p, f"dec{lvl}.up", T.upsample_bilinear(x, 2))
            x = T.concat_channels(skips[lvl], x)
            x = T.relu(_conv(p, f"dec{lvl}.conv1", x))
            x = T.relu(_conv(p, f"dec{lvl}.conv2", x))
        if self.use_ec:
            x = ec_module(p, x, ed_arr, fd_t.data)
        return split_subtract_head(p, x, return_logits)

    def parameter_groups(self) -> dict:
        groups: dict = {}
        for name in self.params:
            groups.setdefault(name.split(".")[0], []).append(name)
        return groups


def idan_forward(model: IDANModel, img_a, img_b, fd, ed) -> Tensor:
    return model.forward(img_a, img_b, fd, ed)


# ---------------------------------------------------------------------------
# FLOP accounting


def conv_flops(k: int, c_in: int, c_out: int, h_out: int, w_out: int) -> int:
    return 2 * k * k * c_in * c_out * h_out * w_out


def flop_table(config: UNetConfig, with_modules: bool, input_hw: tuple, fd_channels: int = 16) -> list:
    """Per-layer (name, kind, flops) rows mirroring ``IDANModel.forward``.

    Convolutions cost 2*K^2*C_in*C_out*H_out*W_out; pooling, activations,
    upsampling and elementwise arithmetic cost one op per output element.
    """
    h, w = input_hw
    rows = []
    conv_by_name = {s[0]: s for s in _conv_spec(config, fd_channels, with_modules, with_modules)}

    def conv(name, hh, ww):
        _, cin, cout, k, _ = conv_by_name[name]
        rows.append((name, "conv", conv_flops(k, cin, cout, hh, ww)))
        return cout

    def elem(name, kind, count):
        rows.append((name, kind, int(count)))

    hh, ww = h, w
    for lvl in range(config.depth):
        for c in ("conv1", "conv2"):
            cout = conv(f"enc{lvl}.{c}", hh, ww)
            elem(f"enc{lvl}.{c}.relu", "activation", cout * hh * ww)
        hh, ww = hh // 2, ww // 2
        elem(f"enc{lvl}.pool", "pool", cout * hh * ww)
    for c in ("conv1", "conv2"):
        cout = conv(f"mid.{c}", hh, ww)
        elem(f"mid.{c}.relu", "activation", cout * hh * ww)
    if with_modules:
        fh, fw = h // FD_FACTOR, w // FD_FACTOR
        if (fh, fw) != (hh, ww):
            elem("fda.resize", "upsample", fd_channels * hh * ww)
        conv("fda.conv_a", hh, ww)
        elem("fda.sigmoid", "activation", cout * hh * ww)
        elem("fda.mul", "elementwise", cout * hh * ww)
        conv("fda.conv_b", hh, ww)
        elem("fda.add", "elementwise", cout * hh * ww)
    for lvl in reversed(range(config.depth)):
        c_in = cout
        hh, ww = hh * 2, ww * 2
        elem(f"dec{lvl}.upsample", "upsample", c_in * hh * ww)
        conv(f"dec{lvl}.up", hh, ww)
        for c in ("conv1", "conv2"):
            cout = conv(f"dec{lvl}.{c}", hh, ww)
            elem(f"dec{lvl}.{c}.relu", "activation", cout * hh * ww)
    if with_modules:
        conv("ec.conv_e", hh, ww)
        elem("ec.add", "elementwise", cout * hh * ww)
    elem("head.subtract", "elementwise", cout // 2 * hh * ww)
    conv("head.conv", hh, ww)
    elem("head.sigmoid", "activation", hh * ww)
    return rows


def flop_count(config: UNetConfig, with_modules: bool, input_hw: tuple, fd_channels: int = 16) -> float:
    """Total forward cost in GFLOPs (10^9)."""
    return sum(r[2] for r in flop_table(config, with_modules, input_hw, fd_channels)) / 1e9
