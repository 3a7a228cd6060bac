"""Stochastic two-view augmentation for contrastive pretraining.

Images are float32 channel-first arrays with values in [0, 1]; every
transform clamps back into that range on the way out. A view is built by
the fixed chain crop -> horizontal flip -> grayscale -> color jitter,
each stage applied with its configured probability.

Random draws per view happen in a fixed order regardless of which
stages end up applied (coins and factors are always consumed), so a
given generator state pins the exact pair of views.

Vector inputs get a structural analogue of the same chain: a contiguous
window mask for the crop, order reversal for the flip, projection onto
the coordinate mean for grayscale, and a global affine map for jitter.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from vcl import kernels

_LUMA = (0.299, 0.587, 0.114)


@dataclass(frozen=True)
class AugmentConfig:
    crop_scale: tuple = (0.2, 1.0)
    crop_out: tuple = (16, 16)
    flip_prob: float = 0.5
    grayscale_prob: float = 0.2
    jitter_prob: float = 0.8
    brightness: tuple = (0.6, 1.4)
    contrast: tuple = (0.6, 1.4)
    saturation: tuple = (0.6, 1.4)
    hue: tuple = (0.9, 1.1)

    def __post_init__(self):
        lo, hi = self.crop_scale
        if not (0.0 < lo <= hi <= 1.0):
            raise ValueError(f"crop_scale must satisfy 0 < lo <= hi <= 1, "
                             f"got {self.crop_scale}")
        if len(self.crop_out) != 2 or any(d < 1 for d in self.crop_out):
            raise ValueError(f"bad crop_out {self.crop_out}")
        for name in ("flip_prob", "grayscale_prob", "jitter_prob"):
            p = getattr(self, name)
            if not (0.0 <= p <= 1.0):
                raise ValueError(f"{name} must be in [0, 1], got {p}")
        for name in ("brightness", "contrast", "saturation", "hue"):
            lo, hi = getattr(self, name)
            if not (0.0 < lo <= hi):
                raise ValueError(f"{name} range must satisfy 0 < lo <= hi, "
                                 f"got {getattr(self, name)}")


def _clip01(x: np.ndarray) -> np.ndarray:
    return np.clip(x, 0.0, 1.0)


def _luma(img: np.ndarray) -> np.ndarray:
    r, g, b = _LUMA
    return r * img[0] + g * img[1] + b * img[2]


def _check_image(x: np.ndarray) -> None:
    if x.ndim != 3 or x.shape[0] != 3:
        raise ValueError(f"image transforms need (3, H, W) input, got {x.shape}")


def crop_resize(x: np.ndarray, scale: float, cy: float, cx: float,
                out_hw: tuple) -> np.ndarray:
    """Crop a scale-area window anchored by fractional offsets, then resize.

    cy and cx in [0, 1] select where the window sits inside the valid
    offset range; the crop side is round(dim * sqrt(scale)), at least 1.
    """
    _check_image(x)
    if not (0.0 < scale <= 1.0):
        raise ValueError(f"crop scale must be in (0, 1], got {scale}")
    if not (0.0 <= cy <= 1.0 and 0.0 <= cx <= 1.0):
        raise ValueError(f"crop anchors must be in [0, 1], got ({cy}, {cx})")
    _, h, w = x.shape
    side = math.sqrt(scale)
    ch = max(1, round(h * side))
    cw = max(1, round(w * side))
    y0 = round(cy * (h - ch))
    x0 = round(cx * (w - cw))
    window = np.ascontiguousarray(x[:, y0:y0 + ch, x0:x0 + cw])
    out = kernels.bilinear_resize(window, out_hw[0], out_hw[1])
    return _clip01(out)


def hflip(x: np.ndarray) -> np.ndarray:
    _check_image(x)
    return np.ascontiguousarray(x[:, :, ::-1])


def grayscale(x: np.ndarray) -> np.ndarray:
    """Replace all channels by the luma of the image."""
    _check_image(x)
    y = _luma(x)
    return _clip01(np.broadcast_to(y, x.shape).astype(x.dtype, copy=True))


def jitter(x: np.ndarray, brightness: float, contrast: float,
           saturation: float, hue: float) -> np.ndarray:
    """Photometric jitter: brightness, contrast, saturation, then hue.

    All four factors are multiplicative around 1.0, and a factor of
    exactly 1.0 skips its stage, so the identity settings return the
    input untouched. Hue is approximated by blending toward the image
    with channels cyclically rolled, direction given by the sign of
    hue - 1 and blend weight by its magnitude.
    """
    _check_image(x)
    for name, v in (("brightness", brightness), ("contrast", contrast),
                    ("saturation", saturation), ("hue", hue)):
        if v <= 0:
            raise ValueError(f"{name} factor must be > 0, got {v}")
    y = x
    if brightness != 1.0:
        y = _clip01(y * brightness)
    if contrast != 1.0:
        m = _luma(y).mean()
        y = _clip01((y - m) * contrast + m)
    if saturation != 1.0:
        g = _luma(y)[None]
        y = _clip01(g + (y - g) * saturation)
    if hue != 1.0:
        t = hue - 1.0
        a = min(1.0, abs(t))
        rolled = np.roll(y, 1 if t > 0 else -1, axis=0)
        y = _clip01((1.0 - a) * y + a * rolled)
    return np.ascontiguousarray(y, dtype=x.dtype)


_KINDS = ("crop", "flip", "grayscale", "jitter")


def transform(kind: str, x: np.ndarray, params: dict) -> np.ndarray:
    """Apply one named transform with explicit parameters."""
    if kind == "crop":
        return crop_resize(x, params["scale"], params["cy"], params["cx"],
                           tuple(params["out_hw"]))
    if kind == "flip":
        return hflip(x)
    if kind == "grayscale":
        return grayscale(x)
    if kind == "jitter":
        return jitter(x, params["brightness"], params["contrast"],
                      params["saturation"], params["hue"])
    raise ValueError(f"unknown transform kind {kind!r}, expected one of {_KINDS}")


# ---------------------------------------------------------------------------
# vector analogue

def _vector_view(x: np.ndarray, cfg: AugmentConfig,
                 draws: dict) -> np.ndarray:
    n = x.shape[0]
    y = x.astype(np.float32, copy=True)
    keep = max(1, round(n * draws["scale"]))
    start = round(draws["cy"] * (n - keep))
    mask = np.zeros(n, dtype=np.float32)
    mask[start:start + keep] = 1.0
    y = y * mask
    if draws["flip"]:
        y = y[::-1].copy()
    if draws["gray"]:
        y = np.full_like(y, y.mean())
    if draws["jit"]:
        y = y * draws["brightness"]
        m = y.mean()
        y = (y - m) * draws["contrast"] + m
    return y


def _draw_params(cfg: AugmentConfig, rng: np.random.Generator) -> dict:
    """Consume one view's worth of randomness in a fixed order."""
    lo, hi = cfg.crop_scale
    return {
        "scale": float(rng.uniform(lo, hi)),
        "cy": float(rng.uniform()),
        "cx": float(rng.uniform()),
        "flip": bool(rng.uniform() < cfg.flip_prob),
        "gray": bool(rng.uniform() < cfg.grayscale_prob),
        "jit": bool(rng.uniform() < cfg.jitter_prob),
        "brightness": float(rng.uniform(*cfg.brightness)),
        "contrast": float(rng.uniform(*cfg.contrast)),
        "saturation": float(rng.uniform(*cfg.saturation)),
        "hue": float(rng.uniform(*cfg.hue)),
    }


def _image_view(x: np.ndarray, cfg: AugmentConfig, draws: dict) -> np.ndarray:
    y = crop_resize(x, draws["scale"], draws["cy"], draws["cx"], cfg.crop_out)
    if draws["flip"]:
        y = hflip(y)
    if draws["gray"]:
        y = grayscale(y)
    if draws["jit"]:
        y = jitter(y, draws["brightness"], draws["contrast"],
                   draws["saturation"], draws["hue"])
    return y


def make_view_pair(x: np.ndarray, cfg: AugmentConfig,
                   rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Two independently augmented views of one input.

    Images must be (3, H, W) float in [0, 1] with H, W at least the crop
    output size; 1-d inputs take the vector chain instead.
    """
    x = np.asarray(x, dtype=np.float32)
    if x.ndim == 1:
        return (_vector_view(x, cfg, _draw_params(cfg, rng)),
                _vector_view(x, cfg, _draw_params(cfg, rng)))
    _check_image(x)
    if x.shape[1] < cfg.crop_out[0] or x.shape[2] < cfg.crop_out[1]:
        raise ValueError(
            f"image {x.shape} smaller than crop output {cfg.crop_out}")
    if x.min() < 0.0 or x.max() > 1.0:
        raise ValueError("image values must lie in [0, 1]")
    return (_image_view(x, cfg, _draw_params(cfg, rng)),
            _image_view(x, cfg, _draw_params(cfg, rng)))
