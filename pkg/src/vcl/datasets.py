"""Synthetic multi-label image data, outlier injection, and batching.

Each sample starts from a latent vector u ~ N(0, I). The first A latent
coordinates define binary attribute labels by their sign. Images render
the latents through a fixed bank of oriented sinusoidal patterns (one
per latent coordinate, drawn once per dataset seed), squashed through a
sigmoid and corrupted with pixel noise, so label information is present
but entangled across the whole image.

Outlier injection replaces a fraction of rows with structureless
uniform-noise images and coin-flip labels, marking them in the dataset's
outlier mask; ``labels_only`` mode corrupts just the labels.

The on-disk format is a little-endian binary container with magic
"VCLD": version, counts, input shape, then raw float32 inputs, uint8
labels and the uint8 outlier mask. Loading is strict: bad magic,
truncation or trailing bytes all raise DataFormatError with an offset.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from vcl.augmentation import AugmentConfig, make_view_pair

MAGIC = b"VCLD"
VERSION = 1


class DataFormatError(ValueError):
    """Dataset file violates the container format."""


@dataclass(frozen=True)
class GenConfig:
    m: int = 2048
    attributes: int = 8
    latent_dim: int | None = None
    channels: int = 3
    height: int = 16
    width: int = 16
    noise_std: float = 0.1
    gain: float = 2.0
    freq_range: tuple = (0.7, 2.2)
    zoom_range: tuple = (0.8, 1.25)
    shift_max: float = 0.25
    label_margin: float = 0.8
    seed: int = 0

    def __post_init__(self):
        if self.m < 1:
            raise ValueError(f"m must be >= 1, got {self.m}")
        if self.attributes < 1:
            raise ValueError(f"attributes must be >= 1, got {self.attributes}")
        k = self.latent_dim if self.latent_dim is not None else self.attributes
        if k < self.attributes:
            raise ValueError(
                f"latent_dim {k} must be >= attributes {self.attributes}")
        if self.channels != 3:
            raise ValueError(f"generator renders 3-channel images, "
                             f"got channels={self.channels}")
        if self.height < 4 or self.width < 4:
            raise ValueError(f"image too small: {self.height}x{self.width}")
        if self.noise_std < 0:
            raise ValueError(f"noise_std must be >= 0, got {self.noise_std}")
        if self.gain <= 0:
            raise ValueError(f"gain must be > 0, got {self.gain}")
        lo, hi = self.freq_range
        if not (0 < lo <= hi):
            raise ValueError(f"bad freq_range {self.freq_range}")
        zlo, zhi = self.zoom_range
        if not (0 < zlo <= zhi):
            raise ValueError(f"bad zoom_range {self.zoom_range}")
        if self.shift_max < 0:
            raise ValueError(f"shift_max must be >= 0, got {self.shift_max}")
        if self.label_margin < 0:
            raise ValueError(
                f"label_margin must be >= 0, got {self.label_margin}")

    @property
    def k(self) -> int:
        return self.latent_dim if self.latent_dim is not None else self.attributes


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    inputs: np.ndarray
    labels: np.ndarray
    outlier_mask: np.ndarray

    def __post_init__(self):
        m = self.inputs.shape[0]
        if self.labels.shape[0] != m or self.outlier_mask.shape != (m,):
            raise ValueError(
                f"row counts disagree: inputs {self.inputs.shape}, labels "
                f"{self.labels.shape}, mask {self.outlier_mask.shape}")
        if self.labels.ndim != 2:
            raise ValueError(f"labels must be (M, A), got {self.labels.shape}")

    def __len__(self) -> int:
        return self.inputs.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, LabeledDataset):
            return NotImplemented
        return (self.inputs.shape == other.inputs.shape
                and np.array_equal(self.inputs, other.inputs)
                and np.array_equal(self.labels, other.labels)
                and np.array_equal(self.outlier_mask, other.outlier_mask))


@dataclass(frozen=True)
class ViewBatch:
    views: np.ndarray
    partner: np.ndarray
    source_indices: np.ndarray


def generate_synthetic(cfg: GenConfig) -> LabeledDataset:
    """Render a labeled dataset from cfg; one seed pins every byte.

    Draw order is fixed: pattern bank, then latents, then per-sample
    zooms, then per-sample shifts, then pixel noise.

    Each sample's pattern is rendered under a random zoom and shift
    drawn from the same transformation family the view augmentations
    randomize. A fixed linear readout of pixels entangles these
    nuisances with the label signal, while features trained to be
    stable under cropping learn to discard them.
    """
    rng = np.random.default_rng(cfg.seed)
    k, a = cfg.k, cfg.attributes
    h, w, c = cfg.height, cfg.width, cfg.channels

    # dataset-level pattern bank: oriented sinusoid per latent coordinate
    freq = rng.uniform(cfg.freq_range[0], cfg.freq_range[1], size=k)
    theta = rng.uniform(0.0, 2.0 * math.pi, size=k)
    phase = rng.uniform(0.0, 2.0 * math.pi, size=(k, c))
    amp = rng.uniform(0.6, 1.4, size=(k, c)) * rng.choice((-1.0, 1.0),
                                                          size=(k, c))
    ys = (np.arange(h) + 0.5) / h
    xs = (np.arange(w) + 0.5) / w
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    # direction ramp per component, in pattern coordinates
    ramp0 = (np.cos(theta)[:, None, None] * xx[None]
             + np.sin(theta)[:, None, None] * yy[None])

    u = rng.standard_normal((cfg.m, k))
    labels = (u[:, :a] > 0).astype(np.uint8)
    # push latents off the labeling boundary; the dataset becomes a
    # mixture of separated modes instead of one Gaussian cloud
    u = u + cfg.label_margin * np.sign(u)
    zoom = rng.uniform(cfg.zoom_range[0], cfg.zoom_range[1], size=cfg.m)
    dyx = rng.uniform(-cfg.shift_max, cfg.shift_max, size=(cfg.m, 2))

    imgs = np.empty((cfg.m, c, h, w), dtype=np.float64)
    block = max(1, (1 << 21) // (k * c * h * w))  # cap scratch near 32 MB
    tpf = 2.0 * math.pi * freq
    for lo in range(0, cfg.m, block):
        hi = min(lo + block, cfg.m)
        # arg[(i,k,h,w)] = 2 pi f_k zoom_i (ramp0 - offset_i) + phase
        off = (np.cos(theta)[None, :] * dyx[lo:hi, 1:2]
               + np.sin(theta)[None, :] * dyx[lo:hi, 0:1])
        arg = (tpf[None, :, None, None] * zoom[lo:hi, None, None, None]
               * (ramp0[None] - off[:, :, None, None]))
        waves = np.sin(arg[:, :, None] + phase[None, :, :, None, None])
        waves *= amp[None, :, :, None, None]
        core = np.einsum("ik,ikchw->ichw", u[lo:hi], waves) / math.sqrt(k)
        imgs[lo:hi] = 1.0 / (1.0 + np.exp(-cfg.gain * core))
    if cfg.noise_std > 0:
        imgs = imgs + rng.normal(0.0, cfg.noise_std, size=imgs.shape)
    imgs = np.clip(imgs, 0.0, 1.0).astype(np.float32)
    return LabeledDataset(inputs=imgs, labels=labels,
                          outlier_mask=np.zeros(cfg.m, dtype=bool))


def inject_outliers(ds: LabeledDataset, rho: float, seed: int,
                    mode: str = "full") -> LabeledDataset:
    """Replace floor(rho * M) rows with structureless noise.

    mode "full" overwrites inputs with uniform noise and labels with
    fair coin flips; "labels_only" corrupts just the labels. The row
    choice comes first in the draw order, so both modes corrupt the
    same rows for a given seed.
    """
    if not (0.0 <= rho < 1.0):
        raise ValueError(f"rho must be in [0, 1), got {rho}")
    if mode not in ("full", "labels_only"):
        raise ValueError(f"unknown outlier mode {mode!r}")
    m = len(ds)
    count = int(math.floor(rho * m))
    inputs = ds.inputs.copy()
    labels = ds.labels.copy()
    mask = ds.outlier_mask.copy()
    if count:
        rng = np.random.default_rng(seed)
        idx = rng.choice(m, size=count, replace=False)
        if mode == "full":
            inputs[idx] = rng.uniform(0.0, 1.0,
                                      size=(count,) + inputs.shape[1:]).astype(
                                          inputs.dtype)
        labels[idx] = rng.integers(0, 2, size=(count,) + labels.shape[1:],
                                   dtype=np.uint8)
        mask[idx] = True
    return LabeledDataset(inputs=inputs, labels=labels, outlier_mask=mask)


def batches(ds: LabeledDataset, n: int, aug: AugmentConfig,
            epoch_seed: int) -> Iterator[ViewBatch]:
    """Shuffled mini-batches of augmented view pairs; the last short
    batch is dropped.

    Views of sample k sit at rows 2k and 2k+1 of the stacked batch, and
    ``partner`` swaps them. The shuffle and each sample's augmentation
    draws come from separate streams keyed by (epoch_seed, sample index),
    so batch composition and view noise are reproducible independently
    of iteration order.
    """
    m = len(ds)
    if n < 2:
        raise ValueError(f"batch size must be >= 2, got {n}")
    if n > m:
        raise ValueError(f"batch size {n} exceeds dataset size {m}")
    order = np.random.default_rng([epoch_seed, 0]).permutation(m)
    idx_pairs = np.arange(n)
    partner = np.empty(2 * n, dtype=np.int64)
    partner[2 * idx_pairs] = 2 * idx_pairs + 1
    partner[2 * idx_pairs + 1] = 2 * idx_pairs
    for b in range(m // n):
        chosen = order[b * n:(b + 1) * n]
        views = []
        for i in chosen:
            rng_i = np.random.default_rng([epoch_seed, 1, int(i)])
            v1, v2 = make_view_pair(ds.inputs[i], aug, rng_i)
            views.append(v1)
            views.append(v2)
        yield ViewBatch(views=np.stack(views).astype(np.float32),
                        partner=partner.copy(),
                        source_indices=chosen.astype(np.int64))


def dataset_summary(ds: LabeledDataset) -> dict:
    return {
        "m": int(len(ds)),
        "attributes": int(ds.labels.shape[1]),
        "input_shape": list(ds.inputs.shape[1:]),
        "outlier_count": int(ds.outlier_mask.sum()),
        "outlier_fraction": float(ds.outlier_mask.mean()),
        "positive_rates": [float(r) for r in ds.labels.mean(axis=0)],
    }


# ---------------------------------------------------------------------------
# binary container

def save(ds: LabeledDataset, path) -> None:
    m = len(ds)
    a = ds.labels.shape[1]
    shape = ds.inputs.shape[1:]
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IIII", VERSION, m, a, len(shape)))
        fh.write(struct.pack(f"<{len(shape)}I", *shape))
        fh.write(np.ascontiguousarray(ds.inputs, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(ds.labels, dtype="<u1").tobytes())
        fh.write(np.ascontiguousarray(ds.outlier_mask.astype(np.uint8),
                                      dtype="<u1").tobytes())


def _read_exact(fh, n: int, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise DataFormatError(
            f"truncated file: wanted {n} bytes for {what} at offset "
            f"{fh.tell() - len(buf)}, got {len(buf)}")
    return buf


def load(path) -> LabeledDataset:
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4, "magic")
        if magic != MAGIC:
            raise DataFormatError(
                f"bad magic at offset 0: {magic!r}, expected {MAGIC!r}")
        version, m, a, ndim = struct.unpack("<IIII",
                                            _read_exact(fh, 16, "header"))
        if version != VERSION:
            raise DataFormatError(f"unsupported version {version}")
        if ndim < 1 or ndim > 4:
            raise DataFormatError(f"implausible input rank {ndim}")
        shape = struct.unpack(f"<{ndim}I", _read_exact(fh, 4 * ndim, "shape"))
        count = m * int(np.prod(shape))
        inputs = np.frombuffer(
            _read_exact(fh, 4 * count, "inputs"), dtype="<f4").reshape(
                (m,) + shape).copy()
        labels = np.frombuffer(
            _read_exact(fh, m * a, "labels"), dtype="<u1").reshape(m, a).copy()
        mask = np.frombuffer(
            _read_exact(fh, m, "outlier mask"), dtype="<u1").astype(bool)
        trailing = fh.read(1)
        if trailing:
            raise DataFormatError(f"trailing bytes at offset {fh.tell() - 1}")
    return LabeledDataset(inputs=inputs, labels=labels, outlier_mask=mask)
