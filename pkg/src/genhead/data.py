"""Target-distribution ingestion and statistics: synthetic image sets with
known per-channel moments, CIFAR-10 binary reading with class filtering,
box-average downsampling, byte/pixel conversions, and PPM export.

Network-side images live in [-1, 1] as float64 [N,3,H,W]; the byte mapping is
``byte = round_half_up((v + 1) * 127.5)`` clamped to [0, 255], inverted by
``v = byte / 127.5 - 1``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .heads import ChannelStats
from .rng import SplitMix64

CIFAR10_LABELS = (
    "airplane",
    "automobile",
    "bird",
    "cat",
    "deer",
    "dog",
    "frog",
    "horse",
    "ship",
    "truck",
)
FROG_LABEL = CIFAR10_LABELS.index("frog")  # 6 in the documented label order

_RECORD_BYTES = 3073  # 1 label byte + 3 * 1024 channel bytes, row-major 32x32


class DatasetError(ValueError):
    pass


@dataclass
class ImageBatch:
    """Float images in [-1,1], shape [N,3,H,W], with a provenance tag."""

    values: np.ndarray
    tag: str = "synthetic"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 4 or self.values.shape[1] != 3:
            raise DatasetError(f"expected [N,3,H,W], got {self.values.shape}")
        if self.values.shape[2] < 1 or self.values.shape[3] < 1:
            raise DatasetError("H and W must be >= 1")
        if np.min(self.values) < -1.0 or np.max(self.values) > 1.0:
            raise DatasetError("image values must lie in [-1, 1]")

    def __len__(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class SynthSpec:
    """Synthetic distribution: per-channel moments plus a structure code."""

    mean: tuple[float, float, float]
    std: tuple[float, float, float]
    structure: str = "two-tone-blobs"  # or "flat-noise"
    seed: int = 0

    def __post_init__(self):
        if len(self.mean) != 3 or len(self.std) != 3:
            raise DatasetError("mean and std must have 3 channels")
        if any(s < 0 for s in self.std):
            raise DatasetError("std must be non-negative")
        if self.structure not in ("flat-noise", "two-tone-blobs"):
            raise DatasetError(f"unknown structure {self.structure!r}")
        for m, s in zip(self.mean, self.std):
            if abs(m) + 2.0 * s > 1.0:
                warnings.warn(
                    f"channel moments (mean={m}, std={s}) leave little headroom in "
                    "[-1,1]; clamping will distort the requested statistics",
                    stacklevel=2,
                )


def load_cifar10(path, class_filter: int | None = None) -> ImageBatch:
    """Read CIFAR-10 binary files (a directory of data_batch_*.bin or one file).

    Keeps only records whose label equals `class_filter` when given; pixel
    bytes map onto [-1, 1].
    """
    p = Path(path)
    if p.is_dir():
        files = sorted(p.glob("data_batch_*.bin"))
        if not files:
            raise DatasetError(f"no data_batch_*.bin files under {p}")
    else:
        files = [p]
    images = []
    for f in files:
        raw = np.fromfile(f, dtype=np.uint8)
        if raw.size == 0 or raw.size % _RECORD_BYTES != 0:
            raise DatasetError(
                f"{f}: size {raw.size} is not a multiple of the {_RECORD_BYTES}-byte record"
            )
        records = raw.reshape(-1, _RECORD_BYTES)
        labels = records[:, 0]
        if np.any(labels > 9):
            raise DatasetError(f"{f}: label byte > 9")
        if class_filter is not None:
            records = records[labels == class_filter]
        pix = records[:, 1:].reshape(-1, 3, 32, 32)
        images.append(pix)
    stacked = np.concatenate(images, axis=0)
    return ImageBatch(from_bytes(stacked), tag="cifar")


def synth_dataset(spec: SynthSpec, n: int, h: int, w: int) -> ImageBatch:
    """Deterministic synthetic batch whose per-channel moments match `spec`.

    flat-noise draws each pixel from Normal(mean_c, std_c). two-tone-blobs
    splits each image into a random rectangle and its complement, choosing the
    two tone values so every image has exactly the requested per-channel mean
    and (biased) std before clamping.
    """
    if n < 1:
        raise DatasetError("n must be >= 1")
    rng = SplitMix64(spec.seed)
    mean = np.asarray(spec.mean)
    std = np.asarray(spec.std)
    if spec.structure == "flat-noise":
        values = rng.normal((n, 3, h, w)) * std[None, :, None, None] + mean[
            None, :, None, None
        ]
    else:
        values = np.empty((n, 3, h, w))
        for i in range(n):
            # rectangle sides span [1/2, 3/4] of each dimension, keeping the
            # area fraction p in roughly [1/4, 9/16] so the two tones
            # (mean +/- std * area factor) stay close to the moment budget
            height = h // 2 + int(rng.integers(max(1, h // 4 + 1)))
            width = w // 2 + int(rng.integers(max(1, w // 4 + 1)))
            top = int(rng.integers(max(1, h - height + 1)))
            left = int(rng.integers(max(1, w - width + 1)))
            inside = np.zeros((h, w), dtype=bool)
            inside[top : top + height, left : left + width] = True
            p = inside.mean()
            hi = mean + std * np.sqrt((1 - p) / p)
            lo = mean - std * np.sqrt(p / (1 - p))
            values[i] = np.where(inside[None, :, :], hi[:, None, None], lo[:, None, None])
    return ImageBatch(np.clip(values, -1.0, 1.0), tag="synthetic")


def make_probe(spec: SynthSpec, h: int, w: int) -> ImageBatch:
    """Held-out probe image with a forced saturated (all -1) top-right quadrant."""
    probe_spec = SynthSpec(spec.mean, spec.std, spec.structure, spec.seed ^ 0x5EED)
    batch = synth_dataset(probe_spec, 1, h, w)
    values = batch.values.copy()
    values[:, :, : h // 2, w // 2 :] = -1.0
    return ImageBatch(values, tag="probe")


def channel_stats(batch: ImageBatch) -> ChannelStats:
    """Per-channel mean and biased std over all pixels of all images."""
    v = batch.values
    if v.shape[0] * v.shape[2] * v.shape[3] < 2:
        raise DatasetError("need at least 2 pixels per channel")
    return ChannelStats(mean=v.mean(axis=(0, 2, 3)), std=v.std(axis=(0, 2, 3)))


def downsample(batch: ImageBatch, factor: int) -> ImageBatch:
    """Non-overlapping factor x factor box average per channel."""
    n, c, h, w = batch.values.shape
    if h % factor or w % factor:
        raise DatasetError(f"{h}x{w} not divisible by factor {factor}")
    v = batch.values.reshape(n, c, h // factor, factor, w // factor, factor)
    return ImageBatch(v.mean(axis=(3, 5)), tag=batch.tag)


def to_bytes(batch: ImageBatch) -> np.ndarray:
    """Quantize to uint8 with round-half-up; -1 -> 0, +1 -> 255, 0 -> 128."""
    scaled = (batch.values + 1.0) * 127.5
    return np.clip(np.floor(scaled + 0.5), 0, 255).astype(np.uint8)


def from_bytes(bytes_array: np.ndarray) -> np.ndarray:
    """Inverse byte mapping onto [-1, 1] floats."""
    return np.asarray(bytes_array, dtype=np.float64) / 127.5 - 1.0


def write_ppm(batch: ImageBatch, index: int, path) -> None:
    """Write image `index` as binary P6 (maxval 255, RGB interleaved)."""
    if not 0 <= index < len(batch):
        raise IndexError(f"index {index} out of range for batch of {len(batch)}")
    bytes_img = to_bytes(batch)[index]  # [3,H,W]
    write_ppm_pixels(bytes_img, path)


def write_ppm_pixels(pixels_chw: np.ndarray, path) -> None:
    """Write a [3,H,W] uint8 array as binary P6."""
    c, h, w = pixels_chw.shape
    if c != 3:
        raise DatasetError("PPM export needs 3 channels")
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(pixels_chw.transpose(1, 2, 0)).tobytes())
