"""Quantitative instrumentation: 256-bin value histograms, trailing running
means, deterministic CSV export, and PPM image grids.

Histogram bins are uniform and left-closed; a value exactly on an interior
edge lands in the bin to its right, and the final bin is closed on both
sides. CSV numbers are written with 12 significant digits, so identical logs
export to identical bytes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import ImageBatch, to_bytes, write_ppm_pixels

DOMAINS = {"unit": (-1.0, 1.0), "byte": (0.0, 255.0)}

HISTOGRAM_CSV_COLUMNS = "bin_left,bin_right,count_r,count_g,count_b,count_all"


@dataclass
class Histogram:
    """Per-channel and combined counts over a fixed domain."""

    bins: int
    domain: str
    edges: np.ndarray  # bins + 1 uniform edges
    channel_counts: np.ndarray  # [3, bins] int64
    total: int

    @property
    def combined(self) -> np.ndarray:
        return self.channel_counts.sum(axis=0)

    def channel_mean(self) -> np.ndarray:
        """Empirical per-channel mean from bin centers."""
        centers = 0.5 * (self.edges[:-1] + self.edges[1:])
        weights = self.channel_counts.sum(axis=1)
        return (self.channel_counts @ centers) / np.maximum(weights, 1)


def histogram(batch: ImageBatch, bins: int = 256, domain: str = "unit") -> Histogram:
    if bins < 2:
        raise ValueError("bins must be >= 2")
    if domain not in DOMAINS:
        raise ValueError(f"domain must be one of {sorted(DOMAINS)}")
    lo, hi = DOMAINS[domain]
    values = to_bytes(batch).astype(np.float64) if domain == "byte" else batch.values
    edges = np.linspace(lo, hi, bins + 1)
    counts = np.empty((3, bins), dtype=np.int64)
    for c in range(3):
        v = values[:, c].ravel()
        idx = np.searchsorted(edges, v, side="right") - 1
        idx = np.clip(idx, 0, bins - 1)  # hi itself joins the last bin
        counts[c] = np.bincount(idx, minlength=bins)
    return Histogram(
        bins=bins,
        domain=domain,
        edges=edges,
        channel_counts=counts,
        total=int(values.size),
    )


def running_mean(values, window: int = 100) -> np.ndarray:
    """Trailing mean over the last `window` points; the first window-1 outputs
    average whatever prefix exists (warm-up rule)."""
    if window < 1:
        raise ValueError("window must be >= 1")
    v = np.asarray(values, dtype=np.float64)
    out = np.empty_like(v)
    for i in range(v.size):
        start = max(0, i - window + 1)
        out[i] = v[start : i + 1].mean()
    return out


@dataclass
class Series:
    """Scalar sequence with strictly increasing iteration indices."""

    indices: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.indices.shape != self.values.shape or self.indices.ndim != 1:
            raise ValueError("indices and values must be equal-length 1-d arrays")
        if np.any(np.diff(self.indices) <= 0):
            raise ValueError("iteration indices must be strictly increasing")

    def smoothed(self, window: int = 100) -> "Series":
        return Series(self.indices.copy(), running_mean(self.values, window))


def _format(v: float) -> str:
    return f"{float(v):.12g}"


def export_csv(log, path) -> None:
    """Write a metrics log (anything with .columns and .rows) as CSV.

    One header row, one row per record, fixed column order, 12 significant
    digits — deterministic bytes for a deterministic log.
    """
    lines = [",".join(log.columns)]
    for row in log.rows:
        lines.append(",".join(_format(v) for v in row))
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def export_histogram_csv(hist: Histogram, path) -> None:
    """Histogram CSV: bin_left,bin_right,count_r,count_g,count_b,count_all."""
    lines = [HISTOGRAM_CSV_COLUMNS]
    combined = hist.combined
    for b in range(hist.bins):
        cells = [
            _format(hist.edges[b]),
            _format(hist.edges[b + 1]),
            str(int(hist.channel_counts[0, b])),
            str(int(hist.channel_counts[1, b])),
            str(int(hist.channel_counts[2, b])),
            str(int(combined[b])),
        ]
        lines.append(",".join(cells))
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def export_image_grid(batch: ImageBatch, cols: int, path) -> None:
    """Tile the batch row-major into one PPM with 2-pixel black separators."""
    if len(batch) < 1 or cols < 1:
        raise ValueError("need at least one image and one column")
    pixels = to_bytes(batch)  # [N,3,H,W]
    n, _, h, w = pixels.shape
    rows = (n + cols - 1) // cols
    sep = 2
    grid_h = rows * h + (rows - 1) * sep
    grid_w = cols * w + (cols - 1) * sep
    grid = np.zeros((3, grid_h, grid_w), dtype=np.uint8)
    for i in range(n):
        r, c = divmod(i, cols)
        top = r * (h + sep)
        left = c * (w + sep)
        grid[:, top : top + h, left : left + w] = pixels[i]
    write_ppm_pixels(grid, path)
