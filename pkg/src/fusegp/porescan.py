"""Porosity image pipeline: crop, Otsu, dilation, watershed, pore geometry.

Images are 8-bit grayscale numpy arrays of shape (height, width). Pores are
dark by default, so the foreground after thresholding is the set of pixels
at or below the Otsu threshold; pass invert=True for bright-pore images.
Label images use 0 for background and contiguous labels 1..K assigned in
raster-scan first-touch order.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np
from PIL import Image, UnidentifiedImageError
from scipy import ndimage

from .errors import DataError

_EIGHT = np.ones((3, 3), dtype=bool)
_NEIGHBORS8 = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]


def load_gray(path) -> np.ndarray:
    """Read an 8-bit single-channel raster (binary PGM or grayscale PNG)."""
    try:
        with Image.open(path) as im:
            if im.mode != "L":
                raise DataError(f"{path}: expected 8-bit grayscale, got mode {im.mode!r}")
            return np.asarray(im, dtype=np.uint8)
    except UnidentifiedImageError:
        raise DataError(f"{path}: not a readable raster file") from None


def save_gray(path, img):
    img = np.asarray(img)
    if img.dtype != np.uint8:
        raise ValueError("save_gray expects uint8 data")
    Image.fromarray(img, mode="L").save(path)


def save_label_image(path, labels):
    """Dump a label image as a graymap, scaling labels onto 0..255."""
    labels = np.asarray(labels)
    top = int(labels.max())
    if top == 0:
        save_gray(path, np.zeros(labels.shape, dtype=np.uint8))
        return
    scaled = np.round(labels.astype(float) * 255.0 / top).astype(np.uint8)
    save_gray(path, scaled)


def crop_borders(img, margin) -> np.ndarray:
    """Central window after trimming ``margin`` pixels from every side."""
    img = np.asarray(img)
    if margin < 0:
        raise ValueError("margin must be nonnegative")
    h, w = img.shape
    if 2 * margin >= min(h, w):
        raise ValueError(f"margin {margin} too large for {w}x{h} image")
    if margin == 0:
        return img.copy()
    return img[margin:h - margin, margin:w - margin].copy()


@dataclass
class OtsuResult:
    threshold: int
    degenerate: bool   # single-intensity image; binarization yields no foreground


def otsu_threshold(img) -> OtsuResult:
    """Threshold maximizing between-class variance; ties break to the lowest t."""
    img = np.asarray(img)
    if img.size == 0:
        raise ValueError("empty image")
    hist = np.bincount(img.ravel().astype(np.int64), minlength=256).astype(float)
    total = hist.sum()
    nonzero = np.nonzero(hist)[0]
    if nonzero.size == 1:
        return OtsuResult(threshold=int(nonzero[0]), degenerate=True)

    levels = np.arange(256, dtype=float)
    w0 = np.cumsum(hist)                    # pixels at intensity <= t
    sum0 = np.cumsum(hist * levels)
    total_sum = sum0[-1]
    w1 = total - w0
    with np.errstate(divide="ignore", invalid="ignore"):
        mu0 = sum0 / w0
        mu1 = (total_sum - sum0) / w1
        between = w0 * w1 * (mu0 - mu1) ** 2
    between[~np.isfinite(between)] = -1.0   # classes with no pixels
    return OtsuResult(threshold=int(np.argmax(between)), degenerate=False)


def binarize(img, otsu, invert=False) -> np.ndarray:
    """Foreground mask: dark pixels (<= t) by default, bright (> t) if inverted."""
    img = np.asarray(img)
    if isinstance(otsu, OtsuResult):
        if otsu.degenerate:
            return np.zeros(img.shape, dtype=bool)
        t = otsu.threshold
    else:
        t = int(otsu)
    return (img > t) if invert else (img <= t)


def disk_footprint(radius) -> np.ndarray:
    r = int(radius)
    yy, xx = np.mgrid[-r:r + 1, -r:r + 1]
    return (yy ** 2 + xx ** 2) <= radius ** 2


def dilate(mask, radius) -> np.ndarray:
    """Morphological dilation by a Euclidean disk; radius 0 is the identity."""
    if radius < 0:
        raise ValueError("radius must be nonnegative")
    mask = np.asarray(mask, dtype=bool)
    if radius == 0 or not mask.any():
        return mask.copy()
    return ndimage.binary_dilation(mask, structure=disk_footprint(radius))


def _relabel_raster_order(labels) -> np.ndarray:
    """Renumber labels 1..K by first appearance in raster scan order."""
    flat = labels.ravel()
    vals, first = np.unique(flat, return_index=True)
    keep = vals > 0
    vals, first = vals[keep], first[keep]
    order = np.argsort(first, kind="stable")
    remap = np.zeros(int(flat.max()) + 1, dtype=labels.dtype)
    remap[vals[order]] = np.arange(1, order.size + 1, dtype=labels.dtype)
    return remap[labels]


def label_components(mask):
    """8-connected components; returns (labels, count)."""
    mask = np.asarray(mask, dtype=bool)
    raw, count = ndimage.label(mask, structure=_EIGHT)
    if count == 0:
        return raw.astype(np.int32), 0
    return _relabel_raster_order(raw).astype(np.int32), count


def watershed_split(mask):
    """Split touching pores by flooding the negated distance transform.

    Markers are the plateau-merged 8-neighborhood local maxima of the
    Euclidean distance transform. The flood claims pixels in order of
    decreasing distance; where two regions meet at equal distance, the
    lower (earlier-seeded) label wins. Returns (labels, count).
    """
    mask = np.asarray(mask, dtype=bool)
    labels = np.zeros(mask.shape, dtype=np.int32)
    if not mask.any():
        return labels, 0
    dist = ndimage.distance_transform_edt(mask)
    peak = ndimage.maximum_filter(dist, size=3, mode="constant", cval=0.0)
    markers, n_markers = label_components((dist == peak) & mask)
    labels[:] = markers

    h, w = mask.shape
    heap = []
    seq = 0
    rows, cols = np.nonzero(markers)
    for r, c in zip(rows.tolist(), cols.tolist()):
        heapq.heappush(heap, (-dist[r, c], int(markers[r, c]), seq, r, c))
        seq += 1
    while heap:
        _, lab, _, r, c = heapq.heappop(heap)
        for dr, dc in _NEIGHBORS8:
            nr, nc = r + dr, c + dc
            if 0 <= nr < h and 0 <= nc < w and mask[nr, nc] and labels[nr, nc] == 0:
                labels[nr, nc] = lab
                heapq.heappush(heap, (-dist[nr, nc], lab, seq, nr, nc))
                seq += 1
    return _relabel_raster_order(labels), n_markers


@dataclass
class PoreRecord:
    label: int
    area: int              # px^2
    perimeter: int         # boundary pixel edges
    centroid: tuple        # (x, y) in pixel coordinates
    radius: float          # equivalent radius sqrt(area / pi)


@dataclass
class PoreStats:
    width: int
    height: int
    count: int
    phi: float             # percent of image area covered by pores
    pores: list = field(default_factory=list)
    mean_radius: float = math.nan
    std_radius: float = math.nan
    mean_perimeter: float = math.nan
    std_perimeter: float = math.nan

    def to_dict(self):
        def _num(v):
            return None if (isinstance(v, float) and math.isnan(v)) else float(v)

        return {
            "width": self.width,
            "height": self.height,
            "count": self.count,
            "phi_pct": float(self.phi),
            "mean_radius": _num(self.mean_radius),
            "std_radius": _num(self.std_radius),
            "mean_perimeter": _num(self.mean_perimeter),
            "std_perimeter": _num(self.std_perimeter),
            "pores": [
                {
                    "label": p.label,
                    "area": p.area,
                    "perimeter": p.perimeter,
                    "centroid_x": p.centroid[0],
                    "centroid_y": p.centroid[1],
                    "radius": p.radius,
                }
                for p in self.pores
            ],
        }


def pore_stats(labels) -> PoreStats:
    """Geometry summary of a label image.

    Area counts pixels; the perimeter counts pixel edges adjacent to
    background or the image border; the centroid is the mean of pixel
    coordinates ((x, y) = (column, row)).
    """
    labels = np.asarray(labels)
    h, w = labels.shape
    K = int(labels.max())
    if K == 0:
        return PoreStats(width=w, height=h, count=0, phi=0.0)

    flat = labels.ravel()
    areas = np.bincount(flat, minlength=K + 1)[1:]

    padded = np.zeros((h + 2, w + 2), dtype=labels.dtype)
    padded[1:-1, 1:-1] = labels
    perims = np.zeros(K + 1, dtype=np.int64)
    center = padded[1:-1, 1:-1]
    for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
        neighbor = padded[1 + dr:h + 1 + dr, 1 + dc:w + 1 + dc]
        edge = (center > 0) & (neighbor == 0)
        perims += np.bincount(center[edge], minlength=K + 1)
    perims = perims[1:]

    rows, cols = np.nonzero(labels)
    labs = labels[rows, cols]
    sum_r = np.bincount(labs, weights=rows, minlength=K + 1)[1:]
    sum_c = np.bincount(labs, weights=cols, minlength=K + 1)[1:]
    radius = np.sqrt(areas / math.pi)

    pores = [
        PoreRecord(
            label=i + 1,
            area=int(areas[i]),
            perimeter=int(perims[i]),
            centroid=(float(sum_c[i] / areas[i]), float(sum_r[i] / areas[i])),
            radius=float(radius[i]),
        )
        for i in range(K)
    ]
    return PoreStats(
        width=w, height=h, count=K,
        phi=100.0 * float(areas.sum()) / (w * h),
        pores=pores,
        mean_radius=float(np.mean(radius)),
        std_radius=float(np.std(radius)),
        mean_perimeter=float(np.mean(perims)),
        std_perimeter=float(np.std(perims)),
    )


def analyze_image(img, margin=0, dilate_radius=1, invert=False):
    """Full pipeline: crop -> Otsu -> binarize -> dilate -> watershed -> stats.

    Returns (PoreStats, label image).
    """
    cropped = crop_borders(img, margin)
    mask = binarize(cropped, otsu_threshold(cropped), invert=invert)
    mask = dilate(mask, dilate_radius)
    labels, _ = watershed_split(mask)
    return pore_stats(labels), labels
