"""Quality metrics, two-stage segmentation and lower-bound evidence."""

from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np

from . import itss_pl
from .grid_ops import ShapeError, apply_gradient, as_image
from .model import RestorationModel, SolverConfig

__all__ = [
    "DegenerateClusterError",
    "psnr",
    "jaccard",
    "label_levels",
    "kmeans_1d",
    "two_stage_segment",
    "lower_bound_report",
    "write_csv",
    "write_gnuplot",
]


class DegenerateClusterError(ValueError):
    pass


def psnr(x, truth):
    """``10 log10(N / ||x - truth||^2)``; ``inf`` for identical images.

    The peak intensity is implicitly 1, so images are expected in [0, 1].
    """
    x = as_image(x)
    truth = as_image(truth, "truth")
    if x.shape != truth.shape:
        raise ShapeError(f"shape mismatch {x.shape} vs {truth.shape}")
    err = float(np.sum((x - truth) ** 2))
    if err == 0.0:
        return math.inf
    return 10.0 * math.log10(x.size / err)


def jaccard(seg, gt, phase):
    seg = np.asarray(seg)
    gt = np.asarray(gt)
    if seg.shape != gt.shape:
        raise ShapeError(f"shape mismatch {seg.shape} vs {gt.shape}")
    a = seg == phase
    b = gt == phase
    union = np.count_nonzero(a | b)
    if union == 0:
        # phase absent from both maps counts as agreement
        return 1.0
    return np.count_nonzero(a & b) / union


def label_levels(img):
    """Label map 1..K by ascending distinct intensity (ground truth of a piecewise-constant image)."""
    levels, inv = np.unique(np.asarray(img), return_inverse=True)
    return inv.reshape(np.shape(img)) + 1, levels


def _assign(v, centers):
    # nearest center; ties go to the lower index
    d = np.abs(v[:, None] - centers[None, :])
    return np.argmin(d, axis=1)


def _lloyd(v, centers, max_iter):
    K = centers.size
    centers = centers.copy()
    for _ in range(max_iter):
        lab = _assign(v, centers)
        counts = np.bincount(lab, minlength=K)
        for j in np.flatnonzero(counts == 0):
            # move an empty center onto the worst-fitted sample
            far = int(np.argmax(np.abs(v - centers[lab])))
            centers[j] = v[far]
            lab = _assign(v, centers)
            counts = np.bincount(lab, minlength=K)
        if np.any(counts == 0):
            raise DegenerateClusterError("cannot populate K clusters from these intensities")
        new = np.bincount(lab, weights=v, minlength=K) / counts
        if np.array_equal(new, centers):
            break
        centers = new
    lab = _assign(v, centers)
    return centers, float(np.sum((v - centers[lab]) ** 2))


def _best_cut(sorted_v):
    # split minimizing the summed within-group squared error; returns (gain, index)
    n = sorted_v.size
    c1 = np.cumsum(sorted_v)
    c2 = np.cumsum(sorted_v ** 2)
    k = np.arange(1, n)
    left = c2[:-1] - c1[:-1] ** 2 / k
    right = (c2[-1] - c2[:-1]) - (c1[-1] - c1[:-1]) ** 2 / (n - k)
    # only cut between distinct values
    ok = sorted_v[1:] > sorted_v[:-1]
    if not ok.any():
        return -np.inf, None
    cost = np.where(ok, left + right, np.inf)
    i = int(np.argmin(cost))
    return c2[-1] - c1[-1] ** 2 / n - cost[i], i + 1


def _split_init(v, K):
    groups = [np.sort(v)]
    while len(groups) < K:
        cuts = [_best_cut(g) for g in groups]
        j = max(range(len(groups)), key=lambda i: cuts[i][0])
        gain, at = cuts[j]
        if at is None:
            raise DegenerateClusterError(f"fewer than {K} distinct intensities")
        g = groups.pop(j)
        groups[j:j] = [g[:at], g[at:]]
    return np.array([g.mean() for g in groups])


def kmeans_1d(values, K, max_iter=1000):
    """Lloyd iterations on scalars, centers started at the (j - 1/2)/K quantiles.

    Quantile starts put several centers on a dominant flat phase, so Lloyd is
    also run from a greedy split start (repeatedly cut the worst cluster at its
    best threshold) and the partition with smaller squared error is kept.
    Returns ``(labels in 1..K, centers)`` with centers in ascending order.
    """
    v = np.asarray(values, dtype=float).ravel()
    if K < 1:
        raise ValueError("K must be at least 1")
    if K == 1:
        return np.ones(v.shape, dtype=int), np.array([v.mean()])
    if np.unique(v).size < K:
        raise DegenerateClusterError(f"fewer than {K} distinct intensities")
    best = _lloyd(v, np.quantile(v, (np.arange(K) + 0.5) / K), max_iter)
    alt = _lloyd(v, _split_init(v, K), max_iter)
    centers = alt[0] if alt[1] < best[1] else best[0]
    centers = np.sort(centers)
    return _assign(v, centers) + 1, centers


def two_stage_segment(model: RestorationModel, config: SolverConfig, K, x0=None, return_trace=False):
    """Restore a piecewise-constant approximation, then threshold it into K phases.

    Returns ``(labels, restored)``, labels shaped like the image, plus the
    outer-loop trace when ``return_trace`` is set.
    """
    restored, trace = itss_pl.run(model, config, x0=x0)
    labels, _ = kmeans_1d(restored, K)
    labels = labels.reshape(restored.shape)
    if return_trace:
        return labels, restored, trace
    return labels, restored


def lower_bound_report(x_star, tau, bins=20):
    """Histogram of nonzero difference magnitudes and the observed gap above zero."""
    g = np.abs(apply_gradient(x_star)).ravel()
    nz = g[g != 0]
    if nz.size == 0:
        return {"n_nonzero": 0, "theta_hat": None, "gap_ratio": None, "passed": True,
                "histogram": {"edges": [], "counts": []}}
    theta = float(nz.min())
    lo, hi = np.log10(theta), np.log10(nz.max())
    edges = np.logspace(lo, hi if hi > lo else lo + 1e-9, bins + 1)
    counts, edges = np.histogram(nz, bins=edges)
    return {
        "n_nonzero": int(nz.size),
        "theta_hat": theta,
        "gap_ratio": theta / tau if tau > 0 else math.inf,
        "passed": bool(theta > tau),
        "histogram": {"edges": edges.tolist(), "counts": counts.tolist()},
    }


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        wr.writerows(rows)


def write_gnuplot(path, columns):
    """Whitespace-separated columns with a ``#`` header; ragged columns are padded with NaN."""
    names = list(columns)
    n = max(len(c) for c in columns.values())
    data = np.full((n, len(names)), np.nan)
    for j, name in enumerate(names):
        col = np.asarray(columns[name], dtype=float)
        data[: col.size, j] = col
    Path(path).write_text(
        "# " + " ".join(names) + "\n"
        + "".join(" ".join(repr(float(v)) for v in row) + "\n" for row in data)
    )
