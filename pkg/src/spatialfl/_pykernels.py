"""Numpy implementations of the compiled kernels.

Operation order matches ``_ckernels`` exactly, so either backend yields the
same bits.
"""
import numpy as np


def capture_csr(ues, pts, radius):
    ues = np.ascontiguousarray(ues, dtype=np.float64)
    pts = np.ascontiguousarray(pts, dtype=np.float64)
    n_ue = len(ues)
    offsets = np.zeros(n_ue + 1, dtype=np.int64)
    if n_ue == 0 or len(pts) == 0:
        return offsets, np.zeros(0, dtype=np.int64)

    order = np.argsort(pts[:, 0], kind="stable")
    xs = pts[order, 0]
    r2 = radius * radius
    pad = 1e-9 * (1.0 + radius)
    chunks = []
    for k in range(n_ue):
        zx, zy = ues[k]
        lo = np.searchsorted(xs, zx - radius - pad, side="left")
        hi = np.searchsorted(xs, zx + radius + pad, side="right")
        cand = order[lo:hi]
        dx = pts[cand, 0] - zx
        dy = pts[cand, 1] - zy
        hit = np.sort(cand[dx * dx + dy * dy <= r2])
        chunks.append(hit)
        offsets[k + 1] = offsets[k] + len(hit)
    return offsets, np.concatenate(chunks).astype(np.int64, copy=False)


def nearest_centroid(data, centroids):
    data = np.ascontiguousarray(data, dtype=np.float64)
    centroids = np.ascontiguousarray(centroids, dtype=np.float64)
    acc = np.zeros((len(data), len(centroids)))
    for j in range(data.shape[1]):
        t = data[:, j, None] - centroids[None, :, j]
        acc += t * t
    labels = np.argmin(acc, axis=1).astype(np.int64)
    return labels, acc[np.arange(len(data)), labels]
