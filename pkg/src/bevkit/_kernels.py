"""Hot inner loops: scatter-accumulate, z-buffer min, pillar reduction.

Every kernel has a numba @njit implementation and a numpy fallback that
performs the identical sequence of float64 operations, so the two paths
produce bit-identical outputs (asserted in tests/test_backends.py).
Callers pre-sort entries by (cell, source index); per-cell accumulation
order is therefore fixed no matter the backend or thread count.
"""

from __future__ import annotations

import numpy as np

from ._backend import njit, prange, use_numba


def segment_bounds(sorted_cells: np.ndarray):
    """Start offsets and cell ids of equal-cell runs in a sorted array."""
    if sorted_cells.size == 0:
        return np.zeros(1, dtype=np.int64), np.empty(0, dtype=np.int64)
    change = np.flatnonzero(np.r_[True, sorted_cells[1:] != sorted_cells[:-1]])
    starts = np.append(change, sorted_cells.size).astype(np.int64)
    return starts, sorted_cells[change].astype(np.int64)


@njit(cache=True, parallel=True)
def _splat_njit(feats, pixels, weights, seg_starts, seg_cells, out):
    # out: (C, n_cells); each prange iteration owns one output cell.
    n_seg = seg_cells.shape[0]
    n_ch = feats.shape[0]
    for s in prange(n_seg):
        cell = seg_cells[s]
        for e in range(seg_starts[s], seg_starts[s + 1]):
            w = weights[e]
            p = pixels[e]
            for c in range(n_ch):
                out[c, cell] += w * feats[c, p]


def splat_accumulate(feats, pixels, cells, weights, n_cells, backend=None):
    """Accumulate weights[e] * feats[:, pixels[e]] into cell columns.

    Entries must already be sorted by (cell, source order).  Returns
    (out (C, n_cells), counts (n_cells,)).
    """
    feats = np.ascontiguousarray(feats, dtype=np.float64)
    out = np.zeros((feats.shape[0], n_cells))
    counts = np.zeros(n_cells, dtype=np.int64)
    if cells.size:
        np.add.at(counts, cells, 1)
        if use_numba(backend):
            starts, seg_cells = segment_bounds(cells)
            _splat_njit(feats, pixels, weights, starts, seg_cells, out)
        else:
            contrib = weights[:, None] * feats[:, pixels].T
            np.add.at(out.T, cells, contrib)
    return out, counts


@njit(cache=True)
def _zbuffer_njit(cells, depths, minz):
    for i in range(cells.shape[0]):
        c = cells[i]
        if depths[i] < minz[c]:
            minz[c] = depths[i]


def zbuffer_min(cells, depths, n_cells, backend=None):
    """Per-cell minimum depth over (cell, depth) pairs."""
    minz = np.full(n_cells, np.inf)
    if cells.size:
        if use_numba(backend):
            _zbuffer_njit(cells, depths, minz)
        else:
            np.minimum.at(minz, cells, depths)
    return minz


@njit(cache=True)
def _pillar_njit(points, seg_starts, sums):
    for s in range(seg_starts.shape[0] - 1):
        for e in range(seg_starts[s], seg_starts[s + 1]):
            for k in range(points.shape[1]):
                sums[s, k] += points[e, k]


def pillar_sums(points, sorted_cells, backend=None):
    """Per-run feature sums over points grouped by sorted cell id.

    Returns (cell ids (P,), counts (P,), sums (P, F)); rows follow
    ascending cell order, summation follows point order within a run.
    """
    starts, seg_cells = segment_bounds(sorted_cells)
    sums = np.zeros((seg_cells.size, points.shape[1]))
    if seg_cells.size:
        pts = np.ascontiguousarray(points, dtype=np.float64)
        if use_numba(backend):
            _pillar_njit(pts, starts, sums)
        else:
            run_of_point = np.repeat(np.arange(seg_cells.size), np.diff(starts))
            np.add.at(sums, run_of_point, pts)
    counts = np.diff(starts)
    return seg_cells, counts, sums
