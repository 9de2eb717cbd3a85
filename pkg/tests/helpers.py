"""Independent reference implementations used to cross-check the library.

Everything here is deliberately naive: direct definitions, brute force, and
O(n^2) scans. None of it shares code with src/. If the library and these
oracles agree, a shared-bug explanation requires the same mistake written
twice in structurally different ways.
"""

from __future__ import annotations

import itertools

import numpy as np


def steady_state_by_iteration(a, b, p, tol=1e-13, max_steps=2_000_000):
    """Fixed point of t = A t + B p by plain iteration."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    p = np.asarray(p, dtype=float)
    t = np.zeros(a.shape[0])
    forcing = b @ p
    for _ in range(max_steps):
        t_next = a @ t + forcing
        if np.max(np.abs(t_next - t)) < tol:
            return t_next
        t = t_next
    raise AssertionError("fixed-point iteration did not converge")


def simulate_reference(a, b, p_rows, rise0):
    """Step-by-step recurrence written out longhand, no vectorization."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    n = a.shape[0]
    rows = [list(map(float, rise0))]
    for p in p_rows:
        prev = rows[-1]
        nxt = []
        for i in range(n):
            acc = 0.0
            for j in range(n):
                acc += a[i][j] * prev[j]
            for j in range(n):
                acc += b[i][j] * p[j]
            nxt.append(acc)
        rows.append(nxt)
    return np.array(rows)


def matrix_rank_by_svd(m, rel=1e-10):
    """Rank via singular values against a relative floor."""
    s = np.linalg.svd(np.asarray(m, dtype=float), compute_uv=False)
    if s.size == 0 or s[0] == 0:
        return 0
    return int(np.sum(s > rel * s[0]))


def elbow_by_chord_scan(curve):
    """Index of max perpendicular distance from the first-to-last chord.

    Scans every candidate point directly from the line-to-point distance
    formula. Ties resolve to the lowest index, matching np.argmax.
    """
    c = np.asarray(curve, dtype=float)
    m = c.shape[0]
    if m < 3:
        return 0
    x1, y1 = 0.0, c[0]
    x2, y2 = float(m - 1), c[-1]
    span = np.hypot(x2 - x1, y2 - y1)
    if span == 0:
        return 0
    best_i, best_d = 0, -1.0
    for i in range(m):
        d = abs((y2 - y1) * i - (x2 - x1) * c[i] + x2 * y1 - y2 * x1) / span
        if d > best_d + 1e-15:
            best_i, best_d = i, d
    return best_i


def dbscan_reference(points, eps, min_pts):
    """Quadratic-time density clustering from the textbook definitions.

    Core points count themselves in their eps-neighborhood. Clusters are the
    connected components of the core-core adjacency graph, numbered by each
    component's smallest core index. Border points join the lowest-numbered
    component among their core neighbors. Everything else is labeled -1.
    """
    pts = np.asarray(points, dtype=float)
    m = pts.shape[0]
    within = np.zeros((m, m), dtype=bool)
    for i in range(m):
        for j in range(m):
            within[i, j] = np.sqrt(np.sum((pts[i] - pts[j]) ** 2)) <= eps
    core = np.array([int(within[i].sum()) >= min_pts for i in range(m)])

    parent = list(range(m))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for i in range(m):
        for j in range(m):
            if core[i] and core[j] and within[i, j]:
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[max(ri, rj)] = min(ri, rj)

    roots = sorted({find(i) for i in range(m) if core[i]})
    number = {r: k for k, r in enumerate(roots)}
    labels = np.full(m, -1, dtype=int)
    for i in range(m):
        if core[i]:
            labels[i] = number[find(i)]
    for i in range(m):
        if core[i]:
            continue
        adjacent = [labels[j] for j in range(m) if core[j] and within[i, j]]
        if adjacent:
            labels[i] = min(adjacent)
    return labels, core


def nnls_by_enumeration(m, y):
    """Small-scale nonnegative least squares by trying every support set."""
    m = np.asarray(m, dtype=float)
    y = np.asarray(y, dtype=float)
    n = m.shape[1]
    best_x, best_obj = np.zeros(n), float(np.sum(y * y))
    for size in range(1, n + 1):
        for support in itertools.combinations(range(n), size):
            sub = m[:, support]
            sol, *_ = np.linalg.lstsq(sub, y, rcond=None)
            if np.any(sol < -1e-12):
                continue
            x = np.zeros(n)
            x[list(support)] = np.maximum(sol, 0.0)
            obj = float(np.sum((m @ x - y) ** 2))
            if obj < best_obj - 1e-15:
                best_x, best_obj = x, obj
    return best_x, best_obj


def simplex_ls_by_grid(m, y, s, step):
    """Sum-constrained nonnegative least squares by brute-force grid search.

    Only for 3-column problems: evaluates the objective on every lattice
    point {(i*step, j*step, s - (i+j)*step) : i + j <= q} of the scaled
    2-simplex and returns the best. Exhaustive, no cleverness.
    """
    m = np.asarray(m, dtype=float)
    y = np.asarray(y, dtype=float)
    assert m.shape[1] == 3
    q = int(round(s / step))
    i, j = np.meshgrid(np.arange(q + 1), np.arange(q + 1), indexing="ij")
    keep = (i + j) <= q
    i, j = i[keep], j[keep]
    x = np.stack([i * step, j * step, np.maximum(s - (i + j) * step, 0.0)], axis=1)
    obj = np.sum((x @ m.T - y) ** 2, axis=1)
    best = int(np.argmin(obj))
    return x[best], float(obj[best])


def rank1_factor_by_svd(t):
    """Best rank-1 nonnegative factorization of a nonnegative matrix.

    By Perron-Frobenius the leading singular pair of a nonnegative matrix can
    be chosen nonnegative, so truncated SVD solves this case exactly.
    """
    t = np.asarray(t, dtype=float)
    u, s, vt = np.linalg.svd(t)
    u1 = u[:, 0] * np.sign(u[:, 0].sum() or 1.0)
    v1 = vt[0] * np.sign(vt[0].sum() or 1.0)
    return np.abs(u1) * s[0], np.abs(v1)
