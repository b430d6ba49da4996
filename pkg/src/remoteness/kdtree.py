"""Exact nearest-neighbour k-d tree with compiled build and query kernels.

Nodes split at the median of their widest axis and keep a tight bounding
box of their members.

Queries are answered in small groups of spatially coherent points.  For a
group with bounding box Q the tree yields

* ``U``: the second smallest, over members, of the largest squared
  separation between the member and any point of Q, an upper bound on
  every group point's nearest *other* member (at most one member is the
  point itself);
* the candidates: members whose smallest possible squared separation from
  Q does not exceed ``U`` (with a relative slack of 1e-9 against rounding).

Both come out of one near-first traversal per group.  No member outside
the candidate list can be nearest to, or tie with the nearest of, any
point in the group, so each point then scans only its group's candidates.  Squared separations are accumulated as
``d0*d0 + d1*d1 (+ d2*d2)`` from coordinate differences, the same order as
:func:`remoteness.spatial.squared_separation`; the box lower bounds use the
same differences against box faces and by monotone rounding never exceed a
computed separation.  Ties on the exact separation go to the lower rank.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

LEAF_SIZE = 8
_STACK = 256
_NO_RANK = np.iinfo(np.int64).max
_SLACK = 1.0 + 1e-9


@njit(cache=True)
def _build(points, leaf_size):
    m, dim = points.shape
    max_nodes = 2 * m + 1
    perm = np.arange(m)
    start = np.empty(max_nodes, np.int64)
    end = np.empty(max_nodes, np.int64)
    left = np.full(max_nodes, -1, np.int64)
    right = np.full(max_nodes, -1, np.int64)
    lo = np.empty((max_nodes, dim))
    hi = np.empty((max_nodes, dim))
    if m == 0:
        return perm, start[:0], end[:0], left[:0], right[:0], lo[:0], hi[:0]

    stack = np.empty(_STACK, np.int64)
    start[0] = 0
    end[0] = m
    n_nodes = 1
    stack[0] = 0
    sp = 1
    while sp > 0:
        sp -= 1
        node = stack[sp]
        s = start[node]
        e = end[node]
        for a in range(dim):
            lo[node, a] = points[perm[s], a]
            hi[node, a] = points[perm[s], a]
        for j in range(s + 1, e):
            for a in range(dim):
                v = points[perm[j], a]
                if v < lo[node, a]:
                    lo[node, a] = v
                elif v > hi[node, a]:
                    hi[node, a] = v
        if e - s <= leaf_size:
            continue
        axis = 0
        width = hi[node, 0] - lo[node, 0]
        for a in range(1, dim):
            if hi[node, a] - lo[node, a] > width:
                width = hi[node, a] - lo[node, a]
                axis = a
        seg = perm[s:e].copy()
        keys = np.empty(e - s)
        for j in range(e - s):
            keys[j] = points[seg[j], axis]
        order = np.argsort(keys, kind="mergesort")
        for j in range(e - s):
            perm[s + j] = seg[order[j]]
        mid = (s + e) // 2
        l_node = n_nodes
        r_node = n_nodes + 1
        n_nodes += 2
        start[l_node] = s
        end[l_node] = mid
        start[r_node] = mid
        end[r_node] = e
        left[node] = l_node
        right[node] = r_node
        stack[sp] = r_node
        stack[sp + 1] = l_node
        sp += 2
    return (
        perm,
        start[:n_nodes].copy(),
        end[:n_nodes].copy(),
        left[:n_nodes].copy(),
        right[:n_nodes].copy(),
        lo[:n_nodes].copy(),
        hi[:n_nodes].copy(),
    )


@njit(cache=True)
def _box_box(qlo, qhi, lo, hi, node, dim):
    # smallest squared separation between the query box and a node box
    bd = 0.0
    for a in range(dim):
        t = lo[node, a] - qhi[a]
        if t > 0.0:
            bd = bd + t * t
        else:
            t = qlo[a] - hi[node, a]
            if t > 0.0:
                bd = bd + t * t
    return bd


@njit(cache=True)
def _box_point_min(qlo, qhi, pts, j, dim):
    s = 0.0
    for a in range(dim):
        p = pts[j, a]
        t = qlo[a] - p
        if t > 0.0:
            s = s + t * t
        else:
            t = p - qhi[a]
            if t > 0.0:
                s = s + t * t
    return s


@njit(cache=True)
def _box_point_max(qlo, qhi, pts, j, dim):
    s = 0.0
    for a in range(dim):
        p = pts[j, a]
        t = p - qlo[a]
        u = qhi[a] - p
        if u > t:
            t = u
        s = s + t * t
    return s


@njit(cache=True)
def _group_candidates(qlo, qhi, pts, start, end, left, right, lo, hi, stack, bounds, out, out_min):
    # One near-first pass: track the second smallest box-to-member upper
    # bound u2 while collecting members whose lower bound is within the
    # running u2.  u2 only shrinks, so a final filter leaves exactly the
    # members within the final u2.
    dim = pts.shape[1]
    u1 = np.inf
    u2 = np.inf
    k = 0
    stack[0] = 0
    bounds[0] = 0.0
    sp = 1
    while sp > 0:
        sp -= 1
        if bounds[sp] > u2 * _SLACK:
            continue
        node = stack[sp]
        ln = left[node]
        if ln < 0:
            for j in range(start[node], end[node]):
                s = _box_point_max(qlo, qhi, pts, j, dim)
                if s < u1:
                    u2 = u1
                    u1 = s
                elif s < u2:
                    u2 = s
                smin = _box_point_min(qlo, qhi, pts, j, dim)
                if smin <= u2 * _SLACK:
                    out[k] = j
                    out_min[k] = smin
                    k += 1
            continue
        rn = right[node]
        bl = _box_box(qlo, qhi, lo, hi, ln, dim)
        br = _box_box(qlo, qhi, lo, hi, rn, dim)
        if bl <= br:
            near, far, bn, bf = ln, rn, bl, br
        else:
            near, far, bn, bf = rn, ln, br, bl
        limit = u2 * _SLACK
        if bf <= limit:
            stack[sp] = far
            bounds[sp] = bf
            sp += 1
        if bn <= limit:
            stack[sp] = near
            bounds[sp] = bn
            sp += 1
    limit = u2 * _SLACK
    kept = 0
    for t in range(k):
        if out_min[t] <= limit:
            out[kept] = out[t]
            kept += 1
    return kept


@njit(cache=True)
def _query(q, order, group, self_pos, rank, pts, perm, start, end, left, right, lo, hi):
    n, dim = q.shape
    m = pts.shape[0]
    out_sq = np.full(n, np.inf)
    out_member = np.full(n, -1, np.int64)
    if m == 0:
        return out_sq, out_member
    cand = np.empty(m, np.int64)
    cand_min = np.empty(m)
    stack = np.empty(_STACK, np.int64)
    bounds = np.empty(_STACK)
    qlo = np.empty(dim)
    qhi = np.empty(dim)
    qi = np.empty(dim)
    for g0 in range(0, n, group):
        g1 = min(n, g0 + group)
        i = order[g0]
        for a in range(dim):
            qlo[a] = q[i, a]
            qhi[a] = q[i, a]
        for gi in range(g0 + 1, g1):
            i = order[gi]
            for a in range(dim):
                v = q[i, a]
                if v < qlo[a]:
                    qlo[a] = v
                elif v > qhi[a]:
                    qhi[a] = v
        k = _group_candidates(qlo, qhi, pts, start, end, left, right, lo, hi, stack, bounds, cand, cand_min)
        for gi in range(g0, g1):
            i = order[gi]
            skip = self_pos[i]
            for a in range(dim):
                qi[a] = q[i, a]
            best = np.inf
            best_member = -1
            best_rank = _NO_RANK
            for t in range(k):
                j = cand[t]
                d = qi[0] - pts[j, 0]
                s = d * d
                # partial sums never decrease, so a partial sum above best is final
                a = 1
                while a < dim and s <= best:
                    d = qi[a] - pts[j, a]
                    s = s + d * d
                    a += 1
                if s > best:
                    continue
                member = perm[j]
                if member == skip:
                    continue
                if s < best or rank[member] < best_rank:
                    best = s
                    best_member = member
                    best_rank = rank[member]
            out_sq[i] = best
            out_member[i] = best_member
    return out_sq, out_member


@njit(cache=True)
def _morton_keys(points, lo, scale, bits):
    n, dim = points.shape
    keys = np.zeros(n, np.int64)
    top = (1 << bits) - 1
    for i in range(n):
        key = 0
        for a in range(dim):
            g = int((points[i, a] - lo[a]) * scale[a])
            if g > top:
                g = top
            elif g < 0:
                g = 0
            for b in range(bits):
                key |= ((g >> b) & 1) << (b * dim + a)
        keys[i] = key
    return keys


def group_size(n_queries: int, n_members: int) -> int:
    """Queries per group: larger when members are sparse relative to queries."""
    if n_members == 0:
        return 1
    return int(min(32, max(8, round(3.0 * math.sqrt(n_queries / n_members)))))


class KDTree:
    """Static k-d tree over an (m, dim) float64 array."""

    def __init__(self, points: np.ndarray, leaf_size: int = LEAF_SIZE):
        # kernels always see writable C arrays (one compiled signature)
        points = np.array(points, dtype=np.float64, order="C")
        if points.ndim != 2:
            raise ValueError("points must be a 2-D array")
        self.m, self.dim = points.shape
        perm, start, end, left, right, lo, hi = _build(points, leaf_size)
        self.perm = perm
        self._nodes = (start, end, left, right, lo, hi)
        self.tree_points = np.ascontiguousarray(points[perm])

    def __len__(self) -> int:
        return self.m

    def nearest(self, queries, self_pos=None, rank=None, order=None, group=None):
        """Exact nearest member for each query row.

        ``self_pos[i]`` names a member to skip for query ``i`` (-1 for none);
        ``rank`` orders members for tie-breaking (lower wins).  ``order`` and
        ``group`` set how queries are batched, which affects speed only.
        Returns (squared separation, member index) with inf / -1 when no
        member qualifies.
        """
        q = np.array(queries, dtype=np.float64, order="C")
        n = len(q)
        if q.ndim != 2 or (n and q.shape[1] != self.dim):
            raise ValueError(f"queries must have shape (n, {self.dim})")
        self_pos = np.full(n, -1, np.int64) if self_pos is None else np.array(self_pos, dtype=np.int64)
        rank = np.arange(self.m, dtype=np.int64) if rank is None else np.array(rank, dtype=np.int64)
        order = coherent_order(q) if order is None else np.array(order, dtype=np.int64)
        if group is None:
            group = group_size(n, self.m)
        return _query(q, order, int(group), self_pos, rank, self.tree_points, self.perm, *self._nodes)


def coherent_order(points: np.ndarray) -> np.ndarray:
    """A processing order in which consecutive points are spatial neighbours (Z-order)."""
    points = np.array(points, dtype=np.float64, order="C")
    if len(points) == 0:
        return np.empty(0, np.int64)
    dim = points.shape[1]
    bits = min(20, 62 // dim)
    lo = points.min(axis=0)
    span = points.max(axis=0) - lo
    scale = np.where(span > 0, ((1 << bits) - 1) / np.where(span > 0, span, 1.0), 0.0)
    return np.argsort(_morton_keys(points, lo, scale, bits), kind="stable")
