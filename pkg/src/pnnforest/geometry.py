"""Closed-rectangle geometry and potential-nearest-neighbor search.

A point ``x`` of a finite configuration is a *k-potential nearest neighbor*
(k-PNN) of a target ``x0`` when the closed axis-aligned hyperrectangle
spanned by ``x`` and ``x0`` contains fewer than ``k`` configuration points
other than ``x`` itself.  For ``k = 1`` these are the layered nearest
neighbors: the per-orthant Pareto-minimal points of the configuration as
seen from ``x0``.

Two routes compute the k-PNN set:

* :func:`kpnn_set` — a brute-force reference that tests every pair of points
  directly against the rectangle definition.  O(n^2 d); kept deliberately
  simple so it can serve as the oracle for the fast path.
* :func:`kpnn_set_fast` — per-orthant dominance counting.  After translating
  by ``x0`` and folding signs, "y lies in Rect(x, x0)" becomes componentwise
  ``|y| <= |x|`` within the same orthant, so the rectangle count is a
  dominance count: a binary-indexed-tree sweep for d = 2 (O(n log n)), rank
  counting for d = 1, and a sorted prefix scan for d >= 3.  Points sitting on
  an orthant boundary (some coordinate exactly equal to ``x0``'s) belong to
  several orthants at once; they are handled by an exact O(B n d) correction
  pass so the fast path agrees with the oracle bitwise, ties and duplicates
  included.

All rectangles are closed and may be degenerate.  Point coincidences are
resolved by exact floating-point equality: ``x`` excludes exactly one
occurrence of itself, and a configuration point equal to ``x0`` lies in every
rectangle and is never excluded.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

try:  # pragma: no cover - exercised implicitly by the equality test
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        return wrap if not (args and callable(args[0])) else args[0]


__all__ = [
    "HyperRect",
    "PointConfig",
    "as_point",
    "rect_between",
    "rect_volume",
    "count_in_rect_excl",
    "is_kpnn",
    "kpnn_set",
    "kpnn_set_fast",
    "HAVE_NUMBA",
]


def as_point(p) -> np.ndarray:
    """Validate and return ``p`` as a 1-D float64 coordinate vector."""
    arr = np.asarray(p, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError(f"point must be a non-empty 1-D vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("point coordinates must be finite")
    return arr


@dataclass(frozen=True, eq=False)
class HyperRect:
    """Closed axis-aligned hyperrectangle, possibly degenerate (lo == hi)."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = as_point(self.lo)
        hi = as_point(self.hi)
        if lo.shape != hi.shape:
            raise ValueError("lo and hi must have the same dimension")
        if np.any(lo > hi):
            raise ValueError("rectangle requires lo <= hi componentwise")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self) -> int:
        return self.lo.size

    def volume(self) -> float:
        return float(np.prod(self.hi - self.lo))

    def contains(self, points) -> np.ndarray | bool:
        """Closed membership test; vectorized over an (n, d) array of rows."""
        pts = np.asarray(points, dtype=np.float64)
        single = pts.ndim == 1
        pts = np.atleast_2d(pts)
        if pts.shape[1] != self.dim:
            raise ValueError("dimension mismatch")
        inside = np.logical_and(pts >= self.lo, pts <= self.hi).all(axis=1)
        return bool(inside[0]) if single else inside


@dataclass(frozen=True, eq=False)
class PointConfig:
    """A finite point configuration: n points in R^d, indexed 0..n-1.

    Multiplicities are allowed (duplicate rows are distinct configuration
    points).  ``dim`` is stored explicitly so that empty configurations keep
    their ambient dimension.
    """

    points: np.ndarray
    dim: int = field(default=-1)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim == 1 and pts.size == 0:
            pts = pts.reshape(0, self.dim if self.dim > 0 else 1)
        if pts.ndim != 2:
            raise ValueError(f"points must be an (n, d) array, got shape {pts.shape}")
        dim = pts.shape[1] if self.dim == -1 else self.dim
        if dim <= 0 or pts.shape[1] != dim:
            raise ValueError("invalid dimension")
        if pts.size and not np.all(np.isfinite(pts)):
            raise ValueError("configuration points must be finite")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "dim", dim)

    @classmethod
    def empty(cls, dim: int) -> "PointConfig":
        return cls(np.empty((0, dim)), dim=dim)

    @property
    def n_points(self) -> int:
        return self.points.shape[0]

    def add(self, point) -> "PointConfig":
        """Return a new configuration with ``point`` appended."""
        p = as_point(point)
        if p.size != self.dim:
            raise ValueError("dimension mismatch")
        return PointConfig(np.vstack([self.points, p[None, :]]), dim=self.dim)

    def index_of(self, point) -> int:
        """Index of the first configuration point bitwise-equal to ``point``."""
        p = as_point(point)
        if p.size != self.dim:
            raise ValueError("dimension mismatch")
        hits = np.nonzero((self.points == p).all(axis=1))[0]
        if hits.size == 0:
            raise ValueError("point is not a member of the configuration")
        return int(hits[0])


def rect_between(a, b) -> HyperRect:
    """The closed hyperrectangle spanned by two corner points."""
    pa, pb = as_point(a), as_point(b)
    if pa.shape != pb.shape:
        raise ValueError("corner points must have the same dimension")
    return HyperRect(np.minimum(pa, pb), np.maximum(pa, pb))


def rect_volume(a, b) -> float:
    """Product of absolute coordinate differences of the two corners."""
    pa, pb = as_point(a), as_point(b)
    if pa.shape != pb.shape:
        raise ValueError("corner points must have the same dimension")
    return float(np.prod(np.abs(pa - pb)))


def count_in_rect_excl(config: PointConfig, x0, x) -> int:
    """Number of configuration points in Rect(x, x0), excluding one ``x``.

    Exactly one occurrence of ``x`` is excluded when present (a corner of a
    closed rectangle always lies inside it); further duplicates of ``x`` and
    any point equal to ``x0`` are counted.  ``x`` need not belong to the
    configuration.
    """
    p0, px = as_point(x0), as_point(x)
    if p0.size != config.dim or px.size != config.dim:
        raise ValueError("dimension mismatch")
    if config.n_points == 0:
        return 0
    pts = config.points
    lo = np.minimum(p0, px)
    hi = np.maximum(p0, px)
    inside = np.logical_and(pts >= lo, pts <= hi).all(axis=1)
    count = int(inside.sum())
    if np.any((pts == px).all(axis=1)):
        count -= 1
    return count


def is_kpnn(config: PointConfig, x0, x, k: int) -> bool:
    """Whether configuration member ``x`` is a k-PNN of ``x0``.

    Raises ValueError if ``x`` is not (bitwise) a configuration point.
    """
    _check_k(k)
    config.index_of(x)  # membership precondition
    return count_in_rect_excl(config, x0, x) < k


def kpnn_set(config: PointConfig, x0, k: int) -> np.ndarray:
    """Brute-force k-PNN index set (sorted, ascending).

    Reference implementation: every point is tested directly against the
    rectangle definition, O(n^2 d) via chunked broadcasting.
    """
    _check_k(k)
    p0 = as_point(x0)
    if p0.size != config.dim:
        raise ValueError("dimension mismatch")
    n = config.n_points
    if n == 0:
        return np.empty(0, dtype=np.int64)
    pts = config.points
    lo = np.minimum(pts, p0)  # per-point rectangle corners
    hi = np.maximum(pts, p0)
    counts = np.empty(n, dtype=np.int64)
    chunk = max(1, int(4_000_000 // max(n, 1)))
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        inside = np.ones((stop - start, n), dtype=bool)
        for c in range(config.dim):
            col = pts[:, c]
            inside &= (col >= lo[start:stop, c, None]) & (col <= hi[start:stop, c, None])
        counts[start:stop] = inside.sum(axis=1)
    # each point sits in its own rectangle; subtracting 1 excludes exactly
    # one occurrence of x itself
    return np.nonzero(counts - 1 < k)[0].astype(np.int64)


def kpnn_set_fast(config: PointConfig, x0, k: int) -> np.ndarray:
    """Accelerated k-PNN index set; agrees with :func:`kpnn_set` exactly."""
    _check_k(k)
    p0 = as_point(x0)
    if p0.size != config.dim:
        raise ValueError("dimension mismatch")
    mask = _kpnn_mask(config.points, p0, k)
    return np.nonzero(mask)[0].astype(np.int64)


def _check_k(k) -> None:
    if not isinstance(k, (int, np.integer)) or k < 1:
        raise ValueError(f"k must be a positive integer, got {k!r}")


# ---------------------------------------------------------------------------
# fast path internals
# ---------------------------------------------------------------------------


def _kpnn_mask(points: np.ndarray, x0: np.ndarray, k: int) -> np.ndarray:
    """Boolean k-PNN mask over configuration rows.

    Ties are exact: a point y lies in Rect(x, x0) iff for every coordinate c
    either y and x sit (weakly) on the same side of x0 with |y_c - x0_c| <=
    |x_c - x0_c|, or y_c == x0_c.  Within one orthant this is plain dominance
    of folded coordinates; contributions across orthants can only come from
    points with some coordinate exactly on the boundary, which are patched
    separately.
    """
    n, d = points.shape
    if n == 0:
        return np.zeros(0, dtype=bool)
    if d == 2 and HAVE_NUMBA:
        return _mask_2d(points, x0, int(k))
    return _kpnn_mask_numpy(points, x0, k)


def _kpnn_mask_numpy(points: np.ndarray, x0: np.ndarray, k: int) -> np.ndarray:
    """Pure-numpy mask route; the d = 2 branch doubles as the numba
    kernel's semantic twin for equivalence tests."""
    n, d = points.shape
    off = points - x0
    u = np.abs(off)
    neg = off < 0.0
    codes = neg @ (1 << np.arange(d, dtype=np.int64))
    inclusive = np.zeros(n, dtype=np.int64)

    for code in np.unique(codes):
        idx = np.nonzero(codes == code)[0]
        grp = u[idx]
        if d == 1:
            counts = _dominance_counts_1d(grp[:, 0])
        elif d == 2:
            counts = _dominance_counts_2d(grp[:, 0], grp[:, 1])
        else:
            counts = _dominance_counts_nd(grp)
        inclusive[idx] = counts

    boundary = np.nonzero((off == 0.0).any(axis=1))[0]
    for j in boundary:
        # j also lies in Rect(x_i, x0) for points i of *other* orthants when
        # every sign-differing coordinate of j sits exactly on x0
        contained = np.ones(n, dtype=bool)
        for c in range(d):
            if off[j, c] == 0.0:
                continue
            contained &= (neg[:, c] == neg[j, c]) & (u[j, c] <= u[:, c])
        contained &= codes != codes[j]
        inclusive[contained] += 1

    return inclusive - 1 < k


def _dominance_counts_1d(u: np.ndarray) -> np.ndarray:
    su = np.sort(u)
    return np.searchsorted(su, u, side="right").astype(np.int64)


def _dominance_counts_2d(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Inclusive dominance counts: #{j : u_j <= u_i and v_j <= v_i}."""
    n = u.size
    order = np.lexsort((v, u))
    sv = np.sort(v)
    # duplicate v-values share one tree slot so equal values always count
    ranks = np.searchsorted(sv, v, side="right").astype(np.int64)
    kernel = _fenwick_sweep if HAVE_NUMBA else _fenwick_sweep_py
    counts_sorted = kernel(u[order], v[order], ranks[order])
    out = np.empty(n, dtype=np.int64)
    out[order] = counts_sorted
    return out


def _fenwick_sweep_py(u_sorted, v_sorted, rank_sorted):
    """Sweep in (u, v) order; query strictly-smaller-u points from a Fenwick
    tree, count equal-u groups locally, then insert the group."""
    n = u_sorted.size
    tree = np.zeros(n + 1, dtype=np.int64)
    counts = np.zeros(n, dtype=np.int64)
    i = 0
    while i < n:
        j = i + 1
        while j < n and u_sorted[j] == u_sorted[i]:
            j += 1
        for p in range(i, j):
            s = 0
            idx = rank_sorted[p]
            while idx > 0:
                s += tree[idx]
                idx -= idx & (-idx)
            counts[p] = s
        p = i
        while p < j:  # equal-u group is v-sorted: runs of equal v
            q = p + 1
            while q < j and v_sorted[q] == v_sorted[p]:
                q += 1
            for r in range(p, q):
                counts[r] += q - i
            p = q
        for p in range(i, j):
            idx = rank_sorted[p]
            while idx <= n:
                tree[idx] += 1
                idx += idx & (-idx)
        i = j
    return counts


if HAVE_NUMBA:
    _fenwick_sweep = njit(cache=True)(_fenwick_sweep_py)


def _mask_2d(points: np.ndarray, x0: np.ndarray, k: int) -> np.ndarray:
    """d = 2 mask: numpy does the sorts and rank compression, one numba sweep
    does the per-orthant Fenwick counting.  Semantics identical to the numpy
    route."""
    off0 = np.ascontiguousarray(points[:, 0]) - x0[0]
    off1 = np.ascontiguousarray(points[:, 1]) - x0[1]
    u = np.abs(off0)
    v = np.abs(off1)
    code = ((off0 < 0.0) + 2 * (off1 < 0.0)).astype(np.int8)
    uorder = np.argsort(u)
    varg = np.argsort(v)
    sv = v[varg]
    # right-rank: duplicate values share the rank of their last occurrence,
    # so the Fenwick prefix at vrank[i] counts exactly the j with v_j <= v_i
    vrank = np.empty(v.size, dtype=np.int64)
    if v.size < 2 or np.all(sv[1:] > sv[:-1]):
        vrank[varg] = np.arange(1, v.size + 1)
    else:
        vrank[varg] = np.searchsorted(sv, sv, side="right")
    inclusive = _sweep_2d(off0, off1, u, v, code, vrank, uorder)
    return inclusive - 1 < k


def _sweep_2d_impl(off0, off1, u, v, code, vrank, uorder):
    """Walk points in ascending |off0| with one Fenwick tree per orthant;
    equal-|off0| groups are queried before insertion, with in-group pairs
    counted directly.  A final pass adds cross-orthant contributions from
    points sitting exactly on an orthant boundary."""
    n = off0.size
    trees = np.zeros((4, n + 1), np.int32)
    inclusive = np.zeros(n, np.int64)
    i0 = 0
    while i0 < n:
        j0 = i0 + 1
        u0 = u[uorder[i0]]
        while j0 < n and u[uorder[j0]] == u0:
            j0 += 1
        for p in range(i0, j0):
            i = uorder[p]
            ci = code[i]
            tree = trees[ci]
            cnt = 0
            ridx = vrank[i]
            while ridx > 0:
                cnt += tree[ridx]
                ridx -= ridx & (-ridx)
            for q in range(i0, j0):
                jj = uorder[q]
                if code[jj] == ci and v[jj] <= v[i]:
                    cnt += 1
            inclusive[i] = cnt
        for p in range(i0, j0):
            i = uorder[p]
            tree = trees[code[i]]
            ridx = vrank[i]
            while ridx <= n:
                tree[ridx] += 1
                ridx += ridx & (-ridx)
        i0 = j0

    for j in range(n):
        if off0[j] != 0.0 and off1[j] != 0.0:
            continue
        cj = code[j]
        for i in range(n):
            if code[i] == cj:
                continue
            ok = True
            if off0[j] != 0.0:
                if (off0[j] < 0.0) != (off0[i] < 0.0) or u[j] > u[i]:
                    ok = False
            if ok and off1[j] != 0.0:
                if (off1[j] < 0.0) != (off1[i] < 0.0) or v[j] > v[i]:
                    ok = False
            if ok:
                inclusive[i] += 1
    return inclusive


if HAVE_NUMBA:
    _sweep_2d = njit(cache=True)(_sweep_2d_impl)
else:  # pragma: no cover - numba is a declared dependency; kept for resilience
    _sweep_2d = _sweep_2d_impl


def _dominance_counts_nd(grp: np.ndarray) -> np.ndarray:
    """Inclusive dominance counts for d >= 3: first-coordinate sort with a
    pruned, chunked componentwise scan."""
    n, d = grp.shape
    order = np.argsort(grp[:, 0], kind="stable")
    g = grp[order]
    bounds = np.searchsorted(g[:, 0], g[:, 0], side="right")
    counts = np.empty(n, dtype=np.int64)
    chunk = max(1, int(2_000_000 // max(n, 1)))
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        width = int(bounds[stop - 1])  # candidates pruned to u0 <= chunk max
        cand = g[:width]
        inside = np.ones((stop - start, width), dtype=bool)
        for c in range(d):
            inside &= cand[:, c] <= g[start:stop, c, None]
        jidx = np.arange(width)
        inside &= jidx < bounds[start:stop, None]
        counts[start:stop] = inside.sum(axis=1)
    out = np.empty(n, dtype=np.int64)
    out[order] = counts
    return out
