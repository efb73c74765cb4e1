"""
Boxes, rotations and Vitali-type cube coverings.

A covering is stored implicitly as a stack of nested dyadic grids sharing one
origin and one orientation.  Level ``k`` has cells of edge ``base_edge / 2**k``;
a cell belongs to the covering at level ``k`` when it lies inside the region
and its parent cell does not.  Nesting makes the cube interiors disjoint by
construction, and a point is located in ``O(n_levels)`` arithmetic without
ever listing the cubes.  Cubes are materialized on demand when there are few
enough of them.
"""

import hashlib
import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation as _ScipyRotation

from kornlab._random import as_generator
from kornlab.exceptions import BudgetExceeded, MarginViolation, OutOfDomain

MIN_MARGIN = 1e-3
RESIDUAL = -1

_SIGNED_UNIT = [(s, j) for j in range(3) for s in (1.0, -1.0)]


@dataclass(frozen=True)
class Box:
    """Closed axis-aligned box ``[lo, hi]``."""

    lo: tuple
    hi: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        if len(lo) != 3 or len(hi) != 3:
            raise ValueError("Box needs three coordinates per corner")
        if any(h <= l for l, h in zip(lo, hi)):
            raise ValueError(f"degenerate box lo={lo} hi={hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def unit(cls):
        return cls((0.0, 0.0, 0.0), (1.0, 1.0, 1.0))

    @property
    def sides(self):
        return np.subtract(self.hi, self.lo)

    @property
    def center(self):
        return 0.5 * (np.asarray(self.lo) + np.asarray(self.hi))

    @property
    def volume(self):
        return float(np.prod(self.sides))

    @property
    def vertices(self):
        return np.array(list(itertools.product(*zip(self.lo, self.hi))))

    def contains(self, X, tol=0.0):
        X = np.atleast_2d(X)
        return np.all((X >= np.asarray(self.lo) - tol) & (X <= np.asarray(self.hi) + tol), axis=1)

    def boundary_layer_measure(self, width):
        """Measure of the points of the box within ``width`` of its boundary."""
        inner = np.clip(self.sides - 2.0 * width, 0.0, None)
        return self.volume - float(np.prod(inner))

    def sample(self, n, rng):
        return np.asarray(self.lo) + rng.random((n, 3)) * self.sides

    def to_dict(self):
        return {"lo": list(self.lo), "hi": list(self.hi)}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["lo"]), tuple(d["hi"]))


def rotation_margin(matrix):
    """Smallest distance ``|R e_i - s e_j|`` over all indices and signs ``s``."""
    R = np.asarray(matrix, dtype=float)
    # |R e_i - s e_j|^2 = 2 - 2 s R_ji
    return float(np.sqrt(max(0.0, 2.0 - 2.0 * np.max(np.abs(R)))))


@dataclass(frozen=True, eq=False)
class Rotation3:
    matrix: np.ndarray
    margin: float = field(default=None)

    def __post_init__(self):
        R = np.array(self.matrix, dtype=float).reshape(3, 3)
        if np.max(np.abs(R.T @ R - np.eye(3))) > 1e-12 or abs(np.linalg.det(R) - 1.0) > 1e-12:
            raise ValueError("matrix is not a proper rotation")
        R.setflags(write=False)
        object.__setattr__(self, "matrix", R)
        object.__setattr__(self, "margin", rotation_margin(R))

    @classmethod
    def identity(cls):
        return cls(np.eye(3))

    @property
    def quaternion(self):
        """Scalar-last unit quaternion ``(x, y, z, w)``."""
        return _ScipyRotation.from_matrix(self.matrix).as_quat()

    @classmethod
    def from_quaternion(cls, quat):
        M = _ScipyRotation.from_quat(np.asarray(quat, dtype=float)).as_matrix()
        # re-orthonormalize so the 1e-12 invariants survive a JSON round trip
        U, _, Vt = np.linalg.svd(M)
        return cls(U @ Vt)

    @property
    def is_axis_permutation(self):
        return bool(np.all(np.isclose(np.abs(self.matrix), np.round(np.abs(self.matrix)), atol=1e-14)))


def make_base_rotation(axis=(1.0, 2.0, 3.0), angle=1.0, min_margin=MIN_MARGIN):
    """Axis-angle rotation that keeps every ``R e_i`` away from ``+-e_j``.

    Raises
    ------
    MarginViolation
        If some ``R e_i`` lies within ``min_margin`` of ``+-e_j``.
    """
    axis = np.asarray(axis, dtype=float)
    norm = np.linalg.norm(axis)
    if not norm > 0:
        raise ValueError("rotation axis must be nonzero")
    if not np.isfinite(angle):
        raise ValueError("rotation angle must be finite")
    M = _ScipyRotation.from_rotvec(axis / norm * float(angle)).as_matrix()
    R = Rotation3(M)
    if R.margin < min_margin:
        raise MarginViolation(f"rotation margin {R.margin:.3e} below {min_margin:.1e}")
    return R


@dataclass(frozen=True, eq=False)
class OrientedCube:
    """Cube ``center + orientation @ [-h, h]^3``."""

    center: np.ndarray
    half_edge: float
    orientation: np.ndarray

    def __post_init__(self):
        if not self.half_edge > 0:
            raise ValueError("half_edge must be positive")
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        R = self.orientation.matrix if isinstance(self.orientation, Rotation3) else self.orientation
        object.__setattr__(self, "orientation", np.asarray(R, dtype=float))

    @property
    def edge(self):
        return 2.0 * self.half_edge

    @property
    def volume(self):
        return self.edge ** 3

    def local(self, X):
        """Coordinates of ``X`` in the cube frame (center at the origin)."""
        return (np.atleast_2d(X) - self.center) @ self.orientation

    def contains(self, X, tol=1e-12):
        return np.max(np.abs(self.local(X)), axis=1) <= self.half_edge * (1.0 + tol)

    @property
    def vertices(self):
        corners = np.array(list(itertools.product((-1.0, 1.0), repeat=3))) * self.half_edge
        return self.center + corners @ self.orientation.T

    def to_dict(self):
        return {
            "center": self.center.tolist(),
            "half_edge": float(self.half_edge),
            "quaternion": _ScipyRotation.from_matrix(self.orientation).as_quat().tolist(),
        }


def cubes_overlap(a, b, tol=1e-12):
    """Separating-axis test: True when the open interiors of two cubes intersect.

    Touching cubes (shared faces, edges or vertices) count as disjoint.
    """
    A, B = a.orientation, b.orientation
    axes = [A[:, i] for i in range(3)] + [B[:, i] for i in range(3)]
    for i in range(3):
        for j in range(3):
            c = np.cross(A[:, i], B[:, j])
            n = np.linalg.norm(c)
            if n > 1e-9:
                axes.append(c / n)
    d = b.center - a.center
    scale = max(a.half_edge, b.half_edge)
    for ax in axes:
        ra = a.half_edge * np.sum(np.abs(A.T @ ax))
        rb = b.half_edge * np.sum(np.abs(B.T @ ax))
        if abs(d @ ax) >= ra + rb - tol * scale:
            return False
    return True


def inscribed_edge(region, orientation):
    """Edge of the largest cube with the given orientation centered in ``region``."""
    R = np.asarray(orientation, dtype=float)
    return float(np.min(region.sides / np.sum(np.abs(R), axis=1)))


def _common_divisor_edge(sides, edge_bound, max_cells=4096):
    """Largest ``e <= edge_bound`` dividing every side, or None."""
    smin = float(np.min(sides))
    k0 = max(1, math.ceil(smin / edge_bound - 1e-12))
    for k in range(k0, max_cells + 1):
        e = smin / k
        ratios = sides / e
        if np.all(np.abs(ratios - np.round(ratios)) <= 1e-9 * np.maximum(1.0, ratios)):
            return e
    return None


class _CoveringBase:
    """Shared certificate logic; subclasses provide ``region``, ``eps``,
    ``residual_measure_bound`` and ``locate``."""

    def coverage_certificate(self, n_samples=1_000_000, rng=None, chunk=250_000):
        """Monte Carlo estimate of the covered fraction of the region.

        Returns a dict with ``fraction``, ``sigma``, ``target`` (``1 - eps``)
        and ``ok``, true when the estimate lies in ``[target - 3 sigma, 1]``.
        """
        rng = as_generator(rng, "packing-cert")
        hits = 0
        for s in range(0, n_samples, chunk):
            m = min(chunk, n_samples - s)
            level, _ = self.locate(self.region.sample(m, rng))
            hits += int(np.sum(level >= 0))
        p = hits / n_samples
        sigma = math.sqrt(max(p * (1.0 - p), 1.0 / n_samples) / n_samples)
        exact_fraction = 1.0 - self.residual_measure_bound / self.region.volume
        target = 1.0 - (self.eps if self.eps is not None else self.residual_measure_bound / self.region.volume)
        return {
            "fraction": p,
            "sigma": sigma,
            "n_samples": int(n_samples),
            "target": target,
            "certified_lower": exact_fraction,
            "ok": bool(target - 3.0 * sigma <= p <= 1.0),
        }


    def locate_centers(self, X):
        """Level, center and half edge of the covering cube containing each point."""
        raise NotImplementedError


class Covering(_CoveringBase):
    """Disjoint-interior cube covering of a box, stored as nested dyadic grids.

    Parameters
    ----------
    region : Box
    orientation : array_like (3, 3)
        Shared cube orientation; its columns are the cube edge directions.
    origin : array_like (3,)
        A vertex of the level-0 grid.
    base_edge : float
        Edge of the level-0 cells.
    n_levels : int
        Number of dyadic levels kept.
    edge_bound : float
        The admissible maximal edge the covering was built for.
    """

    # pairs of (i, j) grid indices above which exact cube counting is skipped
    count_limit = 4_000_000

    def __init__(self, region, orientation, origin, base_edge, n_levels, edge_bound, eps=None):
        self.region = region
        R = orientation.matrix if isinstance(orientation, Rotation3) else np.asarray(orientation, dtype=float)
        self.orientation = np.array(R, dtype=float)
        self.orientation.setflags(write=False)
        self.origin = np.asarray(origin, dtype=float)
        self.base_edge = float(base_edge)
        self.n_levels = int(n_levels)
        self.edge_bound = float(edge_bound)
        self.eps = eps
        self.tol = 1e-12 * float(np.max(region.sides))
        self._neg = np.sum(np.minimum(self.orientation, 0.0), axis=1)
        self._pos = np.sum(np.maximum(self.orientation, 0.0), axis=1)
        self._inside_counts = {}
        self.residual_measure_bound = self._residual_bound(self.n_levels)

    # -- grid predicates -------------------------------------------------
    def edge(self, level):
        return self.base_edge / 2.0 ** level

    def max_edge(self):
        return self.base_edge

    def inside(self, level, ijk):
        """Whether the level cells with integer indices ``ijk`` lie inside the region."""
        ijk = np.atleast_2d(ijk).astype(float)
        e = self.edge(level)
        proj = ijk @ self.orientation.T
        vmin = self.origin + e * (proj + self._neg)
        vmax = self.origin + e * (proj + self._pos)
        lo = np.asarray(self.region.lo) - self.tol
        hi = np.asarray(self.region.hi) + self.tol
        return np.all((vmin >= lo) & (vmax <= hi), axis=1)

    def kept(self, level, ijk):
        ijk = np.atleast_2d(ijk)
        ok = self.inside(level, ijk)
        if level > 0:
            ok &= ~self.inside(level - 1, np.floor_divide(ijk, 2))
        return ok

    def cube(self, level, ijk):
        e = self.edge(level)
        center = self.origin + self.orientation @ ((np.asarray(ijk, dtype=float) + 0.5) * e)
        return OrientedCube(center, e / 2.0, self.orientation)

    def cube_centers(self, level, ijk):
        e = np.asarray(self.edge(np.asarray(level)), dtype=float)
        return self.origin + ((np.asarray(ijk, dtype=float) + 0.5) * e[..., None]) @ self.orientation.T

    # -- point location --------------------------------------------------
    def local_coordinates(self, X):
        return (np.atleast_2d(X) - self.origin) @ self.orientation

    def locate(self, X, tie_tol=1e-10):
        """Find the covering cube whose closed body contains each point.

        Returns
        -------
        level : ndarray of int
            Level of the cube, or ``RESIDUAL`` (-1) when no cube contains the point.
        ijk : ndarray (N, 3) of int
            Grid indices of the cube at that level.

        Raises
        ------
        OutOfDomain
            If a point lies outside the region.

        Notes
        -----
        A point on the common boundary of several cubes is assigned the cube
        with the lowest ``(level, i, j, k)`` key.
        """
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if not np.all(self.region.contains(X, tol=self.tol)):
            raise OutOfDomain("point outside covering region")
        Y = self.local_coordinates(X)
        n = len(X)
        level = np.full(n, RESIDUAL, dtype=np.int64)
        ijk = np.zeros((n, 3), dtype=np.int64)
        pending = np.arange(n)
        offsets = np.array(list(itertools.product((-1, 0, 1), repeat=3)))
        for k in range(self.n_levels):
            if len(pending) == 0:
                break
            Z = Y[pending] / self.edge(k)
            base = np.floor(Z)
            frac = Z - base
            near_lo = frac < tie_tol
            near_hi = frac > 1.0 - tie_tol
            tie = np.any(near_lo | near_hi, axis=1)
            found = np.zeros(len(pending), dtype=bool)
            best = base.astype(np.int64)

            plain = ~tie
            if np.any(plain):
                ok = self.inside(k, base[plain])
                idx = np.flatnonzero(plain)[ok]
                found[idx] = True
            if np.any(tie):
                tidx = np.flatnonzero(tie)
                done = np.zeros(len(tidx), dtype=bool)
                for off in offsets:
                    allowed = np.all(
                        (off == 0) | ((off == -1) & near_lo[tidx]) | ((off == 1) & near_hi[tidx]), axis=1
                    )
                    cand = ~done & allowed
                    if not np.any(cand):
                        continue
                    c_ijk = base[tidx[cand]] + off
                    ok = self.inside(k, c_ijk)
                    sel = np.flatnonzero(cand)[ok]
                    best[tidx[sel]] = c_ijk[ok].astype(np.int64)
                    done[sel] = True
                found[tidx[done]] = True
            hit = pending[found]
            level[hit] = k
            ijk[hit] = best[found]
            pending = pending[~found]
        return level, ijk

    def locate_centers(self, X):
        level, ijk = self.locate(X)
        hit = level != RESIDUAL
        centers = np.zeros((len(level), 3))
        half = np.zeros(len(level))
        if np.any(hit):
            centers[hit] = self.cube_centers(level[hit], ijk[hit])
            half[hit] = 0.5 * self.base_edge / 2.0 ** level[hit]
        return level, centers, half

    # -- counting and materialization ------------------------------------
    def _index_box(self, level):
        Y = self.local_coordinates(self.region.vertices) / self.edge(level)
        return np.floor(Y.min(axis=0)).astype(np.int64) - 1, np.ceil(Y.max(axis=0)).astype(np.int64) + 1

    def _pair_count(self, level):
        lo, hi = self._index_box(level)
        return (int(hi[0]) - int(lo[0]) + 1) * (int(hi[1]) - int(lo[1]) + 1)

    def _l_intervals(self, level, I, J):
        """For grid columns ``(i, j)`` the range of ``l`` giving inside cells."""
        e = self.edge(level)
        R = self.orientation
        lo = (np.asarray(self.region.lo) - self.tol - self.origin) / e - self._neg
        hi = (np.asarray(self.region.hi) + self.tol - self.origin) / e - self._pos
        lmin = np.full(I.shape, -np.inf)
        lmax = np.full(I.shape, np.inf)
        feasible = np.ones(I.shape, dtype=bool)
        for d in range(3):
            partial = R[d, 0] * I + R[d, 1] * J
            a = lo[d] - partial
            b = hi[d] - partial
            r = R[d, 2]
            if abs(r) < 1e-15:
                feasible &= (a <= 0.0) & (b >= 0.0)
            elif r > 0:
                lmin = np.maximum(lmin, a / r)
                lmax = np.minimum(lmax, b / r)
            else:
                lmin = np.maximum(lmin, b / r)
                lmax = np.minimum(lmax, a / r)
        with np.errstate(invalid="ignore"):
            lmin = np.ceil(lmin - 1e-9)
            lmax = np.floor(lmax + 1e-9)
        ok = feasible & (lmax >= lmin)
        return lmin, lmax, ok

    def _columns(self, level, chunk=1 << 20):
        lo, hi = self._index_box(level)
        irange = np.arange(lo[0], hi[0] + 1)
        jrange = np.arange(lo[1], hi[1] + 1)
        step = max(1, chunk // len(jrange))
        for s in range(0, len(irange), step):
            I, J = np.meshgrid(irange[s:s + step], jrange, indexing="ij")
            yield I.ravel().astype(float), J.ravel().astype(float)

    def inside_count(self, level):
        """Exact number of level cells inside the region (may be expensive)."""
        if level not in self._inside_counts:
            total = 0
            for I, J in self._columns(level):
                lmin, lmax, ok = self._l_intervals(level, I, J)
                total += int(np.sum(lmax[ok] - lmin[ok] + 1))
            self._inside_counts[level] = total
        return self._inside_counts[level]

    def countable(self, level):
        return self._pair_count(level) <= self.count_limit

    def covered_measure(self, levels=None):
        """Exact measure covered by the first ``levels`` levels, or None if too costly."""
        levels = self.n_levels if levels is None else levels
        last = levels - 1
        if not self.countable(last):
            return None
        return self.inside_count(last) * self.edge(last) ** 3

    def _residual_bound(self, levels):
        covered = self.covered_measure(levels)
        if covered is not None:
            return max(0.0, self.region.volume - covered)
        # an uncovered point has an uncovered finest cell, so it is sqrt(3) e from the boundary
        width = math.sqrt(3.0) * self.edge(levels - 1)
        return self.region.boundary_layer_measure(width)

    @property
    def residual_is_exact(self):
        return self.countable(self.n_levels - 1)

    def cube_count(self, level=None):
        """Number of covering cubes at ``level`` (or in total), when countable."""
        if level is None:
            return sum(self.cube_count(k) for k in range(self.n_levels))
        if not self.countable(level):
            return None
        parent = 8 * self.inside_count(level - 1) if level > 0 else 0
        return self.inside_count(level) - parent

    def level_cubes(self, level):
        """Integer indices of all covering cubes at one level."""
        out = []
        for I, J in self._columns(level):
            lmin, lmax, ok = self._l_intervals(level, I, J)
            if not np.any(ok):
                continue
            counts = (lmax[ok] - lmin[ok] + 1).astype(np.int64)
            ii = np.repeat(I[ok], counts)
            jj = np.repeat(J[ok], counts)
            starts = np.repeat(lmin[ok], counts)
            ll = starts + (np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts))
            cells = np.column_stack([ii, jj, ll]).astype(np.int64)
            # the interval test and the pointwise predicate share tolerances; keep the stricter
            cells = cells[self.kept(level, cells)]
            out.append(cells)
        if not out:
            return np.zeros((0, 3), dtype=np.int64)
        cells = np.concatenate(out)
        order = np.lexsort((cells[:, 2], cells[:, 1], cells[:, 0]))
        return cells[order]

    def materialize(self, max_cubes=20000):
        """Cubes of the first levels whose cumulative count stays within ``max_cubes``.

        Returns
        -------
        levels : ndarray of int
        ijk : ndarray (N, 3) of int
        complete : bool
            True when every level was materialized.
        """
        levels, cells = [], []
        total = 0
        for k in range(self.n_levels):
            count = self.cube_count(k)
            if count is None or total + count > max_cubes:
                break
            c = self.level_cubes(k)
            levels.append(np.full(len(c), k, dtype=np.int64))
            cells.append(c)
            total += len(c)
        complete = len(levels) == self.n_levels
        if not levels:
            return np.zeros(0, dtype=np.int64), np.zeros((0, 3), dtype=np.int64), complete
        return np.concatenate(levels), np.concatenate(cells), complete

    def cubes(self, max_cubes=20000):
        levels, ijk, _ = self.materialize(max_cubes)
        return [self.cube(k, c) for k, c in zip(levels, ijk)]

    # -- serialization ---------------------------------------------------
    def to_dict(self, max_cubes=20000):
        levels, ijk, complete = self.materialize(max_cubes)
        cubes = []
        quat = _ScipyRotation.from_matrix(self.orientation).as_quat().tolist()
        for k, c in zip(levels, ijk):
            cube = self.cube(k, c)
            cubes.append({"center": cube.center.tolist(), "half_edge": cube.half_edge, "quaternion": quat})
        payload = {
            "layout": "grid",
            "region": self.region.to_dict(),
            "cubes": cubes,
            "cubes_complete": complete,
            "residual_measure_bound": self.residual_measure_bound,
            "residual_is_exact": self.residual_is_exact,
            "edge_bound": self.edge_bound,
            "grid": {
                "orientation": self.orientation.tolist(),
                "origin": self.origin.tolist(),
                "base_edge": self.base_edge,
                "n_levels": self.n_levels,
                "eps": self.eps,
            },
        }
        payload["checksum"] = payload_checksum(payload)
        return payload

    @classmethod
    def from_dict(cls, d):
        from kornlab.exceptions import IntegrityError

        try:
            expected = d["checksum"]
            grid = d["grid"]
            cov = cls(
                Box.from_dict(d["region"]),
                np.asarray(grid["orientation"], dtype=float),
                grid["origin"],
                grid["base_edge"],
                grid["n_levels"],
                d["edge_bound"],
                eps=grid.get("eps"),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise IntegrityError(f"malformed covering record: {exc}") from exc
        body = {k: v for k, v in d.items() if k != "checksum"}
        if payload_checksum(body) != expected:
            raise IntegrityError("covering checksum mismatch")
        return cov

    def __repr__(self):
        return (
            f"Covering(region={self.region.lo}..{self.region.hi}, base_edge={self.base_edge:.4g}, "
            f"n_levels={self.n_levels}, residual<={self.residual_measure_bound:.3e})"
        )


class TiledCovering(_CoveringBase):
    """Rotated covering assembled from one packing per cell of an axis grid.

    Every cell of ``tile`` (a single-level axis-aligned grid) receives a
    translate of ``reference``, the rotated packing of cell ``(0, 0, 0)``.
    Distinct cells have disjoint interiors, so the union is again a
    disjoint-interior covering, and it is exactly self-similar under a change
    of the grid edge.
    """

    def __init__(self, tile, reference):
        if tile.n_levels != 1 or not np.allclose(tile.orientation, np.eye(3)):
            raise ValueError("tile must be a single-level axis grid")
        self.tile = tile
        self.reference = reference
        self.region = tile.region
        self.orientation = reference.orientation
        self.edge_bound = reference.edge_bound
        self.eps = reference.eps
        self.base_edge = reference.base_edge
        self.n_levels = reference.n_levels
        self.tol = tile.tol
        self.n_tiles = tile.cube_count(0)
        self.residual_measure_bound = tile.residual_measure_bound + self.n_tiles * reference.residual_measure_bound

    @property
    def residual_is_exact(self):
        return self.tile.residual_is_exact and self.reference.residual_is_exact

    def locate(self, X):
        """Returns ``level`` and a key ``(tile ijk, cube ijk)`` of shape (N, 6)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        tl, tijk = self.tile.locate(X)
        level = np.full(len(X), RESIDUAL, dtype=np.int64)
        key = np.zeros((len(X), 6), dtype=np.int64)
        hit = np.flatnonzero(tl != RESIDUAL)
        if len(hit):
            shift = self.tile.edge(0) * tijk[hit]
            Xr = np.clip(X[hit] - shift, self.reference.region.lo, self.reference.region.hi)
            lv, rijk = self.reference.locate(Xr)
            level[hit] = lv
            key[hit, :3] = tijk[hit]
            key[hit, 3:] = rijk
        return level, key

    def locate_centers(self, X):
        level, key = self.locate(X)
        hit = level != RESIDUAL
        centers = np.zeros((len(level), 3))
        half = np.zeros(len(level))
        if np.any(hit):
            ref = self.reference
            centers[hit] = ref.cube_centers(level[hit], key[hit, 3:]) + self.tile.edge(0) * key[hit, :3]
            half[hit] = 0.5 * ref.base_edge / 2.0 ** level[hit]
        return level, centers, half

    def cube_count(self, level=None):
        c = self.reference.cube_count(level)
        return None if c is None else c * self.n_tiles

    def covered_measure(self):
        return self.region.volume - self.residual_measure_bound if self.residual_is_exact else None

    def materialize(self, max_cubes=20000):
        tiles = self.tile.level_cubes(0)
        lv, rijk, complete = self.reference.materialize(max(0, max_cubes // max(1, len(tiles))))
        levels = np.tile(lv, len(tiles))
        key = np.hstack([np.repeat(tiles, len(lv), axis=0), np.tile(rijk, (len(tiles), 1))])
        return levels, key, complete

    def cubes(self, max_cubes=20000):
        levels, key, _ = self.materialize(max_cubes)
        shift = self.tile.edge(0) * key[:, :3]
        out = []
        for k, r, sh in zip(levels, key[:, 3:], shift):
            c = self.reference.cube(k, r)
            out.append(OrientedCube(c.center + sh, c.half_edge, c.orientation))
        return out

    def to_dict(self, max_cubes=20000):
        quat = _ScipyRotation.from_matrix(self.orientation).as_quat().tolist()
        levels, key, complete = self.materialize(max_cubes)
        cubes = [
            {"center": c.center.tolist(), "half_edge": c.half_edge, "quaternion": quat}
            for c in self.cubes(max_cubes)
        ]
        payload = {
            "layout": "tiled",
            "region": self.region.to_dict(),
            "cubes": cubes,
            "cubes_complete": complete,
            "residual_measure_bound": self.residual_measure_bound,
            "residual_is_exact": self.residual_is_exact,
            "edge_bound": self.edge_bound,
            "tile": self.tile.to_dict(max_cubes=0),
            "reference": self.reference.to_dict(max_cubes=0),
        }
        payload["checksum"] = payload_checksum(payload)
        return payload

    @classmethod
    def from_dict(cls, d):
        from kornlab.exceptions import IntegrityError

        try:
            expected = d["checksum"]
            cov = cls(Covering.from_dict(d["tile"]), Covering.from_dict(d["reference"]))
        except (KeyError, TypeError) as exc:
            raise IntegrityError(f"malformed covering record: {exc}") from exc
        body = {k: v for k, v in d.items() if k != "checksum"}
        if payload_checksum(body) != expected:
            raise IntegrityError("covering checksum mismatch")
        return cov

    def __repr__(self):
        return f"TiledCovering({self.n_tiles} tiles x {self.reference!r})"


def covering_from_dict(d):
    from kornlab.exceptions import IntegrityError

    if not isinstance(d, dict):
        raise IntegrityError("covering record must be an object")
    layout = d.get("layout")
    if layout == "grid":
        return Covering.from_dict(d)
    if layout == "tiled":
        return TiledCovering.from_dict(d)
    raise IntegrityError(f"unknown covering layout {layout!r}")


def tiled_rotated_cover(tile, orientation, edge_bound, eps, max_scales=32):
    """Rotated packing of every cell of the axis grid ``tile``."""
    e = tile.edge(0)
    lo = np.asarray(tile.origin)
    cell = Box(tuple(lo), tuple(lo + e))
    reference = rotated_vitali_cover(cell, orientation, edge_bound, eps, max_scales)
    return TiledCovering(tile, reference)


def payload_checksum(payload):
    text = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


def axis_grid_cover(region, edge_bound):
    """Uniform grid of axis-aligned cubes with edge at most ``edge_bound``.

    The largest edge dividing every side of the region is used, so the grid
    fills the box exactly.  If no such edge exists within 4096 cells per
    side, the grid starts at ``region.lo`` and the leftover slivers are
    reported as residual measure.
    """
    if not edge_bound > 0:
        raise ValueError("edge_bound must be positive")
    sides = region.sides
    e = _common_divisor_edge(sides, edge_bound)
    if e is None:
        e = min(edge_bound, float(np.min(sides)))
    return Covering(region, np.eye(3), region.lo, e, 1, edge_bound)


def rotated_vitali_cover(region, orientation, edge_bound, eps, max_scales=32):
    """Greedy multiscale packing of ``region`` by cubes with a fixed orientation.

    Level 0 holds the largest admissible cube centered in the region; each
    further level halves the edge, and cells lying inside the region but not
    inside an already kept cell join the covering.  Levels are added until
    the uncovered measure is certified to be at most ``eps * |region|``.

    Raises
    ------
    BudgetExceeded
        If ``max_scales`` levels do not reach the coverage target.
    """
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    if not edge_bound > 0:
        raise ValueError("edge_bound must be positive")
    R = orientation.matrix if isinstance(orientation, Rotation3) else np.asarray(orientation, dtype=float)
    if np.all(np.isclose(np.abs(R), np.round(np.abs(R)), atol=1e-14)):
        # axis-aligned: a dyadic refinement of the exact grid
        e0 = _common_divisor_edge(region.sides, edge_bound) or min(edge_bound, float(np.min(region.sides)))
        origin = _axis_origin(region, R, e0)
    else:
        e0 = min(edge_bound, inscribed_edge(region, R))
        origin = region.center - R @ np.full(3, 0.5 * e0)
    target = eps * region.volume
    for levels in range(1, max_scales + 1):
        cov = Covering(region, R, origin, e0, levels, edge_bound, eps=eps)
        if cov.residual_measure_bound <= target:
            return cov
    raise BudgetExceeded(
        f"coverage 1-{eps:g} not certified within {max_scales} scales "
        f"(residual bound {cov.residual_measure_bound:.3e})"
    )


def _axis_origin(region, R, e0):
    # a signed permutation maps cell [0,1]^3 onto a box whose low corner is origin + e0*neg
    neg = np.sum(np.minimum(R, 0.0), axis=1)
    return np.asarray(region.lo) - e0 * neg


@dataclass(frozen=True)
class DomainDecomposition:
    """A box split into disjoint open boxes (the parts hosting each witness)."""

    region: Box
    parts: tuple
    mode: str = "single"

    def __post_init__(self):
        object.__setattr__(self, "parts", tuple(self.parts))

    @property
    def measures(self):
        return np.array([p.volume for p in self.parts])

    def coverage_defect(self):
        return self.region.volume - float(self.measures.sum())

    def locate_part(self, X):
        """Index of the part containing each point (-1 outside every part).

        Points on a shared slab face go to the lowest part index.
        """
        X = np.atleast_2d(X)
        out = np.full(len(X), -1, dtype=np.int64)
        for idx in range(len(self.parts) - 1, -1, -1):
            out[self.parts[idx].contains(X)] = idx
        return out

    def to_dict(self):
        return {"region": self.region.to_dict(), "mode": self.mode, "parts": [p.to_dict() for p in self.parts]}

    @classmethod
    def from_dict(cls, d):
        return cls(Box.from_dict(d["region"]), tuple(Box.from_dict(p) for p in d["parts"]), d.get("mode", "single"))


def make_decomposition(region, mode="single", n_parts=1):
    """Single-part (``parts = (region,)``) or dyadic slabs along the first axis.

    In slab mode part ``n`` (1-based) is ``lo + L 2^{-n} < x_1 < lo + L 2^{1-n}``;
    the last part absorbs the remaining slab touching ``x_1 = lo``.
    """
    if mode == "single":
        return DomainDecomposition(region, (region,), "single")
    if mode != "slabs":
        raise ValueError(f"unknown decomposition mode {mode!r}")
    if n_parts < 1:
        raise ValueError("n_parts must be positive")
    lo, hi = np.asarray(region.lo), np.asarray(region.hi)
    L = hi[0] - lo[0]
    parts = []
    for n in range(1, n_parts + 1):
        a = lo[0] + (L * 2.0 ** -n if n < n_parts else 0.0)
        b = lo[0] + L * 2.0 ** (1 - n)
        parts.append(Box((a, lo[1], lo[2]), (b, hi[1], hi[2])))
    return DomainDecomposition(region, tuple(parts), "slabs")


def all_signed_frames(R):
    """The 36 pairs ``(s e_i, t R e_j)`` used for worst-case frame checks."""
    R = np.asarray(R, dtype=float)
    out = []
    for s, i in _SIGNED_UNIT:
        for t, j in _SIGNED_UNIT:
            out.append((s * np.eye(3)[i], t * R[:, j]))
    return out
