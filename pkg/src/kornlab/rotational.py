"""
Counterexample with a rotation-valued coefficient field.

The construction consumes any map on the unit cube whose first two gradient
rows are orthonormal almost everywhere (maps of this kind exist with zero
boundary values, but no finite construction is known, so the map is a
pluggable ``OrthoMap``).  Scaled copies of the map are placed on the cubes of
an axis-aligned grid; at every point the coefficient is the rotation sending
the two gradient rows to ``(0, 1, 0)`` and ``(-1, 0, 0)``.
"""

import abc
import csv
import io
import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.transform import Rotation as _ScipyRotation
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from kornlab._random import substream
from kornlab.exceptions import NotOrthonormal, OutOfDomain, QualityBudgetExceeded
from kornlab.geometry import RESIDUAL, Box, axis_grid_cover, make_decomposition
from kornlab.unimodular import FieldBundle, Tag, VerificationRecord, VerificationReport, _as_points

TARGET_FRAME = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
# first-order constant in |DuP + (DuP)^T| <= C s eta for a frame of quality eta
SYM_QUALITY_CONSTANT = 4.0


def frame_quality(d1, d2):
    """Orthonormality defect ``max(| |d1|-1 |, | |d2|-1 |, |d1.d2|)`` per row."""
    d1 = np.atleast_2d(d1)
    d2 = np.atleast_2d(d2)
    return np.max(
        np.stack(
            [
                np.abs(np.linalg.norm(d1, axis=1) - 1.0),
                np.abs(np.linalg.norm(d2, axis=1) - 1.0),
                np.abs(np.sum(d1 * d2, axis=1)),
            ]
        ),
        axis=0,
    )


def frame_to_rotation(d1, d2, tol=1e-9):
    """Rotation ``P`` with ``P^T d1 = (0, 1, 0)`` and ``P^T d2 = (-1, 0, 0)``.

    The inputs are orthonormalized first, so the result is a proper rotation
    to machine precision even for slightly defective frames.  Works on
    stacked inputs of shape (N, 3).

    Raises
    ------
    NotOrthonormal
        If the frame defect exceeds ``tol``.
    """
    d1 = np.asarray(d1, dtype=float)
    d2 = np.asarray(d2, dtype=float)
    single = d1.ndim == 1
    d1 = np.atleast_2d(d1)
    d2 = np.atleast_2d(d2)
    if np.any(frame_quality(d1, d2) > tol):
        raise NotOrthonormal("gradient rows are not orthonormal within tolerance")
    a1 = d1 / np.linalg.norm(d1, axis=1, keepdims=True)
    a2 = d2 - np.sum(a1 * d2, axis=1, keepdims=True) * a1
    a2 /= np.linalg.norm(a2, axis=1, keepdims=True)
    A = np.stack([a1, a2, np.cross(a1, a2)], axis=-1)
    P = A @ TARGET_FRAME.T
    return P[0] if single else P


def frame_lipschitz(n_trials=1000, delta=1e-7, rng=None):
    """Largest observed ``|P(d + delta) - P(d)| / |delta|`` over random frames."""
    rng = rng if isinstance(rng, np.random.Generator) else substream(rng or 0, "frame-lipschitz")
    Q = _ScipyRotation.random(n_trials, random_state=rng).as_matrix()
    d1, d2 = Q[:, :, 0], Q[:, :, 1]
    e1 = rng.normal(size=d1.shape)
    e2 = rng.normal(size=d2.shape)
    scale = delta / np.sqrt(np.sum(e1 * e1 + e2 * e2, axis=1, keepdims=True))
    P0 = frame_to_rotation(d1, d2)
    P1 = frame_to_rotation(d1 + scale * e1, d2 + scale * e2, tol=10 * delta)
    return float(np.max(np.linalg.norm(P1 - P0, axis=(1, 2)) / delta))


@dataclass
class OrthoSample:
    value: np.ndarray
    d1: np.ndarray
    d2: np.ndarray
    quality: np.ndarray


class OrthoMap(abc.ABC):
    """Map on the unit cube ``[0, 1]^3`` with (nearly) orthonormal gradient rows.

    Attributes
    ----------
    sup_norm : float
        Bound on ``|value|`` over the cube.
    quality : float
        Declared bound on the orthonormality defect of the gradient rows.
    """

    sup_norm = float("nan")
    quality = 0.0
    zero_boundary = False

    @abc.abstractmethod
    def __call__(self, Y):
        """Evaluate at points ``Y`` of the unit cube; returns an ``OrthoSample``."""


class SyntheticFrameMap(OrthoMap):
    """Exact test double: piecewise-affine map with random orthonormal frames.

    The unit cube is split into ``cells**3`` subcubes; on each one the first
    two components are ``d_i . (y - center)`` for rows ``d1, d2`` of a random
    rotation.  The gradient rows are exactly orthonormal, but the map is
    discontinuous and does not vanish on the boundary, so it exercises the
    algebra only.
    """

    zero_boundary = False

    def __init__(self, cells=4, seed=0):
        self.cells = int(cells)
        rng = substream(seed, "synthetic-frames")
        Q = _ScipyRotation.random(self.cells ** 3, random_state=rng).as_matrix()
        self._d1 = Q[:, 0, :].copy()
        self._d2 = Q[:, 1, :].copy()
        self.sup_norm = math.sqrt(3.0) / (2.0 * self.cells)
        self.quality = float(np.max(frame_quality(self._d1, self._d2)))

    def _cell(self, Y):
        idx = np.clip(np.floor(Y * self.cells).astype(np.int64), 0, self.cells - 1)
        flat = (idx[:, 0] * self.cells + idx[:, 1]) * self.cells + idx[:, 2]
        centers = (idx + 0.5) / self.cells
        return flat, centers

    def __call__(self, Y):
        Y = np.atleast_2d(Y)
        flat, centers = self._cell(Y)
        d1, d2 = self._d1[flat], self._d2[flat]
        w = Y - centers
        value = np.column_stack([np.sum(d1 * w, axis=1), np.sum(d2 * w, axis=1), np.zeros(len(Y))])
        return OrthoSample(value, d1, d2, frame_quality(d1, d2))


class TabulatedOrthoMap(OrthoMap):
    """Adapter for a user-supplied map given as samples on the unit cube.

    Evaluation uses the nearest tabulated sample.  ``quality`` and
    ``sup_norm`` are measured from the table.
    """

    columns = ["x1", "x2", "x3", "v1", "v2", "d1x", "d1y", "d1z", "d2x", "d2y", "d2z"]

    def __init__(self, points, values, d1, d2, boundary_tol=1e-9):
        self.points = np.asarray(points, dtype=float)
        self.values = np.asarray(values, dtype=float)
        self.d1 = np.asarray(d1, dtype=float)
        self.d2 = np.asarray(d2, dtype=float)
        if np.any(self.points < -boundary_tol) or np.any(self.points > 1 + boundary_tol):
            raise OutOfDomain("tabulated samples must lie in the unit cube")
        self._tree = cKDTree(self.points)
        self._q = frame_quality(self.d1, self.d2)
        self.quality = float(np.max(self._q))
        self.sup_norm = float(np.max(np.linalg.norm(self.values, axis=1)))
        on_boundary = np.any((self.points <= boundary_tol) | (self.points >= 1 - boundary_tol), axis=1)
        self.boundary_max = float(np.max(np.linalg.norm(self.values[on_boundary], axis=1))) if np.any(on_boundary) else float("nan")
        self.zero_boundary = bool(np.any(on_boundary)) and self.boundary_max <= 1e-9

    @classmethod
    def from_csv(cls, source):
        """Read ``x1,x2,x3,v1,v2,d1x,d1y,d1z,d2x,d2y,d2z`` rows (path or file object)."""
        if isinstance(source, (str, bytes)) and not isinstance(source, io.IOBase):
            with open(source, newline="") as fh:
                return cls.from_csv(fh)
        reader = csv.DictReader(source)
        missing = [c for c in cls.columns if c not in (reader.fieldnames or [])]
        if missing:
            raise ValueError(f"missing columns {missing}")
        rows = np.array([[float(r[c]) for c in cls.columns] for r in reader])
        return cls(rows[:, 0:3], rows[:, 3:5], rows[:, 5:8], rows[:, 8:11])

    def validate(self):
        return {
            "samples": len(self.points),
            "ortho_quality_eta": self.quality,
            "sup_norm": self.sup_norm,
            "boundary_max": self.boundary_max,
            "zero_boundary": self.zero_boundary,
        }

    def __call__(self, Y):
        Y = np.atleast_2d(Y)
        _, idx = self._tree.query(Y)
        v = self.values[idx]
        value = np.column_stack([v, np.zeros(len(Y))])
        return OrthoSample(value, self.d1[idx], self.d2[idx], self._q[idx])


class ScaledMap(OrthoMap):
    """The map ``x -> edge * m((x - lo) / edge)`` on the cube ``lo + [0, edge]^3``.

    Gradients are unchanged by the chain rule; values and the sup bound
    scale with ``edge``.
    """

    def __init__(self, ortho_map, lo, edge):
        self.base = ortho_map
        self.lo = np.asarray(lo, dtype=float)
        self.edge = float(edge)
        self.sup_norm = ortho_map.sup_norm * self.edge
        self.quality = ortho_map.quality
        self.zero_boundary = ortho_map.zero_boundary

    def __call__(self, X):
        s = self.base((np.atleast_2d(X) - self.lo) / self.edge)
        return OrthoSample(self.edge * s.value, s.d1, s.d2, s.quality)


def scale_translate_map(ortho_map, cube):
    """Place ``ortho_map`` on an axis-aligned cube (a ``Box`` with equal sides)."""
    sides = cube.sides
    if not np.allclose(sides, sides[0], rtol=1e-12):
        raise ValueError("target must be a cube")
    return ScaledMap(ortho_map, cube.lo, float(sides[0]))


class RotationalCounterexample(TransformerMixin, BaseEstimator):
    """Rotation-valued coefficient field and witness sequence.

    Parameters
    ----------
    ortho_map : OrthoMap
        Map on the unit cube with orthonormal gradient rows.
    n, q, domain, mode, n_parts :
        As for ``UnimodularCounterexample``.
    edge_scale : float
        Fraction of the admissible edge ``|Omega_n|^{1/q} / n``.
    sym_tol : float or None
        When set, fitting fails if the map quality cannot guarantee
        ``|DuP + (DuP)^T| <= sym_tol``.
    """

    def __init__(
        self,
        ortho_map=None,
        n=1,
        q=2.0,
        domain=((0.0, 0.0, 0.0), (1.0, 1.0, 1.0)),
        mode="single",
        n_parts=None,
        edge_scale=1.0,
        sym_tol=None,
        quality_tol=1e-6,
    ):
        self.ortho_map = ortho_map
        self.n = n
        self.q = q
        self.domain = domain
        self.mode = mode
        self.n_parts = n_parts
        self.edge_scale = edge_scale
        self.sym_tol = sym_tol
        self.quality_tol = quality_tol

    def fit(self, X=None, y=None):
        if not (1.0 < float(self.q) < math.inf):
            raise ValueError("q must lie in (1, inf)")
        if not (isinstance(self.n, (int, np.integer)) and self.n >= 1):
            raise ValueError("n must be a positive integer")
        self.map_ = self.ortho_map if self.ortho_map is not None else SyntheticFrameMap()
        q = float(self.q)
        self.decomposition_ = make_decomposition(Box(*self.domain), self.mode, self.n_parts or self.n)
        self.coverings_ = []
        self.levels_ = []
        for idx, box in enumerate(self.decomposition_.parts):
            level = self.n if self.mode == "single" else idx + 1
            bound = self.edge_scale * box.volume ** (1.0 / q) / level
            self.coverings_.append(axis_grid_cover(box, bound))
            self.levels_.append(level)
        eta = float(self.map_.quality)
        self.sym_budget_ = SYM_QUALITY_CONSTANT * self.scale() * eta
        if self.sym_tol is not None and self.sym_budget_ > self.sym_tol:
            raise QualityBudgetExceeded(
                f"map quality {eta:.2e} allows only |sym| <= {self.sym_budget_:.2e} > {self.sym_tol:.2e}"
            )
        return self

    def _part_index(self, n=None):
        n = self.n if n is None else n
        return 0 if self.mode == "single" else n - 1

    def scale(self, n=None):
        box = self.decomposition_.parts[self._part_index(n)]
        return box.volume ** (-1.0 / float(self.q))

    def evaluate(self, X, n=None):
        check_is_fitted(self, "coverings_")
        X = _as_points(X)
        region = self.decomposition_.region
        if not np.all(region.contains(X, tol=1e-12 * float(np.max(region.sides)))):
            raise OutOfDomain("point outside the domain")
        target = self._part_index(n)
        s = self.scale(n)
        N = len(X)
        part = self.decomposition_.locate_part(X)
        u = np.zeros((N, 3))
        Du = np.zeros((N, 3, 3))
        P = np.broadcast_to(np.eye(3), (N, 3, 3)).copy()
        tag = np.full(N, Tag.RESIDUAL, dtype=np.int64)
        tol = max(self.quality_tol, 10.0 * float(self.map_.quality))
        for idx, cov in enumerate(self.coverings_):
            sel = np.flatnonzero(part == idx)
            if len(sel) == 0:
                continue
            level, ijk = cov.locate(X[sel])
            hit = level != RESIDUAL
            hs = sel[hit]
            if len(hs) == 0:
                continue
            e = cov.edge(0)
            lo = cov.origin + e * ijk[hit]
            Y = np.clip((X[hs] - lo) / e, 0.0, 1.0)
            smp = self.map_(Y)
            P[hs] = frame_to_rotation(smp.d1, smp.d2, tol=tol)
            tag[hs] = Tag.INTERIOR
            if idx == target:
                u[hs] = s * e * smp.value
                Du[hs, 0] = s * smp.d1
                Du[hs, 1] = s * smp.d2
        return FieldBundle(u, Du, P, Du @ P, tag, part)

    def coefficient(self, X):
        b = self.evaluate(X)
        return b.P, b.tag

    def transform(self, X):
        b = self.evaluate(X)
        N = len(b.u)
        return np.hstack([b.u, b.Du.reshape(N, 9), b.P.reshape(N, 9)])

    def sup_norm_bound(self, n=None):
        """``|Omega_n|^{-1/q} c e`` with ``e`` the grid edge; at most ``c / n``."""
        cov = self.coverings_[self._part_index(n)]
        return self.scale(n) * self.map_.sup_norm * cov.edge(0)

    def gradient_norm_bounds(self, n=None):
        q = float(self.q)
        idx = self._part_index(n)
        cov = self.coverings_[idx]
        box = self.decomposition_.parts[idx]
        eta = float(self.map_.quality)
        frac_lo = 1.0 - cov.residual_measure_bound / box.volume
        return 2.0 * frac_lo * (1.0 - eta) ** q, 2.0 * (1.0 + eta) ** q


@dataclass
class PipelineResult:
    model: RotationalCounterexample
    record: object

    def witness(self, X):
        return self.model.evaluate(X).u

    def coefficient(self, X):
        return self.model.coefficient(X)


def rotational_pipeline(ortho_map, n, q=2.0, seed=0, n_samples=100_000, n_sup_samples=200_000, **params):
    """Build the rotation-valued construction at level ``n`` and certify its claims."""
    model = RotationalCounterexample(ortho_map=ortho_map, n=n, q=q, **params).fit()
    rng = substream(seed, f"sampling/rotational/n={n}/q={q}")
    box = model.decomposition_.parts[model._part_index()]
    b = model.evaluate(box.sample(n_samples, rng))
    inside = b.tag == Tag.INTERIOR
    sym = float(np.max(b.sym_residual[inside])) if np.any(inside) else float("nan")
    Pi = b.P[inside]
    so3 = float(
        max(
            np.max(np.abs(np.einsum("nji,njk->nik", Pi, Pi) - np.eye(3))),
            np.max(np.abs(np.linalg.det(Pi) - 1.0)),
        )
    ) if len(Pi) else float("nan")
    bs = model.evaluate(box.sample(n_sup_samples, rng))
    rows = np.linalg.norm(bs.Du, axis=2) ** float(q)
    vals = rows.sum(axis=1) * box.volume
    lower, upper = model.gradient_norm_bounds()
    record = VerificationRecord(
        n=int(n),
        q=float(q),
        sym_residual_max=sym,
        norm_q_pow_q_lower=lower,
        norm_q_pow_q_upper=upper,
        sup_norm_bound=model.map_.sup_norm / n,
        sup_norm_observed=float(np.max(np.linalg.norm(bs.u, axis=1))),
        covered_fraction=1.0 - model.coverings_[model._part_index()].residual_measure_bound / box.volume,
        seed=int(seed),
        norm_q_pow_q_mc=float(vals.mean()),
        norm_q_pow_q_sigma=float(vals.std(ddof=1) / math.sqrt(len(vals))),
        sup_norm_analytic=model.sup_norm_bound(),
        interior_samples=int(np.sum(inside)),
        interior_fraction=float(np.mean(inside)),
        det_residual_max=float(np.max(np.abs(np.linalg.det(Pi) - 1.0))) if len(Pi) else float("nan"),
        op_norm_max=float(np.max(np.linalg.norm(Pi, ord=2, axis=(1, 2)))) if len(Pi) else float("nan"),
        op_norm_bound=1.0,
        extra={
            "ortho_quality_eta": float(model.map_.quality),
            "so3_residual_max": so3,
            "sym_budget": model.sym_budget_,
            "zero_boundary": bool(model.map_.zero_boundary),
        },
    )
    return PipelineResult(model, record)


def verify_rotational(n_list, q=2.0, seed=0, ortho_map=None, **kwargs):
    ortho_map = ortho_map if ortho_map is not None else SyntheticFrameMap(seed=seed)
    records = [rotational_pipeline(ortho_map, int(n), q, seed, **kwargs).record for n in n_list]
    eta = float(ortho_map.quality)
    report = VerificationReport(records, eps=0.0, kind="rotational", meta={"seed": int(seed), "ortho_quality_eta": eta})
    return report


__all__ = [
    "OrthoMap",
    "OrthoSample",
    "PipelineResult",
    "RotationalCounterexample",
    "ScaledMap",
    "SyntheticFrameMap",
    "TabulatedOrthoMap",
    "frame_lipschitz",
    "frame_quality",
    "frame_to_rotation",
    "rotational_pipeline",
    "scale_translate_map",
    "verify_rotational",
]
