"""Recovery-sequence building blocks: laminates, cutoffs and the exact corrector.

Horizontal oscillations run on the scale ``eps^2 / k`` (or ``eps / k`` for the
counterexample field) and vertical structure repeats on every ``eps``-slab.
All fields are sampled at cell centres so values stay exactly in the set of
laminate points, scaled by cutoffs in [0, 1].
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .convexify import PairwiseSplit
from .grid import Box, GridGeometry, VectorField, horizontal_divergence, is_in_U0

# max |S'| of the quintic smoothstep
SMOOTHSTEP_SLOPE = 15.0 / 8.0


class DegeneratePairError(ValueError):
    """The two laminate values coincide."""


class CutoffInfeasibleError(ValueError):
    """The requested cutoff ramp does not fit in its box; refine eps."""


class EmptySlabWarning(UserWarning):
    """The target interval J contains no full eps-slab."""


def smoothstep(t):
    """Quintic ramp ``t^3 (10 - 15 t + 6 t^2)`` clipped to [0, 1]; C^2 at both ends."""
    t = np.clip(np.asarray(t, dtype=float), 0.0, 1.0)
    return t * t * t * (10.0 - 15.0 * t + 6.0 * t * t)


def smoothstep_derivative(t):
    t = np.asarray(t, dtype=float)
    inside = (t > 0) & (t < 1)
    return np.where(inside, 30.0 * t * t * (1 - t) * (1 - t), 0.0)


@dataclass(frozen=True)
class CutoffProfile:
    """Distance-based cutoff on a box: ``S((d - offset) / width)``.

    ``d`` is the distance from a point to the complement of the box along the
    nearest axis, so the profile is 0 within ``offset`` of the boundary and 1
    at depth ``offset + width`` and beyond.

    Attributes:
        kind: "vertical" (profile in the slab variable) or "horizontal".
        lo, hi: box corners.
        width: ramp width.
        offset: zero band next to the boundary.
    """

    kind: str
    lo: tuple[float, ...]
    hi: tuple[float, ...]
    width: float
    offset: float = 0.0

    def depth(self, coords) -> np.ndarray:
        c = np.asarray(coords, dtype=float)
        if c.ndim == 0 or len(self.lo) == 1 and c.shape[-1:] != (1,):
            c = c[..., None]
        lo = np.asarray(self.lo)
        hi = np.asarray(self.hi)
        return np.min(np.minimum(c - lo, hi - c), axis=-1)

    def __call__(self, coords) -> np.ndarray:
        d = self.depth(coords)
        if self.width <= 0:
            return np.where(d > self.offset, 1.0, 0.0)
        return smoothstep((d - self.offset) / self.width)

    @property
    def max_gradient(self) -> float:
        return SMOOTHSTEP_SLOPE / self.width if self.width > 0 else math.inf

    @property
    def plateau(self) -> tuple[tuple[float, ...], tuple[float, ...]]:
        m = self.offset + self.width
        return tuple(a + m for a in self.lo), tuple(b - m for b in self.hi)


def slab_cutoff(interval: tuple[float, float], width: float) -> CutoffProfile:
    """``psi``: 1 on ``I^[2w]``, 0 outside ``I^[w]``; used in the slab variable."""
    return CutoffProfile("vertical", (interval[0],), (interval[1],), width, offset=width)


@dataclass(frozen=True)
class TwoPointProfile:
    """Periodic profile with period ``1/k``: ``zeta_a`` on ``(0, gamma_a/k]``, ``zeta_b`` on the rest."""

    zeta_a: np.ndarray
    zeta_b: np.ndarray
    gamma_a: float
    k: int

    def phase(self, t) -> np.ndarray:
        s = self.k * np.asarray(t, dtype=float)
        return s - np.floor(s)

    def selects_a(self, t) -> np.ndarray:
        s = self.phase(t)
        return (s > 0) & (s <= self.gamma_a)

    def __call__(self, t) -> np.ndarray:
        a = self.selects_a(t)[..., None]
        return np.where(a, self.zeta_a, self.zeta_b)

    def mean(self) -> np.ndarray:
        return self.gamma_a * self.zeta_a + (1 - self.gamma_a) * self.zeta_b


def two_point_profile(zeta_a, zeta_b, gamma_a: float, k: int) -> TwoPointProfile:
    """Build ``w_k``; requires ``0 < gamma_a < 1`` and ``k >= 1``."""
    if not 0 < gamma_a < 1:
        raise ValueError("gamma_a must lie in (0, 1)")
    if int(k) != k or k < 1:
        raise ValueError("k must be a positive integer")
    return TwoPointProfile(np.asarray(zeta_a, dtype=float), np.asarray(zeta_b, dtype=float), float(gamma_a), int(k))


def zeta_perp(z1, z2) -> np.ndarray:
    """Unit vector orthogonal to ``z1 - z2``: Gram-Schmidt of the first non-parallel basis vector."""
    d = np.asarray(z1, dtype=float) - np.asarray(z2, dtype=float)
    nd = np.linalg.norm(d)
    if nd == 0:
        raise DegeneratePairError("laminate values coincide")
    d = d / nd
    for i in range(len(d)):
        e = np.zeros(len(d))
        e[i] = 1.0
        v = e - (e @ d) * d
        nv = np.linalg.norm(v)
        if nv > 1e-12:
            return v / nv
    raise DegeneratePairError("no perpendicular direction")  # unreachable for N >= 2


def slab_variable(geom: GridGeometry, eps: float) -> tuple[np.ndarray, np.ndarray]:
    """Slab index ``floor(x_N / eps)`` and position ``x_N / eps - index`` at cell centres."""
    q = geom.centers(geom.dims - 1) / eps
    z = np.floor(q)
    return z.astype(int), q - z


def _vertical_shape(geom: GridGeometry, a: np.ndarray) -> np.ndarray:
    return a.reshape((1,) * (geom.dims - 1) + (-1,))


def ub1_field(zeta1, zeta2, gamma1: float, interval: tuple[float, float], eps: float, k: int,
              geom: GridGeometry, cutoff_width: float | None = None) -> VectorField:
    """Two-value laminate ``psi(x_N/eps) w_k((x'/eps^2, x_N/eps) . zeta_perp)``.

    Args:
        zeta1, zeta2: laminate values with distinct last components and
            ``gamma1 zeta1 + (1 - gamma1) zeta2 = 0``.
        gamma1: volume fraction of ``zeta1``.
        interval: ``I`` inside (0, 1), in the slab variable.
        eps: thickness parameter.
        k: oscillation count.
        geom: grid.
        cutoff_width: ramp width of ``psi`` in the slab variable; default ``eps``.
    """
    z1 = np.asarray(zeta1, dtype=float)
    z2 = np.asarray(zeta2, dtype=float)
    if np.array_equal(z1, z2):
        raise DegeneratePairError("laminate values coincide")
    if z1[-1] == z2[-1]:
        raise ValueError("laminate values must differ in the last component")
    scale = 1.0 + max(np.abs(z1).max(), np.abs(z2).max())
    if np.abs(gamma1 * z1 + (1 - gamma1) * z2).max() > 1e-12 * scale:
        raise ValueError("laminate values must average to zero")
    a, b = interval
    if not 0 <= a < b <= 1:
        raise ValueError("interval must lie in (0, 1)")
    w = eps if cutoff_width is None else float(cutoff_width)
    prof = two_point_profile(z1, z2, gamma1, k)
    zp = zeta_perp(z1, z2)
    N = geom.dims
    xs = geom.mesh()
    arg = xs[N - 1] * (zp[N - 1] / eps)
    for d in range(N - 1):
        if zp[d] != 0:
            arg = arg + xs[d] * (zp[d] / eps ** 2)
    arg = np.broadcast_to(arg, geom.resolution)
    _, t = slab_variable(geom, eps)
    psi = _vertical_shape(geom, slab_cutoff((a, b), w)(t))
    vals = prof(arg) * psi[..., None]
    return VectorField(geom, vals, eps)


@dataclass
class LaminatePlan:
    """Everything needed to synthesise the multi-point laminate on one slab range.

    Attributes:
        points, weights: decomposition ``xi_j, theta_j`` (barycentre 0).
        alpha, beta, bars: pair coefficients and hyperplane points.
        J: target interval of ``x_N``.
        eps, k: thickness and oscillation count.
        cutoff_width: vertical ramp width in the slab variable (default eps).
        intervals: ``[((i, j), (a, b)), ...]`` partition of (0, 1), lexicographic.
    """

    points: np.ndarray
    weights: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    bars: np.ndarray
    J: tuple[float, float]
    eps: float
    k: int
    cutoff_width: float | None = None
    intervals: list = field(default_factory=list)

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        self.weights = np.asarray(self.weights, dtype=float)
        self.alpha = np.asarray(self.alpha, dtype=float)
        self.beta = np.asarray(self.beta, dtype=float)
        self.bars = np.asarray(self.bars, dtype=float)
        if not self.eps > 0 or self.k < 1:
            raise ValueError("need eps > 0 and k >= 1")
        lo, hi = self.J
        if not 0 <= lo < hi <= 1:
            raise ValueError("J must lie in (0, 1)")
        if self.cutoff_width is None:
            self.cutoff_width = self.eps
        if not self.intervals:
            n = len(self.weights)
            c = 0.0
            ivs = []
            for i in range(n):
                for j in range(i, n):
                    if self.alpha[i, j] > 0:
                        ivs.append(((i, j), (c, c + self.alpha[i, j])))
                        c += self.alpha[i, j]
            if ivs:
                (ij, (a, _)) = ivs[-1]
                ivs[-1] = (ij, (a, 1.0))
            self.intervals = ivs

    @classmethod
    def from_split(cls, split: PairwiseSplit, J, eps: float, k: int, cutoff_width: float | None = None):
        if np.abs(split.xi).max() > 1e-12 * (1 + np.abs(split.points).max()):
            raise ValueError("plan expects a decomposition of the origin; shift the points first")
        return cls(split.points, split.weights, split.alpha, split.beta, split.bars, tuple(J), eps, int(k),
                   cutoff_width)

    def to_dict(self) -> dict:
        return {"points": self.points.tolist(), "weights": self.weights.tolist(), "alpha": self.alpha.tolist(),
                "beta": self.beta.tolist(), "bars": self.bars.tolist(), "J": list(self.J), "eps": self.eps,
                "k": self.k, "cutoff_width": self.cutoff_width,
                "intervals": [{"pair": list(ij), "interval": list(ab)} for ij, ab in self.intervals]}

    @classmethod
    def from_dict(cls, d: dict) -> "LaminatePlan":
        ivs = [(tuple(e["pair"]), tuple(e["interval"])) for e in d.get("intervals", [])]
        return cls(d["points"], d["weights"], d["alpha"], d["beta"], d["bars"], tuple(d["J"]), d["eps"], d["k"],
                   d.get("cutoff_width"), ivs)

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2))
        return path


def slab_union_mask(geom: GridGeometry, J: tuple[float, float], eps: float) -> np.ndarray:
    """Cells in ``K_n``: slabs ``eps z + eps [0, 1]`` contained in the open interval J."""
    z, _ = slab_variable(geom, eps)
    lo = eps * z
    inside = (lo > J[0]) & (lo + eps < J[1])
    return inside


def ub2_assemble(plan: LaminatePlan, geom: GridGeometry) -> tuple[VectorField, VectorField]:
    """Multi-point laminate: ``y`` piecewise constant on slabs, ``z`` the sum of pair laminates.

    Both parts vanish outside ``K_n``. Emits :class:`EmptySlabWarning` and
    returns zero fields when J holds no full slab.
    """
    eps = plan.eps
    N = geom.dims
    y = np.zeros(geom.resolution + (N,))
    z = np.zeros_like(y)
    Kmask = slab_union_mask(geom, plan.J, eps)
    if not np.any(Kmask):
        warnings.warn(f"J={plan.J} contains no full slab at eps={eps}", EmptySlabWarning, stacklevel=2)
        return VectorField(geom, y, eps), VectorField(geom, z, eps)
    _, t = slab_variable(geom, eps)
    for (i, j), (a, b) in plan.intervals:
        bar = plan.bars[i, j]
        sel = Kmask & (t >= a) & (t < b)
        if not np.any(sel):
            continue
        y[..., sel, :] = bar
        if i != j:
            zi = plan.points[i] - bar
            zj = plan.points[j] - bar
            piece = ub1_field(zi, zj, plan.beta[j, i], (a, b), eps, plan.k, geom, plan.cutoff_width)
            z[..., sel, :] += piece.values[..., sel, :]
    return VectorField(geom, y, eps), VectorField(geom, z, eps)


def corrector(u: VectorField, eps: float | None = None, tol: float = 0.0) -> VectorField:
    """Replace ``u^N`` so that the discrete ``div_eps`` vanishes.

    ``u~^N[j + 1] = u~^N[j] - eps h_N (div' u')[j]``, starting from ``u^N`` on
    the bottom layer. The recursion is a sequential cumulative sum, so each
    forward difference reproduces the increment up to one rounding. The
    top layer (backward stencil, no interior face) is not cancelled.

    Raises:
        ValueError: if ``u`` fails the U_0 test at ``tol``.
    """
    eps = u.epsilon if eps is None else float(eps)
    if not is_in_U0(u, tol):
        raise ValueError("corrector expects D+_N u^N = 0 within tolerance")
    hN = u.geom.spacing[-1]
    d = horizontal_divergence(u)
    steps = np.concatenate([u.values[..., :1, -1], -eps * hN * d[..., :-1]], axis=-1)
    out = u.values.copy()
    out[..., -1] = np.cumsum(steps, axis=-1)
    return VectorField(u.geom, out, eps)


def horizontal_cutoff_profile(box, width: float) -> CutoffProfile:
    lo, hi = _box_corners(box)
    return CutoffProfile("horizontal", lo, hi, float(width), 0.0)


def _box_corners(box) -> tuple[tuple[float, ...], tuple[float, ...]]:
    if isinstance(box, Box):
        return box.lo, box.hi
    lo = tuple(float(a) for a, _ in box)
    hi = tuple(float(b) for _, b in box)
    return lo, hi


def horizontal_ramp_width(K: float, norm: float, eps: float) -> float:
    """Ramp width giving ``|grad eta| <= eps^{-1/2} / (K (norm + 1))`` for the quintic ramp."""
    return SMOOTHSTEP_SLOPE * K * (norm + 1.0) * math.sqrt(eps)


def horizontal_cutoff(u: VectorField, box, K: float, eps: float, target_norm: float | None = None) -> VectorField:
    """Multiply ``u`` by ``eta(x')``, supported in ``box`` with a ramp of width ``W``.

    ``W = (15/8) K (s + 1) sqrt(eps)`` where ``s`` is ``target_norm`` if given,
    else ``sup |u|``; then ``|grad eta| <= eps^{-1/2} / (K (s + 1))``.

    Raises:
        CutoffInfeasibleError: when ``2 W`` exceeds the shortest box side.
        ValueError: when the box is not inside omega.
    """
    lo, hi = _box_corners(box)
    g = u.geom
    if len(lo) != g.dims - 1:
        raise ValueError("box must live in the horizontal variables")
    for a, (olo, ohi) in enumerate(g.omega_box):
        if lo[a] < olo - 1e-12 or hi[a] > ohi + 1e-12:
            raise ValueError("cutoff box must lie inside omega")
    s = u.sup_norm() if target_norm is None else float(target_norm)
    W = horizontal_ramp_width(K, s, eps)
    if 2 * W >= min(b - a for a, b in zip(lo, hi)):
        raise CutoffInfeasibleError(f"ramp width {W:.4g} does not fit in box {lo}-{hi} at eps={eps}")
    eta = horizontal_eta(g, box, W)
    return u.scaled(eta)


def horizontal_eta(geom: GridGeometry, box, width: float) -> np.ndarray:
    """``eta`` sampled on the grid (constant in ``x_N``), shape ``geom.resolution``."""
    prof = horizontal_cutoff_profile(box, width)
    xs = geom.mesh()
    horiz = np.stack(np.broadcast_arrays(*xs[:-1]), axis=-1)
    eta = prof(horiz)
    return np.broadcast_to(eta, geom.resolution).copy()


@dataclass
class FractionReport:
    """Fraction of cells within ``tol`` of each value, plus the remainder."""

    values: np.ndarray
    fractions: np.ndarray
    remainder: float

    def as_dict(self) -> dict:
        return {"values": self.values.tolist(), "fractions": self.fractions.tolist(), "remainder": self.remainder}


def volume_fractions(u: VectorField | np.ndarray, values: Sequence[Sequence[float]], tol: float = 1e-12,
                     mask: np.ndarray | None = None) -> FractionReport:
    """Cell fractions near each value; ``mask`` restricts the counted cells.

    Raises:
        ValueError: if two values are within ``2 tol`` of each other.
    """
    vals = np.atleast_2d(np.asarray(values, dtype=float))
    for i in range(len(vals)):
        for j in range(i + 1, len(vals)):
            if np.linalg.norm(vals[i] - vals[j]) <= 2 * tol:
                raise ValueError("values must be separated by more than 2*tol")
    arr = u.values if isinstance(u, VectorField) else np.asarray(u, dtype=float)
    flat = arr.reshape(-1, arr.shape[-1])
    if mask is not None:
        flat = flat[np.asarray(mask).reshape(-1)]
    n = len(flat)
    fr = np.array([np.count_nonzero(np.linalg.norm(flat - v, axis=1) <= tol) / n for v in vals])
    return FractionReport(vals, fr, float(1.0 - fr.sum()))


# wells used by the counterexample construction
EX2_UPPER = np.array([0.0, 1.0])
EX2_LOWER = np.array([0.0, -1.0])


def ex2_cutoff(width: float) -> CutoffProfile:
    """``phi_n``: 1 on ``[w, 1 - w]``, supported in (0, 1)."""
    return CutoffProfile("vertical", (0.0,), (1.0,), float(width), 0.0)


def ex2_sequence(eps: float, k: int, geom: GridGeometry, cutoff_width: float | None = None) -> VectorField:
    """``phi(2 x_2) w_k(x_1 / eps)`` on the lower half of the unit square, 0 above.

    ``w_k`` takes ``(0, 1)`` on ``(0, 1/(2k)]`` and ``(0, -1)`` on the other
    half period.
    """
    if geom.dims != 2:
        raise ValueError("the counterexample lives in two dimensions")
    w = eps if cutoff_width is None else float(cutoff_width)
    prof = two_point_profile(EX2_UPPER, EX2_LOWER, 0.5, k)
    x1, x2 = geom.mesh()
    phi = np.where(x2 < 0.5, ex2_cutoff(w)(2 * x2), 0.0)
    vals = prof(np.broadcast_to(x1 / eps, geom.resolution)) * phi[..., None]
    return VectorField(geom, vals, eps)


def ex2_divergence(eps: float, k: int, geom: GridGeometry, cutoff_width: float | None = None,
                   shift: float = 0.0) -> np.ndarray:
    """Closed form ``(2/eps) phi'(2 x_2) w_k^2(x_1/eps)`` at ``(x_1, x_2 + shift)``."""
    w = eps if cutoff_width is None else float(cutoff_width)
    prof = two_point_profile(EX2_UPPER, EX2_LOWER, 0.5, k)
    x1, x2 = geom.mesh()
    x2 = x2 + shift
    s = 2 * x2
    d = np.minimum(s, 1 - s)
    sign = np.where(s < 0.5, 1.0, -1.0)
    dphi = np.where((x2 > 0) & (x2 < 0.5), sign * smoothstep_derivative(d / w) / w, 0.0)
    w2 = prof(np.broadcast_to(x1 / eps, geom.resolution))[..., 1]
    return (2.0 / eps) * dphi * w2
