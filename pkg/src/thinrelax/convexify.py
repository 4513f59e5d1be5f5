"""Convex envelopes on lattices, Caratheodory decompositions and hyperplane splits.

The envelope of ``f`` is computed exactly for the sampled values: it is the
lower convex hull of the lifted point cloud ``{(mu, f(mu))}``. Each lower facet
is a simplex of lattice points together with its supporting affine function.
"""

from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import optimize
from scipy.spatial import ConvexHull

from .density import Density


DEFAULT_SPACING = 1.0 / 16


class EnvelopeError(RuntimeError):
    """Envelope construction failed (bad lattice, coercivity violation, hull error)."""


class OutOfRangeError(ValueError):
    """Query point outside the sampled lattice box."""


class InternalConsistencyError(RuntimeError):
    """An identity that must hold for valid input did not hold."""


def touching_radius(p: float, C: float, s: float) -> float:
    """Radius containing every touching point of the envelope at a point of norm ``s``.

    Let ``A(mu) = f**(xi) + b.(mu - xi)`` support ``f**`` at ``xi``. Using
    ``|mu|^p / C - C <= f <= C|mu|^p + C``:

    * testing ``A <= f`` at ``mu = xi + (s + 1) b / |b|`` gives
      ``|b| <= beta = [C (2s + 1)^p + 2C - s^p / C] / (s + 1)``;
    * at a touching point ``A(mu_j) = f(mu_j)``, so
      ``|mu_j|^p / C - C <= C s^p + C + beta (|mu_j| + s)``.

    The returned value is the positive root of
    ``r^p - C beta r - C (C s^p + 2C + beta s) = 0``, the largest ``r``
    compatible with the second bound.
    """
    beta = (C * (2 * s + 1) ** p + 2 * C - s ** p / C) / (s + 1)
    beta = max(beta, 0.0)
    a = C * beta
    c = C * (C * s ** p + 2 * C + beta * s)

    def g(r):
        return r ** p - a * r - c

    hi = 1.0
    while g(hi) < 0:
        hi *= 2.0
    return float(optimize.brentq(g, 0.0, hi, xtol=1e-12, rtol=1e-12))


@lru_cache(maxsize=64)
def caratheodory_constant(p: float, C: float) -> float:
    """``K = sup_s touching_radius(p, C, s) / (s + 1)``.

    The ratio tends to a finite limit as ``s`` grows (both sides scale like
    ``s``); the supremum is taken over a logarithmic grid of ``s`` up to 1e6
    and rounded up by 1%.
    """
    s_grid = np.concatenate([[0.0], np.logspace(-3, 6, 400)])
    ratios = [touching_radius(p, C, float(s)) / (s + 1.0) for s in s_grid]
    return float(max(ratios) * 1.01)


@dataclass
class ConvexEnvelope:
    """Lattice samples of ``f`` and ``f**`` on ``center + spacing * Z^N`` within a box.

    Attributes:
        center: lattice centre (the query point the envelope was built for).
        spacing: lattice step.
        n_half: lattice points per half-axis; the box is ``center +- n_half*spacing``.
        nodes: lattice points, shape ``(M, N)``, C-order over index offsets.
        f_values: ``f`` at the nodes.
        values: ``f**`` at the nodes.
        simplices: lower-facet vertex indices, shape ``(F, N + 1)``.
        grad, intercept: supporting affine function ``grad . mu + intercept`` per facet.
        K: Caratheodory constant used for the default radius.
    """

    center: np.ndarray
    spacing: float
    n_half: int
    nodes: np.ndarray
    f_values: np.ndarray
    values: np.ndarray
    simplices: np.ndarray
    grad: np.ndarray
    intercept: np.ndarray
    K: float
    density: Density | None = field(default=None, repr=False)
    _bary: np.ndarray | None = field(default=None, repr=False)

    @property
    def dims(self) -> int:
        return self.nodes.shape[1]

    @property
    def box_radius(self) -> float:
        return self.n_half * self.spacing

    @property
    def points_per_axis(self) -> int:
        return 2 * self.n_half + 1

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.points_per_axis,) * self.dims

    def grid_values(self) -> np.ndarray:
        """``f**`` reshaped to the lattice, axis order matching the coordinates."""
        return self.values.reshape(self.shape)

    def axis(self) -> np.ndarray:
        return self.spacing * np.arange(-self.n_half, self.n_half + 1)

    def in_box(self, point, slack: float = 1e-12) -> bool:
        d = np.abs(np.asarray(point, dtype=float) - self.center)
        return bool(np.all(d <= self.box_radius * (1 + slack) + slack))

    def node_index(self, point, tol: float = 1e-12) -> int | None:
        """Index of the lattice node at ``point``, or None."""
        off = (np.asarray(point, dtype=float) - self.center) / self.spacing
        r = np.round(off)
        if np.any(np.abs(off - r) > tol * max(1.0, np.abs(off).max())) or np.any(np.abs(r) > self.n_half):
            return None
        idx = (r + self.n_half).astype(int)
        return int(np.ravel_multi_index(tuple(idx), self.shape))

    @property
    def lower_vertices(self) -> np.ndarray:
        return np.unique(self.simplices)

    def barycentric_maps(self) -> np.ndarray:
        """Per facet, the inverse of ``[[v_0 ... v_N], [1 ... 1]]``, shape ``(F, N+1, N+1)``."""
        if self._bary is None:
            V = self.nodes[self.simplices]  # (F, N+1, N)
            A = np.concatenate([np.swapaxes(V, 1, 2), np.ones((len(V), 1, V.shape[1]))], axis=1)
            self._bary = np.linalg.inv(A)
        return self._bary

    def affine_values(self, points: np.ndarray) -> np.ndarray:
        """``A_F(mu)`` for every facet and point, shape ``(len(points), F)``."""
        pts = np.atleast_2d(points)
        return pts @ self.grad.T + self.intercept

    def evaluate(self, points, chunk: int = 2048) -> np.ndarray:
        """``f**`` at arbitrary points of the box as the max of facet affine functions."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.empty(len(pts))
        for s in range(0, len(pts), chunk):
            out[s:s + chunk] = self.affine_values(pts[s:s + chunk]).max(axis=1)
        return out

    def value_at(self, point) -> float:
        """``f**`` at a point; exact lattice value when the point is a node."""
        i = self.node_index(point)
        if i is not None:
            return float(self.values[i])
        if not self.in_box(point):
            raise OutOfRangeError(f"{point} outside the envelope box")
        return float(self.evaluate(point)[0])

    def lipschitz_near(self, point, radius: float) -> float:
        """Largest facet slope among facets with a vertex within ``radius`` of ``point``."""
        V = self.nodes[self.simplices]
        d = np.linalg.norm(V - np.asarray(point, dtype=float), axis=-1).min(axis=1)
        sel = d <= radius + self.spacing * math.sqrt(self.dims)
        if not np.any(sel):
            return float(np.linalg.norm(self.grad, axis=1).max())
        return float(np.linalg.norm(self.grad[sel], axis=1).max())

    def discretization_error(self, near=None, radius: float | None = None) -> float:
        """Estimate of how far the lattice envelope can sit above the continuum one.

        Between lattice nodes the affine pieces may exceed ``f``; the largest
        excess at facet centroids and edge midpoints is returned. With ``near``
        and ``radius`` only facets having a vertex in that ball are probed.
        """
        if self.density is None:
            return 0.0
        V = self.nodes[self.simplices]
        if near is not None:
            d = np.linalg.norm(V - np.asarray(near, dtype=float), axis=-1).min(axis=1)
            sel = d <= (radius if radius is not None else 1.0)
            V = V[sel]
            grad, icpt = self.grad[sel], self.intercept[sel]
        else:
            grad, icpt = self.grad, self.intercept
        if len(V) == 0:
            return 0.0
        probes = [V.mean(axis=1)]
        for a, b in itertools.combinations(range(V.shape[1]), 2):
            probes.append(0.5 * (V[:, a] + V[:, b]))
        worst = 0.0
        for P in probes:
            A = np.einsum("fi,fi->f", P, grad) + icpt
            worst = max(worst, float(np.max(A - self.density.evaluate(P))))
        return max(worst, 0.0)

    def to_csv(self, path: str | Path) -> Path:
        """Rows ``mu_1..mu_N, f, f**``."""
        path = Path(path)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"mu{j + 1}" for j in range(self.dims)] + ["f", "fss"])
            for mu, fv, ev in zip(self.nodes, self.f_values, self.values):
                w.writerow([repr(float(x)) for x in mu] + [repr(float(fv)), repr(float(ev))])
        return path


def _lattice(center: np.ndarray, spacing: float, n_half: int) -> tuple[np.ndarray, np.ndarray]:
    N = len(center)
    offs = np.arange(-n_half, n_half + 1)
    idx = np.stack(np.meshgrid(*([offs] * N), indexing="ij"), axis=-1).reshape(-1, N)
    return center + spacing * idx, idx


def build_envelope(f: Density, target=None, *, resolution: int | None = None, spacing: float | None = None,
                   radius: float | None = None, margin: float | None = None, x=None,
                   check_coercivity: bool = True, hull_tol: float = 1e-12) -> ConvexEnvelope:
    """Lower convex hull of ``f`` sampled on a lattice centred at ``target``.

    The lattice is ``target + spacing * {-n, ..., n}^N``, so the target is a
    node. Without an explicit ``radius`` the half-width is
    ``K (|target| + 1) + margin`` with ``K`` from :func:`caratheodory_constant`.

    Args:
        f: density; frozen at ``x`` if given.
        target: centre point; defaults to the origin.
        resolution: lattice points per axis (odd; an even value is bumped up).
        spacing: lattice step; takes precedence over ``resolution``. With
            neither given the step is ``DEFAULT_SPACING``.
        radius: half-width of the sampling box.
        margin: added to the default radius; defaults to 2 lattice steps
            (or 0.5 when only ``resolution`` is set).
        check_coercivity: reject samples that violate ``f >= |mu|^p/C - C``.
        hull_tol: threshold on the facet normal for the "lower" test.

    Raises:
        EnvelopeError: resolution < 3, coercivity violation, or hull failure.
    """
    g = f.at(x) if x is not None else f
    if target is None:
        if g.dims is None:
            raise EnvelopeError("target needed to fix the dimension")
        target = np.zeros(g.dims)
    xi = np.asarray(target, dtype=float).ravel()
    N = len(xi)
    if N > 4:
        raise EnvelopeError("hull construction is limited to N <= 4")
    K = caratheodory_constant(float(g.p), float(g.C))
    if resolution is not None and resolution < 3:
        raise EnvelopeError("need at least 3 lattice points per axis")
    if spacing is None and resolution is None:
        spacing = DEFAULT_SPACING
    if radius is None:
        extra = margin
        if extra is None:
            extra = 2 * spacing if spacing is not None else 0.5
        radius = K * (np.linalg.norm(xi) + 1.0) + extra
    if spacing is not None:
        n_half = int(math.ceil(radius / spacing - 1e-9))
    else:
        res = int(resolution)
        n_half = max((res - 1 + (res % 2 == 0)) // 2, 1)
        spacing = radius / n_half
    if n_half < 1:
        raise EnvelopeError("lattice needs at least 3 points per axis")
    nodes, _ = _lattice(xi, float(spacing), n_half)
    fv = np.asarray(g.evaluate(nodes), dtype=float)
    if not np.all(np.isfinite(fv)):
        raise EnvelopeError("density is not finite on the lattice")
    if check_coercivity:
        floor = np.linalg.norm(nodes, axis=1) ** g.p / g.C - g.C
        bad = fv < floor - 1e-9 * (1 + np.abs(floor))
        if np.any(bad):
            raise EnvelopeError(f"coercivity violated at {nodes[np.argmax(bad)]}; envelope may be -inf")
    # rescale heights so the hull sees comparable coordinate ranges
    span = float(fv.max() - fv.min())
    hscale = (radius / span) if span > 0 else 1.0
    pts = np.column_stack([nodes - xi, (fv - fv.min()) * hscale])
    if span == 0:
        simplices, grad, icpt = _flat_envelope(nodes, fv, n_half)
    else:
        try:
            hull = ConvexHull(pts, qhull_options="Qt Qbb Qc")
        except Exception as exc:  # qhull raises its own error type
            raise EnvelopeError(f"convex hull failed: {exc}") from exc
        lower = hull.equations[:, N] < -hull_tol
        simplices = hull.simplices[lower]
        simplices, grad, icpt = _facet_affine(nodes, fv, simplices)
    env = ConvexEnvelope(center=xi, spacing=float(spacing), n_half=n_half, nodes=nodes, f_values=fv,
                         values=np.empty_like(fv), simplices=simplices, grad=grad, intercept=icpt, K=K,
                         density=g)
    env.values = _node_envelope_values(env)
    return env


def _flat_envelope(nodes, fv, n_half):
    # constant density: the envelope is the constant itself
    N = nodes.shape[1]
    corner = np.zeros((1, N + 1), dtype=int)
    grad = np.zeros((1, N))
    return corner, grad, np.array([fv[0]])


def _facet_affine(nodes, fv, simplices):
    """Affine interpolants of ``f`` on each facet; drops degenerate simplices."""
    V = nodes[simplices]  # (F, N+1, N)
    E = V[:, 1:] - V[:, :1]
    det = np.abs(np.linalg.det(E))
    scale = np.linalg.norm(E, axis=2).prod(axis=1)
    keep = det > 1e-10 * np.maximum(scale, 1e-300)
    simplices = simplices[keep]
    V = V[keep]
    F = fv[simplices]
    A = np.concatenate([V, np.ones(V.shape[:2] + (1,))], axis=2)  # rows [v, 1]
    coef = np.linalg.solve(A, F[..., None])[..., 0]
    order = np.lexsort(np.sort(simplices, axis=1).T[::-1])
    simplices = np.sort(simplices, axis=1)[order]
    coef = coef[order]
    return simplices, coef[:, :-1], coef[:, -1]


def _node_envelope_values(env: ConvexEnvelope) -> np.ndarray:
    """``f**`` at every node.

    Lower-hull vertices keep ``f``. Any other node lies inside a facet that
    spans at least two lattice steps along some axis (a simplex inside one
    lattice cell contains no other nodes), so only those facets are scanned.
    """
    nodes, fv = env.nodes, env.f_values
    N = env.dims
    out = np.full(len(nodes), np.nan)
    verts = env.lower_vertices
    out[verts] = fv[verts]
    if len(env.simplices) == 1 and np.all(env.grad == 0):
        return np.minimum(np.full(len(nodes), env.intercept[0]), fv)
    idx = np.round((nodes - env.center) / env.spacing).astype(int) + env.n_half
    sidx = idx[env.simplices]  # (F, N+1, N)
    lo = sidx.min(axis=1)
    hi = sidx.max(axis=1)
    big = np.where((hi - lo).max(axis=1) >= 2)[0]
    bary = None
    if len(big):
        V = nodes[env.simplices[big]]
        A = np.concatenate([np.swapaxes(V, 1, 2), np.ones((len(V), 1, N + 1))], axis=1)
        bary = np.linalg.inv(A)
    shape = env.shape
    tol = 1e-9
    for t, fidx in enumerate(big):
        ranges = [np.arange(lo[fidx, a], hi[fidx, a] + 1) for a in range(N)]
        cand = np.stack(np.meshgrid(*ranges, indexing="ij"), axis=-1).reshape(-1, N)
        flat = np.ravel_multi_index(tuple(cand.T), shape)
        todo = np.isnan(out[flat])
        if not np.any(todo):
            continue
        flat = flat[todo]
        rhs = np.concatenate([nodes[flat], np.ones((len(flat), 1))], axis=1)
        lam = rhs @ bary[t].T
        inside = np.all(lam >= -tol, axis=1)
        if np.any(inside):
            vals = lam[inside] @ fv[env.simplices[fidx]]
            out[flat[inside]] = vals
    missing = np.isnan(out)
    if np.any(missing):
        out[missing] = env.evaluate(nodes[missing])
    return np.minimum(out, fv)


@dataclass
class CaratheodoryDecomposition:
    """``xi = sum theta_j xi_j`` with ``f**(xi)`` attained by ``sum theta_j f(xi_j)``."""

    xi: np.ndarray
    points: np.ndarray
    weights: np.ndarray
    f_values: np.ndarray
    envelope_value: float

    @property
    def m(self) -> int:
        return len(self.weights) - 1

    @property
    def combined_value(self) -> float:
        return float(self.weights @ self.f_values)

    def to_dict(self) -> dict:
        return {"xi": self.xi.tolist(), "points": self.points.tolist(), "weights": self.weights.tolist(),
                "f_values": self.f_values.tolist(), "envelope_value": self.envelope_value}

    def check(self, K: float | None = None, tol: float = 1e-10) -> list[str]:
        """Return the list of violated invariants (empty when valid)."""
        bad = []
        if abs(self.weights.sum() - 1) > tol:
            bad.append("weights do not sum to 1")
        if np.abs(self.weights @ self.points - self.xi).max() > tol * (1 + np.abs(self.points).max()):
            bad.append("barycentre differs from xi")
        if np.any(self.weights <= 0) or np.any(self.weights > 1 + tol):
            bad.append("weights outside (0, 1]")
        if self.m > 0:
            sv = np.linalg.svd(self.points[1:] - self.points[0], compute_uv=False)
            if sv.min() <= 1e-10 * max(1.0, sv.max()):
                bad.append("points are affinely dependent")
        if K is not None and np.any(np.linalg.norm(self.points, axis=1) > K * (np.linalg.norm(self.xi) + 1) + tol):
            bad.append("points exceed the K bound")
        return bad


def _affinely_independent(P: np.ndarray) -> bool:
    if len(P) <= 1:
        return True
    sv = np.linalg.svd(P[1:] - P[0], compute_uv=False)
    return bool(sv.min() > 1e-12 * max(1.0, sv.max()))


def _reduce_to_simplex(P: np.ndarray, xi: np.ndarray, tol: float) -> tuple[np.ndarray, np.ndarray]:
    """Smallest affinely independent subset of ``P`` whose hull contains ``xi``."""
    n = len(P)
    for size in range(1, n + 1):
        for sub in itertools.combinations(range(n), size):
            Q = P[list(sub)]
            if not _affinely_independent(Q):
                continue
            A = np.vstack([Q.T, np.ones(size)])
            b = np.append(xi, 1.0)
            lam, *_ = np.linalg.lstsq(A, b, rcond=None)
            if np.all(lam >= -tol) and np.abs(A @ lam - b).max() <= tol * (1 + np.abs(P).max()):
                return np.array(sub), np.clip(lam, 0.0, None)
    raise InternalConsistencyError("no sub-simplex of the facet contains the point")


def caratheodory_decompose(env: ConvexEnvelope, xi, tol: float = 1e-12) -> CaratheodoryDecomposition:
    """Express ``xi`` through the vertices of the lower facet containing it.

    Ties between facets are broken by the lexicographically smallest sorted
    vertex tuple. Zero weights are dropped; a node where ``f = f**`` returns a
    single point with weight 1.

    Raises:
        OutOfRangeError: ``xi`` outside the lattice box.
    """
    xi = np.asarray(xi, dtype=float).ravel()
    if not env.in_box(xi):
        raise OutOfRangeError(f"{xi.tolist()} outside the envelope box of radius {env.box_radius}")
    node = env.node_index(xi)
    if node is not None and env.f_values[node] <= env.values[node]:
        return CaratheodoryDecomposition(xi, env.nodes[node][None, :].copy(), np.ones(1),
                                         env.f_values[node:node + 1].copy(), float(env.values[node]))
    A = env.affine_values(xi)[0]
    top = A.max()
    scale = max(1.0, abs(top), float(np.abs(env.grad).max()) * env.box_radius)
    cand = np.where(A >= top - 1e-9 * scale)[0]
    bary = env.barycentric_maps()[cand]
    lam = bary @ np.append(xi, 1.0)
    inside = np.all(lam >= -1e-10, axis=1)
    if not np.any(inside):
        raise InternalConsistencyError("no lower facet contains the query point")
    # simplices are stored sorted and lexicographically ordered, so the first hit wins
    pick = int(cand[np.where(inside)[0][0]])
    lam = lam[np.where(inside)[0][0]]
    verts = env.simplices[pick]
    keep = lam > tol
    P = env.nodes[verts[keep]]
    if not _affinely_independent(P) or np.abs(lam[keep] @ P - xi).max() > 1e-10 * (1 + np.abs(P).max()):
        sub, w = _reduce_to_simplex(env.nodes[verts], xi, 1e-10)
        verts_kept = verts[sub]
    else:
        verts_kept = verts[keep]
        w = lam[keep]
    w = w / w.sum()
    keep2 = w > tol
    verts_kept, w = verts_kept[keep2], w[keep2] / w[keep2].sum()
    P = env.nodes[verts_kept]
    fvals = env.f_values[verts_kept]
    ev = float(w @ fvals)
    return CaratheodoryDecomposition(xi, P.copy(), w, fvals.copy(), ev)


@dataclass
class PairwiseSplit:
    """Pair coefficients for splitting a decomposition across ``H = {y^N = xi^N}``.

    ``alpha[i, j]`` is symmetric and ``sum_{i <= j} alpha_ij = 1``;
    ``beta[i, j]`` follows the three-case rule; ``bars[i, j]`` is the point
    ``beta_ji xi_i + beta_ij xi_j`` (on H for opposite-side pairs).
    """

    xi: np.ndarray
    points: np.ndarray
    weights: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    bars: np.ndarray

    @property
    def pairs(self) -> list[tuple[int, int]]:
        """Pairs ``i <= j`` with positive alpha, in lexicographic order."""
        n = len(self.weights)
        return [(i, j) for i in range(n) for j in range(i, n) if self.alpha[i, j] > 0]

    def residuals(self) -> dict[str, float]:
        """``alpha_sum``: |sum alpha - 1|; ``weights``: max |sum_i alpha_ij beta_ij - theta_j|;
        ``barycenter``: max |sum alpha_ij xi_bar_ij - xi|."""
        n = len(self.weights)
        iu = np.triu_indices(n)
        r1a = abs(self.alpha[iu].sum() - 1.0)
        r1b = float(np.abs((self.alpha * self.beta).sum(axis=0) - self.weights).max())
        recon = np.zeros_like(self.xi)
        for i in range(n):
            for j in range(i, n):
                if i < j:
                    recon += self.alpha[i, j] * (self.beta[i, j] * self.points[j] + self.beta[j, i] * self.points[i])
                else:
                    recon += self.alpha[j, j] * self.beta[j, j] * self.points[j]
        r2 = float(np.abs(recon - self.xi).max())
        return {"alpha_sum": float(r1a), "weights": r1b, "barycenter": r2}

    def to_dict(self) -> dict:
        return {"xi": self.xi.tolist(), "points": self.points.tolist(), "weights": self.weights.tolist(),
                "alpha": self.alpha.tolist(), "beta": self.beta.tolist()}


def beta_coefficients(points: np.ndarray, xi: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Three-case rule for ``beta_ij`` relative to the hyperplane through ``xi``.

    Points within ``tol * (1 + max|point|)`` of the hyperplane count as on it.
    """
    points = np.asarray(points, dtype=float)
    n = len(points)
    t = points[:, -1] - xi[-1]
    t = np.where(np.abs(t) <= tol * (1.0 + np.abs(points).max()), 0.0, t)
    beta = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if t[i] * t[j] < 0:
                beta[i, j] = t[i] / (t[i] - t[j])
            elif i == j and t[j] == 0:
                beta[i, j] = 1.0
    return beta


def pairwise_split(dec: CaratheodoryDecomposition, tol: float = 1e-12) -> PairwiseSplit:
    """Split a decomposition into pairs straddling ``H = {y^N = xi^N}``.

    Candidates are the crossing points of opposite-side pairs and the points
    already on H. Subsets of at most N candidates are tried in lexicographic
    order; the first one with a nonnegative barycentric solution gives alpha.

    Raises:
        InternalConsistencyError: no convex combination found, or the weights
            are not reproduced.
    """
    P = np.asarray(dec.points, dtype=float)
    xi = np.asarray(dec.xi, dtype=float)
    w = np.asarray(dec.weights, dtype=float)
    n, N = P.shape
    beta = beta_coefficients(P, xi, tol)
    bars = np.zeros((n, n, N))
    cands = []
    for i in range(n):
        for j in range(i, n):
            if i < j and beta[i, j] > 0:
                bar = beta[j, i] * P[i] + beta[i, j] * P[j]
                bar[-1] = xi[-1]  # exactly on H
                bars[i, j] = bars[j, i] = bar
                cands.append((i, j))
            elif i == j and beta[j, j] == 1.0:
                bars[j, j] = P[j]
                cands.append((j, j))
    if not cands:
        raise InternalConsistencyError("no pair crosses the hyperplane; decomposition is broken")
    C = np.array([bars[i, j] for i, j in cands])
    scale = 1.0 + float(np.abs(P).max())
    best = None
    for size in range(1, min(len(cands), N) + 1):
        for sub in itertools.combinations(range(len(cands)), size):
            Q = C[list(sub)]
            A = np.vstack([Q.T, np.ones(size)])
            b = np.append(xi, 1.0)
            lam, *_ = np.linalg.lstsq(A, b, rcond=None)
            res = float(np.abs(A @ lam - b).max())
            if lam.min() >= -1e-13 and res <= 1e-11 * scale:
                best = (sub, np.clip(lam, 0.0, None))
                break
        if best is not None:
            break
    if best is None:
        raise InternalConsistencyError("hyperplane section admits no convex combination of candidates")
    alpha = np.zeros((n, n))
    for c, lam in zip(best[0], best[1]):
        i, j = cands[c]
        alpha[i, j] = alpha[j, i] = lam
    s = alpha[np.triu_indices(n)].sum()
    alpha /= s
    split = PairwiseSplit(xi, P, w, alpha, beta, bars)
    r = split.residuals()
    if r["weights"] > 1e-9:
        raise InternalConsistencyError(f"weights not reproduced by alpha*beta (residual {r['weights']:.3e})")
    return split


def lattice_envelope_lp(f: Density, nodes: np.ndarray, xi) -> float:
    """Lattice envelope at ``xi`` by linear programming (reference route).

    Minimises ``sum lambda_i f(mu_i)`` subject to ``sum lambda_i mu_i = xi``,
    ``sum lambda_i = 1``, ``lambda >= 0``.
    """
    xi = np.asarray(xi, dtype=float)
    fv = f.evaluate(nodes)
    A_eq = np.vstack([nodes.T, np.ones(len(nodes))])
    b_eq = np.append(xi, 1.0)
    res = optimize.linprog(fv, A_eq=A_eq, b_eq=b_eq, bounds=(0, None), method="highs")
    if not res.success:
        raise EnvelopeError(f"LP failed: {res.message}")
    return float(res.fun)


def dump_decomposition(path: str | Path, dec: CaratheodoryDecomposition, split: PairwiseSplit | None = None) -> Path:
    """JSON ``{xi, points, weights, alpha, beta}``."""
    d = dec.to_dict()
    if split is not None:
        d["alpha"] = split.alpha.tolist()
        d["beta"] = split.beta.tolist()
    path = Path(path)
    path.write_text(json.dumps(d, indent=2))
    return path
