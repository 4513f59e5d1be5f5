"""Spectral projection onto div_eps-free fields and a W^{-1,p} residual surrogate.

The projector acts frequency-wise as ``I - a a^T`` with ``a`` the unit vector
along ``(k', k_N / eps)``, on the periodic box given by the grid itself.

A Nyquist index is its own negative, so its wavenumber ``pi / h`` gets a sign
chosen to flip with the frequency: the sign of the first other component that
is neither zero nor Nyquist (last axis first). Then ``a(-m) = -a(m)``, the
multiplier is Hermitian consistent and real fields stay real.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .grid import GeometryError, GridGeometry, VectorField
from .laminate import smoothstep


def _index_grids(resolution: tuple[int, ...]) -> list[np.ndarray]:
    """Integer frequency indices on the rfft layout (last axis halved), broadcastable."""
    N = len(resolution)
    out = []
    for ax, n in enumerate(resolution):
        m = np.arange(n // 2 + 1) if ax == N - 1 else np.fft.fftfreq(n, d=1.0 / n).astype(int)
        shape = [1] * N
        shape[ax] = len(m)
        out.append(m.reshape(shape))
    return out


def wavevector_grids(geom: GridGeometry) -> list[np.ndarray]:
    """Physical wavenumbers ``2 pi m / L`` per axis on the rfft layout, Nyquist signs resolved."""
    res = geom.resolution
    N = len(res)
    ms = np.broadcast_arrays(*_index_grids(res))
    nyq = [(np.abs(m) == n // 2) & (n % 2 == 0) for m, n in zip(ms, res)]
    sign = np.zeros(ms[0].shape)
    for ax in [N - 1] + list(range(N - 1)):
        free = (sign == 0) & (ms[ax] != 0) & ~nyq[ax]
        sign[free] = np.sign(ms[ax][free])
    sign[sign == 0] = 1.0
    ks = []
    for ax in range(N):
        k = 2 * np.pi * ms[ax] / geom.lengths[ax]
        k = np.where(nyq[ax], sign * np.pi * res[ax] / geom.lengths[ax], k)
        ks.append(k)
    return ks


@dataclass
class SpectralProjector:
    """Orthogonal projector onto spectrally div_eps-free fields on a periodic grid.

    Attributes:
        geom: periodic box (the grid).
        eps: thickness parameter.
    """

    geom: GridGeometry
    eps: float
    _a: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        self.eps = float(self.eps)

    def wavevectors(self) -> list[np.ndarray]:
        """Scaled wavenumbers ``(k_1, ..., k_{N-1}, k_N / eps)`` on the rfft grid."""
        ks = wavevector_grids(self.geom)
        ks[-1] = ks[-1] / self.eps
        return ks

    def directions(self) -> np.ndarray:
        """Unit symbol directions ``a(m)``, zero where the symbol vanishes."""
        if self._a is None:
            ks = np.broadcast_arrays(*self.wavevectors())
            a = np.stack(ks, axis=-1)
            nrm = np.linalg.norm(a, axis=-1, keepdims=True)
            with np.errstate(invalid="ignore", divide="ignore"):
                self._a = np.where(nrm > 0, a / np.where(nrm > 0, nrm, 1.0), 0.0)
        return self._a

    def _check(self, u: VectorField):
        if u.geom.resolution != self.geom.resolution or not np.allclose(u.geom.lengths, self.geom.lengths):
            raise GeometryError("field grid does not match the projector's periodic box")

    def transform(self, u: VectorField) -> np.ndarray:
        axes = tuple(range(self.geom.dims))
        return np.stack([np.fft.rfftn(u.values[..., c], axes=axes) for c in range(self.geom.dims)], axis=-1)

    def inverse(self, uh: np.ndarray) -> np.ndarray:
        axes = tuple(range(self.geom.dims))
        s = self.geom.resolution
        return np.stack([np.fft.irfftn(uh[..., c], s=s, axes=axes) for c in range(self.geom.dims)], axis=-1)

    def apply(self, u: VectorField) -> VectorField:
        self._check(u)
        a = self.directions()
        uh = self.transform(u)
        dot = np.einsum("...i,...i->...", a, uh)
        uh = uh - a * dot[..., None]
        return VectorField(u.geom, self.inverse(uh), u.epsilon)


def project(P: SpectralProjector, u: VectorField) -> VectorField:
    """Apply the projector; raises GeometryError on a grid mismatch."""
    return P.apply(u)


def spectral_div_eps(u: VectorField, eps: float | None = None) -> np.ndarray:
    """Spectral ``div_eps`` on the periodic grid, with the projector's wavenumbers."""
    eps = u.epsilon if eps is None else float(eps)
    P = SpectralProjector(u.geom, eps)
    ks = P.wavevectors()
    uh = P.transform(u)
    dh = sum(1j * ks[c] * uh[..., c] for c in range(u.dims))
    return np.fft.irfftn(dh, s=u.geom.resolution, axes=tuple(range(u.dims)))


def interior_cutoff(geom: GridGeometry, margin: float) -> np.ndarray:
    """``S(dist(x, boundary) / margin)``: 1 at depth >= margin, 0 on the boundary."""
    xs = geom.mesh()
    depth = None
    for ax in range(geom.dims):
        d = np.minimum(xs[ax] - geom.lower[ax], geom.upper[ax] - xs[ax])
        depth = d if depth is None else np.minimum(depth, d)
    return np.broadcast_to(smoothstep(depth / margin), geom.resolution).copy()


@dataclass
class ProjectionResult:
    """Projected field with the cutoff used and the ``L^p`` distance to the input."""

    field: VectorField
    cutoff: np.ndarray
    error: float
    p: float


def project_asymptotic(u: VectorField, eps: float | None = None, cutoff_margin: float | None = None,
                       p: float = 2.0) -> ProjectionResult:
    """Cut off near the boundary, then project.

    Args:
        u: field on Omega.
        eps: thickness parameter; defaults to ``u.epsilon``.
        cutoff_margin: depth at which the interior cutoff reaches 1; must
            exceed one cell width on every axis. Defaults to three cells of the
            coarsest axis.
        p: exponent of the reported error ``||u - v||_p``.

    Raises:
        ValueError: margin not larger than a cell, or so large that the
            plateau is empty.
    """
    eps = u.epsilon if eps is None else float(eps)
    g = u.geom
    h = g.spacing
    if cutoff_margin is None:
        cutoff_margin = 3 * float(h.max())
    if cutoff_margin <= h.max():
        raise ValueError("cutoff margin must exceed one cell")
    if 2 * cutoff_margin >= g.lengths.min():
        raise ValueError("cutoff margin leaves an empty plateau")
    phi = interior_cutoff(g, cutoff_margin)
    v = SpectralProjector(g, eps).apply(u.scaled(phi))
    v = VectorField(g, v.values, eps)
    return ProjectionResult(v, phi, (u - v).lp_norm(p), p)


def _sine_table(geom: GridGeometry, axis: int, M: int) -> tuple[np.ndarray, np.ndarray]:
    """``sin(a pi (x - lo)/L)`` and its derivative for ``a = 1..M`` at cell centres."""
    x = geom.centers(axis) - geom.lower[axis]
    L = geom.lengths[axis]
    a = np.arange(1, M + 1)[:, None]
    arg = a * np.pi * x[None, :] / L
    return np.sin(arg), (a * np.pi / L) * np.cos(arg)


@dataclass
class NegSobolevEstimator:
    """Dictionary lower bound for the ``W^{-1,p}`` norm.

    The dictionary is the tensor sine modes ``prod_i sin(a_i pi x_i / L_i)``
    with ``1 <= a_i <= M``; each vanishes on the boundary. Their
    ``W^{1,p'}`` norms ``(||phi||_{p'}^{p'} + || |grad phi| ||_{p'}^{p'})^{1/p'}``
    are computed by midpoint quadrature with ``quad_points`` nodes per axis
    (default ``16 M``, or ``8 M`` in three or more dimensions).
    """

    geom: GridGeometry
    p: float = 2.0
    M: int = 16
    quad_points: int | None = None
    norms: np.ndarray = field(default=None, repr=False)
    _tables: list = field(default=None, repr=False)

    def __post_init__(self):
        if not 1 < self.p < np.inf:
            raise ValueError("p must lie in (1, inf)")
        self._tables = [_sine_table(self.geom, ax, self.M) for ax in range(self.geom.dims)]
        Q = self.quad_points or (16 * self.M if self.geom.dims == 2 else 8 * self.M)
        self.norms = self._mode_norms(self.geom.with_resolution((int(Q),) * self.geom.dims))
        if not np.all(np.isfinite(self.norms)) or np.any(self.norms <= 0):
            raise ValueError("dictionary norms must be positive and finite")

    @property
    def q(self) -> float:
        return self.p / (self.p - 1)

    def _mode_norms(self, qgeom: GridGeometry) -> np.ndarray:
        N = qgeom.dims
        q = self.q
        vol = qgeom.cell_volume
        tables = [_sine_table(qgeom, ax, self.M) for ax in range(N)]
        if q == 2.0:
            # separable: int phi^2 and int |grad phi|^2 factor over axes
            S2 = [np.sum(s * s, axis=1) for s, _ in tables]
            D2 = [np.sum(d * d, axis=1) for _, d in tables]
            tot_phi = _outer_product(S2)
            tot_grad = 0
            for ax in range(N):
                terms = [D2[b] if b == ax else S2[b] for b in range(N)]
                tot_grad = tot_grad + _outer_product(terms)
            return np.sqrt((tot_phi + tot_grad) * vol)
        out = np.empty((self.M,) * N)
        for idx in itertools.product(range(self.M), repeat=N):
            vals = [tables[ax][0][i] for ax, i in enumerate(idx)]
            ders = [tables[ax][1][i] for ax, i in enumerate(idx)]
            phi = _outer_product(vals)
            g2 = 0
            for ax in range(N):
                g2 = g2 + _outer_product([ders[b] if b == ax else vals[b] for b in range(N)]) ** 2
            out[idx] = ((np.sum(np.abs(phi) ** q) + np.sum(g2 ** (q / 2))) * vol) ** (1 / q)
        return out

    def pairings(self, g: np.ndarray) -> np.ndarray:
        """``sum_cells g phi vol`` for every mode, shape ``(M,)*N``."""
        g = np.asarray(g, dtype=float)
        if g.shape != self.geom.resolution:
            raise GeometryError("scalar function does not match the estimator grid")
        out = g
        for ax in range(self.geom.dims):
            out = np.tensordot(out, self._tables[ax][0], axes=([0], [1]))
        return out * self.geom.cell_volume

    def estimate(self, g) -> float:
        """``max_phi |<g, phi>| / ||phi||``; vector fields pair componentwise (Euclidean)."""
        if isinstance(g, VectorField):
            comps = [self.pairings(g.values[..., c]) for c in range(g.dims)]
            pair = np.sqrt(sum(c * c for c in comps))
        else:
            pair = np.abs(self.pairings(g))
        return float(np.max(pair / self.norms))

    def argmax_mode(self, g) -> tuple[int, ...]:
        pair = np.abs(self.pairings(g)) / self.norms
        return tuple(int(i) + 1 for i in np.unravel_index(np.argmax(pair), pair.shape))


def _outer_product(vecs):
    out = vecs[0]
    for v in vecs[1:]:
        out = np.multiply.outer(out, v)
    return out


def neg_sobolev_norm(g, est: NegSobolevEstimator) -> float:
    """Dictionary estimate of ``||g||_{W^{-1,p}}`` (a lower bound of the true norm)."""
    return est.estimate(g)


def sine_mode_norm(a: int, b: int, lengths=(1.0, 1.0)) -> float:
    """Exact ``W^{1,2}`` norm of ``sin(a pi x / L1) sin(b pi y / L2)`` on the rectangle."""
    L1, L2 = lengths
    area = L1 * L2
    return math.sqrt(area / 4 * (1 + (a * math.pi / L1) ** 2 + (b * math.pi / L2) ** 2))
