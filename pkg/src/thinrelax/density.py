"""Energy densities f(x, mu) with p-growth, and midpoint quadrature of F_eps."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .grid import Box, GridGeometry, VectorField, box_masks


class DensityEvaluationError(ArithmeticError):
    """A density returned a non-finite value; ``cell`` is the offending index."""

    def __init__(self, message: str, cell: tuple[int, ...] | None = None):
        super().__init__(message)
        self.cell = cell


class Density:
    """Base class: ``f(mu)`` for x-independent densities.

    Subclasses set ``p`` (growth exponent) and ``C`` (structural constant) and
    implement :meth:`evaluate` on arrays of shape ``(..., N)``.
    """

    p: float = 2.0
    C: float = 1.0
    dims: int | None = None

    def evaluate(self, mu: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, mu, x=None) -> np.ndarray:
        mu = np.asarray(mu, dtype=float)
        if x is None:
            return self.evaluate(mu)
        return self.at(x).evaluate(mu)

    def at(self, x) -> "Density":
        """The frozen density ``f(x, .)``; x-independent densities return self."""
        return self

    @property
    def is_piecewise(self) -> bool:
        return False

    def to_config(self) -> dict:
        raise NotImplementedError(f"{type(self).__name__} has no config form")


@dataclass
class PNormDensity(Density):
    """``f(mu) = scale * |mu|^p``."""

    p: float = 2.0
    C: float = 1.0
    scale: float = 1.0
    dims: int | None = None

    def __post_init__(self):
        if not 1 < self.p < np.inf:
            raise ValueError("growth exponent must satisfy 1 < p < inf")

    def evaluate(self, mu):
        return self.scale * np.linalg.norm(mu, axis=-1) ** self.p

    def to_config(self):
        return {"type": "pnorm", "p": self.p, "C": self.C, "scale": self.scale}


@dataclass
class MultiWellDensity(Density):
    """``f(mu) = prod_j |mu - zeta_j|^2`` with growth exponent ``2M``.

    When ``C`` is omitted it is set to ``max(4^M, 2^(2M-1) r^(2M), (2r)^M, 1)``
    with ``r = max |zeta_j|``. This satisfies both structure inequalities:
    each factor is at most ``2|mu|^2 + 2r^2``, and at least ``|mu|^2 / 4``
    once ``|mu| >= 2r``.
    """

    wells: np.ndarray = None
    C: float | None = None

    def __post_init__(self):
        w = np.atleast_2d(np.asarray(self.wells, dtype=float))
        if w.shape[0] < 1:
            raise ValueError("need at least one well")
        self.wells = w
        self.dims = w.shape[1]
        self.p = 2.0 * w.shape[0]
        if self.C is None:
            self.C = self.default_constant(w)

    @staticmethod
    def default_constant(wells: np.ndarray) -> float:
        M = wells.shape[0]
        r = float(np.max(np.linalg.norm(wells, axis=1)))
        return float(max(4.0 ** M, 2.0 ** (2 * M - 1) * r ** (2 * M), (2 * r) ** M, 1.0))

    def evaluate(self, mu):
        mu = np.asarray(mu, dtype=float)
        out = np.ones(mu.shape[:-1])
        for z in self.wells:
            d = mu - z
            out = out * np.einsum("...i,...i->...", d, d)
        return out

    def to_config(self):
        return {"type": "multiwell", "wells": self.wells.tolist(), "C": self.C}


@dataclass
class CallableDensity(Density):
    """Wrap a vectorised callable ``func(mu)`` with declared constants."""

    func: Callable[[np.ndarray], np.ndarray] = None
    p: float = 2.0
    C: float = 1.0
    dims: int | None = None

    def evaluate(self, mu):
        return np.asarray(self.func(np.asarray(mu, dtype=float)), dtype=float)


@dataclass
class PiecewiseDensity(Density):
    """Density whose x-dependence is constant on each box of a partition."""

    boxes: list[Box] = field(default_factory=list)
    pieces: list[Density] = field(default_factory=list)

    def __post_init__(self):
        if len(self.boxes) != len(self.pieces) or not self.boxes:
            raise ValueError("need one density per box")
        self.p = max(d.p for d in self.pieces)
        self.C = max(d.C for d in self.pieces)
        dims = {d.dims for d in self.pieces if d.dims is not None}
        self.dims = dims.pop() if len(dims) == 1 else None

    @property
    def is_piecewise(self) -> bool:
        return True

    def piece_index(self, x) -> int:
        x = np.asarray(x, dtype=float)
        for i, b in enumerate(self.boxes):
            if bool(b.contains(x)):
                return i
        # closed top faces belong to the last box touching them
        for i, b in enumerate(self.boxes):
            if np.all((x >= np.asarray(b.lo)) & (x <= np.asarray(b.hi))):
                return i
        raise ValueError(f"point {x} lies in no density box")

    def at(self, x) -> Density:
        return self.pieces[self.piece_index(x)]

    def evaluate(self, mu):
        raise TypeError("piecewise density needs a position; call f(mu, x) or f.at(x)")

    def to_config(self):
        return {"type": "piecewise",
                "pieces": [{"box": b.to_dict(), "density": d.to_config()} for b, d in zip(self.boxes, self.pieces)]}


def density_from_config(cfg: dict | str | Path) -> Density:
    """Build a density from its JSON form (a dict, a JSON string or a path)."""
    if isinstance(cfg, Path) or (isinstance(cfg, str) and not cfg.lstrip().startswith("{")):
        cfg = json.loads(Path(cfg).read_text())
    elif isinstance(cfg, str):
        cfg = json.loads(cfg)
    kind = cfg.get("type")
    if kind == "pnorm":
        return PNormDensity(p=float(cfg.get("p", 2.0)), C=float(cfg.get("C", 1.0)),
                            scale=float(cfg.get("scale", 1.0)), dims=cfg.get("dims"))
    if kind == "multiwell":
        return MultiWellDensity(wells=cfg["wells"], C=cfg.get("C"))
    if kind == "piecewise":
        boxes = [Box.from_dict(pc["box"]) for pc in cfg["pieces"]]
        parts = [density_from_config(pc["density"]) for pc in cfg["pieces"]]
        return PiecewiseDensity(boxes, parts)
    raise ValueError(f"unknown density type {kind!r}")


def cell_density_values(f: Density, u: VectorField) -> np.ndarray:
    """``f(x_cell, u_cell)`` on every cell, shape ``geom.resolution``."""
    if f.is_piecewise:
        masks = box_masks(u.geom, f.boxes)
        out = np.empty(u.geom.resolution)
        for m, piece in zip(masks, f.pieces):
            out[m] = piece.evaluate(u.values[m])
    else:
        out = f.evaluate(u.values)
    bad = ~np.isfinite(out)
    if np.any(bad):
        idx = tuple(int(i) for i in np.argwhere(bad)[0])
        raise DensityEvaluationError(f"density is not finite at cell {idx}", idx)
    return out


def energy(f: Density, u: VectorField) -> float:
    """Midpoint quadrature of ``int_Omega f(x, u(x)) dx``."""
    return float(np.sum(cell_density_values(f, u)) * u.geom.cell_volume)


def sample_lattice(dims: int, radius: float, points_per_axis: int) -> np.ndarray:
    """Uniform lattice on ``[-radius, radius]^dims``, shape ``(n^dims, dims)``."""
    if points_per_axis < 1:
        raise ValueError("lattice must be nonempty")
    t = np.linspace(-radius, radius, points_per_axis)
    return np.stack(np.meshgrid(*([t] * dims), indexing="ij"), axis=-1).reshape(-1, dims)


@dataclass
class StructureReport:
    """Worst-case margins of the growth and coercivity inequalities.

    A margin is ``rhs - lhs`` for the inequality written as ``lhs <= rhs``,
    minimised over the samples; negative means violated.
    """

    growth_margin: float
    coercivity_margin: float
    worst_growth_point: np.ndarray
    worst_coercivity_point: np.ndarray
    n_samples: int

    @property
    def growth_ok(self) -> bool:
        return self.growth_margin >= 0

    @property
    def coercivity_ok(self) -> bool:
        return self.coercivity_margin >= 0

    @property
    def ok(self) -> bool:
        return self.growth_ok and self.coercivity_ok


def check_structure(f: Density, lattice, x=None) -> StructureReport:
    """Check ``|f| <= C|mu|^p + C`` and ``f >= |mu|^p / C - C`` on samples.

    Args:
        f: density; piecewise densities are checked at every piece unless
            ``x`` selects one.
        lattice: array of sample points ``(S, N)``, or a dict
            ``{"dims", "radius", "points"}`` for :func:`sample_lattice`.
        x: optional position at which to freeze ``f``.
    """
    if isinstance(lattice, dict):
        pts = sample_lattice(int(lattice["dims"]), float(lattice["radius"]), int(lattice["points"]))
    else:
        pts = np.atleast_2d(np.asarray(lattice, dtype=float))
    if pts.size == 0:
        raise ValueError("lattice must be nonempty")
    if f.is_piecewise and x is None:
        reports = [check_structure(piece, pts) for piece in f.pieces]
        g = min(reports, key=lambda r: r.growth_margin)
        c = min(reports, key=lambda r: r.coercivity_margin)
        return StructureReport(g.growth_margin, c.coercivity_margin, g.worst_growth_point,
                               c.worst_coercivity_point, sum(r.n_samples for r in reports))
    g = f.at(x) if x is not None else f
    vals = g.evaluate(pts)
    r = np.linalg.norm(pts, axis=-1) ** g.p
    growth = g.C * r + g.C - np.abs(vals)
    coerc = vals - (r / g.C - g.C)
    ig = int(np.argmin(growth))
    ic = int(np.argmin(coerc))
    return StructureReport(float(growth[ig]), float(coerc[ic]), pts[ig], pts[ic], len(pts))


def three_well_density() -> MultiWellDensity:
    """Wells ``(0, -1), (1, 0), (0, 1)``; growth exponent 6."""
    return MultiWellDensity(wells=[[0.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
