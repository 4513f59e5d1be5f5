"""Uniform cell-centred grids on Omega = omega x (0, 1) and discrete operators.

Values live at cell centres. Derivatives are forward differences, with the
last layer along a non-periodic axis reusing the backward difference. The
anisotropic divergence is

    div_eps u = sum_{a < N} D+_a u^a + (1/eps) D+_N u^N.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import ndimage


class GeometryError(ValueError):
    """Malformed grid, or a field that does not match the expected grid."""


class PartitionError(ValueError):
    """A box list that overlaps or leaves cells uncovered."""


@dataclass(frozen=True)
class Box:
    """Axis-aligned box ``prod [lo_i, hi_i]``."""

    lo: tuple[float, ...]
    hi: tuple[float, ...]

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        if len(lo) != len(hi) or not lo:
            raise GeometryError(f"box corners have mismatched lengths: {lo} / {hi}")
        if any(b <= a for a, b in zip(lo, hi)):
            raise GeometryError(f"box has empty side: lo={lo}, hi={hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dims(self) -> int:
        return len(self.lo)

    @property
    def sides(self) -> np.ndarray:
        return np.subtract(self.hi, self.lo)

    @property
    def volume(self) -> float:
        return float(np.prod(self.sides))

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Half-open membership test ``lo <= x < hi`` on the trailing axis."""
        pts = np.asarray(points, dtype=float)
        lo = np.asarray(self.lo)
        hi = np.asarray(self.hi)
        return np.all((pts >= lo) & (pts < hi), axis=-1)

    def overlap_volume(self, other: "Box") -> float:
        lo = np.maximum(self.lo, other.lo)
        hi = np.minimum(self.hi, other.hi)
        return float(np.prod(np.clip(hi - lo, 0.0, None)))

    def to_dict(self) -> dict:
        return {"lo": list(self.lo), "hi": list(self.hi)}

    @classmethod
    def from_dict(cls, d: dict) -> "Box":
        return cls(tuple(d["lo"]), tuple(d["hi"]))


@dataclass(frozen=True)
class GridGeometry:
    """Uniform grid on ``omega_box x (0, height)``.

    ``height`` is 1 for the fixed domain; rescaled thin grids use ``eps``.

    Attributes:
        omega_box: ``((lo_1, hi_1), ..., (lo_{N-1}, hi_{N-1}))``.
        resolution: cells per axis, length N.
        height: extent of the last axis.
    """

    omega_box: tuple[tuple[float, float], ...]
    resolution: tuple[int, ...]
    height: float = 1.0

    def __post_init__(self):
        ob = tuple((float(a), float(b)) for a, b in self.omega_box)
        res = tuple(int(n) for n in self.resolution)
        if len(ob) < 1:
            raise GeometryError("need N >= 2 (omega must have at least one axis)")
        if len(res) != len(ob) + 1:
            raise GeometryError(f"resolution has {len(res)} entries, expected {len(ob) + 1}")
        if any(b <= a for a, b in ob):
            raise GeometryError(f"omega box has empty side: {ob}")
        if any(n < 1 for n in res):
            raise GeometryError(f"resolution must be positive: {res}")
        if not self.height > 0:
            raise GeometryError("height must be positive")
        object.__setattr__(self, "omega_box", ob)
        object.__setattr__(self, "resolution", res)
        object.__setattr__(self, "height", float(self.height))

    @classmethod
    def unit(cls, dims: int, resolution: int | Sequence[int]) -> "GridGeometry":
        """Grid on the unit cube ``(0, 1)^dims``."""
        if isinstance(resolution, (int, np.integer)):
            resolution = (int(resolution),) * dims
        return cls(((0.0, 1.0),) * (dims - 1), tuple(resolution))

    @property
    def dims(self) -> int:
        return len(self.resolution)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.resolution

    @property
    def lower(self) -> np.ndarray:
        return np.array([a for a, _ in self.omega_box] + [0.0])

    @property
    def upper(self) -> np.ndarray:
        return np.array([b for _, b in self.omega_box] + [self.height])

    @property
    def lengths(self) -> np.ndarray:
        return self.upper - self.lower

    @property
    def spacing(self) -> np.ndarray:
        return self.lengths / np.asarray(self.resolution, dtype=float)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.resolution))

    @property
    def domain_box(self) -> Box:
        return Box(tuple(self.lower), tuple(self.upper))

    def centers(self, axis: int) -> np.ndarray:
        h = self.spacing[axis]
        return self.lower[axis] + (np.arange(self.resolution[axis]) + 0.5) * h

    def mesh(self) -> list[np.ndarray]:
        """Sparse broadcastable coordinate arrays, one per axis."""
        return np.meshgrid(*[self.centers(a) for a in range(self.dims)], indexing="ij", sparse=True)

    def coordinates(self) -> np.ndarray:
        """Dense array of cell centres, shape ``(*resolution, N)``."""
        return np.stack(np.meshgrid(*[self.centers(a) for a in range(self.dims)], indexing="ij"), axis=-1)

    def with_resolution(self, resolution: Sequence[int]) -> "GridGeometry":
        return GridGeometry(self.omega_box, tuple(resolution), self.height)

    def to_dict(self) -> dict:
        return {"omega": [list(ab) for ab in self.omega_box], "resolution": list(self.resolution),
                "height": self.height}

    @classmethod
    def from_dict(cls, d: dict) -> "GridGeometry":
        return cls(tuple(tuple(ab) for ab in d["omega"]), tuple(d["resolution"]), d.get("height", 1.0))


@dataclass
class VectorField:
    """N-component cell-centred field tagged with its thickness parameter.

    Attributes:
        geom: grid the values live on.
        values: array of shape ``(*geom.resolution, N)``.
        epsilon: thickness parameter of the constraint regime.
    """

    geom: GridGeometry
    values: np.ndarray
    epsilon: float = 1.0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        expected = self.geom.resolution + (self.geom.dims,)
        if v.shape != expected:
            raise GeometryError(f"field shape {v.shape} does not match grid {expected}")
        if not np.all(np.isfinite(v)):
            raise ValueError("field has non-finite values")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        self.values = v
        self.epsilon = float(self.epsilon)

    @classmethod
    def zeros(cls, geom: GridGeometry, epsilon: float = 1.0) -> "VectorField":
        return cls(geom, np.zeros(geom.resolution + (geom.dims,)), epsilon)

    @classmethod
    def constant(cls, geom: GridGeometry, value: Sequence[float], epsilon: float = 1.0) -> "VectorField":
        v = np.broadcast_to(np.asarray(value, dtype=float), geom.resolution + (geom.dims,))
        return cls(geom, v.copy(), epsilon)

    @classmethod
    def from_function(cls, geom: GridGeometry, func: Callable[..., Sequence[np.ndarray]],
                      epsilon: float = 1.0) -> "VectorField":
        """Sample ``func(x_1, ..., x_N) -> (u^1, ..., u^N)`` at cell centres."""
        xs = geom.mesh()
        comps = func(*xs)
        vals = np.stack([np.broadcast_to(np.asarray(c, dtype=float), geom.resolution) for c in comps], axis=-1)
        return cls(geom, vals, epsilon)

    @property
    def dims(self) -> int:
        return self.geom.dims

    def component(self, j: int) -> np.ndarray:
        return self.values[..., j]

    def copy(self) -> "VectorField":
        return VectorField(self.geom, self.values.copy(), self.epsilon)

    def with_values(self, values: np.ndarray) -> "VectorField":
        return VectorField(self.geom, values, self.epsilon)

    def _check_compatible(self, other: "VectorField"):
        if other.geom != self.geom:
            raise GeometryError("fields live on different grids")

    def __add__(self, other: "VectorField") -> "VectorField":
        self._check_compatible(other)
        return self.with_values(self.values + other.values)

    def __sub__(self, other: "VectorField") -> "VectorField":
        self._check_compatible(other)
        return self.with_values(self.values - other.values)

    def scaled(self, factor) -> "VectorField":
        """Multiply by a scalar or by a cellwise array of shape ``resolution``."""
        f = np.asarray(factor, dtype=float)
        if f.ndim:
            f = f[..., None]
        return self.with_values(self.values * f)

    def pointwise_norm(self) -> np.ndarray:
        return np.linalg.norm(self.values, axis=-1)

    def sup_norm(self) -> float:
        return float(self.pointwise_norm().max())

    def lp_norm(self, p: float = 2.0) -> float:
        """Grid ``L^p`` norm with the Euclidean norm on values."""
        a = self.pointwise_norm()
        if math.isinf(p):
            return float(a.max())
        return float((np.sum(a ** p) * self.geom.cell_volume) ** (1.0 / p))

    def mean(self) -> np.ndarray:
        axes = tuple(range(self.dims))
        return self.values.mean(axis=axes)


def _diff_forward(a: np.ndarray, axis: int, h: float, periodic: bool) -> np.ndarray:
    if periodic:
        return (np.roll(a, -1, axis=axis) - a) / h
    n = a.shape[axis]
    d = np.empty_like(a)
    lo = [slice(None)] * a.ndim
    hi = [slice(None)] * a.ndim
    lo[axis] = slice(0, n - 1)
    hi[axis] = slice(1, n)
    d[tuple(lo)] = (a[tuple(hi)] - a[tuple(lo)]) / h
    last = [slice(None)] * a.ndim
    prev = [slice(None)] * a.ndim
    last[axis] = n - 1
    prev[axis] = n - 2
    d[tuple(last)] = d[tuple(prev)]
    return d


def _periodic_flags(periodic, dims: int) -> tuple[bool, ...]:
    if isinstance(periodic, (bool, np.bool_)):
        return (bool(periodic),) * dims
    flags = tuple(bool(p) for p in periodic)
    if len(flags) != dims:
        raise GeometryError("periodic flags must match the dimension")
    return flags


def _check_resolution(geom: GridGeometry):
    if min(geom.resolution) < 2:
        raise GeometryError(f"need at least 2 cells per axis for differences, got {geom.resolution}")


def partial_forward(u: VectorField, component: int, axis: int, periodic=False) -> np.ndarray:
    """Forward difference ``D+_axis u^component``."""
    _check_resolution(u.geom)
    flags = _periodic_flags(periodic, u.dims)
    return _diff_forward(u.values[..., component], axis, u.geom.spacing[axis], flags[axis])


def horizontal_divergence(u: VectorField, periodic=False) -> np.ndarray:
    """``div' u' = sum_{a < N} D+_a u^a``, same shape as the grid."""
    _check_resolution(u.geom)
    flags = _periodic_flags(periodic, u.dims)
    h = u.geom.spacing
    out = np.zeros(u.geom.resolution)
    for a in range(u.dims - 1):
        out += _diff_forward(u.values[..., a], a, h[a], flags[a])
    return out


def div_eps(u: VectorField, eps: float | None = None, periodic=False) -> np.ndarray:
    """Discrete anisotropic divergence of ``u``.

    Args:
        u: field on a grid with at least two cells per axis.
        eps: thickness parameter; defaults to ``u.epsilon``.
        periodic: bool or per-axis flags for torus-embedded fields.

    Returns:
        Array of shape ``geom.resolution``. Entry ``i`` is the forward stencil
        anchored at cell ``i``; on the last layer of a non-periodic axis the
        backward difference is used.
    """
    eps = u.epsilon if eps is None else float(eps)
    flags = _periodic_flags(periodic, u.dims)
    out = horizontal_divergence(u, flags)
    n = u.dims - 1
    out += _diff_forward(u.values[..., n], n, u.geom.spacing[n], flags[n]) / eps
    return out


def is_in_U0(u: VectorField, tol: float = 0.0) -> bool:
    """True iff ``max |D+_N u^N| <= tol`` over interior stencils."""
    if tol < 0:
        raise ValueError("tol must be non-negative")
    vN = u.values[..., -1]
    if vN.shape[-1] < 2:
        return True
    d = np.diff(vN, axis=-1) / u.geom.spacing[-1]
    return bool(np.max(np.abs(d)) <= tol)


def rescale_to_thin(u: VectorField, eps: float) -> VectorField:
    """Carry ``u`` on ``omega x (0,1)`` to ``v(y', y_N) = u(y', y_N / eps)`` on ``omega x (0, eps)``.

    Cell values are unchanged; only the last-axis extent shrinks by ``eps``.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    g = u.geom
    thin = GridGeometry(g.omega_box, g.resolution, g.height * eps)
    return VectorField(thin, u.values.copy(), u.epsilon)


def rescale_from_thin(v: VectorField, eps: float) -> VectorField:
    """Inverse of :func:`rescale_to_thin`."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    g = v.geom
    fixed = GridGeometry(g.omega_box, g.resolution, g.height / eps)
    return VectorField(fixed, v.values.copy(), v.epsilon)


def bump_weights(radius_cells: int) -> np.ndarray:
    """Normalised samples of ``exp(-1 / (1 - t^2))`` on ``2r + 1`` nodes."""
    r = int(radius_cells)
    t = np.arange(-r, r + 1) / (r + 1.0)
    w = np.exp(-1.0 / (1.0 - t * t))
    return w / w.sum()


def mollify_U0(u: VectorField, radius: float) -> VectorField:
    """Smooth a field while keeping ``D+_N u^N = 0`` exactly.

    The horizontal components are extended by zero outside Omega and smoothed
    along every axis. The vertical component is extended by zero outside
    ``omega x R`` and constantly in ``x_N``, so only horizontal smoothing acts
    on it. A separable bump of the given radius is used; an axis whose cell
    width exceeds the radius is left alone, and if that holds for every axis
    the input is returned unchanged.

    Raises:
        ValueError: if ``u`` is not in U_0 at tolerance 0 or radius <= 0.
    """
    if not radius > 0:
        raise ValueError("radius must be positive")
    if not is_in_U0(u, 0.0):
        raise ValueError("mollify_U0 expects a field in U_0 (tolerance 0)")
    h = u.geom.spacing
    cells = [int(math.floor(radius / hi)) for hi in h]
    if all(c == 0 for c in cells):
        return u.copy()
    out = u.values.copy()
    nd = u.dims
    for a, c in enumerate(cells):
        if c == 0:
            continue
        w = bump_weights(c)
        for comp in range(nd):
            if comp == nd - 1 and a == nd - 1:
                continue  # constant extension in x_N: vertical smoothing is the identity
            out[..., comp] = ndimage.convolve1d(out[..., comp], w, axis=a, mode="constant", cval=0.0)
    return u.with_values(out)


def box_partition(geom: GridGeometry, cuts: Sequence[Sequence[float]]) -> list[Box]:
    """Tensor partition of the domain from interior cut positions per axis."""
    if len(cuts) != geom.dims:
        raise GeometryError("need one list of cuts per axis")
    edges = []
    for a in range(geom.dims):
        inner = sorted(float(c) for c in cuts[a])
        edges.append([geom.lower[a]] + inner + [geom.upper[a]])
    boxes = []
    for idx in np.ndindex(*[len(e) - 1 for e in edges]):
        lo = tuple(edges[a][i] for a, i in enumerate(idx))
        hi = tuple(edges[a][i + 1] for a, i in enumerate(idx))
        boxes.append(Box(lo, hi))
    return boxes


def box_masks(geom: GridGeometry, boxes: Sequence[Box]) -> list[np.ndarray]:
    """Cell masks for a partition, assigning cells by their centres.

    Raises:
        PartitionError: for boxes that overlap with positive volume, boxes that
            capture the same cell, or cells left uncovered.
    """
    for i in range(len(boxes)):
        for j in range(i + 1, len(boxes)):
            if boxes[i].overlap_volume(boxes[j]) > 0:
                raise PartitionError(f"boxes {i} and {j} overlap")
    xs = geom.mesh()
    masks = []
    count = np.zeros(geom.resolution, dtype=int)
    for b in boxes:
        if b.dims != geom.dims:
            raise PartitionError("box dimension does not match the grid")
        m = np.ones(geom.resolution, dtype=bool)
        for a in range(geom.dims):
            m &= (xs[a] >= b.lo[a]) & (xs[a] < b.hi[a])
        masks.append(m)
        count += m
    if np.any(count > 1):
        raise PartitionError("a cell is claimed by more than one box")
    if np.any(count == 0):
        idx = tuple(int(i) for i in np.argwhere(count == 0)[0])
        raise PartitionError(f"cell {idx} is not covered by any box")
    return masks


def piecewise_constant_approx(u: VectorField, boxes: Sequence[Box]) -> VectorField:
    """Per box and component: ``inf min(u, 0) + sup max(u, 0)``.

    This keeps ``|u_#| <= sup |u|`` on each box and maps U_0 into U_0 when the
    boxes are products ``omega_h x J_k``.
    """
    masks = box_masks(u.geom, boxes)
    out = np.empty_like(u.values)
    for m in masks:
        vals = u.values[m]
        lo = np.minimum(vals.min(axis=0), 0.0)
        hi = np.maximum(vals.max(axis=0), 0.0)
        out[m] = lo + hi
    return u.with_values(out)


def piecewise_constant_field(geom: GridGeometry, boxes: Sequence[Box], values: Sequence[Sequence[float]],
                             epsilon: float = 1.0) -> VectorField:
    """Field equal to ``values[i]`` on ``boxes[i]``."""
    masks = box_masks(geom, boxes)
    out = np.zeros(geom.resolution + (geom.dims,))
    for m, v in zip(masks, values):
        out[m] = np.asarray(v, dtype=float)
    return VectorField(geom, out, epsilon)


def save_field(path: str | Path, u: VectorField) -> Path:
    """Write a field as CSV (``.csv``) or NumPy archive (any other suffix).

    The CSV carries ``#`` header rows with N, resolution, epsilon, omega and
    height, then one row per cell in row-major order, one column per component.
    """
    path = Path(path)
    g = u.geom
    if path.suffix == ".csv":
        header = [
            f"# dims={g.dims}",
            "# resolution=" + ",".join(str(n) for n in g.resolution),
            f"# epsilon={u.epsilon!r}",
            "# omega=" + ";".join(f"{a!r}:{b!r}" for a, b in g.omega_box),
            f"# height={g.height!r}",
            ",".join(f"u{j + 1}" for j in range(g.dims)),
        ]
        flat = u.values.reshape(-1, g.dims)
        with open(path, "w") as fh:
            fh.write("\n".join(header) + "\n")
            np.savetxt(fh, flat, delimiter=",", fmt="%.17g")
    else:
        if path.suffix != ".npz":
            path = path.with_suffix(".npz")
        np.savez(path, values=u.values, epsilon=u.epsilon, resolution=np.array(g.resolution),
                 omega=np.array(g.omega_box), height=g.height)
    return path


def load_field(path: str | Path) -> VectorField:
    """Read a field written by :func:`save_field`."""
    path = Path(path)
    if path.suffix == ".csv":
        meta = {}
        with open(path) as fh:
            for line in fh:
                if not line.startswith("#"):
                    break
                key, _, val = line[1:].strip().partition("=")
                meta[key] = val
        res = tuple(int(n) for n in meta["resolution"].split(","))
        omega = tuple(tuple(float(x) for x in part.split(":")) for part in meta["omega"].split(";"))
        geom = GridGeometry(omega, res, float(meta.get("height", 1.0)))
        flat = np.loadtxt(path, delimiter=",", skiprows=len(meta) + 1, ndmin=2)
        return VectorField(geom, flat.reshape(res + (geom.dims,)), float(meta["epsilon"]))
    with np.load(path) as data:
        geom = GridGeometry(tuple(map(tuple, data["omega"].tolist())), tuple(data["resolution"].tolist()),
                            float(data["height"]))
        return VectorField(geom, data["values"], float(data["epsilon"]))
