"""Densities, structure checks and energy quadrature."""

from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from thinrelax.density import (CallableDensity, DensityEvaluationError, MultiWellDensity, PiecewiseDensity,
                               PNormDensity, cell_density_values, check_structure, density_from_config, energy,
                               sample_lattice, three_well_density)
from thinrelax.grid import Box, GridGeometry, VectorField, rescale_to_thin

WELLS = np.array([[0.0, -1.0], [1.0, 0.0], [0.0, 1.0]])


def test_three_well_constants():
    f = three_well_density()
    assert f.p == 6 and f.dims == 2
    assert f.C == 64.0
    for z in WELLS:
        assert f(z) == 0.0
    assert f([0.0, 0.0]) == 1.0
    assert np.isclose(f([2.0, 0.0]), 25.0)


def test_energy_examples():
    g = GridGeometry.unit(2, (8, 8))
    assert np.isclose(energy(PNormDensity(p=2), VectorField.constant(g, [1.0, 0.0])), 1.0)
    f = three_well_density()
    assert energy(f, VectorField.constant(g, [1.0, 0.0])) == 0.0
    assert np.isclose(energy(f, VectorField.zeros(g)), 1.0)


@given(hnp.arrays(float, (4, 4, 2), elements=st.floats(-3, 3)), st.floats(0.1, 5), st.floats(0.1, 5))
@settings(max_examples=40, deadline=None)
def test_energy_linear_in_f_and_permutation_invariant(vals, a, b):
    g = GridGeometry.unit(2, (4, 4))
    u = VectorField(g, vals)
    f1, f2 = PNormDensity(p=2), three_well_density()
    comb = CallableDensity(lambda mu: a * f1.evaluate(mu) + b * f2.evaluate(mu), p=6, C=64)
    assert np.isclose(energy(comb, u), a * energy(f1, u) + b * energy(f2, u), rtol=1e-10, atol=1e-10)
    perm = np.random.default_rng(0).permutation(16)
    shuffled = VectorField(g, vals.reshape(16, 2)[perm].reshape(4, 4, 2))
    assert np.isclose(energy(f2, shuffled), energy(f2, u), rtol=1e-12, atol=1e-12)


@given(st.lists(st.integers(0, 3), min_size=16, max_size=16), st.integers(0, 15), st.floats(1e-3, 0.5))
@settings(max_examples=40, deadline=None)
def test_multiwell_energy_zero_iff_wells(labels, cell, shift):
    g = GridGeometry.unit(2, (4, 4))
    pts = np.vstack([WELLS, [[0.0, 0.0]]])
    vals = pts[np.asarray(labels)].reshape(4, 4, 2)
    E = energy(three_well_density(), VectorField(g, vals))
    assert (E == 0.0) == (3 not in labels)
    vals = WELLS[np.asarray(labels) % 3].reshape(4, 4, 2).copy()
    assert energy(three_well_density(), VectorField(g, vals)) == 0.0
    vals.reshape(16, 2)[cell] += shift
    assert energy(three_well_density(), VectorField(g, vals)) > 0.0


def test_energy_rescaling_identity_piecewise_constant():
    g = GridGeometry.unit(2, (6, 10))
    rng = np.random.default_rng(5)
    u = VectorField(g, rng.integers(-2, 3, size=(6, 10, 2)).astype(float))
    f = three_well_density()
    assert abs(energy(f, rescale_to_thin(u, 0.125)) / 0.125 - energy(f, u)) <= 1e-12 * max(1, energy(f, u))


def test_nonfinite_density_reports_cell():
    g = GridGeometry.unit(2, (3, 3))
    f = CallableDensity(lambda mu: 1.0 / mu[..., 0], p=2, C=1)
    vals = np.ones((3, 3, 2))
    vals[1, 2, 0] = 0.0
    with np.errstate(divide="ignore"):
        with pytest.raises(DensityEvaluationError) as ei:
            energy(f, VectorField(g, vals))
    assert ei.value.cell == (1, 2)


def test_check_structure_examples():
    rep = check_structure(PNormDensity(p=3, C=1), {"dims": 2, "radius": 4, "points": 21})
    assert rep.ok and rep.growth_margin >= 0 and rep.coercivity_margin >= 0
    rep = check_structure(three_well_density(), {"dims": 2, "radius": 4, "points": 81})
    assert rep.ok
    neg = CallableDensity(lambda mu: -np.sum(mu * mu, axis=-1), p=2, C=10)
    rep = check_structure(neg, sample_lattice(2, 10, 11))
    assert not rep.coercivity_ok and np.linalg.norm(rep.worst_coercivity_point) > 9


def test_three_well_C64_brute_force_oracle():
    pts = sample_lattice(2, 4.0, 161)
    f = three_well_density()
    vals = f(pts)
    r6 = np.linalg.norm(pts, axis=1) ** 6
    # growth oracle: f <= C(|mu|^6 + 1) with the worst ratio well below C
    ratio = np.max(vals / (r6 + 1))
    print(f"max f/(|mu|^6+1) on |mu|<=4 lattice: {ratio:.4f}")
    assert ratio <= 64
    assert np.all(vals >= r6 / 64 - 64)


def test_density_config_roundtrip(tmp_path):
    cfg = {"type": "multiwell", "wells": WELLS.tolist()}
    f = density_from_config(cfg)
    assert isinstance(f, MultiWellDensity) and f.C == 64
    path = tmp_path / "d.json"
    path.write_text(json.dumps(f.to_config()))
    g = density_from_config(str(path))
    assert np.array_equal(g.wells, f.wells) and g.C == f.C
    assert isinstance(density_from_config('{"type": "pnorm", "p": 2}'), PNormDensity)
    with pytest.raises(ValueError):
        density_from_config({"type": "nope"})


def test_piecewise_density():
    boxes = [Box((0.0, 0.0), (1.0, 0.5)), Box((0.0, 0.5), (1.0, 1.0))]
    f = PiecewiseDensity(boxes, [three_well_density(), PNormDensity(p=2, C=1)])
    assert f.p == 6 and f.C == 64
    assert f([1.0, 0.0], [0.5, 0.25]) == 0.0
    assert f([1.0, 0.0], [0.5, 0.75]) == 1.0
    g = GridGeometry.unit(2, (4, 4))
    vals = cell_density_values(f, VectorField.constant(g, [1.0, 0.0]))
    assert np.all(vals[:, :2] == 0) and np.all(vals[:, 2:] == 1)
    assert np.isclose(energy(f, VectorField.constant(g, [1.0, 0.0])), 0.5)
    cfg = f.to_config()
    back = density_from_config(cfg)
    assert back([1.0, 0.0], [0.5, 0.75]) == 1.0
    with pytest.raises(TypeError):
        f([0.0, 0.0])
    assert check_structure(f, {"dims": 2, "radius": 3, "points": 31}).ok
