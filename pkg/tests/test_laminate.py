"""Laminate profiles, ub1/ub2 fields, corrector, cutoffs and the counterexample field."""

from __future__ import annotations

import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from thinrelax.convexify import CaratheodoryDecomposition, pairwise_split
from thinrelax.grid import GridGeometry, VectorField, div_eps, horizontal_divergence, is_in_U0
from thinrelax.laminate import (SMOOTHSTEP_SLOPE, CutoffInfeasibleError, CutoffProfile, DegeneratePairError,
                                EmptySlabWarning, LaminatePlan, corrector, ex2_divergence, ex2_sequence,
                                horizontal_cutoff, horizontal_eta, slab_cutoff, slab_union_mask, smoothstep,
                                smoothstep_derivative, two_point_profile, ub1_field, ub2_assemble,
                                volume_fractions, zeta_perp)
from thinrelax.projection import NegSobolevEstimator

Z1, Z3 = np.array([0.0, -1.0]), np.array([0.0, 1.0])


def _three_well_plan(eps, k, J=(0.0, 1.0)):
    dec = CaratheodoryDecomposition(np.zeros(2), np.array([Z1, Z3]), np.array([0.5, 0.5]), np.zeros(2), 0.0)
    return LaminatePlan.from_split(pairwise_split(dec), J, eps, k)


def test_smoothstep():
    t = np.linspace(-0.5, 1.5, 2001)
    s = smoothstep(t)
    assert s.min() == 0.0 and s.max() == 1.0
    assert np.all(np.diff(s) >= 0)
    assert np.isclose(smoothstep_derivative(0.5), SMOOTHSTEP_SLOPE)
    assert np.abs(smoothstep_derivative(t)).max() <= SMOOTHSTEP_SLOPE + 1e-15


def test_cutoff_profile_plateau_and_gradient():
    prof = slab_cutoff((0.2, 0.8), 0.05)
    t = np.linspace(0, 1, 100001)
    v = prof(t)
    assert np.all((v >= 0) & (v <= 1))
    plo, phi = prof.plateau
    assert np.all(v[(t >= plo[0]) & (t <= phi[0])] == 1.0)
    assert np.all(v[(t <= 0.25) | (t >= 0.75)] == 0.0)
    grad = np.abs(np.diff(v) / np.diff(t)).max()
    assert grad <= prof.max_gradient * (1 + 1e-6)


def test_two_point_profile_examples():
    w = two_point_profile(Z3, Z1, 0.5, 1)
    assert np.array_equal(w(0.25), Z3) and np.array_equal(w(0.75), Z1)
    assert np.array_equal(w.mean(), [0.0, 0.0])
    w4 = two_point_profile([1.0, 0.0], [0.0, 0.0], 0.25, 4)
    t = (np.arange(400000) + 0.5) / 400000
    assert abs(np.mean(w4.selects_a(t)) - 0.25) <= 1e-12
    with pytest.raises(ValueError):
        two_point_profile(Z1, Z3, 1.0, 2)


def test_zeta_perp_deterministic():
    zp = zeta_perp([0.0, 3.0], [0.0, -1.0])
    assert np.array_equal(zp, [1.0, 0.0])
    zp = zeta_perp([1.0, 1.0, 0.0], [0.0, 0.0, 0.0])
    assert abs(zp @ [1.0, 1.0, 0.0]) < 1e-15 and np.isclose(np.linalg.norm(zp), 1.0)
    with pytest.raises(DegeneratePairError):
        zeta_perp([1.0, 2.0], [1.0, 2.0])


def test_ub1_support_sup_and_periodicity():
    eps, k = 1 / 8, 4
    g = GridGeometry.unit(2, (1024, 256))
    z1, z2 = np.array([0.0, 1.0]), np.array([0.0, -1.0])
    I = (0.2, 0.9)
    v = ub1_field(z1, z2, 0.5, I, eps, k, g)
    assert np.abs(v.values).max() <= max(np.linalg.norm(z1), np.linalg.norm(z2))
    # support inside the eps-periodic copies of I^[eps]
    t = (g.centers(1) / eps) % 1.0
    outside = (t <= I[0] + eps) | (t >= I[1] - eps)
    assert np.all(v.values[:, outside] == 0)
    # eps-periodicity in x_N: 32 cells per slab
    assert np.allclose(v.values[:, :-32], v.values[:, 32:], atol=0)
    with pytest.raises(DegeneratePairError):
        ub1_field(z1, z1, 0.5, I, eps, k, g)


def test_ub1_fraction_convergence():
    eps, I = 1 / 16, (0.25, 0.75)
    z1, z2 = np.array([0.0, 0.75]), np.array([0.0, -0.25])
    g = GridGeometry(((0.0, 1 / 48),), (10923, 64))
    devs = []
    for k in (16, 64, 256):
        v = ub1_field(z1, z2, 0.25, I, eps, k, g)
        fr = volume_fractions(v, [z1, z2])
        devs.append(np.abs(fr.fractions - np.array([0.25, 0.75]) * 0.5).max())
        print(f"k={k} fractions {fr.fractions} deviation {devs[-1]:.3e}")
        assert devs[-1] <= 2 / k
    assert devs[0] > devs[1] > devs[2]


def test_ub2_trivial_and_three_well():
    eps, k = 1 / 16, 8
    dec = CaratheodoryDecomposition(np.zeros(2), np.zeros((1, 2)), np.ones(1), np.zeros(1), 0.0)
    plan0 = LaminatePlan.from_split(pairwise_split(dec), (0.0, 1.0), eps, k)
    g = GridGeometry.unit(2, (256, 64))
    y, z = ub2_assemble(plan0, g)
    assert not y.values.any() and not z.values.any()
    eps, k = 1 / 8, 4
    plan = _three_well_plan(eps, k, (0.0, 0.5))
    g = GridGeometry.unit(2, (2048, 128))  # 8 cells per period, 16 per slab
    y, z = ub2_assemble(plan, g)
    assert is_in_U0(y, 0.0) and np.abs(horizontal_divergence(y)).max() == 0
    K = slab_union_mask(g, plan.J, eps)
    fr = volume_fractions(y + z, [Z1, Z3], mask=np.broadcast_to(K, g.resolution))
    print(f"slab fractions on K_n: {fr.fractions}, remainder {fr.remainder}")
    # psi vanishes on the outer eps of each slab: ramp cells are the remainder
    assert np.allclose(fr.fractions, 0.5 * (1 - fr.remainder), atol=2 / k)
    assert np.all((y + z).values[:, ~K] == 0)


def test_ub2_weak_mean_of_y():
    # y averages to sum alpha_ij |I_ij| bar_ij = 0 over the slab union
    P = np.array([[1.0, 0.0], [-1.0, 1.0], [-1.0, -1.0]])
    w = np.array([0.4, 0.3, 0.3])
    xi = w @ P
    dec = CaratheodoryDecomposition(np.zeros(2), P - xi, w, np.zeros(3), 0.0)
    sp = pairwise_split(dec)
    oracle = sum(sp.alpha[i, j] * sp.bars[i, j] for i, j in sp.pairs)
    assert np.abs(oracle).max() <= 1e-12
    for eps in (1 / 8, 1 / 32):
        plan = LaminatePlan.from_split(sp, (0.0, 1.0), eps, 4)
        g = GridGeometry.unit(2, (64, int(64 / eps)))
        y, _ = ub2_assemble(plan, g)
        K = np.broadcast_to(slab_union_mask(g, plan.J, eps), g.resolution)
        mean = y.values[K].mean(axis=0)
        print(f"eps={eps}: mean of y over K_n {mean}")
        assert np.abs(mean).max() <= 4 / (64 / eps * eps) * np.abs(P).max()


def test_ub2_empty_slab_warning():
    plan = _three_well_plan(0.25, 2, (0.0, 0.3))
    g = GridGeometry.unit(2, (16, 16))
    with pytest.warns(EmptySlabWarning):
        y, z = ub2_assemble(plan, g)
    assert not y.values.any() and not z.values.any()


def test_plan_roundtrip(tmp_path):
    plan = _three_well_plan(0.125, 3, (0.1, 0.9))
    assert abs(sum(b - a for _, (a, b) in plan.intervals) - 1.0) <= 1e-15
    path = plan.save(tmp_path / "plan.json")
    import json
    back = LaminatePlan.from_dict(json.loads(path.read_text()))
    assert back.intervals == plan.intervals and np.array_equal(back.bars, plan.bars)
    with pytest.raises(ValueError):
        LaminatePlan(plan.points, plan.weights, plan.alpha, plan.beta, plan.bars, (0.5, 1.5), 0.1, 1)


def test_corrector_examples():
    g = GridGeometry.unit(2, (16, 20))
    u = VectorField.from_function(g, lambda x, y: (0 * x + 0 * y + 0.3, 0 * x + 0 * y + 0.7), 0.2)
    assert np.array_equal(corrector(u).values, u.values)
    u = VectorField.from_function(g, lambda x, y: (x + 0 * y, 0 * x + 0 * y), 0.1)
    v = corrector(u, 0.1)
    h = g.spacing[1]
    expected = -0.1 * (g.centers(1) - h / 2)
    assert np.allclose(v.values[..., 1], expected[None, :], atol=1e-14)
    d = div_eps(v, 0.1)[:, :-1]
    assert np.abs(d).max() <= 1e-13 * (1 / h / 0.1)
    assert np.abs(v.values - u.values).max() <= 0.1 * np.abs(horizontal_divergence(u)).max() + 1e-15


def test_corrector_rejects_non_U0():
    g = GridGeometry.unit(2, (8, 8))
    u = VectorField.from_function(g, lambda x, y: (0 * x, y + 0 * x))
    with pytest.raises(ValueError):
        corrector(u)


@given(st.integers(2, 6), st.integers(1, 3))
@settings(max_examples=15, deadline=None)
def test_corrected_laminate_is_div_free(k, level):
    eps = 2.0 ** -(level + 1)
    plan = _three_well_plan(eps, k, (0.0, 1.0))
    g = GridGeometry.unit(2, (64 * k, int(8 / eps)))
    y, _ = ub2_assemble(plan, g)
    eta = horizontal_eta(g, [(0.0, 1.0)], 0.2)
    yc = corrector(y.scaled(eta), eps)
    d = div_eps(yc, eps)
    assert np.abs(d).max() <= 1e-13 * max(1.0, np.abs(yc.values).max() / g.spacing.min() / eps)


def test_horizontal_cutoff():
    eps, K = 1 / 64, 1.0
    g = GridGeometry.unit(2, (512, 8))
    c = np.array([0.6, 0.0])
    out = horizontal_cutoff(VectorField.constant(g, c, eps), [(0.0, 1.0)], K, eps)
    dprime = np.abs(horizontal_divergence(out)).max()
    bound = eps ** -0.5 * np.linalg.norm(c) / (K * (np.linalg.norm(c) + 1))
    print(f"max |div' (eta c)'| = {dprime:.4f}, bound {bound:.4f}")
    assert dprime <= bound * (1 + 1e-9) <= eps ** -0.5
    W = SMOOTHSTEP_SLOPE * K * (np.linalg.norm(c) + 1) * eps ** 0.5
    x = g.centers(0)
    deep = (x >= W) & (x <= 1 - W)
    assert np.array_equal(out.values[deep], np.broadcast_to(c, out.values[deep].shape))
    assert not horizontal_cutoff(VectorField.zeros(g, eps), [(0.0, 1.0)], K, eps).values.any()
    with pytest.raises(CutoffInfeasibleError):
        horizontal_cutoff(VectorField.constant(g, c, 0.25), [(0.0, 1.0)], 5.0, 0.25)


def test_volume_fractions_basic():
    g = GridGeometry.unit(2, (4, 4))
    fr = volume_fractions(VectorField.constant(g, Z1), [Z1, Z3])
    assert np.array_equal(fr.fractions, [1.0, 0.0]) and fr.remainder == 0.0
    with pytest.raises(ValueError):
        volume_fractions(VectorField.constant(g, Z1), [Z1, Z1 + 1e-13])


def test_ex2_fractions_cell_count():
    eps, k = 1 / 8, 64
    g = GridGeometry.unit(2, (1024, 512))
    v = ex2_sequence(eps, k, g)
    fr = volume_fractions(v, [Z1, Z3, [0.0, 0.0]])
    ramp = 1 - fr.fractions.sum()
    print(f"ex2 fractions {fr.fractions}, ramp cells {ramp:.4f}")
    assert fr.fractions[2] == 0.5
    for j in range(2):
        assert abs(fr.fractions[j] + ramp / 2 - 0.25) <= 2 / k


def test_ex2_structure():
    eps, k = 1 / 8, 4
    g = GridGeometry.unit(2, (256, 128))
    v = ex2_sequence(eps, k, g)
    x2 = g.centers(1)
    assert not v.values[:, x2 >= 0.5].any()
    prof = CutoffProfile("vertical", (0.0,), (1.0,), eps, 0.0)
    plateau = (x2 < 0.5) & (prof(2 * x2) == 1.0)
    vals = v.values[:, plateau].reshape(-1, 2)
    assert np.all(np.all(vals == Z1, axis=1) | np.all(vals == Z3, axis=1))


def test_ex2_divergence_matches_closed_form():
    # the forward stencil of cell j is centred at the face x_2 + h/2
    eps, k = 1 / 4, 2
    errs = []
    for n2 in (256, 512, 1024, 2048):
        g = GridGeometry.unit(2, (64, n2))
        v = ex2_sequence(eps, k, g)
        d = div_eps(v, eps)
        exact = ex2_divergence(eps, k, g, shift=g.spacing[1] / 2)
        errs.append(np.abs(d - exact)[:, :-1].max())
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    print("ex2 divergence errors", np.array(errs), "orders", rates)
    assert rates.min() >= 1.8 and rates[-1] >= 1.9


def test_ex2_div_residual_decays_in_k():
    eps = 1 / 4
    vals = []
    for k in (1, 2):
        g = GridGeometry.unit(2, (64 * k, 64))
        est = NegSobolevEstimator(g, p=2, M=16)
        vals.append(est.estimate(div_eps(ex2_sequence(eps, k, g), eps)))
    g = GridGeometry.unit(2, (256, 64))
    vals.append(NegSobolevEstimator(g, p=2, M=16).estimate(div_eps(ex2_sequence(eps, 4, g), eps)))
    print("div residual estimates k=1,2,4:", vals)
    assert vals[0] > vals[1] > vals[2]
