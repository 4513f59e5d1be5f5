"""Spectral projector, cutoff-then-project pipeline and the negative-Sobolev estimator."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from thinrelax.grid import GeometryError, GridGeometry, VectorField, div_eps
from thinrelax.laminate import ex2_sequence
from thinrelax.projection import (NegSobolevEstimator, SpectralProjector, interior_cutoff, neg_sobolev_norm,
                                  project, project_asymptotic, sine_mode_norm, spectral_div_eps)


def _random_field(res, eps, seed, lengths=None):
    N = len(res)
    omega = tuple((0.0, L) for L in (lengths or (1.0,) * (N - 1)))
    g = GridGeometry(omega, tuple(res))
    rng = np.random.default_rng(seed)
    return VectorField(g, rng.standard_normal(g.resolution + (N,)), eps)


def _naive_projection(u: VectorField, eps: float) -> np.ndarray:
    """Full complex FFT and an explicit 2x2 projector per mode (odd sizes only)."""
    g = u.geom
    n1, n2 = g.resolution
    assert n1 % 2 and n2 % 2
    uh = np.stack([np.fft.fft2(u.values[..., c]) for c in range(2)], axis=-1)
    out = np.zeros_like(uh)
    m1s = np.fft.fftfreq(n1, 1.0 / n1)
    m2s = np.fft.fftfreq(n2, 1.0 / n2)
    for i, m1 in enumerate(m1s):
        for j, m2 in enumerate(m2s):
            a = np.array([2 * np.pi * m1 / g.lengths[0], 2 * np.pi * m2 / g.lengths[1] / eps])
            if not a.any():
                out[i, j] = uh[i, j]
                continue
            a /= np.linalg.norm(a)
            out[i, j] = uh[i, j] - a * (a @ uh[i, j])
    return np.stack([np.fft.ifft2(out[..., c]).real for c in range(2)], axis=-1)


def test_constant_passes_through():
    g = GridGeometry.unit(2, (16, 8))
    u = VectorField.constant(g, [0.3, -1.2], 0.1)
    assert np.allclose(project(SpectralProjector(g, 0.1), u).values, u.values, atol=1e-15)


@pytest.mark.parametrize("eps", [1.0, 0.1])
def test_single_mode_parallel_and_orthogonal(eps):
    g = GridGeometry.unit(2, (16, 32))
    P = SpectralProjector(g, eps)
    par = VectorField.from_function(g, lambda x, y: (0 * x + 0 * y, np.sin(2 * np.pi * y) + 0 * x), eps)
    assert np.abs(P.apply(par).values).max() <= 1e-14
    orth = VectorField.from_function(g, lambda x, y: (np.sin(2 * np.pi * y) + 0 * x, 0 * x + 0 * y), eps)
    assert np.abs(P.apply(orth).values - orth.values).max() <= 1e-14


@pytest.mark.parametrize("res", [(15, 21), (9, 25)])
def test_matches_naive_mode_loop(res):
    eps = 0.2
    u = _random_field(res, eps, 3, lengths=(0.7,))
    v = SpectralProjector(u.geom, eps).apply(u)
    assert np.abs(v.values - _naive_projection(u, eps)).max() <= 1e-12


def test_projector_properties_random_fields():
    for res, eps in [((64, 64), 0.1), ((64, 64), 1.0), ((32, 33, 64), 0.25), ((17, 64), 0.05)]:
        u = _random_field(res, eps, 11)
        P = SpectralProjector(u.geom, eps)
        v = P.apply(u)
        vv = P.apply(v)
        scale = np.abs(u.values).max()
        idem = np.abs(vv.values - v.values).max() / scale
        div = np.abs(spectral_div_eps(v, eps)).max() / np.abs(spectral_div_eps(u, eps)).max()
        print(f"{res} eps={eps}: idempotence {idem:.2e}, relative spectral div {div:.2e}")
        assert idem <= 1e-10 and div <= 1e-10
        assert v.lp_norm(2) <= u.lp_norm(2) * (1 + 1e-12)


@given(st.integers(0, 2 ** 32 - 1), st.floats(-3, 3), st.floats(-3, 3), st.floats(0.01, 2.0))
@settings(max_examples=25, deadline=None)
def test_linearity_and_contraction(seed, a, b, eps):
    u = _random_field((16, 12), eps, seed)
    w = _random_field((16, 12), eps, seed + 1)
    P = SpectralProjector(u.geom, eps)
    lhs = P.apply(VectorField(u.geom, a * u.values + b * w.values, eps)).values
    rhs = a * P.apply(u).values + b * P.apply(w).values
    assert np.abs(lhs - rhs).max() <= 1e-12 * (1 + abs(a) + abs(b)) * np.abs(u.values).max()
    assert P.apply(u).lp_norm(2) <= u.lp_norm(2) * (1 + 1e-12)


def test_fixed_point_on_div_free_fields():
    g = GridGeometry.unit(2, (64, 64))
    eps = 0.1
    # stream function: u = (d_2 s, -eps d_1 s) has spectral div_eps = 0 exactly
    u = VectorField.from_function(
        g, lambda x, y: (2 * np.pi * np.sin(4 * np.pi * x) * np.cos(2 * np.pi * y),
                         -eps * 4 * np.pi * np.cos(4 * np.pi * x) * np.sin(2 * np.pi * y)), eps)
    v = SpectralProjector(g, eps).apply(u)
    assert np.abs(v.values - u.values).max() <= 1e-12 * np.abs(u.values).max()


def test_mismatched_grid():
    P = SpectralProjector(GridGeometry.unit(2, (8, 8)), 0.5)
    with pytest.raises(GeometryError):
        P.apply(VectorField.zeros(GridGeometry.unit(2, (8, 16))))
    with pytest.raises(ValueError):
        SpectralProjector(GridGeometry.unit(2, (8, 8)), 0.0)


def test_project_asymptotic_errors_and_identity():
    g = GridGeometry.unit(2, (64, 64))
    u = VectorField.constant(g, [0.0, 1.0], 0.2)
    with pytest.raises(ValueError):
        project_asymptotic(u, 0.2, cutoff_margin=0.5 / 64)
    with pytest.raises(ValueError):
        project_asymptotic(u, 0.2, cutoff_margin=0.5)
    # spectrally div_eps-free field (d_2 s, -eps d_1 s) of a bump s, negligible outside the plateau
    n, eps = 256, 0.2
    g = GridGeometry.unit(2, (n, n))
    x, y = g.mesh()
    r2 = ((x - 0.5) ** 2 + (y - 0.5) ** 2) / 0.3 ** 2
    s = np.where(r2 < 1, np.exp(-1 / np.maximum(1 - r2, 1e-300)), 0.0)
    sh = np.fft.rfft2(s)
    sh[n // 2, :] = 0
    sh[:, n // 2] = 0
    k1 = 2 * np.pi * np.fft.fftfreq(n, 1 / n)[:, None]
    k2 = 2 * np.pi * np.arange(n // 2 + 1)[None, :]
    vals = np.stack([np.fft.irfft2(1j * k2 * sh, s=(n, n)), np.fft.irfft2(-eps * 1j * k1 * sh, s=(n, n))], axis=-1)
    w = VectorField(g, vals, eps)
    assert np.abs(spectral_div_eps(w, eps)).max() <= 1e-12 * np.abs(vals).max() * n
    assert np.abs(SpectralProjector(g, eps).apply(w).values - vals).max() <= 1e-12 * np.abs(vals).max()
    res = project_asymptotic(w, eps, cutoff_margin=0.1)
    # w - P(phi w) = P((1 - phi) w), and P is an L^2 contraction
    leak = w.scaled(1 - res.cutoff).lp_norm(2)
    print(f"near-identity case: ||w - Pw||_2 = {res.error:.2e}, leakage bound {leak:.2e}")
    assert res.error <= leak * (1 + 1e-9) + 1e-15 and res.error <= 1e-5 * w.lp_norm(2)


def test_project_asymptotic_constant_field_oracle():
    g = GridGeometry((( 0.0, 0.9),), (27, 35))
    eps = 0.3
    u = VectorField.constant(g, [0.4, 1.0], eps)
    res = project_asymptotic(u, eps, cutoff_margin=0.2)
    oracle = _naive_projection(u.scaled(interior_cutoff(g, 0.2)), eps)
    assert np.abs(res.field.values - oracle).max() <= 1e-12
    assert res.error == pytest.approx((u - res.field).lp_norm(2))


def test_ex2_projection_error_decreases_in_k():
    eps = 1 / 8
    errs = []
    for k in (2, 4, 8, 16):
        g = GridGeometry.unit(2, (2048, 64))
        errs.append(project_asymptotic(ex2_sequence(eps, k, g), eps, cutoff_margin=0.05).error)
    print("ex2 projection errors k=2..16:", np.round(errs, 5))
    assert all(b <= a * 1.05 for a, b in zip(errs, errs[1:])) and errs[-1] < errs[0]


def test_estimator_zero_and_norms():
    g = GridGeometry.unit(2, (64, 64))
    est = NegSobolevEstimator(g, p=2, M=8)
    assert est.estimate(np.zeros(g.resolution)) == 0.0
    assert neg_sobolev_norm(np.zeros(g.resolution), est) == 0.0
    assert np.all(est.norms > 0) and np.all(np.isfinite(est.norms))
    for a, b in [(1, 1), (3, 5), (8, 2)]:
        assert est.norms[a - 1, b - 1] == pytest.approx(sine_mode_norm(a, b), rel=1e-10)
    est3 = NegSobolevEstimator(g, p=3, M=4)
    assert np.all(est3.norms > 0) and np.all(np.isfinite(est3.norms))
    # dictionary members vanish on the boundary: sin(a pi x) at x = 0 and x = L
    assert est.q == 2.0
    with pytest.raises(ValueError):
        NegSobolevEstimator(g, p=1.0)
    with pytest.raises(GeometryError):
        est.estimate(np.zeros((8, 8)))


def test_sine_mode_norm_quadrature():
    from scipy import integrate
    a, b, L = 2, 3, (0.5, 1.0)
    f = lambda y, x: (np.sin(a * np.pi * x / L[0]) * np.sin(b * np.pi * y / L[1])) ** 2 * (
        1 + 0) + (a * np.pi / L[0] * np.cos(a * np.pi * x / L[0]) * np.sin(b * np.pi * y / L[1])) ** 2 + (
        b * np.pi / L[1] * np.sin(a * np.pi * x / L[0]) * np.cos(b * np.pi * y / L[1])) ** 2
    val, _ = integrate.dblquad(f, 0, L[0], 0, L[1])
    assert sine_mode_norm(a, b, L) == pytest.approx(np.sqrt(val), rel=1e-9)


def _bump_profile(y):
    return np.sin(np.pi * y) ** 2


def test_estimator_one_over_k_decay():
    g = GridGeometry.unit(2, (512, 64))
    est = NegSobolevEstimator(g, p=2, M=64)
    x, y = g.mesh()
    vals = [est.estimate(np.sin(2 * np.pi * k * x) * _bump_profile(y)) for k in (8, 16, 32)]
    print("estimates at k = 8, 16, 32:", vals)
    for (k0, v0), (k1, v1) in zip(zip((8, 16), vals), zip((16, 32), vals[1:])):
        assert v1 <= v0 * (k0 / k1) * 2
    assert vals[0] > vals[1] > vals[2]


def test_estimator_monotone_under_enlargement():
    g = GridGeometry.unit(2, (128, 128))
    rng = np.random.default_rng(5)
    gval = rng.standard_normal(g.resolution)
    prev = 0.0
    for M in (4, 8, 16, 32):
        e = NegSobolevEstimator(g, p=2, M=M).estimate(gval)
        assert e >= prev - 1e-15
        prev = e
    # brute force over a denser dictionary never falls below
    x, y = g.mesh()
    best = 0.0
    for a in range(1, 41):
        for b in range(1, 41):
            phi = np.sin(a * np.pi * x) * np.sin(b * np.pi * y)
            best = max(best, abs(np.sum(gval * phi) * g.cell_volume) / sine_mode_norm(a, b))
    assert prev <= best * (1 + 1e-3)


def test_ex2_divergence_estimate_decays():
    eps = 1 / 8
    g = GridGeometry.unit(2, (1024, 64))
    est = NegSobolevEstimator(g, p=2, M=16)
    vals = [est.estimate(div_eps(ex2_sequence(eps, k, g), eps)) for k in (1, 2, 4, 8)]
    print("div residual estimates:", vals)
    assert all(b < a for a, b in zip(vals, vals[1:]))
