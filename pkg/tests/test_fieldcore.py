import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from maglattice.fieldcore import (DomainError, FiniteDomain, LatticeGeometry, MagnetizationPattern, PeriodicField,
                                  PhysicalParams, ValidationError, basis_derivative_rows, finite_pattern_potential,
                                  kernel_value, polygon_gradient_batch, polygon_potential, random_pattern,
                                  read_pattern, segment_kernel, spectrum_of, write_pattern)
from oracles import richardson, tiled_gradient, tiled_potential


def _square(side=1.0, center=(0.0, 0.0)):
    h = side / 2
    cx, cy = center
    return np.array([[cx - h, cy - h], [cx + h, cy - h], [cx + h, cy + h], [cx - h, cy + h]])


def test_square_solid_angle_on_axis():
    # closed form for a centred square of side s seen from height z
    s, z = 1.3, 0.7
    omega = 4 * np.arctan(s**2 / (4 * z * np.sqrt(z**2 + s**2 / 2)))
    assert polygon_potential(FiniteDomain(_square(s)), [0, 0, z]) == pytest.approx(omega / (2 * np.pi), rel=1e-14)


def test_polygon_orientation_and_fan_invariance():
    poly = np.array([[0, 0], [2, 0], [2.5, 1], [1, 2.2], [-0.4, 1.1]])
    r = [0.3, 0.9, 0.45]
    ccw = polygon_potential(FiniteDomain(poly), r)
    cw = polygon_potential(FiniteDomain(poly[::-1]), r)
    rolled = polygon_potential(FiniteDomain(np.roll(poly, 2, axis=0)), r)
    assert cw == pytest.approx(ccw, rel=1e-13)
    assert rolled == pytest.approx(ccw, rel=1e-13)


def test_polygon_matches_kernel_quadrature():
    from scipy import integrate
    r = np.array([0.2, -0.1, 0.6])
    val, _ = integrate.dblquad(lambda y, x: kernel_value(r[0] - x, r[1] - y, r[2]), -0.5, 0.5, -0.5, 0.5,
                               epsabs=1e-13, epsrel=1e-13)
    assert polygon_potential(FiniteDomain(_square()), r) == pytest.approx(val, rel=1e-10)


def test_nonconvex_polygon_is_additive():
    # L shape = union of two rectangles
    L = np.array([[0, 0], [2, 0], [2, 1], [1, 1], [1, 2], [0, 2.0]])
    a = np.array([[0, 0], [2, 0], [2, 1], [0, 1.0]])
    b = np.array([[0, 1], [1, 1], [1, 2], [0, 2.0]])
    pts = np.array([[0.5, 0.5, 0.3], [1.5, 1.5, 0.2], [3.0, -1.0, 1.0]])
    whole = finite_pattern_potential([FiniteDomain(L)], pts)
    parts = finite_pattern_potential([FiniteDomain(a), FiniteDomain(b)], pts)
    np.testing.assert_allclose(whole, parts, rtol=1e-13)


def test_polygon_gradient_matches_finite_difference():
    poly = np.array([[0, 0], [1.5, 0.2], [1.0, 1.3], [0.1, 0.9]])
    r = np.array([0.4, 0.5, 0.35])
    grad = polygon_gradient_batch(poly[None], r[None])[0, 0]

    def fd(h):
        return np.array([(polygon_potential(FiniteDomain(poly), r + h * e) - polygon_potential(FiniteDomain(poly), r - h * e))
                         / (2 * h) for e in np.eye(3)])

    ref = (4 * fd(1e-4) - fd(2e-4)) / 3
    np.testing.assert_allclose(grad, ref, rtol=1e-8, atol=1e-10)


def test_segment_kernel_infinite_wire_limit():
    # a long segment along x, observer at distance rho: |B| -> mu0 I / (2 pi rho), i.e. 2/rho here
    rho = 0.37
    P = np.array([0.0, 0.0, rho])
    K = segment_kernel(np.array([-1e6, 0, 0]) - P, np.array([1e6, 0, 0]) - P)
    assert np.linalg.norm(K) == pytest.approx(2 / rho, rel=1e-10)
    # current along +x, observer above: field along -y
    assert K[1] < 0 and abs(K[0]) < 1e-12 and abs(K[2]) < 1e-12


def test_invalid_inputs():
    with pytest.raises(ValidationError):
        FiniteDomain(np.array([[0, 0], [1, 1], [1, 0], [0, 1.0]]))  # bow tie
    with pytest.raises(ValidationError):
        FiniteDomain(np.array([[0, 0], [1, 0], [2, 0.0]]))
    with pytest.raises(DomainError):
        polygon_potential(FiniteDomain(_square()), [0, 0, 0])
    g = LatticeGeometry(np.pi / 2, 4, 4)
    with pytest.raises(ValidationError):
        MagnetizationPattern(g, np.ones((3, 4)))
    with pytest.raises(ValidationError):
        MagnetizationPattern(g, np.full((4, 4), 1.5))
    with pytest.raises(DomainError):
        PeriodicField.from_pattern(MagnetizationPattern.uniform(g)).potential([0, 0, -0.1])
    with pytest.raises(ValidationError):
        LatticeGeometry(0.0, 4, 4)
    with pytest.raises(ValidationError):
        PhysicalParams(Mz=-1.0)


@pytest.mark.property
def test_laplace_and_trace_at_random_points(rng):
    # 1000 points spread over three lattices
    for zeta, n in ((np.pi / 2, 8), (np.pi / 3, 8), (1.2, 7)):
        g = LatticeGeometry(zeta, n, n)
        ev = PeriodicField.from_pattern(random_pattern(g, rng), zmin=0.1)
        count = 334 if zeta != 1.2 else 332
        pts = np.column_stack([rng.uniform(-1, 2, (count, 2)), rng.uniform(0.1, 1.5, count)])
        _, u, v, w = ev.expansion_arrays(pts, 3)
        vs = np.abs(v).max(axis=(1, 2))
        ws = np.abs(w).max(axis=(1, 2, 3))
        assert np.all(np.abs(np.trace(v, axis1=1, axis2=2)) <= 1e-8 * vs)
        # every contraction of w over a pair of indices vanishes
        assert np.all(np.abs(np.einsum("mkii->mk", w)) <= 1e-8 * ws[:, None])
        # symmetric tensors
        np.testing.assert_allclose(v, v.transpose(0, 2, 1), atol=1e-14 * vs.max())
        np.testing.assert_allclose(w, w.transpose(0, 2, 1, 3), atol=1e-14 * ws.max())


@pytest.mark.property
@pytest.mark.parametrize("zeta", [np.pi / 2, np.pi / 3, 1.2])
def test_fourier_matches_tiled_kernel(zeta, rng):
    g = LatticeGeometry(zeta, 3, 3)
    for _ in range(2):
        pat = random_pattern(g, rng)
        if pat.values.min() == pat.values.max():
            continue
        for z in (0.1, 0.35, 1.0):
            r = np.r_[rng.random(2), z]
            u = PeriodicField.from_pattern(pat, zmin=z).expansion(r, 1).u
            ref = richardson(lambda R: tiled_gradient(pat, r, R))
            assert np.abs(u - ref).max() <= 1e-6 * np.abs(u).max()


def test_fourier_potential_matches_tiled_kernel(rng):
    g = LatticeGeometry(np.pi / 3, 3, 3)
    pat = random_pattern(g, rng)
    r = np.array([0.21, 0.43, 0.2])
    psi = PeriodicField.from_pattern(pat, zmin=0.2).potential(r)[0]
    ref = richardson(lambda R: tiled_potential(pat, r, R))
    assert psi == pytest.approx(ref, rel=1e-8)


def test_uniform_film_has_no_field():
    g = LatticeGeometry(np.pi / 3, 5, 5)
    ev = PeriodicField.from_pattern(MagnetizationPattern.uniform(g, 1.0))
    pts = np.array([[0.1, 0.2, 0.3], [1.3, -0.4, 0.9]])
    np.testing.assert_allclose(ev.field(pts), 0.0, atol=1e-15)
    np.testing.assert_allclose(ev.potential(pts), 1.0, rtol=1e-14)


@pytest.mark.property
def test_derivatives_match_richardson_differences(geometry, rng):
    ev = PeriodicField.from_pattern(random_pattern(geometry, rng), zmin=0.2)
    r = np.array([0.31, 0.17, 0.4])
    psi, u, v, w = ev.expansion_arrays(r[None], 3)
    h = 1e-3

    def central(f, step):
        out = []
        for e in np.eye(3):
            out.append((f(r + step * e) - f(r - step * e)) / (2 * step))
        return np.array(out)

    def rich(f):
        return (4 * central(f, h / 2) - central(f, h)) / 3

    fu = rich(lambda x: ev.expansion_arrays(x[None], 1)[0][0])
    fv = rich(lambda x: ev.expansion_arrays(x[None], 1)[1][0])
    fw = rich(lambda x: ev.expansion_arrays(x[None], 2)[2][0])
    assert np.abs(fu - u[0]).max() <= 1e-7 * np.abs(u).max()
    assert np.abs(fv - v[0]).max() <= 1e-7 * np.abs(v).max()
    assert np.abs(fw - w[0]).max() <= 1e-7 * np.abs(w).max()


def test_field_plane_matches_pointwise(geometry, rng):
    ev = PeriodicField.from_pattern(random_pattern(geometry, rng), zmin=0.3)
    xy, B, dB = ev.field_plane(0.3, 16, with_gradient=True)
    pts = np.column_stack([xy.reshape(-1, 2), np.full(256, 0.3)])
    np.testing.assert_allclose(B.reshape(-1, 3), ev.field(pts), atol=1e-12)
    _, _, v, _ = ev.expansion_arrays(pts, 2)
    np.testing.assert_allclose(dB.reshape(-1, 3, 3), -v, atol=1e-11)


def test_basis_rows_reproduce_derivatives(geometry, rng):
    pat = random_pattern(geometry, rng, binary=False)
    pt = (0.25, 0.4, 0.45)
    rows = basis_derivative_rows(geometry, [pt], ["x", "y", "z", "xz", "yy", "xyz", "psi"])
    ev = PeriodicField.from_pattern(pat, zmin=0.45)
    psi, u, v, w = ev.expansion_arrays(np.array([pt]), 3)
    expect = [*u[0], v[0, 0, 2], v[0, 1, 1], w[0, 0, 1, 2], psi[0]]
    np.testing.assert_allclose(rows @ pat.flat, expect, rtol=1e-11, atol=1e-13)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31), shift=st.integers(1, 5), z=st.floats(0.15, 1.0))
def test_linear_and_translation_covariant(seed, shift, z):
    rng = np.random.default_rng(seed)
    g = LatticeGeometry(np.pi / 3, 6, 6)
    a, b = random_pattern(g, rng, binary=False), random_pattern(g, rng, binary=False)
    r = np.array([0.3, 0.2, z])
    f = lambda p, pts: PeriodicField.from_pattern(p, zmin=z).field(pts)
    summed = MagnetizationPattern(g, 0.5 * (a.values + b.values))
    np.testing.assert_allclose(f(summed, r), 0.5 * (f(a, r) + f(b, r)), atol=1e-13)
    # rolling the pixels by `shift` columns moves the field by shift/n1 along a1
    rolled = MagnetizationPattern(g, np.roll(a.values, shift, axis=1))
    np.testing.assert_allclose(f(rolled, r + [shift / 6, 0, 0]), f(a, r), atol=1e-12)


def test_cutoff_mode_counts():
    tri = LatticeGeometry(np.pi / 3, 20, 20)
    ev = PeriodicField(spectrum_of(random_pattern(tri, np.random.default_rng(0))).with_cutoff(2.0), zmin=0.1)
    assert len(ev.knorm) == 13
    sq = LatticeGeometry(np.pi / 2, 20, 20)
    ev = PeriodicField(spectrum_of(random_pattern(sq, np.random.default_rng(0))).with_cutoff(1.0), zmin=0.1)
    assert len(ev.knorm) == 5


def test_pattern_file_round_trip(tmp_path, rng):
    g = LatticeGeometry(np.pi / 3, 7, 5)
    pat = random_pattern(g, rng)
    params = PhysicalParams.from_current(0.2, 5e-6)
    path = tmp_path / "p.txt"
    write_pattern(path, pat, params)
    back, bp = read_pattern(path)
    np.testing.assert_array_equal(back.values, pat.values)
    assert back.geometry == g and bp == params
    first = path.read_bytes()
    write_pattern(path, back, bp)
    assert path.read_bytes() == first


def test_pattern_file_errors(tmp_path):
    bad = tmp_path / "bad.txt"
    bad.write_text("5e-6 1.0 2 2\n0 1\n1 0\n")
    with pytest.raises(ValidationError):
        read_pattern(bad)
    bad.write_text("5e-6 1.0 2 2 1e5 3e-7\n0 1\n")
    with pytest.raises(ValidationError):
        read_pattern(bad)


def test_reduced_to_si(params):
    ev = PeriodicField.from_pattern(random_pattern(LatticeGeometry(np.pi / 2, 4, 4), np.random.default_rng(1)))
    ex = ev.expansion([0.2, 0.3, 0.5], 3)
    si = ex.to_si(params)
    assert si.u[0] == pytest.approx(ex.u[0] * params.mu0 * 0.2 / (2 * 5e-6), rel=1e-14)
    assert si.w[0, 0, 2] == pytest.approx(ex.w[0, 0, 2] * params.curvature_unit, rel=1e-14)
