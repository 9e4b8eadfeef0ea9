import csv

import numpy as np
import pytest
from scipy import integrate

from maglattice import analysis as an
from maglattice import loading
from maglattice.fieldcore import GAUSS, MU0, LatticeGeometry, ValidationError
from maglattice.twowave import TwoWaveField, TwoWaveSpec

TRI = TwoWaveSpec(np.pi / 3, 5 * np.pi / 12)


def _quad_field(spec, r):
    """Biot-Savart by adaptive quadrature along each segment."""
    v = spec.vertices()
    out = np.zeros(3)
    for a, b in zip(v[:-1], v[1:]):
        seg = b - a
        for i in range(3):
            def f(t, i=i):
                p = a + t * seg
                d = r - p
                return np.cross(seg, d)[i] / np.linalg.norm(d) ** 3
            out[i] += integrate.quad(f, 0, 1, epsabs=0, epsrel=1e-12, limit=200)[0]
    return MU0 * spec.current / (4 * np.pi) * out


def test_zwire_matches_quadrature():
    spec = loading.ZWireSpec(1e-3, 0.4e-3, orientation=0.3, current=2.0, center=(1e-4, -2e-4))
    for r in ([0, 0, 0], [3e-4, 1e-4, 5e-5], [-8e-4, 6e-4, 2e-4]):
        np.testing.assert_allclose(loading.zwire_field(spec, np.array(r, float)), _quad_field(spec, np.array(r, float)),
                                   rtol=1e-9, atol=1e-15)


def test_zwire_current_linearity_and_singularity():
    spec = loading.ZWireSpec(current=1.0)
    r = np.array([[1e-4, 2e-4, 1e-5], [0, 0, 0]])
    np.testing.assert_allclose(loading.zwire_field(spec.with_current(-3.0), r), -3 * loading.zwire_field(spec, r))
    with pytest.raises(loading.WireSingularityError):
        loading.zwire_field(spec, spec.vertices()[1] + [1e-5, 0, 0])
    with pytest.raises(ValidationError):
        loading.ZWireSpec(lead_length=1e-3)
    with pytest.raises(ValidationError):
        loading.ZWireSpec(standoff=0)


def test_zwire_source_derivatives(params):
    src = loading.ZWireField(loading.ZWireSpec(current=5.0, orientation=0.4), params)
    pts = np.array([[0.1, 0.2, 0.5], [3.0, -2.0, 10.0]])
    _, u, v, w = src.expansion_arrays(pts, 3)
    # curl- and divergence-free field
    assert np.abs(np.trace(v, axis1=1, axis2=2)).max() <= 1e-8 * np.abs(v).max()
    assert np.abs(np.einsum("mkii->mk", w)).max() <= 1e-5 * np.abs(w).max()
    h = 1e-2
    e = np.eye(3)
    fd = np.stack([(src.expansion_arrays(pts + h * e[i], 1)[1] - src.expansion_arrays(pts - h * e[i], 1)[1]) / (2 * h)
                   for i in range(3)], axis=1)
    # finite leads leave a small antisymmetric part, which the source drops
    assert np.abs(fd - fd.transpose(0, 2, 1)).max() <= 5e-3 * np.abs(v).max()
    np.testing.assert_allclose(v, 0.5 * (fd + fd.transpose(0, 2, 1)), rtol=1e-6, atol=1e-8 * np.abs(v).max())


@pytest.mark.parametrize("sign", [1.0, -1.0])
def test_aligned_orientation(sign):
    axis = np.array([np.sin(0.7), np.cos(0.7), 0.0])
    hint = np.array([np.cos(0.7), -np.sin(0.7), 0.0]) + 0.1 * axis
    spec = loading.ZWireSpec.aligned(axis, sign, bias_hint=hint, current=1.0)
    B = loading.zwire_field(spec, np.array([0.0, 0.0, 0.0]))
    assert B @ axis * sign > 0
    assert -B @ hint > 0


def test_log_schedule():
    hs = np.geomspace(100e-6, 2.5e-6, 7)
    s = loading.log_schedule(hs, 2.0, 9.8)
    assert s[0] == pytest.approx(2.0) and s[-1] == pytest.approx(9.8)
    np.testing.assert_allclose(np.diff(s), np.diff(s)[0], rtol=1e-12)
    assert loading.log_schedule([1e-6], 2.0, 9.8).tolist() == [9.8]


@pytest.fixture(scope="module")
def tw():
    return TwoWaveField(TRI)


def test_final_ioffe_for_floor(tw, params):
    h = 2.5e-6
    gauss = GAUSS / params.field_unit

    def depth(bi):
        bias, _ = an.solve_bias(tw, (0, 0), h / params.d, bi * gauss, TRI.ioffe_axis)
        return bias.depth / gauss

    d10 = depth(10.0)
    assert loading.final_ioffe_for_floor(tw, params, (0, 0), h, 10.0, d10 - 1, TRI.ioffe_axis) == 10.0
    bi = loading.final_ioffe_for_floor(tw, params, (0, 0), h, 10.0, d10 + 1, TRI.ioffe_axis)
    assert 0 < bi < 10 and depth(bi) == pytest.approx(d10 + 1, abs=1e-8)
    with pytest.raises(loading.InfeasibleFloorError):
        loading.final_ioffe_for_floor(tw, params, (0, 0), h, 10.0, 1e4, TRI.ioffe_axis)


def test_plan_and_audit_small_trajectory(tw, params, tmp_path):
    axis = TRI.ioffe_axis
    floor = 20.0
    wire = loading.zwire_for_lattice(tw, params, axis, (0, 0), 2.5e-6, 10.0)
    traj = loading.plan_trajectory(tw, wire, params, (0, 0), 100e-6, 2.5e-6, floor, 2.0, 10.0, axis, n_samples=5,
                                   final_floor=True)
    hs = [s.h for s in traj.samples]
    assert hs[0] == pytest.approx(100e-6) and hs[-1] == pytest.approx(2.5e-6)
    assert traj.samples[-1].current == 0.0
    for s in traj.samples:
        assert s.depth_G >= floor - 1e-9
        assert s.trap[2] == pytest.approx(s.h / params.d)
        # minimal current: a slightly weaker wire misses the floor
        if s.current > 0:
            bias, _ = loading._solve_sample(tw, wire.with_current(0.999 * s.current), params, (0, 0),
                                            s.h / params.d, s.B_I_G * GAUSS / params.field_unit, axis)
            assert bias.depth * params.field_unit / GAUSS < floor
    g = LatticeGeometry(np.pi / 3, 4, 4)
    audit = loading.audit_trajectory(traj, tw, params, g, axis, ngrid=24, nz=24, find_secondary=False)
    assert all(audit.depth_ok)
    for s in traj.samples:
        assert s.min_field_G == pytest.approx(abs(s.B_I_G), rel=1e-6)
    path = tmp_path / "t.csv"
    loading.write_trajectory_csv(traj, path)
    rows = list(csv.reader(open(path)))
    assert rows[0] == loading.TRAJECTORY_COLUMNS and len(rows) == 6


def test_plan_rejects_bad_inputs(tw, params):
    wire = loading.ZWireSpec()
    with pytest.raises(ValidationError):
        loading.plan_trajectory(tw, wire, params, h_start=1e-6, h_end=2e-6)
    with pytest.raises(ValidationError):
        loading.plan_trajectory(tw, wire, params, schedule=[1.0, 2.0], n_samples=3, axis=TRI.ioffe_axis)
    with pytest.raises(ValidationError):
        loading.plan_trajectory(tw, wire, params, schedule=[1.0] * 60, final_floor=True, axis=TRI.ioffe_axis)
