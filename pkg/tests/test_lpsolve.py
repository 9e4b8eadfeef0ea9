import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from maglattice.fieldcore import LatticeGeometry
from maglattice.lpsolve import (InfeasibleError, build_instance, inhomogeneous_solution, numerical_rank, reduce,
                                round_unrailed, solve, vertex_enumeration)


def _random_instance(rng, n=9, k=3):
    A = rng.normal(size=(k, n))
    m = rng.random(n)
    b = A @ m
    return build_instance(A, b)


def test_reduction_annihilates_m0(rng):
    inst = _random_instance(rng, 20, 4)
    np.testing.assert_allclose(inst.A @ inst.m0, inst.b, atol=1e-12)
    np.testing.assert_allclose(inst.Atilde @ inst.m0, 0, atol=1e-12)
    # A~ m = 0 is equivalent to A m = C b with C = m.m0/|m0|^2
    m = rng.random(20)
    m -= inst.Atilde.T @ np.linalg.lstsq(inst.Atilde @ inst.Atilde.T, inst.Atilde @ m, rcond=None)[0]
    C = m @ inst.m0 / (inst.m0 @ inst.m0)
    np.testing.assert_allclose(inst.A @ m, C * inst.b, atol=1e-10)


@pytest.mark.property
def test_matches_vertex_enumeration_on_200_instances():
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(200):
        n = int(rng.integers(4, 13))
        k = int(rng.integers(1, 4))
        inst = _random_instance(rng, n, k)
        sol = solve(inst.Atilde, inst.m0, A=inst.A)
        ref = vertex_enumeration(inst.Atilde, inst.m0)
        worst = max(worst, abs(sol.C - ref) / max(abs(ref), 1e-12))
        assert np.all(sol.m >= -1e-9) and np.all(sol.m <= 1 + 1e-9)
        np.testing.assert_allclose(inst.A @ sol.m, sol.C * inst.b, atol=1e-7)
        assert len(sol.unrailed) <= sol.rank
    assert worst <= 1e-8


def test_both_orientations_reported(rng):
    inst = _random_instance(rng, 12, 3)
    sol = solve(inst.Atilde, inst.m0, A=inst.A)
    Cp, Cm = sol.C_both
    assert Cp >= 0 >= Cm
    assert abs(sol.C) == pytest.approx(max(abs(Cp), abs(Cm)))


def test_inconsistent_targets_give_certificate():
    A = np.array([[1.0, 2.0, 0.0, 1.0], [2.0, 4.0, 0.0, 2.0]])
    b = np.array([1.0, 1.0])
    with pytest.raises(InfeasibleError) as err:
        inhomogeneous_solution(A, b)
    y = err.value.certificate
    np.testing.assert_allclose(y @ A, 0, atol=1e-12)
    assert abs(y @ b) > 1e-6


def test_all_zero_targets_rejected():
    with pytest.raises(ValueError):
        inhomogeneous_solution(np.eye(3), np.zeros(3))
    with pytest.raises(ValueError):
        reduce(np.eye(3), np.ones(3), np.zeros(3))


@pytest.mark.property
def test_rank_and_rounding(rng):
    A = rng.normal(size=(3, 16))
    A = np.vstack([A, A[0] + A[1]])
    assert numerical_rank(A) == 3
    inst = build_instance(A, A @ rng.random(16))
    sol = solve(inst.Atilde, inst.m0, A=inst.A)
    assert sol.rank == 3 and len(sol.unrailed) <= 3
    rep = round_unrailed(sol, LatticeGeometry(np.pi / 2, 4, 4), A=inst.A, b=inst.b)
    assert set(np.unique(rep.pattern.values)) <= {0.0, 1.0}
    assert rep.relative_perturbation is not None and rep.relative_perturbation >= 0


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31), scale=st.floats(1e-3, 1e3))
def test_C_is_invariant_under_row_scaling(seed, scale):
    rng = np.random.default_rng(seed)
    inst = _random_instance(rng, 10, 2)
    a = solve(inst.Atilde, inst.m0, A=inst.A)
    S = np.diag([scale, 1.0])
    inst2 = build_instance(S @ inst.A, S @ inst.b)
    b = solve(inst2.Atilde, inst2.m0, A=inst2.A)
    assert b.C == pytest.approx(a.C, rel=1e-7)
