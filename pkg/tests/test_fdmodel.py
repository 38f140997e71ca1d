import numpy as np
import pytest
from hypothesis import given, strategies as st

from lcumarch.fdmodel import (FlowProblem, StabilityError, analytical_solution, analytical_trajectory,
                              build_explicit, build_implicit, build_oneshot, classical_march,
                              default_c_pad, initial_condition, split_blocks)

fig2 = FlowProblem(ng=32, dt=2.5e-4, tau=32, d=1.0, c=10.0)


def test_parameters():
    assert fig2.alpha == pytest.approx(0.256)
    assert fig2.chi == pytest.approx(0.04)
    assert fig2.dx == pytest.approx(1 / 32)


def test_explicit_stencil_and_corners():
    p = FlowProblem(ng=8, dt=0.256 / 64, tau=1, c=10.0)
    A = build_explicit(p)
    a, x = p.alpha, p.chi
    assert A[3, 3] == pytest.approx(1 - 2 * a)
    assert A[3, 4] == pytest.approx(a - x)
    assert A[3, 2] == pytest.approx(a + x)
    assert A[0, 7] == pytest.approx(a + x)
    assert A[7, 0] == pytest.approx(a - x)
    assert np.allclose(A.sum(axis=1), 1.0)           # conservative
    assert np.allclose(build_implicit(p), 2 * np.eye(8) - A)


def test_dirichlet_drops_corners():
    p = FlowProblem(ng=8, dt=1e-3, tau=1, bc="dirichlet")
    A = build_explicit(p)
    assert A[0, 7] == 0 and A[7, 0] == 0


def test_stability_error():
    with pytest.raises(StabilityError):
        build_explicit(FlowProblem(ng=8, dt=0.6 / 64, tau=1))


def test_bad_problem_values():
    with pytest.raises(ValueError):
        FlowProblem(ng=12, dt=1e-3, tau=1)
    with pytest.raises(ValueError):
        FlowProblem(ng=8, dt=-1, tau=1)
    with pytest.raises(ValueError):
        FlowProblem(ng=8, dt=1e-3, tau=1, bc="neumann")


def test_roundtrip_dict():
    assert FlowProblem.from_dict(fig2.to_dict()) == fig2
    with pytest.raises(KeyError):
        FlowProblem.from_dict({"ng": 8, "dt": 1e-3, "tau": 1, "bogus": 1})


def test_initial_conditions():
    u = initial_condition(fig2)
    assert u.sum() == 1 and u[16] == 1
    s = initial_condition(fig2.with_(ic="shifted_sine", bc="dirichlet"))
    assert np.all(s >= 1) and s.max() == pytest.approx(1.5)


def test_classical_march_conserves_mass_periodic():
    tr = classical_march(fig2)
    assert tr.fields.shape == (33, 32)
    assert np.allclose(tr.fields.sum(axis=1), 1.0)


def test_implicit_march_solves_system():
    p = fig2.with_(tau=3)
    tr = classical_march(p, "implicit")
    AI = build_implicit(p)
    for k in range(3):
        assert np.allclose(AI @ tr.fields[k + 1], tr.fields[k])


def test_fig2_classical_floor_frozen():
    # frozen oracle: mean squared difference of the FD march and the
    # band-limited analytical solution at step 32
    tr = classical_march(fig2)
    an = analytical_solution(fig2, 32 * fig2.dt)
    assert np.mean((tr.final - an) ** 2) == pytest.approx(7.017e-8, rel=2e-3)


def test_analytical_mass_and_initial():
    an0 = analytical_solution(fig2, 0.0)
    assert np.allclose(an0, initial_condition(fig2), atol=1e-12)
    assert analytical_solution(fig2, 0.01).sum() == pytest.approx(1.0)
    full = analytical_solution(fig2, 0.01, band_limited=False)
    assert full.sum() == pytest.approx(1.0, rel=1e-6)


def test_analytical_trajectory_shape():
    assert analytical_trajectory(fig2.with_(tau=4)).shape == (5, 32)


@given(st.integers(1, 6), st.sampled_from([4, 8]))
def test_oneshot_explicit_solution(tau, ng):
    p = FlowProblem(ng=ng, dt=0.2 / ng ** 2, tau=tau, c=1.0)
    A, b = build_oneshot(p, "explicit")
    x = np.linalg.solve(A, b)
    blocks = split_blocks(x, ng)
    tr = classical_march(p)
    assert np.allclose(blocks[: tau + 1], tr.fields, atol=1e-12)
    # padding blocks hold the final field
    assert np.allclose(blocks[tau + 1:], tr.final, atol=1e-12)


def test_oneshot_implicit_solution():
    p = FlowProblem(ng=8, dt=0.05 / 64, tau=3, c=2.0)
    A, b = build_oneshot(p, "implicit")
    blocks = split_blocks(np.linalg.solve(A, b), 8)
    assert np.allclose(blocks[:4], classical_march(p, "implicit").fields, atol=1e-12)


def test_default_padding_power_of_two():
    for ng, tau in [(8, 2), (16, 5), (32, 32)]:
        total = tau + 1 + default_c_pad(ng, tau)
        assert total & (total - 1) == 0
