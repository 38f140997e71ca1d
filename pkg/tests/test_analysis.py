import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from lcumarch.analysis import (ExtrapolationPair, accuracy_gain, dissipation, fit_power_law,
                               mean_flow, mean_gradient, mse, nonlinear_observable,
                               normalized_state_error, quantize, richardson, richardson_combine,
                               richardson_iterated)
from lcumarch.fdmodel import FlowProblem, analytical_solution

vec = arrays(np.float64, 8, elements=st.floats(-5, 5, allow_nan=False))
P16 = FlowProblem(ng=16, dt=1e-3, tau=4, c=10.0)


@given(vec, vec, st.floats(0.05, 2.0), st.floats(1.1, 3.0))
def test_richardson_annihilates_eps2(u_star, c, e2, g):
    e1 = g * e2
    pair = ExtrapolationPair(e1, e2, u_star + c * e1 ** 2, u_star + c * e2 ** 2)
    assert np.allclose(richardson(pair), u_star, atol=1e-8 * (1 + np.abs(c).max() * e1 ** 2))


def test_richardson_quartic_residual():
    e1, e2, b = 1.0, 0.5, 3.0
    u = lambda e: 2.0 + 0.7 * e ** 2 + b * e ** 4
    g2 = (e1 / e2) ** 2
    r = richardson(ExtrapolationPair(e1, e2, np.array([u(e1)]), np.array([u(e2)])))
    assert r[0] - 2.0 == pytest.approx(-b * e1 ** 2 * e2 ** 2)


def test_richardson_equal_inputs_and_errors():
    v = np.arange(4.0)
    assert np.allclose(richardson(ExtrapolationPair(1.0, 0.9, v, v)), v)
    with pytest.raises(ValueError):
        ExtrapolationPair(0.5, 0.9, v, v)
    with pytest.raises(ZeroDivisionError):
        richardson_combine(v, v, 1.0)


def test_richardson_fig4c_row():
    # the tabulated N_g=32 row: 9.5e-4 / 6.8e-4 and the extrapolated 3.5e-5
    assert accuracy_gain(6.8e-4, 3.5e-5) == pytest.approx(0.9485, abs=1e-3)


def test_richardson_iterated():
    u = lambda e: 1.0 + 2 * e ** 2 + 3 * e ** 4
    eps = [1.0, 0.5, 0.25]
    assert richardson_iterated(eps, [u(e) for e in eps]) == pytest.approx(1.0)
    two = richardson_iterated([1.0, 0.5], [np.array([u(1.0)]), np.array([u(0.5)])])
    assert two == pytest.approx(richardson_combine(u(1.0), u(0.5), 2.0))
    with pytest.raises(ValueError):
        richardson_iterated([0.5, 1.0], [1, 2])


@given(vec, vec, vec)
def test_mse_properties(a, b, c):
    assert mse(a, b) == pytest.approx(mse(b, a))
    assert mse(a, a) == 0
    assert np.sqrt(mse(a, c)) <= np.sqrt(mse(a, b)) + np.sqrt(mse(b, c)) + 1e-9


def test_mse_examples():
    a = np.arange(5.0)
    assert mse(a, a + 0.3) == pytest.approx(0.09)
    with pytest.raises(ValueError):
        mse(a, a[:3])


def test_fit_power_law():
    x = np.array([1.0, 2.0, 4.0, 8.0])
    f = fit_power_law(x, 2 * x ** 3)
    assert f.prefactor == pytest.approx(2) and f.exponent == pytest.approx(3) and f.residual < 1e-20
    assert fit_power_law(x, 5 / np.sqrt(x)).exponent == pytest.approx(-0.5)
    with pytest.raises(ValueError):
        fit_power_law([1, 2], [1, 2])
    with pytest.raises(ValueError):
        fit_power_law([1, 2, 3], [1, 0, 2])


@given(arrays(np.float64, 16, elements=st.floats(-3, 3, allow_nan=False)))
def test_mean_flow_paths_agree(u):
    q, c = mean_flow(u)
    assert q == pytest.approx(c, abs=1e-10)


def test_mean_flow_examples():
    assert mean_flow(np.full(8, 2.5))[0] == pytest.approx(2.5)
    assert mean_flow(np.eye(8)[3])[0] == pytest.approx(1 / 8)
    q, c = mean_flow(np.eye(8)[3] + 1, shots=200_000, seed=1)
    assert q == pytest.approx(c, rel=0.01)


def test_mean_flow_tracks_analytical():
    p = FlowProblem(ng=32, dt=2.5e-4, tau=32, c=1.0)
    for t in (0.0, 0.002, 0.008):
        u = analytical_solution(p, t)
        assert mean_flow(u)[0] == pytest.approx(1 / 32, rel=1e-9)


@given(arrays(np.float64, 16, elements=st.floats(-3, 3, allow_nan=False)))
def test_mean_gradient_periodic_zero(u):
    q, c = mean_gradient(u, P16)
    assert c == 0.0 or abs(c) < 1e-10
    assert abs(q) < 1e-8


def test_mean_gradient_dirichlet_linear():
    p = P16.with_(bc="dirichlet")
    u = 3 * p.x + 1
    q, c = mean_gradient(u, p)
    assert c == pytest.approx(3.0)
    assert q == pytest.approx(3.0, rel=1e-5)
    assert mean_gradient(np.full(16, 2.0), p) == (0.0, 0.0) or abs(mean_gradient(np.full(16, 2.0), p)[1]) < 1e-12


def test_nonlinear_observable_examples():
    est, truth, _ = nonlinear_observable([0.5, 0.5], lambda x: x * x, 4)
    assert est == pytest.approx(0.25) and truth == pytest.approx(0.25)
    u = np.linspace(0, 1, 8)
    est, truth, meta = nonlinear_observable(u, lambda x: x, 8)
    assert est == pytest.approx(np.mean(u), abs=1 / 255)
    with pytest.raises(ValueError):
        nonlinear_observable(u, lambda x: 3 * x, 4)
    with pytest.warns(RuntimeWarning):
        nonlinear_observable(np.linspace(0, 1, 16), lambda x: x, 2)


@pytest.mark.filterwarnings("ignore:n_qpp")
@given(arrays(np.float64, 8, elements=st.floats(-1, 1, allow_nan=False)), st.integers(3, 8))
def test_nonlinear_quantization_bound(u, n):
    est, truth, meta = nonlinear_observable(u, lambda x: x ** 2, n)
    lip = 2 * max(abs(meta["lo"]), abs(meta["hi"]))
    assert abs(est - truth) <= lip * (meta["hi"] - meta["lo"]) * 2.0 ** -n + 1e-9


@pytest.mark.filterwarnings("ignore:n_qpp")
def test_dissipation_matches_classical():
    p = FlowProblem(ng=16, dt=1e-3, tau=1, c=10.0)
    u = analytical_solution(p, 0.003)
    est, cl = dissipation(u, p, 10)
    assert est == pytest.approx(cl, rel=0.02)
    est_s, _ = dissipation(u, p, 10, shots=1_000_000, seed=0)
    assert est_s == pytest.approx(cl, rel=0.1)


def test_quantize_roundtrip():
    codes, uq, lo, hi = quantize([0.0, 0.5, 1.0], 2)
    assert list(codes) == [0, 2, 3] and lo == 0 and hi == 1


def test_normalized_state_error_bound():
    rng = np.random.default_rng(0)
    J = np.diag([1.0, -2.0, 3.0])
    E = rng.standard_normal((3, 3))
    E *= 0.1 / np.linalg.norm(E, 2)
    assert normalized_state_error(J, J + E, np.ones(3) / np.sqrt(3)) <= 0.4
