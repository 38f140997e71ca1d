import json

import numpy as np
import pytest

from lcumarch import qsim
from lcumarch.fdmodel import FlowProblem, build_explicit, classical_march
from lcumarch.lcu import decompose, from_decomposition, reconstruct
from lcumarch.tmcqc import (MarchPlan, PlanCeilingError, PlanError, Shots, block_circuit,
                            complexity_report, qubit_count, run, run_richardson, serial_circuit,
                            step_termset, success_probability, validate_plan)

PE = FlowProblem(ng=8, dt=0.256 / 64, tau=2, c=10.0)           # explicit, alpha = 0.256
PI = FlowProblem(ng=8, dt=0.05 / 64, tau=2, c=2.0)             # implicit-friendly


@pytest.mark.parametrize("method", [1, 2, 5])
@pytest.mark.parametrize("K", [2, 4])
def test_explicit_methods_match_classical(method, K):
    r = run(MarchPlan(method, PE, 1e-3, K=K))
    assert r.mse_classical[-1] < 1e-12


@pytest.mark.parametrize("method", [3, 4, 6])
@pytest.mark.parametrize("K", [2, 4])
def test_implicit_methods_match_classical(method, K):
    r = run(MarchPlan(method, PI, 1e-3, K=K, eps_n=1e-10))
    assert r.mse_classical[-1] < 1e-6


def test_method_cross_agreement():
    eps = 1e-3
    r1, r2 = run(MarchPlan(1, PE, eps)), run(MarchPlan(2, PE, eps))
    assert np.max(np.abs(r1.final - r2.final)) <= 10 * eps ** 2
    r3, r4 = run(MarchPlan(3, PI, eps, p_min=4)), run(MarchPlan(4, PI, eps, p_min=4))
    assert np.max(np.abs(r3.final - r4.final)) <= 10 * eps ** 2
    r5 = run(MarchPlan(5, PE, eps))
    assert np.max(np.abs(r5.fields[: PE.tau + 1] - r2.fields)) <= 10 * eps ** 2


def test_serial_matches_operator_power():
    eps = 0.3
    r = run(MarchPlan(2, PE.with_(tau=3), eps))
    Mt = reconstruct(decompose(build_explicit(PE), eps, 4))
    u = classical_march(PE.with_(tau=0)).fields[0]
    for j in range(4):
        assert np.allclose(r.fields[j], np.linalg.matrix_power(Mt, j).real @ u, atol=1e-12)


def test_qubit_counts():
    assert qubit_count(MarchPlan(2, PE, 0.1)) == 3 + 2 + 1 + 1
    assert qubit_count(MarchPlan(2, PE, 0.1, K=2)) == 4 + 1 + 1 + 1
    p = FlowProblem(ng=32, dt=2.5e-4, tau=32, c=10.0)
    assert qubit_count(MarchPlan(2, p, 1e-3)) == 5 + 2 + 5 + 1
    assert run(MarchPlan(2, PE, 0.1)).n_qubits == 7


def test_serial_circuit_is_unitary_overall():
    ts, _ = step_termset(MarchPlan(2, PE, 0.5))
    circ, _ = serial_circuit(ts, np.eye(8)[4], 3, measure=False)
    s = qsim.apply(qsim.zero_state(circ.layout), circ)
    assert np.sum(s.probabilities()) == pytest.approx(1.0)


def test_success_probability_matches_exact_run():
    for K in (2, 4):
        plan = MarchPlan(2, PE, 0.4, K=K)
        r = run(plan)
        p, ns, eta = success_probability(plan, r)
        assert p == pytest.approx(r.p_succ_total, rel=1e-10)
        assert eta == pytest.approx(K / (2 * 0.4))
        assert ns == pytest.approx(1 / p)


def test_validation_errors():
    with pytest.raises(PlanError, match="stability"):
        validate_plan(MarchPlan(2, PE.with_(dt=0.6 / 64), 0.1))
    with pytest.raises(PlanError, match="peclet"):
        validate_plan(MarchPlan(4, PI.with_(c=200.0), 0.1, p_min=3))
    with pytest.raises(PlanCeilingError, match="term ceiling"):
        validate_plan(MarchPlan(3, FlowProblem(ng=32, dt=1e-5, tau=32, c=10.0), 0.1, p_min=4))
    with pytest.raises(PlanCeilingError):
        validate_plan(MarchPlan(1, PE.with_(tau=40), 0.1, K=2))
    with pytest.raises(ValueError):
        MarchPlan(7, PE, 0.1)
    with pytest.raises(ValueError):
        Shots(0)


def test_stepwise_shots_deterministic_and_close():
    p = FlowProblem(ng=8, dt=1e-3, tau=3, c=10.0)
    plan = MarchPlan(2, p, 0.5, mode=Shots(1 << 18, None, 7))
    a, b = run(plan), run(plan)
    assert np.array_equal(a.fields, b.fields)
    exact = run(plan.with_(mode=None))
    assert np.max(np.abs(a.final - exact.final)) < 0.02
    c = run(plan.with_(mode=Shots(1 << 18, None, 8)))
    assert not np.array_equal(a.fields, c.fields)


def test_block_methods_with_shots():
    plan = MarchPlan(5, PE, 0.5, mode=Shots(1 << 18, None, 1))
    r = run(plan)
    ex = run(plan.with_(mode=None))
    assert r.info["p_succ_hat"] == pytest.approx(ex.p_succ_total, rel=0.05)


def test_lemma2_extrapolated_operator_quartic():
    M = build_explicit(PE)
    R = lambda e: reconstruct(decompose(M, e, 4))
    err = []
    for e in (0.4, 0.2, 0.1):
        ex = (R(e) - 4 * R(e / 2)) / (1 - 4)
        err.append(np.linalg.norm(ex - M, 2))
    for a, b in zip(err, err[1:]):
        assert 12 <= a / b <= 20


def test_richardson_exact_improves():
    p = FlowProblem(ng=16, dt=0.256 / 256, tau=3, c=10.0)
    ex, r1, r2 = run_richardson(MarchPlan(2, p, 1.0), 1.0, 0.9)
    assert ex.mse_analytical[-1] < 0.1 * r2.mse_analytical[-1]
    with pytest.raises(ValueError):
        run_richardson(MarchPlan(2, p, 1.0), 0.5, 0.9)


def test_feed_forward_richardson_noiseless_large_shots():
    p = FlowProblem(ng=16, dt=1e-3, tau=4, c=10.0)
    plan = MarchPlan(2, p, 1.0, mode=Shots(1 << 22, None, 0))
    ex, r1, r2 = run_richardson(plan, 1.0, 0.5)
    assert ex.info["feed_forward"]
    assert ex.mse_classical[-1] < r2.mse_classical[-1]


def test_complexity_report_examples():
    p = FlowProblem(ng=32, dt=2.5e-4, tau=32, c=10.0)
    c2 = complexity_report(MarchPlan(2, p, 1e-3))
    assert c2["lcu_depth"] == 32 and c2["sparsity"] == 4
    c1 = complexity_report(MarchPlan(1, p, 1e-3, K=2))
    assert c1["lcu_depth"] == 1024
    c4 = complexity_report(MarchPlan(4, PI, 1e-3, p_min=3))
    assert c4["lcu_depth"] == PI.tau * 27
    assert 1 <= c4["kappa"] <= 2


def test_result_serialization(tmp_path):
    r = run(MarchPlan(2, PE, 0.1))
    d = json.loads(r.to_json(tmp_path / "r.json"))
    assert d["method"] == 2 and d["lcu_depth"] == 2
    r.to_csv(tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0].startswith("step,p_succ,u_0") and len(lines) == 4


def test_block_circuit_layout():
    ts = from_decomposition(decompose(build_explicit(PE), 0.1, 4))
    c, nrm = block_circuit(ts, np.ones(8))
    assert c.layout.sizes == {"data": 3, "anc": 2}
    assert nrm == pytest.approx(np.sqrt(8))
