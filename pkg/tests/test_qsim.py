import numpy as np
import pytest
from hypothesis import given, strategies as st

from lcumarch import qsim
from lcumarch.linalg import state_prep_unitary
from lcumarch.qsim import Circuit, NoiseModel, RegisterLayout, apply, sample, zero_state

H = np.array([[1, 1], [1, -1]]) / np.sqrt(2)
X = np.array([[0, 1], [1, 0]])


def dense_1q(n, q, U):
    """Full matrix of U on qubit q (qubit 0 is the least significant bit)."""
    out = np.array([[1.0]])
    for k in range(n - 1, -1, -1):
        out = np.kron(out, U if k == q else np.eye(2))
    return out


def rand_unitary(rng, n):
    q, r = np.linalg.qr(rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n)))
    return q * (np.diag(r) / np.abs(np.diag(r)))


def test_layout_packing():
    lay = RegisterLayout([("data", 3), ("anc", 2), ("tag", 1)])
    assert lay.n == 6 and lay.qubits("anc") == [3, 4] and lay.qubit("tag") == 5
    assert lay.pattern_controls({"anc": 2}) == {3: 0, 4: 1}
    assert lay.extract(0b101011, "anc") == 1
    with pytest.raises(ValueError):
        RegisterLayout([("a", 2), ("a", 1)])
    with pytest.raises(ValueError):
        RegisterLayout([("a", qsim.MAX_QUBITS + 1)])
    with pytest.raises(ValueError):
        lay.pattern_controls({"anc": 4})


def test_single_qubit_gates_match_dense():
    n = 3
    lay = RegisterLayout([("q", n)])
    rng = np.random.default_rng(0)
    v = rng.standard_normal(8) + 1j * rng.standard_normal(8)
    v /= np.linalg.norm(v)
    st0 = qsim.QuantumState(v.copy(), lay)
    c = Circuit(lay).h(1).x(0).ry(2, 0.7)
    ry = np.array([[np.cos(0.35), -np.sin(0.35)], [np.sin(0.35), np.cos(0.35)]])
    ref = dense_1q(n, 2, ry) @ dense_1q(n, 0, X) @ dense_1q(n, 1, H) @ v
    assert np.allclose(apply(st0, c).amplitudes, ref)


def test_controlled_unitary_matches_dense():
    rng = np.random.default_rng(1)
    lay = RegisterLayout([("d", 2), ("c", 1)])
    U = rand_unitary(rng, 4)
    v = rng.standard_normal(8) + 0j
    v /= np.linalg.norm(v)
    out = apply(qsim.QuantumState(v.copy(), lay), Circuit(lay).unitary("d", U, {2: 1})).amplitudes
    ref = v.copy()
    ref[4:] = U @ v[4:]
    assert np.allclose(out, ref)
    # control on 0
    out0 = apply(qsim.QuantumState(v.copy(), lay), Circuit(lay).unitary("d", U, {2: 0})).amplitudes
    ref0 = v.copy()
    ref0[:4] = U @ v[:4]
    assert np.allclose(out0, ref0)


def test_gate_validation():
    lay = RegisterLayout([("q", 2)])
    c = Circuit(lay)
    with pytest.raises(ValueError):
        c.unitary([0], np.array([[1, 1], [0, 1]]))
    with pytest.raises(ValueError):
        c.x(0, {0: 1})
    with pytest.raises(IndexError):
        c.h(5)


def test_dump_load_roundtrip():
    rng = np.random.default_rng(2)
    lay = RegisterLayout([("d", 2), ("a", 1)])
    c = Circuit(lay).h(2).unitary("d", rand_unitary(rng, 4), {2: 1}, label="W").ry(0, 0.3).barrier("b")
    c.measure()
    c2 = qsim.load_circuit(c.dumps(), qsim.payload_table(c))
    assert c2.dump() == c.dump()
    s = zero_state(lay)
    assert np.allclose(apply(s, c).amplitudes, apply(s, c2).amplitudes)
    with pytest.raises(KeyError):
        qsim.load_circuit(c.dumps(), {})


@given(st.lists(st.floats(-2, 2, allow_nan=False), min_size=8, max_size=8))
def test_prepare_input_encodes_field(vals):
    v = np.array(vals)
    if np.linalg.norm(v) < 1e-6:
        return
    lay = RegisterLayout([("data", 3)])
    s = qsim.prepare_input(lay, v)
    assert s.norm == pytest.approx(np.linalg.norm(v))
    assert np.allclose(s.amplitudes.real * s.norm, v, atol=1e-9)


def test_prepare_basis_and_uniform_use_cheap_gates():
    lay = RegisterLayout([("data", 3)])
    c = Circuit(lay)
    qsim.prepare_gates(c, np.eye(8)[5])
    assert [g.kind for g in c.gates] == ["x", "x"]
    c = Circuit(lay)
    qsim.prepare_gates(c, np.ones(8))
    assert [g.kind for g in c.gates] == ["h"] * 3


def test_dilated_prepare_uses_upper_half():
    lay = RegisterLayout([("data", 3)])
    s = qsim.prepare_input(lay, [1.0, 2.0, 3.0, 4.0], dilated=True)
    assert np.allclose(s.amplitudes[:4], 0)
    assert np.allclose(s.amplitudes[4:] * s.norm, [1, 2, 3, 4])


def test_post_select_and_register_amplitudes():
    lay = RegisterLayout([("data", 1), ("anc", 1)])
    s = apply(zero_state(lay), Circuit(lay).h(0).h(1))
    ps, p = qsim.post_select(s, {"anc": 0})
    assert p == pytest.approx(0.5)
    assert np.allclose(ps.register_amplitudes("data", {"anc": 0}), [1 / np.sqrt(2)] * 2)
    s1 = zero_state(lay)
    with pytest.raises(ZeroDivisionError):
        qsim.post_select(s1, {"anc": 1})


def test_exact_reset():
    lay = RegisterLayout([("q", 2)])
    s = apply(zero_state(lay), Circuit(lay).x(1).h(0).reset(1))
    assert np.allclose(np.abs(s.amplitudes[:2]) ** 2, [0.5, 0.5])
    with pytest.raises(ValueError):
        apply(zero_state(lay), Circuit(lay).h(1).reset(1))


def test_sample_binomial_and_deterministic():
    lay = RegisterLayout([("q", 1)])
    c = Circuit(lay).ry(0, 2 * np.arcsin(np.sqrt(0.3))).measure()
    r1 = sample(zero_state(lay), 200_000, seed=5, circuit=c)
    r2 = sample(zero_state(lay), 200_000, seed=5, circuit=c)
    assert r1.counts == r2.counts
    p1 = r1.counts["1"] / 200_000
    assert abs(p1 - 0.3) < 4 * np.sqrt(0.21 / 200_000)


def test_sample_thread_independent():
    lay = RegisterLayout([("d", 3), ("anc", 1)])
    c = Circuit(lay).h(0).h(1).h(3).x(2, {3: 1}).measure()
    nm = NoiseModel.uniform(0.05, 0, "decomposed")
    a = sample(zero_state(lay), 300_000, nm, seed=3, circuit=c, threads=1, chunk=1 << 16)
    b = sample(zero_state(lay), 300_000, nm, seed=3, circuit=c, threads=4, chunk=1 << 16)
    assert a.counts == b.counts


def test_post_selected_record():
    lay = RegisterLayout([("data", 2), ("anc", 1)])
    c = Circuit(lay).h(0).h(2).measure()
    rec = sample(zero_state(lay), 100_000, seed=1, circuit=c, post_pattern={"anc": 0})
    assert abs(rec.p_succ_hat - 0.5) < 0.01
    assert rec.data_counts.sum() == rec.post_selected
    est = qsim.estimate_field(rec, "nonnegative")
    assert np.allclose(est, [np.sqrt(0.5), np.sqrt(0.5), 0, 0], atol=0.01)


def test_flip_prob_composition():
    nm = NoiseModel(0.01, weighting="decomposed")
    g = qsim.Gate("unitary", (0, 1, 2), {}, np.eye(8))
    w = qsim.qsd_cnot_count(3)
    assert w == 20
    assert nm.flip_prob(g) == pytest.approx(0.5 * (1 - 0.98 ** 20))
    assert NoiseModel(0.01).flip_prob(g) == 0.01
    assert qsim.mcx_cnot_count(1) == 1 and qsim.mcx_cnot_count(3) == 18
    with pytest.raises(ValueError):
        NoiseModel(1.5)


def test_noisy_sampling_matches_trajectories():
    # the binomial/conditioned sampler and brute-force single trajectories
    # must agree in distribution
    lay = RegisterLayout([("q", 2)])
    c = Circuit(lay).h(0).x(1, {0: 1}).ry(1, 0.4).measure()
    nm = NoiseModel(0.08, 0.03, 0.0, 0)
    n = 200_000
    rec = sample(zero_state(lay), n, nm, seed=11, circuit=c)
    p_fast = np.array([rec.counts.get(format(k, "02b"), 0) for k in range(4)]) / n
    rng = np.random.default_rng(7)
    m = 20_000
    hits = np.zeros(4)
    for _ in range(m):
        s = apply(zero_state(lay), c, nm, rng)
        k = rng.choice(4, p=s.probabilities() / s.probabilities().sum())
        for q in range(2):
            if rng.random() < nm.p_meas:
                k ^= 1 << q
        hits[k] += 1
    p_slow = hits / m
    assert np.all(np.abs(p_fast - p_slow) < 5 * np.sqrt(p_slow * (1 - p_slow) / m) + 1e-3)


def test_hadamard_test_real_and_imag():
    rng = np.random.default_rng(4)
    lay = RegisterLayout([("d", 2)])
    v = rng.standard_normal(4) + 1j * rng.standard_normal(4)
    v /= np.linalg.norm(v)
    prep = Circuit(lay).unitary("d", state_prep_unitary(v))
    U = rand_unitary(rng, 4)
    ev = v.conj() @ U @ v
    assert qsim.hadamard_test(prep, U, "re") == pytest.approx(ev.real, abs=1e-12)
    assert qsim.hadamard_test(prep, U, "im") == pytest.approx(ev.imag, abs=1e-12)
    est = qsim.hadamard_test(prep, U, "re", shots=400_000, seed=2)
    assert abs(est - ev.real) < 5 * 2 / np.sqrt(400_000)


def test_shot_record_csv(tmp_path):
    lay = RegisterLayout([("q", 1)])
    rec = sample(zero_state(lay), 10, seed=0, circuit=Circuit(lay).measure())
    rec.to_csv(tmp_path / "c.csv")
    assert (tmp_path / "c.csv").read_text().splitlines() == ["bitstring,count", "0,10"]
