"""The six time-marching circuit families, their bookkeeping and cost formulas."""
from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import qsim
from .fdmodel import (FlowProblem, StabilityError, analytical_trajectory, build_explicit,
                      build_implicit, build_oneshot, classical_march, default_c_pad,
                      initial_condition, split_blocks)
from .lcu import (CeilingError, ConvergenceError, TermSet, auto_p_min, decompose,
                  expansion_term_count, from_decomposition, neumann_termset, oneshot_scaling,
                  product_expansion, terms_commute, truncation_error)
from .linalg import spectral_radius

METHOD_NAMES = {1: "explicit expansion", 2: "explicit serial", 3: "implicit expansion",
                4: "implicit serial", 5: "one-shot explicit", 6: "one-shot implicit"}
EXPLICIT = (1, 2, 5)


class PlanError(ValueError):
    """The plan violates a precondition (stability, convergence, ceilings)."""


class PlanCeilingError(PlanError):
    """The plan exceeds a resource ceiling (terms or qubits)."""


@dataclass(frozen=True)
class Shots:
    shots: int
    noise: Optional[qsim.NoiseModel] = None
    seed: int = 0
    protocol: str = "stepwise"        # stepwise: measure and re-prepare every step
    sign_source: str = "exact"
    threads: int = 1

    def __post_init__(self):
        if self.shots < 1:
            raise ValueError("shots must be >= 1")
        if self.protocol not in ("stepwise", "coherent"):
            raise ValueError("protocol must be 'stepwise' or 'coherent'")


@dataclass(frozen=True)
class MarchPlan:
    method: int
    problem: FlowProblem
    epsilon: float
    K: int = 4
    p_min: Optional[int] = None
    mode: Optional[Shots] = None      # None means exact
    c_pad: Optional[int] = None
    term_ceiling: int = 100_000
    eps_n: float = 1e-10              # target used when p_min is chosen automatically

    def __post_init__(self):
        if self.method not in METHOD_NAMES:
            raise ValueError(f"method must be 1..6, got {self.method}")
        if self.K not in (2, 4):
            raise ValueError("K must be 2 or 4")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")

    @property
    def exact(self):
        return self.mode is None

    @property
    def scheme(self):
        return "explicit" if self.method in EXPLICIT else "implicit"

    def with_(self, **kw):
        return replace(self, **kw)


@dataclass
class MarchResult:
    method: int
    steps: np.ndarray                 # time-step index of each stored field
    fields: np.ndarray                # rescaled fields, one row per entry of steps
    p_succ_steps: np.ndarray          # conditional success probability per application
    p_succ_total: float
    rescale: float                    # total classical factor applied to amplitudes
    lcu_depth: int
    n_qubits: int
    n_terms: int
    mse_classical: np.ndarray = None
    mse_analytical: np.ndarray = None
    info: dict = field(default_factory=dict)

    @property
    def final(self):
        return self.fields[-1]

    def summary(self):
        out = {"method": self.method, "name": METHOD_NAMES.get(self.method, "?"),
               "steps": self.steps.tolist(), "p_succ_total": self.p_succ_total,
               "rescale": self.rescale, "lcu_depth": self.lcu_depth, "n_qubits": self.n_qubits,
               "n_terms": self.n_terms}
        if self.mse_classical is not None:
            out["mse_classical_final"] = float(self.mse_classical[-1])
        if self.mse_analytical is not None:
            out["mse_analytical_final"] = float(self.mse_analytical[-1])
        out.update({k: v for k, v in self.info.items() if isinstance(v, (int, float, str, bool, list))})
        return out

    def to_json(self, path=None):
        s = json.dumps(self.summary(), indent=1, default=float)
        if path:
            with open(path, "w") as fh:
                fh.write(s)
        return s

    def to_csv(self, path):
        import csv
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            ncol = self.fields.shape[1]
            w.writerow(["step", "p_succ"] + [f"u_{i}" for i in range(ncol)])
            ps = np.concatenate([[1.0], self.p_succ_steps])
            for k, s in enumerate(self.steps):
                pk = ps[k] if k < ps.size else ""
                w.writerow([int(s), pk] + [repr(float(v)) for v in np.real(self.fields[k])])


# ---------------------------------------------------------------- validation


def validate_plan(plan: MarchPlan):
    """Raise PlanError naming the first failing precondition."""
    p = plan.problem
    if plan.method in (1, 2, 5) and p.alpha > 0.5 + 1e-12:
        raise PlanError(f"stability: explicit scheme needs alpha <= 0.5, got {p.alpha:.4g}")
    if plan.method in (1, 2, 3, 4) and p.tau < 1:
        raise PlanError("tau must be >= 1")
    if plan.method in (3, 4):
        if p.chi > p.alpha + 1e-15:
            raise PlanError(f"peclet: implicit Neumann inversion needs chi <= alpha ({p.chi:.4g} > {p.alpha:.4g})")
        Mn = np.eye(p.ng) - build_implicit(p)
        if np.linalg.norm(Mn, 2) >= 1:
            raise PlanError(f"convergence: ||I - A_I|| = {np.linalg.norm(Mn, 2):.4g} >= 1")
    if plan.method == 3:
        L = 1 + plan.K * (_p_min_for(plan) - 1)
        n = math.comb(p.tau + L - 1, L - 1)
        if n > plan.term_ceiling:
            raise PlanCeilingError(f"term ceiling: expansion needs {n} terms > {plan.term_ceiling}")
    if plan.method == 1:
        L = plan.K
        n = math.comb(p.tau + L - 1, L - 1) if plan.K == 4 else L ** p.tau
        if n > plan.term_ceiling:
            raise PlanCeilingError(f"term ceiling: expansion needs {n} terms > {plan.term_ceiling}")
    nq = qubit_count(plan)
    if nq > qsim.MAX_QUBITS:
        raise PlanCeilingError(f"qubit cap: plan needs {nq} qubits > {qsim.MAX_QUBITS}")


def _clog2(n):
    return int(math.ceil(math.log2(n))) if n > 1 else 0


def _p_min_for(plan: MarchPlan):
    if plan.p_min is not None:
        return int(plan.p_min)
    p = plan.problem
    if plan.method in (3, 4):
        return auto_p_min(np.eye(p.ng) - build_implicit(p), plan.eps_n)
    if plan.method == 5:
        cp = default_c_pad(p.ng, p.tau) if plan.c_pad is None else plan.c_pad
        return p.tau + 1 + cp
    if plan.method == 6:
        A, _ = build_oneshot(p, "implicit", plan.c_pad)
        d = oneshot_scaling(A)
        return auto_p_min(np.eye(A.shape[0]) - d * A, plan.eps_n)
    return None


def qubit_count(plan: MarchPlan):
    p = plan.problem
    dil = 1 if plan.K == 2 else 0
    nd = _clog2(p.ng) + dil
    tau = p.tau
    if plan.method == 2:
        return nd + _clog2(plan.K) + _clog2(tau) + 1
    if plan.method == 1:
        nt = math.comb(tau + plan.K - 1, plan.K - 1) if plan.K == 4 else plan.K ** tau
        return nd + _clog2(nt)
    P = _p_min_for(plan)
    L = 1 + plan.K * (P - 1)
    if plan.method == 4:
        return nd + _clog2(L) + _clog2(tau) + 1
    if plan.method == 3:
        return nd + _clog2(math.comb(tau + L - 1, L - 1))
    cp = default_c_pad(p.ng, tau) if plan.c_pad is None else plan.c_pad
    return _clog2(p.ng * (tau + 1 + cp)) + dil + _clog2(L)


# ---------------------------------------------------------------- circuits


def _ancilla_prep(ts: TermSet, n_a):
    c = np.zeros(1 << n_a)
    c[: ts.n_terms] = ts.coefficients
    amps = np.sqrt(c / c.sum())
    uniform = ts.n_terms == (1 << n_a) and np.allclose(ts.coefficients, ts.coefficients[0])
    return amps, uniform


def _lcu_block(circ: qsim.Circuit, ts: TermSet, controls=None, label=""):
    """V, W = sum |k><k| (x) U_k, V^dagger on registers anc/data."""
    lay = circ.layout
    n_a = lay.sizes["anc"]
    ctrl = dict(controls or {})
    amps, uniform = _ancilla_prep(ts, n_a)
    aq = lay.qubits("anc")
    if n_a == 0:
        circ.unitary("data", ts.unitaries[0], ctrl, label=f"{label}W0", check=False)
        return
    if uniform:
        for q in aq:
            circ.h(q, ctrl)
    else:
        from .linalg import state_prep_unitary
        Vm = state_prep_unitary(amps)
        circ.unitary(aq, Vm, ctrl, label=f"{label}V", check=False)
    for k, U in enumerate(ts.unitaries):
        cc = dict(ctrl)
        cc.update(lay.pattern_controls({"anc": k}))
        circ.unitary("data", U, cc, label=f"{label}W{k}", check=False)
    if uniform:
        for q in aq:
            circ.h(q, ctrl)
    else:
        circ.unitary(aq, Vm.conj().T, ctrl, label=f"{label}Vdg", check=False)


def block_circuit(ts: TermSet, field, measure=True):
    """Single LCU block on (data, anc) loading field; returns (circuit, norm)."""
    nd = _clog2(ts.full_dim)
    if (1 << nd) != ts.full_dim:
        raise ValueError("term dimension must be a power of 2")
    lay = qsim.RegisterLayout([("data", nd), ("anc", _clog2(ts.n_terms))])
    c = qsim.Circuit(lay)
    nrm = qsim.prepare_gates(c, field, "data", ts.dilated)
    _lcu_block(c, ts)
    if measure:
        c.measure()
    return c, nrm


def serial_circuit(ts: TermSet, field, tau, measure=True):
    """tau chained LCU blocks with a countdown clock and a success tag.

    The tag starts at 1 and stays 1 only while every block succeeded. After a
    block, branches whose ancilla is nonzero have their tag cleared (they are
    the only branches with the current clock value); the success branch then
    decrements the clock. Failed branches keep their frozen clock and are left
    untouched by later blocks, so the map is unitary. Success pattern at the
    end: tag=1, anc=0, clock=0.
    """
    nd = _clog2(ts.full_dim)
    n_c = _clog2(tau)
    lay = qsim.RegisterLayout([("data", nd), ("anc", _clog2(ts.n_terms)), ("clock", n_c), ("tag", 1)])
    c = qsim.Circuit(lay)
    nrm = qsim.prepare_gates(c, field, "data", ts.dilated)
    tag = lay.qubit("tag")
    c.x(tag)
    cq = lay.qubits("clock")
    for i, q in enumerate(cq):
        if ((tau - 1) >> i) & 1:
            c.x(q)
    anc0 = lay.pattern_controls({"anc": 0}) if lay.sizes["anc"] else {}
    for j in range(tau):
        cval = tau - 1 - j
        _lcu_block(c, ts, {tag: 1}, label=f"s{j}:")
        on_clock = lay.pattern_controls({"clock": cval}) if n_c else {}
        c.x(tag, on_clock)
        cc = dict(on_clock)
        cc.update(anc0)
        c.x(tag, cc)
        if j < tau - 1:
            base = {tag: 1}
            base.update(anc0)
            for i in range(n_c - 1, 0, -1):      # decrement: bit i flips if all lower bits are 0
                ctrl = dict(base)
                ctrl.update({cq[b]: 0 for b in range(i)})
                c.x(cq[i], ctrl)
            if n_c:
                c.x(cq[0], base)
        c.barrier(f"step{j + 1}")
    if measure:
        c.measure()
    return c, nrm


def _success_pattern_after(j, tau, lay):
    pat = {"anc": 0, "tag": 1}
    if lay.sizes.get("clock", 0):
        pat["clock"] = max(tau - 2 - j, 0) if j < tau - 1 else 0
    return pat


# ---------------------------------------------------------------- operators


def _explicit_termset(plan: MarchPlan, epsilon=None):
    p = plan.problem
    A = build_explicit(p)
    d = decompose(p.delta_scale * A, plan.epsilon if epsilon is None else epsilon, plan.K)
    return from_decomposition(d), 1.0 / p.delta_scale


def _implicit_termset(plan: MarchPlan, epsilon=None):
    p = plan.problem
    Mn = np.eye(p.ng) - build_implicit(p)
    P = _p_min_for(plan)
    return neumann_termset(Mn, P, plan.epsilon if epsilon is None else epsilon, plan.K), 1.0


def step_termset(plan: MarchPlan, epsilon=None):
    """Per-step LCU and its per-application classical factor."""
    if plan.method in (1, 2):
        return _explicit_termset(plan, epsilon)
    if plan.method in (3, 4):
        return _implicit_termset(plan, epsilon)
    raise ValueError("one-shot methods have no per-step operator")


def _readout(amps, dilated):
    a = np.asarray(amps)
    return a[a.size // 2:] if dilated else a


def _attach_mse(res: MarchResult, plan: MarchPlan):
    p = plan.problem
    tr = classical_march(p, plan.scheme if plan.method not in (5, 6) else plan.scheme)
    ref = tr.fields[np.minimum(res.steps, p.tau)]
    f = np.real(res.fields)
    res.mse_classical = np.mean((f - ref) ** 2, axis=1)
    if p.bc == "periodic" and p.ic == "delta":
        an = analytical_trajectory(p, res.steps)
        res.mse_analytical = np.mean((f - an) ** 2, axis=1)
    return res


# ---------------------------------------------------------------- runners


def _run_serial_exact(plan, ts, scale):
    p = plan.problem
    u0 = initial_condition(p)
    circ, nrm = serial_circuit(ts, u0, p.tau, measure=False)
    lay = circ.layout
    snaps = {}

    def hook(label, amps):
        j = int(label[4:]) - 1
        st = qsim.QuantumState(amps, lay)
        snaps[j] = _readout(st.register_amplitudes("data", _success_pattern_after(j, p.tau, lay)), ts.dilated).copy()

    qsim.apply(qsim.zero_state(lay), circ, hook=hook)
    fields = [u0]
    norms2 = [1.0]
    for j in range(p.tau):
        a = snaps[j]
        norms2.append(float(np.sum(np.abs(a) ** 2)))
        fields.append(np.real(a) * nrm * (ts.lam * scale) ** (j + 1))
    norms2 = np.array(norms2)
    with np.errstate(divide="ignore", invalid="ignore"):
        cond = np.where(norms2[:-1] > 0, norms2[1:] / norms2[:-1], 0.0)
    res = MarchResult(plan.method, np.arange(p.tau + 1), np.array(fields), cond, float(norms2[-1]),
                      float(nrm * (ts.lam * scale) ** p.tau), p.tau, lay.n, ts.n_terms,
                      info={"gates": circ.count(), "lambda": ts.lam})
    return res


def _stepwise_step(ts, scale, v, plan, rng_seed):
    """One measured block on field v; returns (estimate, p_hat, p_exact)."""
    mode = plan.mode
    circ, nrm = block_circuit(ts, v)
    lay = circ.layout
    st0 = qsim.zero_state(lay)
    exact = qsim.apply(st0, circ)
    ea = _readout(exact.register_amplitudes("data", {"anc": 0}), False)
    p_exact = float(np.sum(np.abs(ea) ** 2)) if not ts.dilated else float(np.sum(np.abs(ea) ** 2))
    rec = qsim.sample(st0, mode.shots, mode.noise, rng_seed, circuit=circ, final_state=exact,
                      post_pattern={"anc": 0}, threads=mode.threads)
    if rec.post_selected == 0:
        return np.zeros(v.size), 0.0, p_exact
    est = qsim.estimate_field(rec, mode.sign_source, ea, ts.dilated)
    return np.real(est) * np.sqrt(rec.p_succ_hat) * ts.lam * nrm * scale, rec.p_succ_hat, p_exact


def _run_serial_stepwise(plan, ts, scale):
    p = plan.problem
    v = initial_condition(p)
    fields, ps = [v], []
    ss = np.random.SeedSequence(plan.mode.seed)
    lost = False
    for j in range(p.tau):
        if lost or not np.any(v):
            lost = True
            fields.append(np.zeros(p.ng))
            ps.append(0.0)
            continue
        seed = ss.spawn(1)[0].generate_state(2)
        v, ph, _ = _stepwise_step(ts, scale, v, plan, seed)
        fields.append(v)
        ps.append(ph)
    nq = qubit_count(plan.with_(method=2)) if plan.method == 2 else None
    res = MarchResult(plan.method, np.arange(p.tau + 1), np.array(fields), np.array(ps),
                      float(np.prod(ps)), float("nan"), p.tau, nq or 0, ts.n_terms,
                      info={"protocol": "stepwise", "shots": plan.mode.shots, "lost": lost})
    return res


def _run_block(plan, ts, scale, steps_out, n_app, u_in, readout):
    """Single-block execution (exact or shots) shared by methods 1, 3, 5, 6."""
    circ, nrm = block_circuit(ts, u_in)
    lay = circ.layout
    st = qsim.apply(qsim.zero_state(lay), circ)
    amps = _readout(st.register_amplitudes("data", {"anc": 0}), ts.dilated)
    p_ex = float(np.sum(np.abs(amps) ** 2))
    info = {"gates": circ.count(), "lambda": ts.lam, "p_succ_exact": p_ex}
    if plan.exact:
        out = np.real(amps) * nrm * ts.lam * scale
        p_used = p_ex
    else:
        m = plan.mode
        rec = qsim.sample(qsim.zero_state(lay), m.shots, m.noise, m.seed, circuit=circ, final_state=st,
                          post_pattern={"anc": 0}, threads=m.threads)
        p_used = rec.p_succ_hat
        info["p_succ_hat"] = p_used
        if rec.post_selected == 0:
            out = np.zeros_like(np.real(amps))
        else:
            full = st.register_amplitudes("data", {"anc": 0})
            est = qsim.estimate_field(rec, m.sign_source, full, ts.dilated)
            out = np.real(est) * np.sqrt(p_used) * ts.lam * nrm * scale
    fields = readout(out)
    return MarchResult(plan.method, np.asarray(steps_out), fields, np.array([p_used]), p_used,
                       float(nrm * ts.lam * scale), n_app, lay.n, ts.n_terms, info=info)


def run_tmcqc1(plan: MarchPlan) -> MarchResult:
    if plan.method != 1:
        plan = plan.with_(method=1)
    _check(plan)
    p = plan.problem
    base, scale = _explicit_termset(plan)
    ts = product_expansion(base, p.tau, plan.term_ceiling)
    u0 = initial_condition(p)
    res = _run_block(plan, ts, scale ** p.tau, [0, p.tau], p.tau ** 2, u0,
                     lambda out: np.array([u0, out]))
    res.info["commuting"] = terms_commute(base)
    return _attach_mse(res, plan)


def run_tmcqc2(plan: MarchPlan) -> MarchResult:
    if plan.method != 2:
        plan = plan.with_(method=2)
    _check(plan)
    ts, scale = _explicit_termset(plan)
    return _run_serial(plan, ts, scale)


def _run_serial(plan, ts, scale):
    if plan.exact:
        res = _run_serial_exact(plan, ts, scale)
    elif plan.mode.protocol == "stepwise":
        res = _run_serial_stepwise(plan, ts, scale)
    else:
        res = _run_serial_coherent(plan, ts, scale)
    if plan.method == 4:
        res.lcu_depth = plan.problem.tau * ts.n_terms
    return _attach_mse(res, plan)


def _run_serial_coherent(plan, ts, scale):
    p = plan.problem
    u0 = initial_condition(p)
    circ, nrm = serial_circuit(ts, u0, p.tau)
    lay = circ.layout
    st = qsim.apply(qsim.zero_state(lay), circ)
    pat = _success_pattern_after(p.tau - 1, p.tau, lay)
    ea = st.register_amplitudes("data", pat)
    m = plan.mode
    rec = qsim.sample(qsim.zero_state(lay), m.shots, m.noise, m.seed, circuit=circ, final_state=st,
                      post_pattern=pat, threads=m.threads)
    if rec.post_selected == 0:
        out = np.zeros(p.ng)
    else:
        est = qsim.estimate_field(rec, m.sign_source, ea, ts.dilated)
        out = np.real(est) * np.sqrt(rec.p_succ_hat) * nrm * (ts.lam * scale) ** p.tau
    return MarchResult(plan.method, np.array([0, p.tau]), np.array([u0, out]),
                       np.array([rec.p_succ_hat]), rec.p_succ_hat,
                       float(nrm * (ts.lam * scale) ** p.tau), p.tau, lay.n, ts.n_terms,
                       info={"protocol": "coherent", "shots": m.shots,
                             "p_succ_exact": float(np.sum(np.abs(ea) ** 2))})


def run_tmcqc3(plan: MarchPlan) -> MarchResult:
    if plan.method != 3:
        plan = plan.with_(method=3)
    _check(plan)
    p = plan.problem
    base, scale = _implicit_termset(plan)
    ts = product_expansion(base, p.tau, plan.term_ceiling)
    u0 = initial_condition(p)
    res = _run_block(plan, ts, 1.0, [0, p.tau], ts.n_terms, u0, lambda out: np.array([u0, out]))
    res.info["p_min"] = _p_min_for(plan)
    return _attach_mse(res, plan)


def run_tmcqc4(plan: MarchPlan) -> MarchResult:
    if plan.method != 4:
        plan = plan.with_(method=4)
    _check(plan)
    ts, scale = _implicit_termset(plan)
    res = _run_serial(plan, ts, scale)
    P = _p_min_for(plan)
    Mn = np.eye(plan.problem.ng) - build_implicit(plan.problem)
    res.info["p_min"] = P
    res.info["eps_n"] = truncation_error(Mn, P)
    return res


def run_tmcqc5_6(plan: MarchPlan) -> MarchResult:
    if plan.method not in (5, 6):
        raise ValueError("run_tmcqc5_6 needs method 5 or 6")
    _check(plan)
    p = plan.problem
    A, b = build_oneshot(p, plan.scheme, plan.c_pad)
    delta = oneshot_scaling(A)
    Mn = np.eye(A.shape[0]) - delta * A
    P = _p_min_for(plan)
    ts = neumann_termset(Mn, P, plan.epsilon, plan.K)
    nb = A.shape[0] // p.ng
    res = _run_block(plan, ts, delta, np.arange(nb), P ** 3, b, lambda out: split_blocks(out, p.ng))
    res.info.update({"p_min": P, "oneshot_delta": delta, "eps_n": truncation_error(Mn, P),
                     "spectral_radius": spectral_radius(Mn), "blocks": nb})
    return _attach_mse(res, plan)


RUNNERS = {1: run_tmcqc1, 2: run_tmcqc2, 3: run_tmcqc3, 4: run_tmcqc4, 5: run_tmcqc5_6, 6: run_tmcqc5_6}


def _check(plan):
    try:
        validate_plan(plan)
    except CeilingError as e:
        raise PlanCeilingError(str(e)) from e
    except (StabilityError, ConvergenceError) as e:
        raise PlanError(str(e)) from e


def run(plan: MarchPlan) -> MarchResult:
    t0 = time.perf_counter()
    res = RUNNERS[plan.method](plan)
    res.info["wall_s"] = time.perf_counter() - t0
    return res


# ---------------------------------------------------------------- extrapolation


def run_richardson(plan: MarchPlan, eps1, eps2):
    """Two-epsilon extrapolated march.

    Exact mode runs the two marches independently and combines every stored
    field. Stepwise shot mode combines the two estimates after every step and
    re-prepares the combined field, so the extrapolated state is what marches.
    Returns (extrapolated, result_eps1, result_eps2); in stepwise mode the two
    component results hold the per-step estimates that fed the combination.
    """
    if not eps1 > eps2 > 0:
        raise ValueError("need eps1 > eps2 > 0")
    g2 = (eps1 / eps2) ** 2
    comb = lambda a, b: (a - g2 * b) / (1 - g2)
    stepwise = (not plan.exact) and plan.mode.protocol == "stepwise" and plan.method in (2, 4)
    if not stepwise:
        r1 = run(plan.with_(epsilon=eps1))
        r2 = run(plan.with_(epsilon=eps2))
        ex = MarchResult(plan.method, r1.steps, comb(r1.fields, r2.fields), r1.p_succ_steps,
                         r1.p_succ_total, float("nan"), r1.lcu_depth, r1.n_qubits, r1.n_terms,
                         info={"eps1": eps1, "eps2": eps2, "feed_forward": False})
        return _attach_mse(ex, plan), r1, r2
    _check(plan)
    p = plan.problem
    t1, s1 = step_termset(plan, eps1)
    t2, s2 = step_termset(plan, eps2)
    v = initial_condition(p)
    F, F1, F2, P1, P2 = [v], [v], [v], [], []
    ss = np.random.SeedSequence(plan.mode.seed)
    lost = False
    for j in range(p.tau):
        if lost or not np.any(v):
            lost = True
            for L in (F, F1, F2):
                L.append(np.zeros(p.ng))
            P1.append(0.0)
            P2.append(0.0)
            continue
        k1, k2 = ss.spawn(2)
        w1, ph1, _ = _stepwise_step(t1, s1, v, plan, k1.generate_state(2))
        w2, ph2, _ = _stepwise_step(t2, s2, v, plan, k2.generate_state(2))
        v = comb(w1, w2)
        F.append(v)
        F1.append(w1)
        F2.append(w2)
        P1.append(ph1)
        P2.append(ph2)
    steps = np.arange(p.tau + 1)
    mk = lambda fs, ps, e: _attach_mse(MarchResult(plan.method, steps, np.array(fs), np.array(ps),
                                                   float(np.prod(ps)), float("nan"), p.tau, 0,
                                                   t1.n_terms, info={"epsilon": e}), plan)
    ex = mk(F, P1, None)
    ex.info = {"eps1": eps1, "eps2": eps2, "feed_forward": True, "lost": lost,
               "p_succ_eps2": [float(x) for x in P2]}
    return ex, mk(F1, P1, eps1), mk(F2, P2, eps2)


# ---------------------------------------------------------------- accounting


def lcu_applications(plan: MarchPlan):
    """Number of base-LCU factors whose normalization the post-selection pays."""
    if plan.method in (1, 2, 3, 4):
        return plan.problem.tau
    return 1


def block_normalization(plan: MarchPlan):
    """lambda * s: LCU one-norm of one base factor times its classical factor."""
    if plan.method in (1, 2):
        return plan.K / (2 * plan.epsilon * plan.problem.delta_scale)
    if plan.method in (3, 4):
        ts, s = _implicit_termset(plan)
        return ts.lam * s
    p = plan.problem
    A, _ = build_oneshot(p, plan.scheme, plan.c_pad)
    d = oneshot_scaling(A)
    P = _p_min_for(plan)
    lam = 1 + (P - 1) * plan.K / (2 * plan.epsilon)
    return lam * d


def success_probability(plan: MarchPlan, trajectory):
    """(p_succ, N_s_required, eta) from the telescoped norm ratios.

    p_succ = eta^(-2 G_L) ||Psi_tau||^2 / ||Psi_0||^2 with eta = lambda s; for
    the explicit methods eta = K / (2 eps delta), i.e. 1/(eps delta) when K = 2,
    and ||A_E|| = 1 for the periodic operator.
    """
    fields = getattr(trajectory, "fields", trajectory)
    fields = np.asarray(fields)
    n0 = float(np.linalg.norm(fields[0]))
    nt = float(np.linalg.norm(fields[-1]))
    if nt == 0:
        raise ZeroDivisionError("final field has zero norm")
    G = lcu_applications(plan)
    eta = block_normalization(plan)
    p_succ = eta ** (-2 * G) * (nt / n0) ** 2
    return p_succ, 1.0 / p_succ, eta


def gate_complexity_gu(s, epsilon, N, eps_u):
    """(s eps + 1)(log N + log^2.5(eps/eps_U)) log(eps/eps_U), constants dropped."""
    r = math.log(epsilon / eps_u)
    return (s * epsilon + 1) * (math.log(N) + abs(r) ** 2.5) * r


def complexity_report(plan: MarchPlan, s=None, eps_u=1e-6):
    p = plan.problem
    tau = p.tau
    s = 4 if s is None else s            # d + 2 for the second-order 1-D stencil
    P = _p_min_for(plan) if plan.method >= 3 else None
    depth = {1: tau ** 2, 2: tau, 3: float(tau) ** (P ** 3) if P else None,
             4: tau * P ** 3 if P else None, 5: P ** 3 if P else None, 6: P ** 3 if P else None}[plan.method]
    lg = lambda x: math.log2(x) if x > 1 else 0.0
    qubits = {1: lg(p.ng * tau), 2: lg(p.ng * tau), 3: (P ** 3 * lg(tau * p.ng)) if P else None,
              4: lg(tau * p.ng * P) if P else None, 5: lg(p.ng * tau * P) if P else None,
              6: lg(p.ng * tau * P) if P else None}[plan.method]
    kappa = None
    if plan.method >= 3:
        from .linalg import implicit_kappa
        kappa = implicit_kappa(np.eye(p.ng) - build_implicit(p)) if plan.method in (3, 4, 6) else None
    classical = p.ng * s * tau
    if plan.method in (3, 4, 5, 6):
        k = kappa if kappa is not None else 1.0
        classical = p.ng * s * tau * k * math.log(1 / plan.epsilon) if plan.epsilon < 1 else classical
    try:
        nq = qubit_count(plan)
    except Exception:
        nq = None
    return {"method": plan.method, "name": METHOD_NAMES[plan.method], "lcu_depth": depth,
            "qubits_table": qubits, "qubits_circuit": nq, "p_min": P, "sparsity": s,
            "gate_complexity_gu": gate_complexity_gu(s, plan.epsilon, p.ng, eps_u),
            "classical_cost": classical, "kappa": kappa}
