"""Richardson extrapolation, observables read off encoded fields, error metrics."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import qsim
from .fdmodel import FlowProblem
from .lcu import decompose, from_decomposition


@dataclass(frozen=True)
class ExtrapolationPair:
    eps1: float
    eps2: float
    u_eps1: np.ndarray
    u_eps2: np.ndarray

    def __post_init__(self):
        if not (self.eps1 > self.eps2 > 0):
            raise ValueError(f"need eps1 > eps2 > 0, got ({self.eps1}, {self.eps2})")
        if np.shape(self.u_eps1) != np.shape(self.u_eps2):
            raise ValueError("fields must have the same shape")

    @property
    def gamma(self):
        return self.eps1 / self.eps2


@dataclass(frozen=True)
class FitResult:
    prefactor: float
    exponent: float
    residual: float

    def __call__(self, x):
        return self.prefactor * np.asarray(x, dtype=float) ** self.exponent

    def to_dict(self):
        return {"prefactor": self.prefactor, "exponent": self.exponent, "residual": self.residual}


def richardson_combine(u1, u2, gamma):
    """(u1 - gamma^2 u2) / (1 - gamma^2); cancels the eps^2 term."""
    g2 = float(gamma) ** 2
    if g2 == 1.0:
        raise ZeroDivisionError("gamma = 1 gives no extrapolation")
    return (np.asarray(u1) - g2 * np.asarray(u2)) / (1.0 - g2)


def richardson(pair: ExtrapolationPair):
    return richardson_combine(pair.u_eps1, pair.u_eps2, pair.gamma)


def richardson_iterated(eps, fields):
    """Repeated pairwise elimination in powers of eps^2.

    eps strictly decreasing; with m values the errors through eps^(2m-2) are
    removed. For two values this is exactly richardson().
    """
    eps = np.asarray(eps, dtype=float)
    if eps.ndim != 1 or eps.size < 2:
        raise ValueError("need at least two eps values")
    if np.any(np.diff(eps) >= 0) or eps[-1] <= 0:
        raise ValueError("eps must be positive and strictly decreasing")
    h = eps ** 2
    T = [np.asarray(f, dtype=complex if np.iscomplexobj(f) else float) for f in fields]
    if len(T) != eps.size:
        raise ValueError("one field per eps value")
    for k in range(1, eps.size):
        T = [(h[i + k] * T[i] - h[i] * T[i + 1]) / (h[i + k] - h[i]) for i in range(len(T) - 1)]
    return T[0]


def accuracy_gain(mse_eps2, mse_extrapolated):
    """Fractional MSE reduction of the extrapolated field over the finer eps."""
    return 1.0 - mse_extrapolated / mse_eps2


# ---------------------------------------------------------------- metrics


def mse(a, b):
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    d = a - b
    return float(np.mean(d.real ** 2 + d.imag ** 2)) if np.iscomplexobj(d) else float(np.mean(d ** 2))


def fit_power_law(xs, ys) -> FitResult:
    """Least squares on (log x, log y): y ~ prefactor * x^exponent.

    residual is the sum of squared log residuals.
    """
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("xs and ys must be 1-D of equal length")
    if x.size < 3:
        raise ValueError("need at least 3 points")
    if np.any(x <= 0) or np.any(y <= 0) or not np.all(np.isfinite(x * y)):
        raise ValueError("power-law fit needs positive finite data")
    lx, ly = np.log(x), np.log(y)
    slope, icpt = np.polyfit(lx, ly, 1)
    r = ly - (slope * lx + icpt)
    return FitResult(float(np.exp(icpt)), float(slope), float(np.sum(r ** 2)))


# ---------------------------------------------------------------- observables


def _nbits(n):
    return max(1, int(math.ceil(math.log2(n)))) if n > 1 else 1


def mean_flow(field, shots=0, seed=0):
    """Spatial mean of field, via a Hadamard layer and classically.

    The field is loaded normalized; after H on every data qubit the |0..0>
    amplitude is sum(u)/(||u|| sqrt(2^n)). Scaling back gives the mean. With
    shots the magnitude comes from the measured frequency of |0..0> and the
    sign from the exact amplitude. Returns (quantum, classical).
    """
    u = np.real(np.asarray(field, dtype=complex))
    ng = u.size
    classical = float(np.mean(u))
    if not np.linalg.norm(u) > 0:            # zero or underflowing field
        return 0.0, classical
    n = _nbits(ng)
    lay = qsim.RegisterLayout([("data", n)])
    c = qsim.Circuit(lay)
    nrm = qsim.prepare_gates(c, u)
    for q in lay.qubits("data"):
        c.h(q)
    st = qsim.apply(qsim.zero_state(lay), c)
    a0 = st.amplitudes[0].real
    if shots:
        c.measure()
        rec = qsim.sample(qsim.zero_state(lay), shots, None, seed, circuit=c, final_state=st)
        a0 = math.copysign(math.sqrt(rec.counts.get("0" * n, 0) / shots), a0)
    quantum = a0 * nrm * math.sqrt(1 << n) / ng
    return float(quantum), classical


def derivative_matrix(p: FlowProblem):
    """Central first difference; Dirichlet keeps the boundary rows empty."""
    n = p.ng
    G = np.zeros((n, n))
    i = np.arange(n)
    G[i, (i + 1) % n] = 1.0
    G[i, (i - 1) % n] = -1.0
    if p.bc == "dirichlet":
        G[0, :] = 0
        G[-1, :] = 0
    return G / (2 * p.dx)


def _gradient_lcu(u, p: FlowProblem, epsilon):
    """Gu through one LCU block (exact amplitudes)."""
    from .tmcqc import block_circuit
    Gs = derivative_matrix(p) * p.dx          # entries +-1/2, norm <= 1
    ts = from_decomposition(decompose(Gs, epsilon, 4))
    circ, nrm = block_circuit(ts, u, measure=False)
    st = qsim.apply(qsim.zero_state(circ.layout), circ)
    a = st.register_amplitudes("data", {"anc": 0})[: p.ng]
    return np.real(a) * nrm * ts.lam / p.dx


def mean_gradient(field, p: FlowProblem, epsilon=1e-3):
    """Mean of du/dx by central differences. Returns (quantum, classical).

    Periodic: mean over all points (zero by telescoping). Dirichlet: mean over
    the interior rows. The quantum path applies the difference operator with a
    four-unitary block and takes the mean through mean_flow.
    """
    u = np.real(np.asarray(field, dtype=float))
    if u.size != p.ng or p.ng < 2:
        raise ValueError("field must have ng >= 2 entries")
    g_cl = derivative_matrix(p) @ u
    interior = slice(1, -1) if p.bc == "dirichlet" else slice(None)
    m = g_cl[interior].size
    classical = float(np.sum(g_cl[interior]) / m) if m else 0.0
    if not np.linalg.norm(u) > 0:
        return 0.0, classical
    g_q = _gradient_lcu(u, p, epsilon)
    if p.bc == "dirichlet":
        g_q[0] = g_q[-1] = 0.0
    if not np.any(np.abs(g_q) > 1e-300):
        return 0.0, classical
    q, _ = mean_flow(g_q)
    return float(q * p.ng / m), classical


def quantize(values, n_qpp, lo=None, hi=None):
    """Round-to-nearest on 2^n_qpp levels spanning [lo, hi]; returns (codes, dequantized, lo, hi)."""
    v = np.asarray(values, dtype=float)
    lo = float(v.min()) if lo is None else float(lo)
    hi = float(v.max()) if hi is None else float(hi)
    levels = (1 << n_qpp) - 1
    if hi == lo:
        return np.zeros(v.size, dtype=np.int64), np.full(v.size, lo), lo, hi
    codes = np.clip(np.rint((v - lo) / (hi - lo) * levels), 0, levels).astype(np.int64)
    return codes, lo + codes * (hi - lo) / levels, lo, hi


def nonlinear_observable(field, f, n_qpp=8, shots=0, seed=0):
    """Estimate (1/N) sum f(u_i) with value-controlled Ry rotations.

    Registers: index (uniform superposition over the N entries), value
    (n_qpp bits holding the quantized u_i), one ancilla. For each level k a
    Ry(arccos f(level_k)) on the ancilla controlled on value == k gives
    P(anc = 0) = (1 + mean f) / 2. Returns (estimate, truth, meta), where
    truth uses the unquantized field.
    """
    u = np.real(np.asarray(field, dtype=float))
    if not 1 <= n_qpp <= 12:
        raise ValueError("n_qpp must be in 1..12")
    ng = u.size
    codes, uq, lo, hi = quantize(u, n_qpp)
    fq = np.asarray([f(x) for x in uq], dtype=float)
    truth_vals = np.asarray([f(x) for x in u], dtype=float)
    if np.any(np.abs(fq) > 1 + 1e-12) or np.any(np.abs(truth_vals) > 1 + 1e-12):
        raise ValueError("f must map the field values into [-1, 1]")
    if np.unique(codes).size < np.unique(u).size:
        warnings.warn(f"n_qpp={n_qpp} merges distinct field values", RuntimeWarning, stacklevel=2)
    n_i = _nbits(ng)
    lay = qsim.RegisterLayout([("idx", n_i), ("val", n_qpp), ("anc", 1)])
    if lay.n > qsim.MAX_QUBITS:
        raise ValueError(f"needs {lay.n} qubits > {qsim.MAX_QUBITS}")
    c = qsim.Circuit(lay)
    qsim.prepare_gates(c, np.ones(ng), "idx")
    vq = lay.qubits("val")
    for i, k in enumerate(codes):
        if k == 0:
            continue
        on_i = lay.pattern_controls({"idx": i})
        for b, q in enumerate(vq):
            if (k >> b) & 1:
                c.x(q, on_i)
    a = lay.qubit("anc")
    for k in np.unique(codes):
        val = float(np.clip(f(lo + k * (hi - lo) / ((1 << n_qpp) - 1) if hi > lo else lo), -1, 1))
        c.ry(a, math.acos(val), lay.pattern_controls({"val": int(k)}))
    st = qsim.apply(qsim.zero_state(lay), c)
    p0 = float(np.sum(st.probabilities()[: 1 << (n_i + n_qpp)]))
    if shots:
        c.measure("anc")
        rec = qsim.sample(qsim.zero_state(lay), shots, None, seed, circuit=c, final_state=st)
        p0 = rec.counts.get("0", 0) / shots
    est = 2 * p0 - 1
    meta = {"lo": lo, "hi": hi, "n_qpp": n_qpp, "qubits": lay.n, "quantized_mean": float(np.mean(fq))}
    return float(est), float(np.mean(truth_vals)), meta


def dissipation(field, p: FlowProblem, n_qpp=8, shots=0, seed=0):
    """Mean viscous dissipation D <(du/dx)^2>, via nonlinear_observable.

    Returns (estimate, classical).
    """
    g = derivative_matrix(p) @ np.real(np.asarray(field, dtype=float))
    if p.bc == "dirichlet":
        g = g[1:-1]
    s = float(np.max(g ** 2))
    classical = p.d * float(np.mean(g ** 2))
    if s == 0:
        return 0.0, classical
    est, _, _ = nonlinear_observable(g, lambda x: x * x / s, n_qpp, shots, seed)
    return p.d * s * est, classical


def normalized_state_error(J, J_bar, b):
    """|| J b/||J b|| - J_bar b/||J_bar b|| || for an operator and its approximation."""
    J = np.asarray(J)
    J_bar = np.asarray(J_bar)
    b = np.asarray(b)
    u = J @ b
    v = J_bar @ b
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise ZeroDivisionError("operator annihilates the state")
    return float(np.linalg.norm(u / nu - v / nv))
