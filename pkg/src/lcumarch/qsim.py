"""State-vector circuit engine with registers, controlled blocks, bit-flip
noise, shot sampling and post-selection.

Qubit q is bit q of the basis index. Registers are packed from bit 0 upward
in declaration order, so a bitstring printed most-significant first reads
last-declared register first (e.g. tag | clock | ancilla | data).
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _backend as kern
from .linalg import as_vector, is_unitary, state_prep_unitary

MAX_QUBITS = 26

_H = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)
_X = np.array([[0, 1], [1, 0]], dtype=complex)
_SDG = np.array([[1, 0], [0, -1j]], dtype=complex)


def _ry(theta):
    c, s = math.cos(theta / 2), math.sin(theta / 2)
    return np.array([[c, -s], [s, c]], dtype=complex)


# ---------------------------------------------------------------- layout


class RegisterLayout:
    def __init__(self, registers):
        """registers: iterable of (name, n_qubits), packed from bit 0 up."""
        self.sizes = {}
        self.offsets = {}
        off = 0
        for name, size in registers:
            if name in self.sizes:
                raise ValueError(f"duplicate register {name}")
            if size < 0:
                raise ValueError("register size must be >= 0")
            self.sizes[name] = int(size)
            self.offsets[name] = off
            off += int(size)
        if off > MAX_QUBITS:
            raise ValueError(f"{off} qubits exceeds the {MAX_QUBITS}-qubit cap")
        if off == 0:
            raise ValueError("layout has no qubits")
        self.n = off

    @property
    def dim(self):
        return 1 << self.n

    def names(self):
        return list(self.sizes)

    def qubits(self, name):
        o = self.offsets[name]
        return list(range(o, o + self.sizes[name]))

    def qubit(self, name, i=0):
        if not 0 <= i < self.sizes[name]:
            raise IndexError(f"{name}[{i}] out of range")
        return self.offsets[name] + i

    def pattern_controls(self, pattern: dict):
        """{register: value} -> {qubit: bit}."""
        ctrl = {}
        for name, val in pattern.items():
            size = self.sizes[name]
            if not 0 <= val < (1 << size):
                raise ValueError(f"value {val} does not fit register {name}")
            for i in range(size):
                ctrl[self.offsets[name] + i] = (val >> i) & 1
        return ctrl

    def extract(self, index, name):
        return (np.asarray(index) >> self.offsets[name]) & ((1 << self.sizes[name]) - 1)

    def to_dict(self):
        return {"registers": [[k, v] for k, v in self.sizes.items()]}

    def __eq__(self, other):
        return isinstance(other, RegisterLayout) and list(self.sizes.items()) == list(other.sizes.items())

    def __repr__(self):
        return "RegisterLayout(" + ", ".join(f"{k}:{v}" for k, v in self.sizes.items()) + ")"


# ---------------------------------------------------------------- circuit


@dataclass
class Gate:
    kind: str                     # h x ry sdg unitary reset measure barrier
    targets: tuple
    controls: dict = field(default_factory=dict)
    matrix: Optional[np.ndarray] = None
    param: float = 0.0
    label: str = ""

    @property
    def touched(self):
        return tuple(self.targets) + tuple(self.controls)

    def payload(self):
        if self.kind == "h":
            return _H
        if self.kind == "x":
            return _X
        if self.kind == "sdg":
            return _SDG
        if self.kind == "ry":
            return _ry(self.param)
        return self.matrix

    def to_record(self):
        rec = {"kind": self.kind, "targets": list(self.targets),
               "controls": {str(k): int(v) for k, v in self.controls.items()}}
        if self.kind == "ry":
            rec["param"] = self.param
        if self.kind == "unitary":
            m = np.ascontiguousarray(self.matrix, dtype=complex)
            rec["payload_hash"] = hashlib.sha256(m.tobytes()).hexdigest()[:16]
            rec["dim"] = m.shape[0]
        if self.label:
            rec["label"] = self.label
        return rec


class Circuit:
    def __init__(self, layout: RegisterLayout):
        self.layout = layout
        self.gates: list[Gate] = []

    # builders ---------------------------------------------------------
    def _q(self, q):
        if not 0 <= q < self.layout.n:
            raise IndexError(f"qubit {q} outside layout")
        return q

    def _ctrl(self, controls):
        ctrl = {}
        for q, v in (controls or {}).items():
            ctrl[self._q(int(q))] = int(v)
        return ctrl

    def _add(self, g):
        if set(g.targets) & set(g.controls):
            raise ValueError("a qubit cannot be both target and control")
        self.gates.append(g)
        return self

    def h(self, q, controls=None):
        return self._add(Gate("h", (self._q(q),), self._ctrl(controls)))

    def x(self, q, controls=None):
        return self._add(Gate("x", (self._q(q),), self._ctrl(controls)))

    def cnot(self, c, t):
        return self.x(t, {c: 1})

    def ry(self, q, theta, controls=None):
        return self._add(Gate("ry", (self._q(q),), self._ctrl(controls), param=float(theta)))

    def sdg(self, q, controls=None):
        return self._add(Gate("sdg", (self._q(q),), self._ctrl(controls)))

    def unitary(self, targets, U, controls=None, label="", check=True):
        if isinstance(targets, str):
            targets = self.layout.qubits(targets)
        targets = tuple(self._q(q) for q in targets)
        U = np.ascontiguousarray(U, dtype=complex)
        if U.shape != (1 << len(targets),) * 2:
            raise ValueError(f"payload shape {U.shape} does not match {len(targets)} targets")
        if check and not is_unitary(U):
            raise ValueError("payload is not unitary within 1e-10")
        return self._add(Gate("unitary", targets, self._ctrl(controls), U, label=label))

    def reset(self, q):
        return self._add(Gate("reset", (self._q(q),)))

    def measure(self, register=None):
        qs = range(self.layout.n) if register is None else self.layout.qubits(register)
        return self._add(Gate("measure", tuple(qs)))

    def barrier(self, label=""):
        return self._add(Gate("barrier", (), label=label))

    def extend(self, other: "Circuit"):
        if other.layout != self.layout:
            raise ValueError("layout mismatch")
        self.gates.extend(other.gates)
        return self

    # info -------------------------------------------------------------
    def count(self, kinds=None):
        return sum(1 for g in self.gates if kinds is None or g.kind in kinds)

    def measured_qubits(self):
        qs = []
        for g in self.gates:
            if g.kind == "measure":
                qs.extend(q for q in g.targets if q not in qs)
        return sorted(qs) if qs else list(range(self.layout.n))

    def dump(self):
        return {"layout": self.layout.to_dict(), "gates": [g.to_record() for g in self.gates]}

    def dumps(self):
        return json.dumps(self.dump(), indent=1)


def load_circuit(data, payloads=None) -> Circuit:
    """Rebuild a circuit from dump(); dense payloads are looked up by hash."""
    if isinstance(data, str):
        data = json.loads(data)
    c = Circuit(RegisterLayout([tuple(r) for r in data["layout"]["registers"]]))
    payloads = payloads or {}
    for rec in data["gates"]:
        ctrl = {int(k): v for k, v in rec.get("controls", {}).items()}
        kind = rec["kind"]
        t = rec["targets"]
        if kind in ("h", "x", "sdg"):
            getattr(c, kind)(t[0], ctrl)
        elif kind == "ry":
            c.ry(t[0], rec["param"], ctrl)
        elif kind == "unitary":
            h = rec["payload_hash"]
            if h not in payloads:
                raise KeyError(f"missing payload {h}")
            c.unitary(t, payloads[h], ctrl, rec.get("label", ""))
        elif kind == "reset":
            c.reset(t[0])
        elif kind == "measure":
            c._add(Gate("measure", tuple(t)))
        elif kind == "barrier":
            c.barrier(rec.get("label", ""))
        else:
            raise ValueError(f"unknown gate kind {kind}")
    return c


def payload_table(circ: Circuit):
    out = {}
    for g in circ.gates:
        if g.kind == "unitary":
            out[g.to_record()["payload_hash"]] = g.matrix
    return out


# ---------------------------------------------------------------- state


@dataclass
class QuantumState:
    amplitudes: np.ndarray
    layout: RegisterLayout
    norm: float = 1.0              # classical norm of the encoded field
    p_succ: float = 1.0            # set on post-selected states

    def copy(self):
        return QuantumState(self.amplitudes.copy(), self.layout, self.norm, self.p_succ)

    def probabilities(self):
        a = self.amplitudes
        return a.real ** 2 + a.imag ** 2

    def register_amplitudes(self, name, pattern=None):
        """Amplitudes over one register with all other qubits fixed by pattern
        (registers missing from the pattern are fixed at 0)."""
        lay = self.layout
        pat = {k: 0 for k in lay.names() if k != name}
        pat.update(pattern or {})
        base = sum(v << lay.offsets[k] for k, v in pat.items())
        idx = base + (np.arange(1 << lay.sizes[name]) << lay.offsets[name])
        return self.amplitudes[idx]


def zero_state(layout: RegisterLayout) -> QuantumState:
    a = np.zeros(layout.dim, dtype=complex)
    a[0] = 1.0
    return QuantumState(a, layout)


def _is_basis(v):
    nz = np.flatnonzero(np.abs(v) > 0)
    return nz.size == 1, (nz[0] if nz.size else -1)


def prepare_gates(circ: Circuit, field, register="data", dilated=False, controls=None):
    """Append gates loading field/||field|| into register; returns ||field||.

    A single basis vector becomes X gates, a uniform vector a Hadamard layer,
    anything else one dense state-preparation block.
    """
    v = as_vector(np.asarray(field, dtype=complex))
    nrm = float(np.linalg.norm(v))
    if nrm == 0:
        raise ValueError("cannot encode the zero vector")
    size = circ.layout.sizes[register]
    full = np.zeros(1 << size, dtype=complex)
    off = (1 << size) // 2 if dilated else 0
    if off + v.size > full.size:
        raise ValueError(f"field of length {v.size} does not fit register {register}")
    full[off:off + v.size] = v / nrm
    qs = circ.layout.qubits(register)
    basis, k = _is_basis(full)
    if basis and abs(full[k] - 1) < 1e-14:
        for i, q in enumerate(qs):
            if (k >> i) & 1:
                circ.x(q, controls)
    elif np.allclose(full, full[0]) and abs(full[0].imag) < 1e-15 and full[0].real > 0:
        for q in qs:
            circ.h(q, controls)
    else:
        circ.unitary(qs, state_prep_unitary(full), controls, label="prep", check=False)
    return nrm


def prepare_input(layout: RegisterLayout, field, dilated=False, register="data") -> QuantumState:
    c = Circuit(layout)
    nrm = prepare_gates(c, field, register, dilated)
    st = apply(zero_state(layout), c)
    st.norm = nrm
    return st


# ---------------------------------------------------------------- exact apply


def _gate_args(g: Gate):
    ts = g.targets
    m = 1 << len(ts)
    offs = np.zeros(m, dtype=np.int64)
    for a in range(m):
        o = 0
        for j, q in enumerate(ts):
            if (a >> j) & 1:
                o |= 1 << q
        offs[a] = o
    tmask = sum(1 << q for q in ts)
    cmask = sum(1 << q for q in g.controls)
    cval = sum((v & 1) << q for q, v in g.controls.items())
    return offs, tmask, cmask, cval


class _Compiled:
    """Gate list with kernel arguments precomputed."""

    def __init__(self, circ: Circuit):
        self.circ = circ
        self.ops = []
        for g in circ.gates:
            if g.kind in ("measure", "barrier"):
                self.ops.append((g, None))
            elif g.kind == "reset":
                self.ops.append((g, _gate_args(g)))
            else:
                offs, tm, cm, cv = _gate_args(g)
                self.ops.append((g, (np.ascontiguousarray(g.payload(), dtype=complex), offs, tm, cm, cv)))


def _reset_rows(states, q):
    """Exact-mode reset: only defined when qubit q is in a basis state, in
    which case its weight is moved onto |0>."""
    dim = states.shape[1]
    i = np.arange(dim)
    one = i[(i >> q) & 1 == 1]
    zero = one ^ (1 << q)
    p1 = np.sum(np.abs(states[:, one]) ** 2, axis=1)
    p0 = np.sum(np.abs(states[:, zero]) ** 2, axis=1)
    if np.any((p1 > 1e-12) & (p0 > 1e-12)):
        raise ValueError("exact-mode reset needs qubit in a basis state; sample shots instead")
    states[:, zero] = np.where(p1[:, None] > 1e-12, states[:, one], states[:, zero])
    states[:, one] = 0


def _reset_rows_sampled(states, q, uniforms):
    dim = states.shape[1]
    i = np.arange(dim)
    one = i[(i >> q) & 1 == 1]
    zero = one ^ (1 << q)
    p1 = np.sum(np.abs(states[:, one]) ** 2, axis=1)
    tot = np.sum(np.abs(states) ** 2, axis=1)
    got1 = uniforms * tot < p1
    sel = np.where(got1)[0]
    keep = np.where(got1[:, None], states[:, one], states[:, zero])
    scale = np.where(got1, p1, tot - p1)
    scale = np.sqrt(np.where(scale > 0, tot / np.where(scale > 0, scale, 1), 0))
    states[:, zero] = keep * scale[:, None]
    states[:, one] = 0
    return sel


def apply(state: QuantumState, circ: Circuit, noise=None, rng=None, hook=None) -> QuantumState:
    """Apply circ to state. Without noise (or with all rates 0) this is exact.

    With noise a single Monte Carlo trajectory is drawn (use sample() for many
    shots). hook(label, state_array) is called at barriers.
    """
    if state.layout != circ.layout:
        raise ValueError("state and circuit layouts differ")
    out = state.copy()
    rows = out.amplitudes.reshape(1, -1)
    noisy = noise is not None and noise.any()
    if noisy and rng is None:
        rng = np.random.default_rng(noise.rng_seed)
    comp = _Compiled(circ)
    for g, args in comp.ops:
        if g.kind == "barrier":
            if hook is not None:
                hook(g.label, rows[0])
            continue
        if g.kind == "measure":
            continue
        if g.kind == "reset":
            q = g.targets[0]
            if noisy:
                _reset_rows_sampled(rows, q, rng.random(1))
                if rng.random() < noise.p_res:
                    kern.xor_permute(rows, np.array([1 << q], dtype=np.int64))
            else:
                _reset_rows(rows, q)
            continue
        kern.apply_matrix(rows, *args)
        if noisy:
            p = noise.flip_prob(g)
            mask = 0
            for q in g.touched:
                if rng.random() < p:
                    mask |= 1 << q
            if mask:
                kern.xor_permute(rows, np.array([mask], dtype=np.int64))
    return out


# ---------------------------------------------------------------- noise


def qsd_cnot_count(k):
    """CNOT count of a quantum Shannon decomposition of a dense k-qubit unitary."""
    if k <= 1:
        return 0
    return int(round((23 / 48) * 4 ** k - 1.5 * 2 ** k + 4 / 3))


def mcx_cnot_count(n_controls):
    if n_controls <= 1:
        return n_controls
    return 6 * (2 * n_controls - 3)      # Toffoli ladder with borrowed ancillas


@dataclass(frozen=True)
class NoiseModel:
    """Bit-flip noise.

    p_gate: X flip on every touched qubit after a gate; p_meas: readout flip;
    p_res: reset leaves |1>. With weighting='decomposed' a dense or
    multi-controlled gate counts as the elementary gates it would compile to
    (w of them), and its touched qubits flip with (1 - (1 - 2p)^w) / 2,
    the composition of w flip channels. weighting='unit' charges one location.
    """
    p_gate: float = 0.0
    p_meas: float = 0.0
    p_res: float = 0.0
    rng_seed: int = 0
    weighting: str = "unit"

    def __post_init__(self):
        for k in ("p_gate", "p_meas", "p_res"):
            v = getattr(self, k)
            if not 0 <= v <= 1:
                raise ValueError(f"{k} must be in [0, 1]")
        if self.weighting not in ("unit", "decomposed"):
            raise ValueError("weighting must be 'unit' or 'decomposed'")

    @classmethod
    def uniform(cls, p, seed=0, weighting="unit"):
        return cls(p, p, p, seed, weighting)

    def any(self):
        return self.p_gate > 0 or self.p_meas > 0 or self.p_res > 0

    def weight(self, g: Gate):
        if self.weighting == "unit":
            return 1
        k = len(g.touched)
        if g.kind == "unitary":
            return max(1, qsd_cnot_count(k))
        return max(1, mcx_cnot_count(len(g.controls)))

    def flip_prob(self, g: Gate):
        if g.kind == "reset":
            return self.p_res
        w = self.weight(g)
        if w == 1:
            return self.p_gate
        return 0.5 * (1 - (1 - 2 * self.p_gate) ** w)


# ---------------------------------------------------------------- shots


@dataclass
class ShotRecord:
    counts: dict                   # bitstring (measured qubits, MSB first) -> count
    shots: int
    measured: list                 # measured qubit indices
    post_pattern: dict = field(default_factory=dict)
    post_selected: int = 0
    data_counts: Optional[np.ndarray] = None

    @property
    def p_succ_hat(self):
        return self.post_selected / self.shots if self.shots else 0.0

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["bitstring", "count"])
            for k in sorted(self.counts):
                w.writerow([k, self.counts[k]])

    def to_dict(self):
        return {"shots": self.shots, "post_selected": self.post_selected,
                "p_succ_hat": self.p_succ_hat, "counts": dict(sorted(self.counts.items()))}


def _location_table(comp: _Compiled, noise: NoiseModel):
    """Flip locations (op index, qubit, prob) with nonzero probability."""
    locs = []
    for oi, (g, _) in enumerate(comp.ops):
        if g.kind in ("measure", "barrier"):
            continue
        p = noise.flip_prob(g)
        if p <= 0:
            continue
        qs = (g.targets[0],) if g.kind == "reset" else g.touched
        for q in qs:
            locs.append((oi, q, p))
    return locs


def _draw_error_patterns(rng, probs, n_rows):
    """Bernoulli patterns over locations conditioned on at least one event."""
    L = probs.size
    q = np.log1p(-probs)
    # P(first event at l) ∝ p_l prod_{m<l}(1-p_m)
    before = np.concatenate([[0.0], np.cumsum(q)[:-1]])
    w = probs * np.exp(before)
    cdf = np.cumsum(w)
    first = np.searchsorted(cdf, rng.random(n_rows) * cdf[-1], side="right")
    first = np.minimum(first, L - 1)
    pat = rng.random((n_rows, L)) < probs[None, :]
    col = np.arange(L)[None, :]
    pat &= col > first[:, None]
    pat[np.arange(n_rows), first] = True
    return pat


def _run_noisy_rows(comp: _Compiled, init, patterns, locs, rng, noise):
    """Simulate rows of trajectories with the given flip patterns."""
    R = patterns.shape[0]
    states = np.repeat(init[None, :], R, axis=0)
    by_op = {}
    for li, (oi, q, _) in enumerate(locs):
        by_op.setdefault(oi, []).append((li, q))
    for oi, (g, args) in enumerate(comp.ops):
        if g.kind in ("measure", "barrier"):
            continue
        if g.kind == "reset":
            _reset_rows_sampled(states, g.targets[0], rng.random(R))
        else:
            kern.apply_matrix(states, *args)
        if oi in by_op:
            masks = np.zeros(R, dtype=np.int64)
            for li, q in by_op[oi]:
                masks |= patterns[:, li].astype(np.int64) << q
            if masks.any():
                kern.xor_permute(states, masks)
    return kern.sample_rows(states, rng.random(R))


def _readout(rng, outcomes_counts, n_meas, p_meas):
    """Apply independent readout flips to a count vector over 2^n_meas outcomes."""
    if p_meas <= 0:
        return outcomes_counts
    counts = outcomes_counts.copy()
    total = int(counts.sum())
    p_any = 1 - (1 - p_meas) ** n_meas
    k = rng.binomial(total, p_any)
    if k == 0:
        return counts
    picked = rng.multivariate_hypergeometric(counts, k)
    counts -= picked
    src = np.repeat(np.arange(counts.size), picked)
    probs = np.full(n_meas, p_meas)
    pats = _draw_error_patterns(rng, probs, k)
    masks = (pats.astype(np.int64) << np.arange(n_meas)[None, :]).sum(axis=1)
    np.add.at(counts, src ^ masks, 1)
    return counts


def sample(state: QuantumState, shots: int, noise: Optional[NoiseModel] = None, seed=0,
           circuit: Optional[Circuit] = None, threads=1, chunk=1 << 18,
           final_state: Optional[QuantumState] = None, post_pattern=None, data_register="data"):
    """Draw shots measurement outcomes.

    Without a circuit, state itself is measured. With a circuit, state is the
    input and every shot runs the circuit; under noise only trajectories that
    contain at least one gate/reset error are simulated explicitly (their
    number is binomial), the rest are drawn from the exact output state.
    Results depend only on (inputs, seed, chunk), not on threads.
    """
    if shots < 1:
        raise ValueError("shots must be >= 1")
    layout = state.layout
    noise = noise or NoiseModel()
    if circuit is None:
        circuit = Circuit(layout)
    comp = _Compiled(circuit)
    exact = final_state if final_state is not None else apply(state, circuit)
    probs = exact.probabilities()
    probs = probs / probs.sum()
    locs = _location_table(comp, noise)
    lp = np.array([p for _, _, p in locs])
    p_clean = float(np.exp(np.sum(np.log1p(-lp)))) if lp.size else 1.0
    measured = circuit.measured_qubits()
    n_meas = len(measured)

    n_chunks = (shots + chunk - 1) // chunk
    seeds = np.random.SeedSequence(seed).spawn(n_chunks)

    def work(ci):
        rng = np.random.default_rng(seeds[ci])
        n = min(chunk, shots - ci * chunk)
        n_bad = rng.binomial(n, 1 - p_clean) if lp.size else 0
        counts = rng.multinomial(n - n_bad, probs)
        if n_bad:
            sub = 4096
            for s in range(0, n_bad, sub):
                r = min(sub, n_bad - s)
                pats = _draw_error_patterns(rng, lp, r)
                idx = _run_noisy_rows(comp, state.amplitudes, pats, locs, rng, noise)
                np.add.at(counts, idx, 1)
        return counts

    if threads > 1 and n_chunks > 1:
        with ThreadPoolExecutor(threads) as ex:
            parts = list(ex.map(work, range(n_chunks)))
    else:
        parts = [work(i) for i in range(n_chunks)]
    full = np.sum(parts, axis=0).astype(np.int64)

    # marginalize onto measured qubits, then readout noise
    idx = np.arange(layout.dim)
    sub_idx = np.zeros(layout.dim, dtype=np.int64)
    for j, q in enumerate(measured):
        sub_idx |= ((idx >> q) & 1) << j
    mcounts = np.bincount(sub_idx, weights=full, minlength=1 << n_meas).astype(np.int64)
    rrng = np.random.default_rng(np.random.SeedSequence(seed).spawn(n_chunks + 1)[-1])
    mcounts = _readout(rrng, mcounts, n_meas, noise.p_meas)

    rec = ShotRecord({format(int(k), f"0{n_meas}b"): int(mcounts[k]) for k in np.flatnonzero(mcounts)},
                     shots, measured)
    if post_pattern is not None:
        _postselect_record(rec, mcounts, layout, measured, post_pattern, data_register)
    return rec


def _postselect_record(rec, mcounts, layout, measured, pattern, data_register):
    pos = {q: j for j, q in enumerate(measured)}
    ctrl = layout.pattern_controls(pattern)
    k = np.arange(mcounts.size)
    ok = np.ones(k.size, bool)
    for q, v in ctrl.items():
        if q not in pos:
            raise ValueError(f"post-selection qubit {q} was not measured")
        ok &= ((k >> pos[q]) & 1) == v
    rec.post_pattern = dict(pattern)
    rec.post_selected = int(mcounts[ok].sum())
    if data_register in layout.sizes:
        dq = layout.qubits(data_register)
        if all(q in pos for q in dq):
            dval = np.zeros(k.size, dtype=np.int64)
            for i, q in enumerate(dq):
                dval |= ((k >> pos[q]) & 1) << i
            rec.data_counts = np.bincount(dval[ok], weights=mcounts[ok],
                                          minlength=1 << len(dq)).astype(np.int64)


def post_select(state: QuantumState, pattern: dict):
    """Project onto register values in pattern; returns (renormalized state, p)."""
    lay = state.layout
    ctrl = lay.pattern_controls(pattern)
    idx = np.arange(lay.dim)
    ok = np.ones(lay.dim, bool)
    for q, v in ctrl.items():
        ok &= ((idx >> q) & 1) == v
    a = np.where(ok, state.amplitudes, 0)
    p = float(np.sum(np.abs(a) ** 2))
    if p < 1e-300:
        raise ZeroDivisionError("post-selection pattern has zero probability")
    return QuantumState(a / np.sqrt(p), lay, state.norm, p), p


def estimate_field(record: ShotRecord, sign_source="exact", exact_amplitudes=None, dilated=False):
    """Magnitudes sqrt(count / post_selected) per data index, signed.

    sign_source 'exact' copies signs (phases) from exact_amplitudes,
    'nonnegative' takes every entry as >= 0. Dilated records return the lower
    half, where the chained encoding leaves the result.
    """
    if record.data_counts is None or record.post_selected == 0:
        raise ValueError("record has no post-selected counts")
    mag = np.sqrt(record.data_counts / record.post_selected)
    if sign_source == "exact":
        if exact_amplitudes is None:
            raise ValueError("exact sign source needs the exact amplitudes")
        ea = np.asarray(exact_amplitudes)
        ph = np.where(np.abs(ea) > 0, ea / np.where(np.abs(ea) > 0, np.abs(ea), 1), 1.0)
        if np.all(np.abs(ph.imag) < 1e-12):
            ph = np.sign(ph.real) + (ph.real == 0)
        out = mag * ph
    elif sign_source == "nonnegative":
        out = mag.astype(float)
    else:
        raise ValueError("sign_source must be 'exact' or 'nonnegative'")
    if dilated:
        out = out[out.size // 2:]
    return out


# ---------------------------------------------------------------- Hadamard test


def hadamard_test(prep: Circuit, U, part="re", shots=0, seed=0):
    """Estimate Re or Im <psi|U|psi> where prep builds |psi> from |0...0>.

    shots=0 returns the exact value 2 P(0) - 1.
    """
    U = np.asarray(U, dtype=complex)
    if not is_unitary(U):
        raise ValueError("U must be unitary")
    if part not in ("re", "im"):
        raise ValueError("part must be 're' or 'im'")
    lay0 = prep.layout
    regs = [(k, v) for k, v in lay0.sizes.items()] + [("hadamard_anc", 1)]
    lay = RegisterLayout(regs)
    if U.shape[0] != lay0.dim:
        raise ValueError("U must act on the whole prepared register set")
    c = Circuit(lay)
    for g in prep.gates:
        if g.kind != "measure":
            c.gates.append(g)
    a = lay.qubit("hadamard_anc")
    c.h(a)
    c.unitary(list(range(lay0.n)), U, {a: 1}, label="U")
    if part == "im":
        c.sdg(a)
    c.h(a)
    st = apply(zero_state(lay), c)
    if shots:
        c.measure("hadamard_anc")
        rec = sample(zero_state(lay), shots, None, seed, circuit=c, final_state=st)
        p0 = rec.counts.get("0", 0) / shots
    else:
        p0 = float(np.sum(st.probabilities()[: lay0.dim]))
    return 2 * p0 - 1
