"""Compiled vs numpy kernels, and the end-to-end cost of a sampled block.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Each kernel runs on identical inputs under both backends; outputs are
compared before timings are printed.
"""
import argparse
import os
import subprocess
import sys
import time

import numpy as np

from lcumarch import _kernels_py as py

try:
    from lcumarch import _kernels as cy
except ImportError:
    cy = None


def _offsets(targets):
    m = 1 << len(targets)
    offs = np.zeros(m, dtype=np.int64)
    for a in range(m):
        for j, q in enumerate(targets):
            if (a >> j) & 1:
                offs[a] |= 1 << q
    return offs


def _case(rng, n_qubits, rows, k):
    dim = 1 << n_qubits
    states = rng.standard_normal((rows, dim)) + 1j * rng.standard_normal((rows, dim))
    states /= np.linalg.norm(states, axis=1, keepdims=True)
    targets = list(range(k))
    q, _ = np.linalg.qr(rng.standard_normal((1 << k, 1 << k)) + 1j * rng.standard_normal((1 << k, 1 << k)))
    ctrl = n_qubits - 1
    return (np.ascontiguousarray(states), np.ascontiguousarray(q), _offsets(targets),
            sum(1 << t for t in targets), 1 << ctrl, 1 << ctrl)


def _time(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench(repeat=5, seed=0):
    rng = np.random.default_rng(seed)
    rows = []
    for nq, R, k in [(10, 256, 1), (10, 256, 3), (14, 16, 2), (18, 1, 4)]:
        st, U, offs, tm, cm, cv = _case(rng, nq, R, k)
        masks = rng.integers(0, 1 << nq, R).astype(np.int64)
        u = rng.random(R)
        for name, call in [("apply_matrix", lambda m, s: m.apply_matrix(s, U, offs, tm, cm, cv)),
                           ("xor_permute", lambda m, s: m.xor_permute(s, masks)),
                           ("sample_rows", lambda m, s: m.sample_rows(s, u))]:
            a, b = st.copy(), st.copy()
            ra = call(py, a)
            if cy is not None:
                rb = call(cy, b)
                same = np.allclose(a, b) and (ra is None or np.array_equal(ra, rb))
            else:
                same = None
            tp = _time(lambda: call(py, st.copy()), repeat)
            tc = _time(lambda: call(cy, st.copy()), repeat) if cy is not None else float("nan")
            rows.append((name, nq, R, k, tp, tc, same))
    return rows


def bench_end_to_end(shots=1 << 18):
    """Wall time of one noisy sampled block under each backend (subprocesses)."""
    code = ("import time;from lcumarch import *;from lcumarch import qsim;"
            "p=FlowProblem(ng=16,dt=1e-3,tau=2,c=10.0);"
            "pl=MarchPlan(2,p,0.5,mode=Shots(%d,qsim.NoiseModel.uniform(1e-4,0,'decomposed'),0));"
            "t=time.perf_counter();r=run(pl);print(BACKEND,time.perf_counter()-t,r.final.sum())" % shots)
    out = []
    for pure in ("0", "1"):
        env = dict(os.environ, LCUMARCH_PURE=pure)
        res = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True)
        out.append(res.stdout.strip() or res.stderr.strip().splitlines()[-1])
    return out


def main(argv=None):
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--no-e2e", action="store_true")
    args = ap.parse_args(argv)
    print(f"{'kernel':14s} {'qubits':>6s} {'rows':>5s} {'k':>2s} {'python s':>10s} {'cython s':>10s} "
          f"{'speedup':>8s} agree")
    for name, nq, R, k, tp, tc, same in bench(args.repeat):
        print(f"{name:14s} {nq:6d} {R:5d} {k:2d} {tp:10.5f} {tc:10.5f} {tp / tc:8.1f} {same}")
    if not args.no_e2e:
        print("end to end (backend, seconds, checksum):")
        for line in bench_end_to_end():
            print("  " + line)


if __name__ == "__main__":
    main()
