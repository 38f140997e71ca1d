"""Finite-difference advection-diffusion model and its classical references."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .linalg import as_vector

BCS = ("periodic", "dirichlet")
ICS = ("delta", "shifted_sine", "custom")
SCHEMES = ("explicit", "implicit")


class StabilityError(ValueError):
    """Raised when a scheme's stability or convergence precondition fails."""


def _is_pow2(n):
    return n >= 1 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class FlowProblem:
    ng: int
    dt: float
    tau: int
    d: float = 1.0
    c: float = 0.0
    l: float = 1.0
    bc: str = "periodic"
    ic: str = "delta"
    delta_scale: float = 1.0
    custom_ic: Optional[tuple] = field(default=None, compare=False)

    def __post_init__(self):
        if not _is_pow2(int(self.ng)) or self.ng < 2:
            raise ValueError(f"ng must be a power of 2 >= 2, got {self.ng}")
        if self.dt <= 0 or self.l <= 0:
            raise ValueError("dt and l must be positive")
        if int(self.tau) < 0:
            raise ValueError("tau must be >= 0")
        if self.d < 0:
            raise ValueError("diffusion coefficient must be nonnegative")
        if self.bc not in BCS:
            raise ValueError(f"bc must be one of {BCS}")
        if self.ic not in ICS:
            raise ValueError(f"ic must be one of {ICS}")
        if self.delta_scale <= 0:
            raise ValueError("delta_scale must be positive")
        if self.ic == "custom":
            if self.custom_ic is None or len(self.custom_ic) != self.ng:
                raise ValueError("custom ic needs a vector of length ng")

    @property
    def dx(self):
        return self.l / self.ng

    @property
    def alpha(self):
        return self.d * self.dt / self.dx ** 2

    @property
    def chi(self):
        return self.c * self.dt / (2 * self.dx)

    @property
    def x(self):
        return np.arange(self.ng) * self.dx

    def with_(self, **kw):
        return replace(self, **kw)

    @classmethod
    def from_dict(cls, cfg: dict):
        keys = {"ng", "dt", "tau", "d", "c", "l", "bc", "ic", "delta_scale", "custom_ic"}
        extra = set(cfg) - keys
        if extra:
            raise KeyError(f"unknown problem keys: {sorted(extra)}")
        kw = dict(cfg)
        if kw.get("custom_ic") is not None:
            kw["custom_ic"] = tuple(float(v) for v in kw["custom_ic"])
        for k in ("ng", "tau"):
            if k in kw:
                kw[k] = int(kw[k])
        return cls(**kw)

    def to_dict(self):
        out = {k: getattr(self, k) for k in ("ng", "dt", "tau", "d", "c", "l", "bc", "ic", "delta_scale")}
        if self.custom_ic is not None:
            out["custom_ic"] = list(self.custom_ic)
        return out


@dataclass(frozen=True)
class Trajectory:
    fields: np.ndarray          # (n_steps, ng)
    steps: np.ndarray           # time-step index of each row

    def __post_init__(self):
        if self.fields.shape[0] != len(self.steps):
            raise ValueError("fields/steps length mismatch")

    def __len__(self):
        return self.fields.shape[0]

    @property
    def final(self):
        return self.fields[-1]


def initial_condition(p: FlowProblem) -> np.ndarray:
    if p.ic == "delta":
        u = np.zeros(p.ng)
        u[p.ng // 2] = 1.0
        return u
    if p.ic == "shifted_sine":
        return 0.5 * np.sin(np.pi * p.x) + 1.0
    u = as_vector(np.asarray(p.custom_ic, dtype=float))
    if u.size != p.ng:
        raise ValueError("custom ic dimension mismatch")
    return u


def _tridiag(n, diag, sup, sub, periodic):
    A = np.zeros((n, n))
    i = np.arange(n)
    A[i, i] = diag
    A[i[:-1], i[:-1] + 1] = sup
    A[i[1:], i[1:] - 1] = sub
    if periodic:
        A[0, n - 1] += sub
        A[n - 1, 0] += sup
    return A


def check_explicit_stable(p: FlowProblem):
    if p.alpha > 0.5 + 1e-12:
        raise StabilityError(f"explicit scheme unstable: alpha={p.alpha:.4g} > 0.5")


def build_explicit(p: FlowProblem) -> np.ndarray:
    check_explicit_stable(p)
    a, c = p.alpha, p.chi
    return _tridiag(p.ng, 1 - 2 * a, a - c, a + c, p.bc == "periodic")


def build_implicit(p: FlowProblem) -> np.ndarray:
    a, c = p.alpha, p.chi
    return _tridiag(p.ng, 1 + 2 * a, -a + c, -a - c, p.bc == "periodic")


def default_c_pad(ng, tau):
    nb = tau + 1
    return (1 << int(np.ceil(np.log2(nb)))) - nb if nb > 1 else 0


def build_oneshot(p: FlowProblem, scheme="explicit", c_pad=None):
    """Block lower-bidiagonal system whose solution stacks u^0 .. u^(tau+c_pad)."""
    if scheme not in SCHEMES:
        raise ValueError(f"scheme must be one of {SCHEMES}")
    if c_pad is None:
        c_pad = default_c_pad(p.ng, p.tau)
    if c_pad < 0:
        raise ValueError("c_pad must be nonnegative")
    n, tau = p.ng, p.tau
    nb = tau + 1 + c_pad
    I = np.eye(n)
    A = np.zeros((n * nb, n * nb))
    blk = lambda r, s: (slice(r * n, (r + 1) * n), slice(s * n, (s + 1) * n))
    A[blk(0, 0)] = I
    if scheme == "explicit":
        AE = build_explicit(p)
        for r in range(1, nb):
            A[blk(r, r)] = I
            A[blk(r, r - 1)] = -AE if r <= tau else -I
    else:
        AI = build_implicit(p)
        for r in range(1, nb):
            A[blk(r, r)] = AI if r <= tau else I
            A[blk(r, r - 1)] = -I
    b = np.zeros(n * nb)
    b[:n] = initial_condition(p)
    return A, b


def split_blocks(x, ng):
    return np.asarray(x).reshape(-1, ng)


def classical_march(p: FlowProblem, scheme="explicit") -> Trajectory:
    u = initial_condition(p)
    out = [u]
    if scheme == "explicit":
        A = build_explicit(p)
        for _ in range(p.tau):
            u = A @ u
            out.append(u)
    elif scheme == "implicit":
        import scipy.linalg as sla
        lu = sla.lu_factor(build_implicit(p))
        for _ in range(p.tau):
            u = sla.lu_solve(lu, u)
            out.append(u)
    else:
        raise ValueError(f"scheme must be one of {SCHEMES}")
    return Trajectory(np.array(out), np.arange(p.tau + 1))


def analytical_solution(p: FlowProblem, t: float, band_limited=True, tail_tol=1e-12) -> np.ndarray:
    """Periodic advected heat kernel for the delta initial condition.

    The band-limited form keeps the modes resolvable on the grid (|n| <= ng/2,
    Nyquist pair half weighted), so t = 0 gives the discrete delta exactly.
    The full form sums the periodic kernel until the dropped tail < tail_tol.
    """
    if p.bc != "periodic" or p.ic != "delta":
        raise ValueError("analytical solution needs periodic bc and delta ic")
    if t < 0:
        raise ValueError("t must be nonnegative")
    x0 = p.l / 2
    if band_limited:
        n = np.arange(-p.ng // 2, p.ng // 2 + 1)
        w = np.ones(n.size)
        w[0] = w[-1] = 0.5
    else:
        if t == 0:
            raise ValueError("full series diverges at t = 0; use band_limited")
        kk = 2 * np.pi / p.l
        nmax = int(np.ceil(np.sqrt(max(np.log(1 / tail_tol), 1.0) / (p.d * t)) / kk)) + 1 if p.d > 0 else None
        if nmax is None:
            raise ValueError("full series needs d > 0")
        n = np.arange(-nmax, nmax + 1)
        w = np.ones(n.size)
    k = 2 * np.pi * n / p.l
    ph = np.exp(1j * np.outer(p.x - x0 - p.c * t, k))
    return (ph @ (w * np.exp(-p.d * k ** 2 * t))).real / p.ng


def analytical_trajectory(p: FlowProblem, steps=None) -> np.ndarray:
    steps = np.arange(p.tau + 1) if steps is None else np.asarray(steps)
    return np.array([analytical_solution(p, j * p.dt) for j in steps])
