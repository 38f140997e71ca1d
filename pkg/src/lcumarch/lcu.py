"""LCU block encodings (four- and two-unitary) and truncated Neumann inverses."""
from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import product as iproduct

import numpy as np
from scipy.optimize import minimize_scalar

from .linalg import (as_matrix, as_vector, expm_general, expm_hermitian,
                     hermitian_dilation, is_unitary, split_sym_antisym, spectral_radius)


class ConvergenceError(ValueError):
    pass


class CeilingError(RuntimeError):
    """A term-count or memory ceiling would be exceeded."""


@dataclass
class LcuDecomposition:
    epsilon: float
    coefficients: np.ndarray
    unitaries: list
    dilated: bool = False

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=float)
        if len(self.unitaries) not in (2, 4) or len(self.unitaries) != self.coefficients.size:
            raise ValueError("decomposition needs K in {2, 4} unitaries with one coefficient each")
        if not np.allclose(self.coefficients, self.coefficients[0]):
            raise ValueError("coefficients must all be equal")

    @property
    def K(self):
        return len(self.unitaries)

    @property
    def beta_total(self):
        return float(self.coefficients.sum())

    @property
    def dim(self):
        """Dimension of the encoded (undilated) operator."""
        n = self.unitaries[0].shape[0]
        return n // 2 if self.dilated else n

    def block_unitaries(self):
        """Circuit payloads.

        For a dilated decomposition each unitary is followed by a swap of the two
        halves, so an input [0, b] comes back as [0, M~ b]; steps then chain.
        """
        if not self.dilated:
            return list(self.unitaries)
        n = self.dim
        return [np.vstack([U[n:], U[:n]]) for U in self.unitaries]


def _check_eps(eps):
    if not eps > 0:
        raise ValueError(f"epsilon must be positive, got {eps}")


def decompose_four(M, epsilon) -> LcuDecomposition:
    _check_eps(epsilon)
    M = as_matrix(M, square=True)
    S, A = split_sym_antisym(M)
    U0 = 1j * expm_hermitian(S, -1j * epsilon)
    U1 = -1j * expm_hermitian(S, 1j * epsilon)
    U2 = expm_general(epsilon * A).astype(complex)
    U3 = -expm_general(-epsilon * A).astype(complex)
    b = 1.0 / (2 * epsilon)
    return LcuDecomposition(epsilon, [b] * 4, [U0, U1, U2, U3], False)


def decompose_two(M, epsilon) -> LcuDecomposition:
    _check_eps(epsilon)
    Mh = hermitian_dilation(as_matrix(M, square=True))
    # the factor i keeps (U0 + U1)/(2 eps) = sin(eps Mh)/eps rather than -i times it
    U0 = 1j * expm_hermitian(Mh, -1j * epsilon)
    U1 = -1j * expm_hermitian(Mh, 1j * epsilon)
    b = 1.0 / (2 * epsilon)
    return LcuDecomposition(epsilon, [b, b], [U0, U1], True)


def decompose(M, epsilon, K=4) -> LcuDecomposition:
    if K == 4:
        return decompose_four(M, epsilon)
    if K == 2:
        return decompose_two(M, epsilon)
    raise ValueError(f"K must be 2 or 4, got {K}")


def reconstruct(d: LcuDecomposition) -> np.ndarray:
    R = sum(c * U for c, U in zip(d.coefficients, d.unitaries))
    if d.dilated:
        n = d.dim
        return R[:n, n:]
    return R


# ---------------------------------------------------------------- term sets


@dataclass
class TermSet:
    """Generic LCU sum_j c_j W_j with c_j > 0 and W_j unitary payloads.

    When dilated, payloads act on [0, b] inputs and the effective operator is
    the lower-right block.
    """
    coefficients: np.ndarray
    unitaries: list
    dilated: bool = False
    label: str = ""

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=float)
        if np.any(self.coefficients <= 0):
            raise ValueError("LCU coefficients must be positive")
        if len(self.unitaries) != self.coefficients.size or not self.unitaries:
            raise ValueError("one unitary per coefficient")

    @property
    def n_terms(self):
        return len(self.unitaries)

    @property
    def lam(self):
        return float(self.coefficients.sum())

    @property
    def full_dim(self):
        return self.unitaries[0].shape[0]

    @property
    def dim(self):
        return self.full_dim // 2 if self.dilated else self.full_dim

    def effective(self):
        R = sum(c * U for c, U in zip(self.coefficients, self.unitaries))
        if self.dilated:
            n = self.dim
            return R[n:, n:]
        return R

    def check_unitary(self, tol=1e-10):
        for k, U in enumerate(self.unitaries):
            if not is_unitary(U, tol):
                raise ValueError(f"term {k} is not unitary")


def from_decomposition(d: LcuDecomposition) -> TermSet:
    return TermSet(d.coefficients.copy(), d.block_unitaries(), d.dilated, f"K={d.K}")


def neumann_termset(M, p_min, epsilon, K=4) -> TermSet:
    """LCU for sum_{p<p_min} M^p; every power p >= 1 gets its own K-unitary split."""
    M = as_matrix(M, square=True)
    if p_min < 1:
        raise ValueError("p_min must be >= 1")
    n = M.shape[0]
    dim = 2 * n if K == 2 else n
    coeffs = [1.0]
    us = [np.eye(dim, dtype=complex)]
    P = np.eye(n)
    for _ in range(1, p_min):
        P = P @ M
        d = decompose(P, epsilon, K)
        coeffs.extend(d.coefficients)
        us.extend(d.block_unitaries())
    return TermSet(np.array(coeffs), us, K == 2, f"neumann P={p_min} K={K}")


def multinomial_terms(K, tau):
    """All (coefficient, exponents) with sum(exponents) == tau; exact integers."""
    if K < 1 or tau < 0:
        raise ValueError("need K >= 1 and tau >= 0")
    out = []

    def rec(prefix, left, slots):
        if slots == 1:
            v = prefix + (left,)
            c = math.factorial(tau)
            for x in v:
                c //= math.factorial(x)
            out.append((c, v))
            return
        for x in range(left, -1, -1):
            rec(prefix + (x,), left - x, slots - 1)

    rec((), tau, K)
    return out


def n_multinomial_terms(K, tau):
    return math.comb(tau + K - 1, K - 1)


def terms_commute(ts: TermSet, tol=1e-10) -> bool:
    us = ts.unitaries
    for i in range(len(us)):
        for j in range(i + 1, len(us)):
            if np.max(np.abs(us[i] @ us[j] - us[j] @ us[i])) > tol:
                return False
    return True


def expansion_term_count(ts: TermSet, tau, commuting=None):
    if commuting is None:
        commuting = terms_commute(ts)
    L = ts.n_terms
    return n_multinomial_terms(L, tau) if commuting else L ** tau


def product_expansion(ts: TermSet, tau, ceiling=100_000, mem_limit=2 ** 30) -> TermSet:
    """Expand (sum c_j W_j)^tau into a single LCU.

    Commuting payloads are grouped by multinomial exponents; otherwise every
    ordered sequence is kept.
    """
    if tau < 1:
        raise ValueError("tau must be >= 1")
    commuting = terms_commute(ts)
    count = expansion_term_count(ts, tau, commuting)
    if count > ceiling:
        raise CeilingError(f"expansion needs {count} terms, ceiling is {ceiling}")
    if count * ts.full_dim ** 2 * 16 > mem_limit:
        raise CeilingError(f"expansion needs {count} dense {ts.full_dim}-dim payloads, over the memory limit")
    coeffs, us = [], []
    c = ts.coefficients
    L = ts.n_terms
    if commuting:
        pw = {}

        def power(k, e):
            if (k, e) not in pw:
                pw[(k, e)] = np.linalg.matrix_power(ts.unitaries[k], e)
            return pw[(k, e)]

        for m, v in multinomial_terms(L, tau):
            W = np.eye(ts.full_dim, dtype=complex)
            for k, e in enumerate(v):
                if e:
                    W = power(k, e) @ W
            coeffs.append(m * float(np.prod(c ** np.array(v))))
            us.append(W)
    else:
        for seq in iproduct(range(L), repeat=tau):
            W = np.eye(ts.full_dim, dtype=complex)
            for k in seq:
                W = ts.unitaries[k] @ W
            coeffs.append(float(np.prod(c[list(seq)])))
            us.append(W)
    return TermSet(np.array(coeffs), us, ts.dilated, f"{ts.label} ^{tau}")


# ---------------------------------------------------------------- Neumann


def neumann_p_min(norm, eps_n) -> int:
    if not 0 <= norm < 1:
        raise ValueError("norm must lie in [0, 1)")
    if not 0 < eps_n < 1:
        raise ValueError("eps_n must lie in (0, 1)")
    if norm == 0:
        return 1
    return max(1, math.ceil(math.log(1 / eps_n) / math.log(1 / norm) - 1e-12))


def neumann_inverse_apply(M, p_min, v, check=True):
    M = as_matrix(M, square=True)
    v = as_vector(v)
    if check and np.linalg.norm(M, 2) >= 1 and spectral_radius(M) >= 1:
        raise ConvergenceError("Neumann series diverges (spectral radius >= 1)")
    y = v.astype(np.result_type(M, v, float))
    for _ in range(p_min - 1):
        y = v + M @ y
    return y


def varah_gamma(B) -> float:
    """Diagonal-dominance margin of B over rows and columns (Varah)."""
    B = np.abs(as_matrix(B, square=True))
    d = np.diag(B)
    off_r = B.sum(axis=1) - d
    off_c = B.sum(axis=0) - d
    return float(min((d - off_r).min(), (d - off_c).min()))


def truncation_error_bound(M, p_min):
    """Bounds on ||(I-M)^-1 - sum_{p<P} M^p||_2.

    Returns dict with the norm form ||M||^P / Gamma, Gamma itself and the
    kappa form (kappa-1)^P.
    """
    M = as_matrix(M, square=True)
    nrm = float(np.linalg.norm(M, 2))
    if nrm >= 1:
        raise ConvergenceError(f"||M|| = {nrm:.4g} >= 1")
    B = np.eye(M.shape[0]) - M
    gamma = varah_gamma(B)
    if gamma <= 0:
        raise ConvergenceError("I - M is not diagonally dominant; no Varah bound")
    kappa = float(np.linalg.norm(B, 2) * np.linalg.norm(np.linalg.inv(B), 2))
    return {"bound": nrm ** p_min / gamma, "norm_pow": nrm ** p_min, "gamma": gamma,
            "norm": nrm, "kappa": kappa, "kappa_bound": (kappa - 1) ** p_min}


def truncation_error(M, p_min) -> float:
    """Measured ||(I-M)^-1 M^P||_2, the exact truncation error."""
    M = as_matrix(M, square=True)
    B = np.eye(M.shape[0]) - M
    return float(np.linalg.norm(np.linalg.solve(B, np.linalg.matrix_power(M, p_min)), 2))


def auto_p_min(M, eps_n=1e-8, cap=256):
    """Smallest P with measured truncation error <= eps_n (works for rho < 1)."""
    M = as_matrix(M, square=True)
    if spectral_radius(M) >= 1:
        raise ConvergenceError("spectral radius >= 1")
    B = np.eye(M.shape[0]) - M
    X = np.linalg.inv(B)
    for p in range(1, cap + 1):
        X = X @ M
        if np.linalg.norm(X, 2) <= eps_n:
            return p
    raise CeilingError(f"Neumann series needs more than {cap} terms")


def choose_delta(A, epsilon, target=1.0):
    """Scaling delta = min(0.99/||A||, target/(eps ||A||)) and whether both
    delta||A|| < 1 and eps delta ||A|| >= 1 hold."""
    a = float(np.linalg.norm(as_matrix(A), 2))
    if a == 0:
        return 1.0, False
    delta = min(0.99 / a, target / (epsilon * a))
    feasible = delta * a < 1 and epsilon * delta * a >= 1 - 1e-12
    return delta, feasible


def oneshot_scaling(A, margin=1.0):
    """delta with rho(I - delta A) < margin; 1 when already convergent."""
    A = as_matrix(A, square=True)
    I = np.eye(A.shape[0])
    if spectral_radius(I - A) < margin:
        return 1.0
    w = np.linalg.eigvals(A)
    f = lambda d: np.abs(1 - d * w).max()
    hi = 2.0 / max(np.abs(w).max(), 1e-300)
    r = minimize_scalar(f, bounds=(0.0, hi), method="bounded", options={"xatol": 1e-12})
    if f(r.x) >= margin:
        raise ConvergenceError("no scaling makes the one-shot Neumann series converge")
    return float(r.x)
