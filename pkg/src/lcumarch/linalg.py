"""Dense matrix helpers shared by the rest of the package."""
from __future__ import annotations

import numpy as np
import scipy.linalg as sla

HERM_TOL = 1e-10


def as_matrix(M, square=False) -> np.ndarray:
    A = np.asarray(M)
    if A.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError("matrix has non-finite entries")
    if square and A.shape[0] != A.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {A.shape}")
    return A


def as_vector(v) -> np.ndarray:
    x = np.asarray(v)
    if x.ndim != 1 or x.size == 0:
        raise ValueError(f"expected a non-empty 1-D vector, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("vector has non-finite entries")
    return x


def split_sym_antisym(M):
    """Return (S, A) with S hermitian, A anti-hermitian and S + A = M."""
    M = as_matrix(M, square=True)
    Mh = M.conj().T
    return (M + Mh) / 2, (M - Mh) / 2


def hermitian_dilation(M):
    """[[0, M], [M^dagger, 0]]."""
    M = as_matrix(M, square=True)
    n = M.shape[0]
    dt = np.result_type(M.dtype, np.float64)
    H = np.zeros((2 * n, 2 * n), dtype=dt)
    H[:n, n:] = M
    H[n:, :n] = M.conj().T
    return H


def is_hermitian(H, tol=HERM_TOL) -> bool:
    H = np.asarray(H)
    return H.shape[0] == H.shape[1] and np.max(np.abs(H - H.conj().T), initial=0.0) <= tol


def is_unitary(U, tol=HERM_TOL) -> bool:
    U = np.asarray(U)
    if U.ndim != 2 or U.shape[0] != U.shape[1]:
        return False
    err = U.conj().T @ U - np.eye(U.shape[0])
    return np.max(np.abs(err), initial=0.0) <= tol


def expm_hermitian(H, scale: complex) -> np.ndarray:
    """exp(scale * H) for hermitian H, through an eigendecomposition."""
    H = as_matrix(H, square=True)
    if not is_hermitian(H):
        raise ValueError("expm_hermitian: input is not hermitian within 1e-10")
    w, V = np.linalg.eigh((H + H.conj().T) / 2)
    return (V * np.exp(scale * w)) @ V.conj().T


def expm_general(A) -> np.ndarray:
    # scipy implements Al-Mohy & Higham scaling-and-squaring with a degree-13 Pade
    return sla.expm(as_matrix(A, square=True))


def norms(M):
    """(spectral norm, max row sum norm)."""
    M = as_matrix(M)
    if M.size == 0:
        return 0.0, 0.0
    return float(np.linalg.norm(M, 2)), float(np.abs(M).sum(axis=1).max())


def spectral_radius(M) -> float:
    M = as_matrix(M, square=True)
    return float(np.abs(np.linalg.eigvals(M)).max())


def condition_number(M) -> float:
    M = as_matrix(M, square=True)
    s = np.linalg.svd(M, compute_uv=False)
    if s[-1] < 1e-14 * s[0]:
        raise np.linalg.LinAlgError("matrix is singular to working precision")
    return float(s[0] / s[-1])


def implicit_kappa(M) -> float:
    """||I - M|| * ||(I - M)^-1|| for the Neumann argument M."""
    M = as_matrix(M, square=True)
    B = np.eye(M.shape[0]) - M
    return float(np.linalg.norm(B, 2) * np.linalg.norm(np.linalg.inv(B), 2))


def state_prep_unitary(amps) -> np.ndarray:
    """A unitary whose first column is amps/||amps|| (Householder reflection)."""
    a = as_vector(amps).astype(complex)
    nrm = np.linalg.norm(a)
    if nrm == 0:
        raise ValueError("cannot prepare the zero vector")
    a = a / nrm
    n = a.size
    # rotate the phase of a[0] onto e_0 so the reflection is well conditioned
    ph = a[0] / abs(a[0]) if abs(a[0]) > 1e-15 else 1.0
    w = a / ph
    e0 = np.zeros(n, complex)
    e0[0] = 1.0
    v = e0 - w
    vn = np.linalg.norm(v)
    if vn < 1e-15:
        return ph * np.eye(n, dtype=complex)
    v /= vn
    Hh = np.eye(n, dtype=complex) - 2 * np.outer(v, v.conj())
    # Hh maps e0 -> w, so Hh[:, 0] == w
    return ph * Hh
