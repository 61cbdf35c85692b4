"""Dense linear algebra on small Hilbert spaces.

States are 1-d complex arrays, operators and density matrices are square
complex arrays, and superoperators act on column-stacked (Fortran order)
density matrices, so that ``vec(A @ X @ B) == kron(B.T, A) @ vec(X)``.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg

from .errors import DimensionMismatchError, InvalidOperatorError

NORMAL_TOL = 1e-12


def as_operator(A) -> np.ndarray:
    A = np.asarray(A, dtype=complex)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise InvalidOperatorError(f"operator must be square, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise InvalidOperatorError("operator has non-finite entries")
    return A


def as_state(psi) -> np.ndarray:
    psi = np.asarray(psi, dtype=complex)
    if psi.ndim != 1 or psi.size == 0:
        raise InvalidOperatorError(f"state must be a non-empty vector, got shape {psi.shape}")
    return psi


def dag(A: np.ndarray) -> np.ndarray:
    return np.conj(A).T


def basis(dim: int, index: int) -> np.ndarray:
    psi = np.zeros(dim, dtype=complex)
    psi[index] = 1.0
    return psi


def projector(psi: np.ndarray) -> np.ndarray:
    return np.outer(psi, np.conj(psi))


def identity(dim: int) -> np.ndarray:
    return np.eye(dim, dtype=complex)


def destroy(n_levels: int) -> np.ndarray:
    """Annihilation operator truncated to ``n_levels`` Fock states."""
    return np.diag(np.sqrt(np.arange(1, n_levels)), 1).astype(complex)


def sigma_minus() -> np.ndarray:
    """|g><e| in the (g, e) basis."""
    return np.array([[0, 1], [0, 0]], dtype=complex)


def sigma_plus() -> np.ndarray:
    return np.array([[0, 0], [1, 0]], dtype=complex)


def sigma_x() -> np.ndarray:
    return np.array([[0, 1], [1, 0]], dtype=complex)


def sigma_z() -> np.ndarray:
    """|e><e| - |g><g| in the (g, e) basis."""
    return np.array([[-1, 0], [0, 1]], dtype=complex)


def tensor_product(A, B) -> np.ndarray:
    """Kronecker product; entry ``(i*dB + k, j*dB + l)`` is ``A[i, j] * B[k, l]``."""
    return np.kron(as_operator(A), as_operator(B))


def is_hermitian(A: np.ndarray, tol: float = 1e-10) -> bool:
    return bool(np.max(np.abs(A - dag(A)), initial=0.0) <= tol)


def is_normal(A: np.ndarray, tol: float = NORMAL_TOL) -> bool:
    scale = max(np.linalg.norm(A) ** 2, 1.0)
    return bool(np.linalg.norm(A @ dag(A) - dag(A) @ A) <= tol * scale)


def expm_operator(A, t: float) -> np.ndarray:
    """Return exp(-i A t)."""
    A = as_operator(A)
    if is_hermitian(A, tol=0.0):
        w, V = np.linalg.eigh(A)
        return (V * np.exp(-1j * w * t)) @ dag(V)
    if is_normal(A):
        T, Z = scipy.linalg.schur(A, output="complex")
        return (Z * np.exp(-1j * np.diag(T) * t)) @ dag(Z)
    # scaling-and-squaring Pade for non-normal generators (H_eff)
    return scipy.linalg.expm(-1j * t * A)


def expm_apply(A, t: float, psi) -> np.ndarray:
    """Return exp(-i A t) psi for a time-independent operator ``A``."""
    A = as_operator(A)
    psi = as_state(psi)
    if psi.shape[0] != A.shape[0]:
        raise DimensionMismatchError(f"state dim {psi.shape[0]} != operator dim {A.shape[0]}")
    if t < 0:
        raise ValueError("t must be non-negative")
    if t == 0:
        return psi.copy()
    return expm_operator(A, t) @ psi


def expectation(A, psi) -> complex:
    """<psi|A|psi> for a normalized state."""
    A = as_operator(A)
    psi = as_state(psi)
    if psi.shape[0] != A.shape[0]:
        raise DimensionMismatchError(f"state dim {psi.shape[0]} != operator dim {A.shape[0]}")
    return complex(np.vdot(psi, A @ psi))


# -- superoperators (column stacking) -------------------------------------


def vec(rho: np.ndarray) -> np.ndarray:
    return np.asarray(rho, dtype=complex).reshape(-1, order="F")


def unvec(v: np.ndarray, dim: int | None = None) -> np.ndarray:
    if dim is None:
        dim = int(round(np.sqrt(v.shape[-1])))
    return np.asarray(v).reshape(dim, dim, order="F")


def spre(A: np.ndarray) -> np.ndarray:
    """Superoperator of X -> A X."""
    return np.kron(np.eye(A.shape[0]), A)


def spost(B: np.ndarray) -> np.ndarray:
    """Superoperator of X -> X B."""
    return np.kron(B.T, np.eye(B.shape[0]))


def sprepost(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Superoperator of X -> A X B."""
    return np.kron(B.T, A)


def apply_super(S: np.ndarray, rho: np.ndarray) -> np.ndarray:
    return unvec(S @ vec(rho), rho.shape[0])


# -- density-matrix diagnostics -------------------------------------------


def trace_distance(rho: np.ndarray, sigma: np.ndarray) -> float:
    diff = np.asarray(rho) - np.asarray(sigma)
    diff = 0.5 * (diff + dag(diff))
    return 0.5 * float(np.sum(np.abs(np.linalg.eigvalsh(diff))))


def von_neumann_entropy(rho: np.ndarray) -> float:
    """-Tr rho ln rho, with 0 ln 0 = 0."""
    w = np.linalg.eigvalsh(0.5 * (rho + dag(rho)))
    w = w[w > 1e-15]
    return float(-np.sum(w * np.log(w))) + 0.0


def check_density_matrix(rho: np.ndarray, normalized: bool = True) -> None:
    rho = as_operator(rho)
    if not is_hermitian(rho, 1e-10):
        raise InvalidOperatorError("density matrix is not Hermitian")
    if normalized and abs(np.trace(rho) - 1) > 1e-10:
        raise InvalidOperatorError(f"density matrix trace {np.trace(rho).real} != 1")
    if np.min(np.linalg.eigvalsh(0.5 * (rho + dag(rho)))) < -1e-8:
        raise InvalidOperatorError("density matrix has a negative eigenvalue")
