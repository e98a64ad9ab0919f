"""Dense complex linear algebra for small Hilbert spaces.

Matrices are plain ``numpy.ndarray`` objects of dtype ``complex128``. The
Hermitian eigensolver is a cyclic Jacobi iteration with a fixed sweep order,
so identical input always gives bit-identical output.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import reduce

import numpy as np

from .errors import DimensionMismatch, NotHermitian

MAX_DIM = 32
CONSTRUCTION_TOL = 1e-12
VALIDATION_TOL = 1e-10
DEGENERACY_TOL = 1e-9

I2 = np.eye(2, dtype=complex)
SX = np.array([[0, 1], [1, 0]], dtype=complex)
SY = np.array([[0, -1j], [1j, 0]], dtype=complex)
SZ = np.array([[1, 0], [0, -1]], dtype=complex)
KET0 = np.array([1, 0], dtype=complex)
KET1 = np.array([0, 1], dtype=complex)


def as_matrix(a) -> np.ndarray:
    m = np.asarray(a, dtype=complex)
    if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] < 1:
        raise DimensionMismatch(f"expected a non-empty square matrix, got shape {m.shape}")
    return m


def _scale(a: np.ndarray) -> float:
    return max(float(np.max(np.abs(a))), 1.0)


def dagger(a: np.ndarray) -> np.ndarray:
    return a.conj().T


def is_hermitian(a, tol: float = CONSTRUCTION_TOL) -> bool:
    a = as_matrix(a)
    return float(np.max(np.abs(a - dagger(a)))) <= tol * _scale(a)


def is_unitary(a, tol: float = CONSTRUCTION_TOL) -> bool:
    a = as_matrix(a)
    return float(np.max(np.abs(dagger(a) @ a - np.eye(a.shape[0])))) <= tol


def is_density(a, tol: float = CONSTRUCTION_TOL) -> bool:
    a = as_matrix(a)
    if not is_hermitian(a, tol) or abs(np.trace(a) - 1.0) > tol:
        return False
    return bool(np.min(herm_eigen(a).eigenvalues) >= -tol)


def kron(a, b, *rest) -> np.ndarray:
    """Tensor product; the leftmost factor is the most significant index."""
    return reduce(np.kron, (a, b) + rest).astype(complex)


def projector(vec) -> np.ndarray:
    v = np.asarray(vec, dtype=complex).reshape(-1)
    return np.outer(v, v.conj())


@dataclass(frozen=True)
class HermitianEigen:
    """Ascending eigenvalues, eigenvectors as columns, and degenerate clusters."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    clusters: tuple[tuple[int, ...], ...] = field(default=())
    sweeps: int = 0

    @property
    def degenerate(self) -> bool:
        return any(len(c) > 1 for c in self.clusters)

    def projectors(self) -> list[np.ndarray]:
        """One projector per eigenvalue cluster (rank one when nondegenerate)."""
        out = []
        for cluster in self.clusters:
            vecs = self.eigenvectors[:, list(cluster)]
            out.append(vecs @ dagger(vecs))
        return out


def _off_norm(a: np.ndarray) -> float:
    off = np.abs(a - np.diag(np.diag(a)))
    return float(np.sqrt(np.sum(off * off)))


def _jacobi_rotate(a: np.ndarray, v: np.ndarray, p: int, q: int) -> None:
    apq = a[p, q]
    mag = abs(apq)
    phase = apq / mag
    # the phase gauge makes the (p, q) block real symmetric, then a real rotation clears it
    theta = (a[q, q].real - a[p, p].real) / (2.0 * mag)
    t = np.sign(theta) / (abs(theta) + np.hypot(theta, 1.0)) if theta != 0 else 1.0
    c = 1.0 / np.sqrt(t * t + 1.0)
    s = t * c
    g = np.array([[c, s], [-s * np.conj(phase), c * np.conj(phase)]], dtype=complex)
    idx = [p, q]
    a[:, idx] = a[:, idx] @ g
    a[idx, :] = dagger(g) @ a[idx, :]
    a[p, q] = a[q, p] = 0.0
    a[p, p] = a[p, p].real
    a[q, q] = a[q, q].real
    v[:, idx] = v[:, idx] @ g


def _fix_phase(v: np.ndarray) -> np.ndarray:
    # largest component (first on ties) made real positive
    out = v.copy()
    for j in range(v.shape[1]):
        col = out[:, j]
        i = int(np.argmax(np.round(np.abs(col), 12)))
        out[:, j] = col * (abs(col[i]) / col[i])
    return out


def _clusters(values: np.ndarray, tol: float) -> tuple[tuple[int, ...], ...]:
    groups: list[list[int]] = [[0]]
    for i in range(1, len(values)):
        if values[i] - values[groups[-1][-1]] <= tol:
            groups[-1].append(i)
        else:
            groups.append([i])
    return tuple(tuple(g) for g in groups)


def herm_eigen(h, tol: float = VALIDATION_TOL, max_sweeps: int = 100) -> HermitianEigen:
    """Cyclic Jacobi eigendecomposition of a Hermitian matrix.

    Raises ``NotHermitian`` when ``h`` deviates from its adjoint by more than
    ``tol`` relative to its largest entry.
    """
    h = as_matrix(h)
    n = h.shape[0]
    if n > MAX_DIM:
        raise DimensionMismatch(f"dimension {n} exceeds the supported maximum {MAX_DIM}")
    if not is_hermitian(h, tol):
        raise NotHermitian("matrix is not Hermitian within tolerance")
    a = 0.5 * (h + dagger(h))
    v = np.eye(n, dtype=complex)
    target = 1e-15 * max(float(np.max(np.abs(a))), 1e-300)
    sweeps = 0
    while _off_norm(a) > target and sweeps < max_sweeps:
        for p in range(n - 1):
            for q in range(p + 1, n):
                if abs(a[p, q]) > 1e-300:
                    _jacobi_rotate(a, v, p, q)
        sweeps += 1
    values = np.diag(a).real.copy()
    order = np.argsort(values, kind="stable")
    values = values[order]
    vectors = _fix_phase(v[:, order])
    scale = max(float(np.max(np.abs(values))), 1.0)
    return HermitianEigen(values, vectors, _clusters(values, DEGENERACY_TOL * scale), sweeps)


def apply_function(h, func) -> np.ndarray:
    eig = herm_eigen(h)
    return (eig.eigenvectors * func(eig.eigenvalues)) @ dagger(eig.eigenvectors)


def phase_exp(h, theta: float) -> np.ndarray:
    """Return exp(i * theta * h) for Hermitian ``h``."""
    return apply_function(h, lambda lam: np.exp(1j * theta * lam))


def partial_trace(rho, dims, keep) -> np.ndarray:
    """Reduced operator on the factors listed in ``keep`` (order preserved)."""
    rho = as_matrix(rho)
    dims = [int(d) for d in dims]
    if int(np.prod(dims)) != rho.shape[0]:
        raise DimensionMismatch(f"factor dimensions {dims} do not multiply to {rho.shape[0]}")
    keep = sorted(set(int(k) for k in keep))
    if any(k < 0 or k >= len(dims) for k in keep):
        raise DimensionMismatch(f"keep indices {keep} out of range for {len(dims)} factors")
    n = len(dims)
    t = rho.reshape(dims + dims)
    traced = [i for i in range(n) if i not in keep]
    # contract traced pairs from the highest index down so axis numbers stay valid
    for count, i in enumerate(sorted(traced, reverse=True)):
        remaining = n - count
        t = np.trace(t, axis1=i, axis2=i + remaining)
    d = int(np.prod([dims[k] for k in keep])) if keep else 1
    return t.reshape(d, d)


def rx(phi: float) -> np.ndarray:
    """x rotation exp(-i phi sigma_x)."""
    return np.cos(phi) * I2 - 1j * np.sin(phi) * SX


def random_hermitian(n: int, rng: np.random.Generator) -> np.ndarray:
    a = rng.uniform(-1, 1, (n, n)) + 1j * rng.uniform(-1, 1, (n, n))
    return 0.5 * (a + dagger(a))


def random_unitary(n: int, rng: np.random.Generator) -> np.ndarray:
    z = (rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    return q * (np.diag(r) / np.abs(np.diag(r)))


def random_density(n: int, rng: np.random.Generator) -> np.ndarray:
    g = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    rho = g @ dagger(g)
    return rho / np.trace(rho)
