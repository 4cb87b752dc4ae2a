"""Small dense linear algebra and quantum-information primitives.

Everything here works on plain ``numpy`` arrays.  Dimensions are tiny
(a few dozen at most) so every routine goes through a full Hermitian
eigendecomposition rather than anything iterative.
"""

from __future__ import annotations

from functools import reduce
from typing import Sequence

import numpy as np

VALIDATION_TOL = 1e-10
RESULT_TOL = 1e-9
POSITIVE_THRESHOLD = 1e-12
NOT_PSD_TOL = 1e-6
FACTOR_ZERO = 1e-12
RANK_CUT = 1e-14


class ValidationError(ValueError):
    """An operator failed a structural check (Hermiticity, PSD, trace...)."""


class NotPSDError(ValidationError):
    pass


def adjoint(m: np.ndarray) -> np.ndarray:
    return np.conjugate(np.transpose(m))


def ket(*amplitudes) -> np.ndarray:
    v = np.asarray(amplitudes, dtype=complex)
    return v / np.linalg.norm(v)


def projector(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=complex).reshape(-1)
    return np.outer(v, v.conj())


def hermitian_asymmetry(m: np.ndarray) -> float:
    return float(np.max(np.abs(m - adjoint(m)))) if m.size else 0.0


def check_hermitian(m: np.ndarray, tol: float = VALIDATION_TOL, name: str = "matrix") -> np.ndarray:
    m = np.asarray(m, dtype=complex)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValidationError(f"{name} must be square, got shape {m.shape}")
    asym = hermitian_asymmetry(m)
    if asym > tol:
        raise ValidationError(f"{name} is not Hermitian: max |M - M^dag| = {asym:.3e}")
    return m


def eig_hermitian(m: np.ndarray, tol: float = VALIDATION_TOL) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues in descending order and the matching orthonormal eigenvectors (columns)."""
    m = check_hermitian(m, tol)
    h = 0.5 * (m + adjoint(m))
    w, v = np.linalg.eigh(h)
    return w[::-1].copy(), v[:, ::-1].copy()


def positive_part_projection(x: np.ndarray, threshold: float = POSITIVE_THRESHOLD) -> np.ndarray:
    """The spectral projection ``{X > 0}`` onto eigenvectors with eigenvalue above ``threshold``."""
    w, v = eig_hermitian(x)
    keep = v[:, w > threshold]
    return keep @ adjoint(keep)


def _sym(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + adjoint(m))


def is_psd(m: np.ndarray, tol: float = VALIDATION_TOL) -> bool:
    m = check_hermitian(m, max(tol, VALIDATION_TOL))
    return bool(np.linalg.eigvalsh(_sym(m))[0] >= -tol)


def as_density(m, tol: float = VALIDATION_TOL, name: str = "state") -> np.ndarray:
    """Validate ``m`` as a density operator and return a clean, read-only copy.

    Eigenvalues within ``tol`` below zero are clipped and the trace is renormalized.
    """
    m = check_hermitian(np.asarray(m, dtype=complex), tol, name)
    tr = np.trace(m).real
    if abs(tr - 1.0) > tol:
        raise ValidationError(f"{name} has trace {tr:.12f}, expected 1")
    w, v = np.linalg.eigh(_sym(m))
    if w[0] < -tol:
        raise NotPSDError(f"{name} has negative eigenvalue {w[0]:.3e}")
    if w[0] < 0:
        w = np.clip(w, 0.0, None)
        m = (v * w) @ adjoint(v)
        m = m / np.trace(m).real
    else:
        m = _sym(m)
    out = np.array(m, dtype=complex)
    out.setflags(write=False)
    return out


def check_povm(elements: Sequence[np.ndarray], tol: float = VALIDATION_TOL) -> list[np.ndarray]:
    if not elements:
        raise ValidationError("POVM needs at least one element")
    els = [check_hermitian(e, tol, "POVM element") for e in elements]
    d = els[0].shape[0]
    for e in els:
        if e.shape != (d, d):
            raise ValidationError("POVM elements must share one dimension")
        if np.linalg.eigvalsh(_sym(e))[0] < -tol:
            raise NotPSDError("POVM element is not positive semidefinite")
    dev = np.max(np.abs(sum(els) - np.eye(d)))
    if dev > tol:
        raise ValidationError(f"POVM elements sum to identity only within {dev:.3e}")
    return els


def trace_norm_hermitian(x: np.ndarray) -> float:
    return float(np.sum(np.abs(np.linalg.eigvalsh(_sym(x)))))


def _same_dim(rho: np.ndarray, sigma: np.ndarray) -> None:
    if np.shape(rho) != np.shape(sigma):
        raise ValidationError(f"dimension mismatch: {np.shape(rho)} vs {np.shape(sigma)}")


def trace_distance(rho: np.ndarray, sigma: np.ndarray) -> float:
    """Half the trace norm of ``rho - sigma``."""
    _same_dim(rho, sigma)
    d = 0.5 * trace_norm_hermitian(np.asarray(rho) - np.asarray(sigma))
    return min(max(d, 0.0), 1.0)


def psd_sqrt(m: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(_sym(np.asarray(m, dtype=complex)))
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ adjoint(v)


def fidelity(rho: np.ndarray, sigma: np.ndarray) -> float:
    """Root fidelity ``Tr|sqrt(rho) sqrt(sigma)|``.

    With ``rho = A A^dag`` and ``sigma = B B^dag`` this is the nuclear norm of
    ``A^dag B``.  Eigenvalues below ``RANK_CUT`` times the largest are dropped
    first: their square roots are rounding noise of order 1e-8 that would
    otherwise leak into the result for rank-deficient inputs.
    """
    _same_dim(rho, sigma)
    a, b = _root_factor(rho), _root_factor(sigma)
    f = float(np.linalg.svd(adjoint(a) @ b, compute_uv=False).sum())
    return min(max(f, 0.0), 1.0)


def _root_factor(m: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(_sym(np.asarray(m, dtype=complex)))
    top = max(float(w[-1]), 0.0)
    w = np.where(w > RANK_CUT * top, w, 0.0)
    return v * np.sqrt(w)


def variation_distance(p, q, tol: float = RESULT_TOL) -> float:
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ValidationError(f"outcome sets differ: {p.shape} vs {q.shape}")
    for name, r in (("p", p), ("q", q)):
        if np.any(r < -tol) or abs(r.sum() - 1.0) > tol:
            raise ValidationError(f"{name} is not a normalized distribution")
    return 0.5 * float(np.sum(np.abs(p - q)))


def tensor_product(ops: Sequence[np.ndarray]) -> np.ndarray:
    if len(ops) == 0:
        raise ValidationError("tensor product of an empty sequence")
    return reduce(np.kron, [np.asarray(o, dtype=complex) for o in ops])


def partial_trace(m: np.ndarray, dims: Sequence[int], keep: Sequence[int]) -> np.ndarray:
    """Trace out every subsystem not listed in ``keep``."""
    dims = list(dims)
    n = len(dims)
    t = np.asarray(m).reshape(dims + dims)
    traced = [i for i in range(n) if i not in keep]
    for count, i in enumerate(sorted(traced, reverse=True)):
        cur = n - count
        t = np.trace(t, axis1=i, axis2=i + cur)
    d = int(np.prod([dims[i] for i in keep])) if keep else 1
    return t.reshape(d, d)


def psd_factor(g: np.ndarray) -> np.ndarray:
    """Square ``C`` with ``C^dag C = G`` for a positive semidefinite ``G``.

    Eigenvalues down to ``-1e-6`` are treated as numerical noise and clipped.
    """
    g = check_hermitian(np.asarray(g, dtype=complex), RESULT_TOL, "Gram matrix")
    w, v = np.linalg.eigh(_sym(g))
    if w[0] < -NOT_PSD_TOL:
        raise NotPSDError(f"matrix is not PSD: smallest eigenvalue {w[0]:.3e}")
    # eigensolver noise on a rank-deficient G would otherwise leak in at sqrt(1e-16)
    w = np.where(w < FACTOR_ZERO, 0.0, w)
    return np.sqrt(w)[:, None] * adjoint(v)


def random_density(dim: int, rng: np.random.Generator, rank: int | None = None) -> np.ndarray:
    """Random mixed state from a Ginibre matrix (full rank unless ``rank`` is given)."""
    rank = dim if rank is None else rank
    g = rng.normal(size=(dim, rank)) + 1j * rng.normal(size=(dim, rank))
    m = g @ adjoint(g)
    return m / np.trace(m).real


def random_pure(dim: int, rng: np.random.Generator) -> np.ndarray:
    v = rng.normal(size=dim) + 1j * rng.normal(size=dim)
    return v / np.linalg.norm(v)


def bloch_state(theta: float, phi: float) -> np.ndarray:
    """Qubit ket ``cos(theta/2)|0> + e^{i phi} sin(theta/2)|1>``."""
    return np.array([np.cos(theta / 2), np.exp(1j * phi) * np.sin(theta / 2)], dtype=complex)


def qubit_from_bloch(r) -> np.ndarray:
    x, y, z = r
    return 0.5 * np.array([[1 + z, x - 1j * y], [x + 1j * y, 1 - z]], dtype=complex)


def fibonacci_sphere(n: int) -> np.ndarray:
    """``n`` nearly uniform unit vectors on the sphere, deterministic."""
    i = np.arange(n) + 0.5
    z = 1 - 2 * i / n
    r = np.sqrt(1 - z * z)
    phi = np.pi * (1 + 5 ** 0.5) * i
    return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])
