"""Dense complex linear algebra for multipartite operators.

Everything in this module is pure and operates on plain ``numpy`` arrays
(complex128, row-major).  A multipartite operator on d1 x d2 x ... x dm is a
square matrix of side prod(dims) whose basis is ordered lexicographically in
the subsystem digits; subsystem indices are 0-based throughout the code base
(the two-qudit swap acting on subsystems 0 and 1 is the operator written
V_(12) in 1-based notation).
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

HERMITICITY_TOL = 1e-10


def dagger(a: np.ndarray) -> np.ndarray:
    return a.conj().T


def hermitize(a: np.ndarray) -> np.ndarray:
    """Return the Hermitian part (A + A†)/2."""
    return (a + a.conj().T) / 2


def herm_deviation(a: np.ndarray) -> float:
    """Relative Frobenius distance of A from its Hermitian part."""
    scale = np.linalg.norm(a)
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(a - a.conj().T) / (2 * scale))


def is_hermitian(a: np.ndarray, tol: float = HERMITICITY_TOL) -> bool:
    return herm_deviation(a) <= tol


def frob(a: np.ndarray) -> float:
    return float(np.linalg.norm(a))


def min_eigval(h: np.ndarray) -> float:
    """Smallest eigenvalue of a (numerically) Hermitian matrix."""
    return float(np.linalg.eigvalsh(hermitize(h))[0])


def is_psd(h: np.ndarray, tol: float = 1e-9) -> bool:
    return min_eigval(h) >= -tol


def basis_state(d: int, j: int) -> np.ndarray:
    v = np.zeros(d, dtype=complex)
    v[j] = 1.0
    return v


def proj(v: np.ndarray) -> np.ndarray:
    """Rank-1 projector |v><v| (v need not be normalized)."""
    v = np.asarray(v, dtype=complex).ravel()
    return np.outer(v, v.conj())


def kron(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Tensor product; (a⊗b)[(i1,i2),(j1,j2)] = a[i1,j1] b[i2,j2]."""
    return np.kron(np.asarray(a, dtype=complex), np.asarray(b, dtype=complex))


def kron_all(factors: Iterable[np.ndarray]) -> np.ndarray:
    out = None
    for f in factors:
        out = np.asarray(f, dtype=complex) if out is None else np.kron(out, f)
    if out is None:
        raise ValueError("kron_all needs at least one factor")
    return out


def check_shape(m: np.ndarray, dims: Sequence[int]) -> None:
    side = int(np.prod(dims))
    if m.shape != (side, side):
        raise ValueError(f"operator of shape {m.shape} does not match subsystem dims {tuple(dims)}")
    if any(d < 1 for d in dims):
        raise ValueError(f"subsystem dims must be >= 1, got {tuple(dims)}")


def digit_table(dims: Sequence[int]) -> np.ndarray:
    """(D, m) array: row q holds the subsystem digits of basis index q."""
    dims = tuple(int(d) for d in dims)
    total = int(np.prod(dims))
    idx = np.arange(total)
    cols = []
    rest = idx
    for d in reversed(dims):
        cols.append(rest % d)
        rest = rest // d
    return np.stack(cols[::-1], axis=1)


def index_strides(dims: Sequence[int]) -> np.ndarray:
    """Weights w with flat index = digits @ w for lexicographic ordering."""
    dims = tuple(int(d) for d in dims)
    w = np.ones(len(dims), dtype=np.int64)
    for k in range(len(dims) - 2, -1, -1):
        w[k] = w[k + 1] * dims[k + 1]
    return w


def permutation_operator(perm: Sequence[int], local_dim: int) -> np.ndarray:
    """Unitary representation of S_m on m qudits: V_pi |i_1..i_m> = |pi(i_1..i_m)>.

    ``perm`` gives the position map pi (0-based): the symbol at position k is
    moved to position perm[k].  For a transposition this reduces to the swap of
    the named subsystems, e.g. perm=(1,0) on two qudits is V = sum_ij |ij><ji|.
    """
    perm = tuple(int(p) for p in perm)
    m = len(perm)
    if m < 2 or local_dim < 2:
        raise ValueError("need at least two subsystems of local dimension >= 2")
    if sorted(perm) != list(range(m)):
        raise ValueError(f"{perm} is not a permutation of 0..{m - 1}")
    dims = (local_dim,) * m
    digits = digit_table(dims)
    w = index_strides(dims)
    new_digits = np.empty_like(digits)
    for k, pk in enumerate(perm):
        new_digits[:, pk] = digits[:, k]
    target = new_digits @ w
    side = local_dim**m
    v = np.zeros((side, side), dtype=complex)
    v[target, np.arange(side)] = 1.0
    return v


def transposition_perm(m: int, a: int, b: int) -> tuple[int, ...]:
    """Position map of the transposition exchanging subsystems a and b."""
    p = list(range(m))
    p[a], p[b] = p[b], p[a]
    return tuple(p)


def partial_trace(m: np.ndarray, dims: Sequence[int], keep: Sequence[int]) -> np.ndarray:
    """Trace out every subsystem not listed in ``keep`` (0-based, order kept)."""
    dims = tuple(int(d) for d in dims)
    check_shape(m, dims)
    n = len(dims)
    keep = sorted(int(k) for k in keep)
    if any(k < 0 or k >= n for k in keep) or len(set(keep)) != len(keep):
        raise ValueError(f"invalid keep set {keep} for {n} subsystems")
    t = np.asarray(m, dtype=complex).reshape(dims + dims)
    # contract traced subsystems pairwise, starting from the highest index so
    # earlier axis numbers stay valid
    traced = [k for k in range(n) if k not in keep]
    nn = n
    for k in sorted(traced, reverse=True):
        t = np.trace(t, axis1=k, axis2=k + nn)
        nn -= 1
    side = int(np.prod([dims[k] for k in keep])) if keep else 1
    return t.reshape(side, side)


def partial_transpose(m: np.ndarray, dims: Sequence[int], subsystem: int) -> np.ndarray:
    """Transpose on a single subsystem; involutive, Hermiticity-preserving."""
    dims = tuple(int(d) for d in dims)
    check_shape(m, dims)
    n = len(dims)
    if not 0 <= subsystem < n:
        raise ValueError(f"subsystem {subsystem} out of range for {n} subsystems")
    t = np.asarray(m, dtype=complex).reshape(dims + dims)
    t = np.swapaxes(t, subsystem, subsystem + n)
    side = int(np.prod(dims))
    return t.reshape(side, side)


def real_embedding(h: np.ndarray, tol: float = HERMITICITY_TOL) -> np.ndarray:
    """Lower a Hermitian matrix to the real symmetric form [[Re,-Im],[Im,Re]].

    The embedding is PSD iff h is PSD and every eigenvalue of h shows up
    twice.  Inputs are symmetrized; non-Hermitian input beyond ``tol``
    (relative to the Frobenius norm) is rejected.
    """
    h = np.asarray(h, dtype=complex)
    if h.ndim != 2 or h.shape[0] != h.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {h.shape}")
    if herm_deviation(h) > tol:
        raise ValueError("matrix is not Hermitian within tolerance")
    h = hermitize(h)
    re, im = h.real, h.imag
    return np.block([[re, -im], [im, re]])
