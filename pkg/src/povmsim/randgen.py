"""Seeded random generators for states, measurements and simulable POVMs."""

from __future__ import annotations

import numpy as np

from . import matkernel as mk
from .povm import Povm, ProjectiveMeasurement


def rng_from(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def random_pure_state(d: int, seed=None) -> np.ndarray:
    rng = rng_from(seed)
    v = rng.standard_normal(d) + 1j * rng.standard_normal(d)
    return v / np.linalg.norm(v)


def haar_unitary(d: int, seed=None) -> np.ndarray:
    rng = rng_from(seed)
    z = (rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    phases = np.diag(r) / np.abs(np.diag(r))
    return q @ np.diag(phases.conj())


def random_rank1_povm(d: int, n: int, seed=None) -> Povm:
    """n rank-1 effects G^{-1/2}|g_i><g_i|G^{-1/2} from Gaussian vectors."""
    rng = rng_from(seed)
    vecs = rng.standard_normal((n, d)) + 1j * rng.standard_normal((n, d))
    g = sum(np.outer(v, v.conj()) for v in vecs)
    w, u = np.linalg.eigh(g)
    ginv_sqrt = u @ np.diag(1.0 / np.sqrt(w)) @ u.conj().T
    eff = [mk.proj(ginv_sqrt @ v) for v in vecs]
    return Povm(d, tuple(eff), label=f"random-rank1(d={d},n={n})")


def random_projective_measurement(d: int, n: int, seed=None) -> ProjectiveMeasurement:
    """Haar-rotated basis projectors distributed over n outcome slots."""
    rng = rng_from(seed)
    u = haar_unitary(d, rng)
    slots = rng.integers(0, n, size=d)
    projs = [np.zeros((d, d), dtype=complex) for _ in range(n)]
    for b in range(d):
        projs[slots[b]] += mk.proj(u[:, b])
    return ProjectiveMeasurement(d, tuple(projs))


def random_simulable_povm(d: int, n: int, k: int, seed=None) -> tuple[Povm, list, np.ndarray]:
    """Explicit convex mixture of k random projective measurements."""
    rng = rng_from(seed)
    measurements = [random_projective_measurement(d, n, rng) for _ in range(k)]
    weights = rng.dirichlet(np.ones(k))
    eff = []
    for i in range(n):
        eff.append(sum(w * m.projectors[i] for w, m in zip(weights, measurements)))
    povm = Povm(d, tuple(eff), label=f"simulable-mix(k={k})")
    return povm, measurements, weights
