"""Projective decompositions read off hierarchy solutions, plus a qubit oracle.

At the collapse level the off-diagonal solution blocks become tensor products
of the participating projectors scaled by the mixing weight, so partial traces
recover an explicit simulation model for the noisy POVM.  Extraction is
best-effort: blocks that fail the product test or projector rounding abort
with diagnostics instead of silently producing a bad model.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field

import numpy as np
import scipy.optimize
import scipy.sparse as sp

from . import matkernel as mk
from .hierarchy import HierarchySolution
from .povm import Povm, ProjectiveMeasurement, depolarize

WEIGHT_THRESHOLD = 1e-8  # solver noise floor for dropping measurements
PRODUCT_SV_RATIO = 1e-6  # second/first singular value bound in the product test
ROUNDING_DISTANCE = 1e-4  # max distance between raw and rounded projectors


class ExtractionError(RuntimeError):
    """Raised when a solution block does not expose product structure."""


@dataclass
class Decomposition:
    weights: list[float]
    measurements: list[ProjectiveMeasurement]
    achieved_t: float
    diagnostics: dict = field(default_factory=dict)

    def check_invariants(self, tol_weights: float = 1e-8, tol_meas: float = 1e-6) -> None:
        total = sum(self.weights)
        if abs(total - 1.0) > tol_weights:
            raise ExtractionError(f"weights sum to {total}, not 1")
        if any(w < -1e-10 for w in self.weights):
            raise ExtractionError("negative weight")
        for meas in self.measurements:
            dev = meas.check()
            if dev > tol_meas:
                raise ExtractionError(f"measurement deviates from projectivity by {dev}")


@dataclass
class VerifyReport:
    passed: bool
    max_residual: float
    per_effect: list[float]


def verify(dec: Decomposition, p: Povm, t: float, tol: float = 1e-6) -> VerifyReport:
    """Check sum_k p_k P^k_i == depolarize(p, t) effect-wise (matkernel only)."""
    noisy = depolarize(p, t)
    residuals = []
    for i in range(p.n_outcomes):
        acc = np.zeros((p.dim, p.dim), dtype=complex)
        for w, meas in zip(dec.weights, dec.measurements):
            acc += w * meas.projectors[i]
        residuals.append(mk.frob(acc - noisy.effects[i]))
    worst = max(residuals)
    return VerifyReport(worst < tol, worst, residuals)


# ---------------------------------------------------------------------------
# helpers


def _reshuffle_ratio(block: np.ndarray, d_left: int, d_right: int) -> float:
    """sigma_2/sigma_1 of the realignment; ~0 for a tensor product."""
    t = block.reshape(d_left, d_right, d_left, d_right)
    m = np.transpose(t, (0, 2, 1, 3)).reshape(d_left * d_left, d_right * d_right)
    sv = np.linalg.svd(m, compute_uv=False)
    if sv[0] <= 0:
        return 0.0
    return float(sv[1] / sv[0])


def _round_to_projector(m: np.ndarray, distance_tol: float = ROUNDING_DISTANCE) -> np.ndarray:
    """Eigen-threshold at 1/2 and rebuild from the orthonormal eigenbasis."""
    h = mk.hermitize(m)
    vals, vecs = np.linalg.eigh(h)
    keep = vals >= 0.5
    p = (vecs[:, keep] @ vecs[:, keep].conj().T) if keep.any() else np.zeros_like(h)
    if mk.frob(p @ p - p) > 1e-8:
        raise ExtractionError("rounded matrix is not idempotent")
    if mk.frob(p - h) > distance_tol:
        raise ExtractionError(
            f"projector rounding moved the matrix by {mk.frob(p - h):.2e} > {distance_tol:.0e}")
    return p


def _refit_weights(measurements: list[ProjectiveMeasurement], p: Povm, t: float,
                   initial: list[float]) -> list[float]:
    """Nonnegative least-squares polish of the weights against the target.

    The support and projectors stay exactly as extracted; only the weights are
    re-fit, which strips solver noise from the block traces.
    """
    noisy = depolarize(p, t)
    cols = []
    for meas in measurements:
        cols.append(np.concatenate([np.concatenate([pr.real.ravel(), pr.imag.ravel()])
                                    for pr in meas.projectors]))
    a = np.stack(cols, axis=1)
    b = np.concatenate([np.concatenate([m.real.ravel(), m.imag.ravel()])
                        for m in noisy.effects])
    w, _ = scipy.optimize.nnls(a, b)
    if abs(w.sum() - 1.0) > 1e-6 or np.linalg.norm(a @ w - b) > np.linalg.norm(
            a @ np.asarray(initial) - b) + 1e-12:
        w = np.asarray(initial)
    w = w / w.sum()
    return [float(v) for v in w]


# ---------------------------------------------------------------------------
# level-2 extraction (qubits)


def extract_level2(sol: HierarchySolution, p: Povm, refit: bool = True,
                   product_tol: float = PRODUCT_SV_RATIO) -> Decomposition:
    """Von Neumann decomposition from the off-diagonal blocks of a level-2
    solution in d=2."""
    if sol.level != 2 or p.dim != 2:
        raise ValueError("level-2 extraction expects a level-2 solution in d=2")
    n, d = p.n_outcomes, p.dim
    weights: list[float] = []
    measurements: list[ProjectiveMeasurement] = []
    dropped = 0.0
    for i, j in itertools.combinations(range(n), 2):
        block = sol.R[(i, j)]
        w = float(np.real(np.trace(block)))
        if w < WEIGHT_THRESHOLD:
            dropped += max(w, 0.0)
            continue
        ratio = _reshuffle_ratio(block, d, d)
        if ratio > product_tol:
            raise ExtractionError(
                f"block ({i},{j}) is not a product within tolerance "
                f"(singular value ratio {ratio:.2e} > {product_tol:.0e}); the bound "
                "remains valid but tightness is unproven")
        raw_i = mk.partial_trace(block, (d, d), [0]) / w
        raw_j = mk.partial_trace(block, (d, d), [1]) / w
        # the two marginals determine complementary projectors; average before
        # rounding so P_i + P_j = I holds exactly afterwards
        p_i = _round_to_projector((raw_i + np.eye(d) - raw_j) / 2)
        p_j = np.eye(d) - p_i
        if mk.frob(p_j - raw_j) > ROUNDING_DISTANCE:
            raise ExtractionError("complementary projector drifted beyond tolerance")
        projs = [np.zeros((d, d), dtype=complex) for _ in range(n)]
        projs[i], projs[j] = p_i, p_j
        measurements.append(ProjectiveMeasurement(d, tuple(projs)))
        weights.append(w)
    if refit and measurements:
        weights = _refit_weights(measurements, p, sol.t_upper, weights)
    dec = Decomposition(weights, measurements, sol.t_upper,
                        diagnostics={"dropped_weight": dropped, "pairs": len(weights)})
    dec.check_invariants()
    return dec


def extract_level3(sol: HierarchySolution, p: Povm, refit: bool = True,
                   product_tol: float = PRODUCT_SV_RATIO) -> Decomposition:
    """Rank-one decomposition from all-distinct triples of a level-3 solution
    in d=3."""
    if sol.level != 3 or p.dim != 3:
        raise ValueError("level-3 extraction expects a level-3 solution in d=3")
    n, d = p.n_outcomes, p.dim
    weights: list[float] = []
    measurements: list[ProjectiveMeasurement] = []
    dropped = 0.0
    for i, j, k in itertools.combinations(range(n), 3):
        block = sol.R[(i, j, k)]
        w = float(np.real(np.trace(block)))
        if w < WEIGHT_THRESHOLD:
            dropped += max(w, 0.0)
            continue
        # product across the (1|23) cut, then (2|3)
        r1 = _reshuffle_ratio(block, d, d * d)
        if r1 > product_tol:
            raise ExtractionError(
                f"block ({i},{j},{k}) not a product across the first cut "
                f"(ratio {r1:.2e} > {product_tol:.0e})")
        rest = mk.partial_trace(block, (d, d, d), [1, 2]) / w
        r2 = _reshuffle_ratio(rest * (d * d), d, d)  # scale irrelevant to the ratio
        if r2 > product_tol:
            raise ExtractionError(
                f"block ({i},{j},{k}) not a product across the second cut "
                f"(ratio {r2:.2e} > {product_tol:.0e})")
        mats = [mk.partial_trace(block, (d, d, d), [axis]) / w for axis in range(3)]
        rounded = [_round_to_projector(m) for m in mats]
        rounded = _orthonormalize_triple(rounded)
        projs = [np.zeros((d, d), dtype=complex) for _ in range(n)]
        for slot, pr in zip((i, j, k), rounded):
            projs[slot] = pr
        measurements.append(ProjectiveMeasurement(d, tuple(projs)))
        weights.append(w)
    if refit and measurements:
        weights = _refit_weights(measurements, p, sol.t_upper, weights)
    dec = Decomposition(weights, measurements, sol.t_upper,
                        diagnostics={"dropped_weight": dropped, "triples": len(weights)})
    dec.check_invariants()
    return dec


def _orthonormalize_triple(projs: list[np.ndarray]) -> list[np.ndarray]:
    """Snap three rank-1 projectors onto an exactly orthonormal frame.

    Uses the symmetric (Loewdin) orthogonalization of the three directions,
    which perturbs each vector the least; leaves non-rank-1 inputs untouched.
    """
    vecs = []
    for p in projs:
        vals, u = np.linalg.eigh(p)
        if abs(vals[-1] - 1.0) > 0.1 or np.count_nonzero(vals > 0.5) != 1:
            return projs
        vecs.append(u[:, -1])
    v = np.stack(vecs, axis=1)
    u, _, vh = np.linalg.svd(v)
    w = u @ vh
    return [mk.proj(w[:, k]) for k in range(3)]


# ---------------------------------------------------------------------------
# brute-force qubit oracle


def bloch_grid(resolution: int) -> np.ndarray:
    """Deterministic Fibonacci sphere directions, closed under inversion."""
    i = np.arange(resolution)
    golden = (1 + np.sqrt(5)) / 2
    z = 1 - 2 * (i + 0.5) / resolution
    r = np.sqrt(np.maximum(0.0, 1 - z * z))
    phi = 2 * np.pi * i / golden
    pts = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
    return np.concatenate([pts, -pts], axis=0)


def _bloch_of(m: np.ndarray) -> tuple[float, np.ndarray]:
    """(trace, Bloch vector) of a qubit Hermitian operator M = (s I + v.sigma)/2."""
    s = float(np.real(m[0, 0] + m[1, 1]))
    v = np.array([
        float(np.real(m[0, 1] + m[1, 0])),
        float(np.imag(m[1, 0] - m[0, 1])),
        float(np.real(m[0, 0] - m[1, 1])),
    ])
    return s, v


def brute_force_oracle(p: Povm, resolution: int = 10_000) -> float:
    """Certified lower bound on the qubit critical visibility via an LP.

    Maximizes t such that the depolarized POVM is a convex mixture of von
    Neumann measurements drawn from a fixed Bloch-sphere grid (plus trivial
    assignments), converging to the true value as the grid refines.
    """
    if p.dim != 2:
        raise ValueError("the brute-force oracle works on qubit POVMs")
    n = p.n_outcomes
    if n > 6:
        raise ValueError("oracle restricted to n <= 6 outcomes")
    dirs = bloch_grid(resolution)
    g = dirs.shape[0]
    pairs = list(itertools.combinations(range(n), 2))
    n_pair_vars = len(pairs) * g
    n_vars = n_pair_vars + n + 1  # pair weights, trivial weights, t

    traces = []
    blochs = []
    for m in p.effects:
        s, v = _bloch_of(m)
        traces.append(s)
        blochs.append(v)

    rows, cols, vals, rhs = [], [], [], []
    row = 0
    # per effect: one trace row and three Bloch rows
    for i in range(n):
        tr_row = row
        bl_rows = (row + 1, row + 2, row + 3)
        rhs.extend([traces[i], 0.0, 0.0, 0.0])
        row += 4
        for pi, (a, b) in enumerate(pairs):
            if i not in (a, b):
                continue
            sign = 1.0 if i == a else -1.0
            base = pi * g
            for gi in range(g):
                var = base + gi
                rows.append(tr_row); cols.append(var); vals.append(1.0)
                for axis in range(3):
                    u = dirs[gi, axis] * sign
                    if u != 0.0:
                        rows.append(bl_rows[axis]); cols.append(var); vals.append(u)
        rows.append(tr_row); cols.append(n_pair_vars + i); vals.append(2.0)
        for axis in range(3):
            v = blochs[i][axis]
            if v != 0.0:
                rows.append(bl_rows[axis]); cols.append(n_vars - 1); vals.append(-v)
    # mixture normalization
    for var in range(n_pair_vars + n):
        rows.append(row); cols.append(var); vals.append(1.0)
    rhs.append(1.0)
    row += 1

    a_eq = sp.coo_matrix((vals, (rows, cols)), shape=(row, n_vars)).tocsc()
    c = np.zeros(n_vars)
    c[-1] = -1.0  # maximize t
    bounds = [(0, None)] * (n_vars - 1) + [(0.0, 1.0)]
    res = scipy.optimize.linprog(c, A_eq=a_eq, b_eq=np.asarray(rhs), bounds=bounds,
                                 method="highs")
    if not res.success:
        raise RuntimeError(f"oracle LP failed: {res.message}")
    return float(res.x[-1])


# ---------------------------------------------------------------------------
# JSON


def decomposition_to_json(dec: Decomposition) -> dict:
    from .povm import _matrix_to_json

    return {
        "t": dec.achieved_t,
        "entries": [
            {"weight": w, "projectors": [_matrix_to_json(pr) for pr in meas.projectors]}
            for w, meas in zip(dec.weights, dec.measurements)
        ],
    }


def decomposition_from_json(data: dict, dim: int) -> Decomposition:
    from .povm import _matrix_from_json

    weights, measurements = [], []
    for entry in data["entries"]:
        weights.append(float(entry["weight"]))
        projs = tuple(_matrix_from_json(m, dim) for m in entry["projectors"])
        measurements.append(ProjectiveMeasurement(dim, projs))
    return Decomposition(weights, measurements, float(data["t"]))


def save_decomposition(dec: Decomposition, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(decomposition_to_json(dec), fh, indent=1)


def load_decomposition(path: str, dim: int) -> Decomposition:
    with open(path) as fh:
        return decomposition_from_json(json.load(fh), dim)
