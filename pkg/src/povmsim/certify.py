"""Robust certification of non-simulability from measured statistics.

The certification SDP couples, per probe state, a three-party block family
R_{ij,alpha} (two projective factors plus the unknown prepared state) with the
POVM and state variables.  The measured probabilities enter only through a
box of half-width delta around the model probabilities q, and the preparation
enters only through a fidelity floor against the declared target state, so an
infeasibility verdict is robust to both statistical noise at level delta and
state-preparation error down to the certified fidelities.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.special

from . import matkernel as mk
from . import sdpcore as core
from .hierarchy import default_solver_options
from .povm import Povm, _matrix_to_json, _vector_from_json, _vector_to_json
from .witness import Witness, negative_probe_states

FEASIBLE = "FEASIBLE"
INFEASIBLE = "INFEASIBLE"
INCONCLUSIVE = "INCONCLUSIVE"

MODE_FEASIBILITY = "FEASIBILITY"
MODE_MIN_DELTA = "MIN_DELTA"


@dataclass(frozen=True, eq=False)
class StateRecord:
    target: np.ndarray  # unit vector of the declared preparation target
    fidelity: float  # certified lower bound on <target| rho |target>
    shots: int

    def __post_init__(self) -> None:
        v = np.asarray(self.target, dtype=complex).ravel()
        if abs(np.linalg.norm(v) - 1.0) > 1e-9:
            raise ValueError("target state must be normalized")
        if not 0.0 <= self.fidelity <= 1.0:
            raise ValueError("fidelity bound must lie in [0, 1]")
        if self.shots < 1:
            raise ValueError("shot count must be >= 1")
        v.setflags(write=False)
        object.__setattr__(self, "target", v)


@dataclass(eq=False)
class ExperimentData:
    dim: int
    n_outcomes: int
    states: list[StateRecord]
    probabilities: np.ndarray  # (r, n) measured outcome frequencies
    label: str = ""
    normalization_tol: float = 1e-9

    def __post_init__(self) -> None:
        self.probabilities = np.asarray(self.probabilities, dtype=float)
        r = len(self.states)
        if self.probabilities.shape != (r, self.n_outcomes):
            raise ValueError("probability table shape does not match states/outcomes")
        if np.any(self.probabilities < -1e-12) or np.any(self.probabilities > 1 + 1e-12):
            raise ValueError("probabilities must lie in [0, 1]")
        for rec in self.states:
            if rec.target.shape != (self.dim,):
                raise ValueError("target state dimension mismatch")
        sums = self.probabilities.sum(axis=1)
        worst = float(np.max(np.abs(sums - 1.0)))
        if worst > self.normalization_tol:
            raise ValueError(
                f"probability rows deviate from normalization by {worst:.2e} "
                f"(tolerance {self.normalization_tol:.0e}); measured tables may "
                "need an explicit normalization_tol")

    @property
    def n_states(self) -> int:
        return len(self.states)

    def p_max(self) -> np.ndarray:
        """Per-outcome maximum measured probability (floor constraints)."""
        return self.probabilities.max(axis=0)


@dataclass
class HoeffdingRecord:
    delta: float
    per_test_tail: float
    union_tail: float
    tests: int
    sigma_equivalent: float
    vacuous: bool


def hoeffding(delta: float, shots, tests: int = 1) -> HoeffdingRecord:
    """Two-sided tail 2 exp(-2 N delta^2) per probability, union over tests.

    ``shots`` may be a single count or one count per test; the union bound
    sums the individual tails.  The equivalent sigma is the two-sided Gaussian
    quantile reproducing the union tail (0 when the bound is vacuous).
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    counts = np.atleast_1d(np.asarray(shots, dtype=float))
    if np.any(counts < 1):
        raise ValueError("shot counts must be >= 1")
    tails = 2.0 * np.exp(-2.0 * counts * delta * delta)
    if counts.size == 1:
        per_test = float(tails[0])
        union = tests * per_test
    else:
        if counts.size != tests:
            raise ValueError("length of shots must equal tests")
        per_test = float(np.max(tails))
        union = float(np.sum(tails))
    vacuous = union >= 1.0
    sigma = 0.0
    if not vacuous:
        sigma = float(np.sqrt(2.0) * scipy.special.erfcinv(union))
    return HoeffdingRecord(float(delta), per_test, float(union), tests, sigma, vacuous)


def gaussian_two_sided_tail(sigma: float) -> float:
    return float(scipy.special.erfc(sigma / np.sqrt(2.0)))


def delta_for_sigma(sigma: float, shots, tests: int) -> float:
    """Smallest uniform delta whose union-bounded tail beats the sigma level."""
    target = gaussian_two_sided_tail(sigma)
    counts = np.atleast_1d(np.asarray(shots, dtype=float))

    def tail(delta: float) -> float:
        t = 2.0 * np.exp(-2.0 * counts * delta * delta)
        return float(np.sum(t)) if counts.size > 1 else tests * float(t[0])

    lo, hi = 0.0, 1.0
    for _ in range(200):
        mid = (lo + hi) / 2
        if tail(mid) > target:
            lo = mid
        else:
            hi = mid
    return hi


@dataclass
class CertificationResult:
    mode: str
    feasible: str  # FEASIBLE | INFEASIBLE | INCONCLUSIVE
    delta_star: float | None = None
    delta: float | None = None
    confidence: HoeffdingRecord | None = None
    solver: dict = field(default_factory=dict)

    @property
    def certifies_nonsimulability(self) -> bool:
        return self.feasible == INFEASIBLE


# ---------------------------------------------------------------------------
# SDP assembly


def build_cert_sdp(data: ExperimentData, delta: float | None,
                   gamma_cuts: tuple[int, ...] = (2,),
                   budget: int = 2**28,
                   families: frozenset[str] = frozenset(
                       {"swap", "floors", "blocksum", "readout", "margC"})):
    """Conic program of the certification test.

    ``delta`` fixes the statistical slack (feasibility mode); None makes it a
    variable to be minimized.  ``gamma_cuts`` lists the 0-based subsystems on
    which partial-transpose positivity of the three-party blocks is imposed
    (the state slot by default; any choice is a valid necessary condition for
    the product structure projective x projective x state).
    """
    d, n, r = data.dim, data.n_outcomes, data.n_states
    side = d**3
    if n * n * r * side * side > budget:
        raise core.InconclusiveSolveError("certification SDP exceeds the resource budget")
    dims3 = (d, d, d)
    p_max = data.p_max()

    # with real target states the data is conjugation-invariant, so all matrix
    # variables can be restricted to real symmetric form without changing
    # feasibility or the optimal slack
    real_blocks = all(float(np.max(np.abs(np.outer(rec.target, rec.target.conj()).imag)))
                      < 1e-12 for rec in data.states)
    herm = not real_blocks
    b = core.ProgramBuilder()
    r_blocks = {}
    for i in range(n):
        for j in range(n):
            for al in range(r):
                r_blocks[(i, j, al)] = b.add_psd_block(f"R_{i}_{j}_{al}", side,
                                                       hermitian=herm)
    rho = [b.add_psd_block(f"rho_{al}", d, hermitian=herm) for al in range(r)]
    m_ops = [b.add_psd_block(f"M_{i}", d, hermitian=herm) for i in range(n)]
    q = [[b.add_scalar(f"q_{al}_{i}") for i in range(n)] for al in range(r)]
    delta_ref = None
    if delta is None:
        delta_ref = b.add_scalar("delta")
        b.add_ineq(core.Expr({delta_ref.key: -1.0}), 0.0, name="delta>=0")

    digits = mk.digit_table(dims3)
    strides = mk.index_strides(dims3)

    # partial transpose positivity on the requested cuts
    for cut in gamma_cuts:
        pt_map = np.array([int(x) for x in range(side)])
        for (i, j, al), blk in r_blocks.items():
            entries = {}
            for x in range(side):
                for y in range(x, side):
                    xd, yd = digits[x].copy(), digits[y].copy()
                    xd[cut], yd[cut] = yd[cut], xd[cut]
                    e = core.Expr()
                    e.add_entry(blk, int(xd @ strides), int(yd @ strides), 1.0)
                    entries[(x, y)] = e
            b.add_lmi(entries, side, name=f"pt{cut}:{i},{j},{al}", real=real_blocks)

    # swap contraction on the two projective slots
    swap01 = mk.digit_table(dims3).copy()
    swap01[:, [0, 1]] = swap01[:, [1, 0]]
    tau01 = swap01 @ strides
    red2 = mk.digit_table((d, d))
    emb0 = np.array([[int(np.insert(row, 0, w) @ strides) for w in range(d)]
                     for row in red2])  # index over (subsys1, subsys2) digits
    for al in range(r if "swap" in families else 0):
        for i in range(n):
            for j in range(n):
                if i == j:
                    continue
                entries = {}
                for u in range(d * d):
                    for v in range(d * d):
                        e = core.Expr()
                        for w in range(d):
                            e.add_entry(r_blocks[(i, j, al)],
                                        int(tau01[emb0[u, w]]), int(emb0[v, w]), 1.0)
                        entries[(u, v)] = e
                b.add_matrix_eq(entries, None, d * d, name=f"swap:{i},{j},{al}",
                                hermitian=False)

    # states: unit trace and fidelity floor
    for al, rec in enumerate(data.states):
        b.add_eq(core.trace_expr(rho[al]), 1.0, name=f"trace_rho:{al}")
        lam = mk.proj(rec.target)
        fid = core.weighted_trace_expr(rho[al], lam)
        b.add_ineq(fid.scaled(-1.0), -rec.fidelity, name=f"fidelity:{al}")

    # POVM completeness
    entries = {}
    for x in range(d):
        for y in range(x, d):
            e = core.Expr()
            for i in range(n):
                e.add_entry(m_ops[i], x, y, 1.0)
            entries[(x, y)] = e
    b.add_matrix_eq(entries, np.eye(d), d, name="completeness", hermitian=True)

    # probability boxes and per-state normalization
    for al in range(r):
        norm = core.Expr()
        for i in range(n):
            norm.add(q[al][i].key, 1.0)
            p_meas = float(data.probabilities[al, i])
            up = core.Expr({q[al][i].key: 1.0})
            lo = core.Expr({q[al][i].key: -1.0})
            if delta_ref is None:
                b.add_ineq(up, p_meas + delta, name=f"box_up:{al},{i}")
                b.add_ineq(lo, -(p_meas - delta), name=f"box_lo:{al},{i}")
            else:
                up.add(delta_ref.key, -1.0)
                lo.add(delta_ref.key, -1.0)
                b.add_ineq(up, p_meas, name=f"box_up:{al},{i}")
                b.add_ineq(lo, -p_meas, name=f"box_lo:{al},{i}")
        b.add_eq(norm, 1.0, name=f"qnorm:{al}")

    # marginals over the state slot: Tr_C sum_i R = I (x) M_j and transposed
    red12 = mk.digit_table((d, d))
    emb2 = np.array([[int(np.append(row, w) @ strides) for w in range(d)]
                     for row in red12])
    for al in range(r if "margC" in families else 0):
        for j in range(n):
            entries = {}
            for x in range(d * d):
                for y in range(x, d * d):
                    e = core.Expr()
                    for i in range(n):
                        for w in range(d):
                            e.add_entry(r_blocks[(i, j, al)],
                                        int(emb2[x, w]), int(emb2[y, w]), 1.0)
                    x1, x2 = divmod(x, d)
                    y1, y2 = divmod(y, d)
                    if x1 == y1:
                        e.add_entry(m_ops[j], x2, y2, -1.0)
                    entries[(x, y)] = e
            b.add_matrix_eq(entries, None, d * d, name=f"margC_i:{j},{al}", hermitian=True)
        for i in range(n):
            entries = {}
            for x in range(d * d):
                for y in range(x, d * d):
                    e = core.Expr()
                    for j in range(n):
                        for w in range(d):
                            e.add_entry(r_blocks[(i, j, al)],
                                        int(emb2[x, w]), int(emb2[y, w]), 1.0)
                    x1, x2 = divmod(x, d)
                    y1, y2 = divmod(y, d)
                    if x2 == y2:
                        e.add_entry(m_ops[i], x1, y1, -1.0)
                    entries[(x, y)] = e
            b.add_matrix_eq(entries, None, d * d, name=f"margC_j:{i},{al}", hermitian=True)

    # total block sum fixes the state: sum_ij R = I (x) I (x) rho_alpha
    for al in range(r if "blocksum" in families else 0):
        entries = {}
        for x in range(side):
            for y in range(x, side):
                e = core.Expr()
                for i in range(n):
                    for j in range(n):
                        e.add_entry(r_blocks[(i, j, al)], x, y, 1.0)
                xd, yd = digits[x], digits[y]
                if xd[0] == yd[0] and xd[1] == yd[1]:
                    e.add_entry(rho[al], int(xd[2]), int(yd[2]), -1.0)
                entries[(x, y)] = e
        b.add_matrix_eq(entries, None, side, name=f"blocksum:{al}", hermitian=True)

    # probability floors: Tr_B sum_i R >= p_max_j I (x) rho and the twin
    red02 = mk.digit_table((d, d))
    emb1 = np.array([[int(np.insert(row, 1, w) @ strides) for w in range(d)]
                     for row in red02])
    for al in range(r if "floors" in families else 0):
        for j in range(n):
            entries = {}
            for x in range(d * d):
                for y in range(x, d * d):
                    e = core.Expr()
                    for i in range(n):
                        for w in range(d):
                            e.add_entry(r_blocks[(i, j, al)],
                                        int(emb1[x, w]), int(emb1[y, w]), 1.0)
                    x1, x2 = divmod(x, d)
                    y1, y2 = divmod(y, d)
                    if x1 == y1:
                        e.add_entry(rho[al], x2, y2, -float(p_max[j]))
                    entries[(x, y)] = e
            b.add_lmi(entries, d * d, name=f"floorB:{j},{al}", real=real_blocks)
        for i in range(n):
            entries = {}
            for x in range(d * d):
                for y in range(x, d * d):
                    e = core.Expr()
                    for j in range(n):
                        for w in range(d):
                            e.add_entry(r_blocks[(i, j, al)],
                                        int(emb0[x, w]), int(emb0[y, w]), 1.0)
                    x1, x2 = divmod(x, d)
                    y1, y2 = divmod(y, d)
                    if x1 == y1:
                        e.add_entry(rho[al], x2, y2, -float(p_max[i]))
                    entries[(x, y)] = e
            b.add_lmi(entries, d * d, name=f"floorA:{i},{al}", real=real_blocks)

    # readout contractions tying q to the blocks
    for al in range(r if "readout" in families else 0):
        for j in range(n):
            entries = {}
            for x1 in range(d):
                for y1 in range(d):
                    e = core.Expr()
                    # Tr_BC(V_(23) sum_i R)[x1,y1] = sum_{i,b,c} R[(x1,c,b),(y1,b,c)]
                    for i in range(n):
                        for bidx in range(d):
                            for cidx in range(d):
                                xfull = int(np.array([x1, cidx, bidx]) @ strides)
                                yfull = int(np.array([y1, bidx, cidx]) @ strides)
                                e.add_entry(r_blocks[(i, j, al)], xfull, yfull, 1.0)
                    if x1 == y1:
                        e.add(q[al][j].key, -1.0)
                    entries[(x1, y1)] = e
            b.add_matrix_eq(entries, None, d, name=f"readB:{j},{al}", hermitian=False)
        for i in range(n):
            entries = {}
            for x2 in range(d):
                for y2 in range(d):
                    e = core.Expr()
                    # Tr_AC(V_(13) sum_j R)[x2,y2] = sum_{j,a,c} R[(c,x2,a),(a,y2,c)]
                    for j in range(n):
                        for aidx in range(d):
                            for cidx in range(d):
                                xfull = int(np.array([cidx, x2, aidx]) @ strides)
                                yfull = int(np.array([aidx, y2, cidx]) @ strides)
                                e.add_entry(r_blocks[(i, j, al)], xfull, yfull, 1.0)
                    if x2 == y2:
                        e.add(q[al][i].key, -1.0)
                    entries[(x2, y2)] = e
            b.add_matrix_eq(entries, None, d, name=f"readA:{i},{al}", hermitian=False)

    if delta_ref is None:
        b.set_objective(core.FEASIBILITY)
    else:
        b.set_objective(core.MINIMIZE, core.Expr({delta_ref.key: 1.0}))
    return b.build()


def _confidence_from(data: ExperimentData, delta: float) -> HoeffdingRecord | None:
    if delta <= 0:
        return None
    shots = [rec.shots for rec in data.states for _ in range(data.n_outcomes)]
    return hoeffding(delta, shots, tests=len(shots))


def min_delta(data: ExperimentData, opts: core.SolverOptions | None = None,
              gamma_cuts: tuple[int, ...] = (2,)) -> CertificationResult:
    """Smallest statistical slack at which a simulable model explains the data."""
    prog = build_cert_sdp(data, None, gamma_cuts=gamma_cuts)
    opts = opts or default_solver_options(prog, accurate_tol=2e-8, scs_tol=1e-6)
    res = core.solve(prog, opts)
    if res.status == core.OPTIMAL:
        delta_star = max(0.0, float(res.objective))
        return CertificationResult(
            MODE_MIN_DELTA, FEASIBLE, delta_star=delta_star,
            confidence=_confidence_from(data, delta_star),
            solver={"backend": res.backend, "residuals": res.residuals})
    if res.status == core.INFEASIBLE:
        return CertificationResult(MODE_MIN_DELTA, INFEASIBLE,
                                   solver={"backend": res.backend, "info": res.info})
    return CertificationResult(MODE_MIN_DELTA, INCONCLUSIVE,
                               solver={"backend": res.backend, "info": res.info})


def certify_feasibility(data: ExperimentData, delta: float,
                        opts: core.SolverOptions | None = None,
                        gamma_cuts: tuple[int, ...] = (2,)) -> CertificationResult:
    """Feasibility test at fixed slack; INFEASIBLE certifies non-simulability.

    INACCURATE backend outcomes are reported INCONCLUSIVE, never as a
    certificate.
    """
    if delta < 0:
        raise ValueError("delta must be >= 0")
    prog = build_cert_sdp(data, delta, gamma_cuts=gamma_cuts)
    opts = opts or default_solver_options(prog, accurate_tol=2e-8, scs_tol=1e-6)
    res = core.solve(prog, opts)
    if res.status == core.OPTIMAL:
        verdict = FEASIBLE
    elif res.status == core.INFEASIBLE:
        verdict = INFEASIBLE
    else:
        verdict = INCONCLUSIVE
    return CertificationResult(
        MODE_FEASIBILITY, verdict, delta=delta,
        confidence=_confidence_from(data, delta),
        solver={"backend": res.backend, "info": res.info, "residuals": res.residuals})


# ---------------------------------------------------------------------------
# planning and synthetic data


THRESHOLD = "THRESHOLD"


def ideal_dataset(p: Povm, probes: list[np.ndarray], fidelities, shots: int = 1,
                  label: str = "ideal") -> ExperimentData:
    """Noise-free dataset: p_{alpha,i} = <probe| M_i |probe>."""
    fid = np.broadcast_to(np.asarray(fidelities, dtype=float), (len(probes),))
    states = [StateRecord(v, float(f), shots) for v, f in zip(probes, fid)]
    probs = np.array([[float(np.real(v.conj() @ (m @ v))) for m in p.effects]
                      for v in probes])
    return ExperimentData(p.dim, p.n_outcomes, states, probs, label=label)


def witness_probe_vectors(w: Witness) -> list[np.ndarray]:
    """The per-outcome most-negative eigendirections (one probe per effect)."""
    return [pr.state for pr in negative_probe_states(w)]


def plan_shots(p: Povm, w: Witness, fidelity_grid, sigma: float,
               opts: core.SolverOptions | None = None) -> list[dict]:
    """Minimum shot counts per probe state versus preparation fidelity.

    For each fidelity F the ideal-probability dataset is certified with
    min_delta; N is the smallest uniform shot count whose union-bounded
    Hoeffding tail over all r*n probabilities beats the two-sided sigma tail.
    Fidelities whose delta* vanishes cannot be certified at all (THRESHOLD).
    """
    probes = witness_probe_vectors(w)
    tests = len(probes) * p.n_outcomes
    target = gaussian_two_sided_tail(sigma)
    rows = []
    for f in fidelity_grid:
        data = ideal_dataset(p, probes, float(f))
        result = min_delta(data, opts=opts)
        row = {"fidelity": float(f), "delta_star": result.delta_star,
               "status": result.feasible}
        if result.feasible != FEASIBLE or result.delta_star is None \
                or result.delta_star < 1e-7:
            row["shots"] = THRESHOLD
        else:
            n_min = math.log(2.0 * tests / target) / (2.0 * result.delta_star**2)
            row["shots"] = int(math.ceil(n_min))
        rows.append(row)
    return rows


def simulate_experiment(p: Povm, probes: list[np.ndarray], noise,
                        shots: int, seed: int,
                        label: str = "synthetic") -> ExperimentData:
    """Multinomial sampling of depolarized probe states (seeded, reproducible).

    ``noise`` holds one depolarizing strength per probe; the reported fidelity
    is the exact fidelity of the noisy state, a valid lower bound.
    """
    rng = np.random.default_rng(seed)
    strengths = np.broadcast_to(np.asarray(noise, dtype=float), (len(probes),))
    states, rows = [], []
    eye = np.eye(p.dim) / p.dim
    for v, s in zip(probes, strengths):
        if not 0.0 <= s <= 1.0:
            raise ValueError("depolarizing strength must lie in [0, 1]")
        rho = (1.0 - s) * mk.proj(v) + s * eye
        probs = np.clip(p.probabilities(rho), 0.0, None)
        probs = probs / probs.sum()
        counts = rng.multinomial(shots, probs)
        rows.append(counts / shots)
        fidelity = float(np.real(v.conj() @ (rho @ v)))
        states.append(StateRecord(v, fidelity, shots))
    return ExperimentData(p.dim, p.n_outcomes, states, np.array(rows), label=label)


# ---------------------------------------------------------------------------
# JSON / CSV interfaces


def data_to_json(data: ExperimentData) -> dict:
    return {
        "label": data.label,
        "dim": data.dim,
        "n": data.n_outcomes,
        "states": [
            {"target": _vector_to_json(rec.target),
             "fidelity": rec.fidelity, "shots": rec.shots}
            for rec in data.states
        ],
        "probabilities": [[float(x) for x in row] for row in data.probabilities],
    }


def data_from_json(payload: dict, normalization_tol: float = 1e-9) -> ExperimentData:
    states = [
        StateRecord(_vector_from_json(rec["target"]), float(rec["fidelity"]),
                    int(rec["shots"]))
        for rec in payload["states"]
    ]
    return ExperimentData(
        int(payload["dim"]), int(payload["n"]), states,
        np.asarray(payload["probabilities"], dtype=float),
        label=str(payload.get("label", "")),
        normalization_tol=float(payload.get("normalization_tol", normalization_tol)),
    )


def save_data(data: ExperimentData, path: str) -> None:
    payload = data_to_json(data)
    payload["normalization_tol"] = data.normalization_tol
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1)


def load_data(path: str) -> ExperimentData:
    with open(path) as fh:
        return data_from_json(json.load(fh))


def load_csv(path: str, dim: int, targets: list[np.ndarray], fidelities, shots) -> ExperimentData:
    """Ingest a lab export: one CSV row of outcome frequencies per state."""
    probs = np.loadtxt(path, delimiter=",", ndmin=2)
    fid = np.broadcast_to(np.asarray(fidelities, dtype=float), (len(targets),))
    cnt = np.broadcast_to(np.asarray(shots, dtype=int), (len(targets),))
    states = [StateRecord(v, float(f), int(c)) for v, f, c in zip(targets, fid, cnt)]
    return ExperimentData(dim, probs.shape[1], states, probs,
                          normalization_tol=1e-2, label=path)
