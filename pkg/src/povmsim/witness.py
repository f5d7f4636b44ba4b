"""Dual-side machinery: optimal dual solutions and non-simulability witnesses.

The level-2 dual minimizes sum_i (2/d) Tr(A^i) Tr(M_i) subject to the
constraint family  A^i + V A^j V + (I (x) D^{ij} V + h.c.) >= 0  and a
normalization equality; its optimum coincides with the level-2 primal bound.
Witness operators are the single-system reductions W_i = Tr_2 A^i: any POVM
mixing projective measurements satisfies sum_i Tr(W_i M_i) >= 0, so a
negative value certifies non-simulability.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field

import numpy as np

from . import matkernel as mk
from . import sdpcore as core
from .hierarchy import _TensorIndex, default_solver_options, transposition_set
from .povm import Povm, depolarize, wh_covariant_permutation, weyl_heisenberg, wh_indices


@dataclass
class DualSolution:
    """Feasible point of the level-2 dual: A^i (Hermitian d^2) and D^{ij}."""

    dim: int
    A: list[np.ndarray]
    D: dict[tuple[int, int], np.ndarray]
    objective: float

    def d_matrix(self, i: int, j: int) -> np.ndarray:
        if i == j:
            return np.zeros((self.dim, self.dim), dtype=complex)
        if (i, j) in self.D:
            return self.D[(i, j)]
        return self.D[(j, i)].conj().T

    def lmi_matrix(self, i: int, j: int) -> np.ndarray:
        d = self.dim
        v = mk.permutation_operator((1, 0), d)
        dd = mk.kron(np.eye(d), self.d_matrix(i, j)) @ v
        return self.A[i] + v @ self.A[j] @ v + dd + dd.conj().T

    def feasibility_audit(self, povm: Povm) -> dict[str, float]:
        """Re-verify the LMI family and normalization with matkernel only."""
        n = len(self.A)
        min_eig = min(mk.min_eigval(self.lmi_matrix(i, j))
                      for i in range(n) for j in range(n))
        norm_dev = abs(_normalization_value(self.dim, self.A, povm) - 1.0)
        return {"min_lmi_eig": min_eig, "normalization_deviation": norm_dev}


@dataclass
class Witness:
    """Operators W_i with spectral data; negative evaluation certifies
    non-simulability."""

    dim: int
    operators: list[np.ndarray]
    eigenvalues: list[np.ndarray] = field(default_factory=list)
    eigenvectors: list[np.ndarray] = field(default_factory=list)
    source_objective: float | None = None

    def __post_init__(self) -> None:
        for w in self.operators:
            if mk.herm_deviation(w) > 1e-8:
                raise ValueError("witness operators must be Hermitian")
        if not self.eigenvalues:
            self._spectralize()

    def _spectralize(self) -> None:
        self.eigenvalues, self.eigenvectors = [], []
        for w in self.operators:
            vals, vecs = np.linalg.eigh(mk.hermitize(w))
            order = np.argsort(-vals)  # descending
            vals, vecs = vals[order], vecs[:, order]
            for k in range(vecs.shape[1]):  # largest component real positive
                pivot = np.argmax(np.abs(vecs[:, k]))
                phase = vecs[pivot, k]
                if abs(phase) > 0:
                    vecs[:, k] = vecs[:, k] * (np.conj(phase) / abs(phase))
            self.eigenvalues.append(vals)
            self.eigenvectors.append(vecs)

    def spectral_residual(self) -> float:
        worst = 0.0
        for w, vals, vecs in zip(self.operators, self.eigenvalues, self.eigenvectors):
            worst = max(worst, mk.frob(vecs @ np.diag(vals) @ vecs.conj().T - w))
        return worst


def _normalization_value(d: int, a_ops: list[np.ndarray], povm: Povm) -> float:
    total = 0.0
    for a, m in zip(a_ops, povm.effects):
        tr_a = float(np.real(np.trace(a)))
        tr_m = float(np.real(np.trace(m)))
        w = mk.partial_trace(a, (d, d), [0])
        total += 2 * (tr_a * tr_m / d - float(np.real(np.trace(w @ m))))
    return total


# ---------------------------------------------------------------------------
# level-2 dual


def _dual2_builder(p: Povm):
    d, n = p.dim, p.n_outcomes
    side = d * d
    b = core.ProgramBuilder()
    a_blocks = [b.add_free_block(f"A{i}", side) for i in range(n)]
    d_vars: dict[tuple[int, int], np.ndarray] = {}
    for i in range(n):
        for j in range(i + 1, n):
            d_vars[(i, j)] = b.add_free_complex_matrix(f"D{i}_{j}", d, d)

    def d_entry(i: int, j: int, r: int, c: int):
        """Expr of D^{ij}[r, c] honoring D^{ji} = (D^{ij})†."""
        if i < j:
            return d_vars[(i, j)][r, c]
        return _conj_expr(d_vars[(j, i)][c, r])

    # LMI per ordered pair: A^i + V A^j V + (I x D^{ij}) V + h.c. >= 0
    for i in range(n):
        for j in range(n):
            entries: dict[tuple[int, int], core.Expr] = {}
            for x in range(side):
                x1, x2 = divmod(x, d)
                for y in range(x, side):
                    y1, y2 = divmod(y, d)
                    e = core.Expr()
                    e.add_entry(a_blocks[i], x, y, 1.0)
                    e.add_entry(a_blocks[j], x2 * d + x1, y2 * d + y1, 1.0)
                    if i != j:
                        # ((I x D) V)[x, y] = delta_{x1, y2} D[x2, y1]
                        if x1 == y2:
                            e += d_entry(i, j, x2, y1)
                        # (V (I x D†))[x, y] = delta_{x2, y1} conj(D[y2, x1])
                        if x2 == y1:
                            e += _conj_expr(d_entry(i, j, y2, x1))
                    entries[(x, y)] = e
            b.add_lmi(entries, side, name=f"lmi:{i},{j}")

    # normalization: sum_i 2 [Tr(A^i) Tr(M_i)/d - Tr(Tr_2(A^i) M_i)] = 1
    norm = core.Expr()
    for i, m in enumerate(p.effects):
        tr_m = float(np.real(np.trace(m)))
        for x in range(side):
            norm.add((a_blocks[i].index, x, x, 0), 2 * tr_m / d)
        # Tr(Tr_2(A^i) M_i) = sum_{x1,y1,w} A[(x1,w),(y1,w)] M[y1,x1]
        for x1 in range(d):
            for y1 in range(d):
                if m[y1, x1] == 0.0:
                    continue
                for w in range(d):
                    e = core.Expr()
                    e.add_entry(a_blocks[i], x1 * d + w, y1 * d + w, -2 * m[y1, x1])
                    norm += e
    b.add_eq(norm, 1.0, name="normalization")

    obj = core.Expr()
    for i, m in enumerate(p.effects):
        tr_m = float(np.real(np.trace(m)))
        for x in range(side):
            obj.add((a_blocks[i].index, x, x, 0), 2 * tr_m / d)
    b.set_objective(core.MINIMIZE, obj)
    return b.build(), a_blocks, d_vars


def _conj_expr(e: core.Expr) -> core.Expr:
    out = core.Expr(const=np.conj(e.const))
    for key, z in e.terms.items():
        if isinstance(key, int):
            out.add(key, np.conj(z))
        else:
            bi, r, c, flag = key
            out.add((bi, r, c, 1 - flag), np.conj(z))
    return out


def solve_dual2(p: Povm, opts: core.SolverOptions | None = None) -> DualSolution:
    prog, a_blocks, d_vars = _dual2_builder(p)
    opts = opts or default_solver_options(prog)
    res = core.solve(prog, opts)
    if res.status != core.OPTIMAL:
        raise core.InconclusiveSolveError(f"dual solve ended {res.status}", res)
    a_ops = [res.block_values[blk.name] for blk in a_blocks]
    d_ops = {}
    for (i, j), grid in d_vars.items():
        m = np.empty((p.dim, p.dim), dtype=complex)
        for r in range(p.dim):
            for c in range(p.dim):
                m[r, c] = res.eval_expr(grid[r, c])
        d_ops[(i, j)] = m
    return DualSolution(p.dim, a_ops, d_ops, float(res.objective))


def extract(ds: DualSolution) -> Witness:
    """W_i = Tr_2 A^i with deterministic spectral data."""
    ops = [mk.hermitize(mk.partial_trace(a, (ds.dim, ds.dim), [0])) for a in ds.A]
    return Witness(ds.dim, ops, source_objective=ds.objective)


def evaluate(w: Witness, p: Povm) -> float:
    if w.dim != p.dim or len(w.operators) != p.n_outcomes:
        raise ValueError("witness and POVM shapes do not match")
    return float(sum(np.real(np.trace(wi @ mi)) for wi, mi in zip(w.operators, p.effects)))


def zero_crossing(w: Witness, p: Povm) -> float | None:
    """Unique t* with <W, depolarize(p, t*)> = 0, if the witness crosses."""
    at_noise = evaluate(w, depolarize(p, 0.0))
    at_full = evaluate(w, p)
    if not (at_noise > 0.0 > at_full):
        return None
    # value(t) = t*at_full + (1-t)*at_noise is linear in t
    return float(at_noise / (at_noise - at_full))


@dataclass(frozen=True)
class ProbeState:
    outcome: int
    eigen_index: int
    eigenvalue: float
    state: np.ndarray


def probe_states(w: Witness) -> list[ProbeState]:
    """Preparation targets: eigenvectors of each W_i, descending eigenvalue."""
    probes = []
    for i, (vals, vecs) in enumerate(zip(w.eigenvalues, w.eigenvectors)):
        for k in range(len(vals)):
            probes.append(ProbeState(i, k, float(vals[k]), vecs[:, k].copy()))
    return probes


def evaluate_from_probes(w: Witness, p: Povm) -> float:
    """Witness value as sum_ik lambda_i^k q_i^k with q from probe states."""
    total = 0.0
    for pr in probe_states(w):
        q = float(np.real(pr.state.conj() @ (p.effects[pr.outcome] @ pr.state)))
        total += pr.eigenvalue * q
    return total


def negative_probe_states(w: Witness) -> list[ProbeState]:
    """One probe per outcome: the most negative eigendirection of W_i."""
    out = []
    for i, (vals, vecs) in enumerate(zip(w.eigenvalues, w.eigenvectors)):
        k = int(np.argmin(vals))
        out.append(ProbeState(i, k, float(vals[k]), vecs[:, k].copy()))
    return out


# ---------------------------------------------------------------------------
# general-m dual


def build_dual_m(p: Povm, m: int, wh_reduce: bool | None = None,
                 budget: int = 2**28):
    """Dual of the level-m hierarchy (objective-normalized equality form).

    Variables are m Hermitian blocks A^{i,alpha} of side d^m per outcome and a
    free complex D matrix per (transposition, tuple) pair; one LMI per outcome
    tuple.  With ``wh_reduce`` (auto-detected for Weyl-Heisenberg covariant
    POVMs) the A blocks of outcome i are phase-conjugated copies of outcome 0.
    """
    d, n = p.dim, p.n_outcomes
    ti = _TensorIndex(d, m)
    side = ti.side
    cost = n**m * side * side
    if cost > budget:
        raise core.InconclusiveSolveError(f"dual level {m} exceeds budget ({cost} entries)")

    wh_table = wh_covariant_permutation(p) if wh_reduce in (None, True) else None
    if wh_reduce is True and wh_table is None:
        raise ValueError("wh_reduce requested but the POVM is not WH-covariant")
    reduce_wh = wh_table is not None and wh_reduce is not False

    b = core.ProgramBuilder()
    n_a = 1 if reduce_wh else n
    a_blocks = [[b.add_free_block(f"A{i}_{alpha}", side) for alpha in range(m)]
                for i in range(n_a)]

    # WH phase bookkeeping: A^{i,alpha}[x,y] = w^{i2(sx-sy)} A^{0,alpha}[x-i1.., y-i1..]
    if reduce_wh:
        pairs = wh_indices(d)
        omega = np.exp(2j * np.pi / d)
        digit_sums = ti.digits.sum(axis=1)
        shift_maps = {}
        for i1 in range(d):
            shifted = (ti.digits - i1) % d
            shift_maps[i1] = shifted @ ti.strides

    def a_entry_term(e: core.Expr, i: int, alpha: int, x: int, y: int, coeff: complex):
        if not reduce_wh:
            e.add_entry(a_blocks[i][alpha], x, y, coeff)
            return
        i1, i2 = pairs[i]
        px, py = int(shift_maps[i1][x]), int(shift_maps[i1][y])
        phase = omega ** (i2 * int(digit_sums[x] - digit_sums[y]))
        e.add_entry(a_blocks[0][alpha], px, py, coeff * phase)

    transpositions = transposition_set(m)
    taus = {(a, bb): ti.swap_map(a, bb) for a, bb in transpositions}

    # under the WH tie the constraint family is orbit-symmetric: the matrix
    # inequality for a shifted tuple is a unitary conjugation of the original
    # once the D matrices are tied along, so representatives suffice
    tuples = list(itertools.product(range(n), repeat=m))
    if reduce_wh:
        seen = set()
        reps = []
        for tup in tuples:
            orbit = []
            for k1 in range(d):
                for k2 in range(d):
                    shifted = tuple(
                        pairs.index((((pairs[i][0] + k1) % d), ((pairs[i][1] + k2) % d)))
                        for i in tup)
                    orbit.append(shifted)
            key = min(orbit)
            if key not in seen:
                seen.add(key)
                reps.append(tup)
        tuples = reps

    lmi_names = []
    for tup in tuples:
        eligible = [(a, bb) for a, bb in transpositions if tup[a] != tup[bb]]
        d_grids = {}
        for (a, bb) in eligible:
            d_grids[(a, bb)] = b.add_free_complex_matrix(
                f"D{a}{bb}_" + "_".join(map(str, tup)), side // d, side // d)
        entries: dict[tuple[int, int], core.Expr] = {}
        for x in range(side):
            for y in range(x, side):
                e = core.Expr()
                for alpha in range(m):
                    a_entry_term(e, tup[alpha], alpha, x, y, 1.0)
                for (a, bb) in eligible:
                    tau = taus[(a, bb)]
                    # ((I^b x D^{not b}) V_(ab))[x,y]: digit b of x must equal
                    # digit b of tau(y); D acts on the remaining digits
                    ty = int(tau[y])
                    xd = ti.digits[x]
                    tyd = ti.digits[ty]
                    if xd[bb] == tyd[bb]:
                        xr = int(np.delete(xd, bb) @ ti.strides[1:])
                        yr = int(np.delete(tyd, bb) @ ti.strides[1:])
                        e += d_grids[(a, bb)][xr, yr]
                    # h.c. term: conj of entry (y, x)
                    tx = int(tau[x])
                    yd = ti.digits[y]
                    txd = ti.digits[tx]
                    if yd[bb] == txd[bb]:
                        xr = int(np.delete(yd, bb) @ ti.strides[1:])
                        yr = int(np.delete(txd, bb) @ ti.strides[1:])
                        e += _conj_expr(d_grids[(a, bb)][xr, yr])
                entries[(x, y)] = e
        name = "lmi:" + "_".join(map(str, tup))
        b.add_lmi(entries, side, name=name)
        lmi_names.append(name)

    # normalization (equality form) and objective
    norm = core.Expr()
    obj = core.Expr()
    for i, mat in enumerate(p.effects):
        tr_m = float(np.real(np.trace(mat)))
        for alpha in range(m):
            for x in range(side):
                e = core.Expr()
                a_entry_term(e, i, alpha, x, x, tr_m / d)
                norm += e
                obj += e
            # Tr(A^{i,alpha}_alpha M_i): partial trace onto subsystem alpha
            red = mk.digit_table((d,) * (m - 1))
            for x1 in range(d):
                for y1 in range(d):
                    if mat[y1, x1] == 0.0:
                        continue
                    for row in red:
                        xfull = int(np.insert(row, alpha, x1) @ ti.strides)
                        yfull = int(np.insert(row, alpha, y1) @ ti.strides)
                        e = core.Expr()
                        a_entry_term(e, i, alpha, xfull, yfull, -mat[y1, x1])
                        norm += e
    b.add_eq(norm, 1.0, name="normalization")
    b.set_objective(core.MINIMIZE, obj)
    return b.build(), a_blocks, reduce_wh


def solve_dual_m(p: Povm, m: int, wh_reduce: bool | None = None,
                 opts: core.SolverOptions | None = None) -> float:
    prog, _, _ = build_dual_m(p, m, wh_reduce)
    opts = opts or default_solver_options(prog)
    res = core.solve(prog, opts)
    if res.status != core.OPTIMAL:
        raise core.InconclusiveSolveError(f"dual level {m} solve ended {res.status}", res)
    return float(res.objective)


# ---------------------------------------------------------------------------
# analytic fixtures and JSON


def witness_to_json(w: Witness) -> dict:
    from .povm import _matrix_to_json, _vector_to_json

    return {
        "dim": w.dim,
        "operators": [_matrix_to_json(op) for op in w.operators],
        "eigensystem": [
            {"eigenvalues": [float(v) for v in vals],
             "eigenvectors": [_vector_to_json(vecs[:, k]) for k in range(vecs.shape[1])]}
            for vals, vecs in zip(w.eigenvalues, w.eigenvectors)
        ],
        "source_objective": w.source_objective,
    }


def witness_from_json(data: dict) -> Witness:
    from .povm import _matrix_from_json, _vector_from_json

    dim = int(data["dim"])
    ops = [_matrix_from_json(o, dim) for o in data["operators"]]
    w = Witness(dim, ops, source_objective=data.get("source_objective"))
    eig = data.get("eigensystem")
    if eig:
        w.eigenvalues = [np.array(item["eigenvalues"], dtype=float) for item in eig]
        w.eigenvectors = [
            np.stack([_vector_from_json(v) for v in item["eigenvectors"]], axis=1)
            for item in eig
        ]
    return w


def save_witness(w: Witness, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(witness_to_json(w), fh, indent=1)


def load_witness(path: str) -> Witness:
    with open(path) as fh:
        return witness_from_json(json.load(fh))


def dual_feasibility_of_witness(w: Witness, p: Povm,
                                opts: core.SolverOptions | None = None) -> bool:
    """Search for a dual certificate (A^i, D^{ij}) whose reductions match W_i.

    Feasibility of this SDP proves the witness inherits the dual guarantee
    (non-negativity on every simulable POVM).
    """
    d, n = p.dim, p.n_outcomes
    builder = core.ProgramBuilder()
    side = d * d
    a_refs = [builder.add_free_block(f"A{i}", side) for i in range(n)]
    d_refs = {}
    for i in range(n):
        for j in range(i + 1, n):
            d_refs[(i, j)] = builder.add_free_complex_matrix(f"D{i}_{j}", d, d)

    def d_entry(i, j, r, c):
        if i < j:
            return d_refs[(i, j)][r, c]
        return _conj_expr(d_refs[(j, i)][c, r])

    for i in range(n):
        for j in range(n):
            entries = {}
            for x in range(side):
                x1, x2 = divmod(x, d)
                for y in range(x, side):
                    y1, y2 = divmod(y, d)
                    e = core.Expr()
                    e.add_entry(a_refs[i], x, y, 1.0)
                    e.add_entry(a_refs[j], x2 * d + x1, y2 * d + y1, 1.0)
                    if i != j:
                        if x1 == y2:
                            e += d_entry(i, j, x2, y1)
                        if x2 == y1:
                            e += _conj_expr(d_entry(i, j, y2, x1))
                    entries[(x, y)] = e
            builder.add_lmi(entries, side, name=f"lmi:{i},{j}")
    for i in range(n):
        entries = {}
        for x1 in range(d):
            for y1 in range(x1, d):
                e = core.Expr()
                for w_ in range(d):
                    e.add_entry(a_refs[i], x1 * d + w_, y1 * d + w_, 1.0)
                entries[(x1, y1)] = e
        builder.add_matrix_eq(entries, w.operators[i], d, name=f"pin:{i}", hermitian=True)
    builder.set_objective(core.FEASIBILITY)
    prog3 = builder.build()
    opts = opts or core.SolverOptions(feas_tol=1e-9, gap_tol=1e-9)
    res = core.solve(prog3, opts)
    return res.status == core.OPTIMAL


def analytic_sic2_witness() -> Witness:
    """Closed-form optimal qubit-SIC witness with eigenvalues 1/sqrt(24) -+ 1/4."""
    from .povm import sic2_vectors

    lam_minus = 1 / np.sqrt(24) - 0.25
    lam_plus = 1 / np.sqrt(24) + 0.25
    ops = []
    for v in sic2_vectors():
        pr = mk.proj(v)
        ops.append(lam_minus * pr + lam_plus * (np.eye(2) - pr))
    return Witness(2, ops, source_objective=float(2 / np.sqrt(6)))


IC3_KAPPAS = (-0.02453, 0.2287, 0.2223)


def analytic_ic3_witness() -> Witness:
    """Witness for the real-space qutrit IC POVM built from its symmetry orbit.

    W_i weights the own direction Phi_i with the negative constant, the
    orthogonal partner within the same coordinate plane with the second, and
    the remaining basis direction with the third.
    """
    from .povm import real_ic3_vectors

    k0, k1, k2 = IC3_KAPPAS
    vecs = real_ic3_vectors()
    partner = {0: 1, 1: 0, 2: 3, 3: 2, 4: 5, 5: 4}
    excluded = {0: 2, 1: 2, 2: 1, 3: 1, 4: 0, 5: 0}
    ops = []
    for i in range(6):
        ops.append(k0 * mk.proj(vecs[i]) + k1 * mk.proj(vecs[partner[i]])
                   + k2 * mk.proj(mk.basis_state(3, excluded[i])))
    s1 = sum(float(np.real(np.trace(op))) / 2 / 3 for op in ops)
    return Witness(3, ops, source_objective=float(2 * s1))
