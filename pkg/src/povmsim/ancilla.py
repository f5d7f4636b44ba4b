"""Upper bounds on critical visibility with a bounded ancilla at hand.

Projective simulations on the joint system-ancilla space are partitioned by
the tuple of projector ranks across outcomes.  One PSD block per (rank tuple,
outcome) plus its trace and completeness ties yields an SDP whose optimum
bounds the ancilla-assisted visibility from above; with an ancilla at least
as large as the system the bound reaches 1.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from . import matkernel as mk
from . import sdpcore as core
from .hierarchy import default_solver_options
from .povm import Povm, depolarize

DEFAULT_TUPLE_BUDGET = 2**28


class TupleBudgetError(RuntimeError):
    pass


@dataclass(frozen=True)
class RankTuple:
    ranks: tuple[int, ...]

    def __post_init__(self) -> None:
        if any(r < 0 for r in self.ranks):
            raise ValueError("ranks must be non-negative")


def enumerate_rank_tuples(total: int, n: int, budget: int = 10**7) -> list[RankTuple]:
    """All weak compositions of ``total`` into n parts, lexicographic order."""
    if total < 1 or n < 2:
        raise ValueError("need total >= 1 and n >= 2")
    count = math.comb(total + n - 1, n - 1)
    if count > budget:
        raise TupleBudgetError(f"{count} rank tuples exceed the budget {budget}")
    out = []
    for cuts in itertools.combinations(range(total + n - 1), n - 1):
        ranks = []
        prev = -1
        for c in cuts:
            ranks.append(c - prev - 1)
            prev = c
        ranks.append(total + n - 2 - prev)
        out.append(RankTuple(tuple(ranks)))
    return out


@dataclass
class AncillaSolution:
    t_upper: float
    ancilla_dim: int
    tuple_count: int
    weights: dict[tuple[int, ...], float]
    f_blocks: dict[tuple[tuple[int, ...], int], np.ndarray] = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    def support(self, threshold: float = 1e-7) -> list[tuple[int, ...]]:
        return [r for r, w in self.weights.items() if w > threshold]


def build_ancilla_sdp(p: Povm, d_a: int, tuples: list[RankTuple],
                      budget: int = DEFAULT_TUPLE_BUDGET):
    """max t over blocks F_i^r >= 0 with completeness, rank-trace and
    reduction-to-depolarized-effect constraints."""
    d, n = p.dim, p.n_outcomes
    side = d * d_a
    if len(tuples) * n * side * side > budget:
        raise TupleBudgetError("ancilla SDP exceeds the resource budget")

    # real POVMs admit real blocks (conjugating a feasible point is feasible)
    real_blocks = all(float(np.max(np.abs(m.imag))) < 1e-12 for m in p.effects)
    b = core.ProgramBuilder()
    t = b.add_scalar("t")
    b.add_ineq(core.Expr({t.key: 1.0}), 1.0, name="t<=1")
    b.add_ineq(core.Expr({t.key: -1.0}), 0.0, name="t>=0")
    weights = {}
    blocks = {}
    for k, rt in enumerate(tuples):
        weights[rt.ranks] = b.add_scalar(f"p_{k}")
        for i in range(n):
            blocks[(rt.ranks, i)] = b.add_psd_block(f"F_{k}_{i}", side,
                                                    hermitian=not real_blocks)

    # completeness per tuple: sum_i F_i^r = p_r I
    for k, rt in enumerate(tuples):
        entries = {}
        for x in range(side):
            for y in range(x, side):
                e = core.Expr()
                for i in range(n):
                    e.add_entry(blocks[(rt.ranks, i)], x, y, 1.0)
                if x == y:
                    e.add(weights[rt.ranks].key, -1.0)
                entries[(x, y)] = e
        b.add_matrix_eq(entries, None, side, name=f"complete:{k}", hermitian=True)

    # rank trace per block: Tr F_i^r = p_r r_i
    for k, rt in enumerate(tuples):
        for i in range(n):
            e = core.trace_expr(blocks[(rt.ranks, i)])
            e.add(weights[rt.ranks].key, -float(rt.ranks[i]))
            b.add_eq(e, 0.0, name=f"ranktrace:{k}:{i}")

    # visibility: the ancilla-0 corner of sum_r F_i^r equals the depolarized
    # effect (system first, ancilla second: joint index s*d_a + a)
    for i in range(n):
        entries = {}
        m = p.effects[i]
        c = float(np.real(np.trace(m))) / d
        for s1 in range(d):
            for s2 in range(s1, d):
                e = core.Expr()
                for rt in tuples:
                    e.add_entry(blocks[(rt.ranks, i)], s1 * d_a, s2 * d_a, 1.0)
                tc = -(m[s1, s2] - (c if s1 == s2 else 0.0))
                if tc != 0.0:
                    e.add(t.key, tc)
                entries[(s1, s2)] = e
        rhs = c * np.eye(d)
        b.add_matrix_eq(entries, rhs, d, name=f"visibility:{i}", hermitian=True)

    b.set_objective(core.MAXIMIZE, core.Expr({t.key: 1.0}))
    return b.build(), blocks, weights


def solve_ancilla_visibility(p: Povm, d_a: int,
                             opts: core.SolverOptions | None = None,
                             keep_blocks: bool = False,
                             prune: bool = False,
                             budget: int = DEFAULT_TUPLE_BUDGET) -> AncillaSolution:
    """Upper bound on the critical visibility with a d_a-dimensional ancilla.

    ``prune`` enables a two-pass heuristic (drop tuples whose weight vanishes
    in a low-accuracy first solve, then re-solve); the output is labeled
    accordingly since pruning trades completeness for speed.
    """
    if d_a < 1:
        raise ValueError("ancilla dimension must be >= 1")
    tuples = enumerate_rank_tuples(d_a * p.dim, p.n_outcomes)
    pruned = False
    if prune:
        rough = _solve(p, d_a, tuples, core.SolverOptions(
            feas_tol=1e-4, gap_tol=1e-4, backend="scs", max_iters=5000),
            keep_blocks=False)
        keep = set(rough.support(1e-5))
        if 0 < len(keep) < len(tuples):
            tuples = [rt for rt in tuples if rt.ranks in keep]
            pruned = True
    sol = _solve(p, d_a, tuples, opts, keep_blocks=keep_blocks, budget=budget)
    sol.diagnostics["pruned"] = pruned
    return sol


def _solve(p: Povm, d_a: int, tuples: list[RankTuple],
           opts: core.SolverOptions | None, keep_blocks: bool = False,
           budget: int = DEFAULT_TUPLE_BUDGET) -> AncillaSolution:
    prog, blocks, weights = build_ancilla_sdp(p, d_a, tuples, budget=budget)
    opts = opts or default_solver_options(prog, scs_tol=1e-6)
    res = core.solve(prog, opts)
    if res.status != core.OPTIMAL:
        raise core.InconclusiveSolveError(f"ancilla solve ended {res.status}", res)
    w = {ranks: res.scalar_values[ref.name] for ranks, ref in weights.items()}
    f_blocks = {}
    if keep_blocks:
        f_blocks = {key: res.block_values[ref.name] for key, ref in blocks.items()}
    return AncillaSolution(
        t_upper=float(res.scalar_values["t"]),
        ancilla_dim=d_a,
        tuple_count=len(tuples),
        weights=w,
        f_blocks=f_blocks,
        diagnostics={"solver": res.backend, "residuals": res.residuals,
                     "objective": res.objective},
    )


def audit_solution(sol: AncillaSolution, p: Povm, tol: float = 1e-6) -> dict[str, float]:
    """Independent residual check of a solution carrying its blocks."""
    if not sol.f_blocks:
        raise ValueError("solution was produced without keep_blocks=True")
    d, d_a = p.dim, sol.ancilla_dim
    side = d * d_a
    worst_complete = 0.0
    worst_trace = 0.0
    min_eig = 0.0
    noisy = depolarize(p, min(max(sol.t_upper, 0.0), 1.0))
    reduction = [np.zeros((d, d), dtype=complex) for _ in range(p.n_outcomes)]
    for (ranks, i), f in sol.f_blocks.items():
        w = sol.weights[ranks]
        min_eig = min(min_eig, mk.min_eigval(f))
        worst_trace = max(worst_trace, abs(float(np.real(np.trace(f))) - w * ranks[i]))
        reduction[i] += f.reshape(d, d_a, d, d_a)[:, 0, :, 0]
    for ranks in sol.weights:
        total = sum(sol.f_blocks[(ranks, i)] for i in range(p.n_outcomes))
        worst_complete = max(worst_complete,
                             mk.frob(total - sol.weights[ranks] * np.eye(side)))
    worst_vis = max(mk.frob(reduction[i] - noisy.effects[i]) for i in range(p.n_outcomes))
    return {"min_block_eig": min_eig, "trace_residual": worst_trace,
            "completeness_residual": worst_complete, "visibility_residual": worst_vis}
