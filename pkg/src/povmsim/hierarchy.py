"""Primal SDP hierarchy bounding the critical visibility from above.

Level m couples one Hermitian block R_{i1..im} of side d^m per outcome tuple
through three constraint families: positivity, axis marginals matching the
depolarized effects, and vanishing swap contractions for every transposition
that moves the tuple.  The optimum of ``max t`` is an upper bound on the
critical visibility; levels are monotone non-increasing.

With ``use_index_symmetry`` (default for m >= 3) blocks related by permuting
tensor factors are identified, R_{pi(i)} = V_pi R_i V_pi†.  Group-averaging
any feasible point lands in this subspace without changing t, so the optimum
is unchanged while the variable count drops by up to m!.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from . import matkernel as mk
from . import sdpcore as core
from .povm import Povm, depolarize

DEFAULT_BUDGET = 2**28


class ResourceBudgetError(RuntimeError):
    pass


@dataclass
class HierarchyProblem:
    povm: Povm
    level: int = 2
    use_index_symmetry: bool | None = None  # None: on for level >= 3
    budget: int = DEFAULT_BUDGET
    solver: core.SolverOptions | None = None

    def __post_init__(self) -> None:
        if self.level < 2:
            raise ValueError("hierarchy level must be >= 2")
        cost = self.povm.n_outcomes**self.level * self.povm.dim ** (2 * self.level)
        if cost > self.budget:
            raise ResourceBudgetError(
                f"level {self.level} needs {cost} block entries > budget {self.budget}; "
                "lower the level or raise the budget explicitly")

    @property
    def symmetric(self) -> bool:
        if self.use_index_symmetry is None:
            return self.level >= 3
        return self.use_index_symmetry

    @property
    def real_effects(self) -> bool:
        """Real POVMs admit real solution blocks: conjugating any feasible
        point is again feasible, so the real average attains the optimum."""
        return all(float(np.max(np.abs(m.imag))) < 1e-12 for m in self.povm.effects)


@dataclass
class HierarchySolution:
    t_upper: float
    R: dict[tuple[int, ...], np.ndarray]
    level: int
    status: str
    diagnostics: dict = field(default_factory=dict)

    def marginal_residual(self, povm: Povm) -> float:
        """Largest Frobenius deviation of axis marginals from the depolarized
        effects, recomputed from the stored blocks only."""
        m = self.level
        d = povm.dim
        n = povm.n_outcomes
        noisy = depolarize(povm, min(max(self.t_upper, 0.0), 1.0))
        worst = 0.0
        for axis in range(m):
            for v in range(n):
                acc = np.zeros((d**m, d**m), dtype=complex)
                for tup, blk in self.R.items():
                    if tup[axis] == v:
                        acc += blk
                factors = [np.eye(d, dtype=complex)] * m
                factors[axis] = noisy.effects[v]
                worst = max(worst, mk.frob(acc - mk.kron_all(factors)))
        return worst


def transposition_set(m: int) -> list[tuple[int, int]]:
    """All m(m-1)/2 transpositions (a, b), a < b, 0-based subsystem positions."""
    if m < 2:
        raise ValueError("need m >= 2")
    return [(a, b) for a in range(m) for b in range(a + 1, m)]


# ---------------------------------------------------------------------------
# index machinery


class _TensorIndex:
    """Digit gymnastics for m qudits of local dimension d."""

    def __init__(self, d: int, m: int):
        self.d, self.m = d, m
        self.dims = (d,) * m
        self.side = d**m
        self.digits = mk.digit_table(self.dims)
        self.strides = mk.index_strides(self.dims)

    def gather_map(self, sigma) -> np.ndarray:
        """Index map P with (V_pi X V_pi†)[x, y] = X[P[x], P[y]].

        ``sigma`` is the stable argsort of the target tuple against its sorted
        representative (pi(t) = sigma[t]).
        """
        return self.digits[:, list(sigma)] @ self.strides

    def swap_map(self, a: int, b: int) -> np.ndarray:
        perm = list(range(self.m))
        perm[a], perm[b] = perm[b], perm[a]
        return self.gather_map(perm)

    def embed_map(self, pos: int) -> np.ndarray:
        """EMB[u, w]: full index from reduced index u with digit w at ``pos``."""
        d, m = self.d, self.m
        red = mk.digit_table((d,) * (m - 1))
        out = np.empty((d ** (m - 1), d), dtype=np.int64)
        for w in range(d):
            full = np.insert(red, pos, w, axis=1)
            out[:, w] = full @ self.strides
        return out


def _swap_constraint_entries(blk: core.BlockRef, ti: _TensorIndex, a: int, b: int,
                             avg_maps: list[np.ndarray] | None = None) -> dict:
    """Entries of Tr_b(V_(ab) R): output (u, v) on the m-1 remaining qudits.

    With ``avg_maps`` the block is replaced by its group average
    (1/|G|) sum_g V_g R V_g†, realized purely through index maps.
    """
    tau = ti.swap_map(a, b)
    emb = ti.embed_map(b)
    d = ti.d
    side = ti.side // d
    maps = avg_maps if avg_maps is not None else [np.arange(ti.side)]
    wgt = 1.0 / len(maps)
    entries: dict[tuple[int, int], core.Expr] = {}
    for u in range(side):
        for v in range(side):
            e = core.Expr()
            for w in range(d):
                p, q = int(tau[emb[u, w]]), int(emb[v, w])
                for g in maps:
                    e.add_entry(blk, int(g[p]), int(g[q]), wgt)
            entries[(u, v)] = e
    return entries


def _stabilizer_position_maps(rep: tuple[int, ...]) -> list[tuple[int, ...]]:
    """Position maps of all permutations fixing the sorted tuple ``rep``."""
    runs: list[list[int]] = []
    start = 0
    for k in range(1, len(rep) + 1):
        if k == len(rep) or rep[k] != rep[start]:
            runs.append(list(range(start, k)))
            start = k
    perms: list[tuple[int, ...]] = [tuple(range(len(rep)))]
    for run in runs:
        if len(run) == 1:
            continue
        new_perms = []
        for base in perms:
            for reorder in itertools.permutations(run):
                q = list(base)
                for pos, target in zip(run, reorder):
                    q[pos] = base[target]
                new_perms.append(tuple(q))
        perms = new_perms
    return sorted(set(perms))


def _marginal_matrices(povm: Povm, m: int, axis: int, v: int) -> tuple[np.ndarray, float]:
    """(K_v, c_v) with RHS = t*(K_v - c_v*I) + c_v*I for axis ``axis``."""
    d = povm.dim
    factors = [np.eye(d, dtype=complex)] * m
    factors[axis] = povm.effects[v]
    k = mk.kron_all(factors)
    c = float(np.real(np.trace(povm.effects[v]))) / d
    return k, c


def _add_marginal_constraint(b: core.ProgramBuilder, t: core.ScalarRef,
                             contributions: list, k_v: np.ndarray, c_v: float,
                             side: int, name: str) -> None:
    """sum of conjugated blocks == t*(K_v - c_v I) + c_v I, upper triangle."""
    entries: dict[tuple[int, int], core.Expr] = {}
    for x in range(side):
        for y in range(x, side):
            e = core.Expr()
            tc = -(k_v[x, y] - (c_v if x == y else 0.0))
            if tc != 0.0:
                e.add(t.key, tc)
            entries[(x, y)] = e
    for blk, pmaps, wgt in contributions:
        if pmaps is None:
            for x in range(side):
                for y in range(x, side):
                    entries[(x, y)].add_entry(blk, x, y, wgt)
        else:
            for pmap in pmaps:
                for x in range(side):
                    px = int(pmap[x])
                    for y in range(x, side):
                        entries[(x, y)].add_entry(blk, px, int(pmap[y]), wgt)
    rhs = c_v * np.eye(side)
    b.add_matrix_eq(entries, rhs, side, name=name, hermitian=True)


# ---------------------------------------------------------------------------
# program assembly


@dataclass
class _BuildMeta:
    blocks: dict[tuple[int, ...], core.BlockRef]
    reconstruct: dict[tuple[int, ...], tuple[tuple[int, ...], tuple[int, ...] | None]]
    tindex: _TensorIndex
    stab_maps: dict[tuple[int, ...], list[np.ndarray]] | None = None


def build_primal(hp: HierarchyProblem) -> tuple[core.ConicProgram, _BuildMeta]:
    povm, m = hp.povm, hp.level
    n, d = povm.n_outcomes, povm.dim
    ti = _TensorIndex(d, m)
    real_blocks = hp.real_effects
    b = core.ProgramBuilder()
    t = b.add_scalar("t")
    b.add_ineq(core.Expr({t.key: 1.0}), 1.0, name="t<=1")
    b.add_ineq(core.Expr({t.key: -1.0}), 0.0, name="t>=0")

    blocks: dict[tuple[int, ...], core.BlockRef] = {}
    reconstruct: dict[tuple, tuple] = {}

    if hp.symmetric:
        # Blocks related by permuting tensor factors are identified; instead
        # of equality rows tying each block to its stabilizer conjugates, all
        # constraints reference the group-averaged block (an index-map
        # rewrite), which leaves the optimum unchanged and keeps the row count
        # down.  The average is applied once more on reconstruction.
        reps = list(itertools.combinations_with_replacement(range(n), m))
        stab_maps: dict[tuple[int, ...], list[np.ndarray]] = {}
        for rep in reps:
            blocks[rep] = b.add_psd_block("R_" + "_".join(map(str, rep)), ti.side,
                                          hermitian=not real_blocks)
            perms = _stabilizer_position_maps(rep)
            stab_maps[rep] = [ti.gather_map(q) for q in perms]
        coset_cache: dict[tuple, list[np.ndarray]] = {}
        for tup in itertools.product(range(n), repeat=m):
            rep = tuple(sorted(tup))
            sigma = tuple(int(s) for s in np.argsort(np.asarray(tup), kind="stable"))
            reconstruct[tup] = (rep, None if tup == rep else sigma)
            if tup not in coset_cache:
                qs = [tuple(sigma[g[tt]] for tt in range(m))
                      for g in _stabilizer_position_maps(rep)]
                coset_cache[tup] = [ti.gather_map(q) for q in sorted(set(qs))]
        # one axis of marginals represents all of them
        for v in range(n):
            contributions = []
            for rest in itertools.product(range(n), repeat=m - 1):
                tup = (v,) + rest
                rep, _ = reconstruct[tup]
                maps = coset_cache[tup]
                contributions.append((blocks[rep], maps, 1.0 / len(maps)))
            k_v, c_v = _marginal_matrices(povm, m, 0, v)
            _add_marginal_constraint(b, t, contributions, k_v, c_v, ti.side, f"marg:{v}")
        # swap contractions: one per distinct outcome pair in the representative
        for rep in reps:
            seen_pairs = set()
            for a in range(m):
                for bb in range(a + 1, m):
                    if rep[a] == rep[bb] or (rep[a], rep[bb]) in seen_pairs:
                        continue
                    seen_pairs.add((rep[a], rep[bb]))
                    entries = _swap_constraint_entries(blocks[rep], ti, a, bb,
                                                       avg_maps=stab_maps[rep])
                    b.add_matrix_eq(entries, None, ti.side // d,
                                    name=f"swap:{rep}:{a}{bb}", hermitian=False)
    else:
        tuples = list(itertools.product(range(n), repeat=m))
        for tup in tuples:
            blocks[tup] = b.add_psd_block("R_" + "_".join(map(str, tup)), ti.side,
                                          hermitian=not real_blocks)
            reconstruct[tup] = (tup, None)
        for axis in range(m):
            for v in range(n):
                contributions = [(blocks[tup], None, 1.0) for tup in tuples if tup[axis] == v]
                k_v, c_v = _marginal_matrices(povm, m, axis, v)
                _add_marginal_constraint(b, t, contributions, k_v, c_v, ti.side,
                                         f"marg:{axis}:{v}")
        for tup in tuples:
            for a, bb in transposition_set(m):
                if tup[a] == tup[bb]:
                    continue
                entries = _swap_constraint_entries(blocks[tup], ti, a, bb)
                b.add_matrix_eq(entries, None, ti.side // d,
                                name=f"swap:{tup}:{a}{bb}", hermitian=False)

    b.set_objective(core.MAXIMIZE, core.Expr({t.key: 1.0}))
    meta = _BuildMeta(blocks, reconstruct, ti,
                      stab_maps=stab_maps if hp.symmetric else None)
    return b.build(), meta


def default_solver_options(prog: core.ConicProgram,
                           accurate_tol: float = 2e-7,
                           scs_tol: float = 2e-6,
                           max_iters: int = 200_000,
                           clarabel_limit: float = 1.2e6,
                           verbose: bool = False) -> core.SolverOptions:
    """Backend and tolerance choice for a lowered program.

    The interior-point backend wins on small programs and whenever
    high-accuracy feasibility answers are needed; above ``clarabel_limit``
    (sum of squared svec cone dimensions) its dense per-cone scalings are no
    longer competitive and the first-order backend takes over.
    """
    predicted = "clarabel" if prog.clarabel_cost() <= clarabel_limit else "scs"
    tol = accurate_tol if predicted == "clarabel" else scs_tol
    return core.SolverOptions(feas_tol=tol, gap_tol=tol, max_iters=max_iters,
                              backend="auto", verbose=verbose,
                              clarabel_cost_limit=clarabel_limit)


def solve_visibility(hp: HierarchyProblem) -> HierarchySolution:
    prog, meta = build_primal(hp)
    # real blocks sidestep the doubled-spectrum degeneracy of the complex
    # embedding, so the interior-point backend stays reliable much longer
    limit = 2e7 if hp.real_effects else 1.2e6
    opts = hp.solver or default_solver_options(prog, clarabel_limit=limit)
    res = core.solve(prog, opts)
    if res.status != core.OPTIMAL:
        raise core.InconclusiveSolveError(
            f"hierarchy level {hp.level} solve ended {res.status}", res)
    t_upper = res.scalar_values["t"]
    averaged: dict[tuple[int, ...], np.ndarray] = {}
    for rep, blk in meta.blocks.items():
        base = res.block_values[blk.name]
        if meta.stab_maps is not None and len(meta.stab_maps[rep]) > 1:
            base = sum(base[np.ix_(g, g)] for g in meta.stab_maps[rep]) \
                / len(meta.stab_maps[rep])
        averaged[rep] = base
    r_blocks: dict[tuple[int, ...], np.ndarray] = {}
    gather_cache: dict[tuple, np.ndarray] = {}
    for tup, (rep, sigma) in meta.reconstruct.items():
        base = averaged[rep]
        if sigma is None:
            r_blocks[tup] = base
        else:
            if sigma not in gather_cache:
                gather_cache[sigma] = meta.tindex.gather_map(sigma)
            p = gather_cache[sigma]
            r_blocks[tup] = base[np.ix_(p, p)]
    sol = HierarchySolution(t_upper, r_blocks, hp.level, res.status,
                            diagnostics={"solver": res.backend,
                                         "residuals": res.residuals,
                                         "objective": res.objective,
                                         "symmetric": hp.symmetric})
    return sol


def family_sweep(thetas, phis, level: int = 2,
                 solver: core.SolverOptions | None = None) -> list[dict]:
    """Visibility bounds over the two-parameter qutrit family; CSV-ready rows."""
    from .povm import catalog

    rows = []
    for theta in thetas:
        for phi in phis:
            row = {"theta": float(theta), "phi": float(phi)}
            try:
                hp = HierarchyProblem(catalog("family3", theta=theta, phi=phi),
                                      level=level, solver=solver)
                sol = solve_visibility(hp)
                row["t_upper"] = sol.t_upper
                row["status"] = "ok"
            except (core.InconclusiveSolveError, ResourceBudgetError) as exc:
                row["t_upper"] = float("nan")
                row["status"] = f"failed: {exc}"
            rows.append(row)
    return rows
