"""Conic-program model shared by every SDP in the package.

A program consists of PSD (or free) matrix blocks, free scalars, sparse linear
equalities/inequalities over their entries and a linear objective.  Hermitian
blocks are lowered at solve time to the real symmetric embedding
[[Re,-Im],[Im,Re]] of matkernel.real_embedding, and matrix inequalities become
PSD-cone rows on the embedded expression, so the backend contract is the plain
real cone form  min c'x  s.t.  b - Ax in {0}^ne x R+^ni x PSD-cones.

Two interchangeable backends ship: Clarabel (interior point, used for small
and mid-size programs where its dense per-cone scalings fit in memory) and
SCS (first order, used for the large hierarchy/certification instances).  The
``POVMSIM_SOLVER`` environment variable overrides the automatic choice.
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.sparse as sp

# ---------------------------------------------------------------------------
# statuses / options


OPTIMAL = "OPTIMAL"
INFEASIBLE = "INFEASIBLE"
UNBOUNDED = "UNBOUNDED"
INACCURATE = "INACCURATE"
FAILED = "FAILED"

MINIMIZE = "min"
MAXIMIZE = "max"
FEASIBILITY = "feasibility"

_ENV_BACKEND = "POVMSIM_SOLVER"

# above this sum of squared svec dimensions the dense per-cone scalings of an
# interior-point backend stop fitting comfortably in memory
_CLARABEL_COST_LIMIT = 2.5e7


class InconclusiveSolveError(RuntimeError):
    """Raised when a solve did not produce a usable optimum."""

    def __init__(self, message: str, result: "SolveResult | None" = None):
        super().__init__(message)
        self.result = result


@dataclass
class SolverOptions:
    feas_tol: float = 1e-8
    gap_tol: float = 1e-8
    max_iters: int = 200_000
    backend: str = "auto"  # auto | clarabel | scs
    verbose: bool = False
    clarabel_cost_limit: float | None = None  # auto-mode crossover override
    scs_settings: dict | None = None  # extra first-order knobs (alpha, scale, ...)

    def __post_init__(self) -> None:
        if self.feas_tol <= 0 or self.gap_tol <= 0:
            raise ValueError("tolerances must be positive")


# ---------------------------------------------------------------------------
# symbolic layer
#
# Scalar parameters are keyed by their integer index.  A complex matrix entry
# X[r,c] of block bi is keyed by (bi, r, c, flag) with r <= c; flag=1 means the
# term multiplies conj(X[r,c]) (i.e. the caller referenced the lower triangle).


@dataclass(frozen=True)
class ScalarRef:
    name: str
    key: int


@dataclass(frozen=True)
class BlockRef:
    name: str
    index: int
    side: int
    hermitian: bool
    psd: bool

    def entry(self, r: int, c: int) -> tuple:
        """Key for the complex entry X[r,c] (conjugation handled implicitly)."""
        if r <= c:
            return (self.index, r, c, 0)
        return (self.index, c, r, 1)


class Expr:
    """Sparse complex-linear expression over program parameters."""

    __slots__ = ("terms", "const")

    def __init__(self, terms: dict | None = None, const: complex = 0.0):
        self.terms = {} if terms is None else terms
        self.const = complex(const)

    def add(self, key, coeff: complex) -> None:
        t = self.terms
        if key in t:
            t[key] += coeff
        else:
            t[key] = complex(coeff)

    def add_entry(self, blk: BlockRef, r: int, c: int, coeff: complex) -> None:
        if r <= c:
            key = (blk.index, r, c, 0)
        else:
            key = (blk.index, c, r, 1)
        self.add(key, coeff)

    def add_scalar(self, ref: ScalarRef, coeff: complex) -> None:
        self.add(ref.key, coeff)

    def __iadd__(self, other: "Expr") -> "Expr":
        for k, v in other.terms.items():
            self.add(k, v)
        self.const += other.const
        return self

    def scaled(self, factor: complex) -> "Expr":
        return Expr({k: v * factor for k, v in self.terms.items()}, self.const * factor)

    @staticmethod
    def of(ref, coeff: complex = 1.0, const: complex = 0.0) -> "Expr":
        e = Expr(const=const)
        if isinstance(ref, ScalarRef):
            e.add(ref.key, coeff)
        else:
            raise TypeError("Expr.of expects a ScalarRef")
        return e


def block_entry_expr(blk: BlockRef, r: int, c: int, coeff: complex = 1.0) -> Expr:
    e = Expr()
    e.add_entry(blk, r, c, coeff)
    return e


def trace_expr(blk: BlockRef, weight: complex = 1.0) -> Expr:
    e = Expr()
    for r in range(blk.side):
        e.add((blk.index, r, r, 0), weight)
    return e


def weighted_trace_expr(blk: BlockRef, w: np.ndarray) -> Expr:
    """Expression for Tr(w · X) with a constant matrix w."""
    e = Expr()
    s = blk.side
    for r in range(s):
        for c in range(s):
            v = w[c, r]
            if v != 0.0:
                e.add_entry(blk, r, c, v)
    return e


# ---------------------------------------------------------------------------
# program model


@dataclass
class _ConstraintGroup:
    name: str
    kind: str  # "eq" | "ineq"
    start: int
    end: int


@dataclass
class _LmiGroup:
    name: str
    side: int
    entries: dict  # (r,c) r<=c -> Expr
    real: bool = False  # entries real-valued: skip the complex embedding


class ProgramBuilder:
    """Incremental, deterministic builder for ConicProgram.

    Constraint rows are stored in insertion order; identical inputs yield an
    identical program.
    """

    def __init__(self) -> None:
        self._scalars: list[str] = []
        self._blocks: list[BlockRef] = []
        self._eq_rows: list[tuple[list[tuple], float, str]] = []  # (terms, rhs, part)
        self._ineq_rows: list[tuple[list[tuple], float]] = []  # a.x <= rhs
        self._groups: list[_ConstraintGroup] = []
        self._lmis: list[_LmiGroup] = []
        self._objective: Expr | None = None
        self._sense: str = FEASIBILITY
        self._names: set[str] = set()

    # -- variables ---------------------------------------------------------

    def add_scalar(self, name: str) -> ScalarRef:
        self._check_name(name)
        ref = ScalarRef(name, len(self._scalars))
        self._scalars.append(name)
        return ref

    def add_psd_block(self, name: str, side: int, hermitian: bool = True) -> BlockRef:
        return self._add_block(name, side, hermitian, psd=True)

    def add_free_block(self, name: str, side: int, hermitian: bool = True) -> BlockRef:
        """Hermitian (or real symmetric) matrix variable without the PSD cone."""
        return self._add_block(name, side, hermitian, psd=False)

    def add_free_complex_matrix(self, name: str, rows: int, cols: int) -> np.ndarray:
        """General complex matrix variable, returned as an array of Exprs."""
        out = np.empty((rows, cols), dtype=object)
        for r in range(rows):
            for c in range(cols):
                re = self.add_scalar(f"{name}[{r},{c}].re")
                im = self.add_scalar(f"{name}[{r},{c}].im")
                e = Expr()
                e.add(re.key, 1.0)
                e.add(im.key, 1.0j)
                out[r, c] = e
        return out

    def _add_block(self, name: str, side: int, hermitian: bool, psd: bool) -> BlockRef:
        self._check_name(name)
        if side < 1:
            raise ValueError("block side must be >= 1")
        ref = BlockRef(name, len(self._blocks), int(side), bool(hermitian), bool(psd))
        self._blocks.append(ref)
        self._names.add(name)
        return ref

    def _check_name(self, name: str) -> None:
        if name in self._names:
            raise ValueError(f"duplicate variable/constraint name {name!r}")
        self._names.add(name)

    # -- constraints ---------------------------------------------------------

    def add_eq(self, expr: Expr, rhs: complex = 0.0, name: str = "") -> None:
        """Complex-valued equality expr == rhs (split into real rows)."""
        start = len(self._eq_rows)
        self._append_eq_rows(expr, rhs)
        self._groups.append(_ConstraintGroup(name or f"eq{start}", "eq", start, len(self._eq_rows)))

    def add_matrix_eq(self, entries: dict, rhs: np.ndarray | None, side: int,
                      name: str = "", hermitian: bool = False) -> None:
        """Entrywise equality of a matrix expression against constant rhs.

        ``entries`` maps (r,c) to Expr.  With hermitian=True only r<=c entries
        are consumed and the imaginary part is dropped on the diagonal.
        """
        start = len(self._eq_rows)
        for r in range(side):
            cols = range(r, side) if hermitian else range(side)
            for c in cols:
                e = entries.get((r, c))
                if e is None:
                    e = Expr()
                b = 0.0 if rhs is None else complex(rhs[r, c])
                self._append_eq_rows(e, b, skip_imag=(hermitian and r == c))
        self._groups.append(_ConstraintGroup(name or f"eq{start}", "eq", start, len(self._eq_rows)))

    def add_ineq(self, expr: Expr, ub: float, name: str = "") -> None:
        """Real-valued inequality expr <= ub."""
        start = len(self._ineq_rows)
        terms, const = _real_part_terms(expr)
        self._ineq_rows.append((terms, float(ub) - const))
        self._groups.append(_ConstraintGroup(name or f"ineq{start}", "ineq", start, len(self._ineq_rows)))

    def add_lmi(self, entries: dict, side: int, name: str = "",
                real: bool = False) -> None:
        """Matrix inequality  sum(entries) >= 0  for a Hermitian expression.

        ``entries`` maps (r,c) with r<=c to the Expr of that entry; the lower
        triangle is implied by conjugate symmetry.  ``real`` marks expressions
        that are identically real-valued, which keeps the cone at its native
        side instead of the doubled embedding.
        """
        self._lmis.append(_LmiGroup(name or f"lmi{len(self._lmis)}", side, entries, real))

    def set_objective(self, sense: str, expr: Expr | None = None) -> None:
        if sense not in (MINIMIZE, MAXIMIZE, FEASIBILITY):
            raise ValueError(f"unknown sense {sense!r}")
        self._sense = sense
        self._objective = expr

    # -- assembly ------------------------------------------------------------

    def _append_eq_rows(self, expr: Expr, rhs: complex, skip_imag: bool = False) -> None:
        re_terms, im_terms, re_c, im_c = _split_terms(expr)
        self._eq_rows.append((re_terms, float(np.real(rhs)) - re_c, "re"))
        if not skip_imag:
            if im_terms or abs(float(np.imag(rhs)) - im_c) > 1e-14:
                self._eq_rows.append((im_terms, float(np.imag(rhs)) - im_c, "im"))

    def build(self) -> "ConicProgram":
        return ConicProgram(
            scalars=tuple(self._scalars),
            blocks=tuple(self._blocks),
            eq_rows=self._eq_rows,
            ineq_rows=self._ineq_rows,
            groups=tuple(self._groups),
            lmis=tuple(self._lmis),
            sense=self._sense,
            objective=self._objective,
        )


def assemble(*callbacks: Callable[[ProgramBuilder], None]) -> "ConicProgram":
    """Run builder callbacks in order and return the assembled program."""
    b = ProgramBuilder()
    for cb in callbacks:
        cb(b)
    return b.build()


# -- term lowering ----------------------------------------------------------
#
# Parameter layout: scalars first, then per block its real degrees of freedom
# (diagonal, then row-major upper-triangle (re, im) pairs for Hermitian blocks
# or single entries for real symmetric blocks).


def _block_param_count(blk: BlockRef) -> int:
    s = blk.side
    return s * s if blk.hermitian else s * (s + 1) // 2


class _Layout:
    def __init__(self, scalars: Sequence[str], blocks: Sequence[BlockRef]):
        self.n_scalars = len(scalars)
        self.block_offsets = []
        off = self.n_scalars
        for blk in blocks:
            self.block_offsets.append(off)
            off += _block_param_count(blk)
        self.n_params = off
        self.blocks = blocks

    def diag(self, bi: int, r: int) -> int:
        return self.block_offsets[bi] + r

    def offdiag(self, bi: int, r: int, c: int) -> tuple[int, int]:
        """(re_index, im_index) of the upper-triangle entry r < c."""
        blk = self.blocks[bi]
        s = blk.side
        pos = r * s - r * (r + 1) // 2 + (c - r - 1)
        base = self.block_offsets[bi]
        if blk.hermitian:
            return base + s + 2 * pos, base + s + 2 * pos + 1
        return base + s + pos, -1


def _split_terms(expr: Expr) -> tuple[list[tuple], list[tuple], float, float]:
    """Split a complex Expr into real/imag coefficient term lists.

    Terms stay keyed symbolically; the layout resolves them to parameter
    indices at lowering time.  Returns (re_terms, im_terms, re_const, im_const)
    where each term list holds (key, re_coeff, im_coeff).
    """
    re_terms: list[tuple] = []
    im_terms: list[tuple] = []
    for key, z in expr.terms.items():
        zr, zi = float(np.real(z)), float(np.imag(z))
        if zr == 0.0 and zi == 0.0:
            continue
        re_terms.append((key, zr, zi))
        im_terms.append((key, zr, zi))
    return re_terms, im_terms, float(np.real(expr.const)), float(np.imag(expr.const))


def _real_part_terms(expr: Expr) -> tuple[list[tuple], float]:
    terms, _, re_c, _ = _split_terms(expr)
    return terms, re_c


class _RowAccumulator:
    """COO triplet accumulator for the lowered constraint matrix."""

    def __init__(self, layout: _Layout):
        self.layout = layout
        self.rows: list[int] = []
        self.cols: list[int] = []
        self.vals: list[float] = []
        self.b: list[float] = []

    def _emit(self, row: int, key, zr: float, zi: float, part: str, scale: float) -> None:
        lay = self.layout
        if isinstance(key, int):  # scalar parameter
            coeff = zr if part == "re" else zi
            if coeff != 0.0:
                self.rows.append(row)
                self.cols.append(key)
                self.vals.append(coeff * scale)
            return
        bi, r, c, flag = key
        sign = -1.0 if flag else 1.0  # conj flips the imaginary part
        if r == c:
            u = lay.diag(bi, r)
            coeff = zr if part == "re" else zi
            if coeff != 0.0:
                self.rows.append(row)
                self.cols.append(u)
                self.vals.append(coeff * scale)
            return
        u, v = lay.offdiag(bi, r, c)
        blk = lay.blocks[bi]
        if part == "re":
            cu, cv = zr, -zi * sign
        else:
            cu, cv = zi, zr * sign
        if cu != 0.0:
            self.rows.append(row)
            self.cols.append(u)
            self.vals.append(cu * scale)
        if blk.hermitian and cv != 0.0:
            self.rows.append(row)
            self.cols.append(v)
            self.vals.append(cv * scale)

    def add_row(self, terms: list[tuple], rhs: float, part: str = "re",
                scale: float = 1.0, negate: bool = False) -> int:
        row = len(self.b)
        s = -scale if negate else scale
        for key, zr, zi in terms:
            self._emit(row, key, zr, zi, part, s)
        self.b.append(rhs)
        return row

    def add_param_row(self, param: int, rhs: float, coeff: float) -> int:
        row = len(self.b)
        if coeff != 0.0:
            self.rows.append(row)
            self.cols.append(param)
            self.vals.append(coeff)
        self.b.append(rhs)
        return row

    def add_empty_row(self, rhs: float = 0.0) -> int:
        row = len(self.b)
        self.b.append(rhs)
        return row


@dataclass
class SolveResult:
    status: str
    objective: float | None
    block_values: dict[str, np.ndarray]
    scalar_values: dict[str, float]
    duals: dict[str, np.ndarray]
    residuals: dict[str, float]
    backend: str
    info: dict = field(default_factory=dict)

    def block(self, name: str) -> np.ndarray:
        return self.block_values[name]

    def scalar(self, name: str) -> float:
        return self.scalar_values[name]

    def scalar_by_index(self, key: int) -> float:
        return self.scalar_values[list(self.scalar_values)[key]]

    def eval_expr(self, e) -> complex:
        """Evaluate an Expr against this solution."""
        val = e.const
        for key, z in e.terms.items():
            if isinstance(key, int):
                val += z * self.scalar_by_index(key)
            else:
                bi_name = key  # (block index, r, c, flag)
                bi, r, c, flag = key
                m = list(self.block_values.values())[bi]
                v = m[r, c] if not flag else np.conj(m[r, c])
                val += z * v
        return val


class ConicProgram:
    """Frozen conic program; solve with :func:`solve`."""

    def __init__(self, scalars, blocks, eq_rows, ineq_rows, groups, lmis, sense, objective):
        self.scalars = scalars
        self.blocks = blocks
        self.eq_rows = eq_rows
        self.ineq_rows = ineq_rows
        self.groups = groups
        self.lmis = lmis
        self.sense = sense
        self.objective = objective
        self.layout = _Layout(scalars, blocks)

    # -- lowering ---------------------------------------------------------

    def _psd_cone_sides(self) -> list[int]:
        sides = []
        for blk in self.blocks:
            if blk.psd:
                sides.append(2 * blk.side if blk.hermitian else blk.side)
        for lmi in self.lmis:
            sides.append(lmi.side if lmi.real else 2 * lmi.side)
        return sides

    def clarabel_cost(self) -> float:
        return float(sum((s * (s + 1) // 2) ** 2 for s in self._psd_cone_sides()))

    def _triangle(self, side: int, upper: bool):
        if upper:
            for j in range(side):
                for i in range(j + 1):
                    yield i, j
        else:
            for j in range(side):
                for i in range(j, side):
                    yield i, j

    def _emit_block_cone(self, acc: _RowAccumulator, blk: BlockRef, upper: bool) -> None:
        lay = self.layout
        s = blk.side
        rt2 = np.sqrt(2.0)
        if not blk.hermitian:
            for i, j in self._triangle(s, upper):
                scale = 1.0 if i == j else rt2
                u, _ = (lay.diag(blk.index, i), None) if i == j else lay.offdiag(blk.index, min(i, j), max(i, j))
                acc.add_param_row(u, 0.0, -scale)
            return
        for i, j in self._triangle(2 * s, upper):
            qi, ri = divmod(i, s)
            qj, rj = divmod(j, s)
            scale = 1.0 if i == j else rt2
            if qi == qj:  # Re quadrant
                if ri == rj:
                    acc.add_param_row(lay.diag(blk.index, ri), 0.0, -scale)
                else:
                    u, _ = lay.offdiag(blk.index, min(ri, rj), max(ri, rj))
                    acc.add_param_row(u, 0.0, -scale)
            else:
                # E[i,j] = -Im X[ri,rj] for (qi,qj)=(0,1), +Im X[ri,rj] for (1,0)
                sgn = -1.0 if (qi, qj) == (0, 1) else 1.0
                if ri == rj:
                    acc.add_empty_row()
                else:
                    u, v = lay.offdiag(blk.index, min(ri, rj), max(ri, rj))
                    imsgn = 1.0 if ri < rj else -1.0
                    acc.add_param_row(v, 0.0, -scale * sgn * imsgn)

    def _emit_lmi_cone(self, acc: _RowAccumulator, lmi: _LmiGroup, upper: bool,
                       split_cache: dict) -> None:
        s = lmi.side
        rt2 = np.sqrt(2.0)
        if lmi.real:
            for i, j in self._triangle(s, upper):
                scale = 1.0 if i == j else rt2
                r, c = (i, j) if i <= j else (j, i)
                if (r, c) not in split_cache:
                    e = lmi.entries.get((r, c))
                    split_cache[(r, c)] = _split_terms(e) if e is not None \
                        else ([], [], 0.0, 0.0)
                re_t, _, re_c, _ = split_cache[(r, c)]
                acc.add_row(re_t, re_c * scale, part="re", scale=-scale)
            return
        for i, j in self._triangle(2 * s, upper):
            qi, ri = divmod(i, s)
            qj, rj = divmod(j, s)
            scale = 1.0 if i == j else rt2
            r, c = (ri, rj) if ri <= rj else (rj, ri)
            key = (r, c)
            if key not in split_cache:
                e = lmi.entries.get(key)
                split_cache[key] = _split_terms(e) if e is not None else ([], [], 0.0, 0.0)
            re_t, im_t, re_c, im_c = split_cache[key]
            if qi == qj:
                # Re of entry (ri,rj) == Re of canonical entry
                acc.add_row(re_t, re_c * scale, part="re", scale=-scale)
            else:
                sgn = -1.0 if (qi, qj) == (0, 1) else 1.0
                if ri == rj:
                    acc.add_empty_row()
                else:
                    imsgn = 1.0 if ri < rj else -1.0
                    fac = scale * sgn * imsgn
                    acc.add_row(im_t, im_c * fac, part="im", scale=-fac)

    def lower(self, upper_triangle: bool):
        """Return (A csc, b, c, obj_const, cone spec, row group slices)."""
        lay = self.layout
        acc = _RowAccumulator(lay)
        group_rows: dict[str, tuple[int, int]] = {}

        for terms, rhs, part in self.eq_rows:
            acc.add_row(terms, rhs, part=part)
        n_eq = len(acc.b)
        for terms, rhs in self.ineq_rows:
            acc.add_row(terms, rhs)
        n_ineq = len(acc.b) - n_eq

        for g in self.groups:
            if g.kind == "eq":
                group_rows[g.name] = (g.start, g.end)
            else:
                group_rows[g.name] = (n_eq + g.start, n_eq + g.end)

        psd_sides = []
        for blk in self.blocks:
            if blk.psd:
                start = len(acc.b)
                self._emit_block_cone(acc, blk, upper_triangle)
                psd_sides.append(2 * blk.side if blk.hermitian else blk.side)
                group_rows[f"psd:{blk.name}"] = (start, len(acc.b))
        for lmi in self.lmis:
            start = len(acc.b)
            self._emit_lmi_cone(acc, lmi, upper_triangle, {})
            psd_sides.append(lmi.side if lmi.real else 2 * lmi.side)
            group_rows[lmi.name] = (start, len(acc.b))

        n_rows = len(acc.b)
        a = sp.coo_matrix((acc.vals, (acc.rows, acc.cols)), shape=(n_rows, lay.n_params)).tocsc()
        b = np.asarray(acc.b)

        c = np.zeros(lay.n_params)
        obj_const = 0.0
        if self.sense != FEASIBILITY and self.objective is not None:
            tmp = _RowAccumulator(lay)
            terms, const = _real_part_terms(self.objective)
            tmp.add_row(terms, 0.0)
            for col, val in zip(tmp.cols, tmp.vals):
                c[col] += val
            obj_const = const
            if self.sense == MAXIMIZE:
                c = -c
        return a, b, c, obj_const, (n_eq, n_ineq, psd_sides), group_rows

    # -- solution reconstruction -------------------------------------------

    def extract(self, x: np.ndarray) -> tuple[dict[str, np.ndarray], dict[str, float]]:
        lay = self.layout
        scalars = {name: float(x[i]) for i, name in enumerate(self.scalars)}
        blocks = {}
        for blk in self.blocks:
            s = blk.side
            m = np.zeros((s, s), dtype=complex)
            for r in range(s):
                m[r, r] = x[lay.diag(blk.index, r)]
                for cc in range(r + 1, s):
                    u, v = lay.offdiag(blk.index, r, cc)
                    val = x[u] + (1j * x[v] if blk.hermitian else 0.0)
                    m[r, cc] = val
                    m[cc, r] = np.conj(val) if blk.hermitian else val
            blocks[blk.name] = m
        return blocks, scalars

    def objective_value(self, x: np.ndarray) -> float | None:
        if self.sense == FEASIBILITY or self.objective is None:
            return None
        lay = self.layout
        tmp = _RowAccumulator(lay)
        terms, const = _real_part_terms(self.objective)
        tmp.add_row(terms, 0.0)
        val = const
        for col, coef in zip(tmp.cols, tmp.vals):
            val += coef * x[col]
        return float(val)

    def dump(self, path: str) -> None:
        """Sparse triplet text dump (cross-checking against external solvers)."""
        a, b, c, obj_const, (n_eq, n_ineq, psd), _ = self.lower(upper_triangle=False)
        coo = a.tocoo()
        with open(path, "w") as fh:
            fh.write(f"# conic program: {a.shape[0]} rows, {a.shape[1]} cols\n")
            fh.write(f"cones zero={n_eq} nonneg={n_ineq} psd={','.join(map(str, psd))}\n")
            fh.write(f"sense {self.sense} objconst {obj_const!r}\n")
            for i, v in enumerate(c):
                if v != 0.0:
                    fh.write(f"c {i} {v!r}\n")
            for r, cc, v in zip(coo.row, coo.col, coo.data):
                fh.write(f"A {r} {cc} {v!r}\n")
            for i, v in enumerate(b):
                if v != 0.0:
                    fh.write(f"b {i} {v!r}\n")


# ---------------------------------------------------------------------------
# backends


def _choose_backend(prog: ConicProgram, opts: SolverOptions) -> str:
    choice = opts.backend
    if choice == "auto":
        choice = os.environ.get(_ENV_BACKEND, "auto").lower()
    if choice == "auto":
        limit = opts.clarabel_cost_limit if opts.clarabel_cost_limit is not None \
            else _CLARABEL_COST_LIMIT
        choice = "clarabel" if prog.clarabel_cost() <= limit else "scs"
    if choice not in ("clarabel", "scs"):
        raise ValueError(f"unknown solver backend {choice!r}")
    return choice


def _solve_clarabel(prog: ConicProgram, opts: SolverOptions):
    import clarabel

    a, b, c, obj_const, (n_eq, n_ineq, psd_sides), groups = prog.lower(upper_triangle=True)
    cones = []
    if n_eq:
        cones.append(clarabel.ZeroConeT(n_eq))
    if n_ineq:
        cones.append(clarabel.NonnegativeConeT(n_ineq))
    for s in psd_sides:
        cones.append(clarabel.PSDTriangleConeT(s))
    settings = clarabel.DefaultSettings()
    settings.verbose = opts.verbose
    settings.tol_feas = opts.feas_tol
    settings.tol_gap_abs = opts.gap_tol
    settings.tol_gap_rel = opts.gap_tol
    settings.max_iter = min(opts.max_iters, 500)  # interior-point iteration scale
    # the doubled spectrum of the real embedding makes these SDPs degenerate;
    # stronger static regularization keeps the KKT solves stable
    settings.static_regularization_constant = 1e-7
    settings.chordal_decomposition_enable = False
    p = sp.csc_matrix((len(c), len(c)))
    solver = clarabel.DefaultSolver(p, c, a, b, cones, settings)
    sol = solver.solve()
    status = str(sol.status)
    mapping = {
        "Solved": OPTIMAL,
        "PrimalInfeasible": INFEASIBLE,
        "DualInfeasible": UNBOUNDED,
        "AlmostSolved": INACCURATE,
        "AlmostPrimalInfeasible": INACCURATE,
        "AlmostDualInfeasible": INACCURATE,
        "MaxIterations": INACCURATE,
        "MaxTime": INACCURATE,
        "InsufficientProgress": INACCURATE,
    }
    st = mapping.get(status, FAILED)
    x = np.asarray(sol.x) if sol.x is not None else np.zeros(len(c))
    y = np.asarray(sol.z) if sol.z is not None else np.zeros(len(b))
    info = {"status_raw": status, "iterations": sol.iterations, "solve_time": sol.solve_time}
    return st, x, y, info, (a, b, (n_eq, n_ineq)), groups


def _solve_scs(prog: ConicProgram, opts: SolverOptions):
    import scs

    a, b, c, obj_const, (n_eq, n_ineq, psd_sides), groups = prog.lower(upper_triangle=False)
    cone: dict = {}
    if n_eq:
        cone["z"] = n_eq
    if n_ineq:
        cone["l"] = n_ineq
    if psd_sides:
        cone["s"] = psd_sides
    eps = max(min(opts.feas_tol, opts.gap_tol), 1e-12)
    extra = {"alpha": 1.8}
    if opts.scs_settings:
        extra.update(opts.scs_settings)
    t0 = time.time()
    out = scs.solve(
        dict(A=a, b=b, c=c),
        cone,
        verbose=opts.verbose,
        eps_abs=eps,
        eps_rel=eps,
        max_iters=opts.max_iters,
        **extra,
    )
    status = out["info"]["status"].lower()
    if status == "solved":
        st = OPTIMAL
    elif "solved" in status:  # solved (inaccurate ...)
        st = INACCURATE
    elif status == "infeasible":
        st = INFEASIBLE
    elif status == "unbounded":
        st = UNBOUNDED
    elif "infeasible" in status or "unbounded" in status:
        st = INACCURATE
    else:
        st = FAILED
    x = np.asarray(out["x"]) if out.get("x") is not None else np.zeros(len(c))
    y = np.asarray(out["y"]) if out.get("y") is not None else np.zeros(len(b))
    info = {
        "status_raw": out["info"]["status"],
        "iterations": out["info"].get("iter"),
        "solve_time": time.time() - t0,
        "scs_pobj": out["info"].get("pobj"),
    }
    return st, x, y, info, (a, b, (n_eq, n_ineq)), groups


def solve(prog: ConicProgram, opts: SolverOptions | None = None) -> SolveResult:
    """Solve a ConicProgram; never returns a silently wrong answer.

    OPTIMAL is downgraded to INACCURATE when independently recomputed
    residuals exceed 50x the configured feasibility tolerance; INFEASIBLE is
    reported only when the backend produced an infeasibility certificate.
    """
    opts = opts or SolverOptions()
    if prog.layout.n_params == 0 and not prog.eq_rows and not prog.ineq_rows and not prog.lmis:
        return SolveResult(OPTIMAL, 0.0 if prog.sense != FEASIBILITY else None,
                           {}, {}, {}, {}, "trivial", {})
    requested = opts.backend
    if requested == "auto":
        requested = os.environ.get(_ENV_BACKEND, "auto").lower()
    auto_mode = requested == "auto"
    backend = _choose_backend(prog, opts)
    result = _solve_once(prog, opts, backend)
    if auto_mode and backend == "clarabel" and result.status in (FAILED, INACCURATE):
        from dataclasses import replace
        fb_opts = replace(opts, feas_tol=max(opts.feas_tol, 1e-6),
                          gap_tol=max(opts.gap_tol, 1e-6), backend="scs")
        fallback = _solve_once(prog, fb_opts, "scs")
        if fallback.status == OPTIMAL or result.status == FAILED:
            fallback.info["fallback_from"] = f"clarabel:{result.info.get('status_raw')}"
            return fallback
    return result


def _solve_once(prog: ConicProgram, opts: SolverOptions, backend: str) -> SolveResult:
    try:
        if backend == "clarabel":
            st, x, y, info, (a, b, spans), groups = _solve_clarabel(prog, opts)
        else:
            st, x, y, info, (a, b, spans), groups = _solve_scs(prog, opts)
    except Exception as exc:  # backend crash surfaces as FAILED, not an answer
        return SolveResult(FAILED, None, {}, {}, {}, {}, backend, {"error": repr(exc)})

    n_eq, n_ineq = spans
    blocks, scalars = prog.extract(x)
    residuals: dict[str, float] = {}
    if st in (OPTIMAL, INACCURATE):
        ax = a @ x
        if n_eq:
            residuals["primal_eq_inf"] = float(np.max(np.abs(ax[:n_eq] - b[:n_eq])))
        if n_ineq:
            viol = ax[n_eq:n_eq + n_ineq] - b[n_eq:n_eq + n_ineq]
            residuals["ineq_violation"] = float(max(0.0, np.max(viol))) if len(viol) else 0.0
        min_eig = 0.0
        for blk in prog.blocks:
            if blk.psd:
                w = np.linalg.eigvalsh((blocks[blk.name] + blocks[blk.name].conj().T) / 2)
                min_eig = min(min_eig, float(w[0]))
        residuals["min_block_eig"] = min_eig
        scale = 1.0 + float(np.max(np.abs(b))) if len(b) else 1.0
        feas = max(residuals.get("primal_eq_inf", 0.0), residuals.get("ineq_violation", 0.0),
                   -residuals.get("min_block_eig", 0.0))
        if st == OPTIMAL and feas > 50 * opts.feas_tol * scale:
            st = INACCURATE
            info["downgraded"] = f"residual {feas:.3e} above 50x tolerance"

    duals = {}
    for name, (lo, hi) in groups.items():
        duals[name] = y[lo:hi]

    objective = prog.objective_value(x) if st in (OPTIMAL, INACCURATE) else None
    return SolveResult(st, objective, blocks, scalars, duals, residuals, backend, info)
