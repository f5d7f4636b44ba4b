"""POVM construction, validation and transformation.

The built-in catalog covers the measurement families used throughout the
package: the tetrahedral qubit SIC, the one-parameter qutrit SIC family and
its two-parameter generalization, the real-space qutrit IC POVM, flagged and
two-copy liftings, and user-supplied Weyl-Heisenberg fiducials for d >= 4.
"""

from __future__ import annotations

import cmath
import json
import math
from dataclasses import dataclass

import numpy as np

from . import matkernel as mk

DEFAULT_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class Povm:
    """d-dimensional POVM: Hermitian effects M_i that should sum to identity.

    Construction only enforces shape and Hermiticity so that diagnostic flows
    can hold invalid candidates; use :func:`validate` for the PSD and
    completeness checks.
    """

    dim: int
    effects: tuple[np.ndarray, ...]
    label: str = ""

    def __post_init__(self) -> None:
        if len(self.effects) < 2:
            raise ValueError("a POVM needs at least two effects")
        eff = []
        for m in self.effects:
            m = np.asarray(m, dtype=complex)
            if m.shape != (self.dim, self.dim):
                raise ValueError(f"effect shape {m.shape} does not match dim {self.dim}")
            if mk.herm_deviation(m) > 1e-8:
                raise ValueError("effect is not Hermitian within tolerance")
            m = mk.hermitize(m)
            m.setflags(write=False)
            eff.append(m)
        object.__setattr__(self, "effects", tuple(eff))

    @property
    def n_outcomes(self) -> int:
        return len(self.effects)

    def probabilities(self, rho: np.ndarray) -> np.ndarray:
        return np.array([float(np.real(np.trace(rho @ m))) for m in self.effects])


@dataclass(frozen=True, eq=False)
class ProjectiveMeasurement:
    """Orthogonal projectors (zero effects allowed) summing to identity."""

    dim: int
    projectors: tuple[np.ndarray, ...]

    def __post_init__(self) -> None:
        projs = []
        for p in self.projectors:
            p = np.asarray(p, dtype=complex)
            if p.shape != (self.dim, self.dim):
                raise ValueError("projector dimension mismatch")
            p.setflags(write=False)
            projs.append(p)
        object.__setattr__(self, "projectors", tuple(projs))

    def check(self, tol: float = 1e-8) -> float:
        """Largest deviation from the projective-measurement relations."""
        dev = mk.frob(sum(self.projectors) - np.eye(self.dim))
        for i, p in enumerate(self.projectors):
            for j, q in enumerate(self.projectors):
                target = p if i == j else np.zeros_like(p)
                dev = max(dev, mk.frob(p @ q - target))
        return dev

    def is_valid(self, tol: float = 1e-8) -> bool:
        return self.check(tol) <= tol


@dataclass(frozen=True, eq=False)
class Fiducial:
    dim: int
    amplitudes: np.ndarray

    def __post_init__(self) -> None:
        v = np.asarray(self.amplitudes, dtype=complex).ravel()
        if v.shape != (self.dim,):
            raise ValueError("fiducial length does not match dim")
        if abs(np.linalg.norm(v) - 1.0) > 1e-12:
            raise ValueError("fiducial must be unit norm within 1e-12")
        v.setflags(write=False)
        object.__setattr__(self, "amplitudes", v)


@dataclass(frozen=True, eq=False)
class NaimarkDilation:
    """n-level unitary whose first d columns embed the measured system.

    outcome_map[k] is the POVM outcome reproduced by a computational-basis
    click on level k of the dilated system.
    """

    unitary: np.ndarray
    source_dim: int
    outcome_map: tuple[int, ...]

    def __post_init__(self) -> None:
        u = np.asarray(self.unitary, dtype=complex)
        n = u.shape[0]
        if u.shape != (n, n):
            raise ValueError("dilation unitary must be square")
        if mk.frob(u.conj().T @ u - np.eye(n)) > 1e-10 * max(1.0, n):
            raise ValueError("dilation matrix is not unitary within 1e-10")
        u.setflags(write=False)
        object.__setattr__(self, "unitary", u)
        object.__setattr__(self, "outcome_map", tuple(int(i) for i in self.outcome_map))

    @property
    def n_levels(self) -> int:
        return self.unitary.shape[0]

    def outcome_probabilities(self, psi: np.ndarray) -> np.ndarray:
        """POVM outcome distribution for the pure input state psi."""
        amp = self.unitary[:, : self.source_dim] @ np.asarray(psi, dtype=complex)
        probs = np.zeros(self.n_levels)
        for k in range(self.n_levels):
            probs[self.outcome_map[k]] += abs(amp[k]) ** 2
        return probs

    def implemented_effects(self) -> list[np.ndarray]:
        """Effects K† |k><k| K accumulated onto their POVM outcomes."""
        k_iso = self.unitary[:, : self.source_dim]
        eff = [np.zeros((self.source_dim, self.source_dim), dtype=complex)
               for _ in range(self.n_levels)]
        for k in range(self.n_levels):
            row = k_iso[k, :]
            eff[self.outcome_map[k]] += np.outer(row.conj(), row)
        return eff


@dataclass(frozen=True)
class ValidationReport:
    is_povm: bool
    max_negativity: float
    completeness_residual: float


@dataclass(frozen=True)
class SicReport:
    is_sic: bool
    max_overlap_deviation: float


def validate(p: Povm, tol: float = DEFAULT_TOL) -> ValidationReport:
    """Diagnostic check of the POVM invariants (never raises)."""
    neg = 0.0
    for m in p.effects:
        neg = max(neg, -mk.min_eigval(m))
    resid = mk.frob(sum(p.effects) - np.eye(p.dim))
    return ValidationReport(neg <= tol and resid <= tol, neg, resid)


def depolarize(p: Povm, t: float) -> Povm:
    """Effect-wise white noise: M_i -> t M_i + (1-t) Tr(M_i)/d * I."""
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"visibility t={t} outside [0, 1]")
    eye = np.eye(p.dim)
    eff = [t * m + (1.0 - t) * (np.real(np.trace(m)) / p.dim) * eye for m in p.effects]
    return Povm(p.dim, tuple(eff), label=f"dep({t:.6g})[{p.label}]")


# ---------------------------------------------------------------------------
# Weyl-Heisenberg covariant constructions


def shift_matrix(d: int) -> np.ndarray:
    x = np.zeros((d, d), dtype=complex)
    for j in range(d):
        x[(j + 1) % d, j] = 1.0
    return x


def clock_matrix(d: int) -> np.ndarray:
    return np.diag(np.exp(2j * np.pi * np.arange(d) / d))


def weyl_heisenberg(d: int, i1: int, i2: int) -> np.ndarray:
    """Displacement operator D_{i1,i2} = tau^{i1 i2} X^{i1} Z^{i2}, tau = -e^{-i pi/d}."""
    if not (0 <= i1 < d and 0 <= i2 < d):
        raise ValueError(f"indices ({i1},{i2}) out of range for d={d}")
    tau = -cmath.exp(-1j * np.pi / d)
    return tau ** (i1 * i2) * np.linalg.matrix_power(shift_matrix(d), i1) \
        @ np.linalg.matrix_power(clock_matrix(d), i2)


def wh_indices(d: int) -> list[tuple[int, int]]:
    """Effect ordering of WH-covariant POVMs: lexicographic in (i1, i2)."""
    return [(i1, i2) for i1 in range(d) for i2 in range(d)]


def sic_overlap_target(d: int, same: bool) -> float:
    return ((d if same else 0) + 1) / (d * d * (d + 1))


def sic_from_fiducial(f: Fiducial, tol: float = 1e-8) -> tuple[Povm, SicReport]:
    """WH orbit of |psi0><psi0|/d, plus a report on the SIC overlap condition."""
    d = f.dim
    m0 = mk.proj(f.amplitudes) / d
    effects = []
    for i1, i2 in wh_indices(d):
        h = weyl_heisenberg(d, i1, i2)
        effects.append(h @ m0 @ h.conj().T)
    povm = Povm(d, tuple(effects), label=f"wh-covariant(d={d})")
    dev = 0.0
    for a in range(d * d):
        for b in range(a, d * d):
            ov = float(np.real(np.trace(effects[a] @ effects[b])))
            dev = max(dev, abs(ov - sic_overlap_target(d, a == b)))
    return povm, SicReport(dev <= tol, dev)


def wh_covariant_permutation(p: Povm) -> list[list[int]] | None:
    """For a d^2-outcome POVM check h_k M_i h_k† = M_{i (+) k}.

    Returns the relabeling table perm[k][i] (index addition on the (i1,i2)
    multi-index) or None when the POVM is not WH-covariant in the canonical
    effect ordering.
    """
    d = p.dim
    if p.n_outcomes != d * d:
        return None
    idx = wh_indices(d)
    flat = {pair: k for k, pair in enumerate(idx)}
    table = []
    for k, (k1, k2) in enumerate(idx):
        h = weyl_heisenberg(d, k1, k2)
        row = []
        for i, (i1, i2) in enumerate(idx):
            j = flat[((i1 + k1) % d, (i2 + k2) % d)]
            if mk.frob(h @ p.effects[i] @ h.conj().T - p.effects[j]) > 1e-8:
                return None
            row.append(j)
        table.append(row)
    return table


# ---------------------------------------------------------------------------
# catalog


def sic2_vectors() -> list[np.ndarray]:
    """The tetrahedral qubit vectors |Psi_i>."""
    w = np.exp(2j * np.pi / 3)
    a, b = 1 / np.sqrt(3), np.sqrt(2.0 / 3.0)
    return [
        np.array([1.0, 0.0], dtype=complex),
        np.array([a, b], dtype=complex),
        np.array([a, w * b], dtype=complex),
        np.array([a, w**2 * b], dtype=complex),
    ]


def real_ic3_vectors() -> list[np.ndarray]:
    """The six real qutrit vectors |Phi_i> (pairwise +/- combinations)."""
    r = 1 / np.sqrt(2)
    return [
        np.array([r, r, 0.0], dtype=complex),
        np.array([r, -r, 0.0], dtype=complex),
        np.array([r, 0.0, r], dtype=complex),
        np.array([r, 0.0, -r], dtype=complex),
        np.array([0.0, r, r], dtype=complex),
        np.array([0.0, r, -r], dtype=complex),
    ]


def qubit_sic_fiducial() -> Fiducial:
    """Canonical fiducial whose WH orbit is a qubit SIC."""
    beta = math.acos(1 / math.sqrt(3))
    v = np.array([math.cos(beta / 2), cmath.exp(1j * np.pi / 4) * math.sin(beta / 2)])
    return Fiducial(2, v)


def sic3_fiducial(phi: float) -> Fiducial:
    v = np.zeros(3, dtype=complex)
    v[1] = 1 / np.sqrt(2)
    v[2] = -cmath.exp(1j * phi) / np.sqrt(2)
    return Fiducial(3, v)


def family3_fiducial(theta: float, phi: float) -> Fiducial:
    """Two-parameter qutrit fiducial cos(t/2)|1> + sin(t/2) e^{i phi}|2>.

    The equator theta=pi/2 carries the SIC family (azimuth phi maps to the
    SIC parameter phi + pi); the poles give trivially simulable POVMs.
    """
    v = np.zeros(3, dtype=complex)
    v[1] = math.cos(theta / 2)
    v[2] = math.sin(theta / 2) * cmath.exp(1j * phi)
    return Fiducial(3, v)


def flag_povm(inner: Povm) -> Povm:
    """Embed the effects into d+1 dimensions and add the projector |d><d|."""
    d = inner.dim
    eff = []
    for m in inner.effects:
        big = np.zeros((d + 1, d + 1), dtype=complex)
        big[:d, :d] = m
        eff.append(big)
    eff.append(mk.proj(mk.basis_state(d + 1, d)))
    return Povm(d + 1, tuple(eff), label=f"flag[{inner.label}]")


def lift_with_identity(inner: Povm, anc_dim: int) -> Povm:
    eff = [mk.kron(m, np.eye(anc_dim)) for m in inner.effects]
    return Povm(inner.dim * anc_dim, tuple(eff), label=f"lift{anc_dim}[{inner.label}]")


def basis_measurement(d: int) -> Povm:
    return Povm(d, tuple(mk.proj(mk.basis_state(d, j)) for j in range(d)), label=f"basis(d={d})")


SIC3A_PHI = np.pi / 18
SIC3B_PHI = np.pi / 9
SIC3C_PHI = 0.0


def catalog(name: str, **params) -> Povm:
    """Named POVM constructors.

    sic2 | sic3(phi) | sic3a | sic3b | sic3c | family3(theta, phi) |
    real_ic3 | flag(inner=Povm) | flag_sic2 | flag_sic3c | two_copy_sic2 |
    user_fiducial(path) | basis(dim)
    """
    key = name.strip().lower().replace("-", "_")
    if key == "sic2":
        return Povm(2, tuple(mk.proj(v) / 2 for v in sic2_vectors()), label="sic2")
    if key == "sic2_wh":
        p, rep = sic_from_fiducial(qubit_sic_fiducial())
        if not rep.is_sic:
            raise AssertionError("qubit WH fiducial failed the SIC condition")
        return Povm(2, p.effects, label="sic2-wh")
    if key == "sic3":
        phi = float(params["phi"])
        p, _ = sic_from_fiducial(sic3_fiducial(phi))
        return Povm(3, p.effects, label=f"sic3(phi={phi:.6g})")
    if key == "sic3a":
        return catalog("sic3", phi=SIC3A_PHI)
    if key == "sic3b":
        return catalog("sic3", phi=SIC3B_PHI)
    if key in ("sic3c", "hesse"):
        return catalog("sic3", phi=SIC3C_PHI)
    if key == "family3":
        theta, phi = float(params["theta"]), float(params["phi"])
        p, _ = sic_from_fiducial(family3_fiducial(theta, phi))
        return Povm(3, p.effects, label=f"family3(theta={theta:.6g},phi={phi:.6g})")
    if key == "real_ic3":
        return Povm(3, tuple(mk.proj(v) / 2 for v in real_ic3_vectors()), label="real-ic3")
    if key == "flag":
        return flag_povm(params["inner"])
    if key == "flag_sic2":
        return flag_povm(catalog("sic2"))
    if key in ("flag_sic3a", "flag_sic3b", "flag_sic3c"):
        return flag_povm(catalog(key.removeprefix("flag_")))
    if key == "two_copy_sic2":
        p = lift_with_identity(catalog("sic2"), 2)
        return Povm(4, p.effects, label="sic2-two-copy")
    if key == "user_fiducial":
        f = load_fiducial(params["path"])
        p, rep = sic_from_fiducial(f)
        lbl = "sic" if rep.is_sic else "wh-covariant"
        return Povm(f.dim, p.effects, label=f"{lbl}(d={f.dim},user)")
    if key == "basis":
        return basis_measurement(int(params["dim"]))
    raise ValueError(f"unknown catalog POVM {name!r}")


# ---------------------------------------------------------------------------
# Naimark dilation


def naimark(p: Povm, tol: float = 1e-8) -> NaimarkDilation:
    """Dilation of a rank-1 POVM to a projective measurement on n levels.

    The first d columns form the isometry K = sum_i sqrt(a_i)|i><v_i| for
    effects a_i |v_i><v_i|; remaining columns are completed deterministically
    by orthonormalizing canonical basis vectors in index order.
    """
    n, d = p.n_outcomes, p.dim
    rows = []
    for i, m in enumerate(p.effects):
        w, vecs = np.linalg.eigh(m)
        if w[-1] < tol:  # zero effect: dead outcome level
            rows.append(np.zeros(d, dtype=complex))
            continue
        if np.any(w[:-1] > tol * max(1.0, w[-1])):
            raise ValueError(f"effect {i} is not rank-1")
        v = vecs[:, -1] * np.sqrt(max(w[-1], 0.0))
        rows.append(v.conj())
    k_iso = np.array(rows)  # (n, d); K† K = sum_i M_i = I
    cols = [k_iso[:, j] for j in range(d)]
    for j in range(n):
        cand = np.zeros(n, dtype=complex)
        cand[j] = 1.0
        for _ in range(2):  # re-orthogonalize for numerical stability
            for c in cols:
                cand = cand - c * np.vdot(c, cand)
        nrm = np.linalg.norm(cand)
        if nrm > 1e-8:
            cols.append(cand / nrm)
        if len(cols) == n:
            break
    if len(cols) != n:
        raise ValueError("unitary completion failed")
    u = np.stack(cols, axis=1)
    return NaimarkDilation(u, d, tuple(range(n)))


# ---------------------------------------------------------------------------
# JSON interfaces
#
# POVM files: {"label": str, "dim": d, "effects": [flat row-major [re, im]
# pairs per effect]}.  Fiducial files: {"dim": d, "amplitudes": [[re, im]..]}.


def _matrix_to_json(m: np.ndarray) -> list[list[float]]:
    return [[float(z.real), float(z.imag)] for z in np.asarray(m, dtype=complex).ravel()]


def _matrix_from_json(data, side: int) -> np.ndarray:
    flat = np.array([complex(re, im) for re, im in data], dtype=complex)
    if flat.size != side * side:
        raise ValueError(f"matrix payload has {flat.size} entries, expected {side * side}")
    return flat.reshape(side, side)


def _vector_to_json(v: np.ndarray) -> list[list[float]]:
    return [[float(z.real), float(z.imag)] for z in np.asarray(v, dtype=complex).ravel()]


def _vector_from_json(data) -> np.ndarray:
    return np.array([complex(re, im) for re, im in data], dtype=complex)


def povm_to_json(p: Povm) -> dict:
    return {"label": p.label, "dim": p.dim, "effects": [_matrix_to_json(m) for m in p.effects]}


def povm_from_json(data: dict) -> Povm:
    d = int(data["dim"])
    effects = tuple(_matrix_from_json(e, d) for e in data["effects"])
    return Povm(d, effects, label=str(data.get("label", "")))


def save_povm(p: Povm, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(povm_to_json(p), fh, indent=1)


def load_povm(path: str) -> Povm:
    with open(path) as fh:
        return povm_from_json(json.load(fh))


def load_fiducial(path: str) -> Fiducial:
    with open(path) as fh:
        data = json.load(fh)
    try:
        return Fiducial(int(data["dim"]), _vector_from_json(data["amplitudes"]))
    except (KeyError, TypeError) as exc:
        raise ValueError(f"malformed fiducial file {path}: {exc}") from exc


def save_fiducial(f: Fiducial, path: str) -> None:
    with open(path, "w") as fh:
        json.dump({"dim": f.dim, "amplitudes": _vector_to_json(f.amplitudes)}, fh, indent=1)
