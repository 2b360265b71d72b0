"""Exact many-body states: symmetric products, superpositions, Fock conversion."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import reduce

import numpy as np

from .basis import (
    ModeBasis,
    enumerate_occupations,
    occupation_multiplicity,
    slot_assignments,
)

DENSE_ENTRY_CAP = 20_000_000

ORTHO_TOL = 1e-12
SYMMETRY_TOL = 1e-12


@dataclass
class FragmentationSpec:
    """Orbitals, integer populations, and asymptotic fractions of a fragmented state.

    Orbitals may be given as combined-mode indices or as coefficient vectors;
    either populations (particle counts) or fractions (summing to 1) may be
    omitted and derived from the other.
    """

    orbitals: list
    populations: tuple[int, ...] | None = None
    fractions: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.populations is None and self.fractions is None:
            raise ValueError("need populations or fractions")
        if self.populations is not None:
            self.populations = tuple(int(n) for n in self.populations)
            if any(n < 0 for n in self.populations):
                raise ValueError("populations must be nonnegative")
        if self.fractions is not None:
            self.fractions = tuple(float(f) for f in self.fractions)
            if abs(sum(self.fractions) - 1.0) > 1e-12:
                raise ValueError("fractions must sum to 1")
            if self.ell >= 2 and not all(0.0 < f < 1.0 for f in self.fractions):
                raise ValueError("fractions must lie in (0, 1)")

    @property
    def ell(self) -> int:
        return len(self.orbitals)

    @property
    def total(self) -> int:
        if self.populations is None:
            raise ValueError("no populations set")
        return sum(self.populations)

    def effective_fractions(self) -> tuple[float, ...]:
        if self.fractions is not None:
            return self.fractions
        n = self.total
        return tuple(nj / n for nj in self.populations)

    def populations_for(self, total: int) -> tuple[int, ...]:
        """Round fractions to integer populations by largest remainder."""
        if self.populations is not None and sum(self.populations) == total:
            return self.populations
        return largest_remainder(self.effective_fractions(), total)

    def orbital_matrix(self, basis: ModeBasis) -> np.ndarray:
        """Orbitals as rows of an (ell, m) complex matrix; checks orthonormality."""
        rows = []
        for orb in self.orbitals:
            if isinstance(orb, (int, np.integer)):
                rows.append(basis.unit_orbital(int(orb)))
            else:
                v = np.asarray(orb, dtype=complex).reshape(-1)
                if v.size != basis.m:
                    raise ValueError(
                        f"orbital length {v.size} does not match basis size {basis.m}")
                rows.append(v)
        mat = np.array(rows)
        gram = mat.conj() @ mat.T
        if not np.allclose(gram, np.eye(self.ell), atol=ORTHO_TOL * 10):
            raise ValueError("orbitals are not pairwise orthonormal")
        return mat


def largest_remainder(fractions: tuple[float, ...], total: int) -> tuple[int, ...]:
    """Integer populations n_j*total, floor-rounded then topped up by remainder."""
    raw = [f * total for f in fractions]
    base = [math.floor(r) for r in raw]
    deficit = total - sum(base)
    order = sorted(range(len(raw)), key=lambda j: (raw[j] - base[j], j), reverse=True)
    for j in order[:deficit]:
        base[j] += 1
    return tuple(base)


def rounding_residues(fractions: tuple[float, ...], total: int) -> tuple[float, ...]:
    """|N_j/N - n_j| for the largest-remainder populations."""
    pops = largest_remainder(fractions, total)
    return tuple(abs(nj / total - f) for nj, f in zip(pops, fractions))


@dataclass
class ManyBodyState:
    """First-quantized dense state: complex tensor with one axis per particle."""

    basis: ModeBasis
    n: int
    amplitudes: np.ndarray

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def inner(self, other: "ManyBodyState") -> complex:
        return complex(np.vdot(self.amplitudes, other.amplitudes))

    def check(self, tol: float = SYMMETRY_TOL):
        if abs(self.norm() - 1.0) > 10 * tol:
            raise ValueError(f"state not normalised: |norm-1| = {abs(self.norm()-1):.2e}")
        if not is_permutation_symmetric(self.amplitudes, tol):
            raise ValueError("state is not permutation symmetric")


@dataclass
class FockState:
    """Sparse second-quantized state: occupation vector -> amplitude."""

    basis: ModeBasis
    n: int
    amplitudes: dict

    def norm(self) -> float:
        return math.sqrt(sum(abs(a) ** 2 for a in self.amplitudes.values()))

    def check(self):
        for occ in self.amplitudes:
            if len(occ) != self.basis.m or sum(occ) != self.n:
                raise ValueError(f"occupation {occ} inconsistent with sector")
        if abs(self.norm() - 1.0) > 1e-10:
            raise ValueError("Fock state not normalised")


def is_permutation_symmetric(tensor: np.ndarray, tol: float = SYMMETRY_TOL) -> bool:
    """True when the tensor is invariant under adjacent-slot transpositions."""
    n = tensor.ndim
    for i in range(n - 1):
        swapped = np.swapaxes(tensor, i, i + 1)
        if np.max(np.abs(swapped - tensor)) > tol:
            return False
    return True


def _check_cap(m: int, n: int, cap: int):
    if m**n > cap:
        raise ValueError(
            f"dense tensor would hold {m**n} entries, above the cap {cap}")


def build_fragmented_state(spec: FragmentationSpec, basis: ModeBasis,
                           cap: int = DENSE_ENTRY_CAP) -> ManyBodyState:
    """Normalised symmetric product of the spec's orbitals with given multiplicities."""
    populations = spec.populations
    if populations is None:
        raise ValueError("fragmented state needs integer populations")
    n = sum(populations)
    if n < 1:
        raise ValueError("need at least one particle")
    _check_cap(basis.m, n, cap)
    orbitals = spec.orbital_matrix(basis)
    tensor = np.zeros((basis.m,) * n, dtype=complex)
    for labels in slot_assignments(populations):
        tensor += reduce(np.multiply.outer, (orbitals[lab] for lab in labels))
    tensor /= np.linalg.norm(tensor)
    return ManyBodyState(basis=basis, n=n, amplitudes=tensor)


def build_superposition_state(spec: FragmentationSpec, basis: ModeBasis,
                              cap: int = DENSE_ENTRY_CAP) -> ManyBodyState:
    """Coherent superposition sum_j sqrt(N_j/N) phi_j^(x)N of uncorrelated condensates."""
    populations = spec.populations
    if populations is None:
        raise ValueError("superposition state needs integer populations")
    n = sum(populations)
    if n < 1:
        raise ValueError("need at least one particle")
    _check_cap(basis.m, n, cap)
    orbitals = spec.orbital_matrix(basis)
    tensor = np.zeros((basis.m,) * n, dtype=complex)
    for nj, orb in zip(populations, orbitals):
        if nj == 0:
            continue
        tensor += math.sqrt(nj / n) * reduce(np.multiply.outer, (orb,) * n)
    tensor /= np.linalg.norm(tensor)
    return ManyBodyState(basis=basis, n=n, amplitudes=tensor)


def to_fock(state: ManyBodyState, threshold: float = 0.0) -> FockState:
    """Occupation-basis amplitudes of a symmetric dense state."""
    m, n = state.basis.m, state.n
    amps = {}
    for occ in enumerate_occupations(m, n):
        rep = tuple(p for p in range(m) for _ in range(occ[p]))
        value = math.sqrt(occupation_multiplicity(occ)) * state.amplitudes[rep]
        if abs(value) > threshold:
            amps[occ] = complex(value)
    return FockState(basis=state.basis, n=n, amplitudes=amps)


def from_fock(fock: FockState, cap: int = DENSE_ENTRY_CAP) -> ManyBodyState:
    """Dense symmetric tensor reconstructed from occupation amplitudes."""
    m, n = fock.basis.m, fock.n
    _check_cap(m, n, cap)
    tensor = np.zeros((m,) * n, dtype=complex)
    for occ, value in fock.amplitudes.items():
        if len(occ) != m or sum(occ) != n:
            raise ValueError(f"occupation {occ} inconsistent with N={n}, m={m}")
        share = value / math.sqrt(occupation_multiplicity(occ))
        for arrangement in slot_assignments(occ):
            # labels of slot_assignments(occ) are mode indices here
            tensor[arrangement] += share
    return ManyBodyState(basis=fock.basis, n=n, amplitudes=tensor)


def random_symmetric_state(basis: ModeBasis, n: int, seed: int,
                           cap: int = DENSE_ENTRY_CAP) -> ManyBodyState:
    """Haar-ish random symmetric state from Gaussian occupation amplitudes."""
    rng = np.random.default_rng(seed)
    occs = enumerate_occupations(basis.m, n)
    raw = rng.normal(size=len(occs)) + 1j * rng.normal(size=len(occs))
    raw /= np.linalg.norm(raw)
    fock = FockState(basis=basis, n=n,
                     amplitudes={occ: complex(a) for occ, a in zip(occs, raw)})
    return from_fock(fock, cap=cap)


def perturb_state(state: ManyBodyState, eps: float, seed: int) -> ManyBodyState:
    """Symmetric state at exact norm distance eps from the input, seeded."""
    if not (0.0 < eps < 2.0):
        raise ValueError(f"eps must lie in (0, 2), got {eps}")
    direction = random_symmetric_state(state.basis, state.n, seed)
    chi = direction.amplitudes - state.inner(direction) * state.amplitudes
    chi_norm = np.linalg.norm(chi)
    if chi_norm < 1e-14:
        raise ValueError("random direction degenerate with the state; change seed")
    chi /= chi_norm
    alpha = math.acos(1.0 - eps**2 / 2.0)
    tensor = math.cos(alpha) * state.amplitudes + math.sin(alpha) * chi
    return ManyBodyState(basis=state.basis, n=state.n, amplitudes=tensor)
