"""Reduced density matrices: partial traces, spectra, and trace-norm metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import product

import numpy as np

from .basis import ModeBasis, enumerate_occupations, occupation_index_map
from .states import FockState, ManyBodyState

HERMITICITY_TOL = 1e-12
POSITIVITY_TOL = -1e-10
TRACE_TOL = 1e-10


@dataclass
class DensityMatrix:
    """Hermitian PSD trace-one operator on the k-fold tensor power of the mode space.

    Stored dense over the full (m^k)-dimensional product space; the bosonic
    states produced here are supported on the symmetric subspace but no
    symmetric-basis compression is applied.
    """

    k: int
    m: int
    matrix: np.ndarray
    basis: ModeBasis | None = None

    def __post_init__(self):
        expected = self.m**self.k
        if self.matrix.shape != (expected, expected):
            raise ValueError(
                f"matrix shape {self.matrix.shape} does not match m^k = {expected}")

    def validate(self) -> "DensityMatrix":
        mat = self.matrix
        herm = np.max(np.abs(mat - mat.conj().T))
        if herm > HERMITICITY_TOL:
            raise ValueError(f"not Hermitian: max asymmetry {herm:.2e}")
        tr = np.trace(mat).real
        if abs(tr - 1.0) > TRACE_TOL:
            raise ValueError(f"trace {tr} deviates from 1")
        low = float(np.linalg.eigvalsh(mat)[0])
        if low < POSITIVITY_TOL:
            raise ValueError(f"negative eigenvalue {low:.2e}")
        return self

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.matrix)


def density_from_matrix(matrix: np.ndarray, k: int, m: int,
                        basis: ModeBasis | None = None,
                        validate: bool = True) -> DensityMatrix:
    dm = DensityMatrix(k=k, m=m, matrix=np.asarray(matrix, dtype=complex),
                       basis=basis)
    return dm.validate() if validate else dm


def pure_projector(vector: np.ndarray, k: int, m: int,
                   basis: ModeBasis | None = None) -> DensityMatrix:
    """Rank-one projector onto a (normalised) vector of the k-particle space."""
    v = np.asarray(vector, dtype=complex).reshape(-1)
    v = v / np.linalg.norm(v)
    return DensityMatrix(k=k, m=m, matrix=np.outer(v, v.conj()), basis=basis)


def partial_trace_dense(obj, k: int, validate: bool = True) -> DensityMatrix:
    """k-body marginal by contracting out the trailing N-k particle slots."""
    if isinstance(obj, ManyBodyState):
        n, m = obj.n, obj.basis.m
        if not 1 <= k <= n:
            raise ValueError(f"k={k} outside 1..{n}")
        a = obj.amplitudes.reshape(m**k, m ** (n - k))
        mat = a @ a.conj().T
        dm = DensityMatrix(k=k, m=m, matrix=mat, basis=obj.basis)
    elif isinstance(obj, DensityMatrix):
        n, m = obj.k, obj.m
        if not 1 <= k <= n:
            raise ValueError(f"k={k} outside 1..{n}")
        if k == n:
            return obj
        dk, dtail = m**k, m ** (n - k)
        mat = obj.matrix.reshape(dk, dtail, dk, dtail)
        mat = np.einsum("abcb->ac", mat)
        dm = DensityMatrix(k=k, m=m, matrix=mat, basis=obj.basis)
    else:
        raise TypeError(f"cannot take a partial trace of {type(obj).__name__}")
    return dm.validate() if validate else dm


def krdm_from_fock(fock: FockState, k: int, validate: bool = True) -> DensityMatrix:
    """k-body marginal from occupation amplitudes, normalised to unit trace.

    Entries are (N-k)!/N! times the expectation of the normal-ordered string
    of k creation and k annihilation operators.
    """
    m, n = fock.basis.m, fock.n
    if not 1 <= k <= n:
        raise ValueError(f"k={k} outside 1..{n}")
    reduced = enumerate_occupations(m, n - k)
    index = occupation_index_map(reduced)
    rows = np.zeros((m**k, len(reduced)), dtype=complex)
    for row, modes in enumerate(product(range(m), repeat=k)):
        for occ, amp in fock.amplitudes.items():
            occ_list = list(occ)
            factor = 1.0
            ok = True
            for p in modes:
                if occ_list[p] == 0:
                    ok = False
                    break
                factor *= math.sqrt(occ_list[p])
                occ_list[p] -= 1
            if ok:
                rows[row, index[tuple(occ_list)]] += factor * amp
    scale = math.factorial(n - k) / math.factorial(n)
    dm = DensityMatrix(k=k, m=m, matrix=scale * (rows @ rows.conj().T),
                       basis=fock.basis)
    return dm.validate() if validate else dm


def trace_norm(matrix: np.ndarray) -> float:
    """Sum of absolute eigenvalues of a Hermitian matrix."""
    return float(np.sum(np.abs(np.linalg.eigvalsh(matrix))))


def trace_distance(a: DensityMatrix, b: DensityMatrix) -> float:
    """Trace norm of the difference of two equal-shape density matrices."""
    if a.matrix.shape != b.matrix.shape:
        raise ValueError(
            f"dimension mismatch: {a.matrix.shape} vs {b.matrix.shape}")
    return trace_norm(a.matrix - b.matrix)


def occupation_spectrum(dm: DensityMatrix):
    """Eigenpairs of a one-body marginal, sorted by nonincreasing occupation.

    Eigenvalues within the positivity tolerance below zero are clipped to 0
    in the returned list; the matrix itself is never modified.
    """
    if dm.k != 1:
        raise ValueError("occupation spectrum is defined for order-1 marginals")
    values, vectors = np.linalg.eigh(dm.matrix)
    order = np.argsort(values)[::-1]
    return [(max(float(values[i]), 0.0), vectors[:, i]) for i in order]


def numerical_rank(dm: DensityMatrix, tol: float = 1e-8) -> int:
    """Eigenvalues above tol times the largest one."""
    if tol <= 0:
        raise ValueError("tolerance must be positive")
    values = np.abs(dm.eigenvalues())
    top = values.max()
    if top == 0.0:
        return 0
    return int(np.sum(values > tol * top))
