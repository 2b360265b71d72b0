"""Closed-form k-body marginals of fragmented and phase-averaged states.

Coefficient tables are computed in exact rational arithmetic wherever the
inputs are integers, so the frame-diagonal trace distances remain meaningful
down to 1e-16 even at particle numbers around 10^9.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import reduce

import numpy as np

from .basis import ModeBasis, slot_assignments
from .density import DensityMatrix, density_from_matrix
from .states import FragmentationSpec, largest_remainder

KINDS = ("exact", "mixture", "limit", "incoherent")


def compositions(k: int, ell: int) -> list[tuple[int, ...]]:
    """Multi-indices a with sum(a) = k, ordered with leading entries descending.

    For ell = 2 the order is (k,0), (k-1,1), ..., (0,k), i.e. increasing
    occupation of the second level.
    """
    if ell == 1:
        return [(k,)]
    out = []
    for first in range(k, -1, -1):
        for rest in compositions(k - first, ell - 1):
            out.append((first,) + rest)
    return out


def multinomial(k: int, a: tuple[int, ...]) -> int:
    if sum(a) != k:
        raise ValueError(f"multi-index {a} does not sum to {k}")
    out = math.factorial(k)
    for aj in a:
        out //= math.factorial(aj)
    return out


def _check_index(populations: tuple[int, ...], a: tuple[int, ...], k: int):
    if len(a) != len(populations):
        raise ValueError(f"multi-index {a} has wrong length")
    if sum(a) != k:
        raise ValueError(f"multi-index {a} does not sum to k={k}")
    if k > sum(populations):
        raise ValueError(f"k={k} exceeds the particle number")
    for aj, nj in zip(a, populations):
        if not 0 <= aj <= min(nj, k):
            raise ValueError(f"index {a} outside 0..min(N_j, k) for populations {populations}")


def coeff_exact_fraction(populations, a, k=None) -> Fraction:
    populations = tuple(int(n) for n in populations)
    a = tuple(int(x) for x in a)
    k = sum(a) if k is None else k
    _check_index(populations, a, k)
    num = 1
    for nj, aj in zip(populations, a):
        num *= math.comb(nj, aj)
    return Fraction(num, math.comb(sum(populations), k))


def coeff_exact(populations, a, k=None) -> float:
    """Weight of the frame vector a in the k-marginal of the symmetric product."""
    return float(coeff_exact_fraction(populations, a, k))


def coeff_mixture_fraction(populations, a, k=None) -> Fraction:
    populations = tuple(int(n) for n in populations)
    a = tuple(int(x) for x in a)
    k = sum(a) if k is None else k
    if len(a) != len(populations) or sum(a) != k:
        raise ValueError(f"bad multi-index {a} for k={k}")
    if any(aj < 0 for aj in a):
        raise ValueError(f"negative entry in {a}")
    n = sum(populations)
    num = multinomial(k, a)
    for nj, aj in zip(populations, a):
        num *= nj**aj
    return Fraction(num, n**k)


def coeff_mixture(populations, a, k=None) -> float:
    """Weight of the frame vector a in the k-marginal of the phase-averaged mixture."""
    return float(coeff_mixture_fraction(populations, a, k))


def coeff_limit(fractions, a, k=None) -> float:
    """Large-N limit weight: multinomial(k; a) times prod n_j^a_j."""
    fractions = tuple(float(f) for f in fractions)
    a = tuple(int(x) for x in a)
    k = sum(a) if k is None else k
    if len(a) != len(fractions) or sum(a) != k or any(aj < 0 for aj in a):
        raise ValueError(f"bad multi-index {a} for k={k}")
    if abs(sum(fractions) - 1.0) > 1e-12:
        raise ValueError("fractions must sum to 1")
    out = float(multinomial(k, a))
    for nj, aj in zip(fractions, a):
        out *= nj**aj
    return out


@dataclass
class CoefficientTable:
    """Frame weights of one closed-form marginal, normalised to unit sum."""

    kind: str
    k: int
    entries: dict
    provenance: tuple
    exact: dict | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown kind {self.kind!r}")
        total = sum(self.entries.values())
        if any(w < 0 for w in self.entries.values()):
            raise ValueError("negative frame weight")
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"weights sum to {total}, not 1")

    def weight(self, a: tuple[int, ...]) -> float:
        return self.entries.get(tuple(a), 0.0)


@dataclass
class SymmetricFrameMarginal:
    """Operator diagonal in the symmetric-product frame of the spec's orbitals.

    `off_diagonal`, when set, is a dense Hermitian correction in the frame
    basis (indexed like `frame`) for operators that are not frame-diagonal;
    the closed forms produced here never need it.
    """

    k: int
    ell: int
    frame: list
    weights: CoefficientTable
    spec: FragmentationSpec | None = None
    off_diagonal: np.ndarray | None = None

    def to_dense(self, basis: ModeBasis, validate: bool = True) -> DensityMatrix:
        """Densify onto (C^m)^(x k) using the spec's orbital vectors."""
        if self.spec is None:
            raise ValueError("no fragmentation spec attached; cannot densify")
        orbitals = self.spec.orbital_matrix(basis)
        dim = basis.m**self.k
        mat = np.zeros((dim, dim), dtype=complex)
        vectors = {}
        for a in self.frame:
            w = self.weights.weight(a)
            if w == 0.0 and self.off_diagonal is None:
                continue
            v = frame_vector(orbitals, a)
            vectors[a] = v
            mat += w * np.outer(v, v.conj())
        if self.off_diagonal is not None:
            block = np.asarray(self.off_diagonal)
            if block.shape != (len(self.frame),) * 2:
                raise ValueError("off-diagonal block does not match the frame")
            for i, a in enumerate(self.frame):
                for j, b in enumerate(self.frame):
                    if i != j and block[i, j] != 0.0:
                        mat += block[i, j] * np.outer(vectors[a],
                                                      vectors[b].conj())
        return density_from_matrix(mat, self.k, basis.m, basis=basis,
                                   validate=validate)


def frame_vector(orbitals: np.ndarray, a: tuple[int, ...]) -> np.ndarray:
    """Normalised symmetric product of orbital rows with multiplicities a, flattened."""
    k = sum(a)
    shape = (orbitals.shape[1],) * k
    out = np.zeros(shape, dtype=complex)
    for labels in slot_assignments(tuple(a)):
        out += reduce(np.multiply.outer, (orbitals[lab] for lab in labels))
    return (out / math.sqrt(multinomial(k, tuple(a)))).reshape(-1)


def closed_form_marginal(spec: FragmentationSpec, k: int, kind: str) -> SymmetricFrameMarginal:
    """Frame-diagonal k-marginal of the fragmented state family.

    kind 'exact' and 'mixture' use integer populations, 'limit' uses the
    asymptotic fractions, 'incoherent' is the rank-ell statistical mixture of
    the pure condensates.
    """
    if k < 1:
        raise ValueError("marginal order must be >= 1")
    if kind not in KINDS:
        raise ValueError(f"kind must be one of {KINDS}, got {kind!r}")
    ell = spec.ell
    frame = compositions(k, ell)
    if kind == "exact":
        pops = spec.populations
        if pops is None:
            raise ValueError("exact marginal needs populations")
        if k > sum(pops):
            raise ValueError(f"k={k} exceeds N={sum(pops)}")
        exact = {a: coeff_exact_fraction(pops, a, k) for a in frame
                 if all(aj <= nj for aj, nj in zip(a, pops))}
        frame = list(exact)
        table = CoefficientTable(kind=kind, k=k, provenance=pops,
                                 entries={a: float(v) for a, v in exact.items()},
                                 exact=exact)
    elif kind == "mixture":
        pops = spec.populations
        if pops is None:
            raise ValueError("mixture marginal needs populations")
        exact = {a: coeff_mixture_fraction(pops, a, k) for a in frame}
        table = CoefficientTable(kind=kind, k=k, provenance=pops,
                                 entries={a: float(v) for a, v in exact.items()},
                                 exact=exact)
    elif kind == "limit":
        fractions = spec.effective_fractions()
        table = CoefficientTable(kind=kind, k=k, provenance=fractions,
                                 entries={a: coeff_limit(fractions, a, k) for a in frame})
    else:  # incoherent
        pops = spec.populations
        if pops is None:
            raise ValueError("incoherent marginal needs populations")
        n = sum(pops)
        corners = {}
        for j, nj in enumerate(pops):
            corner = tuple(k if i == j else 0 for i in range(ell))
            corners[corner] = Fraction(nj, n)
        frame = list(corners)
        table = CoefficientTable(kind=kind, k=k, provenance=pops,
                                 entries={a: float(v) for a, v in corners.items()},
                                 exact=corners)
    return SymmetricFrameMarginal(k=k, ell=ell, frame=frame, weights=table,
                                  spec=spec)


def marginal_distance_closed_form(spec: FragmentationSpec, k: int,
                                  kind_a: str, kind_b: str) -> float:
    """Trace distance of two frame-diagonal marginals: sum of weight gaps.

    Both operators commute (they share the orthonormal frame), so the trace
    distance is the l1 distance of the weight tables; computed in rational
    arithmetic whenever both tables are rational.
    """
    ma = closed_form_marginal(spec, k, kind_a)
    mb = closed_form_marginal(spec, k, kind_b)
    if ma.ell != mb.ell:
        raise ValueError("frame mismatch between the two marginals")
    keys = set(ma.weights.entries) | set(mb.weights.entries)
    if ma.weights.exact is not None and mb.weights.exact is not None:
        total = sum(abs(ma.weights.exact.get(a, 0) - mb.weights.exact.get(a, 0))
                    for a in keys)
        return float(total)
    return float(sum(abs(ma.weights.weight(a) - mb.weights.weight(a)) for a in keys))


@dataclass
class LemmaBoundFit:
    """Plateau of N * max_a |c_a - c_mix_a| over an N grid."""

    k: int
    grid: tuple
    values: tuple
    bound: float
    stabilized: bool


def scaled_gap_values(k: int, fractions, n_grid) -> list[float]:
    """N * max_a |c_a - c_mix_a| with largest-remainder populations, per grid point."""
    values = []
    for n in n_grid:
        pops = largest_remainder(tuple(fractions), int(n))
        frame = compositions(k, len(pops))
        gap = Fraction(0)
        for a in frame:
            ce = (coeff_exact_fraction(pops, a, k)
                  if all(aj <= nj for aj, nj in zip(a, pops)) else Fraction(0))
            cm = coeff_mixture_fraction(pops, a, k)
            gap = max(gap, abs(ce - cm))
        values.append(float(n * gap))
    return values


def check_plateau(grid, values, rel_tol: float = 0.05) -> bool:
    """True when the values spread by < rel_tol over the top decade of the grid."""
    nmax = max(grid)
    window = [v for g, v in zip(grid, values) if g >= nmax / 10]
    top = max(window)
    if top == 0.0:
        return True
    return (max(window) - min(window)) / top < rel_tol


def lemma_bound_fit(k: int, fractions, n_grid) -> LemmaBoundFit:
    """Empirical constant bounding N times the exact/mixture coefficient gap."""
    n_grid = tuple(int(n) for n in n_grid)
    if len(n_grid) < 4:
        raise ValueError("need at least 4 grid points")
    if any(n < 2 * k for n in n_grid):
        raise ValueError(f"all grid points must be >= 2k = {2*k}")
    values = scaled_gap_values(k, fractions, n_grid)
    return LemmaBoundFit(k=k, grid=n_grid, values=tuple(values),
                         bound=max(values),
                         stabilized=check_plateau(n_grid, values))


def spin_marginal_quadrature(fractions, k: int, m_theta: int,
                             validate: bool = True) -> DensityMatrix:
    """Phase-average of the k-fold spinor projector on a uniform theta grid.

    The integrand is a trigonometric polynomial of degree <= k per angle, so
    any m_theta >= 2k+2 nodes per angle reproduce the binomial closed form to
    rounding accuracy; smaller grids are rejected rather than silently wrong.
    """
    n1, n2 = (float(f) for f in fractions)
    if abs(n1 + n2 - 1.0) > 1e-12:
        raise ValueError("fractions must sum to 1")
    if m_theta < 2 * k + 2:
        raise ValueError(
            f"m_theta={m_theta} below the exactness threshold {2*k+2}")
    theta = 2.0 * np.pi * np.arange(m_theta) / m_theta
    c1 = math.sqrt(n1) * np.exp(-1j * theta)
    c2 = math.sqrt(n2) * np.exp(-1j * theta)
    # node vectors over the product grid, shape (m_theta^2, 2)
    v = np.stack([np.repeat(c1, m_theta),
                  np.tile(c2, m_theta)], axis=1)
    w = v
    for _ in range(k - 1):
        w = np.einsum("ni,nj->nij", w, v).reshape(v.shape[0], -1)
    mat = np.einsum("np,nq->pq", w, w.conj()) / v.shape[0]
    return density_from_matrix(mat, k, 2, validate=validate)
