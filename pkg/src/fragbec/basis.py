"""Truncated one-body mode space: harmonic-oscillator ladder times spinor levels."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import product

import numpy as np
from scipy.special import roots_hermite


@dataclass(frozen=True)
class ModeBasis:
    """d spatial oscillator levels replicated over s spinor levels.

    Combined modes are indexed p = n*s + sigma (spatial-major), with
    one-body eigenvalue nu*n independent of the spinor index.  The lowest
    eigenvalue is 0 and, for d >= 2, the second distinct one equals nu.
    """

    d: int
    s: int
    nu: float
    space_dim: int = 1
    eigenvalues: np.ndarray = field(default=None, repr=False)

    @property
    def m(self) -> int:
        """Total number of combined modes."""
        return self.d * self.s

    @property
    def gap_defined(self) -> bool:
        return self.d >= 2

    def mode_index(self, level: int, spinor: int) -> int:
        return level * self.s + spinor

    def spatial_level(self, p: int) -> int:
        return p // self.s

    def spinor_index(self, p: int) -> int:
        return p % self.s

    def spatial_eigenvalues(self) -> np.ndarray:
        """Eigenvalues of the spatial ladder only (length d)."""
        return self.nu * np.arange(self.d, dtype=float)

    def unit_orbital(self, p: int) -> np.ndarray:
        e = np.zeros(self.m, dtype=complex)
        e[p] = 1.0
        return e


def build_mode_basis(d: int, s: int, nu: float, space_dim: int = 1) -> ModeBasis:
    """Construct the gapped mode basis with eigenvalues nu*(spatial level)."""
    if d < 1:
        raise ValueError(f"need at least one spatial mode, got d={d}")
    if s < 1:
        raise ValueError(f"need at least one spinor level, got s={s}")
    if nu <= 0:
        raise ValueError(f"gap parameter must be positive, got nu={nu}")
    if space_dim not in (1, 3):
        raise ValueError(f"space_dim must be 1 or 3, got {space_dim}")
    if space_dim == 3 and d > 1:
        # Multi-mode ladders are only wired up for the 1D oscillator; in 3D
        # the truncation keeps the (nu-independent) ground mode alone.
        raise ValueError("space_dim=3 supports only d=1 (ground mode)")
    eigenvalues = nu * np.repeat(np.arange(d, dtype=float), s)
    return ModeBasis(d=d, s=s, nu=float(nu), space_dim=space_dim,
                     eigenvalues=eigenvalues)


def hermite_functions(nmax: int, x: np.ndarray) -> np.ndarray:
    """Orthonormal 1D oscillator eigenfunctions psi_0..psi_nmax at points x.

    Uses the stable three-term recurrence on the normalised functions, so
    values stay bounded even at large |x| or level index.
    """
    x = np.asarray(x, dtype=float)
    out = np.empty((nmax + 1, x.size), dtype=float)
    out[0] = np.pi ** (-0.25) * np.exp(-0.5 * x**2)
    if nmax >= 1:
        out[1] = np.sqrt(2.0) * x * out[0]
    for n in range(1, nmax):
        out[n + 1] = (np.sqrt(2.0 / (n + 1)) * x * out[n]
                      - np.sqrt(n / (n + 1)) * out[n - 1])
    return out


def gauss_hermite_rule(order: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Hermite nodes and weights rescaled for plain dx integration.

    Returns (x, w) with sum_i w_i f(x_i) ~= int f(x) dx for f decaying like
    the oscillator functions; w_i = w_i^GH * exp(x_i^2) stays representable
    for order <= 180.
    """
    if order > 180:
        raise ValueError("quadrature order above 180 underflows the weights")
    x, w = roots_hermite(order)
    return x, w * np.exp(x**2)


def enumerate_occupations(m: int, n: int) -> list[tuple[int, ...]]:
    """All occupation vectors of m modes holding n particles, ascending lexicographic."""
    if m == 1:
        return [(n,)]
    out = []
    for first in range(n + 1):
        for rest in enumerate_occupations(m - 1, n - first):
            out.append((first,) + rest)
    return out


def sector_dimension(m: int, n: int) -> int:
    return math.comb(n + m - 1, m - 1)


def occupation_index_map(occupations) -> dict[tuple[int, ...], int]:
    return {occ: i for i, occ in enumerate(occupations)}


def occupation_multiplicity(occ: tuple[int, ...]) -> int:
    """Number of distinct slot arrangements realising the occupation."""
    n = sum(occ)
    mult = math.factorial(n)
    for c in occ:
        mult //= math.factorial(c)
    return mult


def slot_assignments(populations: tuple[int, ...]):
    """Distinct assignments of labelled slots to groups of given sizes.

    Yields tuples of group labels, one per slot; the number of tuples is the
    multinomial coefficient of the populations.
    """
    n = sum(populations)
    if n == 0:
        yield ()
        return
    labels = list(range(len(populations)))

    def rec(prefix, remaining):
        if len(prefix) == n:
            yield tuple(prefix)
            return
        for lab in labels:
            if remaining[lab] > 0:
                remaining[lab] -= 1
                prefix.append(lab)
                yield from rec(prefix, remaining)
                prefix.pop()
                remaining[lab] += 1

    yield from rec([], list(populations))


def all_mode_tuples(m: int, k: int):
    """Ordered k-tuples of mode indices, row-major."""
    return product(range(m), repeat=k)
