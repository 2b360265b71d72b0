"""Exact N-boson propagation in the truncated mode sector, and its marginals."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .basis import ModeBasis, enumerate_occupations, occupation_index_map, sector_dimension
from .density import DensityMatrix, density_from_matrix, krdm_from_fock, trace_distance
from .hartree import ModeCoefficients, PotentialSpec, evolve_modes, interaction_tensor
from .infinite_gap import gamma_mean_field_k, interleaved_product
from .states import FockState, largest_remainder

DENSE_DIM_CAP = 20_000
SPARSE_DIM_CAP = 1_000_000
HERMITICITY_TOL = 1e-12


@dataclass
class HamiltonianSpec:
    """Ingredients of the mean-field N-boson Hamiltonian on the mode sector."""

    basis: ModeBasis
    potential: PotentialSpec
    n: int
    tensor: np.ndarray | None = None
    dense_cap: int = DENSE_DIM_CAP
    sparse_cap: int = SPARSE_DIM_CAP

    def spatial_tensor(self) -> np.ndarray:
        if self.tensor is None:
            self.tensor = interaction_tensor(self.potential, self.basis)
        return self.tensor


@dataclass
class SectorMatrix:
    """Hamiltonian on the fixed-N occupation sector, lexicographically indexed."""

    basis: ModeBasis
    n: int
    occupations: list
    matrix: object  # ndarray (dense) or scipy sparse
    dense: bool
    _eig: tuple | None = field(default=None, repr=False)

    @property
    def dim(self) -> int:
        return len(self.occupations)

    def index_map(self) -> dict:
        return occupation_index_map(self.occupations)

    def eigensystem(self):
        if self._eig is None:
            if not self.dense:
                raise RuntimeError("eigensystem is only kept for the dense path")
            w, u = np.linalg.eigh(self.matrix)
            self._eig = (w, u)
        return self._eig


def _encode(occs: np.ndarray, base: int) -> np.ndarray:
    powers = base ** np.arange(occs.shape[1], dtype=np.int64)
    return occs @ powers


def build_hamiltonian(spec: HamiltonianSpec) -> SectorMatrix:
    """Second-quantised H = sum eps_p n_p + (1/2N) sum V a+ a+ a a, spin-diagonal."""
    basis, n = spec.basis, spec.n
    m = basis.m
    dim = sector_dimension(m, n)
    if dim > spec.sparse_cap:
        raise ValueError(f"sector dimension {dim} exceeds the cap {spec.sparse_cap}")
    dense = dim <= spec.dense_cap
    occ_list = enumerate_occupations(m, n)
    occs = np.array(occ_list, dtype=np.int64)
    base = n + 1
    code_to_idx = {int(c): i for i, c in enumerate(_encode(occs, base))}
    eps = np.asarray(basis.eigenvalues)
    diag = occs @ eps

    vmat = spec.spatial_tensor()
    scale = 1.0 / (2.0 * n)
    rows, cols, vals = [], [], []
    d, s = basis.d, basis.s
    idx = np.arange(dim)
    for p in range(d):
        for q in range(d):
            for r in range(d):
                for t in range(d):
                    v = vmat[p, q, r, t]
                    if abs(v) < 1e-16:
                        continue
                    for sig in range(s):
                        for tau in range(s):
                            cp = basis.mode_index(p, sig)
                            cq = basis.mode_index(q, tau)
                            cr = basis.mode_index(r, sig)
                            ct = basis.mode_index(t, tau)
                            # a+_cp a+_cq a_ct a_cr acting on each sector state
                            nr = occs[:, cr]
                            nt = occs[:, ct] - (ct == cr)
                            mask = (nr > 0) & (nt > 0)
                            if not mask.any():
                                continue
                            amp = np.sqrt(nr[mask] * nt[mask])
                            new = occs[mask].copy()
                            new[:, cr] -= 1
                            new[:, ct] -= 1
                            nq = new[:, cq] + 1
                            new[:, cq] += 1
                            npp = new[:, cp] + 1
                            new[:, cp] += 1
                            amp = amp * np.sqrt(nq * npp)
                            target = [code_to_idx[int(c)] for c in _encode(new, base)]
                            rows.extend(target)
                            cols.extend(idx[mask])
                            vals.extend(scale * v * amp)
    interaction = sp.coo_matrix(
        (np.array(vals, dtype=complex), (rows, cols)), shape=(dim, dim)).tocsr()
    hmat = interaction + sp.diags(diag.astype(complex))
    herm = abs(hmat - hmat.conj().T)
    if herm.count_nonzero() and herm.max() > HERMITICITY_TOL:
        raise RuntimeError("assembled Hamiltonian is not Hermitian")
    matrix = hmat.toarray() if dense else hmat
    return SectorMatrix(basis=basis, n=n, occupations=occ_list,
                        matrix=matrix, dense=dense)


def lanczos_expm(matvec, v: np.ndarray, t: float, tol: float = 1e-10,
                 m: int = 40, max_restarts: int = 10_000) -> np.ndarray:
    """exp(-i t H) v for Hermitian H, by restarted Lanczos substeps.

    Each substep projects onto a fresh Krylov space; the substep length is
    halved until the standard residual estimate drops below tol.
    """
    v = v.astype(complex)
    remaining = float(t)
    sign = 1.0 if remaining >= 0 else -1.0
    remaining = abs(remaining)
    restarts = 0
    while remaining > 1e-15:
        restarts += 1
        if restarts > max_restarts:
            raise RuntimeError("Lanczos propagation failed to converge")
        beta0 = np.linalg.norm(v)
        dim = v.size
        order = min(m, dim)
        basis_vecs = np.zeros((order + 1, dim), dtype=complex)
        alpha = np.zeros(order)
        beta = np.zeros(order + 1)
        basis_vecs[0] = v / beta0
        breakdown = order
        for j in range(order):
            w = matvec(basis_vecs[j])
            if j > 0:
                w = w - beta[j] * basis_vecs[j - 1]
            alpha[j] = np.real(np.vdot(basis_vecs[j], w))
            w = w - alpha[j] * basis_vecs[j]
            # one step of reorthogonalisation keeps the basis clean
            w = w - basis_vecs[: j + 1].conj() @ w @ basis_vecs[: j + 1]
            beta[j + 1] = np.linalg.norm(w)
            if beta[j + 1] < 1e-14:
                breakdown = j + 1
                break
            basis_vecs[j + 1] = w / beta[j + 1]
        order = breakdown
        tri = (np.diag(alpha[:order])
               + np.diag(beta[1:order], 1) + np.diag(beta[1:order], -1))
        tau = remaining
        while True:
            w, u = np.linalg.eigh(tri)
            small = u @ (np.exp(-1j * sign * tau * w) * u[0].conj())
            err = beta[order] * abs(small[-1]) if order < dim else 0.0
            if err <= tol or tau < 1e-12:
                break
            tau /= 2.0
        v = beta0 * (small @ basis_vecs[:order])
        remaining -= tau
    return v


def evolve_exact(h: SectorMatrix, psi0: FockState, t: float,
                 tol: float = 1e-10) -> FockState:
    """Propagate a sector state: dense eigendecomposition or Lanczos."""
    if psi0.basis.m != h.basis.m or psi0.n != h.n:
        raise ValueError("state does not live in the Hamiltonian's sector")
    index = h.index_map()
    vec = np.zeros(h.dim, dtype=complex)
    for occ, amp in psi0.amplitudes.items():
        vec[index[occ]] = amp
    if t != 0.0:
        if h.dense:
            w, u = h.eigensystem()
            vec = u @ (np.exp(-1j * t * w) * (u.conj().T @ vec))
        else:
            vec = lanczos_expm(lambda x: h.matrix @ x, vec, t, tol=tol)
    drift = abs(np.linalg.norm(vec) - 1.0)
    if not drift <= 1e-9:
        raise RuntimeError(f"propagation norm drifted by {drift:.2e}")
    amps = {occ: complex(vec[i]) for occ, i in index.items() if vec[i] != 0}
    return FockState(basis=h.basis, n=h.n, amplitudes=amps)


def toy_initial_fock(basis: ModeBasis, populations: tuple[int, int]) -> FockState:
    """Ground spatial mode with the two spinor levels holding N_1 and N_2 bosons."""
    if basis.s < 2:
        raise ValueError("toy initial state needs two spinor levels")
    occ = [0] * basis.m
    occ[basis.mode_index(0, 0)] = populations[0]
    occ[basis.mode_index(0, 1)] = populations[1]
    return FockState(basis=basis, n=sum(populations),
                     amplitudes={tuple(occ): 1.0 + 0.0j})


def split_spatial_spin(dm: DensityMatrix, d: int, s: int):
    """Partial traces of a combined-mode marginal onto its spatial and spinor factors."""
    k = dm.k
    t = dm.matrix.reshape((d, s) * (2 * k))
    row_n = [2 * i for i in range(k)]
    row_s = [2 * i + 1 for i in range(k)]
    col_n = [2 * k + 2 * i for i in range(k)]
    col_s = [2 * k + 2 * i + 1 for i in range(k)]
    t = np.transpose(t, row_n + row_s + col_n + col_s)
    t = t.reshape(d**k, s**k, d**k, s**k)
    spat = np.einsum("isjs->ij", t)
    spin = np.einsum("ipiq->pq", t)
    return spat, spin


def factorization_check(psi: FockState, k: int) -> float:
    """Trace distance between the k-marginal and its spatial x spinor factorisation."""
    basis = psi.basis
    dm = krdm_from_fock(psi, k)
    if basis.s == 1:
        return 0.0
    spat, spin = split_spatial_spin(dm, basis.d, basis.s)
    product = interleaved_product(spat, spin, k, basis.d, basis.s)
    ref = density_from_matrix(product, k, basis.m, basis=basis, validate=False)
    return trace_distance(dm, ref)


@dataclass
class SweepPoint:
    n: int
    populations: tuple
    distance: float
    factorization: float
    residue: float


@dataclass
class SweepResult:
    """Per-N distances plus the list of N values skipped for exceeding the cap."""

    points: list
    skipped: list

    def __iter__(self):
        return iter(self.points)


def convergence_sweep(n_list, k: int, t: float, nu: float, fractions,
                      potential: PotentialSpec, d: int = 3, s: int = 2,
                      dt: float = 1e-3, dense_cap: int = DENSE_DIM_CAP,
                      sparse_cap: int = SPARSE_DIM_CAP,
                      quad_order: int | None = None,
                      hamiltonians: dict | None = None) -> SweepResult:
    """Distance of exact k-marginals to the factorised mean-field reference, per N.

    The reference pairs the mode-truncated Hartree orbital with the
    limit-fraction spinor average, so both sides live in the same truncation.
    N values whose sector exceeds the cap are reported as skipped rather than
    aborting the sweep.  Pass a dict as `hamiltonians` to share sector
    matrices across calls.
    """
    from .basis import build_mode_basis

    basis = build_mode_basis(d, s, nu)
    tensor = interaction_tensor(potential, basis, quad_order)
    reference = gamma_mean_field_k(k, t, nu, fractions, potential, basis,
                                   m_theta=2 * k + 2, path="factorized",
                                   dt=dt, tensor=tensor)
    points, skipped = [], []
    for n in n_list:
        n = int(n)
        if sector_dimension(basis.m, n) > sparse_cap:
            skipped.append(n)
            continue
        pops = largest_remainder(tuple(fractions), n)
        if hamiltonians is not None and n in hamiltonians:
            h = hamiltonians[n]
        else:
            h = build_hamiltonian(HamiltonianSpec(
                basis=basis, potential=potential, n=n, tensor=tensor,
                dense_cap=dense_cap, sparse_cap=sparse_cap))
            if hamiltonians is not None:
                hamiltonians[n] = h
        psi_t = evolve_exact(h, toy_initial_fock(basis, (pops[0], pops[1])), t)
        dm = krdm_from_fock(psi_t, k)
        residue = max(abs(pops[0] / n - fractions[0]),
                      abs(pops[1] / n - fractions[1]))
        points.append(SweepPoint(
            n=n, populations=pops,
            distance=trace_distance(dm, reference),
            factorization=factorization_check(psi_t, k),
            residue=residue))
    return SweepResult(points=points, skipped=skipped)
