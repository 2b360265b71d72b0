"""Frozen-gap effective dynamics: per-phase kappa system and averaged marginals."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .basis import ModeBasis
from .density import DensityMatrix, density_from_matrix
from .hartree import ModeCoefficients, PotentialSpec, evolve_modes, interaction_tensor
from .marginals import spin_marginal_quadrature

KAPPA_NORM_TOL = 1e-9
K_PSD_TOL = -1e-10


@dataclass(frozen=True)
class ThetaGrid:
    """Uniform phase nodes on [0, 2pi) per angle, periodic endpoint excluded."""

    m_theta: int

    def __post_init__(self):
        if self.m_theta < 2:
            raise ValueError("need at least two nodes per angle")

    @property
    def nodes(self) -> np.ndarray:
        return 2.0 * np.pi * np.arange(self.m_theta) / self.m_theta

    def pairs(self) -> np.ndarray:
        """All (theta_1, theta_2) node pairs, shape (m_theta^2, 2), row-major."""
        t = self.nodes
        return np.stack([np.repeat(t, self.m_theta),
                         np.tile(t, self.m_theta)], axis=1)


@dataclass
class KappaTrajectory:
    """Solution samples of the two-level phase system for one theta pair."""

    theta: tuple[float, float]
    times: np.ndarray
    kappa: np.ndarray  # shape (len(times), 2)

    def check(self, tol: float = KAPPA_NORM_TOL):
        norms = np.sum(np.abs(self.kappa) ** 2, axis=1)
        worst = float(np.max(np.abs(norms - 1.0)))
        if not worst <= tol:  # also trips on NaN from an unstable step
            raise RuntimeError(f"kappa norm drifted by {worst:.2e}; reduce dt")

    def at(self, t: float) -> np.ndarray:
        idx = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[idx] - t) > 1e-9:
            raise ValueError(f"time {t} not on the trajectory grid")
        return self.kappa[idx]


@dataclass
class KMatrix:
    """Phase-averaged 2x2 coherence matrix of the kappa amplitudes."""

    t: float
    entries: np.ndarray

    def validate(self, quad_tol: float = 1e-8) -> "KMatrix":
        k = self.entries
        if np.max(np.abs(k - k.conj().T)) > 1e-12:
            raise ValueError("K is not Hermitian")
        if abs(np.trace(k).real - 1.0) > quad_tol:
            raise ValueError(f"K trace {np.trace(k).real} deviates from 1")
        low = float(np.linalg.eigvalsh(k)[0])
        if low < K_PSD_TOL:
            raise ValueError(f"K has negative eigenvalue {low:.2e}")
        return self


def toy_orbitals(basis: ModeBasis) -> np.ndarray:
    """Ground spatial mode tensored with the first two spinor levels, shape (2, d, s)."""
    if basis.s < 2:
        raise ValueError("toy orbitals need at least two spinor levels")
    orbs = np.zeros((2, basis.d, basis.s), dtype=complex)
    orbs[0, 0, 0] = 1.0
    orbs[1, 0, 1] = 1.0
    return orbs


def _as_orbital_array(orbitals, basis: ModeBasis) -> np.ndarray:
    arr = np.asarray(orbitals, dtype=complex)
    if arr.shape == (2, basis.m):
        arr = arr.reshape(2, basis.d, basis.s)
    if arr.shape != (2, basis.d, basis.s):
        raise ValueError(f"expected two orbitals over the {basis.d}x{basis.s} "
                         f"mode space, got shape {arr.shape}")
    gram = np.einsum("jds,kds->jk", arr.conj(), arr)
    if not np.allclose(gram, np.eye(2), atol=1e-10):
        raise ValueError("orbitals are not orthonormal")
    return arr


def _is_toy_structured(orbitals: np.ndarray) -> bool:
    """True when both orbitals share one spatial profile times orthonormal spinors."""
    u = None
    for j in range(2):
        mat = orbitals[j]  # (d, s)
        left, sing, _ = np.linalg.svd(mat)
        if sing.size > 1 and sing[1] > 1e-10:
            return False
        if u is None:
            u = left[:, 0]
        else:
            if 1.0 - abs(np.vdot(u, left[:, 0])) > 1e-10:
                return False
    return True


def _kappa_rhs(kappa: np.ndarray, orbitals: np.ndarray,
               tensor: np.ndarray) -> np.ndarray:
    """Batched right-hand side -i <phi_j, (V*|Phi|^2) Phi> for kappa (nodes, 2)."""
    phi = np.einsum("nj,jds->nds", kappa, orbitals)
    dens = np.einsum("nqt,nst->nqs", phi.conj(), phi)
    force = np.einsum("pqrs,nqs,nrt->npt", tensor, dens, phi, optimize=True)
    return -1j * np.einsum("jpt,npt->nj", orbitals.conj(), force)


def _rk4(state: np.ndarray, rhs, dt: float, n_steps: int, sample_every: int):
    samples = [state.copy()]
    for step in range(1, n_steps + 1):
        k1 = rhs(state)
        k2 = rhs(state + 0.5 * dt * k1)
        k3 = rhs(state + 0.5 * dt * k2)
        k4 = rhs(state + dt * k3)
        state = state + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if step % sample_every == 0 or step == n_steps:
            samples.append(state.copy())
    return samples


def _steps_for(big_t: float, dt: float) -> int:
    if dt <= 0 or big_t < 0:
        raise ValueError("need dt > 0 and T >= 0")
    n = int(round(big_t / dt)) if big_t > 0 else 0
    if big_t > 0 and abs(n * dt - big_t) > 1e-9 * max(1.0, big_t):
        raise ValueError("T must be an integer multiple of dt")
    return n


def kappa_evolve(theta: tuple[float, float], orbitals, basis: ModeBasis,
                 potential: PotentialSpec, fractions, big_t: float, dt: float,
                 tensor: np.ndarray | None = None,
                 sample_every: int = 1) -> KappaTrajectory:
    """Integrate the two-level phase system from sqrt(n_j) e^{-i theta_j}."""
    orbs = _as_orbital_array(orbitals, basis)
    if tensor is None:
        tensor = interaction_tensor(potential, basis)
    n1, n2 = (float(f) for f in fractions)
    if abs(n1 + n2 - 1.0) > 1e-12:
        raise ValueError("fractions must sum to 1")
    n_steps = _steps_for(big_t, dt)
    kappa0 = np.array([[math.sqrt(n1) * np.exp(-1j * theta[0]),
                        math.sqrt(n2) * np.exp(-1j * theta[1])]])
    samples = _rk4(kappa0, lambda s: _kappa_rhs(s, orbs, tensor),
                   dt, n_steps, sample_every)
    times = _sample_times(big_t, dt, n_steps, sample_every)
    traj = KappaTrajectory(theta=(float(theta[0]), float(theta[1])),
                           times=times,
                           kappa=np.array([s[0] for s in samples]))
    traj.check()
    return traj


def _sample_times(big_t: float, dt: float, n_steps: int, sample_every: int):
    steps = [0] + [s for s in range(1, n_steps + 1)
                   if s % sample_every == 0 or s == n_steps]
    # drop a duplicate of the final step
    steps = sorted(set(steps))
    return np.array([s * dt for s in steps])


def evolve_theta_grid(grid: ThetaGrid, orbitals, basis: ModeBasis,
                      potential: PotentialSpec, fractions, big_t: float,
                      dt: float, tensor: np.ndarray | None = None,
                      sample_every: int = 1) -> list[KappaTrajectory]:
    """Kappa trajectories for every node pair, integrated as one batch."""
    orbs = _as_orbital_array(orbitals, basis)
    if tensor is None:
        tensor = interaction_tensor(potential, basis)
    n1, n2 = (float(f) for f in fractions)
    if abs(n1 + n2 - 1.0) > 1e-12:
        raise ValueError("fractions must sum to 1")
    n_steps = _steps_for(big_t, dt)
    pairs = grid.pairs()
    kappa0 = np.stack([math.sqrt(n1) * np.exp(-1j * pairs[:, 0]),
                       math.sqrt(n2) * np.exp(-1j * pairs[:, 1])], axis=1)
    samples = _rk4(kappa0, lambda s: _kappa_rhs(s, orbs, tensor),
                   dt, n_steps, sample_every)
    times = _sample_times(big_t, dt, n_steps, sample_every)
    stacked = np.array(samples)  # (n_samples, nodes, 2)
    out = []
    for node, (t1, t2) in enumerate(pairs):
        traj = KappaTrajectory(theta=(float(t1), float(t2)), times=times,
                               kappa=stacked[:, node, :])
        traj.check()
        out.append(traj)
    return out


def assemble_K(trajectories: list[KappaTrajectory], t: float) -> KMatrix:
    """Phase average of kappa_j conj(kappa_l) over the node list at time t."""
    if not trajectories:
        raise ValueError("no trajectories given")
    times = trajectories[0].times
    for traj in trajectories:
        if traj.times.shape != times.shape or not np.allclose(traj.times, times):
            raise ValueError("trajectories do not share a common time grid")
    kap = np.array([traj.at(t) for traj in trajectories])  # (nodes, 2)
    entries = np.einsum("nj,nl->jl", kap, kap.conj()) / kap.shape[0]
    return KMatrix(t=t, entries=entries).validate()


def gamma_infinite_gap(k_matrix: KMatrix, orbitals, basis: ModeBasis) -> DensityMatrix:
    """One-body marginal sum_jl K_jl |phi_j><phi_l| on the mode space."""
    orbs = _as_orbital_array(orbitals, basis).reshape(2, basis.m)
    mat = np.einsum("jl,jp,lq->pq", k_matrix.entries, orbs, orbs.conj())
    return density_from_matrix(mat, 1, basis.m, basis=basis)


def _tensor_power_rows(vectors: np.ndarray, k: int) -> np.ndarray:
    """Rows (nodes, dim^k): k-fold tensor power of each row vector."""
    out = vectors
    for _ in range(k - 1):
        out = np.einsum("ni,nj->nij", out, vectors).reshape(vectors.shape[0], -1)
    return out


def interleaved_product(spat: np.ndarray, spin: np.ndarray, k: int,
                        d: int, s: int) -> np.ndarray:
    """Tensor product of k-particle spatial and spinor operators.

    Reorders (n_1..n_k, sigma_1..sigma_k) into the per-particle combined
    index (n_1 sigma_1, ..., n_k sigma_k) with p = n*s + sigma.
    """
    a = spat.reshape((d,) * k + (d,) * k)
    b = spin.reshape((s,) * k + (s,) * k)
    out = np.multiply.outer(a, b)
    # axes: [n_row (k), n_col (k), sig_row (k), sig_col (k)]
    row = [axis for i in range(k) for axis in (i, 2 * k + i)]
    col = [axis for i in range(k) for axis in (k + i, 3 * k + i)]
    out = np.transpose(out, row + col)
    dim = (d * s) ** k
    return out.reshape(dim, dim)


def gamma_mean_field_k(k: int, t: float, nu: float, fractions,
                       potential: PotentialSpec, basis: ModeBasis,
                       m_theta: int = 64, path: str = "factorized",
                       dt: float = 1e-3, orbitals=None,
                       tensor: np.ndarray | None = None) -> DensityMatrix:
    """Phase-averaged k-marginal of the finite-gap mean-field flow.

    path 'direct' integrates the full spinor-valued mode flow per theta node
    and averages the k-fold projectors; 'factorized' evolves the scalar
    spatial orbital once and tensors it with the closed-form spinor average.
    Both return the same operator up to solver tolerance.
    """
    if basis.nu != nu:
        raise ValueError("basis gap parameter disagrees with nu")
    if k < 1:
        raise ValueError("marginal order must be >= 1")
    if m_theta < 2 * k + 2:
        raise ValueError(f"m_theta={m_theta} below the exactness threshold {2*k+2}")
    orbs = toy_orbitals(basis) if orbitals is None else _as_orbital_array(orbitals, basis)
    if tensor is None:
        tensor = interaction_tensor(potential, basis)
    n1, n2 = (float(f) for f in fractions)
    if abs(n1 + n2 - 1.0) > 1e-12:
        raise ValueError("fractions must sum to 1")
    n_steps = _steps_for(t, dt)

    if path == "factorized":
        if not _is_toy_structured(orbs):
            raise ValueError("factorized path needs a shared spatial profile "
                             "times orthonormal spinors")
        spatial0 = np.linalg.svd(orbs[0])[0][:, 0]
        c0 = ModeCoefficients(basis=basis, c=spatial0.astype(complex))
        traj = evolve_modes(c0, tensor, t, dt, sample_every=max(n_steps, 1))
        u = traj[-1].c
        uk = u.copy()
        for _ in range(k - 1):
            uk = np.multiply.outer(uk, u).reshape(-1)
        spat = np.outer(uk, uk.conj())
        spin = spin_marginal_quadrature((n1, n2), k, m_theta).matrix
        mat = interleaved_product(spat, spin, k, basis.d, basis.s)
        return density_from_matrix(mat, k, basis.m, basis=basis)

    if path != "direct":
        raise ValueError(f"unknown path {path!r}")
    pairs = ThetaGrid(m_theta).pairs()
    c0 = np.einsum("nj,jds->nds",
                   np.stack([math.sqrt(n1) * np.exp(-1j * pairs[:, 0]),
                             math.sqrt(n2) * np.exp(-1j * pairs[:, 1])], axis=1),
                   orbs)
    eps = basis.spatial_eigenvalues()

    def rhs(state):
        dens = np.einsum("nqt,nst->nqs", state.conj(), state)
        force = np.einsum("pqrs,nqs,nrt->npt", tensor, dens, state, optimize=True)
        return -1j * (eps[None, :, None] * state + force)

    final = _rk4(c0, rhs, dt, n_steps, sample_every=max(n_steps, 1))[-1]
    rows = _tensor_power_rows(final.reshape(len(pairs), basis.m), k)
    mat = np.einsum("np,nq->pq", rows, rows.conj()) / len(pairs)
    return density_from_matrix(mat, k, basis.m, basis=basis)
