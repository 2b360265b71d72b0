import math

import numpy as np
import pytest

from fragbec.basis import build_mode_basis
from fragbec.density import numerical_rank, trace_distance
from fragbec.hartree import PotentialSpec, interaction_tensor
from fragbec.infinite_gap import (KMatrix, ThetaGrid, assemble_K,
                                  evolve_theta_grid, gamma_infinite_gap,
                                  gamma_mean_field_k, interleaved_product,
                                  kappa_evolve, toy_orbitals)


@pytest.fixture(scope="module")
def setup(gaussian_potential):
    basis = build_mode_basis(3, 2, 10.0)
    tensor = interaction_tensor(gaussian_potential, basis)
    return basis, tensor, toy_orbitals(basis)


def random_orbitals(basis, seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(basis.m, 2)) + 1j * rng.normal(size=(basis.m, 2))
    q, _ = np.linalg.qr(a)
    return q.T.reshape(2, basis.d, basis.s)


def test_kappa_constant_for_zero_potential(setup, zero_potential):
    basis, _, orbs = setup
    traj = kappa_evolve((0.4, 1.9), orbs, basis, zero_potential, (0.3, 0.7),
                        1.0, 1e-2)
    assert np.max(np.abs(traj.kappa - traj.kappa[0])) < 1e-12


def test_kappa_toy_global_phase(setup, gaussian_potential):
    basis, tensor, orbs = setup
    traj = kappa_evolve((0.5, 1.1), orbs, basis, gaussian_potential,
                        (0.3, 0.7), 1.0, 1e-3, tensor=tensor)
    g = 1.0 / math.sqrt(2.0)
    for i, t in enumerate(traj.times):
        expect = traj.kappa[0] * np.exp(-1j * g * t)
        assert np.max(np.abs(traj.kappa[i] - expect)) < 1e-8


def test_kappa_norm_conserved_random_orbitals(setup, gaussian_potential):
    basis, tensor, _ = setup
    orbs = random_orbitals(basis, seed=4)
    traj = kappa_evolve((1.0, 2.0), orbs, basis, gaussian_potential,
                        (0.4, 0.6), 1.0, 1e-3, tensor=tensor)
    norms = np.sum(np.abs(traj.kappa) ** 2, axis=1)
    assert np.max(np.abs(norms - 1.0)) < 1e-9


def test_initial_K_is_diagonal(setup, gaussian_potential):
    basis, tensor, orbs = setup
    trajs = evolve_theta_grid(ThetaGrid(6), orbs, basis, gaussian_potential,
                              (0.25, 0.75), 0.0, 1e-2, tensor=tensor)
    k0 = assemble_K(trajs, 0.0)
    assert np.max(np.abs(k0.entries - np.diag([0.25, 0.75]))) < 1e-14


def test_toy_K_stays_diagonal(setup, gaussian_potential):
    basis, tensor, orbs = setup
    trajs = evolve_theta_grid(ThetaGrid(8), orbs, basis, gaussian_potential,
                              (0.3, 0.7), 1.0, 1e-3, tensor=tensor,
                              sample_every=250)
    for t in (0.25, 0.5, 1.0):
        kmat = assemble_K(trajs, t)
        assert np.max(np.abs(kmat.entries - np.diag([0.3, 0.7]))) < 1e-10


def test_quadrature_doubling_toy(setup, gaussian_potential):
    basis, tensor, orbs = setup
    k8 = assemble_K(evolve_theta_grid(ThetaGrid(8), orbs, basis,
                                      gaussian_potential, (0.3, 0.7), 0.5,
                                      1e-3, tensor=tensor, sample_every=500),
                    0.5)
    k16 = assemble_K(evolve_theta_grid(ThetaGrid(16), orbs, basis,
                                       gaussian_potential, (0.3, 0.7), 0.5,
                                       1e-3, tensor=tensor, sample_every=500),
                     0.5)
    assert np.max(np.abs(k8.entries - k16.entries)) < 1e-10


def test_quadrature_doubling_generic(setup, gaussian_potential):
    basis, tensor, _ = setup
    orbs = random_orbitals(basis, seed=12)
    k32 = assemble_K(evolve_theta_grid(ThetaGrid(32), orbs, basis,
                                       gaussian_potential, (0.4, 0.6), 0.5,
                                       2e-3, tensor=tensor, sample_every=250),
                     0.5)
    k64 = assemble_K(evolve_theta_grid(ThetaGrid(64), orbs, basis,
                                       gaussian_potential, (0.4, 0.6), 0.5,
                                       2e-3, tensor=tensor, sample_every=250),
                     0.5)
    assert np.max(np.abs(k32.entries - k64.entries)) < 1e-6


def test_gamma_infinite_gap_rank_two(setup, gaussian_potential):
    basis, tensor, orbs = setup
    trajs = evolve_theta_grid(ThetaGrid(8), orbs, basis, gaussian_potential,
                              (0.3, 0.7), 1.0, 1e-3, tensor=tensor,
                              sample_every=250)
    for t in (0.0, 0.25, 0.5, 1.0):
        gamma = gamma_infinite_gap(assemble_K(trajs, t), orbs, basis)
        assert numerical_rank(gamma, 1e-8) == 2
        assert abs(np.trace(gamma.matrix).real - 1.0) < 1e-12


def test_gamma_infinite_gap_degenerate_rank_one(setup, gaussian_potential):
    basis, _, orbs = setup
    kmat = KMatrix(t=0.0, entries=np.diag([1.0, 0.0]).astype(complex))
    gamma = gamma_infinite_gap(kmat, orbs, basis)
    assert numerical_rank(gamma, 1e-8) == 1


def test_K_psd_guard():
    with pytest.raises(ValueError, match="negative"):
        KMatrix(t=0.0, entries=np.diag([1.2, -0.2]).astype(complex)).validate()


def test_missing_nodes_rejected(setup, gaussian_potential):
    basis, tensor, orbs = setup
    with pytest.raises(ValueError, match="trajectories"):
        assemble_K([], 0.0)


def test_mean_field_initial_data(setup, gaussian_potential):
    basis, tensor, orbs = setup
    dm = gamma_mean_field_k(1, 0.0, 10.0, (0.3, 0.7), gaussian_potential,
                            basis, m_theta=8, path="direct", tensor=tensor)
    expect = np.zeros((basis.m, basis.m), dtype=complex)
    expect[0, 0], expect[1, 1] = 0.3, 0.7
    assert np.max(np.abs(dm.matrix - expect)) < 1e-12


def test_mean_field_constant_when_free(setup, zero_potential):
    basis, _, orbs = setup
    tensor = interaction_tensor(zero_potential, basis)
    a = gamma_mean_field_k(1, 0.0, 10.0, (0.4, 0.6), zero_potential, basis,
                           m_theta=6, path="direct", tensor=tensor)
    b = gamma_mean_field_k(1, 0.5, 10.0, (0.4, 0.6), zero_potential, basis,
                           m_theta=6, path="direct", tensor=tensor, dt=1e-3)
    assert trace_distance(a, b) < 1e-10


def test_mean_field_paths_agree(setup, gaussian_potential):
    basis, tensor, orbs = setup
    direct = gamma_mean_field_k(2, 1.0, 10.0, (0.3, 0.7), gaussian_potential,
                                basis, m_theta=8, path="direct", dt=1e-3,
                                tensor=tensor)
    fact = gamma_mean_field_k(2, 1.0, 10.0, (0.3, 0.7), gaussian_potential,
                              basis, m_theta=8, path="factorized", dt=1e-3,
                              tensor=tensor)
    assert trace_distance(direct, fact) <= 1e-6


def test_factorized_path_rejects_generic_orbitals(setup, gaussian_potential):
    basis, tensor, _ = setup
    orbs = random_orbitals(basis, seed=3)
    with pytest.raises(ValueError, match="spatial profile"):
        gamma_mean_field_k(1, 0.1, 10.0, (0.5, 0.5), gaussian_potential,
                           basis, m_theta=6, path="factorized", dt=1e-2,
                           orbitals=orbs, tensor=tensor)


def test_mean_field_m_theta_guard(setup, gaussian_potential):
    basis, tensor, _ = setup
    with pytest.raises(ValueError, match="threshold"):
        gamma_mean_field_k(3, 0.0, 10.0, (0.5, 0.5), gaussian_potential,
                           basis, m_theta=7, tensor=tensor)


def test_interleaved_product_matches_brute_force():
    rng = np.random.default_rng(5)
    d, s, k = 2, 2, 2
    spat = rng.normal(size=(d**k, d**k))
    spin = rng.normal(size=(s**k, s**k))
    out = interleaved_product(spat, spin, k, d, s)
    m = d * s
    for row in range(m**k):
        for col in range(m**k):
            # decode interleaved indices per particle
            p1, p2 = divmod(row, m)
            q1, q2 = divmod(col, m)
            ns = [(p1 // s, p1 % s), (p2 // s, p2 % s)]
            ms = [(q1 // s, q1 % s), (q2 // s, q2 % s)]
            spat_val = spat[ns[0][0] * d + ns[1][0], ms[0][0] * d + ms[1][0]]
            spin_val = spin[ns[0][1] * s + ns[1][1], ms[0][1] * s + ms[1][1]]
            assert abs(out[row, col] - spat_val * spin_val) < 1e-12
