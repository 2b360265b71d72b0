import math

import numpy as np
import pytest

from fragbec.basis import build_mode_basis
from fragbec.hartree import (GridGeometry, ModeCoefficients, PotentialSpec,
                             diagnostics, evolve_grid, evolve_modes,
                             field_on_grid, ground_field, interaction_tensor,
                             regularize_potential)


@pytest.fixture(scope="module")
def grid():
    return GridGeometry(space_dim=1, extent=16.0, points=256)


def test_potential_shapes():
    pot = PotentialSpec(kind="gaussian", v0=2.0, width=0.5)
    r = np.array([-1.0, 0.0, 1.0])
    values = pot.evaluate(r)
    assert values[0] == values[2]  # even
    assert values[1] == 2.0
    zero = PotentialSpec(kind="zero")
    assert np.all(zero.evaluate(r) == 0.0)
    tab = PotentialSpec(kind="tabulated", table_r=np.array([0.0, 1.0, 2.0]),
                        table_v=np.array([1e6, 10.0, 0.0]))
    assert tab.evaluate(np.array([-1.0]))[0] == 10.0


def test_regularization():
    pot = regularize_potential(PotentialSpec(kind="gaussian", v0=1.0), 2)
    assert pot.regularization_cap == 8.0
    assert pot.evaluate(np.array([0.0]))[0] == 1.0  # cap inactive
    tab = PotentialSpec(kind="tabulated", table_r=np.array([0.0, 1.0]),
                        table_v=np.array([1e6, 0.0]))
    capped = regularize_potential(tab, 10)
    assert capped.evaluate(np.array([0.0]))[0] == 1e3
    twice = regularize_potential(capped, 10)
    assert twice.evaluate(np.array([0.0]))[0] == 1e3


def test_grid_geometry_validation():
    with pytest.raises(ValueError):
        GridGeometry(space_dim=2)
    with pytest.raises(ValueError):
        GridGeometry(points=100)
    with pytest.raises(ValueError):
        GridGeometry(extent=-1.0)


def test_tensor_value_and_symmetries(gaussian_potential):
    basis = build_mode_basis(4, 1, 1.0)
    tensor = interaction_tensor(gaussian_potential, basis, 64)
    assert abs(tensor[0, 0, 0, 0] - 1 / math.sqrt(2)) < 1e-12
    assert np.max(np.abs(tensor - tensor.transpose(1, 0, 3, 2))) < 1e-12
    assert np.max(np.abs(tensor - tensor.transpose(2, 3, 0, 1))) < 1e-12
    zero = interaction_tensor(PotentialSpec(kind="zero"), basis, 64)
    assert np.all(zero == 0.0)


def test_tensor_quadrature_guard(gaussian_potential):
    basis = build_mode_basis(8, 1, 1.0)
    with pytest.raises(ValueError, match="threshold"):
        interaction_tensor(gaussian_potential, basis, 10)


def test_ground_state_diagnostics(grid, gaussian_potential):
    phi = ground_field(grid, nu=3.0)
    d = diagnostics(phi)
    assert abs(d["mass"] - 1.0) < 1e-12
    assert abs(d["energy"]) < 1e-12
    assert abs(d["q_norm"] ** 2 - 2.0) < 1e-10
    d_int = diagnostics(phi, gaussian_potential)
    assert d_int["energy"] == pytest.approx(0.5 / math.sqrt(2), abs=1e-10)


def test_ground_state_stationary_free(grid, zero_potential):
    phi = ground_field(grid, nu=1.0)
    traj = evolve_grid(phi, zero_potential, 2.0, 1e-3, sample_every=10**9)
    assert abs(abs(traj[-1].overlap(phi)) - 1.0) < 1e-8


def test_mass_conservation(grid, gaussian_potential):
    phi = ground_field(grid, nu=1.0)
    traj = evolve_grid(phi, gaussian_potential, 1.0, 1e-3, sample_every=100)
    assert max(abs(f.mass() - 1.0) for f in traj) < 1e-12


def test_energy_drift_second_order(grid, gaussian_potential):
    phi = ground_field(grid, nu=2.0)
    drifts = []
    for dt in (1e-3, 5e-4):
        traj = evolve_grid(phi, gaussian_potential, 1.0, dt, sample_every=50)
        energies = [diagnostics(f, gaussian_potential)["energy"] for f in traj]
        drifts.append(max(abs(e - energies[0]) for e in energies))
    assert drifts[0] < 1e-6
    assert 3.2 < drifts[0] / drifts[1] < 4.8


def test_confinement_guard(gaussian_potential):
    tight = GridGeometry(space_dim=1, extent=4.0, points=64)
    phi = ground_field(tight, nu=1.0)
    with pytest.raises(ValueError, match="barrier"):
        evolve_grid(phi, gaussian_potential, 0.1, 1e-3)


def test_time_step_validation(grid, zero_potential):
    phi = ground_field(grid, nu=1.0)
    with pytest.raises(ValueError):
        evolve_grid(phi, zero_potential, 1.0, -1e-3)
    with pytest.raises(ValueError, match="multiple"):
        evolve_grid(phi, zero_potential, 1.0, 3e-4)


def test_mode_flow_linear_phases(zero_potential):
    basis = build_mode_basis(3, 1, 2.0)
    tensor = interaction_tensor(zero_potential, basis)
    c0 = np.array([0.6, 0.64, 0.48], dtype=complex)
    c0 /= np.linalg.norm(c0)
    traj = evolve_modes(ModeCoefficients(basis=basis, c=c0), tensor, 0.5, 1e-3)
    expect = c0 * np.exp(-1j * basis.spatial_eigenvalues() * 0.5)
    assert np.max(np.abs(traj[-1].c - expect)) < 1e-10


def test_mode_flow_single_mode_phase(gaussian_potential):
    basis = build_mode_basis(1, 1, 1.0)
    tensor = interaction_tensor(gaussian_potential, basis)
    c0 = ModeCoefficients(basis=basis, c=np.array([1.0 + 0j]))
    traj = evolve_modes(c0, tensor, 1.0, 1e-3)
    expect = np.exp(-1j * tensor[0, 0, 0, 0])
    assert abs(traj[-1].c[0] - expect) < 1e-10


def test_mode_norm_conservation(gaussian_potential):
    basis = build_mode_basis(5, 1, 1.0)
    tensor = interaction_tensor(gaussian_potential, basis)
    c0 = np.ones(5, dtype=complex) / math.sqrt(5)
    traj = evolve_modes(ModeCoefficients(basis=basis, c=c0), tensor, 2.0, 1e-3)
    assert abs(traj[-1].mass() - 1.0) < 1e-9


def test_mode_energy_conserved(gaussian_potential):
    basis = build_mode_basis(4, 1, 1.0)
    tensor = interaction_tensor(gaussian_potential, basis)
    c0 = np.array([0.8, 0.4, 0.4, 0.2], dtype=complex)
    c0 /= np.linalg.norm(c0)
    traj = evolve_modes(ModeCoefficients(basis=basis, c=c0), tensor, 1.0, 1e-3,
                        sample_every=200)
    energies = [diagnostics(c, gaussian_potential)["energy"] for c in traj]
    assert max(abs(e - energies[0]) for e in energies) < 1e-8


def test_grid_mode_cross_validation(grid, gaussian_potential):
    """Basis truncation error of the mode flow shrinks as d grows."""
    nu = 1.0
    t_final, dt = 0.5, 1e-3
    phi = ground_field(grid, nu=nu)
    ref = evolve_grid(phi, gaussian_potential, t_final, dt,
                      sample_every=10**9)[-1]
    deviations = []
    for d in (4, 8, 16):
        basis = build_mode_basis(d, 1, nu)
        tensor = interaction_tensor(gaussian_potential, basis)
        c0 = np.zeros(d, dtype=complex)
        c0[0] = 1.0
        modes = evolve_modes(ModeCoefficients(basis=basis, c=c0), tensor,
                             t_final, dt, sample_every=10**9)[-1]
        on_grid = field_on_grid(grid, nu, modes.c)
        deviations.append(1.0 - abs(ref.overlap(on_grid)))
    assert deviations[0] > deviations[1] > deviations[2]
    assert deviations[2] < 1e-8


def test_q_norm_uniform_bound(grid, gaussian_potential):
    worst = 0.0
    for nu in (10.0, 20.0, 40.0, 80.0):
        dt = 1e-2 / nu
        phi = ground_field(grid, nu=nu)
        q0 = diagnostics(phi, gaussian_potential)["q_norm"] ** 2
        traj = evolve_grid(phi, gaussian_potential, 5.0, dt,
                           sample_every=int(round(5.0 / dt)) // 20)
        ratio = max(diagnostics(f, gaussian_potential)["q_norm"] ** 2
                    for f in traj) / q0
        worst = max(worst, ratio)
    assert worst <= 2.0


def test_nu_proximity_to_ground_mode(grid, gaussian_potential):
    """Deviation from the frozen ground mode shrinks along the nu ladder."""
    deviations = []
    for nu in (10.0, 40.0, 160.0):
        dt = 1e-2 / nu
        phi = ground_field(grid, nu=nu)
        final = evolve_grid(phi, gaussian_potential, 1.0, dt,
                            sample_every=10**9)[-1]
        deviations.append(1.0 - abs(final.overlap(phi)))
    assert deviations[0] > deviations[1] > deviations[2]
    dist = [2 * math.sqrt(max(d * (2 - d), 0.0)) for d in deviations]
    scaled = [math.sqrt(nu) * d for nu, d in zip((10.0, 40.0, 160.0), dist)]
    assert max(scaled) == scaled[0]  # bounded, no growth along the ladder


def test_mode_flow_unstable_step_rejected(gaussian_potential):
    basis = build_mode_basis(6, 1, 8.0)
    tensor = interaction_tensor(PotentialSpec(kind="gaussian", v0=5.0), basis)
    c0 = np.ones(6, dtype=complex) / math.sqrt(6)
    with pytest.raises(RuntimeError, match="dt"):
        evolve_modes(ModeCoefficients(basis=basis, c=c0), tensor, 8.0, 1.0)


def test_grid_3d_ground_state(zero_potential):
    grid = GridGeometry(space_dim=3, extent=12.0, points=32)
    phi = ground_field(grid, nu=1.0)
    d = diagnostics(phi)
    assert abs(d["mass"] - 1.0) < 1e-12
    assert abs(d["energy"]) < 1e-12
    assert abs(d["q_norm"] ** 2 - 4.0) < 1e-10
    traj = evolve_grid(phi, zero_potential, 0.2, 2e-3, sample_every=10**9)
    assert abs(abs(traj[-1].overlap(phi)) - 1.0) < 1e-10


def test_tabulated_cap_preserves_sign():
    tab = PotentialSpec(kind="tabulated", table_r=np.array([0.0, 1.0, 2.0]),
                        table_v=np.array([-1e6, 5.0, 0.0]),
                        regularization_cap=100.0)
    assert tab.evaluate(np.array([0.0]))[0] == -100.0
    assert tab.evaluate(np.array([1.0]))[0] == 5.0
