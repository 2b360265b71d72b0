"""Mean-field orbital dynamics: split-step grid solver and truncated mode flow.

The one-body operator is (nu/2)(-Laplacian + |x|^2 - dim), so the ground
Gaussian has energy exactly 0 and the spectral gap is exactly nu, matching
the mode ladder nu*n of the truncated basis.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from .basis import ModeBasis, gauss_hermite_rule, hermite_functions

TENSOR_SYMMETRY_TOL = 1e-10
GRID_MASS_TOL = 1e-12
MODE_NORM_TOL = 1e-9


@dataclass(frozen=True)
class PotentialSpec:
    """Even two-body interaction: Gaussian bump, tabulated profile, or zero.

    An optional pointwise cap clips the magnitude to regularization_cap while
    keeping the sign, which is a no-op for bounded profiles below the cap.
    """

    kind: str = "gaussian"
    v0: float = 1.0
    width: float = 1.0
    regularization_cap: float | None = None
    table_r: np.ndarray | None = None
    table_v: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("gaussian", "tabulated", "zero"):
            raise ValueError(f"unknown potential kind {self.kind!r}")
        if self.kind == "gaussian" and self.width <= 0:
            raise ValueError("gaussian width must be positive")
        if self.kind == "tabulated":
            if self.table_r is None or self.table_v is None:
                raise ValueError("tabulated potential needs table_r and table_v")
            if np.any(np.asarray(self.table_r) < 0):
                raise ValueError("tabulate the profile on r >= 0; evaluation is even")

    def evaluate(self, r: np.ndarray) -> np.ndarray:
        """Potential at (signed) displacements r; even by construction."""
        r = np.asarray(r, dtype=float)
        if self.kind == "zero":
            values = np.zeros_like(r)
        elif self.kind == "gaussian":
            values = self.v0 * np.exp(-(r**2) / (2.0 * self.width**2))
        else:
            values = np.interp(np.abs(r), self.table_r, self.table_v)
        if self.regularization_cap is not None:
            values = np.sign(values) * np.minimum(np.abs(values),
                                                  self.regularization_cap)
        return values


def regularize_potential(potential: PotentialSpec, n: int) -> PotentialSpec:
    """Cap the interaction magnitude at N^3, keeping any tighter existing cap."""
    if n < 1:
        raise ValueError("particle number must be >= 1")
    cap = float(n) ** 3
    if potential.regularization_cap is not None:
        cap = min(cap, potential.regularization_cap)
    return dataclasses.replace(potential, regularization_cap=cap)


@dataclass(frozen=True)
class GridGeometry:
    """Uniform periodic box [-L/2, L/2)^dim with a power-of-two point count."""

    space_dim: int = 1
    extent: float = 16.0
    points: int = 256

    def __post_init__(self):
        if self.space_dim not in (1, 3):
            raise ValueError("space_dim must be 1 or 3")
        if self.points < 8 or self.points & (self.points - 1):
            raise ValueError("points per axis must be a power of two >= 8")
        if self.extent <= 0:
            raise ValueError("extent must be positive")

    @property
    def spacing(self) -> float:
        return self.extent / self.points

    @property
    def cell(self) -> float:
        return self.spacing**self.space_dim

    def axis(self) -> np.ndarray:
        return self.extent * (np.arange(self.points) / self.points - 0.5)

    def radius_sq(self) -> np.ndarray:
        """|x|^2 on the grid, shape (points,)*dim."""
        x = self.axis()
        if self.space_dim == 1:
            return x**2
        xx, yy, zz = np.meshgrid(x, x, x, indexing="ij")
        return xx**2 + yy**2 + zz**2

    def wavenumber_sq(self) -> np.ndarray:
        k = 2.0 * np.pi * np.fft.fftfreq(self.points, d=self.spacing)
        if self.space_dim == 1:
            return k**2
        kx, ky, kz = np.meshgrid(k, k, k, indexing="ij")
        return kx**2 + ky**2 + kz**2

    def displacement(self) -> np.ndarray:
        """Signed displacements in FFT order, for circular convolution kernels."""
        r = self.extent * np.fft.fftfreq(self.points)
        if self.space_dim == 1:
            return r
        rx, ry, rz = np.meshgrid(r, r, r, indexing="ij")
        return np.sqrt(rx**2 + ry**2 + rz**2)


@dataclass
class HartreeField:
    """Mean-field orbital sampled on a grid at one instant."""

    grid: GridGeometry
    values: np.ndarray
    nu: float
    time: float = 0.0

    def mass(self) -> float:
        return float(np.sum(np.abs(self.values) ** 2) * self.grid.cell)

    def overlap(self, other: "HartreeField") -> complex:
        return complex(np.vdot(self.values, other.values) * self.grid.cell)


@dataclass
class ModeCoefficients:
    """Mean-field orbital in the truncated spatial oscillator basis."""

    basis: ModeBasis
    c: np.ndarray
    time: float = 0.0

    def mass(self) -> float:
        return float(np.sum(np.abs(self.c) ** 2))

    def overlap(self, other: "ModeCoefficients") -> complex:
        return complex(np.vdot(self.c, other.c))


def ground_field(grid: GridGeometry, nu: float) -> HartreeField:
    """Normalised oscillator ground Gaussian sampled on the grid."""
    values = np.exp(-0.5 * grid.radius_sq()).astype(complex)
    values *= np.pi ** (-grid.space_dim / 4.0)
    norm = math.sqrt(float(np.sum(np.abs(values) ** 2) * grid.cell))
    return HartreeField(grid=grid, values=values / norm, nu=nu, time=0.0)


def field_on_grid(grid: GridGeometry, nu: float, mode_amplitudes) -> HartreeField:
    """Superpose 1D oscillator eigenfunctions with the given amplitudes."""
    if grid.space_dim != 1:
        raise ValueError("mode superposition on a grid is 1D only")
    amps = np.asarray(mode_amplitudes, dtype=complex)
    psi = hermite_functions(amps.size - 1, grid.axis())
    values = (amps[:, None] * psi).sum(axis=0)
    return HartreeField(grid=grid, values=values, nu=nu, time=0.0)


def interaction_tensor(potential: PotentialSpec, basis: ModeBasis,
                       quad_order: int | None = None) -> np.ndarray:
    """Two-body matrix elements V[pq, rs] in the 1D oscillator basis.

    Gauss-Hermite product quadrature of the double integral over
    psi_p(x) psi_q(y) V(x-y) psi_r(x) psi_s(y); the order must exceed
    2*(highest level)+8 so the polynomial part is integrated exactly.
    """
    if basis.space_dim != 1:
        raise ValueError("interaction tensor is defined for 1D mode ladders")
    d = basis.d
    min_order = 2 * (d - 1) + 8
    if quad_order is None:
        quad_order = max(min_order, 64)
    if quad_order < min_order:
        raise ValueError(f"quad_order {quad_order} below the threshold {min_order}")
    x, w = gauss_hermite_rule(quad_order)
    psi = hermite_functions(d - 1, x)
    vmat = potential.evaluate(x[:, None] - x[None, :])
    weighted = psi * w  # (d, Q)
    pairs = np.einsum("pi,ri->pri", weighted, psi)  # psi_p psi_r w at node i
    tensor = np.einsum("pri,ij,qsj->pqrs", pairs, vmat, pairs, optimize=True)
    check = max(
        float(np.max(np.abs(tensor - tensor.transpose(1, 0, 3, 2)))),
        float(np.max(np.abs(tensor - tensor.transpose(2, 3, 0, 1)))),
    )
    if check > TENSOR_SYMMETRY_TOL:
        raise RuntimeError(f"tensor symmetry violated at {check:.2e}; "
                           "raise the quadrature order")
    return tensor


def _convolve_density(grid: GridGeometry, kernel_fft: np.ndarray,
                      density: np.ndarray) -> np.ndarray:
    conv = np.fft.ifftn(kernel_fft * np.fft.fftn(density))
    return conv.real * grid.cell


def _boundary_peak(values: np.ndarray) -> float:
    """Largest |phi|^2 on the outermost two grid planes of each axis."""
    peak = 0.0
    dens = np.abs(values) ** 2
    n = values.shape[0]
    for axis in range(values.ndim):
        sl = [slice(None)] * values.ndim
        sl[axis] = [0, 1, n - 2, n - 1]
        peak = max(peak, float(dens[tuple(sl)].max()))
    return peak


def evolve_grid(phi0: HartreeField, potential: PotentialSpec, big_t: float,
                dt: float, sample_every: int | None = None,
                confinement_factor: float = 4.0) -> list[HartreeField]:
    """Strang split-step evolution of the trapped Hartree flow.

    Half-steps of the physical-space phase (shifted trap plus convolution
    nonlinearity), full Fourier step of the kinetic phase.  Mass is conserved
    to rounding; a state leaking to the box edge aborts with a diagnostic.
    """
    if dt <= 0 or big_t < 0:
        raise ValueError("need dt > 0 and T >= 0")
    grid, nu = phi0.grid, phi0.nu
    if abs(phi0.mass() - 1.0) > 1e-8:
        raise ValueError("initial field must have unit mass")
    n_steps = max(int(round(big_t / dt)), 0) if big_t > 0 else 0
    if big_t > 0 and abs(n_steps * dt - big_t) > 1e-9 * max(1.0, big_t):
        raise ValueError("T must be an integer multiple of dt")
    trap = 0.5 * nu * (grid.radius_sq() - grid.space_dim)
    kin_phase = np.exp(-1j * dt * 0.5 * nu * grid.wavenumber_sq())
    kernel_fft = np.fft.fftn(potential.evaluate(grid.displacement()))

    e0 = diagnostics(phi0, potential)["energy"]
    barrier = 0.5 * nu * ((grid.extent / 2.0) ** 2 - grid.space_dim)
    if barrier < confinement_factor * max(abs(e0), nu):
        raise ValueError(
            f"trap barrier {barrier:.3g} below {confinement_factor} x "
            f"max(|E0|, nu) = {confinement_factor * max(abs(e0), nu):.3g}; "
            "enlarge the box")

    if sample_every is None:
        sample_every = max(n_steps // 200, 1)
    values = phi0.values.copy()
    out = [HartreeField(grid=grid, values=values.copy(), nu=nu, time=phi0.time)]
    peak0 = float(np.max(np.abs(values) ** 2))
    for step in range(1, n_steps + 1):
        conv = _convolve_density(grid, kernel_fft, np.abs(values) ** 2)
        values *= np.exp(-1j * (dt / 2.0) * (trap + conv))
        values = np.fft.ifftn(kin_phase * np.fft.fftn(values))
        conv = _convolve_density(grid, kernel_fft, np.abs(values) ** 2)
        values *= np.exp(-1j * (dt / 2.0) * (trap + conv))
        if step % sample_every == 0 or step == n_steps:
            if _boundary_peak(values) > 1e-10 * peak0:
                raise RuntimeError(
                    f"confinement violated at t={phi0.time + step * dt:.4g}: "
                    "density reached the box edge; enlarge the box or extent")
            out.append(HartreeField(grid=grid, values=values.copy(), nu=nu,
                                    time=phi0.time + step * dt))
    mass_drift = abs(out[-1].mass() - phi0.mass())
    if not mass_drift <= 100 * GRID_MASS_TOL:
        raise RuntimeError(f"mass drifted by {mass_drift:.2e}")
    return out


def _mode_rhs(c: np.ndarray, eps: np.ndarray, tensor: np.ndarray) -> np.ndarray:
    nonlinear = np.einsum("pqrs,q,r,s->p", tensor, c.conj(), c, c)
    return -1j * (eps * c + nonlinear)


def evolve_modes(c0: ModeCoefficients, tensor: np.ndarray, big_t: float,
                 dt: float, sample_every: int | None = None) -> list[ModeCoefficients]:
    """Fixed-step RK4 for the mode-truncated Hartree flow."""
    if dt <= 0 or big_t < 0:
        raise ValueError("need dt > 0 and T >= 0")
    basis = c0.basis
    if tensor.shape != (basis.d,) * 4:
        raise ValueError("tensor shape does not match the basis")
    eps = basis.spatial_eigenvalues()
    n_steps = max(int(round(big_t / dt)), 0) if big_t > 0 else 0
    if big_t > 0 and abs(n_steps * dt - big_t) > 1e-9 * max(1.0, big_t):
        raise ValueError("T must be an integer multiple of dt")
    if sample_every is None:
        sample_every = max(n_steps // 200, 1)
    c = c0.c.astype(complex).copy()
    out = [ModeCoefficients(basis=basis, c=c.copy(), time=c0.time)]
    for step in range(1, n_steps + 1):
        k1 = _mode_rhs(c, eps, tensor)
        k2 = _mode_rhs(c + 0.5 * dt * k1, eps, tensor)
        k3 = _mode_rhs(c + 0.5 * dt * k2, eps, tensor)
        k4 = _mode_rhs(c + dt * k3, eps, tensor)
        c = c + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if step % sample_every == 0 or step == n_steps:
            out.append(ModeCoefficients(basis=basis, c=c.copy(),
                                        time=c0.time + step * dt))
    drift = abs(out[-1].mass() - c0.mass())
    if not drift <= 1e-6:  # catches NaN from an unstable step as well
        raise RuntimeError(
            f"norm drifted by {drift:.2e}; retry with dt <= {dt / 4:.3g}")
    return out


def diagnostics(obj, potential: PotentialSpec | None = None) -> dict:
    """Mass, conserved energy, and Q-norm of a grid field or mode vector.

    The energy uses the shifted trap (|x|^2 - dim) so the noninteracting
    ground state sits at exactly 0; the Q-norm uses the unshifted trap.
    """
    if isinstance(obj, HartreeField):
        grid, nu = obj.grid, obj.nu
        dens = np.abs(obj.values) ** 2
        mass = float(dens.sum() * grid.cell)
        # Parseval: sum_x |grad phi|^2 = (1/size) sum_k k^2 |fft(phi)|^2
        spectrum = np.abs(np.fft.fftn(obj.values)) ** 2
        grad_sq = float(np.sum(grid.wavenumber_sq() * spectrum)
                        * grid.cell / obj.values.size)
        r2 = float(np.sum(grid.radius_sq() * dens) * grid.cell)
        if potential is None or potential.kind == "zero":
            inter = 0.0
        else:
            kernel_fft = np.fft.fftn(potential.evaluate(grid.displacement()))
            conv = _convolve_density(grid, kernel_fft, dens)
            inter = float(np.sum(conv * dens) * grid.cell)
        energy = 0.5 * nu * (grad_sq + r2 - grid.space_dim * mass) + 0.5 * inter
        q_sq = mass + grad_sq + r2
        return {"mass": mass, "energy": energy, "q_norm": math.sqrt(q_sq)}
    if isinstance(obj, ModeCoefficients):
        basis = obj.basis
        c = obj.c
        mass = float(np.sum(np.abs(c) ** 2))
        eps = basis.spatial_eigenvalues()
        linear = float(np.sum(eps * np.abs(c) ** 2))
        if potential is None:
            inter = 0.0
        else:
            tensor = interaction_tensor(potential, basis)
            inter = float(np.real(np.einsum("pqrs,p,q,r,s", tensor,
                                            c.conj(), c.conj(), c, c)))
        # <-Delta + x^2> is diagonal with entries 2n + dim on the 1D ladder
        levels = 2.0 * np.arange(basis.d) + basis.space_dim
        q_sq = mass + float(np.sum(levels * np.abs(c) ** 2))
        return {"mass": mass, "energy": linear + 0.5 * inter,
                "q_norm": math.sqrt(q_sq)}
    raise TypeError(f"no diagnostics for {type(obj).__name__}")
