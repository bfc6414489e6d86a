import numpy as np
import pytest
from scipy.linalg import expm

from jacobiflow.differentiation import ScalarField, VectorField
from jacobiflow.geometry import canonical_symplectic, canonical_contact
from jacobiflow.noise import TimeGrid, NoisePath, sample_brownian, refine
from jacobiflow.integrator import (HamiltonianFamily, SdeSystem, drift_diffusion_fields,
                                   heun_step, euler_ito_step, ito_drift_correction,
                                   tangent_step, integrate, integrate_batch,
                                   f_along_path_residual, trajectory_to_csv)
from jacobiflow.models import harmonic_oscillator, damped_contact, rigid_body_so3, \
    linear_momentum_hamiltonians


def custom_system(fields, dim=2):
    """System with explicit vector fields on a canonical chart."""
    struct = canonical_symplectic(dim // 2) if dim % 2 == 0 else canonical_contact(dim // 2)[0]
    hams = HamiltonianFamily([ScalarField.constant(0.0) for _ in fields])
    return SdeSystem(structure=struct, hamiltonians=hams, fields_override=list(fields))


def zero_system(dim=2, r=1):
    zero = VectorField(lambda z: np.zeros_like(np.asarray(z, dtype=float)))
    return custom_system([zero] * (r + 1), dim=dim)


# ----------------------------------------------------------- field stacking

def test_drift_diffusion_oscillator():
    mod = harmonic_oscillator(k=4.0, sigma=0.5)
    v0, v1 = drift_diffusion_fields(mod.system, np.array([1.0, 2.0]))
    assert np.allclose(v0, [2.0, -4.0])
    assert np.allclose(v1, [0.0, 0.5])


def test_drift_diffusion_zero_hamiltonians():
    struct = canonical_symplectic(1)
    sys_ = SdeSystem(structure=struct,
                     hamiltonians=HamiltonianFamily([ScalarField.constant(0.0)] * 3))
    for v in drift_diffusion_fields(sys_, np.array([0.4, -0.7])):
        assert np.all(v == 0.0)


def test_drift_diffusion_damped_contact():
    mod = damped_contact(gamma=1.0, sigma=0.3, potential=(0.0, 0.0, 0.5), n=1)
    v0 = drift_diffusion_fields(mod.system, np.array([0.0, 1.0, 0.0]))[0]
    assert np.allclose(v0, [1.0, -1.0, 0.5])


# ----------------------------------------------------------------- stepping

def test_heun_zero_fields_fixed_point():
    sys_ = zero_system()
    z = np.array([0.3, -0.9])
    assert np.array_equal(heun_step(sys_, z, 1e-2, np.array([0.4])), z)


def test_heun_deterministic_period_return():
    mod = harmonic_oscillator(k=1.0, sigma=0.5)
    steps = 6283
    grid = TimeGrid(0.0, 2.0 * np.pi, steps)
    path = NoisePath(grid=grid, r=1, increments=np.zeros((1, steps)), seed=0)
    traj = integrate(mod.system, np.array([1.0, 0.0]), path)
    assert np.max(np.abs(traj.states[-1] - traj.states[0])) < 5e-3


def test_heun_vs_euler_single_step_additive():
    mod = harmonic_oscillator(k=1.0, sigma=0.5)
    z = np.array([0.7, -0.2])
    for dt in (1e-2, 1e-3):
        # deterministic sub-step: the gap is second order in dt
        gap0 = np.max(np.abs(heun_step(mod.system, z, dt, np.zeros(1))
                             - euler_ito_step(mod.system, z, dt, np.zeros(1))))
        assert gap0 < 2.0 * dt ** 2
        # with an increment of typical size the gap is O(dt^{3/2})
        db = np.array([np.sqrt(dt)])
        gap1 = np.max(np.abs(heun_step(mod.system, z, dt, db)
                             - euler_ito_step(mod.system, z, dt, db)))
        assert gap1 < 2.0 * dt ** 1.5


def test_ito_correction_additive_zero():
    mod = harmonic_oscillator(k=2.0, sigma=0.7)
    assert np.allclose(ito_drift_correction(mod.system, np.array([1.0, 2.0])), 0.0)


def test_ito_correction_nilpotent_field():
    v0 = VectorField(lambda z: np.zeros_like(np.asarray(z, dtype=float)))
    v1 = VectorField(lambda z: np.stack([np.zeros_like(z[..., 0]), z[..., 0]], axis=-1))
    sys_ = custom_system([v0, v1])
    assert np.allclose(ito_drift_correction(sys_, np.array([0.8, -0.5])), 0.0, atol=1e-10)


def test_ito_correction_swap_field():
    v0 = VectorField(lambda z: np.zeros_like(np.asarray(z, dtype=float)))
    v1 = VectorField(lambda z: np.stack([z[..., 1], z[..., 0]], axis=-1))
    sys_ = custom_system([v0, v1])
    z = np.array([1.3, -2.1])
    assert np.allclose(ito_drift_correction(sys_, z), 0.5 * z, atol=1e-9)


def test_schemes_agree_strongly_for_additive_noise():
    mod = harmonic_oscillator(k=1.0, sigma=0.5)
    path = sample_brownian(2, TimeGrid(0.0, 1.0, 500), 1)
    z0 = np.array([0.0, 1.0])
    gaps = []
    for _ in range(3):
        th = integrate(mod.system, z0, path, scheme="heun")
        te = integrate(mod.system, z0, path, scheme="euler-ito")
        gaps.append(np.max(np.abs(th.states[-1] - te.states[-1])))
        path = refine(path)
    orders = np.log2(np.array(gaps[:-1]) / np.array(gaps[1:]))
    assert np.all(orders > 0.9)


# -------------------------------------------------------------- tangent flow

def test_tangent_zero_fields():
    sys_ = zero_system()
    z, j = tangent_step(sys_, np.array([0.1, 0.2]), np.eye(2), 1e-2, np.array([0.3]))
    assert np.array_equal(j, np.eye(2))


def test_tangent_linear_field_matches_expm():
    a = np.array([[0.3, 1.2], [-0.7, -0.3]])
    v0 = VectorField(lambda z: np.einsum("ij,...j->...i", a, z),
                     analytic_jacobian=lambda z: np.broadcast_to(a, np.shape(z) + (2,)).copy())
    sys_ = custom_system([v0])
    grid = TimeGrid(0.0, 1.0, 1000)
    path = NoisePath(grid=grid, r=0, increments=np.zeros((0, 1000)), seed=0)
    traj = integrate(sys_, np.array([1.0, 0.5]), path, tangent=True)
    assert np.max(np.abs(traj.jacobians[-1] - expm(a))) < 1e-5


def test_tangent_harmonic_unit_determinant():
    mod = harmonic_oscillator(k=1.0, sigma=0.5)
    steps = 10_000
    grid = TimeGrid(0.0, 1.0, steps)
    path = NoisePath(grid=grid, r=1, increments=np.zeros((1, steps)), seed=0)
    traj = integrate(mod.system, np.array([1.0, 0.0]), path, tangent=True)
    assert np.max(np.abs(np.linalg.det(traj.jacobians) - 1.0)) < 1e-6


def test_tangent_flow_composes_over_restart():
    mod = damped_contact(gamma=0.4, sigma=0.3)
    full = sample_brownian(6, TimeGrid(0.0, 1.0, 500), 1)
    z0 = np.array([0.3, 0.5, 0.0])
    traj = integrate(mod.system, z0, full, tangent=True)

    first = NoisePath(grid=TimeGrid(0.0, 0.5, 250), r=1,
                      increments=full.increments[:, :250], seed=full.seed)
    second = NoisePath(grid=TimeGrid(0.5, 1.0, 250), r=1,
                       increments=full.increments[:, 250:], seed=full.seed)
    t1 = integrate(mod.system, z0, first, tangent=True)
    t2 = integrate(mod.system, t1.states[-1], second, tangent=True)
    assert np.max(np.abs(t2.jacobians[-1] @ t1.jacobians[-1] - traj.jacobians[-1])) < 1e-8


# ---------------------------------------------------------------- integrate

def test_integrate_empty_grid_single_point():
    mod = harmonic_oscillator(k=1.0, sigma=0.5)
    grid = TimeGrid(0.0, 1.0, 0)
    path = NoisePath(grid=grid, r=1, increments=np.zeros((1, 0)), seed=0)
    traj = integrate(mod.system, np.array([0.2, 0.4]), path, tangent=True)
    assert traj.states.shape == (1, 2)
    assert np.array_equal(traj.jacobians[0], np.eye(2))


def test_integrate_conformal_accumulator_exact():
    gamma = 0.7
    mod = damped_contact(gamma=gamma, sigma=0.2)
    path = sample_brownian(3, TimeGrid(0.0, 1.0, 1000), 1)
    traj = integrate(mod.system, np.array([0.4, 0.8, 0.1]), path, conformal=True)
    assert np.max(np.abs(traj.log_conformal + gamma * traj.times)) < 1e-12
    assert traj.log_conformal[0] == 0.0


def test_integrate_rejects_unknown_scheme():
    mod = harmonic_oscillator(k=1.0, sigma=0.5)
    path = sample_brownian(1, TimeGrid(0.0, 1.0, 10), 1)
    with pytest.raises(ValueError, match="scheme"):
        integrate(mod.system, np.array([0.0, 1.0]), path, scheme="milstein")


def test_integrate_conformal_requires_contact():
    mod = harmonic_oscillator(k=1.0, sigma=0.5)
    path = sample_brownian(1, TimeGrid(0.0, 1.0, 10), 1)
    with pytest.raises(ValueError, match="contact"):
        integrate(mod.system, np.array([0.0, 1.0]), path, conformal=True)


def test_blowup_truncates_and_records_index():
    v0 = VectorField(lambda z: np.asarray(z, dtype=float) ** 2)
    sys_ = custom_system([v0])
    grid = TimeGrid(0.0, 1.0, 1000)
    path = NoisePath(grid=grid, r=0, increments=np.zeros((0, 1000)), seed=0)
    traj = integrate(sys_, np.array([3.0, 3.0]), path)
    assert traj.blown_up is not None
    assert len(traj.states) == traj.blown_up + 1
    assert np.all(np.isfinite(traj.states[:-1]))


def test_batch_matches_single_path():
    mod = damped_contact(gamma=0.5, sigma=0.2)
    path = sample_brownian(8, TimeGrid(0.0, 0.5, 200), 1)
    z0 = np.array([0.4, 0.8, 0.1])
    single = integrate(mod.system, z0, path).states[-1]
    batch = integrate_batch(mod.system, z0[None, :], path.increments[None], path.grid.dt)
    assert np.allclose(batch[0], single, atol=1e-13)


# ----------------------------------------------- pathwise f-decomposition

def test_f_decomposition_constant_observable():
    mod = harmonic_oscillator(k=1.0, sigma=0.5)
    path = sample_brownian(4, TimeGrid(0.0, 1.0, 100), 1)
    traj = integrate(mod.system, np.array([0.0, 1.0]), path)
    assert f_along_path_residual(mod.system, ScalarField.constant(3.0), traj, path) == 0.0


def test_f_decomposition_coordinate_halves_under_refinement():
    mod = harmonic_oscillator(k=1.0, sigma=0.5)
    path = sample_brownian(4, TimeGrid(0.0, 1.0, 250), 1)
    f = ScalarField.coordinate(0)
    resid = []
    for _ in range(3):
        traj = integrate(mod.system, np.array([0.0, 1.0]), path)
        resid.append(f_along_path_residual(mod.system, f, traj, path))
        path = refine(path)
    orders = np.log2(np.array(resid[:-1]) / np.array(resid[1:]))
    assert np.all(orders > 0.8)


def test_f_decomposition_casimir_higher_order():
    mod = rigid_body_so3((1.0, 2.0, 3.0), linear_momentum_hamiltonians([(0.05, 0.0, 0.0)]))
    path = sample_brownian(5, TimeGrid(0.0, 1.0, 1000), 1)
    traj = integrate(mod.system, np.array([0.2, 0.5, 0.8]), path)
    c = mod.meta["casimir"]
    # the bracket integrand vanishes pointwise, so the defect is just the
    # discrete Casimir drift
    resid = f_along_path_residual(mod.system, c, traj, path)
    assert resid < 1e-6


def test_f_decomposition_grid_mismatch_rejected():
    mod = harmonic_oscillator(k=1.0, sigma=0.5)
    path = sample_brownian(4, TimeGrid(0.0, 1.0, 100), 1)
    traj = integrate(mod.system, np.array([0.0, 1.0]), path)
    with pytest.raises(ValueError):
        f_along_path_residual(mod.system, ScalarField.coordinate(0), traj, refine(path))


# ------------------------------------------------------------------- export

def test_trajectory_csv_columns(tmp_path):
    mod = damped_contact(gamma=0.5, sigma=0.2)
    path = sample_brownian(5, TimeGrid(0.0, 0.1, 20), 1)
    traj = integrate(mod.system, np.array([0.4, 0.8, 0.1]), path,
                     tangent=True, conformal=True)
    fname = tmp_path / "traj.csv"
    trajectory_to_csv(traj, fname, conformal=True, det_j=True)
    lines = fname.read_text().splitlines()
    assert lines[0] == "t,z_1,z_2,z_3,lambda,det_J"
    assert len(lines) == 22
    # values round-trip at 17 significant digits
    z1_back = float(lines[5].split(",")[1])
    assert z1_back == traj.states[4, 0]
