import numpy as np
import pytest

from sphere_nls.dynamics import (
    FieldTrajectory,
    StabilityError,
    cumulative_integral,
    duhamel,
    duhamel_trajectory,
    energy,
    evolve_nls,
    evolve_nls_batch,
    evolve_resonant,
    free_evolution,
    free_phase,
    gauge_transform,
    mass,
    standard_nls_residual,
    time_grid,
    trajectory_norms,
)
from sphere_nls.fields import SpectralField, degree_masses
from sphere_nls.harmonics import lambda_sq_table
from sphere_nls.stochastic import GaussianStream, sample_phi_alpha

from conftest import random_field


def unit_mass_phi(nmax, seed=0, alpha=1.5):
    phi = sample_phi_alpha(GaussianStream(seed, 0), alpha, nmax)
    return phi * (1 / np.linalg.norm(phi.coeffs))


def test_time_grid():
    times, origin = time_grid(0.1, 0.01, two_sided=True)
    assert times.size == 41 and times[origin] == 0
    with pytest.raises(ValueError):
        time_grid(0.1, 0.03, two_sided=False)


@pytest.mark.parametrize("c", [0.5, 0.9 - 0.3j])
def test_constant_mode_closed_form(c):
    traj = evolve_nls(SpectralField.mode(2, 0, 0, c), 2, 1.0, 1e-3)
    exact = c * np.exp(-1j * traj.times * (1 - abs(c) ** 2))
    assert np.max(np.abs(traj.coeffs[:, 0] - exact)) < 1e-8
    assert np.max(np.abs(traj.coeffs[:, 1:])) < 1e-14


def test_small_amplitude_is_free_evolution():
    u0 = random_field(6, 1, scale=1e-6)
    traj = evolve_nls(u0, 6, 0.2, 1e-3)
    free = free_evolution(u0, traj.times)
    assert np.max(np.abs(traj.coeffs - free)) < 1e-10


def test_mass_conservation_n16():
    traj = evolve_nls(unit_mass_phi(16, 3), 16, 1.0, 1e-3)
    m = mass(traj.coeffs)
    assert np.max(np.abs(m - m[0])) / m[0] < 1e-9


def test_energy_conservation_n8():
    traj = evolve_nls(unit_mass_phi(8, 4), 8, 1.0, 1e-3)
    e = energy(traj.coeffs)
    assert np.max(np.abs(e - e[0])) / abs(e[0]) < 1e-6


def test_two_sided_run_is_time_reversible():
    u0 = unit_mass_phi(6, 5)
    traj = evolve_nls(u0, 6, 0.05, 1e-3, two_sided=True)
    assert np.array_equal(traj.coeffs[traj.origin], u0.coeffs)
    back = evolve_nls(traj.field(0), 6, 0.1, 1e-3)
    assert np.max(np.abs(back.coeffs[-1] - traj.coeffs[-1])) < 1e-10


def test_second_order_self_convergence():
    u0 = unit_mass_phi(6, 6) * 2.0
    ref = evolve_nls(u0, 6, 0.2, 2.5e-4)
    errs = []
    for dt in (4e-3, 2e-3):
        traj = evolve_nls(u0, 6, 0.2, dt)
        errs.append(np.linalg.norm(traj.coeffs[-1] - ref.coeffs[-1]))
    ratio = errs[0] / errs[1]
    assert 3.0 < ratio < 5.0


def test_stability_guard():
    u0 = SpectralField.mode(2, 0, 0, 20.0)
    with pytest.raises(StabilityError) as info:
        evolve_nls(u0, 2, 0.1, 1e-2)
    assert 0 < info.value.suggested_dt < 1e-2 / 2


def test_projection_never_keeps_higher_degrees():
    u0 = unit_mass_phi(4, 7) * 2
    traj = evolve_nls(u0, 4, 0.02, 1e-3, projection="never")
    assert traj.nmax == 8
    assert np.linalg.norm(traj.coeffs[-1, 25:]) > 1e-6
    with pytest.raises(ValueError):
        evolve_nls(u0, 4, 0.02, 1e-3, projection="sometimes")


def test_batch_matches_single_runs():
    data = np.stack([unit_mass_phi(5, s).coeffs for s in range(3)])
    out = evolve_nls_batch(data, 5, 0.02, 1e-3)
    for b in range(3):
        single = evolve_nls(SpectralField(5, data[b]), 5, 0.02, 1e-3)
        assert np.max(np.abs(out[:, b] - single.coeffs)) < 1e-13


def test_resonant_constant_mode():
    c = 0.6 + 0.2j
    traj = evolve_resonant(SpectralField.mode(2, 0, 0, c), 1.0, 1e-3)
    # the resonant system has no mass term, so only the cubic phase rotates
    exact = c * np.exp(-1j * traj.times * abs(c) ** 2)
    assert np.max(np.abs(traj.coeffs[:, 0] - exact)) < 1e-8


def test_resonant_conservation():
    traj = evolve_resonant(unit_mass_phi(8, 8), 1.0, 1e-3)
    dm = degree_masses(traj.coeffs)
    assert np.max(np.abs(dm - dm[0])) < 1e-8
    for s in (0, 1, 2):
        hs = trajectory_norms(traj, s)
        assert np.max(np.abs(hs - hs[0])) < 1e-7


def test_gauge_constant_mode():
    c = 0.7
    traj = evolve_nls(SpectralField.mode(2, 0, 0, c), 2, 1.0, 1e-3)
    v = gauge_transform(traj)
    assert np.max(np.abs(v.coeffs[:, 0] - c * np.exp(-1j * traj.times * c**2))) < 1e-8


def test_gauge_zero_field():
    traj = evolve_nls(SpectralField.zeros(3), 3, 0.01, 1e-3)
    assert not np.any(gauge_transform(traj).coeffs)


def test_gauge_residual_small():
    traj = evolve_nls(unit_mass_phi(8, 9), 8, 0.1, 1e-3)
    res = standard_nls_residual(gauge_transform(traj))
    assert res.max() < 1e-4


def test_duhamel_zero():
    times, origin = time_grid(0.1, 1e-2, two_sided=False)
    F = FieldTrajectory(3, 1e-2, times, np.zeros((times.size, 16)), origin)
    assert not np.any(duhamel(F, 20).coeffs)


def test_duhamel_free_wave():
    g = random_field(5, 10)
    times, origin = time_grid(0.5, 1e-2, two_sided=True)
    F = FieldTrajectory(5, 1e-2, times, free_evolution(g, times), origin)
    out = duhamel_trajectory(F)
    expected = times[:, None] * F.coeffs
    assert np.max(np.abs(out.coeffs - expected)) < 1e-8


def test_duhamel_single_mode_closed_form():
    omega = 7.0
    lam2 = lambda_sq_table(3)[9]
    times, origin = time_grid(0.4, 1e-3, two_sided=False)
    coeffs = np.zeros((times.size, 16), dtype=complex)
    coeffs[:, 9] = np.exp(1j * omega * times)
    out = duhamel_trajectory(FieldTrajectory(3, 1e-3, times, coeffs, origin))
    t = times
    exact = np.exp(-1j * t * lam2) * (np.exp(1j * (omega + lam2) * t) - 1) / (1j * (omega + lam2))
    assert np.max(np.abs(out.coeffs[:, 9] - exact)) < 1e-9
    assert out.meta["duhamel_rule"] == "simpson"


def test_cumulative_integral_polynomial_exact():
    h = 0.1
    t = h * np.arange(-5, 8)
    vals, fallback = cumulative_integral(t**2, h, 5)
    assert not fallback
    assert np.allclose(vals, t**3 / 3, atol=1e-13)


def test_cumulative_integral_trapezoid_fallback():
    vals, fallback = cumulative_integral(np.array([1.0, 3.0]), 0.5, 0)
    assert fallback and vals[1] == pytest.approx(1.0)


def test_trajectory_save_load(tmp_path):
    traj = evolve_nls(unit_mass_phi(3, 11), 3, 0.01, 1e-3, two_sided=True)
    back = FieldTrajectory.load(traj.save(tmp_path / "traj"))
    assert np.array_equal(back.coeffs, traj.coeffs)
    assert back.origin == traj.origin and np.allclose(back.times, traj.times)
    assert back.meta["integrator"] == traj.meta["integrator"]


def test_free_phase_shape():
    assert free_phase(2, np.zeros(4)).shape == (4, 9)
