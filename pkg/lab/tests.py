import json
import tempfile
from io import StringIO
from pathlib import Path

import numpy as np
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import Client, SimpleTestCase, TestCase
from django.urls import reverse
from scipy import integrate, linalg

from lab.config import RunConfig, available_presets, env_overrides, load_config
from lab.exceptions import (
    CFLViolation,
    ConfigError,
    ContractViolation,
    GridMismatchError,
    InfeasibleProfile,
    InterpolationResidualError,
    MisalignedTrajectories,
    NonAdmissibleTrajectory,
    NonDiffeomorphicMap,
)
from lab.experiments import energy_order_check, lp_ladder
from lab.initial_data import (
    ProfileShape,
    construct_lagrangian,
    make_lagrangian_strain,
    make_profile,
    make_zero_strain,
    perturb_strain,
)
from lab.invariants import (
    HodgeStatus,
    Monitor,
    curl_commutator_residual,
    det_deviation,
    div_FT_norm,
    energy_law_residual,
    hodge_equivalence_check,
    hodge_summary,
    lyapunov_monotone,
    piola_residual,
    probe_states,
    sandwich_holds,
    select_kappa,
    structural_constant,
    structural_envelope,
    trapezoid_energy_balance,
)
from lab.management.base import EXIT_CERTIFICATE, EXIT_CONFIG, EXIT_NUMERICAL, failure_category
from lab.models import Artifact, ArtifactKind, Run, RunKind, RunStatus
from lab.persistence import (
    MAGIC,
    TrajectoryWriter,
    config_hash,
    decode_snapshot,
    encode_snapshot,
    load_state,
    load_trajectory,
    read_csv,
    save_state,
)
from lab.quadrature import (
    DecaySeries,
    RadialQuadrature,
    decay_series,
    fit_decay_exponent,
    linear_l2_norm,
    log_times,
    lower_bound_certificate,
    lp_proxy_slope,
    physical_l1_norm,
    plancherel_check,
    profile_size,
)
from lab.semigroup import (
    SemigroupParams,
    asymptotic_greens,
    eigenvalues,
    envelope_violation,
    evaluate,
    fit_high_frequency_envelope,
    greens_batch,
    greens_function,
    greens_integral,
    greens_table,
    oracle_report,
    projections,
    propagate_pair,
    symbol,
)
from lab.solver import (
    State,
    compute_nonlinearities,
    deformation_gradient,
    momentum_residual,
    recover_pressure,
    run,
    step,
    step_count,
)
from lab.spectral import (
    Grid,
    PointEvaluator,
    SpectralField,
    curl_rows,
    div,
    divergence_defect,
    grad,
    hodge_decompose,
    lambda_power,
    laplacian,
    leray_project,
    random_field,
    random_solenoidal,
    tensor_grad,
)
from lab.weak_strong import (
    check_admissible,
    check_alignment,
    gronwall_certificate,
    order_ratio,
    relative_energy,
    remainders,
)


class LabTestMixin:
    """Helpers shared by the lab tests: small grids, seeded fields and states."""

    def make_grid(self, dim=2, n=16, length=2 * np.pi):
        return Grid(dim, n, length)

    def rng(self, seed=0):
        return np.random.default_rng(seed)

    def solenoidal(self, grid, seed=0, band=3, size=1.0):
        u = random_solenoidal(grid, self.rng(seed), band=band)
        return u * (size / u.norm())

    def tensor(self, grid, seed=0, band=3, size=1.0):
        E = random_field(grid, 2, self.rng(seed), band=band)
        return E * (size / E.norm())

    def small_state(self, grid=None, delta=1e-2, seed=0, band=3, mu=1.0):
        grid = grid or self.make_grid()
        return make_zero_strain(delta, seed, grid, band=band, mu=mu)

    def single_mode_state(self, grid, u_amplitude, e_amplitude, mu=1.0):
        """u_0 = a sin(x_1), E_01 = b cos(x_1): one divergence-free mode with |xi| = 1."""
        x1 = grid.coordinates[1]
        u = np.zeros((grid.dim,) + grid.shape)
        E = np.zeros((grid.dim, grid.dim) + grid.shape)
        u[0] = u_amplitude * np.sin(x1)
        E[0, 1] = e_amplitude * np.cos(x1)
        return State(SpectralField.from_physical(grid, u, 1), SpectralField.from_physical(grid, E, 2), 0.0, mu)

    def temp_dir(self):
        directory = tempfile.TemporaryDirectory()
        self.addCleanup(directory.cleanup)
        return Path(directory.name)

    def write_config(self, text):
        path = self.temp_dir() / "run.toml"
        path.write_text(text)
        return path


class SpectralCoreTest(LabTestMixin, SimpleTestCase):
    def test_parseval(self):
        """The coefficient norm equals the grid quadrature of the physical field."""
        grid = self.make_grid(n=12, length=3.0)
        values = self.rng(1).standard_normal(grid.shape)
        field = SpectralField.from_physical(grid, values, 0)
        expected = np.sqrt(grid.spacing**grid.dim * np.sum(values**2))
        self.assertAlmostEqual(field.norm(), expected, places=12)

    def test_gradient_of_sine(self):
        """grad sin(3x) = (3 cos(3x), 0)."""
        grid = self.make_grid()
        x0 = grid.coordinates[0]
        gradient = grad(SpectralField.from_physical(grid, np.sin(3 * x0), 0)).physical()
        np.testing.assert_allclose(gradient[0], 3 * np.cos(3 * x0), atol=1e-12)
        np.testing.assert_allclose(gradient[1], 0.0, atol=1e-12)

    def test_sobolev_weights(self):
        """||sin(2x)||_H2^2 = (1 + 4 + 16) ||sin(2x)||^2 on the 2pi box."""
        grid = self.make_grid()
        field = SpectralField.from_physical(grid, np.sin(2 * grid.coordinates[0]), 0)
        self.assertAlmostEqual(field.norm_sq(), 2 * np.pi**2, places=10)
        self.assertAlmostEqual(field.sobolev_norm(2) ** 2, 21 * 2 * np.pi**2, places=8)

    def test_leray_projection(self):
        """Projected fields are divergence free and projecting twice changes nothing."""
        grid = self.make_grid(dim=3, n=8)
        v = random_field(grid, 1, self.rng(2))
        projected = leray_project(v)
        self.assertLess(divergence_defect(projected), 1e-12 * projected.norm())
        np.testing.assert_allclose(leray_project(projected).coeffs, projected.coeffs, atol=1e-12)

    def test_hodge_decompose(self):
        """The two parts add up to E and the second has divergence-free rows."""
        grid = self.make_grid()
        E = self.tensor(grid, seed=3, band=None)
        gradient_part, curl_part = hodge_decompose(E)
        np.testing.assert_allclose((gradient_part + curl_part).coeffs, E.coeffs, atol=1e-12)
        self.assertLess(div(curl_part).norm(), 1e-12)

    def test_dealias_mask(self):
        """Two-thirds rule keeps |k_i| < N/3: seven modes per axis for N = 12."""
        grid = self.make_grid(n=12)
        self.assertEqual(int(np.sum(grid.dealias_mask)), 7**2)

    def test_random_fields_are_real(self):
        """Random band-limited fields are Hermitian and Nyquist free."""
        grid = self.make_grid(dim=3, n=8)
        field = random_field(grid, 2, self.rng(4))
        self.assertLess(field.hermitian_defect(), 1e-12)
        self.assertTrue(np.all(field.coeffs[..., ~grid.nyquist_free_mask] == 0))

    def test_point_evaluator(self):
        """Evaluation off the grid matches the closed form of a trigonometric polynomial."""
        grid = self.make_grid()
        x0, x1 = grid.coordinates
        field = SpectralField.from_physical(grid, np.sin(x0 + 2 * x1), 0)
        points = np.array([[0.1, 1.3, 4.2], [2.7, 0.4, 5.9]])
        np.testing.assert_allclose(PointEvaluator(field)(points), np.sin(points[0] + 2 * points[1]), atol=1e-12)
        np.testing.assert_allclose(
            PointEvaluator(field)(grid.coordinates.reshape(2, -1)), field.physical().ravel(), atol=1e-12
        )

    def test_grid_mismatch(self):
        """Arithmetic across grids and rank misuse are rejected."""
        a = SpectralField.zeros(self.make_grid(n=8), 1)
        b = SpectralField.zeros(self.make_grid(n=16), 1)
        with self.assertRaises(GridMismatchError):
            a + b
        with self.assertRaises(ContractViolation):
            grad(SpectralField.zeros(self.make_grid(), 2))
        with self.assertRaises(ValueError):
            Grid(2, 15)

    def test_operator_identities(self):
        """curl of a gradient vanishes, div grad is the Laplacian and tensor_grad is grad on vectors."""
        for grid in (self.make_grid(), self.make_grid(dim=3, n=8)):
            u = random_field(grid, 1, self.rng(5))
            f = random_field(grid, 0, self.rng(6))
            self.assertLess(curl_rows(grad(u)).norm(), 1e-12 * grad(u).norm())
            self.assertLess(curl_rows(grad(f)).norm(), 1e-12 * grad(f).norm())
            np.testing.assert_allclose(div(grad(f)).coeffs, laplacian(f).coeffs, atol=1e-9)
            np.testing.assert_allclose(div(grad(u)).coeffs, laplacian(u).coeffs, atol=1e-9)
            np.testing.assert_array_equal(tensor_grad(u).coeffs, grad(u).coeffs)
        with self.assertRaises(ContractViolation):
            tensor_grad(f)
        with self.assertRaises(ContractViolation):
            curl_rows(f)

    def test_lambda_power(self):
        """Lambda^2 is minus the Laplacian and Lambda^-s undoes Lambda^s on zero-mean fields."""
        grid = self.make_grid()
        f = random_field(grid, 1, self.rng(7))
        np.testing.assert_allclose(lambda_power(f, 2).coeffs, -laplacian(f).coeffs, atol=1e-9)
        np.testing.assert_allclose(lambda_power(lambda_power(f, 1.5), -1.5).coeffs, f.coeffs, atol=1e-9)
        self.assertIs(lambda_power(f, 0), f)

    def test_hodge_parts_are_orthogonal(self):
        """The gradient and curl parts of E are L2 orthogonal and split its norm."""
        E = self.tensor(self.make_grid(), seed=8, band=None)
        gradient_part, curl_part = hodge_decompose(E)
        self.assertLess(abs(gradient_part.inner(curl_part)), 1e-12)
        self.assertAlmostEqual(gradient_part.norm_sq() + curl_part.norm_sq(), E.norm_sq(), places=12)


class SemigroupTest(LabTestMixin, SimpleTestCase):
    def test_matches_matrix_exponential(self):
        """The closed form agrees with expm and the semigroup law, including at |xi| = 2/mu."""
        report = oracle_report(
            times=[0.1, 1.0, 10.0],
            xi_mags=[1e-3, 0.37, 1.0, 2.0, 4.0, 25.0],
            mus=[0.5, 1.0, 2.0],
        )
        self.assertLessEqual(report["expm_max_error"], 1e-10)
        self.assertLessEqual(report["semigroup_max_residual"], 1e-10)

    def test_continuous_across_double_eigenvalue(self):
        """No jump when crossing the degenerate wavenumber."""
        mu = 1.0
        at = greens_batch(1.5, 2.0, mu)
        for r in (2.0 - 1e-9, 2.0 + 1e-9):
            self.assertLess(greens_batch(1.5, r, mu).max_abs_diff(at), 1e-7)

    def test_identity_cases(self):
        """G(0) = I for every |xi|, and G(t) = I at xi = 0."""
        identity = np.eye(2)
        for r in (0.0, 0.5, 2.0, 30.0):
            np.testing.assert_allclose(greens_function(0.0, SemigroupParams(1.0, r)).as_array(), identity, atol=1e-15)
        np.testing.assert_allclose(greens_function(7.0, SemigroupParams(1.0, 0.0)).as_array(), identity, atol=1e-15)
        self.assertEqual(eigenvalues(SemigroupParams(1.0, 0.0)), (0j, 0j))

    def test_eigenvalues_solve_characteristic_polynomial(self):
        """lambda^2 + mu r^2 lambda + r^2 = 0 on both branches."""
        for r in (0.5, 5.0):
            params = SemigroupParams(mu=1.0, xi_mag=r)
            for lam in eigenvalues(params):
                self.assertAlmostEqual(abs(lam**2 + r * r * lam + r * r), 0.0, places=9)

    def test_antiderivative(self):
        """The exact time integral of the first row matches adaptive quadrature."""
        for r in (0.7, 4.0):
            row = greens_integral(3.0, r, 1.0)
            params = SemigroupParams(mu=1.0, xi_mag=r)
            g11, _ = integrate.quad(lambda s: greens_function(s, params).g11, 0, 3.0, epsabs=1e-13, epsrel=1e-12)
            g12, _ = integrate.quad(lambda s: greens_function(s, params).g12, 0, 3.0, epsabs=1e-13, epsrel=1e-12)
            self.assertAlmostEqual(float(row.from_u), g11, places=9)
            self.assertAlmostEqual(float(row.from_n), g12, places=9)

    def test_negative_time(self):
        """The propagator is only defined forward in time."""
        with self.assertRaises(ContractViolation):
            greens_batch(-1.0, 1.0, 1.0)

    def test_low_frequency_approximation(self):
        """The damped rotation form tracks the exact propagator at small |xi|."""
        times = np.linspace(0.0, 50.0, 101)
        for r in (1e-3, 0.01, 0.05):
            params = SemigroupParams(mu=1.0, xi_mag=r)
            approx = asymptotic_greens(times, params).as_array()
            exact = greens_batch(times, r, 1.0).as_array()
            gap = np.max(np.abs(approx - exact), axis=(-2, -1)) / np.max(np.abs(exact), axis=(-2, -1))
            self.assertLess(float(np.max(gap)), 5e-3)

    def test_high_frequency_needs_envelope(self):
        """Above eta the asymptotic form is an envelope, which must be supplied."""
        with self.assertRaises(ContractViolation):
            asymptotic_greens(1.0, SemigroupParams(mu=1.0, xi_mag=1.5))

    def test_envelope_bounds_samples(self):
        """The fitted envelope bounds every entry on the samples it was fitted to."""
        times = np.linspace(0.5, 5.0, 19)
        envelope = fit_high_frequency_envelope(1.0, 10.0, times)
        self.assertGreater(envelope.gamma, 0.0)
        self.assertLessEqual(envelope_violation(envelope, times, np.geomspace(10.0, 1e4, 200)), 1.0 + 1e-9)

    def test_table_rows(self):
        """One row per (mu, xi, t) with real and imaginary parts of each entry."""
        rows = list(greens_table([0.0, 1.0], [0.5, 2.0], [1.0]))
        self.assertEqual(len(rows), 4)
        self.assertAlmostEqual(rows[0]["re_g11"], 1.0)
        self.assertEqual(rows[2]["degenerate"], 1)
        self.assertIn("im_g22", rows[0])
        self.assertAlmostEqual(rows[0]["re_lambda_plus"], -0.125)
        self.assertAlmostEqual(rows[0]["im_lambda_plus"], -rows[0]["im_lambda_minus"])

    def test_degenerate_flag_does_not_change_entries(self):
        """The degeneracy threshold only marks rows; the propagator entries stay the same."""
        loose = list(greens_table([0.5, 2.0], [1.5, 2.0], [1.0], disc_eps=1.0))
        strict = list(greens_table([0.5, 2.0], [1.5, 2.0], [1.0], disc_eps=1e-8))
        for a, b in zip(loose, strict):
            for key in ("re_g11", "re_g12", "re_g21", "re_g22"):
                self.assertEqual(a[key], b[key])
        self.assertEqual([row["degenerate"] for row in loose], [1, 1, 1, 1])
        self.assertEqual([row["degenerate"] for row in strict], [0, 0, 1, 1])

    def test_spectral_projections(self):
        """P+ and P- are complementary projections and G(t) = e^{l+ t} P+ + e^{l- t} P-."""
        identity = np.eye(2)
        for r in (0.5, 5.0):
            params = SemigroupParams(mu=1.0, xi_mag=r)
            evaluation = evaluate(params, 1.3)
            self.assertFalse(evaluation.degenerate)
            p_plus, p_minus = evaluation.p_plus, evaluation.p_minus
            np.testing.assert_allclose(p_plus @ p_plus, p_plus, atol=1e-12)
            np.testing.assert_allclose(p_plus + p_minus, identity, atol=1e-12)
            np.testing.assert_allclose(p_plus @ p_minus, np.zeros((2, 2)), atol=1e-12)

            lam_plus, lam_minus = evaluation.lambda_plus, evaluation.lambda_minus
            self.assertAlmostEqual(abs(lam_plus + lam_minus + r * r), 0.0, places=12)
            self.assertAlmostEqual(abs(lam_plus * lam_minus - r * r), 0.0, places=12)

            spectral = np.exp(lam_plus * 1.3) * p_plus + np.exp(lam_minus * 1.3) * p_minus
            np.testing.assert_allclose(spectral, evaluation.greens.as_array(), atol=1e-10)
            again = projections(params, lam_plus, lam_minus)
            np.testing.assert_array_equal(again[0], p_plus)

        at_double = evaluate(SemigroupParams(mu=1.0, xi_mag=2.0))
        self.assertTrue(at_double.degenerate)
        self.assertIsNone(at_double.p_plus)
        np.testing.assert_allclose(at_double.greens.as_array(), identity, atol=1e-15)

    def test_propagate_pair(self):
        """Propagating one (u, n) pair matches the eigenvector law and a direct ODE solve."""
        params = SemigroupParams(mu=1.0, xi_mag=0.5)
        np.testing.assert_array_equal(propagate_pair([0.0, 0.0], 3.0, params), np.zeros(2))

        evaluation = evaluate(params)
        eigenvector = evaluation.p_minus @ np.array([1.0, 0.0])
        np.testing.assert_allclose(
            propagate_pair(eigenvector, 2.0, params), np.exp(2.0 * evaluation.lambda_minus) * eigenvector, atol=1e-10
        )

        w0 = np.array([0.3 + 0.1j, -0.7 + 0.2j])
        a = symbol(0.5, 1.0)
        solution = integrate.solve_ivp(
            lambda t, w: a @ w, (0.0, 3.0), w0, method="DOP853", rtol=1e-12, atol=1e-14
        )
        np.testing.assert_allclose(propagate_pair(w0, 3.0, params), solution.y[:, -1], atol=1e-8)

    def test_symbol(self):
        """The symbol of the pair system."""
        np.testing.assert_array_equal(symbol(2.0, 0.5), np.array([[-2.0, 2.0], [-2.0, 0.0]]))


class QuadratureTest(LabTestMixin, SimpleTestCase):
    def gaussian(self, c0=None):
        return make_profile(0.25, c0=c0, zeta=0.5)

    def test_gaussian_norm_at_zero_time(self):
        """For (e^{-r^2}, e^{-r^2}) in 3D the squared norm is pi^{3/2} / sqrt(2)."""
        profile = self.gaussian()
        expected = profile.c0 * np.sqrt(np.pi**1.5 / np.sqrt(2.0))
        self.assertAlmostEqual(linear_l2_norm(profile, 0.0, dim=3) / expected, 1.0, places=9)

    def test_three_dimensional_rate(self):
        """The L2 norm decays like t^{-3/4} in 3D."""
        series = decay_series(self.gaussian(), log_times(1e2, 1e4, 25), dim=3)
        slope, _ = fit_decay_exponent(series)
        self.assertAlmostEqual(slope, -0.75, delta=0.03)

    def test_two_dimensional_weighted_rate(self):
        """The gradient-weighted norm decays like t^{-1} in 2D."""
        series = decay_series(self.gaussian(), log_times(1e2, 1e4, 25), alpha=1, dim=2)
        slope, _ = fit_decay_exponent(series)
        self.assertAlmostEqual(slope, -1.0, delta=0.05)

    def test_lower_bound_certificate(self):
        """A floored Gaussian passes the lower bound; a high-pass profile fails it."""
        times = log_times(1e2, 1e4, 17)
        passing = lower_bound_certificate(self.gaussian(c0=0.5), times, rho=0.2)
        self.assertTrue(passing["pass"])
        self.assertGreaterEqual(passing["min_m"], 0.2 * passing["max_m"])

        high_pass = make_profile(0.25, c0=0.0, zeta=0.5, shape=ProfileShape.HIGH_PASS)
        failing = lower_bound_certificate(high_pass, times, rho=0.2)
        self.assertFalse(failing["pass"])
        self.assertIsNotNone(failing["violating_time"])

    def test_fit_needs_samples_in_window(self):
        """A window with fewer than eight samples is refused."""
        series = DecaySeries(times=np.array([1.0, 2.0, 3.0]), norms=np.array([1.0, 0.5, 0.3]))
        with self.assertRaises(ContractViolation):
            fit_decay_exponent(series, (1.0, 3.0))

    def test_series_validation(self):
        """Decay series need matching, increasing times and positive norms."""
        with self.assertRaises(ValueError):
            DecaySeries(times=np.array([1.0, 2.0]), norms=np.array([1.0]))
        with self.assertRaises(ValueError):
            DecaySeries(times=np.array([2.0, 1.0]), norms=np.array([1.0, 1.0]))

    def test_lp_ladder(self):
        """Gagliardo-Nirenberg interpolation of the two rates in 3D."""
        self.assertAlmostEqual(lp_proxy_slope(-0.75, -1.25, 2, 3), -0.75)
        self.assertAlmostEqual(lp_proxy_slope(-0.75, -1.25, 4, 3), -1.125)
        self.assertAlmostEqual(lp_proxy_slope(-0.75, -1.25, 6, 3), -1.25)
        self.assertAlmostEqual(lp_proxy_slope(-0.75, -1.25, np.inf, 3), -1.25)
        ladder = lp_ladder(-0.76, -1.24, 6.0, 3, 0.1)
        self.assertTrue(ladder["pass"])
        self.assertTrue(ladder["bracketed"])

    def test_plancherel_sampling(self):
        """Sampling a profile on a large box reproduces the whole-space norm."""
        report = plancherel_check(self.gaussian(), Grid(2, 128, 20 * np.pi), RadialQuadrature(dim=2))
        self.assertLess(report["relative_error"], 1e-6)

    def test_gaussian_l1_norm(self):
        """A Gaussian c0 e^{-r^2} transform comes from a function with L1 norm c0 (2 pi)^{d/2}."""
        for dim in (2, 3):
            l1 = physical_l1_norm(lambda r: 0.5 * np.exp(-(r**2)), dim)
            self.assertAlmostEqual(l1 / (0.5 * (2 * np.pi) ** (dim / 2)), 1.0, places=6)

    def test_profile_size(self):
        """M adds the two L1 norms and the H2 size, and scales linearly with c0."""
        size = profile_size(self.gaussian(c0=0.5), 3)
        self.assertAlmostEqual(size["u_l1"] / (0.5 * (2 * np.pi) ** 1.5), 1.0, places=6)
        self.assertEqual(size["u_l1"], size["n_l1"])
        self.assertGreater(size["h2"], linear_l2_norm(self.gaussian(c0=0.5), 0.0, dim=3))
        self.assertAlmostEqual(size["M"], size["u_l1"] + size["n_l1"] + size["h2"], places=12)
        smaller = profile_size(self.gaussian(c0=0.1), 3)
        self.assertAlmostEqual(size["M"] / smaller["M"], 5.0, places=6)


class InitialDataTest(LabTestMixin, SimpleTestCase):
    def test_zero_strain_size(self):
        """u0 has H2 size delta, E0 vanishes and u0 is divergence free."""
        state = self.small_state(delta=2e-2, seed=5)
        self.assertAlmostEqual(state.u.sobolev_norm(2), 2e-2, places=14)
        self.assertEqual(state.E.norm(), 0.0)
        self.assertLess(state.divergence_ratio(), 1e-12)

    def test_seeded_data_is_reproducible(self):
        """The same seed gives the same coefficients, another seed does not."""
        grid = self.make_grid()
        a = make_zero_strain(1e-2, 9, grid, band=3)
        b = make_zero_strain(1e-2, 9, grid, band=3)
        c = make_zero_strain(1e-2, 10, grid, band=3)
        np.testing.assert_array_equal(a.u.coeffs, b.u.coeffs)
        self.assertFalse(np.allclose(a.u.coeffs, c.u.coeffs))

    def test_lagrangian_data(self):
        """Flow-map strains satisfy the constraints and the delta budget."""
        grid = self.make_grid(n=32)
        data = construct_lagrangian(1e-2, 3, grid, band=3)
        state = data.state
        self.assertAlmostEqual(state.h2_size(), 1e-2, places=12)
        self.assertAlmostEqual(state.E.sobolev_norm(2) / 5e-3, 1.0, delta=0.05)
        self.assertLess(data.report["det_dev"], 1e-6)
        self.assertEqual(data.report["divFT"], div_FT_norm(state.E))
        self.assertLess(curl_commutator_residual(state.E), 1e-6)

    def test_zero_flow_time(self):
        """Without particle motion the strain is zero."""
        data = construct_lagrangian(1e-2, 3, self.make_grid(), flow_time=0.0, band=3)
        self.assertEqual(data.state.E.norm(), 0.0)
        state = make_lagrangian_strain(1e-2, 3, self.make_grid(), flow_time=0.0, band=3)
        self.assertEqual(state.E.norm(), 0.0)
        np.testing.assert_array_equal(state.u.coeffs, data.state.u.coeffs)

    def test_infeasible_profiles(self):
        """Floors above the delta^zeta budget, floored high-pass profiles and bad zeta are refused."""
        with self.assertRaises(InfeasibleProfile):
            make_profile(0.25, c0=0.6, zeta=0.5)
        with self.assertRaises(InfeasibleProfile):
            make_profile(0.25, c0=0.1, zeta=0.5, shape=ProfileShape.HIGH_PASS)
        with self.assertRaises(InfeasibleProfile):
            make_profile(0.25, zeta=1.0)

    def test_perturb_strain(self):
        """The perturbation has the requested L2 size and keeps div E^T = 0."""
        state = self.small_state()
        perturbed = perturb_strain(state, 1e-3, seed=4)
        self.assertAlmostEqual((perturbed.E - state.E).norm(), 1e-3, places=12)
        self.assertLess(div_FT_norm(perturbed.E), 1e-12)


class SolverTest(LabTestMixin, SimpleTestCase):
    def test_exact_linear_stepping(self):
        """Without nonlinear terms the solver reproduces the per-mode ODE for any dt."""
        grid = self.make_grid()
        s0 = self.single_mode_state(grid, 1e-2, 2e-2)
        x1 = grid.coordinates[1]
        for dt in (0.01, 0.1, 1.0):
            final = run(s0, 1.0, dt, nonlinear=False).final
            w = linalg.expm(symbol(1.0, 1.0)) @ np.array([1e-2, -2e-2])
            np.testing.assert_allclose(final.u.physical()[0], w[0] * np.sin(x1), atol=1e-10)
            np.testing.assert_allclose(final.E.physical()[0, 1], -w[1] * np.cos(x1), atol=1e-10)
            self.assertAlmostEqual(final.t, 1.0)

    def test_taylor_green_pressure(self):
        """For the Taylor-Green vortex with E = 0 the pressure is (cos 2x + cos 2y) / 4."""
        grid = self.make_grid()
        x0, x1 = grid.coordinates
        u = np.array([np.sin(x0) * np.cos(x1), -np.cos(x0) * np.sin(x1)])
        state = State(SpectralField.from_physical(grid, u, 1), SpectralField.zeros(grid, 2))
        expected = 0.25 * (np.cos(2 * x0) + np.cos(2 * x1))
        np.testing.assert_allclose(recover_pressure(state).physical(), expected, atol=1e-12)

    def test_strain_forms_agree(self):
        """The advective and conservative strain nonlinearities coincide under the constraints."""
        grid = self.make_grid()
        u = self.solenoidal(grid, seed=1, size=0.1)
        E = grad(self.solenoidal(grid, seed=2, size=0.1))
        state = State(u, E)
        _, advective = compute_nonlinearities(state, "advective")
        _, conservative = compute_nonlinearities(state, "conservative")
        self.assertLess((advective - conservative).norm(), 1e-12 * max(advective.norm(), 1e-30))

    def test_energy_decays(self):
        """A small nonlinear run loses energy and stays divergence free."""
        trajectory = run(self.small_state(), 0.5, 0.05)
        energies = [s.energy() for s in trajectory.states]
        self.assertTrue(all(b <= a for a, b in zip(energies, energies[1:])))
        self.assertLess(trajectory.final.divergence_ratio(), 1e-11)
        self.assertEqual(len(trajectory.energy_steps), 10)

    def test_cadence_and_times(self):
        """Snapshots every cadence steps plus the final one, at exact multiples of dt."""
        trajectory = run(self.small_state(), 0.5, 0.1, cadence=2)
        np.testing.assert_allclose(trajectory.times, [0.0, 0.2, 0.4, 0.5])

    def test_zero_duration(self):
        """T = 0 keeps only the initial state."""
        trajectory = run(self.small_state(), 0.0, 0.1)
        self.assertEqual(len(trajectory.states), 1)
        self.assertEqual(trajectory.energy_steps, [])

    def test_rest_state_stays_at_rest(self):
        """The zero state is a fixed point."""
        final = run(State.at_rest(self.make_grid()), 0.3, 0.1).final
        self.assertEqual(final.energy(), 0.0)

    def test_cfl_violation(self):
        """A step beyond the CFL bound is refused with a suggested dt."""
        state = self.single_mode_state(self.make_grid(), 10.0, 0.0)
        with self.assertRaises(CFLViolation) as raised:
            step(state, 1.0)
        self.assertLess(raised.exception.suggested_dt, 1.0)

    def test_step_count(self):
        """T must be a whole number of steps."""
        self.assertEqual(step_count(1.0, 0.1), 10)
        with self.assertRaises(ContractViolation):
            step_count(1.0, 0.3)

    def test_pressure_balances_the_force(self):
        """With E != 0 the force minus grad p is divergence free."""
        grid = self.make_grid()
        state = State(self.solenoidal(grid, seed=1, size=0.1), self.tensor(grid, seed=2, size=0.1))
        residual = momentum_residual(state, recover_pressure(state))
        self.assertGreater(residual.norm(), 0.0)
        self.assertLess(div(residual).norm(), 1e-12 * residual.norm())

    def test_energy_residual_is_second_order(self):
        """Halving dt divides the per-step energy-law residual by about four."""
        s0 = self.small_state()
        coarse = run(s0, 0.4, 0.02)
        fine = run(s0, 0.4, 0.01, cadence=2)
        check = energy_order_check(coarse, fine, 3.4, 4.6)
        self.assertTrue(check["pass"], check)

    def test_self_convergence(self):
        """Differences between runs at dt, dt/2 and dt/4 shrink by about four."""
        s0 = self.small_state(delta=5e-2, band=2)
        finals = [run(s0, 0.1, dt).final for dt in (0.01, 0.005, 0.0025)]

        def gap(a, b):
            return np.sqrt((a.u - b.u).norm_sq() + (a.E - b.E).norm_sq())

        ratio = gap(finals[0], finals[1]) / gap(finals[1], finals[2])
        self.assertGreaterEqual(ratio, 3.0)
        self.assertLessEqual(ratio, 5.0)

    def test_restart_is_bit_identical(self):
        """Stopping, saving and resuming gives the same coefficients as a straight run."""
        s0 = self.small_state()
        straight = run(s0, 0.4, 0.05).final
        path = self.temp_dir() / "half.vlsnap"
        save_state(path, run(s0, 0.2, 0.05).final)
        resumed = run(load_state(path), 0.2, 0.05).final
        np.testing.assert_array_equal(resumed.u.coeffs, straight.u.coeffs)
        np.testing.assert_array_equal(resumed.E.coeffs, straight.E.coeffs)
        self.assertAlmostEqual(resumed.t, straight.t)

    def test_monitors_do_not_change_the_run(self):
        """A run with monitors attached produces the same states as one without."""
        s0 = self.small_state()
        watched = run(s0, 0.3, 0.05, monitors=Monitor(0.05))
        plain = run(s0, 0.3, 0.05)
        self.assertEqual(len(watched.monitor_rows), len(watched.states))
        for a, b in zip(watched.states, plain.states):
            np.testing.assert_array_equal(a.u.coeffs, b.u.coeffs)
            np.testing.assert_array_equal(a.E.coeffs, b.E.coeffs)


class InvariantsTest(LabTestMixin, SimpleTestCase):
    def test_zero_strain_residuals(self):
        """All structural residuals vanish for E = 0."""
        E = SpectralField.zeros(self.make_grid(), 2)
        self.assertEqual(det_deviation(E), 0.0)
        self.assertEqual(div_FT_norm(E), 0.0)
        self.assertEqual(piola_residual(E), 0.0)
        self.assertEqual(curl_commutator_residual(E), 0.0)

    def test_linear_energy_balance(self):
        """energy(t) + mu int |grad u|^2 stays at energy(0) along an exact linear run."""
        s0 = self.single_mode_state(self.make_grid(), 1e-3, 1e-3)
        states = run(s0, 2.0, 0.01, nonlinear=False).states
        balance = trapezoid_energy_balance(states)
        self.assertLess(max(abs(value) for value in balance), 1e-4 * s0.energy())
        residuals = energy_law_residual(states)
        self.assertLess(max(abs(row["residual"]) for row in residuals), 1e-3 * s0.energy())

    def test_energy_law_needs_three_snapshots(self):
        """Centered differences need an interior snapshot."""
        state = self.small_state()
        with self.assertRaises(ContractViolation):
            energy_law_residual([state, state])

    def test_kappa_selection(self):
        """The selected kappa keeps the sandwich on every probe."""
        grid = self.make_grid()
        probes = probe_states(grid, self.rng(6), count=4)
        kappa = select_kappa(probes, 0.1)
        self.assertGreaterEqual(kappa, 0.0)
        self.assertLessEqual(kappa, 0.1)
        self.assertTrue(all(sandwich_holds(s, kappa) for s in probes))

    def test_hodge_check(self):
        """E = 0 compares trivially, large E is skipped and curl-only E is degenerate."""
        grid = self.make_grid(dim=3, n=8)
        at_rest = State.at_rest(grid)
        result = hodge_equivalence_check(at_rest)
        self.assertEqual(result["status"], HodgeStatus.OK)
        self.assertEqual(result["l2_ratio"], 1.0)
        self.assertIs(result["pass"], True)

        big = at_rest.replace(E=self.tensor(grid, size=10.0))
        skipped = hodge_equivalence_check(big)
        self.assertEqual(skipped["status"], HodgeStatus.SKIPPED)
        self.assertIsNone(skipped["pass"])

        x0 = grid.coordinates[0]
        values = np.zeros((3, 3) + grid.shape)
        values[1, 2] = 1e-3 * np.sin(x0)
        values[2, 1] = -1e-3 * np.sin(x0)
        curl_only = at_rest.replace(E=SpectralField.from_physical(grid, values, 2))
        degenerate = hodge_equivalence_check(curl_only)
        self.assertEqual(degenerate["status"], HodgeStatus.DEGENERATE)
        self.assertIsNone(degenerate["pass"])

    def test_hodge_on_flow_map_strain(self):
        """For a flow-map strain the norms of E and n agree and the Laplacian bound holds."""
        state = construct_lagrangian(1e-2, 3, self.make_grid(n=32), band=3).state
        result = hodge_equivalence_check(state)
        self.assertEqual(result["status"], HodgeStatus.OK)
        self.assertLessEqual(abs(result["l2_ratio"] - 1.0), 0.1)
        self.assertLessEqual(abs(result["grad_ratio"] - 1.0), 0.1)
        self.assertLess(result["lap_constant"], 1.0)
        self.assertLess(result["lap_ratio"], 1.0)
        self.assertIs(result["pass"], True)

        strict = hodge_equivalence_check(state, constant=0.1)
        self.assertIs(strict["pass"], False)

    def test_hodge_summary(self):
        """Checks that do not apply are left out; one failing snapshot fails the run."""
        reports = [
            {"t": 0.0, "pass": True, "lap_constant": 0.7},
            {"t": 0.1, "pass": None},
            {"t": 0.2, "pass": True, "lap_constant": 0.72},
        ]
        summary = hodge_summary(reports)
        self.assertEqual(summary["checked"], 2)
        self.assertEqual(summary["max_lap_constant"], 0.72)
        self.assertTrue(summary["pass"])
        reports.append({"t": 0.3, "pass": False, "lap_constant": 1.5})
        self.assertFalse(hodge_summary(reports)["pass"])

    def test_deformation_gradient(self):
        """F = I + E pointwise, and det F = 1 for E = 0."""
        grid = self.make_grid()
        E = self.tensor(grid, size=0.1)
        F = deformation_gradient(E)
        values = E.physical()
        np.testing.assert_allclose(F[0, 0], 1.0 + values[0, 0], atol=1e-15)
        np.testing.assert_allclose(F[0, 1], values[0, 1], atol=1e-15)
        np.testing.assert_array_equal(deformation_gradient(SpectralField.zeros(grid, 2))[1, 1], np.ones(grid.shape))

    def test_monitor_rows(self):
        """Monitor rows carry every reported column and H_tilde never decreases."""
        monitor = Monitor(0.05)
        rows = [monitor(s) for s in run(self.small_state(), 0.3, 0.1).states]
        for key in ("t", "det_dev", "divFT", "piola", "energy", "G", "H", "H_tilde", "commutator", "h2_size"):
            self.assertIn(key, rows[0])
        tildes = [row["H_tilde"] for row in rows]
        self.assertEqual(tildes, sorted(tildes))

    def test_structural_constant(self):
        """The fitted C is the steepest (dt^2 + aliasing_tol)-scaled drift."""
        rows = [{"t": t, "det_dev": 1e-10 + 2e-6 * (0.01 + 1e-10) * t} for t in (0.0, 0.5, 1.0)]
        self.assertAlmostEqual(structural_constant(rows, 0.1, 1e-10, "det_dev") / 2e-6, 1.0, places=9)
        self.assertEqual(structural_constant(rows[:1], 0.1, 1e-10, "det_dev"), 0.0)
        shrinking = [{"t": 0.0, "det_dev": 1e-9}, {"t": 1.0, "det_dev": 1e-10}]
        self.assertEqual(structural_constant(shrinking, 0.1, 1e-10, "det_dev"), 0.0)

    def test_acceptance_helpers(self):
        """Structural drift constants at dt and dt/2, and Lyapunov monotonicity, on synthetic rows."""
        rows = [
            {"t": 0.0, "det_dev": 1e-10, "divFT": 0.0, "piola": 1e-10, "G": 1.0},
            {"t": 0.5, "det_dev": 2.5e-10, "divFT": 5e-14, "piola": 1e-9, "G": 0.95},
            {"t": 1.0, "det_dev": 4e-10, "divFT": 1e-13, "piola": 2e-9, "G": 0.9},
        ]
        refined = [
            {"t": 0.0, "det_dev": 1e-10, "divFT": 0.0, "piola": 1e-10},
            {"t": 0.5, "det_dev": 1.375e-10, "divFT": 1.25e-14, "piola": 1e-10},
            {"t": 1.0, "det_dev": 1.75e-10, "divFT": 2.5e-14, "piola": 1e-10},
        ]
        envelope = structural_envelope(rows, refined, 0.1)
        self.assertTrue(envelope["det_dev"]["pass"])
        self.assertAlmostEqual(envelope["det_dev"]["ratio"], 1.0, places=6)
        self.assertAlmostEqual(envelope["det_dev"]["limit"] / 4e-10, 1.0, places=6)
        self.assertTrue(envelope["divFT"]["pass"])
        self.assertFalse(envelope["piola"]["pass"])
        self.assertGreater(envelope["piola"]["C"], envelope["piola"]["C_refined"])

        self.assertTrue(lyapunov_monotone(rows, 0.0)["pass"])
        rows[2]["G"] = 1.2
        self.assertFalse(lyapunov_monotone(rows, 0.0)["pass"])


class WeakStrongTest(LabTestMixin, SimpleTestCase):
    def pair(self, seed=0):
        grid = self.make_grid()
        strong = State(self.solenoidal(grid, seed, size=0.1), self.tensor(grid, seed + 1, size=0.1))
        weak = State(self.solenoidal(grid, seed + 2, size=0.1), self.tensor(grid, seed + 3, size=0.1))
        return strong, weak

    def test_reduced_remainders_match_raw_forms(self):
        """R1 equals its raw form and R2 differs from its raw form by the constraint term."""
        strong, weak = self.pair()
        terms = remainders(strong, weak)
        self.assertAlmostEqual(terms.R1, terms.R1_raw, delta=1e-13)
        self.assertLess(abs(terms.discrepancy), 1e-13)

    def test_identical_trajectories(self):
        """A trajectory compared with itself has no gap and passes the same-data bound."""
        states = run(self.small_state(), 0.2, 0.05).states
        report = gronwall_certificate(states, states)
        self.assertTrue(report.same_data)
        self.assertTrue(report.passed)
        self.assertEqual(float(np.max(report.rel_energy)), 0.0)

    def test_perturbed_pair_under_envelope(self):
        """A perturbed strain stays under the fitted Gronwall envelope."""
        s0 = self.small_state()
        strong = run(s0, 0.5, 0.05).states
        weak = run(perturb_strain(s0, 1e-3, seed=1), 0.5, 0.05).states
        report = gronwall_certificate(strong, weak)
        self.assertFalse(report.same_data)
        self.assertTrue(report.passed)
        self.assertGreater(report.rel_energy[0], 0.0)

    def test_energy_gain_is_rejected(self):
        """A trajectory whose energy grows cannot stand in for a weak solution."""
        base = self.small_state()
        states = [base.replace(u=base.u * (1.0 + 0.1 * k), t=0.1 * k) for k in range(3)]
        with self.assertRaises(NonAdmissibleTrajectory):
            check_admissible(states, "weak")

    def test_alignment(self):
        """Snapshot times and grids must match pairwise."""
        state = self.small_state()
        with self.assertRaises(MisalignedTrajectories):
            check_alignment([state], [state.replace(t=0.5)])
        with self.assertRaises(MisalignedTrajectories):
            check_alignment([state], [state, state])
        with self.assertRaises(GridMismatchError):
            relative_energy(state, self.small_state(self.make_grid(n=8)))

    def test_order_ratio(self):
        """Gap ratios near 16 pass, ratios near 4 do not."""
        self.assertTrue(order_ratio(16e-12, 1e-12)["pass"])
        self.assertFalse(order_ratio(4e-12, 1e-12)["pass"])


class PersistenceTest(LabTestMixin, SimpleTestCase):
    def test_snapshot_round_trip(self):
        """A saved state loads back bit for bit."""
        state = self.small_state().replace(t=0.25)
        path = self.temp_dir() / "state.vlsnap"
        save_state(path, state)
        loaded = load_state(path)
        np.testing.assert_array_equal(loaded.u.coeffs, state.u.coeffs)
        np.testing.assert_array_equal(loaded.E.coeffs, state.E.coeffs)
        self.assertEqual(loaded.t, 0.25)
        self.assertEqual(path.read_bytes()[:8], MAGIC)

    def test_single_field_header(self):
        """Single-field snapshots carry the rank in the header."""
        field = self.solenoidal(self.make_grid())
        header, fields = decode_snapshot(encode_snapshot({"u": field}))
        self.assertEqual(header["rank"], 1)
        self.assertEqual(header["N"], 16)
        np.testing.assert_array_equal(fields["u"].coeffs, field.coeffs)

    def test_bad_snapshot(self):
        """Wrong magic and truncated payloads are reported."""
        data = encode_snapshot({"u": self.solenoidal(self.make_grid())})
        with self.assertRaises(ContractViolation):
            decode_snapshot(b"XXXXXXXX" + data[8:])
        with self.assertRaises(ContractViolation):
            decode_snapshot(data[:-16])

    def test_config_hash(self):
        """The hash ignores key order and changes with any value."""
        self.assertEqual(config_hash({"a": 1, "b": [1, 2]}), config_hash({"b": [1, 2], "a": 1}))
        self.assertNotEqual(config_hash({"a": 1}), config_hash({"a": 2}))
        self.assertEqual(len(config_hash({})), 40)

    def test_trajectory_directory(self):
        """A written trajectory has a manifest, tables and loadable snapshots, and no temp files."""
        directory = self.temp_dir() / "run"
        writer = TrajectoryWriter(directory, {"grid": {"N": 16}}, {"recipe": 0})
        trajectory = run(self.small_state(), 0.2, 0.1, writer=writer)
        manifest = writer.finalize()
        self.assertEqual(len(manifest["snapshots"]), 3)
        self.assertEqual(manifest["code_version"], "0.1.0")
        self.assertEqual(len(read_csv(directory / "energy_steps.csv")), 2)
        loaded = load_trajectory(directory)
        np.testing.assert_array_equal(loaded[-1].u.coeffs, trajectory.final.u.coeffs)
        self.assertEqual([p for p in directory.iterdir() if p.name.startswith(".")], [])


class ConfigTest(LabTestMixin, SimpleTestCase):
    def test_defaults_round_trip(self):
        """A config built from defaults survives to_dict / from_dict unchanged."""
        config = RunConfig.from_dict({"experiment": {"kind": "simulate"}})
        self.assertEqual(config.grid["N"], 32)
        self.assertEqual(RunConfig.from_dict(config.to_dict()).to_dict(), config.to_dict())
        self.assertEqual(config.config_hash(), RunConfig.from_dict(config.to_dict()).config_hash())

    def test_unknown_keys_and_sections(self):
        """Unknown keys and sections are rejected with per-section errors."""
        with self.assertRaises(ConfigError) as raised:
            RunConfig.from_dict({"grid": {"points": 16}})
        self.assertIn("grid", raised.exception.errors)
        with self.assertRaises(ConfigError):
            RunConfig.from_dict({"gird": {"N": 16}})

    def test_invalid_values(self):
        """Odd N, reversed windows and fractional step counts fail validation."""
        for data in (
            {"grid": {"N": 15}},
            {"quadrature": {"window_lo": 1e4, "window_hi": 1e2}},
            {"stepping": {"dt": 0.3, "T": 1.0}},
            {"recipe": {"zeta": 1.5}},
            {"recipe": {"shape": "high_pass", "c0": 0.2}},
        ):
            with self.assertRaises(ConfigError):
                RunConfig.from_dict(data)

    def test_environment_overrides(self):
        """VISCOLAB_<SECTION>__<KEY> variables override presets."""
        environ = {"VISCOLAB_GRID__N": "64", "VISCOLAB_STEPPING__DT": "0.025", "VISCOLAB_MU": "3"}
        self.assertEqual(env_overrides(environ), {"grid": {"N": "64"}, "stepping": {"dt": "0.025"}})
        config = load_config(preset="simulate", kind="simulate", environ=environ)
        self.assertEqual(config.grid["N"], 64)
        self.assertEqual(config.stepping["dt"], 0.025)

    def test_explicit_overrides_win(self):
        """Command-line values beat the environment."""
        config = load_config(
            preset="simulate",
            overrides={"recipe": {"seed": 42}},
            environ={"VISCOLAB_RECIPE__SEED": "7"},
        )
        self.assertEqual(config.seed, 42)

    def test_kind_mismatch(self):
        """A config for one experiment cannot drive another."""
        with self.assertRaises(ConfigError):
            load_config(preset="greens", kind="simulate", environ={})

    def test_presets_load(self):
        """Every shipped preset validates."""
        self.assertIn("gaussian-3d", available_presets())
        for name in available_presets():
            config = load_config(preset=name, environ={})
            self.assertTrue(config.kind)

    def test_toml_errors(self):
        """Broken TOML and missing files are configuration errors."""
        with self.assertRaises(ConfigError):
            load_config(self.write_config("[grid\nN = 3"), environ={})
        with self.assertRaises(ConfigError):
            load_config(self.temp_dir() / "missing.toml", environ={})


class CommandTest(LabTestMixin, TestCase):
    def run_command(self, name, **options):
        out = StringIO()
        call_command(name, stdout=out, **options)
        return json.loads(out.getvalue())

    def test_simulate_zero_duration(self):
        """T = 0 writes a manifest and a single snapshot, and records the run."""
        config = self.write_config(
            "[grid]\nN = 16\n[recipe]\nkind = \"zero_strain\"\nmodes = 3\n[stepping]\nT = 0.0\n"
        )
        directory = self.temp_dir() / "sim"
        summary = self.run_command("simulate", config=str(config), out=str(directory))
        self.assertTrue(summary["passed"])
        manifest = json.loads((directory / "manifest.json").read_text())
        self.assertEqual(len(manifest["snapshots"]), 1)
        self.assertEqual(manifest["seeds"], {"recipe": 0})
        run_record = Run.objects.get()
        self.assertEqual(run_record.status, RunStatus.PASSED)
        self.assertEqual(run_record.exit_code, 0)
        self.assertTrue(run_record.artifacts.filter(kind=ArtifactKind.SNAPSHOT).exists())

    def test_seed_flag(self):
        """--seed overrides the recipe seed and lands in the manifest."""
        config = self.write_config("[grid]\nN = 16\n[recipe]\nmodes = 3\n[stepping]\nT = 0.0\n")
        directory = self.temp_dir() / "sim"
        self.run_command("simulate", config=str(config), out=str(directory), seed=2**63 + 5)
        manifest = json.loads((directory / "manifest.json").read_text())
        self.assertEqual(manifest["seeds"]["recipe"], 2**63 + 5)

    def emit_trajectory(self, cadence=1):
        config = self.write_config(
            "[grid]\nN = 32\n[recipe]\nmodes = 2\n[stepping]\ndt = 0.05\nT = 0.2\n"
            f"cadence = {cadence}\n"
        )
        trajectory = self.temp_dir() / "traj"
        self.run_command("simulate", config=str(config), out=str(trajectory))
        return trajectory

    def monitor_config(self, trajectory):
        return self.write_config(
            f"[grid]\nN = 32\n[recipe]\nmodes = 2\n[output]\ntrajectory = \"{trajectory}\"\n"
        )

    def test_invariants_on_emitted_trajectory(self):
        """Monitoring a written trajectory starts from the initial-data residuals and passes."""
        trajectory = self.emit_trajectory()
        directory = self.temp_dir() / "inv"
        summary = self.run_command("invariants", config=str(self.monitor_config(trajectory)), out=str(directory))
        self.assertTrue(summary["passed"])
        self.assertIs(summary["summary"]["pass"], True)
        self.assertTrue(all(summary["summary"]["structural"].values()))
        self.assertTrue(summary["summary"]["hodge"])

        rows = read_csv(directory / "monitors.csv")
        initial = json.loads((trajectory / "initial_data.json").read_text())
        self.assertEqual(len(rows), 5)
        self.assertEqual(len(read_csv(directory / "monitors_refined.csv")), 5)
        self.assertEqual(float(rows[0]["det_dev"]), initial["det_dev"])
        self.assertEqual(float(rows[0]["divFT"]), initial["divFT"])

    def test_invariants_reject_broken_strain(self):
        """A snapshot whose strain no longer matches the run fails the structural check with status 3."""
        trajectory = self.emit_trajectory()
        manifest = json.loads((trajectory / "manifest.json").read_text())
        last = trajectory / manifest["snapshots"][-1]["file"]
        save_state(last, perturb_strain(load_state(last), 1e-2, seed=1))

        directory = self.temp_dir() / "inv"
        with self.assertRaises(CommandError) as raised:
            call_command(
                "invariants", config=str(self.monitor_config(trajectory)), out=str(directory), stdout=StringIO()
            )
        self.assertEqual(raised.exception.returncode, EXIT_CERTIFICATE)
        checks = json.loads((directory / "checks.json").read_text())
        self.assertFalse(checks["structural"]["det_dev"]["pass"])
        self.assertEqual(Run.objects.get(kind=RunKind.INVARIANTS).status, RunStatus.FAILED)

    def test_misaligned_weak_trajectory(self):
        """A weak trajectory on other snapshot times is a numerical failure, status 5."""
        weak = self.emit_trajectory(cadence=1)
        config = self.write_config(
            "[grid]\nN = 32\n[recipe]\nmodes = 2\n[stepping]\ndt = 0.05\nT = 0.2\ncadence = 2\n"
            f"[weak_strong]\nweak_trajectory = \"{weak}\"\n"
        )
        with self.assertRaises(CommandError) as raised:
            call_command("weak_strong", config=str(config), out=str(self.temp_dir() / "ws"), stdout=StringIO())
        self.assertEqual(raised.exception.returncode, EXIT_NUMERICAL)
        self.assertIn("numerical failure", str(raised.exception))
        record = Run.objects.get(kind=RunKind.WEAK_STRONG)
        self.assertEqual(record.status, RunStatus.ERROR)
        self.assertEqual(record.summary["category"], "numerical")

    def test_failure_categories(self):
        """Each lab error maps to one exit status."""
        self.assertEqual(failure_category(NonDiffeomorphicMap(-0.1)), (EXIT_NUMERICAL, "numerical"))
        self.assertEqual(failure_category(InterpolationResidualError({"det_dev": 1e-3})), (EXIT_NUMERICAL, "numerical"))
        self.assertEqual(failure_category(MisalignedTrajectories("times differ")), (EXIT_NUMERICAL, "numerical"))
        self.assertEqual(failure_category(ContractViolation("bad call")), (EXIT_NUMERICAL, "numerical"))
        self.assertEqual(failure_category(GridMismatchError("grids differ")), (EXIT_CONFIG, "configuration"))
        self.assertEqual(failure_category(CFLViolation(1.0, 0.1)), (EXIT_CONFIG, "configuration"))
        self.assertEqual(failure_category(NonAdmissibleTrajectory("weak", 0.1, 1e-3)), (EXIT_CERTIFICATE, "certificate"))
        self.assertEqual(failure_category(ValueError("bad value")), (EXIT_CONFIG, "configuration"))

    def test_weak_strong_same_data(self):
        """dt and dt/2 runs from the same data pass the same-data certificate."""
        config = self.write_config(
            "[grid]\nN = 16\n[recipe]\nmodes = 3\n[stepping]\ndt = 0.05\nT = 0.2\ncadence = 1\n"
        )
        directory = self.temp_dir() / "ws"
        summary = self.run_command("weak_strong", config=str(config), out=str(directory))
        self.assertTrue(summary["summary"]["same_data"])
        self.assertEqual(len(read_csv(directory / "relative_energy.csv")), 5)
        self.assertTrue((directory / "strong" / "manifest.json").exists())

    def test_linear_decay_preset(self):
        """The 2D preset reproduces the t^{-1/2} rate."""
        directory = self.temp_dir() / "decay"
        self.run_command("linear_decay", preset="gaussian-2d", out=str(directory))
        slopes = json.loads((directory / "slopes.json").read_text())["slopes"]
        self.assertAlmostEqual(slopes["0"]["slope"], -0.5, delta=0.03)
        self.assertAlmostEqual(slopes["1"]["slope"], -1.0, delta=0.05)
        profile = json.loads((directory / "profile.json").read_text())
        self.assertAlmostEqual(profile["M"], profile["u_l1"] + profile["n_l1"] + profile["h2"], places=12)
        self.assertAlmostEqual(profile["M_over_budget"], profile["M"] / profile["budget"], places=12)

    def test_high_pass_preset_fails_certificate(self):
        """A profile without a low-frequency floor fails the lower bound with exit status 3."""
        with self.assertRaises(CommandError) as raised:
            call_command("linear_decay", preset="high-pass", out=str(self.temp_dir() / "hp"), stdout=StringIO())
        self.assertEqual(raised.exception.returncode, 3)
        self.assertEqual(Run.objects.get().status, RunStatus.FAILED)

    def test_greens_dump(self):
        """A small table passes the oracles; an impossible tolerance exits with status 3."""
        text = (
            "[greens]\ntimes = [0.1, 1.0]\nmus = [1.0]\nxi_min = 0.01\nxi_max = 10.0\nxi_count = 8\n"
        )
        directory = self.temp_dir() / "greens"
        summary = self.run_command("greens_dump", config=str(self.write_config(text)), out=str(directory))
        self.assertLessEqual(summary["summary"]["expm_max_error"], 1e-10)
        rows = read_csv(directory / "greens.csv")
        self.assertEqual(len(rows), 2 * 9)
        self.assertIn("re_g12", rows[0])

        strict = text + "[tolerances]\noracle_tol = 1e-300\n"
        with self.assertRaises(CommandError) as raised:
            call_command(
                "greens_dump",
                config=str(self.write_config(strict)),
                out=str(self.temp_dir() / "strict"),
                stdout=StringIO(),
            )
        self.assertEqual(raised.exception.returncode, 3)

    def test_config_errors_exit_with_two(self):
        """Unknown presets and malformed configs are usage errors, not certificate failures."""
        with self.assertRaises(CommandError) as raised:
            call_command("simulate", preset="no-such-preset", stdout=StringIO())
        self.assertEqual(raised.exception.returncode, 2)
        with self.assertRaises(CommandError) as raised:
            call_command("simulate", config=str(self.write_config("[grid]\nN = 15\n")), stdout=StringIO())
        self.assertEqual(raised.exception.returncode, 2)


class RunRegistryTest(LabTestMixin, TestCase):
    def setUp(self):
        self.client = Client()
        self.directory = self.temp_dir()
        (self.directory / "slopes.json").write_text('{"slope": -0.75}')
        (self.directory / "state.vlsnap").write_bytes(MAGIC)
        self.run = Run.objects.create(
            kind=RunKind.LINEAR_DECAY, config={}, config_hash="a" * 40, seed="0", output_dir=str(self.directory)
        )
        self.run.finish(RunStatus.PASSED, 0, {"slope": -0.75})
        self.run.collect_artifacts()

    def test_manager(self):
        """Manager helpers filter by kind, status and config hash."""
        Run.objects.create(kind=RunKind.SIMULATE, config={}, config_hash="b" * 40, output_dir="x")
        self.assertEqual(Run.objects.of_kind(RunKind.LINEAR_DECAY).count(), 1)
        self.assertEqual(Run.objects.passed().count(), 1)
        self.assertEqual(Run.objects.latest_for_hash("a" * 40), self.run)
        self.assertIsNone(Run.objects.latest_for_hash("b" * 40))
        self.assertEqual(len(Run.objects.recent()), 2)

    def test_run_views(self):
        """Run list and detail are served as JSON."""
        response = self.client.get(reverse("run_list"))
        self.assertEqual(response.status_code, 200)
        self.assertEqual(response.json()["runs"][0]["kind"], RunKind.LINEAR_DECAY)
        self.assertEqual(self.client.get(reverse("run_list"), {"kind": "nope"}).status_code, 400)

        detail = self.client.get(reverse("run_detail", args=[self.run.id])).json()
        self.assertEqual({a["name"] for a in detail["artifacts"]}, {"slopes.json", "state.vlsnap"})

    def test_artifact_data(self):
        """JSON and CSV artifacts are streamed; snapshots are not served."""
        slopes = Artifact.objects.get(name="slopes.json")
        response = self.client.get(reverse("artifact_data", args=[self.run.id, slopes.id]))
        self.assertEqual(response.status_code, 200)
        self.assertEqual(json.loads(b"".join(response.streaming_content)), {"slope": -0.75})

        snapshot = Artifact.objects.get(name="state.vlsnap")
        response = self.client.get(reverse("artifact_data", args=[self.run.id, snapshot.id]))
        self.assertEqual(response.status_code, 404)
