import math

import numpy as np
import pytest
from scipy.integrate import dblquad

from polarsim import bath
from polarsim.bath import BathSpec, NumericsError

FIG2 = BathSpec(alpha=0.2, omega_c=10.0, beta=1.0)
ZERO_T = BathSpec(alpha=0.2, omega_c=10.0, beta=math.inf)

# independent adaptive-quadrature oracle values (mpmath, 40 digits, 1e-12 tol)
B_FIG2 = 0.6626777910960546
PHI_FIG2_TAU05 = -0.012255551647722436 - 0.011834319526627219j


def test_spec_validation():
    with pytest.raises(ValueError):
        BathSpec(alpha=-0.1, omega_c=10.0, beta=1.0)
    with pytest.raises(ValueError):
        BathSpec(alpha=0.1, omega_c=0.0, beta=1.0)
    with pytest.raises(ValueError):
        BathSpec(alpha=0.1, omega_c=10.0, beta=0.0)
    assert BathSpec(alpha=0.1, omega_c=10.0, beta=math.inf).zero_temperature


class TestSpectralDensity:
    def test_zero_at_origin(self):
        assert bath.spectral_density(0.0, FIG2) == 0.0

    def test_value_at_cutoff(self):
        # J(omega_c) = alpha omega_c / e
        expected = 0.2 * 10.0 * math.exp(-1.0)
        assert bath.spectral_density(10.0, FIG2) == pytest.approx(expected, rel=1e-14)

    def test_argmax_at_three_omega_c(self):
        nu = np.linspace(0.1, 100.0, 20001)
        j = bath.spectral_density(nu, FIG2)
        assert nu[np.argmax(j)] == pytest.approx(3 * FIG2.omega_c, abs=2e-2)

    def test_negative_frequency_rejected(self):
        with pytest.raises(ValueError):
            bath.spectral_density(-1.0, FIG2)


class TestRenormalization:
    def test_uncoupled(self):
        assert bath.renormalization_B(BathSpec(0.0, 10.0, 1.0)) == 1.0

    @pytest.mark.parametrize("alpha", [0.05, 0.2, 0.5])
    def test_zero_temperature_closed_form(self, alpha):
        spec = BathSpec(alpha, 10.0, math.inf)
        assert bath.renormalization_B(spec) == pytest.approx(math.exp(-2 * alpha), rel=1e-10)

    def test_fig2_value_against_frozen_oracle(self):
        assert bath.renormalization_B(FIG2) == pytest.approx(B_FIG2, rel=1e-10)

    def test_series_route_agrees(self):
        for alpha in (0.05, 0.2, 0.4):
            for beta in (0.5, 1.0, 4.0, math.inf):
                spec = BathSpec(alpha, 10.0, beta)
                assert bath.renormalization_b_series(spec) == pytest.approx(
                    bath.renormalization_B(spec), rel=1e-11)

    def test_monotone_in_coupling_and_temperature(self):
        alphas = [0.05, 0.1, 0.2, 0.35, 0.5]
        betas = [0.2, 0.5, 1.0, 2.0, 5.0]
        grid = np.array([[bath.renormalization_B(BathSpec(a, 10.0, b))
                          for b in betas] for a in alphas])
        assert np.all(np.diff(grid, axis=0) < 0)      # decreasing in alpha
        assert np.all(np.diff(grid, axis=1) > 0)      # increasing in beta


class TestPhononPropagator:
    def test_phi0_identity(self):
        # phi(0) = -2 ln B, imaginary part exactly zero
        phi0 = bath.phonon_propagator(0.0, FIG2)
        assert phi0.imag == 0.0
        assert phi0.real == pytest.approx(-2 * math.log(bath.renormalization_B(FIG2)), rel=1e-10)

    @pytest.mark.parametrize("tau", [0.0, 0.1, 0.5, 1.3, 2.0])
    def test_zero_temperature_closed_form(self, tau):
        expected = 4 * 0.2 / (1 + 1j * 10.0 * tau) ** 2
        assert bath.phonon_propagator(tau, ZERO_T) == pytest.approx(expected, abs=1e-10)

    def test_envelope_decay(self):
        phi0 = bath.phonon_propagator(0.0, FIG2)
        phi = bath.phonon_propagator(0.5, FIG2)
        assert abs(phi) < abs(phi0)
        assert phi == pytest.approx(PHI_FIG2_TAU05, abs=1e-11)

    def test_hermiticity(self):
        assert bath.phonon_propagator(-0.7, FIG2) == pytest.approx(
            np.conj(bath.phonon_propagator(0.7, FIG2)), abs=1e-14)

    def test_series_route_agrees(self):
        tau = np.array([0.0, 0.03, 0.4, 1.0, 6.0, 30.0])
        series = bath.phi_on_grid(tau, FIG2)
        quad = np.array([bath.phonon_propagator(x, FIG2) for x in tau])
        assert np.max(np.abs(series - quad)) < 1e-11


class TestPolaronCorrelation:
    @pytest.mark.parametrize("alpha", [0.05, 0.1, 0.2, 0.35, 0.5])
    @pytest.mark.parametrize("beta", [0.2, 0.5, 1.0, 2.0, 5.0])
    def test_initial_value_identities(self, alpha, beta):
        spec = BathSpec(alpha, 10.0, beta)
        b = bath.renormalization_B(spec)
        lx = bath.polaron_correlation(0.0, "x", spec)
        ly = bath.polaron_correlation(0.0, "y", spec)
        assert lx == pytest.approx((1 - b**2) ** 2 / 2, rel=1e-8)
        assert ly == pytest.approx((1 - b**4) / 2, rel=1e-8)
        assert abs(lx.imag) < 1e-12 and abs(ly.imag) < 1e-12

    def test_uncoupled_vanishes(self):
        spec = BathSpec(0.0, 10.0, 1.0)
        for tau in (0.0, 0.5, 3.0):
            assert bath.polaron_correlation(tau, "x", spec) == 0.0
            assert bath.polaron_correlation(tau, "y", spec) == 0.0

    def test_long_lag_decay(self):
        lx0 = abs(bath.polaron_correlation(0.0, "x", FIG2))
        ly0 = abs(bath.polaron_correlation(0.0, "y", FIG2))
        assert abs(bath.polaron_correlation(50.0, "x", FIG2)) < 1e-6 * lx0
        assert abs(bath.polaron_correlation(50.0, "y", FIG2)) < 1e-3 * ly0

    def test_bad_axis(self):
        with pytest.raises(ValueError):
            bath.polaron_correlation(0.0, "z", FIG2)


class TestLabCorrelation:
    def test_imaginary_part_zero_at_origin(self):
        assert bath.lab_correlation(0.0, FIG2).imag == 0.0

    @pytest.mark.parametrize("t", [0.0, 0.2, 0.9, 2.0])
    def test_zero_temperature_closed_form(self, t):
        expected = 6 * 0.2 * 100.0 / (1 + 1j * 10.0 * t) ** 4
        assert bath.lab_correlation(t, ZERO_T) == pytest.approx(expected, abs=1e-8)

    def test_zero_temperature_initial_value(self):
        assert bath.lab_correlation(0.0, ZERO_T) == pytest.approx(6 * 0.2 * 100.0, rel=1e-10)

    def test_series_route_agrees(self):
        t = np.array([0.0, 0.05, 0.3, 1.7, 10.0])
        series = bath.lab_correlation_on_grid(t, FIG2)
        quad = np.array([bath.lab_correlation(x, FIG2) for x in t])
        assert np.max(np.abs(series - quad)) < 1e-9


class TestMemoryKernel:
    def test_uncoupled_vanishes(self):
        spec = BathSpec(0.0, 10.0, 1.0)
        assert np.all(bath.eta_array(5, 0.1, spec) == 0.0)

    def test_small_step_taylor(self):
        # time-ordered diagonal window: eta_0 -> C(0) delta^2 / 2
        c0 = bath.lab_correlation(0.0, FIG2).real
        for delta in (2e-3, 1e-3):
            eta0 = bath.eta_kernel(0, delta, FIG2)
            assert eta0 == pytest.approx(c0 * delta**2 / 2, rel=5e-2 * delta / 1e-3)

    def test_diagonal_against_2d_quadrature(self):
        delta = 0.05

        def c_re(s):
            return bath.lab_correlation_on_grid(np.array([abs(s)]), FIG2)[0].real

        def c_im(s):
            v = bath.lab_correlation_on_grid(np.array([abs(s)]), FIG2)[0].imag
            return v if s >= 0 else -v

        re0 = dblquad(lambda tpp, tp: c_re(tp - tpp), 0, delta, 0, lambda tp: tp,
                      epsabs=1e-13, epsrel=1e-12)[0]
        im0 = dblquad(lambda tpp, tp: c_im(tp - tpp), 0, delta, 0, lambda tp: tp,
                      epsabs=1e-13, epsrel=1e-12)[0]
        assert bath.eta_kernel(0, delta, FIG2) == pytest.approx(re0 + 1j * im0, abs=1e-12)

    def test_offdiagonal_against_frozen_2d_quadrature(self):
        # dblquad over the quadrature-route C(t), rectangle [d,2d] x [0,d]
        eta1_oracle = -0.007955869373847298 - 0.15600000000000003j
        assert bath.eta_kernel(1, 0.05, FIG2) == pytest.approx(eta1_oracle, abs=1e-12)

    def test_stationarity_of_shifted_windows(self):
        # windows (i, j) and (i+1, j+1) integrate to the same value
        delta = 0.07

        def window(i, j):
            def c_re(s):
                return bath.lab_correlation_on_grid(np.array([abs(s)]), FIG2)[0].real

            def c_im(s):
                v = bath.lab_correlation_on_grid(np.array([abs(s)]), FIG2)[0].imag
                return v if s >= 0 else -v

            re = dblquad(lambda tpp, tp: c_re(tp - tpp), (i - 1) * delta, i * delta,
                         (j - 1) * delta, j * delta, epsabs=1e-13, epsrel=1e-12)[0]
            im = dblquad(lambda tpp, tp: c_im(tp - tpp), (i - 1) * delta, i * delta,
                         (j - 1) * delta, j * delta, epsabs=1e-13, epsrel=1e-12)[0]
            return re + 1j * im

        w21 = window(2, 1)
        w32 = window(3, 2)
        assert abs(w21 - w32) < 1e-12
        assert bath.eta_kernel(1, delta, FIG2) == pytest.approx(w21, abs=1e-11)

    def test_bad_arguments(self):
        with pytest.raises(ValueError):
            bath.eta_kernel(-1, 0.1, FIG2)
        with pytest.raises(ValueError):
            bath.eta_array(3, 0.0, FIG2)


class TestCorrelationTable:
    def test_invariants(self):
        tbl = bath.build_correlation_table(FIG2, dt=0.02, n_lags=500)
        assert tbl.tau[0] == 0.0
        assert np.all(np.diff(tbl.tau) > 0)
        b = tbl.b
        assert abs(tbl.lambda_x[0] - (1 - b**2) ** 2 / 2) < 1e-8 * abs(tbl.lambda_x[0])
        assert abs(tbl.lambda_y[0] - (1 - b**4) / 2) < 1e-8 * abs(tbl.lambda_y[0])
        assert tbl.phi[0].imag == pytest.approx(0.0, abs=1e-14)
        for arr in (tbl.phi, tbl.lambda_x, tbl.lambda_y, tbl.c_lab):
            assert np.all(np.isfinite(arr))

    def test_methods_agree(self):
        fast = bath.build_correlation_table(FIG2, dt=0.1, n_lags=20, method="series")
        slow = bath.build_correlation_table(FIG2, dt=0.1, n_lags=20, method="quadrature")
        assert np.max(np.abs(fast.phi - slow.phi)) < 1e-10
        assert np.max(np.abs(fast.lambda_x - slow.lambda_x)) < 1e-10
        assert np.max(np.abs(fast.lambda_y - slow.lambda_y)) < 1e-10
        assert np.max(np.abs(fast.c_lab - slow.c_lab)) < 1e-9
        assert fast.b == pytest.approx(slow.b, rel=1e-11)

    def test_deterministic_rebuild(self):
        t1 = bath.build_correlation_table(FIG2, dt=0.02, n_lags=300)
        t2 = bath.build_correlation_table(FIG2, dt=0.02, n_lags=300)
        assert np.array_equal(t1.phi, t2.phi)
        assert np.array_equal(t1.lambda_x, t2.lambda_x)
        assert np.array_equal(t1.c_lab, t2.c_lab)
        assert t1.b == t2.b

    def test_point_quadratures_deterministic(self):
        a = bath.phonon_propagator(0.37, FIG2)
        b_val = bath.phonon_propagator(0.37, FIG2)
        assert a == b_val
        assert bath.lab_correlation(0.37, FIG2) == bath.lab_correlation(0.37, FIG2)

    def test_interpolation(self):
        tbl = bath.build_correlation_table(FIG2, dt=0.02, n_lags=400)
        tau = 0.317
        exact = bath.phi_on_grid(np.array([tau]), FIG2)[0]
        # off-grid queries are cubic-interpolated; the solvers sample on-grid
        assert tbl.interp("phi", tau) == pytest.approx(exact, abs=1e-6)
        with pytest.raises(ValueError):
            tbl.interp("nope", 0.1)

    def test_memory_lags_horizon_error(self):
        tbl = bath.build_correlation_table(FIG2, dt=0.02, n_lags=100)
        with pytest.raises(NumericsError):
            tbl.memory_lags(threshold=1e-10)
        assert tbl.memory_lags(threshold=1e-1) >= 1

    def test_csv_dump(self, tmp_path):
        tbl = bath.build_correlation_table(FIG2, dt=0.05, n_lags=10)
        out = tmp_path / "table.csv"
        tbl.dump_csv(out)
        text = out.read_text().splitlines()
        assert text[0].startswith("tau,phi_re,phi_im")
        assert len(text) == 12


def test_quadrature_failure_reported():
    # a spectral density pushed far outside sane parameters trips the
    # convergence guard instead of returning garbage
    with pytest.raises(NumericsError):
        bath._quad_bath(lambda nu: math.sin(1.0 / (nu + 1e-12)) / (nu + 1e-12) ** 0.999,
                        FIG2, power=1, prefactor=1.0)


def test_memory_horizon_search():
    t = bath.memory_horizon(FIG2, threshold=1e-8)
    spec = bath.BathSpec(0.2, 10.0, 1.0)
    b = bath.renormalization_b_series(spec)
    phi = bath.phi_on_grid(np.array([t]), spec)[0]
    ly = 0.5 * b**2 * abs(np.exp(phi) - np.exp(-phi))
    assert ly < 1e-8
    assert bath.memory_horizon(BathSpec(0.0, 10.0, 1.0)) == 0.0
