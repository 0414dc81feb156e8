"""Polaron-frame TCL2 master equation for the driven spin-boson model.

The reduced state is propagated in the Schroedinger picture: coherent part
-i[H_S(t), rho] plus the back-rotated dissipator

    -(delta^2/4) sum_a [sigma_a, Theta_a(t) rho - rho Theta_a(t)^dag],

with the non-Hermitian rate operators

    Theta_a(t) = int_0^{t-t0} dtau Lambda_a(tau) U(t, t-tau) sigma_a U(t, t-tau)^dag.

Basis convention: {|e>, |g>} with sigma_z |e> = +|e>; the coherence operator
is sigma = |g><e| so that <sigma> = rho_eg, <sigma_x> = 2 Re <sigma_L> and
<sigma_y> = -2 Im <sigma_L>.

All rate-operator integrals are trapezoidal sums on the solver lag grid with
cached two-time propagators; a single trajectory is strictly sequential while
independent trajectories can run concurrently against a shared read-only
correlation table.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from polarsim.bath import CorrelationTable, NumericsError

__all__ = [
    "ConfigError",
    "PositivityWarning",
    "RateOperators",
    "SteadyStateResult",
    "SystemSpec",
    "Trajectory",
    "correction_operators",
    "evolve",
    "hamiltonian_polaron",
    "lab_coherence",
    "liouvillian_markov",
    "pauli_from_coherence",
    "propagator",
    "rate_operator_grid",
    "rate_operators_markov",
    "rate_operators_tcl",
    "steady_state",
    "validate_density_matrix",
]

SI = np.eye(2, dtype=complex)
SX = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
SY = np.array([[0.0, -1.0j], [1.0j, 0.0]], dtype=complex)
SZ = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex)
#: lab-frame coherence operator sigma = |g><e|
SIGMA = np.array([[0.0, 0.0], [1.0, 0.0]], dtype=complex)
EXCITED = np.array([[1.0, 0.0], [0.0, 0.0]], dtype=complex)


class ConfigError(ValueError):
    """Invalid solver or protocol configuration."""


class PositivityWarning(UserWarning):
    """TCL2 is not completely positive; emitted when rho develops a
    negative eigenvalue below the monitoring threshold."""


@dataclass(frozen=True)
class SystemSpec:
    """Two-level system parameters: bare tunnelling plus a bias protocol.

    The bias is either the constant ``epsilon`` or, when ``sweep_rate`` is
    set, the linear ramp epsilon(t) = sweep_rate * t on [t_start, t_end].
    ``delta_r`` is the renormalized tunnelling B * delta and must be attached
    via :meth:`with_renormalization` before polaron-frame propagation.
    """

    delta: float
    epsilon: float = 0.0
    sweep_rate: float | None = None
    t_start: float | None = None
    t_end: float | None = None
    delta_r: float | None = None

    def __post_init__(self):
        if self.delta < 0:
            raise ValueError("tunnelling delta must be >= 0")
        sweep_fields = (self.sweep_rate, self.t_start, self.t_end)
        if any(f is not None for f in sweep_fields) and any(f is None for f in sweep_fields):
            raise ValueError("sweep requires sweep_rate, t_start and t_end together")
        if self.t_start is not None and not self.t_start < self.t_end:
            raise ValueError("sweep window must satisfy t_start < t_end")
        if self.delta_r is not None and not 0.0 <= self.delta_r <= self.delta + 1e-12:
            raise ValueError("renormalized tunnelling must lie in [0, delta]")

    @property
    def is_sweep(self) -> bool:
        return self.sweep_rate is not None

    def bias(self, t):
        if self.is_sweep:
            return self.sweep_rate * np.asarray(t, dtype=float)
        return self.epsilon if np.isscalar(t) else np.full(np.shape(t), self.epsilon)

    def with_renormalization(self, b: float) -> "SystemSpec":
        return replace(self, delta_r=b * self.delta)

    def _require_delta_r(self) -> float:
        if self.delta_r is None:
            raise ConfigError("delta_r not set; call with_renormalization(B) first")
        return self.delta_r


class RateOperators(NamedTuple):
    theta_x: np.ndarray
    theta_y: np.ndarray


def hamiltonian_polaron(t: float, sys: SystemSpec) -> np.ndarray:
    """Polaron-frame system Hamiltonian eps(t)/2 sigma_z + delta_R/2 sigma_x."""
    dr = sys._require_delta_r()
    return 0.5 * float(sys.bias(t)) * SZ + 0.5 * dr * SX


def _su2_rotation(eps, dr, dt):
    """exp(-i (eps sigma_z + dr sigma_x) dt / 2), vectorised over eps/dt."""
    eps = np.asarray(eps, dtype=float)
    dt = np.asarray(dt, dtype=float)
    eta = np.hypot(eps, dr)
    half = 0.5 * eta * dt
    sinc = np.where(eta == 0.0, dt * 0.5, np.sin(half) / np.where(eta == 0.0, 1.0, eta))
    cos = np.cos(half)
    u = np.empty(np.broadcast_shapes(eps.shape, dt.shape) + (2, 2), dtype=complex)
    u[..., 0, 0] = cos - 1j * sinc * eps
    u[..., 1, 1] = cos + 1j * sinc * eps
    u[..., 0, 1] = -1j * sinc * dr
    u[..., 1, 0] = -1j * sinc * dr
    return u


def propagator(t2: float, t1: float, sys: SystemSpec, step: float | None = None) -> np.ndarray:
    """Time-ordered free propagator U(t2, t1) of the polaron-frame system.

    Static bias: exact closed form.  Swept bias: product of midpoint
    exponentials with substep h <= step/4 (h <= (t2-t1)/4 when step is None).
    """
    if t2 < t1:
        raise ValueError("propagator requires t2 >= t1")
    dr = sys._require_delta_r()
    tau = t2 - t1
    if tau == 0.0:
        return SI.copy()
    if not sys.is_sweep:
        return _su2_rotation(sys.epsilon, dr, tau)
    h_target = (step / 4.0) if step else (tau / 4.0)
    n_sub = max(4, int(math.ceil(tau / h_target)))
    h = tau / n_sub
    mids = t1 + h * (np.arange(n_sub) + 0.5)
    us = _su2_rotation(sys.bias(mids), dr, h)
    out = SI.copy()
    for k in range(n_sub):
        out = us[k] @ out
    return out


def _backrotated_sigmas_static(sys: SystemSpec, lags: np.ndarray):
    """U(kd) sigma_a U(kd)^dag for all lags, static Hamiltonian."""
    u = _su2_rotation(sys.epsilon, sys._require_delta_r(), lags)
    sx = np.einsum("kab,bc,kdc->kad", u, SX, u.conj())
    sy = np.einsum("kab,bc,kdc->kad", u, SY, u.conj())
    return sx, sy


def _trapezoid_weights(n: int, dt: float) -> np.ndarray:
    w = np.full(n + 1, dt)
    w[0] = w[-1] = 0.5 * dt
    return w


def _theta_from_sigmas(sx, sy, lam_x, lam_y, weights):
    tx = np.einsum("k,kab->ab", weights * lam_x, sx)
    ty = np.einsum("k,kab->ab", weights * lam_y, sy)
    return RateOperators(tx, ty)


def rate_operators_tcl(t: float, t0: float, sys: SystemSpec,
                       tbl: CorrelationTable) -> RateOperators:
    """TCL rate operators with the memory integral running over [t0, t]."""
    if t < t0:
        raise ValueError("rate_operators_tcl requires t >= t0")
    n = int(round((t - t0) / tbl.dt))
    if abs(t - t0 - n * tbl.dt) > 1e-9 * max(1.0, tbl.dt):
        raise ConfigError("t - t0 must be a multiple of the table step")
    if n == 0:
        z = np.zeros((2, 2), dtype=complex)
        return RateOperators(z, z.copy())
    if n > tbl.n_lags:
        raise ConfigError("correlation table shorter than requested memory")
    lags = tbl.tau[: n + 1]
    if sys.is_sweep:
        sx, sy = _backrotated_sigmas_sweep_single(t, sys, lags)
    else:
        sx, sy = _backrotated_sigmas_static(sys, lags)
    w = _trapezoid_weights(n, tbl.dt)
    return _theta_from_sigmas(sx, sy, tbl.lambda_x[: n + 1], tbl.lambda_y[: n + 1], w)


def _horizon_lags(tbl: CorrelationTable) -> int:
    try:
        return tbl.memory_lags()
    except NumericsError as err:
        raise ConfigError(str(err)) from None


def rate_operators_markov(t: float, sys: SystemSpec, tbl: CorrelationTable,
                          memory_lags: int | None = None) -> RateOperators:
    """Markov-limit rate operators: memory integral cut at the table horizon.

    The horizon defaults to the first lag where |Lambda_a| < 1e-10; a table
    too short for that raises a configuration error.
    """
    n = memory_lags if memory_lags is not None else _horizon_lags(tbl)
    n = min(n, tbl.n_lags)
    lags = tbl.tau[: n + 1]
    if sys.is_sweep:
        sx, sy = _backrotated_sigmas_sweep_single(t, sys, lags)
    else:
        sx, sy = _backrotated_sigmas_static(sys, lags)
    w = _trapezoid_weights(n, tbl.dt)
    return _theta_from_sigmas(sx, sy, tbl.lambda_x[: n + 1], tbl.lambda_y[: n + 1], w)


def _backrotated_sigmas_sweep_single(t, sys, lags):
    """U(t, t-tau) sigma_a U^dag for one time, swept bias; sequential in tau."""
    dt = lags[1] - lags[0] if len(lags) > 1 else 0.1
    n = len(lags) - 1
    gs = np.empty((n + 1, 2, 2), dtype=complex)
    gs[0] = SI
    for k in range(1, n + 1):
        step = propagator(t - lags[k - 1], t - lags[k], sys, step=dt)
        gs[k] = gs[k - 1] @ step
    sx = np.einsum("kab,bc,kdc->kad", gs, SX, gs.conj())
    sy = np.einsum("kab,bc,kdc->kad", gs, SY, gs.conj())
    return sx, sy


def rate_operator_grid(grid: np.ndarray, sys: SystemSpec, tbl: CorrelationTable,
                       mode: str, memory_lags: int | None = None) -> np.ndarray:
    """Theta_x/y at every grid time; shape (n_times, 2, 2, 2), axis 1 = x/y.

    mode "tcl2": integral from grid[0] (prefix sums for the static case, a
    propagator-row recursion for sweeps).  mode "markov": fixed horizon, with
    the pre-protocol bias extended linearly for sweeps.
    """
    grid = np.asarray(grid, dtype=float)
    dt = _uniform_step(grid)
    n_times = len(grid)
    out = np.empty((n_times, 2, 2, 2), dtype=complex)

    if mode == "tcl2":
        n_mem = n_times - 1
    elif mode == "markov":
        n_mem = memory_lags if memory_lags is not None else _horizon_lags(tbl)
    else:
        raise ConfigError(f"unknown mode {mode!r}")
    if n_mem > tbl.n_lags:
        raise ConfigError("correlation table shorter than requested memory")
    lam_x = tbl.lambda_x[: n_mem + 1]
    lam_y = tbl.lambda_y[: n_mem + 1]

    if not sys.is_sweep:
        sx, sy = _backrotated_sigmas_static(sys, tbl.tau[: n_mem + 1])
        if mode == "markov":
            w = _trapezoid_weights(n_mem, dt)
            theta = _theta_from_sigmas(sx, sy, lam_x, lam_y, w)
            out[:] = np.stack(theta)[None]
            return out
        # prefix trapezoid: Theta_n = dt * (cumsum - half endpoints)
        fx = lam_x[:, None, None] * sx
        fy = lam_y[:, None, None] * sy
        cx = np.cumsum(fx, axis=0)
        cy = np.cumsum(fy, axis=0)
        n = np.arange(n_times)
        out[:, 0] = dt * (cx[n] - 0.5 * (fx[0] + fx[n]))
        out[:, 1] = dt * (cy[n] - 0.5 * (fy[0] + fy[n]))
        out[0] = 0.0
        return out

    # swept bias: row recursion G[n, k] = P_n @ G[n-1, k-1]
    if mode == "markov":
        pre = _sweep_row_initial(grid[0], sys, n_mem, dt)
        gs = pre
        for i, t in enumerate(grid):
            if i > 0:
                p = propagator(grid[i], grid[i - 1], sys, step=dt)
                gs = np.concatenate([SI[None], np.einsum("ab,kbc->kac", p, gs[:-1])])
            sx = np.einsum("kab,bc,kdc->kad", gs, SX, gs.conj())
            sy = np.einsum("kab,bc,kdc->kad", gs, SY, gs.conj())
            w = _trapezoid_weights(n_mem, dt)
            out[i] = np.stack(_theta_from_sigmas(sx, sy, lam_x, lam_y, w))
        return out

    # tcl2 sweep: growing history
    gs = SI[None].copy()
    for i, t in enumerate(grid):
        if i > 0:
            p = propagator(grid[i], grid[i - 1], sys, step=dt)
            gs = np.concatenate([SI[None], np.einsum("ab,kbc->kac", p, gs)])
        n = len(gs) - 1
        if n == 0:
            out[i] = 0.0
            continue
        sx = np.einsum("kab,bc,kdc->kad", gs, SX, gs.conj())
        sy = np.einsum("kab,bc,kdc->kad", gs, SY, gs.conj())
        w = _trapezoid_weights(n, dt)
        out[i] = np.stack(_theta_from_sigmas(sx, sy, lam_x[: n + 1], lam_y[: n + 1], w))
    return out


def _sweep_row_initial(t0: float, sys: SystemSpec, n_mem: int, dt: float) -> np.ndarray:
    """G[k] = U(t0, t0 - k dt) for k = 0..n_mem (bias extended before t0)."""
    gs = np.empty((n_mem + 1, 2, 2), dtype=complex)
    gs[0] = SI
    for k in range(1, n_mem + 1):
        step = propagator(t0 - (k - 1) * dt, t0 - k * dt, sys, step=dt)
        gs[k] = gs[k - 1] @ step
    return gs


def tcl2_generator(rho: np.ndarray, t: float, theta: RateOperators,
                   sys: SystemSpec) -> np.ndarray:
    """drho/dt: coherent part plus the polaron dissipator (bare delta^2/4)."""
    h = hamiltonian_polaron(t, sys)
    drho = -1j * (h @ rho - rho @ h)
    pref = 0.25 * sys.delta**2
    for sig, th in ((SX, theta.theta_x), (SY, theta.theta_y)):
        x = th @ rho - rho @ th.conj().T
        drho -= pref * (sig @ x - x @ sig)
    return drho


def correction_operators(theta: RateOperators, sys: SystemSpec):
    """Irrelevant-part operators Psi = -i delta (Tx + i Ty)/2 and
    Phi = -i delta (Tx^dag + i Ty^dag)/2."""
    psi = -0.5j * sys.delta * (theta.theta_x + 1j * theta.theta_y)
    phi = -0.5j * sys.delta * (theta.theta_x.conj().T + 1j * theta.theta_y.conj().T)
    return psi, phi


def lab_coherence(rho: np.ndarray, psi: np.ndarray, phi: np.ndarray,
                  b: float) -> complex:
    """<sigma_L> = B tr(sigma rho) + tr[sigma (Psi rho - rho Phi)]."""
    m = psi @ rho - rho @ phi
    return complex(b * rho[0, 1] + m[0, 1])


def pauli_from_coherence(sigma_lab: complex):
    """(sx, sy) = (2 Re, -2 Im) of the lab-frame coherence."""
    return 2.0 * sigma_lab.real, -2.0 * sigma_lab.imag


def validate_density_matrix(rho: np.ndarray, tol: float = 1e-12) -> None:
    rho = np.asarray(rho)
    if rho.shape != (2, 2):
        raise ValueError("density matrix must be 2x2")
    if np.max(np.abs(rho - rho.conj().T)) > tol:
        raise ValueError("density matrix not Hermitian within tolerance")
    if abs(np.trace(rho) - 1.0) > tol:
        raise ValueError("density matrix trace differs from 1")


@dataclass
class Trajectory:
    """Propagation record on the solver grid, one entry per step."""

    times: np.ndarray
    states: np.ndarray                      # (n, 2, 2)
    sz: np.ndarray
    coherence_polaron: np.ndarray           # tr(sigma rho)
    coherence_lab_corrected: np.ndarray
    coherence_lab_uncorrected: np.ndarray   # B tr(sigma rho)
    mode: str
    dt: float

    def pauli_xy(self, corrected: bool = True):
        coh = self.coherence_lab_corrected if corrected else self.coherence_lab_uncorrected
        return 2.0 * coh.real, -2.0 * coh.imag

    @property
    def min_trace_error(self) -> float:
        return float(np.max(np.abs(np.einsum("nii->n", self.states) - 1.0)))


def _uniform_step(grid: np.ndarray) -> float:
    if len(grid) < 2:
        raise ConfigError("grid needs at least two points")
    steps = np.diff(grid)
    dt = steps[0]
    if np.max(np.abs(steps - dt)) > 1e-9 * max(dt, 1.0):
        raise ConfigError("solver grid must be uniform")
    return float(dt)


def evolve(rho0: np.ndarray, grid: np.ndarray, mode: str, sys: SystemSpec,
           tbl: CorrelationTable, memory_lags: int | None = None) -> Trajectory:
    """Fixed-step RK4 propagation of the TCL2/Markov master equation.

    Rate operators are refreshed once per step and linearly interpolated at
    the RK stage times; trace and hermiticity are re-symmetrized after every
    step.  Eigenvalues are monitored and a PositivityWarning is emitted if
    min eig(rho) < -1e-3 (propagation continues).
    """
    grid = np.asarray(grid, dtype=float)
    dt = _uniform_step(grid)
    if abs(dt - tbl.dt) > 1e-9 * dt:
        raise ConfigError("solver step must equal the correlation-table step")
    validate_density_matrix(rho0, tol=1e-10)

    thetas = rate_operator_grid(grid, sys, tbl, mode, memory_lags=memory_lags)
    n = len(grid)
    states = np.empty((n, 2, 2), dtype=complex)
    states[0] = rho = np.asarray(rho0, dtype=complex).copy()

    min_eig_seen = 0.0
    for i in range(n - 1):
        t = grid[i]
        th0 = RateOperators(thetas[i, 0], thetas[i, 1])
        th1 = RateOperators(thetas[i + 1, 0], thetas[i + 1, 1])
        thm = RateOperators(0.5 * (thetas[i, 0] + thetas[i + 1, 0]),
                            0.5 * (thetas[i, 1] + thetas[i + 1, 1]))
        k1 = tcl2_generator(rho, t, th0, sys)
        k2 = tcl2_generator(rho + 0.5 * dt * k1, t + 0.5 * dt, thm, sys)
        k3 = tcl2_generator(rho + 0.5 * dt * k2, t + 0.5 * dt, thm, sys)
        k4 = tcl2_generator(rho + dt * k3, t + dt, th1, sys)
        rho = rho + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        rho = 0.5 * (rho + rho.conj().T)
        rho = rho / np.trace(rho).real
        states[i + 1] = rho
        ev = np.linalg.eigvalsh(rho)
        min_eig_seen = min(min_eig_seen, float(ev[0]))

    if min_eig_seen < -1e-3:
        warnings.warn(
            f"TCL2 state developed a negative eigenvalue ({min_eig_seen:.3e}); "
            "propagation continued", PositivityWarning)

    b = tbl.b
    sz = np.real(states[:, 0, 0] - states[:, 1, 1])
    coh_pol = states[:, 0, 1].copy()
    coh_unc = b * coh_pol
    coh_corr = np.empty(n, dtype=complex)
    for i in range(n):
        psi, phi = correction_operators(RateOperators(thetas[i, 0], thetas[i, 1]), sys)
        coh_corr[i] = lab_coherence(states[i], psi, phi, b)
    return Trajectory(times=grid.copy(), states=states, sz=sz,
                      coherence_polaron=coh_pol,
                      coherence_lab_corrected=coh_corr,
                      coherence_lab_uncorrected=coh_unc, mode=mode, dt=dt)


# ---------------------------------------------------------------------------
# steady state (static bias, Markov-limit generator)
# ---------------------------------------------------------------------------

def _kron_liouville(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix of rho -> a rho b on row-major vec(rho)."""
    return np.kron(a, b.T)


def liouvillian_markov(sys: SystemSpec, tbl: CorrelationTable,
                       memory_lags: int | None = None) -> np.ndarray:
    """4x4 asymptotic generator of the static Markov-limit master equation."""
    if sys.is_sweep:
        raise ConfigError("steady-state generator requires a static bias")
    theta = rate_operators_markov(0.0, sys, tbl, memory_lags=memory_lags)
    h = hamiltonian_polaron(0.0, sys)
    liou = -1j * (_kron_liouville(h, SI) - _kron_liouville(SI, h))
    pref = 0.25 * sys.delta**2
    for sig, th in ((SX, theta.theta_x), (SY, theta.theta_y)):
        thd = th.conj().T
        liou -= pref * (
            _kron_liouville(sig @ th, SI) - _kron_liouville(th, sig)
            - _kron_liouville(sig, thd) + _kron_liouville(SI, thd @ sig)
        )
    return liou


class SteadyStateResult(NamedTuple):
    rho: np.ndarray
    coherence_corrected: complex
    coherence_uncorrected: complex
    residual: float


def steady_state(sys: SystemSpec, tbl: CorrelationTable,
                 memory_lags: int | None = None) -> SteadyStateResult:
    """Null vector of the asymptotic Markov generator, trace-normalized.

    Raises a numerical error when the null space is not one-dimensional.
    """
    liou = liouvillian_markov(sys, tbl, memory_lags=memory_lags)
    u, s, vh = np.linalg.svd(liou)
    near_null = s < 1e-10 * s[0]
    if np.count_nonzero(near_null) != 1:
        raise NumericsError(
            f"steady-state null space is not one-dimensional; singular values {s}")
    vec = vh[-1].conj()
    rho = vec.reshape(2, 2)
    rho = 0.5 * (rho + rho.conj().T)
    rho = rho / np.trace(rho).real
    residual = float(np.linalg.norm(liou @ rho.reshape(4)))
    theta = rate_operators_markov(0.0, sys, tbl, memory_lags=memory_lags)
    psi, phi = correction_operators(theta, sys)
    coh_corr = lab_coherence(rho, psi, phi, tbl.b)
    coh_unc = complex(tbl.b * rho[0, 1])
    return SteadyStateResult(rho=rho, coherence_corrected=coh_corr,
                             coherence_uncorrected=coh_unc, residual=residual)
