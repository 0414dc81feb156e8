"""Discrete-time influence-functional benchmark for the spin-boson model.

The reduced dynamics is propagated in Liouville space with a compound path
index s = (s_l, s_r) over sigma_z eigenvalues; flat index s = 2*il + ir with
index 0 = |e> (lambda = +1) and 1 = |g> (lambda = -1), so

    s = 0 -> (+1, +1),  1 -> (+1, -1),  2 -> (-1, +1),  3 -> (-1, -1).

Bath memory enters through lag-indexed 4x4 tensors built from the discrete
memory kernel; the free system evolution (lab-frame Hamiltonian with the
*bare* tunnelling) is split symmetrically around each influence application,
giving an O(delta^3) local Trotter error.  Two contraction back ends share
the exact same step schedule and tensors:

* a dense path-sum with memory truncation (small depths, the unit-test
  oracle), and
* an SVD-compressed matrix-product propagation for production runs.

A thermalization window of duration t_th with the tunnelling gated off lets
the bath relax to the displaced reference state before the dynamics proper;
the window steps run through the same machinery (they are exact there since
sigma_z is conserved).
"""

from __future__ import annotations

import json
import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from polarsim.bath import BathSpec, NumericsError, eta_array
from polarsim.dynamics import ConfigError, SystemSpec, _su2_rotation

__all__ = [
    "CompressedPathState",
    "InfluenceTensors",
    "OracleTrajectory",
    "build_influence_tensors",
    "default_memory_steps",
    "free_propagator_step",
    "load_path_state",
    "propagate_quapi_dense",
    "propagate_tempo",
    "save_path_state",
    "thermalize_initial",
]

#: left/right sigma_z eigenvalues of the four compound Liouville indices
LAMBDA_L = np.array([1.0, 1.0, -1.0, -1.0])
LAMBDA_R = np.array([1.0, -1.0, 1.0, -1.0])

#: trust horizon for long propagations, in units of 1/delta
TRUSTED_WINDOW = 100.0

_DENSE_K_CAP = 10


@dataclass(frozen=True)
class InfluenceTensors:
    """Lag-indexed influence tensors b_k[s, s'] and the kernel behind them."""

    b: np.ndarray          # (k_max + 1, 4, 4)
    eta: np.ndarray        # (k_max + 1,)
    delta: float
    k_max: int

    def __post_init__(self):
        self.b.setflags(write=False)
        self.eta.setflags(write=False)


def build_influence_tensors(delta: float, k_max: int, spec: BathSpec) -> InfluenceTensors:
    """b_k[s, s'] = exp(-(l_sl - l_sr) (eta_k l_s'l - eta_k* l_s'r))."""
    if delta <= 0:
        raise ValueError("step delta must be positive")
    if k_max < 1:
        raise ValueError("memory depth must be at least 1")
    eta = eta_array(k_max, delta, spec)
    diff = (LAMBDA_L - LAMBDA_R)[:, None]
    b = np.exp(-diff * (eta[:, None, None] * LAMBDA_L[None, None, :]
                        - np.conj(eta)[:, None, None] * LAMBDA_R[None, None, :]))
    return InfluenceTensors(b=b, eta=eta, delta=delta, k_max=k_max)


def default_memory_steps(delta: float, spec: BathSpec, n_steps: int,
                         tol: float = 1e-9) -> int:
    """Depth K with |eta_K| < tol * |eta_0|, capped at the propagation length."""
    if spec.alpha == 0.0:
        return 1
    probe = min(n_steps, 2_000_000)
    eta = eta_array(probe, delta, spec)
    small = np.abs(eta) < tol * abs(eta[0])
    above = np.nonzero(~small)[0]
    k = int(above[-1]) + 1 if above.size else 1
    return max(1, min(k, n_steps))


# ---------------------------------------------------------------------------
# step schedule
# ---------------------------------------------------------------------------

def _lab_unitary(t0: float, t1: float, sys: SystemSpec, gate_from: float,
                 n_sub: int) -> np.ndarray:
    """Lab-frame step unitary over [t0, t1] with bare tunnelling.

    The tunnelling is gated off before gate_from (thermalization window) and
    the bias is frozen at its gate_from value there; midpoint sampling on
    n_sub substeps keeps the splitting second order.
    """
    tau = t1 - t0
    if tau == 0.0:
        return np.eye(2, dtype=complex)
    h = tau / n_sub
    out = np.eye(2, dtype=complex)
    for j in range(n_sub):
        tm = t0 + h * (j + 0.5)
        dr = sys.delta if tm >= gate_from else 0.0
        eps = float(sys.bias(max(tm, gate_from)))
        out = _su2_rotation(eps, dr, h) @ out
    return out


def _liouville(u: np.ndarray) -> np.ndarray:
    """Conjugation map rho -> u rho u^dag on row-major vec(rho)."""
    return np.einsum("ac,bd->abcd", u, u.conj()).reshape(4, 4)


def free_propagator_step(t: float, delta: float, sys: SystemSpec) -> np.ndarray:
    """Liouville matrix of one free step over [t, t + delta], bare tunnelling."""
    if delta <= 0:
        raise ValueError("step delta must be positive")
    return _liouville(_lab_unitary(t, t + delta, sys, gate_from=-math.inf, n_sub=4))


@dataclass
class _StepSchedule:
    """Per-step Liouville propagators of the symmetric splitting."""

    first_half: np.ndarray          # [t_begin, t_begin + d/2]
    fulls: list                     # i-th entry: [t_i - d/2, t_i + d/2], i = 1..N-1
    out_halves: list                # i-th entry: [t_i - d/2, t_i], i = 1..N
    times: np.ndarray               # influence-point times t_1..t_N


def _build_schedule(n_total: int, delta: float, sys: SystemSpec,
                    t_dyn_start: float, thermal_steps: int) -> _StepSchedule:
    t_begin = t_dyn_start - thermal_steps * delta
    times = t_begin + delta * np.arange(1, n_total + 1)
    gate = t_dyn_start
    first = _liouville(_lab_unitary(t_begin, t_begin + 0.5 * delta, sys, gate, 2))
    fulls = []
    for i in range(1, n_total):
        t_mid = times[i - 1]
        fulls.append(_liouville(_lab_unitary(t_mid - 0.5 * delta, t_mid + 0.5 * delta,
                                             sys, gate, 4)))
    outs = []
    for i in range(n_total):
        t_i = times[i]
        outs.append(_liouville(_lab_unitary(t_i - 0.5 * delta, t_i, sys, gate, 2)))
    return _StepSchedule(first_half=first, fulls=fulls, out_halves=outs, times=times)


# ---------------------------------------------------------------------------
# trajectories
# ---------------------------------------------------------------------------

@dataclass
class OracleTrajectory:
    """Influence-functional propagation record.

    times[0] is the state right after the first step; thermalization steps
    carry negative times relative to the dynamics start.
    """

    times: np.ndarray
    states: np.ndarray              # (n, 2, 2)
    t_dyn_start: float
    meta: dict = field(default_factory=dict)

    @property
    def sz(self) -> np.ndarray:
        return np.real(self.states[:, 0, 0] - self.states[:, 1, 1])

    @property
    def coherence(self) -> np.ndarray:
        """Lab-frame <sigma> = rho_eg."""
        return self.states[:, 0, 1]

    @property
    def trusted(self) -> np.ndarray:
        """Mask of output points within the Trotter-trust window."""
        return self.times <= self.t_dyn_start + TRUSTED_WINDOW

    def dynamics_slice(self) -> "OracleTrajectory":
        keep = self.times >= self.t_dyn_start - 1e-12
        return OracleTrajectory(times=self.times[keep], states=self.states[keep],
                                t_dyn_start=self.t_dyn_start, meta=dict(self.meta))

    @property
    def max_trace_error(self) -> float:
        return float(np.max(np.abs(np.einsum("nii->n", self.states) - 1.0)))


def _vec(rho: np.ndarray) -> np.ndarray:
    return np.asarray(rho, dtype=complex).reshape(4)


def _unvec(v: np.ndarray) -> np.ndarray:
    return v.reshape(2, 2)


# ---------------------------------------------------------------------------
# dense path-sum back end
# ---------------------------------------------------------------------------

def propagate_quapi_dense(n_steps: int, tensors: InfluenceTensors, sys: SystemSpec,
                          rho0: np.ndarray, *, k_max: int | None = None,
                          thermal_steps: int = 0,
                          t_dyn_start: float = 0.0) -> OracleTrajectory:
    """Exact contraction of the augmented path tensor with memory depth K.

    Memory cost is 4^(K+1); depths above 10 are rejected.
    """
    k = k_max if k_max is not None else tensors.k_max
    if k > _DENSE_K_CAP:
        raise ConfigError(f"dense path sum limited to K <= {_DENSE_K_CAP}, got {k}")
    if k > tensors.k_max:
        raise ConfigError("influence tensors shorter than requested memory depth")
    if k < 1:
        raise ConfigError("memory depth must be at least 1")
    delta = tensors.delta
    n_total = n_steps + thermal_steps
    sched = _build_schedule(n_total, delta, sys, t_dyn_start, thermal_steps)
    b0 = np.real_if_close(np.diagonal(tensors.b[0]).copy()).astype(complex)

    # coupling multiplier for the current history length, newest axis first
    def coupling(m: int) -> np.ndarray:
        w = b0.reshape(4, *([1] * m))
        for lag in range(1, m + 1):
            shape = [1] * (m + 1)
            shape[0] = 4
            shape[lag] = 4
            w = w * tensors.b[lag].reshape(shape)
        return w

    wall = time.perf_counter()
    states = np.empty((n_total, 2, 2), dtype=complex)
    adt = b0 * (sched.first_half @ _vec(rho0))
    states[0] = _unvec(sched.out_halves[0] @ adt)
    w_cache: dict[int, np.ndarray] = {}
    for i in range(1, n_total):
        m = adt.ndim  # history length, m <= k by induction
        u = sched.fulls[i - 1]
        tmp = u.reshape(4, 4, *([1] * (m - 1))) * adt[None, ...]
        if m not in w_cache:
            w_cache[m] = coupling(m)
        tmp = tmp * w_cache[m]
        if m + 1 > k:
            tmp = tmp.sum(axis=-1)
        adt = tmp
        states[i] = _unvec(sched.out_halves[i] @ adt.reshape(4, -1).sum(axis=1))
    meta = dict(delta=delta, k=k, backend="dense",
                wall_time=time.perf_counter() - wall)
    return OracleTrajectory(times=sched.times, states=states,
                            t_dyn_start=t_dyn_start, meta=meta)


# ---------------------------------------------------------------------------
# matrix-product back end
# ---------------------------------------------------------------------------

@dataclass
class CompressedPathState:
    """Matrix-product form of the augmented path-weight tensor.

    Site 0 carries the newest path index; the chain is kept right-canonical
    with the centre at site 0 between steps.
    """

    sites: list
    n_points: int
    eps_svd: float
    bond_cap: int
    max_bond_seen: int = 1

    @property
    def bond_dims(self) -> list:
        return [s.shape[2] for s in self.sites[:-1]]

    def reduced_vector(self) -> np.ndarray:
        """Sum over all history indices; returns the length-4 path marginal."""
        v = np.ones(self.sites[-1].shape[2], dtype=complex)
        for site in self.sites[:0:-1]:
            v = site.sum(axis=1) @ v
        return self.sites[0][0] @ v


def _robust_svd(mat: np.ndarray):
    """SVD with a fallback for the occasional gesdd convergence failure."""
    try:
        return np.linalg.svd(mat, full_matrices=False)
    except np.linalg.LinAlgError:
        if not np.all(np.isfinite(mat)):
            raise NumericsError("non-finite values entered the path tensor")
        import scipy.linalg
        return scipy.linalg.svd(mat, full_matrices=False,
                                lapack_driver="gesvd")


def _svd_truncate(mat: np.ndarray, eps: float, cap: int):
    u, s, vh = _robust_svd(mat)
    if s[0] == 0.0:
        return u[:, :1], s[:1], vh[:1]
    keep = int(np.count_nonzero(s > eps * s[0]))
    keep = max(keep, 1)
    if keep > cap:
        raise NumericsError(
            f"bond dimension cap {cap} exceeded; largest retained singular "
            f"value {s[0]:.6g}, smallest kept would be {s[keep - 1]:.3g}")
    return u[:, :keep], s[:keep], vh[:keep]


def _svd_truncate_wide(mat: np.ndarray, eps: float, cap: int):
    """Truncated SVD of a wide matrix via LQ followed by a small SVD.

    The contraction sweep works on (chi, 4*chi) matrices; factoring out the
    row space first makes the expensive SVD square.
    """
    m, n = mat.shape
    if n <= m + 8:
        return _svd_truncate(mat, eps, cap)
    q, r = np.linalg.qr(mat.conj().T, mode="reduced")  # mat = r^H q^H
    u, s, vh = _svd_truncate(r.conj().T, eps, cap)
    return u, s, vh @ q.conj().T


def _blocked_split(blocks: list, eps: float, cap: int):
    """Per-charge SVD with a pooled relative threshold.

    blocks[c] is the (r_c * 4, chi_r) growth matrix of charge sector c; the
    sectors are orthogonal on their row space, so their singular values can
    be truncated against the common largest one.
    """
    svds = [_robust_svd(m) for m in blocks]
    s_max = max(s[0] if len(s) else 0.0 for _, s, _ in svds)
    if s_max == 0.0:
        s_max = 1.0
    keeps = [max(1, int(np.count_nonzero(s > eps * s_max))) for _, s, _ in svds]
    if sum(keeps) > cap:
        retained = max(s[: k][-1] for (_, s, _), k in zip(svds, keeps))
        raise NumericsError(
            f"bond dimension cap {cap} exceeded; largest retained singular "
            f"value {s_max:.6g}, smallest kept would be {retained:.3g}")
    us = [u[:, :k] for (u, s, vh), k in zip(svds, keeps)]
    carries = [(s[:k, None] * vh[:k]) for (u, s, vh), k in zip(svds, keeps)]
    return us, carries, keeps


def _slices(widths: list) -> list:
    """Index slices of the per-sector blocks inside a merged bond."""
    out = []
    lo = 0
    for w in widths:
        out.append(slice(lo, lo + w))
        lo += w
    return out


def _mps_step(state: CompressedPathState, full_liou: np.ndarray,
              b_lags: np.ndarray, b0: np.ndarray, drop_oldest: bool) -> None:
    """Grow the chain by one point, apply couplings, compress in place.

    b_lags[j] couples the new point to the old site at lag j+1.  The new
    point's index rides along the bonds as a conserved sector label until the
    oldest coupled site, so the growth sweep factorizes into four independent
    blocks; the closing right-to-left sweep runs dense and restores the
    right-canonical form (centre at site 0) with a second truncation.
    """
    eps, cap = state.eps_svd, state.bond_cap
    sites = state.sites
    n_old = len(sites)
    if n_old < 1:
        raise ValueError("_mps_step requires an existing chain")
    # new site: phys s' = charge c, left-isometric identity; weights b0
    # start the per-sector carries
    new_sites = [np.eye(4, dtype=complex).reshape(1, 4, 4)]
    carries = [b0[c] * np.ones((1, 1), dtype=complex) for c in range(4)]
    widths = [1, 1, 1, 1]
    bond_sectors = [[1, 1, 1, 1]]  # per-bond sector widths, bond j = (site j, j+1)
    for j in range(n_old):
        t_j = sites[j]
        chi_l, _, chi_r = t_j.shape
        k_j = b_lags[j] * (full_liou if j == 0 else 1.0)  # (c, s)
        t_mat = t_j.reshape(chi_l, 4 * chi_r)
        ys = []
        for c in range(4):
            y = (carries[c] @ t_mat).reshape(-1, 4, chi_r)
            ys.append(y * k_j[c][None, :, None])
        last = j == n_old - 1
        if last and drop_oldest:
            # couple the dropped point, sum it out, absorb into the neighbour
            v = np.concatenate([y[:, :, 0].sum(axis=1) for y in ys])
            prev = new_sites[-1]
            new_sites[-1] = (prev.reshape(-1, prev.shape[2]) @ v).reshape(
                prev.shape[0], 4, 1)
            bond_sectors.pop()
            break
        if last:
            # sector label terminates on the oldest coupled site
            new_sites.append(np.concatenate(ys, axis=0))
            break
        us, carries, keeps = _blocked_split(
            [y.reshape(-1, chi_r) for y in ys], eps, cap)
        site = np.zeros((sum(widths), 4, sum(keeps)), dtype=complex)
        for c, (ro, co) in enumerate(zip(_slices(widths), _slices(keeps))):
            site[ro, :, co] = us[c].reshape(widths[c], 4, keeps[c])
        new_sites.append(site)
        widths = keeps
        bond_sectors.append(keeps)

    # contraction sweep: dense SVDs right-to-left restore the canonical form
    # and apply the proper Schmidt truncation (the growth sweep's per-sector
    # split can overcount rank, which this pass prunes)
    max_bond = max(t.shape[0] for t in new_sites)
    for j in range(len(new_sites) - 1, 0, -1):
        t_j = new_sites[j]
        chi_l, d, chi_r = t_j.shape
        u, s, vh = _svd_truncate_wide(t_j.reshape(chi_l, d * chi_r), eps, cap)
        new_sites[j] = vh.reshape(-1, d, chi_r)
        new_sites[j - 1] = np.einsum("xsa,ab->xsb", new_sites[j - 1],
                                     u * s[None, :])
        max_bond = max(max_bond, len(s))
    state.sites = new_sites
    state.n_points += 1
    state.max_bond_seen = max(state.max_bond_seen, max_bond)


def propagate_tempo(n_steps: int, tensors: InfluenceTensors, sys: SystemSpec,
                    rho0: np.ndarray, *, eps_svd: float = 1e-9,
                    bond_cap: int = 512, k_max: int | None = None,
                    thermal_steps: int = 0, t_dyn_start: float = 0.0,
                    initial_state: CompressedPathState | None = None) -> OracleTrajectory:
    """SVD-compressed matrix-product propagation of the influence functional.

    Singular values below eps_svd relative to the largest are discarded after
    each growth and contraction sweep.  Agrees with the dense back end
    wherever both are tractable.
    """
    if eps_svd <= 0:
        raise ValueError("eps_svd must be positive")
    k = k_max if k_max is not None else tensors.k_max
    if k > tensors.k_max:
        raise ConfigError("influence tensors shorter than requested memory depth")
    delta = tensors.delta
    n_total = n_steps + thermal_steps
    sched = _build_schedule(n_total, delta, sys, t_dyn_start, thermal_steps)
    b0 = np.diagonal(tensors.b[0]).astype(complex)

    wall = time.perf_counter()
    if initial_state is not None:
        state = initial_state
        start = state.n_points
        if start != thermal_steps:
            raise ConfigError("initial path state does not match thermal_steps")
    else:
        state = CompressedPathState(sites=[], n_points=0, eps_svd=eps_svd,
                                    bond_cap=bond_cap)
        start = 0

    states = np.empty((n_total - start, 2, 2), dtype=complex)
    trace_drift = 0.0
    for i in range(start, n_total):
        if i == 0:
            adt = b0 * (sched.first_half @ _vec(rho0))
            state.sites = [adt.reshape(1, 4, 1)]
            state.n_points = 1
        else:
            n_old = len(state.sites)
            drop = n_old >= k
            lags = tensors.b[1: n_old + 1]
            _mps_step(state, sched.fulls[i - 1], lags, b0, drop)
        rho = _unvec(sched.out_halves[i] @ state.reduced_vector())
        # truncation leaks a little weight; renormalize at readout and keep
        # the raw drift as a convergence diagnostic
        tr = np.trace(rho).real
        trace_drift = max(trace_drift, abs(tr - 1.0))
        states[i - start] = rho / tr
    meta = dict(delta=delta, k=k, eps_svd=eps_svd, backend="tempo",
                max_bond=state.max_bond_seen, raw_trace_drift=trace_drift,
                wall_time=time.perf_counter() - wall)
    return OracleTrajectory(times=sched.times[start:], states=states,
                            t_dyn_start=t_dyn_start, meta=meta)


def thermalize_initial(sys: SystemSpec, spec: BathSpec, t_th: float, *,
                       delta: float, k_max: int, eps_svd: float = 1e-9,
                       bond_cap: int = 512, rho0: np.ndarray | None = None,
                       t_dyn_start: float = 0.0) -> CompressedPathState:
    """Run the tunnelling-gated window so the bath reaches its displaced
    reference state; returns the path state ready for the dynamics phase.

    The system must start in a sigma_z eigenstate.  A window shorter than the
    bath response time 5/omega_c triggers a warning.
    """
    if rho0 is None:
        rho0 = np.diag([1.0, 0.0]).astype(complex)
    off_diag = abs(rho0[0, 1]) + abs(rho0[1, 0])
    if off_diag > 1e-12:
        raise ConfigError("thermalization requires a sigma_z eigenstate")
    if t_th < 5.0 / spec.omega_c:
        warnings.warn("thermalization window shorter than the bath response "
                      f"time {5.0 / spec.omega_c:.3g}", stacklevel=2)
    thermal_steps = int(round(t_th / delta))
    tensors = build_influence_tensors(delta, k_max, spec)
    state = CompressedPathState(sites=[], n_points=0, eps_svd=eps_svd,
                                bond_cap=bond_cap)
    sched = _build_schedule(thermal_steps, delta, sys, t_dyn_start, thermal_steps)
    b0 = np.diagonal(tensors.b[0]).astype(complex)
    for i in range(thermal_steps):
        if i == 0:
            adt = b0 * (sched.first_half @ _vec(rho0))
            state.sites = [adt.reshape(1, 4, 1)]
            state.n_points = 1
        else:
            n_old = len(state.sites)
            _mps_step(state, sched.fulls[i - 1], tensors.b[1: n_old + 1], b0,
                      n_old >= k_max)
    return state


# ---------------------------------------------------------------------------
# checkpointing
# ---------------------------------------------------------------------------

_CHECKPOINT_VERSION = 1


def save_path_state(state: CompressedPathState, path) -> None:
    """Versioned checkpoint: a JSON header plus dense tensor blocks (npz)."""
    header = dict(version=_CHECKPOINT_VERSION, n_points=state.n_points,
                  eps_svd=state.eps_svd, bond_cap=state.bond_cap,
                  max_bond_seen=state.max_bond_seen, n_sites=len(state.sites))
    blocks = {f"site_{i:05d}": t for i, t in enumerate(state.sites)}
    np.savez_compressed(path, header=np.bytes_(json.dumps(header).encode()), **blocks)


def load_path_state(path) -> CompressedPathState:
    with np.load(path) as data:
        header = json.loads(bytes(data["header"]).decode())
        if header["version"] != _CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {header['version']}")
        sites = [data[f"site_{i:05d}"] for i in range(header["n_sites"])]
    return CompressedPathState(sites=sites, n_points=header["n_points"],
                               eps_svd=header["eps_svd"],
                               bond_cap=header["bond_cap"],
                               max_bond_seen=header["max_bond_seen"])
