"""Experiment orchestration: configs, scenarios, CSV emission, comparisons.

Scenarios reproduce the benchmark protocols: free/static spin-boson dynamics
against the influence-functional oracle, steady-state sweeps over coupling
and temperature, the dissipative bias sweep through the avoided crossing,
and oracle convergence scans.

Output contract (consumed by the figure package):

* time-series CSV, one row per output time per source, columns
  ``t,sz,coh_pol_re,coh_pol_im,sx_corrected,sy_corrected,sx_uncorrected,
  sy_uncorrected,source`` with source in {pme-tcl, pme-markov, oracle};
  oracle rows carry the measured lab-frame values in both the corrected and
  uncorrected columns and NaN polaron coherence.
* steady-state CSV with ``param,value,...`` in place of ``t``.
* one JSON summary per run with deviations over the trusted window, solver
  metadata and runtimes.

Every CSV starts with a comment line embedding the config hash, so reruns of
the same config are byte-identical.
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from polarsim import bath, influence
from polarsim.bath import BathSpec
from polarsim.dynamics import (
    ConfigError,
    EXCITED,
    SystemSpec,
    evolve,
    steady_state,
)

__all__ = [
    "ExperimentConfig",
    "compare_report",
    "config_hash",
    "parse_config",
    "run_convergence",
    "run_experiment",
    "run_sweep",
]

SCENARIOS = ("static-dynamics", "steady-sweep-alpha", "steady-sweep-temperature",
             "landau-zener", "convergence")

TIME_COLUMNS = ("t", "sz", "coh_pol_re", "coh_pol_im", "sx_corrected",
                "sy_corrected", "sx_uncorrected", "sy_uncorrected", "source")
STEADY_COLUMNS = ("param", "value", "sz", "coh_pol_re", "coh_pol_im",
                  "sx_corrected", "sy_corrected", "sx_uncorrected",
                  "sy_uncorrected", "source")


@dataclass
class OracleOptions:
    enabled: bool = True
    dt: float = 0.05
    eps_svd: float = 1e-9
    t_th: float = 4.0
    memory_steps: int | None = None
    memory_time: float | None = None
    bond_cap: int = 1024


@dataclass
class SolverOptions:
    mode: str = "tcl2"
    dt: float = 0.01
    t_end: float = 20.0
    output_every: int = 10
    markov_memory_time: float | None = None
    oracle: OracleOptions = field(default_factory=OracleOptions)


@dataclass
class ExperimentConfig:
    scenario: str
    bath: BathSpec
    system: SystemSpec
    solver: SolverOptions
    alpha_values: list | None = None
    beta_values: list | None = None
    out_prefix: str | None = None
    raw: dict = field(default_factory=dict)


def config_hash(raw: dict) -> str:
    canon = json.dumps(raw, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:12]


def _reject_unknown(d: dict, allowed, path: str) -> None:
    for key in d:
        if key not in allowed:
            raise ConfigError(f"unknown key {path}{key!r}")


def _require(d: dict, key: str, path: str):
    if key not in d:
        raise ConfigError(f"missing required key {path}{key!r}")
    return d[key]


def _positive(value, path: str) -> float:
    try:
        value = float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{path} must be a number") from None
    if value <= 0:
        raise ConfigError(f"{path} must be positive, got {value}")
    return value


def parse_config(path) -> ExperimentConfig:
    """Load, validate and echo a JSON experiment configuration.

    Unknown keys anywhere are rejected; missing fields name their key path.
    Derived quantities (B, renormalized tunnelling) are echoed to stdout.
    """
    text = Path(path).read_text()
    if not text.strip():
        raise ConfigError("empty config: missing required key 'scenario'")
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as err:
        raise ConfigError(f"config is not valid JSON: {err}") from None
    return parse_config_dict(raw)


def parse_config_dict(raw: dict) -> ExperimentConfig:
    _reject_unknown(raw, {"scenario", "bath", "system", "solver",
                          "alpha_values", "beta_values", "out_prefix"}, "")
    scenario = _require(raw, "scenario", "")
    if scenario not in SCENARIOS:
        raise ConfigError(f"scenario must be one of {SCENARIOS}, got {scenario!r}")

    braw = _require(raw, "bath", "")
    _reject_unknown(braw, {"alpha", "omega_c", "beta"}, "bath.")
    alpha = _require(braw, "alpha", "bath.")
    if not isinstance(alpha, (int, float)) or alpha < 0:
        raise ConfigError(f"bath.alpha must be a number >= 0, got {alpha!r}")
    beta_raw = _require(braw, "beta", "bath.")
    beta = math.inf if beta_raw in ("inf", "infinite") else beta_raw
    try:
        spec = BathSpec(alpha=float(alpha),
                        omega_c=float(_require(braw, "omega_c", "bath.")),
                        beta=float(beta))
    except ValueError as err:
        raise ConfigError(f"bath: {err}") from None

    sraw = _require(raw, "system", "")
    _reject_unknown(sraw, {"delta", "epsilon", "sweep_rate", "t_start", "t_end"},
                    "system.")
    try:
        system = SystemSpec(
            delta=float(_require(sraw, "delta", "system.")),
            epsilon=float(sraw.get("epsilon", 0.0)),
            sweep_rate=sraw.get("sweep_rate"),
            t_start=sraw.get("t_start"),
            t_end=sraw.get("t_end"))
    except ValueError as err:
        raise ConfigError(f"system: {err}") from None
    if scenario == "landau-zener" and not system.is_sweep:
        raise ConfigError("landau-zener requires system.sweep_rate/t_start/t_end")

    oraw = dict(raw.get("solver", {}))
    _reject_unknown(oraw, {"mode", "dt", "t_end", "output_every",
                           "markov_memory_time", "oracle"}, "solver.")
    oracle_raw = dict(oraw.pop("oracle", {}))
    _reject_unknown(oracle_raw, {"enabled", "dt", "eps_svd", "t_th",
                                 "memory_steps", "memory_time", "bond_cap"},
                    "solver.oracle.")
    oracle = OracleOptions(**oracle_raw)
    _positive(oracle.dt, "solver.oracle.dt")
    _positive(oracle.eps_svd, "solver.oracle.eps_svd")
    solver = SolverOptions(oracle=oracle, **oraw)
    if solver.mode not in ("tcl2", "markov", "both"):
        raise ConfigError(f"solver.mode must be tcl2|markov|both, got {solver.mode!r}")
    _positive(solver.dt, "solver.dt")

    if scenario == "steady-sweep-alpha":
        values = _require(raw, "alpha_values", "")
        if not values or any(v < 0 for v in values):
            raise ConfigError("alpha_values must be non-negative numbers")
    if scenario == "steady-sweep-temperature":
        values = _require(raw, "beta_values", "")
        if not values or any(v <= 0 for v in values):
            raise ConfigError("beta_values must be positive numbers")

    cfg = ExperimentConfig(scenario=scenario, bath=spec, system=system,
                           solver=solver, alpha_values=raw.get("alpha_values"),
                           beta_values=raw.get("beta_values"),
                           out_prefix=raw.get("out_prefix"), raw=raw)
    b = bath.renormalization_b_series(spec)
    echo = dict(raw)
    echo["derived"] = {"B": b, "delta_r": b * system.delta,
                       "config_hash": config_hash(raw)}
    print(json.dumps(echo, indent=2, sort_keys=True, default=str))
    return cfg


# ---------------------------------------------------------------------------
# result rows
# ---------------------------------------------------------------------------

def _check_pauli_bounds(rows) -> None:
    for row in rows:
        for key in ("sz", "sx_corrected", "sy_corrected", "sx_uncorrected",
                    "sy_uncorrected"):
            v = row[key]
            if np.isfinite(v) and abs(v) > 1.0 + 1e-6:
                raise ConfigError(
                    f"Pauli expectation {key}={v} out of range at t={row.get('t')}")


def _rows_from_pme(traj, tag: str, every: int) -> list:
    rows = []
    for i in range(0, len(traj.times), every):
        coh_c = traj.coherence_lab_corrected[i]
        coh_u = traj.coherence_lab_uncorrected[i]
        rows.append(dict(t=traj.times[i], sz=traj.sz[i],
                         coh_pol_re=traj.coherence_polaron[i].real,
                         coh_pol_im=traj.coherence_polaron[i].imag,
                         sx_corrected=2 * coh_c.real, sy_corrected=-2 * coh_c.imag,
                         sx_uncorrected=2 * coh_u.real,
                         sy_uncorrected=-2 * coh_u.imag, source=tag))
    return rows


def _rows_from_oracle(traj, every: int) -> list:
    rows = []
    dyn = traj.dynamics_slice()
    for i in range(0, len(dyn.times), every):
        coh = dyn.coherence[i]
        rows.append(dict(t=dyn.times[i], sz=dyn.sz[i],
                         coh_pol_re=float("nan"), coh_pol_im=float("nan"),
                         sx_corrected=2 * coh.real, sy_corrected=-2 * coh.imag,
                         sx_uncorrected=2 * coh.real, sy_uncorrected=-2 * coh.imag,
                         source="oracle"))
    return rows


def _fmt(x) -> str:
    if isinstance(x, str):
        return x
    return format(float(x), ".17g")


def write_csv(path, columns, rows, raw_config: dict, meta: dict) -> None:
    meta_txt = " ".join(f"{k}={v}" for k, v in sorted(meta.items()))
    lines = [f"# polarsim config={config_hash(raw_config)} {meta_txt}",
             ",".join(columns)]
    for row in rows:
        lines.append(",".join(_fmt(row[c]) for c in columns))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# comparisons
# ---------------------------------------------------------------------------

def _series(rows, key):
    ts = np.array([r["t"] for r in rows])
    vs = np.array([r[key] for r in rows])
    order = np.argsort(ts)
    return ts[order], vs[order]


def compare_report(pme_rows, oracle_rows) -> dict:
    """Max/RMS deviations per observable; oracle interpolated to PME times."""
    if not pme_rows or not oracle_rows:
        raise ConfigError("compare_report needs non-empty row sets")
    t_p, _ = _series(pme_rows, "sz")
    t_o, _ = _series(oracle_rows, "sz")
    lo, hi = max(t_p[0], t_o[0]), min(t_p[-1], t_o[-1])
    if lo > hi:
        raise ConfigError("PME and oracle time grids do not overlap")
    keep = (t_p >= lo - 1e-12) & (t_p <= hi + 1e-12)

    report = {}
    for key, label in (("sz", "sz"),
                       ("sx_corrected", "sx_corrected"),
                       ("sy_corrected", "sy_corrected"),
                       ("sx_uncorrected", "sx_uncorrected"),
                       ("sy_uncorrected", "sy_uncorrected")):
        _, v_p = _series(pme_rows, key)
        t_o, v_o = _series(oracle_rows, key if key == "sz" else
                           "sx_corrected" if key.startswith("sx") else "sy_corrected")
        v_o_interp = np.interp(t_p[keep], t_o, v_o)
        dev = v_p[keep] - v_o_interp
        report[label] = {"max": float(np.max(np.abs(dev))),
                         "rms": float(np.sqrt(np.mean(dev**2))),
                         "mean_abs": float(np.mean(np.abs(dev)))}
    report["corrected_beats_uncorrected"] = {
        "sx": report["sx_corrected"]["max"] < report["sx_uncorrected"]["max"],
        "sy": report["sy_corrected"]["max"] < report["sy_uncorrected"]["max"],
    }
    return report


# ---------------------------------------------------------------------------
# scenario runners
# ---------------------------------------------------------------------------

def _pme_table(cfg: ExperimentConfig, n_lags: int):
    return bath.build_correlation_table(cfg.bath, dt=cfg.solver.dt, n_lags=n_lags)


def _markov_lags(cfg: ExperimentConfig, tbl) -> int | None:
    if cfg.solver.markov_memory_time is not None:
        return int(round(cfg.solver.markov_memory_time / tbl.dt))
    return None  # table horizon rule


def _markov_table(cfg: ExperimentConfig):
    """Table long enough for the Markov-limit horizon rule."""
    if cfg.solver.markov_memory_time is not None:
        n = int(round(cfg.solver.markov_memory_time / cfg.solver.dt)) + 1
        return _pme_table(cfg, n)
    horizon = bath.memory_horizon(cfg.bath)
    n = int(np.ceil(1.05 * horizon / cfg.solver.dt)) + 1
    return _pme_table(cfg, n)


def _oracle_run(cfg: ExperimentConfig, n_steps: int, t_dyn_start: float):
    opts = cfg.solver.oracle
    n_th = int(round(opts.t_th / opts.dt))
    if opts.memory_steps is not None:
        k = opts.memory_steps
    elif opts.memory_time is not None:
        k = int(round(opts.memory_time / opts.dt))
    else:
        k = influence.default_memory_steps(opts.dt, cfg.bath, n_steps + n_th)
    tensors = influence.build_influence_tensors(opts.dt, k, cfg.bath)
    return influence.propagate_tempo(
        n_steps, tensors, cfg.system, EXCITED, eps_svd=opts.eps_svd,
        bond_cap=opts.bond_cap, k_max=k, thermal_steps=n_th,
        t_dyn_start=t_dyn_start)


def _pme_modes(cfg: ExperimentConfig):
    return ("tcl2", "markov") if cfg.solver.mode == "both" else (cfg.solver.mode,)


def run_experiment(cfg: ExperimentConfig, out_dir) -> dict:
    """Dispatch a scenario; writes CSV(s) plus a JSON summary, returns the
    summary dict."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    started = time.perf_counter()
    if cfg.scenario == "static-dynamics":
        summary = _run_static(cfg, out)
    elif cfg.scenario in ("steady-sweep-alpha", "steady-sweep-temperature"):
        summary = _run_steady_sweep(cfg, out)
    elif cfg.scenario == "landau-zener":
        summary = _run_landau_zener(cfg, out)
    elif cfg.scenario == "convergence":
        summary = run_convergence(cfg, out, halvings=1)
    else:  # pragma: no cover - parse_config guards this
        raise ConfigError(f"unhandled scenario {cfg.scenario}")
    summary["wall_time"] = time.perf_counter() - started
    summary["config_hash"] = config_hash(cfg.raw)
    name = cfg.out_prefix or cfg.scenario
    (out / f"{name}_summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True, default=str) + "\n")
    return summary


def _run_static(cfg: ExperimentConfig, out: Path) -> dict:
    dt = cfg.solver.dt
    n = int(round(cfg.solver.t_end / dt))
    grid = dt * np.arange(n + 1)
    rows = []
    summary = {"scenario": cfg.scenario, "sources": [], "solver": {}}
    pme_rows_by_mode = {}
    for mode in _pme_modes(cfg):
        if mode == "markov":
            tbl = _markov_table(cfg)
            sys_b = cfg.system.with_renormalization(tbl.b)
            traj = evolve(EXCITED, grid, "markov", sys_b, tbl,
                          memory_lags=_markov_lags(cfg, tbl))
        else:
            tbl = _pme_table(cfg, n + 1)
            sys_b = cfg.system.with_renormalization(tbl.b)
            traj = evolve(EXCITED, grid, "tcl2", sys_b, tbl)
        tag = f"pme-{'tcl' if mode == 'tcl2' else 'markov'}"
        pme_rows_by_mode[tag] = _rows_from_pme(traj, tag, cfg.solver.output_every)
        rows.extend(pme_rows_by_mode[tag])
        summary["sources"].append(tag)
        summary["solver"][tag] = {"dt": dt, "mode": mode,
                                  "trace_error": traj.min_trace_error}
    if cfg.solver.oracle.enabled:
        otraj = _oracle_run(cfg, int(round(cfg.solver.t_end / cfg.solver.oracle.dt)),
                            t_dyn_start=0.0)
        orows = _rows_from_oracle(otraj, 1)
        rows.extend(orows)
        summary["sources"].append("oracle")
        summary["solver"]["oracle"] = {k: v for k, v in otraj.meta.items()}
        summary["comparison"] = {
            tag: compare_report(prows, orows)
            for tag, prows in pme_rows_by_mode.items()}
    _check_pauli_bounds(rows)
    name = cfg.out_prefix or cfg.scenario
    write_csv(out / f"{name}.csv", TIME_COLUMNS, rows, cfg.raw,
              {"scenario": cfg.scenario, "dt": dt})
    return summary


def _steady_point(cfg: ExperimentConfig, spec: BathSpec):
    horizon = bath.memory_horizon(spec)
    dt = cfg.solver.dt
    n = int(np.ceil(1.05 * horizon / dt)) + 1 if spec.alpha else 10
    tbl = bath.build_correlation_table(spec, dt=dt, n_lags=n)
    sys_b = cfg.system.with_renormalization(tbl.b)
    ss = steady_state(sys_b, tbl)
    return dict(sz=float(np.real(ss.rho[0, 0] - ss.rho[1, 1])),
                coh_pol_re=ss.rho[0, 1].real, coh_pol_im=ss.rho[0, 1].imag,
                sx_corrected=2 * ss.coherence_corrected.real,
                sy_corrected=-2 * ss.coherence_corrected.imag,
                sx_uncorrected=2 * ss.coherence_uncorrected.real,
                sy_uncorrected=-2 * ss.coherence_uncorrected.imag,
                source="pme-markov")


def _run_steady_sweep(cfg: ExperimentConfig, out: Path) -> dict:
    if cfg.scenario == "steady-sweep-alpha":
        param = "alpha"
        values = cfg.alpha_values
        specs = [BathSpec(v, cfg.bath.omega_c, cfg.bath.beta) for v in values]
    else:
        param = "beta"
        values = cfg.beta_values
        specs = [BathSpec(cfg.bath.alpha, cfg.bath.omega_c, v) for v in values]
    with ThreadPoolExecutor(max_workers=4) as pool:
        points = list(pool.map(lambda s: _steady_point(cfg, s), specs))
    rows = []
    for value, point in sorted(zip(values, points), key=lambda p: p[0]):
        rows.append({"param": param, "value": value, **point})
    name = cfg.out_prefix or cfg.scenario
    write_csv(out / f"{name}.csv", STEADY_COLUMNS, rows, cfg.raw,
              {"scenario": cfg.scenario, "param": param})
    mags = [(abs(complex(r["sx_corrected"], r["sy_corrected"])),
             abs(complex(r["sx_uncorrected"], r["sy_uncorrected"]))) for r in rows]
    return {"scenario": cfg.scenario, "param": param, "n_points": len(rows),
            "corrected_dominates": all(c >= u for c, u in mags)}


def _run_landau_zener(cfg: ExperimentConfig, out: Path) -> dict:
    sys_ = cfg.system
    dt = cfg.solver.dt
    n = int(round((sys_.t_end - sys_.t_start) / dt))
    grid = sys_.t_start + dt * np.arange(n + 1)
    rows = []
    summary = {"scenario": cfg.scenario, "sources": [], "solver": {}}
    pme_rows_by_mode = {}
    for mode in _pme_modes(cfg):
        tbl = _markov_table(cfg) if mode == "markov" else _pme_table(cfg, n + 1)
        sys_b = sys_.with_renormalization(tbl.b)
        traj = evolve(EXCITED, grid, mode, sys_b, tbl,
                      memory_lags=_markov_lags(cfg, tbl) if mode == "markov" else None)
        tag = f"pme-{'tcl' if mode == 'tcl2' else 'markov'}"
        pme_rows_by_mode[tag] = _rows_from_pme(traj, tag, cfg.solver.output_every)
        rows.extend(pme_rows_by_mode[tag])
        summary["sources"].append(tag)
        summary["solver"][tag] = {"dt": dt, "mode": mode,
                                  "final_sz": float(traj.sz[-1])}
    if cfg.solver.oracle.enabled:
        n_o = int(round((sys_.t_end - sys_.t_start) / cfg.solver.oracle.dt))
        otraj = _oracle_run(cfg, n_o, t_dyn_start=sys_.t_start)
        orows = _rows_from_oracle(otraj, 1)
        trusted_t = sys_.t_start + influence.TRUSTED_WINDOW
        rows.extend(orows)
        summary["sources"].append("oracle")
        summary["solver"]["oracle"] = dict(otraj.meta)
        summary["trusted_t_max"] = trusted_t
        trusted_orows = [r for r in orows if r["t"] <= trusted_t]
        summary["comparison"] = {
            tag: compare_report([r for r in prows if r["t"] <= trusted_t],
                                trusted_orows)
            for tag, prows in pme_rows_by_mode.items()}
    _check_pauli_bounds(rows)
    name = cfg.out_prefix or cfg.scenario
    write_csv(out / f"{name}.csv", TIME_COLUMNS, rows, cfg.raw,
              {"scenario": cfg.scenario, "dt": dt})
    return summary


def run_sweep(cfg: ExperimentConfig, out_dir, param: str, values) -> dict:
    """Re-run the configured scenario once per value of a dotted config key."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summaries = {}
    for i, value in enumerate(values):
        raw = json.loads(json.dumps(cfg.raw))
        node = raw
        *parents, leaf = param.split(".")
        for key in parents:
            node = node.setdefault(key, {})
        node[leaf] = value
        sub = parse_config_dict(raw)
        summaries[str(value)] = run_experiment(sub, out / f"{param}={value}")
    report = {"scenario": cfg.scenario, "param": param,
              "values": list(values), "runs": summaries}
    (out / "sweep_summary.json").write_text(
        json.dumps(report, indent=2, sort_keys=True, default=str) + "\n")
    return report


def run_convergence(cfg: ExperimentConfig, out_dir, halvings: int = 1) -> dict:
    """Oracle self-convergence: halve the step (memory time fixed) and
    tighten the truncation threshold, reporting the shifts in <sigma_z>."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    opts = cfg.solver.oracle
    t_end = cfg.solver.t_end
    base_dt = opts.dt
    mem_time = opts.memory_time or (opts.memory_steps or 60) * base_dt

    runs = []
    for level in range(halvings + 1):
        dt = base_dt / 2**level
        k = int(round(mem_time / dt))
        n = int(round(t_end / dt))
        tensors = influence.build_influence_tensors(dt, k, cfg.bath)
        traj = influence.propagate_tempo(
            n, tensors, cfg.system, EXCITED, eps_svd=opts.eps_svd,
            bond_cap=opts.bond_cap, k_max=k,
            thermal_steps=int(round(opts.t_th / dt)), t_dyn_start=0.0)
        runs.append(traj.dynamics_slice())

    shifts = []
    for a, b_run in zip(runs, runs[1:]):
        sz_a = np.interp(a.times, b_run.times, b_run.sz)
        shifts.append(float(np.max(np.abs(sz_a - a.sz))))

    # threshold tightening at the base step
    tensors = influence.build_influence_tensors(base_dt, int(round(mem_time / base_dt)),
                                                cfg.bath)
    tight = influence.propagate_tempo(
        int(round(t_end / base_dt)), tensors, cfg.system, EXCITED,
        eps_svd=opts.eps_svd / 10.0, bond_cap=opts.bond_cap,
        k_max=int(round(mem_time / base_dt)),
        thermal_steps=int(round(opts.t_th / base_dt)), t_dyn_start=0.0)
    eps_shift = float(np.max(np.abs(tight.dynamics_slice().sz - runs[0].sz)))

    report = {"scenario": "convergence", "dt_levels": [base_dt / 2**l
                                                       for l in range(halvings + 1)],
              "dt_halving_shifts": shifts, "eps_base": opts.eps_svd,
              "eps_tightened_shift": eps_shift,
              "memory_time": mem_time}
    (out / "convergence_summary.json").write_text(
        json.dumps(report, indent=2, sort_keys=True) + "\n")
    return report
