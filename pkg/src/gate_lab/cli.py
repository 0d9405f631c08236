"""Experiment runner.

Usage: gate-lab SUBCOMMAND --config PATH [--out DIR] [--seed S] [--jobs N]
                [--check] [--full] [--dump-states]

Subcommands and the CSV files they write (one header row, floats in
shortest round-trip form):

  params         params.csv         quantity,value,unit
  evolve         evolve_<model>.csv t,fidelity,leakage,P_DD,P_ud_du
  error-scan     error_scan.csv     gradient,nu1_hz,drive_hz,phase_flip,eta1,eta2,eta_tot,
                                    infidelity_exact,infidelity_approx,residual
  noise-compare  noise_compare.csv  T2,scheme,setting,amplitude_noise,mean_infidelity,sem
  hot-gate       hot_gate.csv       sample_index,initial_n,mean_infidelity,sem
  voltage-noise  voltage_noise.csv  omega,S_V,S_z,S_B
  fid            fid.csv            label,t,coherence

Every run also writes summary.json, a byte copy of the config and
manifest.json. Exit codes: 1 invalid input, 2 numerical failure,
3 an acceptance check failed under --check.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import shutil
import sys
import tempfile
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from . import hilbert as hb
from .analytic import error_budget
from .physics import (
    AMU,
    OptimizationError,
    ParameterError,
    SystemParams,
    TWO_PI,
    couplings,
    doppler_limit,
    gate_time,
    j0_closed_form,
    optimal_drive,
)
from .propagator import BellConfig, PropagationError, bell_experiment, bell_series, propagate, PropagationSpec

EXPERIMENTS = ("params", "evolve", "error-scan", "noise-compare", "hot-gate", "voltage-noise", "fid")

SCHEMA = {
    "experiment": None,
    "physical": {
        "gradient_T_per_m", "nu1_hz", "drive_hz", "ion_mass_amu", "linewidth_hz", "B0_T", "g_factor", "omega0_hz",
    },
    "numeric": {
        "hamiltonian", "fock_cutoffs", "motional_frame", "rel_tol", "abs_tol", "gate_time_s", "phase_flip",
        "t_window_s", "n_times", "drive_scan_hz", "nu1_scan_hz", "gradients_T_per_m", "phase_flip_scan", "approx",
    },
    "noise": {
        "t2_s", "amp_rel", "amp_tau_c_s", "B0_T", "n_pulses", "cdd_drives_hz", "independent_ions",
        "j_during_pulses", "pulse_rabi_hz", "fid_drive_hz", "fid_t2_s", "fid_span_s",
    },
    "sampling": {"n_real", "n_traj", "n_samples", "master_seed", "n_bar", "n_max", "n_dot", "bath_n_bar", "include_stretch"},
    "voltage": {"alpha_z", "d_m", "S_V", "nu_z_hz", "omega_ratio"},
    "output": {"formats"},
}


class ConfigError(ValueError):
    pass


class CheckFailed(RuntimeError):
    pass


# --- config ------------------------------------------------------------------------

def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


def config_hash(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()


def validate_config(cfg: dict) -> dict:
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(cfg) - set(SCHEMA)
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    exp = cfg.get("experiment")
    if exp is not None and exp not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {exp!r}")
    for section, allowed in SCHEMA.items():
        if allowed is None or section not in cfg:
            continue
        body = cfg[section]
        if not isinstance(body, dict):
            raise ConfigError(f"section {section!r} must be an object")
        bad = set(body) - allowed
        if bad:
            raise ConfigError(f"unknown keys in {section!r}: {sorted(bad)}")
    return cfg


def load_config(path) -> tuple[dict, bytes]:
    raw = Path(path).read_bytes()
    try:
        cfg = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}") from exc
    return validate_config(cfg), raw


def system_params(cfg: dict) -> SystemParams:
    ph = dict(cfg.get("physical", {}))
    kw = {}
    if "ion_mass_amu" in ph:
        kw["ion_mass"] = ph["ion_mass_amu"] * AMU
    if "linewidth_hz" in ph:
        kw["linewidth_hz"] = ph["linewidth_hz"]
    if "omega0_hz" in ph:
        kw["omega0_hz"] = ph["omega0_hz"]
    if "B0_T" in ph:
        kw["B0"] = ph["B0_T"]
    if "g_factor" in ph:
        kw["g_factor"] = ph["g_factor"]
    return SystemParams.from_hz(ph.get("gradient_T_per_m", 20.0), ph.get("nu1_hz", 140e3), ph.get("drive_hz", 20e3), **kw)


def _num(cfg, key, default):
    return cfg.get("numeric", {}).get(key, default)


def _noise(cfg, key, default):
    return cfg.get("noise", {}).get(key, default)


def _samp(cfg, key, default):
    return cfg.get("sampling", {}).get(key, default)


def _bell_config(cfg, params, seed, chash, **over) -> BellConfig:
    kw = dict(
        hamiltonian=_num(cfg, "hamiltonian", "exact"),
        fock_cutoffs=tuple(_num(cfg, "fock_cutoffs", [2, 2])),
        motional_frame=_num(cfg, "motional_frame", "interaction"),
        rel_tol=_num(cfg, "rel_tol", 1e-9),
        abs_tol=_num(cfg, "abs_tol", 1e-12),
        gate_time=_num(cfg, "gate_time_s", None),
        phase_flip=_num(cfg, "phase_flip", False),
        seed=seed,
        config_hash=chash,
    )
    kw.update(over)
    return BellConfig(params, **kw)


# --- output helpers --------------------------------------------------------------

def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(x) for x in r])


def write_json_atomic(path: Path, obj) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=".json")
    with os.fdopen(fd, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")
    os.replace(tmp, path)


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


@dataclass
class RunContext:
    cfg: dict
    out: Path
    seed: int
    jobs: int
    check: bool
    full: bool
    dump_states: bool
    chash: str
    files: list

    def path(self, name: str) -> Path:
        self.files.append(name)
        return self.out / name


def _map(ctx: RunContext, fn, items):
    """Ordered fan-out; results come back in input order whatever the pool does."""
    items = list(items)
    if ctx.jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=ctx.jobs) as pool:
        return list(pool.map(fn, items))


# --- subcommands ---------------------------------------------------------------------

def run_params(ctx: RunContext) -> dict:
    p = system_params(ctx.cfg)
    c = couplings(p)
    nbar = doppler_limit(p)
    rows = [
        ("J0_over_2pi", c.J0 / TWO_PI, "Hz"),
        ("J0_closed_form_over_2pi", j0_closed_form(p) / TWO_PI, "Hz"),
        ("J_eff_over_2pi", c.J_eff / TWO_PI, "Hz"),
        ("J_tot_over_2pi", c.J_tot / TWO_PI, "Hz"),
        ("Delta_over_2pi", c.detuning / TWO_PI, "Hz"),
        ("gate_time", gate_time(c), "s"),
        ("omega_opt_over_2pi", optimal_drive(p) / TWO_PI if p.gradient > 0 else float("nan"), "Hz"),
        ("omega_opt_pf_over_2pi", optimal_drive(p, True) / TWO_PI if p.gradient > 0 else float("nan"), "Hz"),
        ("n_bar_min_com", nbar[0], ""),
        ("n_bar_min_stretch", nbar[1], ""),
    ]
    eb = error_budget(p, c)
    rows += [("eta1", eb.eta1, ""), ("eta2", eb.eta2, ""), ("eta_tot", eb.eta_tot, "")]
    write_csv(ctx.path("params.csv"), ["quantity", "value", "unit"], rows)
    width = max(len(r[0]) for r in rows)
    for name, val, unit in rows:
        print(f"{name:<{width}}  {val:.6g} {unit}".rstrip())
    summary = {name: val for name, val, _ in rows}
    if ctx.check:
        ok = c.J0 > 0 and abs(c.J0 - j0_closed_form(p)) <= 1e-12 * c.J0
        summary["check_passed"] = bool(ok)
        if not ok:
            raise CheckFailed("mode-sum J0 disagrees with the closed form")
    return summary


def run_evolve(ctx: RunContext) -> dict:
    p = system_params(ctx.cfg)
    c = couplings(p)
    tau = _num(ctx.cfg, "gate_time_s", None) or (gate_time(c) if c.J_tot > 0 else 8.86e-3)
    lo, hi = _num(ctx.cfg, "t_window_s", [0.0, 1.2 * tau])
    times = np.linspace(lo, hi, int(_num(ctx.cfg, "n_times", 241)))
    if times[0] > 0:
        times = np.concatenate([[0.0], times])
    summary = {"gate_time": tau}
    models = ["exact"] + (["approx"] if _num(ctx.cfg, "approx", True) else [])
    for kind in models:
        bc = _bell_config(ctx.cfg, p, ctx.seed, ctx.chash, hamiltonian=kind, gate_time=tau)
        s = bell_series(bc, times)
        keys = ["t", "fidelity", "leakage", "P_DD", "P_ud_du"]
        write_csv(ctx.path(f"evolve_{kind}.csv"), keys, zip(*(s[k] for k in keys)))
        win = times > 0
        k = int(np.argmax(np.where(win, s["fidelity"], -1)))
        summary[kind] = {"peak_time": float(times[k]), "peak_infidelity": float(1 - s["fidelity"][k])}
        if ctx.dump_states:
            model = bc.model()
            (st,) = propagate(model, bc.initial_state(), PropagationSpec((0.0, float(times[-1]))))
            name = f"state_{kind}.bin"
            hb.dump_state(ctx.path(name), st, t=float(times[-1]), config_hash=ctx.chash)
    if ctx.check:
        if c.J_tot > 0:
            e = summary["exact"]
            eta = error_budget(p, c).eta_tot
            ok = abs(e["peak_time"] - tau) <= 0.01 * tau and e["peak_infidelity"] <= 3 * eta
        else:
            ok = True
        summary["check_passed"] = bool(ok)
        if not ok:
            raise CheckFailed("peak time or peak infidelity outside tolerance")
    return summary


def _scan_point(args):
    cfg, g, nu, f, pf, do_approx, chash, seed = args
    p = system_params(cfg)
    p = SystemParams.from_hz(g, nu, f, ion_mass=p.ion_mass, linewidth=p.linewidth, B0=p.B0,
                             g_factor=p.g_factor, omega0=p.omega0)
    c = couplings(p)
    eb = error_budget(p, c, pf)
    bc = _bell_config(cfg, p, seed, chash, hamiltonian="exact", phase_flip=pf)
    fe = bell_experiment(bc).bell_fidelity
    fa = bell_experiment(_bell_config(cfg, p, seed, chash, hamiltonian="approx", phase_flip=pf)).bell_fidelity if do_approx else float("nan")
    resid = abs(fa - fe) / (1 - fe) if do_approx else float("nan")
    return (g, nu, f, pf, eb.eta1, eb.eta2, eb.eta_tot, 1 - fe, 1 - fa, resid)


def run_error_scan(ctx: RunContext) -> dict:
    cfg = ctx.cfg
    ph = cfg.get("physical", {})
    d = _num(cfg, "drive_scan_hz", {"start": 4e3, "stop": 30e3, "num": 64})
    drives = np.linspace(d["start"], d["stop"], int(d["num"])) if isinstance(d, dict) else np.asarray(d, float)
    nus = _num(cfg, "nu1_scan_hz", [ph.get("nu1_hz", 140e3)])
    grads = _num(cfg, "gradients_T_per_m", [ph.get("gradient_T_per_m", 20.0)])
    pfs = _num(cfg, "phase_flip_scan", [bool(_num(cfg, "phase_flip", False))])
    do_approx = bool(_num(cfg, "approx", True))
    items = [(cfg, g, nu, float(f), bool(pf), do_approx, ctx.chash, ctx.seed)
             for g in grads for nu in nus for pf in pfs for f in drives]
    rows = _map(ctx, _scan_point, items)
    header = ["gradient", "nu1_hz", "drive_hz", "phase_flip", "eta1", "eta2", "eta_tot",
              "infidelity_exact", "infidelity_approx", "residual"]
    write_csv(ctx.path("error_scan.csv"), header, rows)
    ratio = max(r[7] / r[6] for r in rows)
    summary = {"points": len(rows), "max_exact_over_eta_tot": ratio}
    if ctx.check:
        ok = ratio <= 3.0
        summary["check_passed"] = bool(ok)
        if not ok:
            raise CheckFailed(f"exact infidelity exceeds 3 eta_tot (max ratio {ratio:.3g})")
    return summary


def run_noise_compare(ctx: RunContext) -> dict:
    from . import noise as nz

    cfg = ctx.cfg
    p = system_params(cfg)
    n_real = _samp(cfg, "n_real", 100 if ctx.full else 20)
    nc = nz.NoiseScanConfig(
        params=p,
        t2_values=tuple(_noise(cfg, "t2_s", [1e-3, 8e-3, 40e-3])),
        n_pulses=tuple(_noise(cfg, "n_pulses", [4, 8, 12, 20, 28, 40, 60])),
        cdd_drives_hz=tuple(_noise(cfg, "cdd_drives_hz", [10e3, 20e3, 40e3, 60e3])),
        n_real=n_real,
        amp_rel=_noise(cfg, "amp_rel", 5e-3),
        amp_tau_c=_noise(cfg, "amp_tau_c_s", 0.5e-3),
        pulse_rabi=TWO_PI * _noise(cfg, "pulse_rabi_hz", 50e3),
        B0=_noise(cfg, "B0_T", 7.5e-4),
        independent_ions=_noise(cfg, "independent_ions", False),
        j_during_pulses=_noise(cfg, "j_during_pulses", False),
        seed=ctx.seed,
    )
    mapper = lambda fn, items: _map(ctx, fn, items)  # noqa: E731
    rows = nz.noise_compare(nc, amplitude=True, mapper=mapper)
    for r in rows:
        r["amplitude_noise"] = True
    rows_na = nz.noise_compare(nc, amplitude=False, mapper=mapper)
    for r in rows_na:
        r["amplitude_noise"] = False
    allrows = rows + rows_na
    header = ["T2", "scheme", "setting", "amplitude_noise", "mean_infidelity", "sem"]
    write_csv(ctx.path("noise_compare.csv"), header, ([r[k] for k in header] for r in allrows))
    summary = {"best_cdd": {}, "pdd": {}}
    ok = True
    for T2 in nc.t2_values:
        cdd = min(r["mean_infidelity"] for r in rows if r["T2"] == T2 and r["scheme"] == "CDD")
        pdd = [r["mean_infidelity"] for r in rows if r["T2"] == T2 and r["scheme"] == "PDD"]
        summary["best_cdd"][str(T2)] = cdd
        summary["pdd"][str(T2)] = pdd
        ok &= all(cdd < x for x in pdd)
    if ctx.check:
        summary["check_passed"] = bool(ok)
        if not ok:
            raise CheckFailed("CDD is not better than PDD at every pulse number")
    return summary


def run_hot_gate(ctx: RunContext) -> dict:
    from . import mcwf as mc

    cfg = ctx.cfg
    p = system_params(cfg)
    base = dict(n_bar=70.0, n_max=250, n_samples=40, n_traj=20) if ctx.full else dict(n_bar=5.0, n_max=40, n_samples=8, n_traj=5)
    if ctx.full:
        warnings.warn("full-scale hot-gate run: expect many hours on one core", stacklevel=2)
    hc = mc.HotGateConfig(
        params=p,
        n_bar=_samp(cfg, "n_bar", base["n_bar"]),
        n_max=_samp(cfg, "n_max", base["n_max"]),
        n_samples=_samp(cfg, "n_samples", base["n_samples"]),
        n_traj=_samp(cfg, "n_traj", base["n_traj"]),
        n_dot=_samp(cfg, "n_dot", 100.0),
        bath_n_bar=_samp(cfg, "bath_n_bar", None),
        include_stretch=_samp(cfg, "include_stretch", False),
        master_seed=ctx.seed,
        config_hash=ctx.chash,
    )
    res = mc.hot_gate_experiment(hc, mapper=lambda fn, items: _map(ctx, fn, items))
    mc.write_hot_gate_csv(ctx.path("hot_gate.csv"), res)
    summary = {
        "F_av": 1 - res.mean_infidelity,
        "mean_infidelity": res.mean_infidelity,
        "sem": res.sem,
        "rank_correlation": res.rank_correlation,
        "F0": None if res.intrinsic_infidelity is None else 1 - res.intrinsic_infidelity,
        "initial_fock": list(res.initial_fock),
        "seeds": [r.seed for r in res.reports],
    }
    if ctx.check:
        limit = 3.2e-4
        ok = res.mean_infidelity < limit
        summary["check_passed"] = bool(ok)
        if not ok:
            raise CheckFailed(f"average infidelity {res.mean_infidelity:.3g} above {limit:.2g}")
    return summary


def run_voltage_noise(ctx: RunContext) -> dict:
    from . import noise as nz

    cfg = ctx.cfg
    p = system_params(cfg)
    v = cfg.get("voltage", {})
    vp = nz.VoltageNoiseParams(v.get("alpha_z", 0.1), v.get("d_m", 100e-6), v.get("S_V", 1e-18))
    nu_z = TWO_PI * v.get("nu_z_hz", p.nu1 / TWO_PI)
    ratios = np.asarray(v.get("omega_ratio", list(np.geomspace(1e-3, 0.9, 40))), float)
    omega = ratios * nu_z
    sz = nz.position_psd(omega, vp, p, nu_z)
    sb = nz.voltage_to_b_psd(omega, vp, p, nu_z)
    write_csv(ctx.path("voltage_noise.csv"), ["omega", "S_V", "S_z", "S_B"], zip(omega, vp.voltage_psd(omega), sz, sb))
    w = nu_z / 100
    g2 = nz.voltage_to_b_psd(w, vp, replace(p, gradient=2 * p.gradient), nu_z) / nz.voltage_to_b_psd(w, vp, p, nu_z)
    nu_half = nz.voltage_to_b_psd(w / 2, vp, p, nu_z / 2) / nz.voltage_to_b_psd(w, vp, p, nu_z)
    summary = {"gradient_doubling_ratio": float(g2), "nu_halving_ratio": float(nu_half)}
    if ctx.check:
        ok = abs(g2 - 4) < 4e-3 and abs(nu_half - 16) < 16e-3
        summary["check_passed"] = bool(ok)
        if not ok:
            raise CheckFailed("PSD scaling exponents off")
    return summary


def run_fid(ctx: RunContext) -> dict:
    from . import noise as nz

    cfg = ctx.cfg
    T2 = _noise(cfg, "fid_t2_s", 0.5e-3)
    om = TWO_PI * _noise(cfg, "fid_drive_hz", 100e3)
    span = _noise(cfg, "fid_span_s", 8 * T2)
    n_real = _samp(cfg, "n_real", 1000 if ctx.full else 200)
    bare = nz.bare_fid(T2, min(3 * T2, span), n_real=max(n_real, 1000), seed=ctx.seed)
    dressed = nz.dressed_fid(T2, om, span, n_real=n_real, seed=ctx.seed, B0=_noise(cfg, "B0_T", 7.5e-4))
    rows = [("bare", t, c) for t, c in zip(bare.t, bare.coherence)]
    rows += [("dressed", t, c) for t, c in zip(dressed.t, dressed.coherence)]
    write_csv(ctx.path("fid.csv"), ["label", "t", "coherence"], rows)
    summary = {"T2_input": T2, "T2_bare_fit": bare.T2, "T2_dressed_fit": dressed.T2, "gain": dressed.T2 / bare.T2}
    if ctx.check:
        ok = dressed.T2 > 10 * bare.T2
        summary["check_passed"] = bool(ok)
        if not ok:
            raise CheckFailed("dressed coherence gain below 10")
    return summary


DISPATCH = {
    "params": run_params,
    "evolve": run_evolve,
    "error-scan": run_error_scan,
    "noise-compare": run_noise_compare,
    "hot-gate": run_hot_gate,
    "voltage-noise": run_voltage_noise,
    "fid": run_fid,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gate-lab", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("experiment", choices=EXPERIMENTS)
    ap.add_argument("--config", required=True, help="strict JSON config (frequencies in Hz)")
    ap.add_argument("--out", default=None, help="artifact directory (default runs/<experiment>-<hash>)")
    ap.add_argument("--seed", type=int, default=None, help="master seed, overrides sampling.master_seed")
    ap.add_argument("--jobs", type=int, default=None, help="worker processes (default $GATE_LAB_JOBS or 1)")
    ap.add_argument("--check", action="store_true", help="exit 3 if the acceptance check fails")
    ap.add_argument("--full", action="store_true", help="full-scale sampling (slow)")
    ap.add_argument("--dump-states", action="store_true", help="write binary state snapshots")
    return ap


def run(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code else 0
    try:
        cfg, raw = load_config(args.config)
        if cfg.get("experiment", args.experiment) != args.experiment:
            raise ConfigError(f"config is for {cfg['experiment']!r}, not {args.experiment!r}")
        jobs = args.jobs if args.jobs is not None else int(os.environ.get("GATE_LAB_JOBS", "1"))
        if jobs < 1:
            raise ConfigError("--jobs must be >= 1")
    except (ConfigError, OSError, ValueError) as exc:
        print(f"gate-lab: {exc}", file=sys.stderr)
        return 1

    chash = config_hash(cfg)
    seed = args.seed if args.seed is not None else int(_samp(cfg, "master_seed", 0))
    out = Path(args.out or f"runs/{args.experiment}-{chash[:12]}")
    out.mkdir(parents=True, exist_ok=True)
    ctx = RunContext(cfg, out, seed, jobs, args.check, args.full, args.dump_states, chash, [])
    started = datetime.now(timezone.utc).isoformat()
    code = 0
    try:
        summary = DISPATCH[args.experiment](ctx)
    except CheckFailed as exc:
        print(f"gate-lab: check failed: {exc}", file=sys.stderr)
        summary, code = {"check_passed": False, "reason": str(exc)}, 3
    except (ConfigError, ParameterError, KeyError, TypeError) as exc:
        print(f"gate-lab: invalid input: {exc}", file=sys.stderr)
        summary, code = {"error": str(exc)}, 1
    except (PropagationError, hb.TruncationError, OptimizationError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"gate-lab: numerical failure: {exc}", file=sys.stderr)
        summary, code = {"error": str(exc)}, 2

    summary["config_hash"] = chash
    summary["seed"] = seed
    write_json_atomic(ctx.path("summary.json"), summary)
    shutil.copyfile(args.config, ctx.path("config.json"))
    manifest = {
        "config_hash": chash,
        "seed": seed,
        "tool_version": __version__,
        "experiment": args.experiment,
        "started": started,
        "finished": datetime.now(timezone.utc).isoformat(),
        "files": sorted(set(ctx.files)),
        "exit_code": code,
    }
    write_json_atomic(out / "manifest.json", manifest)
    return code


def main() -> None:
    sys.exit(run())
