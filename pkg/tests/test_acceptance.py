"""Acceptance suite: one verdict line per criterion.

Each test records ``PASS`` or ``FAIL`` plus the measured numbers before
asserting, so the summary at the end of a pytest run lists every criterion
whether or not it holds. Full-scale parts are marked ``full`` and skipped
unless GATE_LAB_FULL=1.
"""

import math
import time

import numpy as np
import pytest
from scipy.signal import argrelmax

from gate_lab import hilbert as hb
from gate_lab import mcwf as mc
from gate_lab import noise as nz
from gate_lab.analytic import error_budget
from gate_lab.physics import (
    TWO_PI,
    SystemParams,
    couplings,
    doppler_limit,
    gate_time,
    optimal_drive,
)
from gate_lab.propagator import BellConfig, PropagationSpec, bell_experiment, bell_series

from test_mcwf import _toy, _zero_model, jump_rate_estimates


@pytest.fixture
def verdict(record_property):
    def emit(label, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'}  criterion {label}: {detail}"
        print(line)
        record_property("acceptance", line)
        return ok

    return emit


def _close(x, want, rel):
    return abs(x - want) <= rel * abs(want)


def test_criterion_01_parameter_closed_forms(verdict):
    p20 = SystemParams.from_hz(20.0, 140e3)
    p150 = SystemParams.from_hz(150.0, 412.7e3)
    j20 = couplings(p20).J0 / TWO_PI
    j150 = couplings(p150).J0 / TWO_PI
    om = optimal_drive(p20) / TWO_PI
    n_min = doppler_limit(p20)
    ok = (
        _close(j20, 39.4, 0.01)
        and _close(j150, 254.9, 0.01)
        and _close(om, 8.1e3, 0.02)
        and _close(n_min[0], 70.0, 0.01)
        and _close(n_min[1], 40.4, 0.01)
    )
    verdict(
        "01", ok,
        f"J0/2pi {j20:.2f} Hz, {j150:.1f} Hz; Omega_opt/2pi {om / 1e3:.3f} kHz; n_min {n_min[0]:.1f}, {n_min[1]:.1f}",
    )
    assert ok


def _scan(grid, kind="exact"):
    base = SystemParams.from_hz(20.0, 140e3)
    inf, eta = [], []
    for f in grid:
        p = base.with_drive(TWO_PI * f)
        inf.append(bell_experiment(BellConfig(p, hamiltonian=kind, motional_frame="lab")).infidelity)
        eta.append(error_budget(p, couplings(p)).eta_tot)
    return np.array(inf), np.array(eta)


def _envelope_slope(lo, hi, n=2001):
    # the infidelity oscillates with Omega; fit the local maxima
    f = np.linspace(lo, hi, n)
    inf, _ = _scan(f)
    k = argrelmax(inf)[0]
    return np.polyfit(np.log(f[k]), np.log(inf[k]), 1)[0]


def test_criterion_02_intrinsic_error_scan(verdict):
    start = time.perf_counter()
    grid = np.linspace(4e3, 30e3, 64)
    exact, eta = _scan(grid)
    approx, _ = _scan(grid, "approx")
    ratio = (exact / eta).max()
    sel = (grid >= 6e3) & (grid <= 20e3)
    resid = (np.abs(approx - exact) / exact)[sel].max()
    low = _envelope_slope(4e3, 6e3)
    high = _envelope_slope(20e3, 30e3)
    ok = ratio <= 3 and abs(low + 2) <= 0.2 and abs(high - 4) <= 0.2 and resid < 0.15
    verdict(
        "02", ok,
        f"max exact/eta_tot {ratio:.3f}; slopes {low:.3f} (low), {high:.3f} (high); "
        f"approx residual {resid:.3f}; {time.perf_counter() - start:.0f} s",
    )
    assert ok


def test_criterion_03_gate_at_baseline_parameters(verdict):
    p = SystemParams.from_hz(20.0, 140e3, 20e3)
    tau = gate_time(couplings(p))
    eta = error_budget(p, couplings(p)).eta_tot
    times = np.linspace(0.95 * tau, 1.05 * tau, 201)
    s = bell_series(BellConfig(p, motional_frame="lab"), times)
    k = int(np.argmax(s["fidelity"]))
    t_peak, inf = times[k], 1 - s["fidelity"][k]
    ok = _close(t_peak, 8.86e-3, 0.01) and eta / 3 <= inf <= 3 * eta and _close(eta, 4.3e-4, 0.05)
    verdict("03", ok, f"peak at {t_peak * 1e3:.3f} ms, infidelity {inf:.3e}, eta_tot {eta:.3e}")
    assert ok


def test_criterion_04_optimal_point(verdict):
    p = SystemParams.from_hz(20.0, 140e3, 8e3)
    inf = bell_experiment(BellConfig(p, motional_frame="lab")).infidelity
    ok = 1.8e-5 / 2 <= inf <= 1.8e-5 * 2
    verdict("04", ok, f"infidelity at 8 kHz {inf:.3e} (target 1.8e-5, factor 2)")
    assert ok


def test_criterion_05_phase_flip(verdict):
    p = SystemParams.from_hz(150.0, 205.8e3, 17.2e3)
    om = optimal_drive(p, phase_flip=True) / TWO_PI
    tau = gate_time(couplings(p))
    times = np.linspace(0.98 * 345e-6, 1.02 * 345e-6, 401)
    s = bell_series(BellConfig(p, phase_flip=True, motional_frame="lab"), times)
    k = int(np.argmax(s["fidelity"]))
    inf = 1 - s["fidelity"][k]
    ok = inf <= 2e-4 and _close(om, 17.2e3, 0.02) and _close(tau, 345e-6, 0.02)
    verdict(
        "05", ok,
        f"best infidelity {inf:.3e} at {times[k] * 1e6:.1f} us (tau {tau * 1e6:.1f} us); "
        f"PF optimum {om / 1e3:.3f} kHz",
    )
    assert ok


def _best_cdd(rows, T2):
    return min(r["mean_infidelity"] for r in rows if r["T2"] == T2 and r["scheme"] == "CDD")


def test_criterion_06_noise_comparison_desk(verdict):
    start = time.perf_counter()
    cfg = nz.NoiseScanConfig(SystemParams.from_hz(20.0, 140e3), n_real=20)
    rows = nz.noise_compare(cfg)
    ok = True
    parts = []
    for T2 in cfg.t2_values:
        cdd = _best_cdd(rows, T2)
        pdd = [r["mean_infidelity"] for r in rows if r["T2"] == T2 and r["scheme"] == "PDD"]
        ok &= all(cdd < x for x in pdd)
        parts.append(f"T2 {T2 * 1e3:g} ms: CDD {cdd:.2e} vs PDD min {min(pdd):.2e}")
    worst = 0.0
    for f in cfg.cdd_drives_hz:
        noisy = nz.cdd_infidelities(cfg, 40e-3, TWO_PI * f, amplitude=True, dephasing=False)
        clean = nz.cdd_infidelities(cfg, 40e-3, TWO_PI * f, amplitude=False, dephasing=False)
        worst = max(worst, abs(noisy.mean() - clean.mean()))
    ok &= worst < 1e-4
    verdict("06", ok, "; ".join(parts) + f"; amplitude-only shift {worst:.1e}; {time.perf_counter() - start:.0f} s")
    assert ok


@pytest.mark.full
def test_criterion_06_noise_comparison_full(verdict):
    cfg = nz.NoiseScanConfig(SystemParams.from_hz(20.0, 140e3), t2_values=(40e-3,), n_pulses=(), n_real=100)
    cdd = _best_cdd(nz.noise_compare(cfg), 40e-3)
    ok = 4.6e-5 / 3 <= cdd <= 4.6e-5 * 3
    verdict("06 full", ok, f"CDD at T2 40 ms {cdd:.3e} (target 4.6e-5, factor 3)")
    assert ok


def test_criterion_07_ou_statistics(verdict):
    p = nz.OUParams(1e-3, 4.0e6, 5e-5, seed=11)
    x = nz.ou_trace(p, p.tau_c, n_traces=10_000)
    var = x[:, 0].var()
    acf = np.mean(x[:, 0] * x[:, -1]) / p.variance
    ok = _close(var, p.c * p.tau_c / 2, 0.05) and _close(acf, math.exp(-1), 0.10)
    verdict("07", ok, f"variance ratio {var / p.variance:.4f}; acf at tau_c {acf:.4f} vs {math.exp(-1):.4f}")
    assert ok


def test_criterion_08_mcwf(verdict):
    n_dot, n_bar = 100.0, 2.0
    lay = hb.BasisLayout(1, (40,))
    times = np.linspace(0, 5 / n_dot, 26)
    spec = PropagationSpec((0.0, times[-1]), tuple(times))
    batch = mc.mcwf_propagate(
        _zero_model(lay), mc.heating_collapse(lay, n_dot, n_bar), hb.product_state(("0",), (0,), lay), spec, 500,
        seed=1, observables={"n": lambda s: float(np.arange(41) @ s.fock_populations(0))},
    )
    up, down = jump_rate_estimates(batch, times[-1])
    rate_ok = _close(up, n_dot * n_bar, 0.05) and _close(down - up, n_dot, 0.05)

    omega, gamma = TWO_PI * 2e3, 5e3
    model, lay2 = _toy(omega)
    c = math.sqrt(gamma) * hb.operator_factory("proj", 0, lay2, levels=("0", "+1"))
    psi0 = hb.product_state(("0",), (), lay2)
    t2 = np.linspace(0, 1e-3, 11)
    pop = lambda s: abs(s.amplitudes[3]) ** 2  # noqa: E731
    b2 = mc.mcwf_propagate(model, mc.CollapseSet((c,)), psi0, PropagationSpec((0.0, t2[-1]), tuple(t2)), 500,
                           seed=3, observables={"p": pop})
    rho = mc.lindblad_oracle(model.matrix(0.0), [c.dense()], np.outer(psi0.amplitudes, psi0.amplitudes.conj()), t2)
    z = (np.abs(b2.observables["p"] - rho[:, 3, 3].real)[1:] / b2.sem["p"][1:]).max()
    ok = rate_ok and z <= 3
    verdict(
        "08", ok,
        f"d<n>/dt at n=0 {up:.1f} (want {n_dot * n_bar:g}); relaxation rate {down - up:.1f} (want {n_dot:g}); "
        f"Lindblad max deviation {z:.2f} sem",
    )
    assert ok


def test_criterion_09_hot_gate_desk(verdict):
    start = time.perf_counter()
    res = mc.hot_gate_experiment(mc.HotGateConfig.desk())
    ok = res.mean_infidelity < 3.2e-4 and res.rank_correlation > 0
    verdict(
        "09", ok,
        f"mean infidelity {res.mean_infidelity:.3e} +- {res.sem:.1e}; rank correlation {res.rank_correlation:.2f}; "
        f"{time.perf_counter() - start:.0f} s",
    )
    assert ok


@pytest.mark.full
def test_criterion_09_hot_gate_full(verdict):
    res = mc.hot_gate_experiment(mc.HotGateConfig.full())
    worst = max(r.infidelity for r in res.reports)
    ok = 1.6e-4 / 2 <= res.mean_infidelity <= 1.6e-4 * 2 and worst < 1e-3 and res.rank_correlation > 0
    verdict(
        "09 full", ok,
        f"mean infidelity {res.mean_infidelity:.3e} (target 1.6e-4, factor 2); worst sample {worst:.2e}; "
        f"rank correlation {res.rank_correlation:.2f}",
    )
    assert ok


def test_criterion_10_dressed_fid_and_psd(verdict):
    T2 = 0.5e-3
    bare = nz.bare_fid(T2, 3 * T2, n_real=1000, seed=1)
    dressed = nz.dressed_fid(T2, TWO_PI * 100e3, 16 * T2, n_real=200, seed=1)
    gain = dressed.T2 / bare.T2

    p = SystemParams.from_hz(20.0, 140e3)
    v = nz.VoltageNoiseParams(0.1, 100e-6, 1e-18)
    w = p.nu1 / 100
    base = nz.voltage_to_b_psd(w, v, p)
    grad = nz.voltage_to_b_psd(w, v, SystemParams.from_hz(40.0, 140e3)) / base
    nu = nz.voltage_to_b_psd(w / 2, v, p, nu_z=p.nu1 / 2) / base
    ok = gain > 10 and _close(grad, 4.0, 1e-3) and _close(nu, 16.0, 1e-3)
    verdict(
        "10", ok,
        f"coherence {dressed.T2 * 1e3:.2f} ms vs bare {bare.T2 * 1e3:.3f} ms (x{gain:.1f}); "
        f"S_B ratios {grad:.5f} (gradient x2), {nu:.5f} (nu_z / 2)",
    )
    assert ok
