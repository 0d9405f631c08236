"""Colored noise, free-induction decay, the XY4 baseline and CDD noise runs.

Dephasing and amplitude noise are Ornstein-Uhlenbeck processes sampled on a
uniform grid and applied by zero-order hold.
"""
from __future__ import annotations

import csv
import hashlib
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import constants as sc
from scipy.signal import lfilter

from . import hamiltonians as hm
from . import hilbert as hb
from .physics import ParameterError, SystemParams, couplings, sensitivities
from .propagator import BellConfig, FidelityReport, propagate, PropagationSpec, run_piecewise, spin_observables


def derive_seed(master: int, *index: int) -> int:
    """seed_i = hash(master, i): SHA-256 of the integers, truncated to 63 bits."""
    h = hashlib.sha256(",".join(str(int(x)) for x in (master,) + index).encode()).digest()
    return int.from_bytes(h[:8], "little") >> 1


@dataclass(frozen=True)
class OUParams:
    tau_c: float
    c: float
    dt: float
    seed: int = 0

    def __post_init__(self):
        if self.tau_c <= 0:
            raise ParameterError("correlation time must be positive")
        if self.c < 0:
            raise ParameterError("diffusion constant must be non-negative")
        if not 0 < self.dt <= self.tau_c / 10 * (1 + 1e-12):
            raise ParameterError("grid step must satisfy 0 < dt <= tau_c/10")

    @property
    def variance(self) -> float:
        return 0.5 * self.c * self.tau_c

    @classmethod
    def from_t2(cls, T2: float, seed: int = 0, samples_per_tau: int = 20) -> "OUParams":
        tau_c = T2 / 100.0
        return cls(tau_c, 2.0 / (T2 * tau_c**2), tau_c / samples_per_tau, seed)

    @classmethod
    def relative_amplitude(cls, omega: float, rel: float, tau_c: float, seed: int = 0, samples_per_tau: int = 20):
        """delta Omega process with stationary std rel * omega."""
        return cls(tau_c, 2.0 * (rel * omega) ** 2 / tau_c, tau_c / samples_per_tau, seed)


@dataclass(frozen=True, eq=False)
class NoiseTrace:
    values: np.ndarray
    dt: float
    t0: float = 0.0
    seed: int | None = None

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(len(self.values))

    @property
    def span(self) -> float:
        return len(self.values) * self.dt

    def scaled(self, factor: float) -> "NoiseTrace":
        return NoiseTrace(factor * self.values, self.dt, self.t0, self.seed)


def ou_trace(p: OUParams, span: float, n_traces: int | None = None) -> NoiseTrace | np.ndarray:
    """Exact OU discretisation on [0, span], stationary start.

    Normals are drawn in time order from one generator, so a shorter span is a
    bit-exact prefix of a longer one. ``n_traces`` returns a (n, K) array of
    independent rows drawn from the same generator instead.
    """
    n = int(math.ceil(span / p.dt - 1e-9)) + 1
    rng = np.random.default_rng(p.seed)
    rows = 1 if n_traces is None else n_traces
    if p.c == 0:
        vals = np.zeros((rows, n))
    else:
        a = math.exp(-p.dt / p.tau_c)
        b = math.sqrt(p.variance * (1.0 - a * a))
        g = rng.standard_normal((rows, n))
        x0 = g[:, 0] * math.sqrt(p.variance)
        vals = np.empty((rows, n))
        vals[:, 0] = x0
        if n > 1:
            vals[:, 1:], _ = lfilter([b], [1.0, -a], g[:, 1:], axis=1, zi=(a * x0)[:, None])
    if n_traces is None:
        return NoiseTrace(vals[0], p.dt, 0.0, p.seed)
    return vals


def dephasing_traces(T2: float, B0: float, span: float, seed: int, params: SystemParams | None = None, independent=False):
    """delta omega traces for the +1, -1 and 0' transitions.

    One OU process drives delta omega_{+1}; the other two follow from the
    sensitivity ratios at B0. ``independent`` gives each ion its own process.
    """
    if T2 <= 0:
        raise ParameterError("T2 must be positive")
    params = params or SystemParams.from_hz(20.0, 140e3)
    s = sensitivities(params, B0)
    out = []
    for j in range(2 if independent else 1):
        base = ou_trace(OUParams.from_t2(T2, derive_seed(seed, j) if independent else seed), span)
        out.append({"+1": base, "-1": base.scaled(s.ratio_m1), "0'": base.scaled(s.ratio_0p)})
    return out if independent else out[0]


# --- free-induction decay -------------------------------------------------------

@dataclass(frozen=True)
class DecayCurve:
    t: np.ndarray
    coherence: np.ndarray
    T2: float
    label: str


def fit_decay(t, coh, floor=0.05) -> float:
    """1/e time of an exponential fitted to log coherence above ``floor``."""
    t = np.asarray(t)
    coh = np.asarray(coh)
    m = (coh > floor) & (t > 0)
    if m.sum() < 3:
        raise ValueError("not enough points above the fit floor")
    slope = np.polyfit(t[m], np.log(coh[m]), 1)[0]
    if slope >= 0:
        return math.inf
    return -1.0 / slope


def bare_fid(T2: float, span: float, n_real: int = 1000, seed: int = 0, n_points: int = 60) -> DecayCurve:
    """Coherence of (|0> + |+1>)/sqrt2 under (delta omega_{+1}/2) sigma_z alone.

    The phase is the time integral of delta omega_{+1}, so the decay is the
    ensemble average |<exp(i phi)>|.
    """
    p = OUParams.from_t2(T2, seed)
    x = ou_trace(p, span, n_traces=n_real)
    phi = np.concatenate([np.zeros((n_real, 1)), np.cumsum(x[:, :-1] * p.dt, axis=1)], axis=1)
    t = p.dt * np.arange(x.shape[1])
    idx = np.unique(np.linspace(0, len(t) - 1, n_points).astype(int))
    coh = np.abs(np.mean(np.exp(1j * phi[:, idx]), axis=0))
    return DecayCurve(t[idx], coh, fit_decay(t[idx], coh), "bare")


def dressed_fid(
    T2: float,
    omega: float,
    span: float,
    n_real: int = 200,
    seed: int = 0,
    params: SystemParams | None = None,
    B0: float = 7.5e-4,
    n_points: int = 40,
) -> DecayCurve:
    """Coherence of (|0'> + |D>)/sqrt2 on one ion under dressing plus all three dephasing terms."""
    params = params or SystemParams.from_hz(20.0, 140e3)
    s = sensitivities(params, B0)
    ratios = {"+1": 1.0, "-1": s.ratio_m1, "0'": s.ratio_0p}
    noise_op = sum(0.5 * r * hb.local_spin_matrix("sigma_z", m) for m, r in ratios.items())
    h0 = 0.5 * omega * (hb.ketbra("+1", "0") + hb.ketbra("-1", "0"))
    h0 = h0 + h0.T
    p = OUParams.from_t2(T2, seed)
    x = ou_trace(p, span, n_traces=n_real)
    K = x.shape[1] - 1
    ops = np.stack([h0, noise_op]).astype(complex)
    psi = np.tile(((hb.ket("0'") + hb.ket("D")) / math.sqrt(2.0)).astype(complex), (n_real, 1))
    a, b = hb.ket("0'"), hb.ket("D")
    marks = np.unique(np.linspace(0, K, n_points).astype(int))
    t_out, coh = [0.0], [1.0]
    done = 0
    for mk in marks[1:]:
        seg = slice(done, mk)
        coeffs = np.stack([np.ones((mk - done, n_real)), x[:, seg].T], axis=-1)
        psi = run_piecewise(ops, coeffs, np.full(mk - done, p.dt), psi)
        done = mk
        t_out.append(mk * p.dt)
        coh.append(2.0 * abs(np.mean(np.conj(psi @ a) * (psi @ b))))
    t_out, coh = np.array(t_out), np.array(coh)
    return DecayCurve(t_out, coh, fit_decay(t_out, coh), f"dressed {omega / (2 * math.pi):.0f} Hz")


# --- pulsed dynamical decoupling baseline ------------------------------------

_X = np.array([[0, 1], [1, 0]], dtype=complex)
_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
_Z = np.diag([1.0, -1.0]).astype(complex)
_I2 = np.eye(2, dtype=complex)


@dataclass(frozen=True)
class PddSchedule:
    """XY4 blocks with symmetric timing on an effective two-level qubit."""

    n_pulses: int
    free_time: float
    pulse_rabi: float = 2.0 * math.pi * 50e3
    j_during_pulses: bool = False

    def __post_init__(self):
        if self.n_pulses < 0 or self.n_pulses % 4:
            raise ParameterError("XY4 needs a non-negative multiple of four pulses")
        if self.free_time <= 0 or self.pulse_rabi <= 0:
            raise ParameterError("free time and pulse Rabi frequency must be positive")

    @property
    def pulse_duration(self) -> float:
        return math.pi / self.pulse_rabi

    @property
    def axes(self) -> tuple[str, ...]:
        return tuple("XY"[k % 2] for k in range(self.n_pulses))

    @property
    def gaps(self) -> np.ndarray:
        n = self.n_pulses
        if n == 0:
            return np.array([self.free_time])
        g = np.full(n + 1, self.free_time / n)
        g[0] = g[-1] = self.free_time / (2 * n)
        return g

    @property
    def pulse_centers(self) -> np.ndarray:
        starts = np.cumsum(self.gaps[:-1]) + self.pulse_duration * np.arange(self.n_pulses)
        return starts + 0.5 * self.pulse_duration

    @property
    def span(self) -> float:
        return self.free_time + self.n_pulses * self.pulse_duration

    def segments(self):
        """(duration, axis or None) in time order."""
        out = []
        for k, g in enumerate(self.gaps):
            out.append((g, None))
            if k < self.n_pulses:
                out.append((self.pulse_duration, self.axes[k]))
        return out


def _two_qubit(a, b):
    return np.kron(a, b)


def pdd_run(schedule: PddSchedule, J: float, dw=None, dom=None, window: float | None = None) -> float:
    """Bell fidelity of one XY4 J-gate realisation.

    Qubits are {|0>, |+1>}; the gate Hamiltonian is -(J/2) Z Z and dephasing
    adds (delta omega_{+1}/2) Z on each ion. ``dw`` is one trace (common mode)
    or a pair; ``dom`` is a delta Omega trace of the pulse Rabi frequency.
    """
    span = schedule.span
    if window is not None and span > window * (1 + 1e-12):
        raise ParameterError("pulse schedule overflows the noise window")
    for tr in (dw if isinstance(dw, (list, tuple)) else [dw]) + [dom]:
        if tr is not None and tr.span < span * (1 - 1e-12):
            raise ParameterError("noise trace shorter than the pulse schedule")
    zz = _two_qubit(_Z, _Z)
    z1, z2 = _two_qubit(_Z, _I2), _two_qubit(_I2, _Z)
    sx = _two_qubit(_X, _I2) + _two_qubit(_I2, _X)
    sy = _two_qubit(_Y, _I2) + _two_qubit(_I2, _Y)
    ops = np.stack([zz, z1, z2, sx, sy])

    # segment grid: schedule edges plus every trace sample boundary
    edges = [0.0]
    kinds = []
    for dur, axis in schedule.segments():
        edges.append(edges[-1] + dur)
        kinds.append(axis)
    edges = np.array(edges)
    pts = [edges]
    dws = dw if isinstance(dw, (list, tuple)) else (dw, dw)
    for tr in (dws[0], dws[1], dom):
        if tr is not None:
            pts.append(tr.t0 + tr.dt * np.arange(1, len(tr.values)))
    grid = np.unique(np.concatenate(pts))
    grid = grid[(grid >= 0) & (grid <= span)]
    dts = np.diff(grid)
    keep = dts > 0
    mids = grid[:-1][keep] + 0.5 * dts[keep]
    dts = dts[keep]
    seg_idx = np.clip(np.searchsorted(edges, mids) - 1, 0, len(kinds) - 1)
    pulse_x = np.array([kinds[i] == "X" for i in seg_idx])
    pulse_y = np.array([kinds[i] == "Y" for i in seg_idx])
    in_pulse = pulse_x | pulse_y

    def held(tr):
        if tr is None:
            return np.zeros(len(mids))
        k = np.clip(np.floor((mids - tr.t0) / tr.dt).astype(int), 0, len(tr.values) - 1)
        return tr.values[k]

    rabi = schedule.pulse_rabi + held(dom)
    coeffs = np.zeros((len(mids), 5))
    coeffs[:, 0] = -0.5 * J * (np.ones(len(mids)) if schedule.j_during_pulses else ~in_pulse)
    coeffs[:, 1] = 0.5 * held(dws[0])
    coeffs[:, 2] = 0.5 * held(dws[1])
    coeffs[:, 3] = 0.5 * rabi * pulse_x
    coeffs[:, 4] = 0.5 * rabi * pulse_y

    plus = np.full(4, 0.5, dtype=complex)
    psi = run_piecewise(ops.astype(complex), coeffs.astype(complex), dts, plus)
    # ideal: ZZ phase over the free time; XY4 blocks compose to identity
    t_zz = span if schedule.j_during_pulses else schedule.free_time
    target = np.exp(0.5j * J * t_zz * np.diag(zz)) * plus
    return float(abs(np.vdot(target, psi)) ** 2)


def pdd_gate_time(J: float) -> float:
    """Free evolution time of the bare ZZ gate, pi/(2J)."""
    return math.pi / (2.0 * J)


@dataclass(frozen=True)
class NoiseScanConfig:
    """Desk-scale comparison of continuous dressing against pulsed decoupling."""

    params: SystemParams
    t2_values: tuple[float, ...] = (1e-3, 8e-3, 40e-3)
    n_pulses: tuple[int, ...] = (4, 8, 12, 20, 28, 40, 60)
    cdd_drives_hz: tuple[float, ...] = (10e3, 20e3, 40e3, 60e3)
    n_real: int = 20
    amp_rel: float = 5e-3
    amp_tau_c: float = 0.5e-3
    pulse_rabi: float = 2.0 * math.pi * 50e3
    B0: float = 7.5e-4
    independent_ions: bool = False
    j_during_pulses: bool = False
    seed: int = 0


def _stats(x) -> tuple[float, float]:
    x = np.asarray(x, dtype=float)
    sem = float(x.std(ddof=1) / math.sqrt(len(x))) if len(x) > 1 else 0.0
    return float(x.mean()), sem


def cdd_infidelities(cfg: NoiseScanConfig, T2: float, omega: float, amplitude=True, dephasing=True, master=None) -> np.ndarray:
    """Per-realisation infidelity of the dressed gate (approximate Hamiltonian plus noise)."""
    params = cfg.params.with_drive(omega)
    bell = BellConfig(params, hamiltonian="approx")
    tau = bell.tau()
    base = bell.model()
    psi0 = bell.initial_state()
    spec = PropagationSpec((0.0, tau))
    master = cfg.seed if master is None else master
    out = []
    for i in range(cfg.n_real):
        seed = derive_seed(master, int(round(T2 * 1e9)), i)
        deph = dephasing_traces(T2, cfg.B0, tau, seed, cfg.params, cfg.independent_ions) if dephasing else None
        amp = None
        if amplitude and cfg.amp_rel > 0:
            amp = ou_trace(OUParams.relative_amplitude(omega, cfg.amp_rel, cfg.amp_tau_c, derive_seed(seed, 1)), tau)
        model = hm.attach_noise(base, deph, amp)
        (state,) = propagate(model, psi0, spec)
        out.append(1.0 - spin_observables(state)["fidelity"])
    return np.array(out)


def pdd_infidelities(cfg: NoiseScanConfig, T2: float, n_pulses: int, amplitude=True, master=None) -> np.ndarray:
    J = couplings(cfg.params).J0
    sched = PddSchedule(n_pulses, pdd_gate_time(J), cfg.pulse_rabi, cfg.j_during_pulses)
    master = cfg.seed if master is None else master
    out = []
    for i in range(cfg.n_real):
        seed = derive_seed(master, int(round(T2 * 1e9)), i)
        if cfg.independent_ions:
            dw = [ou_trace(OUParams.from_t2(T2, derive_seed(seed, j)), sched.span) for j in range(2)]
        else:
            dw = ou_trace(OUParams.from_t2(T2, seed), sched.span)
        dom = None
        if amplitude and cfg.amp_rel > 0:
            dom = ou_trace(OUParams.relative_amplitude(cfg.pulse_rabi, cfg.amp_rel, cfg.amp_tau_c, derive_seed(seed, 1)), sched.span)
        out.append(1.0 - pdd_run(sched, J, dw, dom))
    return np.array(out)


def pdd_experiment(cfg: NoiseScanConfig, T2: float, n_pulses: int, amplitude: bool = True) -> FidelityReport:
    start = time.perf_counter()
    inf = pdd_infidelities(cfg, T2, n_pulses, amplitude)
    mean, sem = _stats(inf)
    J = couplings(cfg.params).J0
    return FidelityReport(
        bell_fidelity=1.0 - mean,
        gate_time=pdd_gate_time(J),
        leakage=0.0,
        seed=cfg.seed,
        wall_time=time.perf_counter() - start,
        extra={"sem": sem, "n_pulses": n_pulses, "T2": T2},
    )


def _compare_row(task) -> dict:
    cfg, T2, scheme, setting, amplitude = task
    if scheme == "CDD":
        x = cdd_infidelities(cfg, T2, 2.0 * math.pi * setting, amplitude)
    else:
        x = pdd_infidelities(cfg, T2, setting, amplitude)
    m, s = _stats(x)
    return {"T2": T2, "scheme": scheme, "setting": setting, "mean_infidelity": m, "sem": s}


def noise_compare(cfg: NoiseScanConfig, amplitude: bool = True, mapper=map) -> list[dict]:
    """Rows of (T2, scheme, setting, mean infidelity, sem).

    ``mapper`` must preserve order (builtin ``map``, ``Executor.map``); each
    row seeds itself from (seed, T2, realisation), so the result does not
    depend on how rows are distributed.
    """
    tasks = []
    for T2 in cfg.t2_values:
        tasks += [(cfg, T2, "CDD", f, amplitude) for f in cfg.cdd_drives_hz]
        tasks += [(cfg, T2, "PDD", n, amplitude) for n in cfg.n_pulses]
    return list(mapper(_compare_row, tasks))


def write_rows_csv(path, rows: list[dict]) -> None:
    if not rows:
        return
    keys = list(rows[0])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(keys)
        for r in rows:
            w.writerow([repr(float(r[k])) if isinstance(r[k], (float, np.floating)) else r[k] for k in keys])


def write_trace_csv(path, trace: NoiseTrace) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "value"])
        for t, v in zip(trace.times, trace.values):
            w.writerow([repr(float(t)), repr(float(v))])


# --- voltage noise -----------------------------------------------------------------

@dataclass(frozen=True)
class VoltageNoiseParams:
    alpha_z: float
    d: float
    S_V: object = 1e-18
    charge: float = sc.e

    def __post_init__(self):
        if self.d <= 0:
            raise ParameterError("ion-electrode distance must be positive")

    def voltage_psd(self, omega):
        return self.S_V(omega) if callable(self.S_V) else np.full(np.shape(omega), float(self.S_V))


def _response(omega, p: VoltageNoiseParams, params: SystemParams, nu_z=None):
    nu_z = params.nu1 if nu_z is None else nu_z
    omega = np.asarray(omega, dtype=float)
    gap = nu_z**2 - omega**2
    if np.any(np.abs(gap) < 1e-6 * nu_z**2):
        raise ParameterError("frequency too close to the secular pole")
    return p.charge * p.alpha_z / (params.ion_mass * p.d * gap)


def position_psd(omega, p: VoltageNoiseParams, params: SystemParams, nu_z=None):
    """S_z(omega) in m^2/Hz."""
    return _response(omega, p, params, nu_z) ** 2 * p.voltage_psd(omega)


def voltage_to_b_psd(omega, p: VoltageNoiseParams, params: SystemParams, nu_z=None):
    """S_B(omega) in T^2/Hz."""
    return params.gradient**2 * position_psd(omega, p, params, nu_z)
