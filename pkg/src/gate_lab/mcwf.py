"""Monte-Carlo wave-function trajectories with motional heating.

Waiting times use the norm-threshold rule: a uniform r is drawn, the state is
evolved under H - (i/2) sum C^dag C until its squared norm falls to r, then a
jump C_k is chosen with probability proportional to ||C_k psi||^2.

For static models the non-Hermitian generator is diagonalised once and the
jump time is found by root bracketing on the closed-form norm, so there is no
time step at all. Other models are integrated with DOP853 and a terminal
norm event.
"""
from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
from scipy.integrate import solve_ivp
from scipy.optimize import brentq
from scipy.stats import spearmanr

from . import hamiltonians as hm
from . import hilbert as hb
from .noise import derive_seed
from .physics import SystemParams, couplings, gate_time, mode_spectrum
from .propagator import FidelityReport, PropagationError, PropagationSpec, bell_state, propagate, spin_observables


@dataclass(frozen=True, eq=False)
class CollapseSet:
    operators: tuple[hb.Operator, ...]

    def __post_init__(self):
        object.__setattr__(self, "operators", tuple(self.operators))
        layouts = {op.layout for op in self.operators}
        if len(layouts) > 1:
            raise hb.LayoutError("collapse operators live on different layouts")

    @property
    def layout(self):
        return self.operators[0].layout if self.operators else None

    def decay_operator(self):
        """sum_k C_k^dag C_k as a sparse matrix."""
        out = None
        for op in self.operators:
            m = sp.csr_matrix(op.matrix)
            term = m.conj().T @ m
            out = term if out is None else out + term
        return out


def heating_collapse(layout: hb.BasisLayout, n_dot: float, n_bar: float, mode: int = 0) -> CollapseSet:
    """C1 = sqrt(n_dot n_bar) a^dag and C2 = sqrt(n_dot (1 + n_bar)) a."""
    if n_dot < 0 or n_bar < 0:
        raise ValueError("heating rate and bath occupation must be non-negative")
    ops = []
    if n_dot * n_bar > 0:
        ops.append(math.sqrt(n_dot * n_bar) * hb.operator_factory("adag", mode, layout))
    if n_dot > 0:
        ops.append(math.sqrt(n_dot * (1.0 + n_bar)) * hb.operator_factory("a", mode, layout))
    return CollapseSet(tuple(ops))


def sample_fock(n_bar: float, n_max: int, count: int, seed: int) -> np.ndarray:
    """Inverse-CDF draws from the Bose-Einstein distribution renormalised on [0, n_max]."""
    if n_bar < 0:
        raise ValueError("mean phonon number must be non-negative")
    p, _ = hb.thermal_distribution(n_bar, n_max)
    cdf = np.cumsum(p)
    cdf /= cdf[-1]
    u = np.random.default_rng(seed).random(count)
    return np.minimum(np.searchsorted(cdf, u, side="right"), n_max)


def truncated_mean(n_bar: float, n_max: int) -> float:
    p, _ = hb.thermal_distribution(n_bar, n_max)
    return float(np.arange(n_max + 1) @ p / p.sum())


@dataclass
class Trajectory:
    index: int
    seed: int
    jump_times: list = field(default_factory=list)
    jump_ops: list = field(default_factory=list)
    states: list = field(default_factory=list)


@dataclass(frozen=True)
class TrajectoryBatch:
    n_traj: int
    master_seed: int
    times: np.ndarray
    observables: dict
    sem: dict
    trajectories: tuple = ()
    initial_fock: tuple = ()
    per_traj_fidelity: tuple = ()

    @property
    def mean_jumps(self) -> float:
        return float(np.mean([len(t.jump_times) for t in self.trajectories])) if self.trajectories else 0.0


class _StaticGenerator:
    """exp(-i H_eff t) for a constant non-Hermitian H_eff via one eigendecomposition."""

    def __init__(self, h_eff: np.ndarray):
        lam, V = la.eig(h_eff)
        self.lam = lam
        self.V = V
        self.lu = la.lu_factor(V)

    def coeffs(self, psi):
        return la.lu_solve(self.lu, psi)

    def state(self, c, dt):
        return self.V @ (np.exp(-1j * self.lam * dt) * c)

    def norm2(self, c, dt):
        v = self.state(c, dt)
        return float(np.real(np.vdot(v, v)))


def _choose_jump(psi, cmats, rng):
    weights = np.array([np.real(np.vdot(c @ psi, c @ psi)) for c in cmats])
    total = weights.sum()
    if total <= 0:
        raise PropagationError("jump requested with vanishing jump weights")
    k = int(np.searchsorted(np.cumsum(weights) / total, rng.random(), side="right"))
    k = min(k, len(cmats) - 1)
    new = cmats[k] @ psi
    return k, new / np.linalg.norm(new)


def _run_static(gen, cmats, psi, times, t0, rng, traj, max_jumps):
    """Jump loop with exact waiting times for a static generator."""
    r = rng.random()
    t_ref = t0
    c = gen.coeffs(psi)
    for t_s in times:
        while True:
            if not cmats or gen.norm2(c, t_s - t_ref) > r:
                break
            f = lambda t: gen.norm2(c, t - t_ref) - r
            # the norm is monotone between jumps; bracket from the last reference
            tj = brentq(f, t_ref, t_s, xtol=1e-15, rtol=1e-13)
            psi_j = gen.state(c, tj - t_ref)
            k, psi = _choose_jump(psi_j, cmats, rng)
            traj.jump_times.append(tj)
            traj.jump_ops.append(k)
            if len(traj.jump_times) > max_jumps:
                raise PropagationError("jump count exceeded the safety limit")
            t_ref = tj
            c = gen.coeffs(psi)
            r = rng.random()
        v = gen.state(c, t_s - t_ref)
        traj.states.append(v / np.linalg.norm(v))


def _run_ode(model, decay, cmats, psi, times, t0, rng, traj, spec, max_jumps):
    static = None
    dynamic = []
    for term in model.terms:
        m = sp.csr_matrix(term.operator.matrix)
        if isinstance(term.envelope, hm.Const):
            m = m * term.envelope.value
            static = m if static is None else static + m
        else:
            dynamic.append((m, term.envelope))
    d = psi.size
    base = -0.5j * decay if decay is not None else sp.csr_matrix((d, d))
    if static is not None:
        base = base + static

    def rhs(t, y):
        dy = base @ y
        for m, env in dynamic:
            dy = dy + complex(env(t)) * (m @ y)
        return -1j * dy

    max_step = spec.step_limit(model)
    breaks = list(model.breakpoints(t0, times[-1])) + [np.inf]
    r = rng.random()
    t = t0
    y = psi
    pending = list(times)
    while pending:
        t_end = min(pending[0], breaks[0])

        def event(tt, yy):
            return float(np.real(np.vdot(yy, yy))) - r

        event.terminal = True
        event.direction = -1
        if t_end > t:
            sol = solve_ivp(
                rhs, (t, t_end), y, method="DOP853", rtol=spec.rel_tol, atol=spec.abs_tol,
                max_step=max_step, events=event if cmats else None,
            )
            if sol.status < 0:
                raise PropagationError(f"integrator failed: {sol.message}")
            if sol.status == 1:
                tj = float(sol.t_events[0][0])
                k, y = _choose_jump(sol.y_events[0][0], cmats, rng)
                traj.jump_times.append(tj)
                traj.jump_ops.append(k)
                if len(traj.jump_times) > max_jumps:
                    raise PropagationError("jump count exceeded the safety limit")
                t = tj
                r = rng.random()
                continue
            y = sol.y[:, -1]
            t = t_end
        if t_end == pending[0]:
            pending.pop(0)
            traj.states.append(y / np.linalg.norm(y))
        if breaks and t_end == breaks[0]:
            breaks.pop(0)


def mcwf_propagate(
    model: hm.HamiltonianModel,
    collapse: CollapseSet,
    psi0: hb.StateVector,
    spec: PropagationSpec,
    n_traj: int,
    seed: int,
    observables: dict | None = None,
    keep_states: bool = False,
    max_jumps: int = 1_000_000,
    trajectory_indices=None,
) -> TrajectoryBatch:
    """Average ``observables`` (name -> f(StateVector) -> float) over trajectories.

    Trajectory i uses seed derive_seed(seed, i), so any single trajectory can
    be rerun on its own through ``trajectory_indices``.
    """
    if psi0.layout != model.layout or (collapse.operators and collapse.layout != model.layout):
        raise hb.LayoutError("model, collapse set and state must share a layout")
    if abs(psi0.norm() - 1.0) > 1e-9:
        raise ValueError("initial state is not normalised")
    observables = observables or {"fidelity": lambda s: spin_observables(s)["fidelity"]}
    times = spec.times()
    t0 = spec.t_span[0]
    model.check_window(t0, spec.t_span[1])
    cmats = [sp.csr_matrix(op.matrix) for op in collapse.operators]
    decay = collapse.decay_operator()
    gen = None
    if model.static:
        h = model.matrix(t0)
        h = h.toarray() if sp.issparse(h) else np.asarray(h, dtype=complex)
        if decay is not None:
            h = h - 0.5j * decay.toarray()
        gen = _StaticGenerator(h)

    indices = range(n_traj) if trajectory_indices is None else trajectory_indices
    trajs = []
    values = {name: [] for name in observables}
    for i in indices:
        ts = derive_seed(seed, i)
        rng = np.random.default_rng(ts)
        traj = Trajectory(i, ts)
        psi = np.asarray(psi0.amplitudes, dtype=complex)
        if gen is not None:
            _run_static(gen, cmats, psi, times, t0, rng, traj, max_jumps)
        else:
            _run_ode(model, decay, cmats, psi, times, t0, rng, traj, spec, max_jumps)
        states = [hb.StateVector(s, model.layout, psi0.basis) for s in traj.states]
        if spec.check_truncation and model.layout.n_modes:
            for s in states:
                hb.check_truncation(s, spec.truncation_tol)
        for name, f in observables.items():
            values[name].append([f(s) for s in states])
        if not keep_states:
            traj.states = []
        trajs.append(traj)

    means, sems = {}, {}
    for name, rows in values.items():
        arr = np.asarray(rows, dtype=float)
        means[name] = arr.mean(axis=0)
        sems[name] = arr.std(axis=0, ddof=1) / math.sqrt(len(arr)) if len(arr) > 1 else np.zeros(arr.shape[1])
    fid = tuple(float(v[-1]) for v in values["fidelity"]) if "fidelity" in values else ()
    return TrajectoryBatch(len(trajs), seed, times, means, sems, tuple(trajs), (), fid)


# --- test oracle -----------------------------------------------------------------

def lindblad_oracle(H: np.ndarray, cops, rho0: np.ndarray, times, rtol=1e-10, atol=1e-12) -> np.ndarray:
    """Dense master-equation integration, for validating trajectories on small systems."""
    d = H.shape[0]
    cops = [np.asarray(c, dtype=complex) for c in cops]
    cdc = sum((c.conj().T @ c for c in cops), np.zeros((d, d), dtype=complex))

    def rhs(t, y):
        rho = y.reshape(d, d)
        out = -1j * (H @ rho - rho @ H)
        for c in cops:
            out += c @ rho @ c.conj().T
        out -= 0.5 * (cdc @ rho + rho @ cdc)
        return out.ravel()

    times = np.asarray(times, dtype=float)
    sol = solve_ivp(rhs, (0.0, times[-1]), rho0.astype(complex).ravel(), method="DOP853", t_eval=times, rtol=rtol, atol=atol)
    return sol.y.T.reshape(len(times), d, d)


# --- hot gate ------------------------------------------------------------------------

@dataclass(frozen=True)
class HotGateConfig:
    params: SystemParams
    n_bar: float = 5.0
    n_max: int = 40
    n_samples: int = 8
    n_traj: int = 5
    n_dot: float = 100.0
    bath_n_bar: float | None = None
    include_stretch: bool = False
    stretch_n_max: int = 4
    master_seed: int = 0
    config_hash: str = ""

    @classmethod
    def desk(cls, **kw):
        return cls(SystemParams.from_hz(20.0, 140e3, 8e3), **kw)

    @classmethod
    def full(cls, **kw):
        base = dict(n_bar=70.0, n_max=250, n_samples=40, n_traj=20)
        base.update(kw)
        return cls(SystemParams.from_hz(20.0, 140e3, 8e3), **base)


@dataclass(frozen=True)
class HotGateResult:
    reports: tuple[FidelityReport, ...]
    initial_fock: tuple[int, ...]
    mean_infidelity: float
    sem: float
    rank_correlation: float
    intrinsic_infidelity: float | None = None

    def rows(self):
        for i, (n, r) in enumerate(zip(self.initial_fock, self.reports)):
            yield {"sample_index": i, "initial_n": n, "mean_infidelity": r.infidelity, "sem": r.extra["sem"]}


def _hot_gate_setup(cfg: HotGateConfig):
    cutoffs = (cfg.n_max,) + ((cfg.stretch_n_max,) if cfg.include_stretch else ())
    layout = hb.BasisLayout(2, cutoffs)
    modes = mode_spectrum(cfg.params)
    c = couplings(cfg.params, modes)
    model = hm.build_exact(cfg.params, modes, c, layout, motional_frame="lab")
    bath = cfg.n_bar if cfg.bath_n_bar is None else cfg.bath_n_bar
    return layout, modes, c, model, heating_collapse(layout, cfg.n_dot, bath, mode=0)


def _hot_gate_sample(task) -> FidelityReport:
    cfg, s, n = task
    start = time.perf_counter()
    layout, _, c, model, collapse = _hot_gate_setup(cfg)
    tau = gate_time(c)
    init = (int(n),) + ((0,) if cfg.include_stretch else ())
    seed = derive_seed(cfg.master_seed, 1, s)
    batch = mcwf_propagate(model, collapse, bell_state(+1, layout, init), PropagationSpec((0.0, tau)), cfg.n_traj, seed)
    inf = 1.0 - np.asarray(batch.per_traj_fidelity)
    sem = float(inf.std(ddof=1) / math.sqrt(len(inf))) if len(inf) > 1 else 0.0
    return FidelityReport(
        bell_fidelity=1.0 - float(inf.mean()),
        gate_time=tau,
        leakage=0.0,
        seed=seed,
        config_hash=cfg.config_hash,
        wall_time=time.perf_counter() - start,
        extra={"sem": sem, "initial_n": int(n), "mean_jumps": batch.mean_jumps},
    )


def hot_gate_experiment(cfg: HotGateConfig, intrinsic: bool = True, mapper=map) -> HotGateResult:
    """Thermal initial Fock states, heating trajectories, COM mode only by default.

    Samples are independent and go through the order-preserving ``mapper``.
    """
    modes = mode_spectrum(cfg.params)
    c = couplings(cfg.params, modes)
    tau = gate_time(c)
    fock = sample_fock(cfg.n_bar, cfg.n_max, cfg.n_samples, derive_seed(cfg.master_seed, 0))
    reports = list(mapper(_hot_gate_sample, [(cfg, s, int(n)) for s, n in enumerate(fock)]))
    infs = np.array([r.infidelity for r in reports])
    rho = float(spearmanr(fock, infs).statistic) if len(set(fock.tolist())) > 1 else float("nan")
    f0 = None
    if intrinsic:
        lay0 = hb.BasisLayout(2, (2,))
        m0 = hm.build_exact(cfg.params, modes, c, lay0, motional_frame="lab")
        (st,) = propagate(m0, bell_state(+1, lay0, (0,)), PropagationSpec((0.0, tau)))
        f0 = 1.0 - spin_observables(st)["fidelity"]
    return HotGateResult(
        tuple(reports),
        tuple(int(n) for n in fock),
        float(infs.mean()),
        float(infs.std(ddof=1) / math.sqrt(len(infs))) if len(infs) > 1 else 0.0,
        rho,
        f0,
    )


def write_hot_gate_csv(path, result: HotGateResult) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample_index", "initial_n", "mean_infidelity", "sem"])
        for row in result.rows():
            w.writerow([row["sample_index"], row["initial_n"], repr(row["mean_infidelity"]), repr(row["sem"])])
