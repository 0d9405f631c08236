"""Hamiltonian builders: sums of static operators times scalar time envelopes.

Every model is written in the interaction picture of the static hyperfine
Hamiltonian with hbar = 1. The exact model can keep the motion either in its
own interaction picture (``motional_frame="interaction"``, oscillating
sideband envelopes) or in the lab frame (``"lab"``, where it is static). The
two give the same reduced spin density at every time.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from . import hilbert as hb
from .physics import CouplingSet, ModeSpectrum, ParameterError, SystemParams, couplings, mode_spectrum

FRAMES = ("bare-interaction", "dressed-interaction", "shift-interaction")
MOTIONAL_FRAMES = ("interaction", "lab")


class WindowError(ValueError):
    """A held trace was sampled outside the window it covers."""


class ScheduleError(ValueError):
    """Invalid phase-flip request."""


# --- envelopes ---------------------------------------------------------------

class Envelope:
    """Scalar function of time. Subclasses accept scalar or array ``t``."""

    piecewise_constant = True
    max_frequency = 0.0

    def __call__(self, t):
        raise NotImplementedError

    def breakpoints(self, t0: float, t1: float) -> np.ndarray:
        return np.empty(0)

    def check_window(self, t0: float, t1: float) -> None:
        pass


@dataclass(frozen=True)
class Const(Envelope):
    value: complex = 1.0

    def __call__(self, t):
        return np.full(np.shape(t), self.value, dtype=complex) if np.ndim(t) else complex(self.value)


@dataclass(frozen=True)
class Phasor(Envelope):
    """amplitude * exp(i frequency t)."""

    amplitude: complex
    frequency: float
    piecewise_constant = False

    @property
    def max_frequency(self):
        return abs(self.frequency)

    def __call__(self, t):
        return self.amplitude * np.exp(1j * self.frequency * np.asarray(t))


@dataclass(frozen=True, eq=False)
class Held(Envelope):
    """Zero-order hold of samples ``values[k]`` on [t0 + k dt, t0 + (k+1) dt)."""

    values: np.ndarray
    dt: float
    t0: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values))
        if self.dt <= 0:
            raise ValueError("hold interval must be positive")

    @property
    def t_end(self) -> float:
        return self.t0 + len(self.values) * self.dt

    def _index(self, t):
        k = np.floor((np.asarray(t, dtype=float) - self.t0) / self.dt).astype(int)
        return np.clip(k, 0, len(self.values) - 1)

    def __call__(self, t):
        self.check_window(np.min(t), np.max(t))
        v = self.values[self._index(t)]
        return v.astype(complex) if np.ndim(v) else complex(v)

    def breakpoints(self, t0, t1):
        k0 = max(int(math.ceil((t0 - self.t0) / self.dt)), 1)
        k1 = min(int(math.floor((t1 - self.t0) / self.dt)), len(self.values) - 1)
        if k1 < k0:
            return np.empty(0)
        return self.t0 + self.dt * np.arange(k0, k1 + 1)

    def check_window(self, t0, t1):
        slack = 1e-9 * self.dt
        if t0 < self.t0 - slack or t1 > self.t_end + slack:
            raise WindowError(
                f"trace covers [{self.t0:.6g}, {self.t_end:.6g}] s but [{t0:.6g}, {t1:.6g}] s was requested"
            )


@dataclass(frozen=True)
class Step(Envelope):
    t_switch: float
    before: complex = 1.0
    after: complex = -1.0

    def __call__(self, t):
        out = np.where(np.asarray(t) < self.t_switch, self.before, self.after).astype(complex)
        return out if out.ndim else complex(out)

    def breakpoints(self, t0, t1):
        return np.array([self.t_switch]) if t0 < self.t_switch < t1 else np.empty(0)


@dataclass(frozen=True, eq=False)
class Product(Envelope):
    factors: tuple

    @property
    def piecewise_constant(self):
        return all(f.piecewise_constant for f in self.factors)

    @property
    def max_frequency(self):
        return sum(f.max_frequency for f in self.factors)

    def __call__(self, t):
        out = self.factors[0](t)
        for f in self.factors[1:]:
            out = out * f(t)
        return out

    def breakpoints(self, t0, t1):
        pts = [f.breakpoints(t0, t1) for f in self.factors]
        return np.unique(np.concatenate(pts)) if pts else np.empty(0)

    def check_window(self, t0, t1):
        for f in self.factors:
            f.check_window(t0, t1)


def multiply(env: Envelope, other: Envelope) -> Envelope:
    if isinstance(other, Const) and other.value == 1.0:
        return env
    if isinstance(env, Const) and env.value == 1.0:
        return other
    left = env.factors if isinstance(env, Product) else (env,)
    return Product(left + (other,))


# --- models ------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Term:
    """operator * envelope(t). ``drive_power[j]`` is the power of Omega_j the term scales with."""

    operator: hb.Operator
    envelope: Envelope = Const(1.0)
    drive_power: tuple[int, int] = (0, 0)
    label: str = ""

    @property
    def is_drive(self) -> bool:
        return any(self.drive_power)


@dataclass(frozen=True, eq=False)
class HamiltonianModel:
    terms: tuple[Term, ...]
    label: str
    frame: str
    layout: hb.BasisLayout
    drive_rabi: tuple[float, float] = (0.0, 0.0)
    motional_frame: str = "interaction"
    phase_flip_time: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))
        if self.frame not in FRAMES:
            raise ValueError(f"unknown frame {self.frame!r}")
        if self.motional_frame not in MOTIONAL_FRAMES:
            raise ValueError(f"unknown motional frame {self.motional_frame!r}")
        for term in self.terms:
            if term.operator.layout != self.layout:
                raise hb.LayoutError(f"term {term.label!r} lives on a different layout")

    @property
    def piecewise_constant(self) -> bool:
        return all(t.envelope.piecewise_constant for t in self.terms)

    @property
    def static(self) -> bool:
        return all(isinstance(t.envelope, Const) for t in self.terms)

    @property
    def max_frequency(self) -> float:
        return max((t.envelope.max_frequency for t in self.terms), default=0.0)

    def breakpoints(self, t0: float, t1: float) -> np.ndarray:
        pts = [t.envelope.breakpoints(t0, t1) for t in self.terms]
        pts = np.unique(np.concatenate(pts)) if pts else np.empty(0)
        return pts[(pts > t0) & (pts < t1)]

    def check_window(self, t0: float, t1: float) -> None:
        for t in self.terms:
            t.envelope.check_window(t0, t1)

    def matrix(self, t: float):
        """H(t) as a dense or sparse matrix."""
        out = None
        for term in self.terms:
            m = term.operator.matrix * complex(term.envelope(t))
            out = m if out is None else out + m
        if out is None:
            return hb.zero(self.layout).matrix
        return out

    def at(self, t: float) -> hb.Operator:
        m = self.matrix(t)
        return hb.Operator(sp.csr_matrix(m) if self.layout.sparse else np.asarray(m.toarray() if sp.issparse(m) else m), self.layout)

    def hermiticity_residual(self, t: float) -> float:
        return self.at(t).hermiticity_residual()

    def with_terms(self, terms, **kw) -> "HamiltonianModel":
        return replace(self, terms=tuple(terms), **kw)

    def term(self, label: str) -> Term:
        for t in self.terms:
            if t.label == label:
                return t
        raise KeyError(label)


# --- builders ----------------------------------------------------------------

def default_layout(n_modes: int = 2, n_max: int = 2) -> hb.BasisLayout:
    return hb.BasisLayout(2, (n_max,) * n_modes)


def _sz_j(layout):
    return hb.operator_factory("sigma_zJ", 0, layout) @ hb.operator_factory("sigma_zJ", 1, layout)


def _carrier(layout, ion):
    return hb.operator_factory("proj", ion, layout, levels=("+1", "0")) + hb.operator_factory(
        "proj", ion, layout, levels=("-1", "0")
    )


def _k_minus_kdag(ion: int):
    k = hb.ketbra("+1", "0") - hb.ketbra("-1", "0")
    return k - k.T


def build_exact(
    params: SystemParams,
    modes: ModeSpectrum | None = None,
    coup: CouplingSet | None = None,
    layout: hb.BasisLayout | None = None,
    motional_frame: str = "interaction",
) -> HamiltonianModel:
    """J-coupling, carrier dressing and first-order sideband terms.

    With one mode in the layout only the COM mode enters the sideband term;
    the J-coupling keeps its full two-mode strength.
    """
    modes = modes or mode_spectrum(params)
    coup = coup or couplings(params, modes)
    layout = layout or default_layout()
    if layout.n_modes == 0:
        raise ParameterError("the exact Hamiltonian needs at least one motional mode")
    if layout.n_modes > modes.n_modes or layout.n_ions != 2:
        raise ParameterError("layout does not match the two-ion chain")
    if motional_frame not in MOTIONAL_FRAMES:
        raise ValueError(f"unknown motional frame {motional_frame!r}")

    om = params.drive_rabi
    terms = [Term(-0.5 * coup.J0 * _sz_j(layout), label="J")]
    for j in range(2):
        h0 = _carrier(layout, j)
        power = (1, 0) if j == 0 else (0, 1)
        terms.append(Term(0.5 * om[j] * (h0 + h0.dag()), drive_power=power, label=f"carrier{j}"))

    for n in range(layout.n_modes):
        nu = modes.frequencies[n]
        a = hb.operator_factory("a", n, layout)
        ad = hb.operator_factory("adag", n, layout)
        if motional_frame == "lab":
            terms.append(Term(nu * hb.operator_factory("n", n, layout), label=f"mode{n}"))
        for j in range(2):
            power = (1, 0) if j == 0 else (0, 1)
            g = 0.5 * coup.epsilon[j, n] * om[j]
            if g == 0.0:
                continue
            spin = hb.embed({j: _k_minus_kdag(j)}, layout)
            if motional_frame == "lab":
                terms.append(Term(g * ((ad - a) @ spin), drive_power=power, label=f"sideband{j}{n}"))
            else:
                terms.append(Term(g * (ad @ spin), Phasor(1.0, nu), power, f"sideband{j}{n}+"))
                terms.append(Term(-g * (a @ spin), Phasor(1.0, -nu), power, f"sideband{j}{n}-"))
    return HamiltonianModel(tuple(terms), "exact", "bare-interaction", layout, om, motional_frame)


def _dressed_shift_op(layout, ion):
    m = 2.0 * hb.ketbra("D", "D") + hb.ketbra("u", "u") + hb.ketbra("d", "d")
    return hb.embed({ion: m}, layout)


def _pair(layout, a: str, b: str):
    return hb.operator_factory(a, 0, layout) @ hb.operator_factory(b, 1, layout)


def build_approx(
    params: SystemParams,
    coup: CouplingSet | None = None,
    layout: hb.BasisLayout | None = None,
) -> HamiltonianModel:
    """Static gate, single-ion shift, off-resonant pair and dressing-splitting terms."""
    coup = coup or couplings(params)
    layout = layout or hb.BasisLayout(2, ())
    flip_flop = _pair(layout, "S_plus", "S_minus") + _pair(layout, "S_minus", "S_plus")
    double = _pair(layout, "S_plus", "S_plus") + _pair(layout, "S_minus", "S_minus")
    terms = [
        Term(-coup.J0 * flip_flop, label="gate_J0"),
        Term(-coup.J_eff * flip_flop, drive_power=(1, 1), label="gate_Jeff"),
        Term(-coup.J0 * double, label="rot"),
    ]
    for j in range(2):
        power = (2, 0) if j == 0 else (0, 2)
        terms.append(Term(-coup.shift[j] * _dressed_shift_op(layout, j), drive_power=power, label=f"single{j}"))
    for j in range(2):
        power = (1, 0) if j == 0 else (0, 1)
        sz = hb.operator_factory("S_z", j, layout)
        terms.append(Term(params.drive_rabi[j] / math.sqrt(2.0) * sz, drive_power=power, label=f"shift{j}"))
    return HamiltonianModel(tuple(terms), "approx", "bare-interaction", layout, params.drive_rabi)


def build_magnus_effective(
    params: SystemParams,
    modes: ModeSpectrum | None = None,
    coup: CouplingSet | None = None,
    layout: hb.BasisLayout | None = None,
) -> HamiltonianModel:
    """Leading Magnus terms of the sideband Hamiltonian in the dressed interaction frame."""
    modes = modes or mode_spectrum(params)
    coup = coup or couplings(params, modes)
    layout = layout or default_layout()
    flip_flop = _pair(layout, "S_plus", "S_minus") + _pair(layout, "S_minus", "S_plus")
    terms = [Term(-coup.J_eff * flip_flop, drive_power=(1, 1), label="pair")]
    for j in range(2):
        power = (2, 0) if j == 0 else (0, 2)
        sp_ = hb.operator_factory("S_plus", j, layout)
        sm_ = hb.operator_factory("S_minus", j, layout)
        terms.append(Term(-coup.shift[j] * (sp_ @ sm_ + sm_ @ sp_), drive_power=power, label=f"single{j}"))
        sz = hb.operator_factory("S_z", j, layout)
        for n in range(layout.n_modes):
            g2 = coup.G2[j, n]
            num = hb.operator_factory("n", n, layout)
            terms.append(Term(-g2 * (num @ sz), drive_power=tuple(3 * p for p in power), label=f"dshift{j}{n}"))
    return HamiltonianModel(tuple(terms), "magnus", "dressed-interaction", layout, params.drive_rabi)


# --- noise -------------------------------------------------------------------

_TRANSITIONS = ("+1", "-1", "0'")


def _held(trace, scale=1.0) -> Held:
    return Held(scale * np.asarray(trace.values, dtype=float), trace.dt, trace.t0)


def attach_noise(model: HamiltonianModel, dephasing=None, amplitude=None) -> HamiltonianModel:
    """Add dephasing terms and amplitude fluctuations to a bare-frame model.

    ``dephasing`` maps each transition ('+1', '-1', "0'") to a trace of
    delta omega_m(t); pass a list of two such maps for independent ions.
    ``amplitude`` is one trace of delta Omega(t) (or a pair, one per ion);
    each drive term is multiplied by (1 + delta Omega / Omega_j) ** power.
    Traces are sampled by zero-order hold.
    """
    if model.frame != "bare-interaction":
        raise ValueError("noise is defined in the bare frame")
    layout = model.layout
    terms = list(model.terms)

    if amplitude is not None:
        amps = amplitude if isinstance(amplitude, (list, tuple)) else (amplitude, amplitude)
        factors = []
        for j in range(2):
            om = model.drive_rabi[j]
            rel = np.asarray(amps[j].values, dtype=float) / om if om else np.zeros(len(amps[j].values))
            factors.append((rel, amps[j]))
        new = []
        for term in terms:
            if not term.is_drive:
                new.append(term)
                continue
            scale = None
            base = None
            for j, p in enumerate(term.drive_power):
                if p:
                    rel, tr = factors[j]
                    f = (1.0 + rel) ** p
                    scale = f if scale is None else scale * f
                    base = tr
            new.append(replace(term, envelope=multiply(term.envelope, Held(scale, base.dt, base.t0))))
        terms = new

    if dephasing is not None:
        per_ion = dephasing if isinstance(dephasing, (list, tuple)) else (dephasing, dephasing)
        for j in range(2):
            for m in _TRANSITIONS:
                trace = per_ion[j].get(m)
                if trace is None:
                    continue
                op = 0.5 * hb.operator_factory("sigma_z", j, layout, transition=m)
                terms.append(Term(op, _held(trace), label=f"dephasing{j}{m}"))
    return model.with_terms(terms, label=model.label + "+noise")


def phase_flip(model: HamiltonianModel, tau: float) -> HamiltonianModel:
    """Flip the sign of every dressing amplitude at tau/2."""
    if model.phase_flip_time is not None:
        raise ScheduleError("model already carries a phase flip; the schedule is single-flip only")
    if not any(t.is_drive for t in model.terms):
        raise ScheduleError("model has no tagged drive terms")
    if tau <= 0:
        raise ScheduleError("gate time must be positive")
    t_flip = 0.5 * tau
    terms = []
    for term in model.terms:
        if term.is_drive and sum(term.drive_power) % 2 == 1:
            term = replace(term, envelope=multiply(term.envelope, Step(t_flip, 1.0, -1.0)))
        terms.append(term)
    return model.with_terms(terms, label=model.label + "+pf", phase_flip_time=t_flip)
