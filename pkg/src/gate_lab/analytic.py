"""Closed-form gate analytics: amplitudes, Bell fidelity and intrinsic error terms."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .physics import CouplingSet, ParameterError, SystemParams

SQRT2 = math.sqrt(2.0)

# sideband constant of the two-mode chain (nu2 = sqrt3 nu1)
_ETA1_COEFF = 475.0 * math.pi**2 / 4608.0


@dataclass(frozen=True)
class ErrorBudget:
    eta1: float
    eta2: float
    phi: float
    J_delta: float
    phase_flip: bool

    @property
    def eta_tot(self) -> float:
        return self.eta1 + self.eta2


@dataclass(frozen=True)
class EvolutionAmplitudes:
    a_DD: complex
    a_ud: complex = 0.0
    a_du: complex = 0.0
    beta1: float | None = None
    beta2: float | None = None
    beta1_half: float | None = None
    beta2_half: float | None = None

    @property
    def subspace_norm(self) -> float:
        return abs(self.a_DD) ** 2 + abs(self.a_ud) ** 2 + abs(self.a_du) ** 2


def detuned_evolution(J_tot: float, detuning: float, t) -> EvolutionAmplitudes:
    """Amplitudes of |DD>, |ud>, |du> after evolving |DD> for time t.

    ``detuning`` is the per-ion dark-state shift Delta; the gate transition is
    detuned by 2 Delta and the amplitudes carry the common exp(3 i Delta t).
    """
    if J_tot <= 0:
        raise ParameterError("J_tot must be positive")
    jd = math.sqrt(detuning**2 + 2.0 * J_tot**2)
    phase = np.exp(3j * detuning * t)
    s = np.sin(jd * t)
    a_dd = phase * (np.cos(jd * t) + 1j * detuning / jd * s)
    a_b = phase * 1j * J_tot / jd * s
    return EvolutionAmplitudes(a_DD=a_dd, a_ud=a_b, a_du=a_b)


def bell_fidelity_phase(phi):
    """Bell-state fidelity when |0'D>, |D0'> pick up 2 phi and |DD> picks up 3 phi."""
    phi = np.asarray(phi, dtype=float)
    # reduce to (-pi, pi]
    phi = -(np.mod(-phi + math.pi, 2.0 * math.pi) - math.pi)
    f = (3.0 + 2.0 * np.cos(phi) + 2.0 * np.cos(2.0 * phi) + np.cos(3.0 * phi)) / 8.0
    return float(f) if f.ndim == 0 else f


def eta_motional(omega, nu1):
    """Error from off-resonant carrier coupling to the motional sidebands."""
    return _ETA1_COEFF * (np.asarray(omega) / nu1) ** 4


def eta_off_resonant(J0, omega, phase_flip: bool = False):
    """Upper bound of the leakage error into |uu>, |dd>."""
    r = J0 / np.asarray(omega, dtype=float)
    return 4.0 * r**4 if phase_flip else r**2


def error_budget(params: SystemParams, c: CouplingSet, phase_flip: bool = False) -> ErrorBudget:
    omega = params.drive
    if omega >= SQRT2 * params.nu1:
        raise ParameterError("drive must stay below the sqrt2 nu1 sideband pole")
    if omega <= 0:
        raise ParameterError("drive must be positive")
    jd = math.sqrt(c.detuning**2 + 2.0 * c.J_tot**2)
    return ErrorBudget(
        eta1=float(eta_motional(omega, params.nu1)),
        eta2=float(eta_off_resonant(c.J0, omega, phase_flip)),
        phi=math.pi * c.detuning / jd,
        J_delta=jd,
        phase_flip=phase_flip,
    )


def _chain_frequencies(J0: float, omega: float) -> tuple[float, float]:
    """Normal frequencies of the |DD>,|ud>+|du>,|uu>,|dd> block.

    The smaller root is formed without subtracting nearly equal numbers, since
    Omega^2 - sqrt(Omega^4 + 4 J^4) cancels badly for Omega >> J.
    """
    s = math.hypot(2.0 * J0**2, omega**2)
    hi = 2.0 * J0**2 + omega**2 + s
    lo = 2.0 * J0**2 - 4.0 * J0**4 / (omega**2 + s)
    return math.sqrt(hi), math.sqrt(max(lo, 0.0))


def off_resonant_amplitude(J0: float, omega: float, phase_flip: bool = False) -> EvolutionAmplitudes:
    """|DD> amplitude at tau = pi/(sqrt2 J0) under the gate plus counter-rotating terms.

    With ``phase_flip`` the drive changes sign at tau/2. The correction term is
    -(<DD|V|uu> - <DD|V|dd>)^2 with V the half-gate propagator, which follows
    from the uu <-> dd symmetry of the flipped Hamiltonian.
    """
    if omega <= 0 or J0 <= 0:
        raise ParameterError("J0 and omega must be positive")
    w_hi, w_lo = _chain_frequencies(J0, omega)
    s = math.hypot(2.0 * J0**2, omega**2)
    tau = math.pi / (SQRT2 * J0)
    b1 = math.cos(w_hi * tau)
    b2 = math.cos(w_lo * tau)
    a = 0.5 * (b1 + b2) + (2.0 * J0**2 - omega**2) / (2.0 * s) * (b1 - b2)
    if not phase_flip:
        return EvolutionAmplitudes(a_DD=a, beta1=b1, beta2=b2)
    b1h = math.cos(0.5 * w_hi * tau)
    b2h = math.cos(0.5 * w_lo * tau)
    a_pf = a - 2.0 * J0**2 * omega**2 / s**2 * (b1h - b2h) ** 2
    return EvolutionAmplitudes(a_DD=a_pf, beta1=b1, beta2=b2, beta1_half=b1h, beta2_half=b2h)
