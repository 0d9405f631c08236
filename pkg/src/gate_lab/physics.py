"""Closed-form physical parameters of two ions in a static magnetic-field gradient.

All frequencies are angular (rad/s). Hamiltonians elsewhere in the package are
written in these units with hbar = 1; hbar only enters the Lamb-Dicke
parameters and the wave-packet extents computed here.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import constants as sc

TWO_PI = 2.0 * math.pi

MU_B = sc.physical_constants["Bohr magneton"][0]
HBAR = sc.hbar
AMU = sc.physical_constants["atomic mass constant"][0]

YB171_MASS = 171.0 * AMU
YB171_LINEWIDTH = TWO_PI * 19.6e6
YB171_HYPERFINE = TWO_PI * 12.642812118e9


class ParameterError(ValueError):
    """Raised for physically invalid or unsupported parameter combinations."""


class ResonanceError(ParameterError):
    """Raised when a drive sits on the 2 nu_n^2 = Omega^2 pole."""


class OptimizationError(RuntimeError):
    """Raised when a scalar minimisation finds no interior minimum."""


@dataclass(frozen=True)
class SystemParams:
    """Physical constants and control settings for a two-ion chain.

    ``drive_rabi`` holds one dressing Rabi frequency per ion. A scalar is
    broadcast to both ions.
    """

    gradient: float
    nu1: float
    drive_rabi: tuple[float, float] = (TWO_PI * 20e3, TWO_PI * 20e3)
    ion_mass: float = YB171_MASS
    n_ions: int = 2
    B0: float = 7.5e-4
    linewidth: float = YB171_LINEWIDTH
    bohr_magneton: float = MU_B
    hbar: float = HBAR
    g_factor: float = 2.0
    omega0: float = YB171_HYPERFINE

    def __post_init__(self):
        drive = self.drive_rabi
        if np.isscalar(drive):
            drive = (float(drive), float(drive))
        object.__setattr__(self, "drive_rabi", tuple(float(x) for x in drive))
        if self.n_ions != 2:
            raise ParameterError(f"only two-ion chains are supported, got n_ions={self.n_ions}")
        if len(self.drive_rabi) != self.n_ions:
            raise ParameterError("drive_rabi needs one entry per ion")
        if self.ion_mass <= 0:
            raise ParameterError("ion_mass must be positive")
        if self.gradient < 0:
            raise ParameterError("gradient must be non-negative")
        for name in ("nu1", "B0", "bohr_magneton", "hbar", "omega0"):
            if getattr(self, name) <= 0:
                raise ParameterError(f"{name} must be positive")
        if self.linewidth < 0:
            raise ParameterError("linewidth must be non-negative")
        if any(w < 0 for w in self.drive_rabi):
            raise ParameterError("drive Rabi frequencies must be non-negative")

    @classmethod
    def from_hz(cls, gradient: float, nu1_hz: float, drive_hz=20e3, **kw) -> "SystemParams":
        """Build from frequencies quoted in Hz (the X/2pi convention)."""
        if np.isscalar(drive_hz):
            drive = TWO_PI * float(drive_hz)
        else:
            drive = tuple(TWO_PI * float(x) for x in drive_hz)
        for key in ("linewidth", "omega0"):
            if key + "_hz" in kw:
                kw[key] = TWO_PI * kw.pop(key + "_hz")
        return cls(gradient=gradient, nu1=TWO_PI * nu1_hz, drive_rabi=drive, **kw)

    @property
    def drive(self) -> float:
        """Common dressing Rabi frequency; raises if the ions differ."""
        a, b = self.drive_rabi
        if not math.isclose(a, b, rel_tol=1e-12):
            raise ParameterError("ions have different drive Rabi frequencies")
        return a

    def with_drive(self, omega) -> "SystemParams":
        return replace(self, drive_rabi=omega)


@dataclass(frozen=True)
class ModeSpectrum:
    frequencies: np.ndarray
    participation: np.ndarray
    extents: np.ndarray

    @property
    def n_modes(self) -> int:
        return len(self.frequencies)


@dataclass(frozen=True)
class CouplingSet:
    """Spin-motion and spin-spin couplings.

    ``G1[j, k, n]`` and ``G2[j, n]`` are the Magnus coefficients of the
    first-order sideband term; ``shift[j]`` is the dark-state shift of ion j.
    """

    epsilon: np.ndarray
    J0: float
    J_eff: float
    G1: np.ndarray
    G2: np.ndarray
    shift: np.ndarray = field(default_factory=lambda: np.zeros(2))

    @property
    def J_tot(self) -> float:
        return self.J0 + self.J_eff

    @property
    def detuning(self) -> float:
        """Half the |DD> to (|ud>+|du>)/sqrt2 detuning; equals Delta for identical ions."""
        return 0.5 * float(self.shift[0] + self.shift[1])


@dataclass(frozen=True)
class Sensitivities:
    dBw_p1: float
    dBw_m1: float
    dBw_0p: float
    xi: float

    @property
    def ratio_m1(self) -> float:
        return self.dBw_m1 / self.dBw_p1

    @property
    def ratio_0p(self) -> float:
        return self.dBw_0p / self.dBw_p1


def mode_spectrum(params: SystemParams) -> ModeSpectrum:
    """Axial COM and stretch modes of a two-ion chain."""
    if params.n_ions != 2:
        raise ParameterError("mode spectrum is only available for two ions")
    nu = np.array([params.nu1, math.sqrt(3.0) * params.nu1])
    s = 1.0 / math.sqrt(2.0)
    participation = np.array([[s, s], [s, -s]])
    extents = np.sqrt(params.hbar / (2.0 * params.ion_mass * nu))
    return ModeSpectrum(nu, participation, extents)


def _resonance_guard(nu: np.ndarray, omega: float) -> None:
    gap = np.abs(2.0 * nu**2 - omega**2)
    if np.any(gap < 1e-6 * nu**2):
        raise ResonanceError("dressing Rabi frequency is resonant with 2 nu_n^2 = Omega^2")


def couplings(params: SystemParams, modes: ModeSpectrum | None = None, n_bar=None) -> CouplingSet:
    """Lamb-Dicke parameters, J-coupling and the sideband-induced corrections.

    ``n_bar`` (one value per mode) is only used for the Lamb-Dicke warning.
    """
    if modes is None:
        modes = mode_spectrum(params)
    nu = modes.frequencies
    eps = (
        params.bohr_magneton
        * params.gradient
        * modes.participation
        * modes.extents[None, :]
        / (params.hbar * nu[None, :])
    )
    if n_bar is not None:
        ld = np.abs(eps) * np.sqrt(np.broadcast_to(np.asarray(n_bar, dtype=float), nu.shape))[None, :]
        if np.any(ld >= 0.3):
            warnings.warn(f"outside the Lamb-Dicke regime: max eps*sqrt(n)={ld.max():.3f}", stacklevel=2)

    J0 = float(np.sum(eps[0] * eps[1] * nu))
    om = np.asarray(params.drive_rabi)
    for w in om:
        _resonance_guard(nu, w)
    om_jk = np.outer(om, om)
    denom = 2.0 * nu[None, None, :] ** 2 - om_jk[:, :, None]
    G1 = eps[:, None, :] * eps[None, :, :] * om_jk[:, :, None] * nu[None, None, :] / (2.0 * denom)
    G2 = eps**2 * om[:, None] ** 3 / (math.sqrt(2.0) * (2.0 * nu[None, :] ** 2 - om[:, None] ** 2))
    J_eff = float(np.sum(2.0 * G1[0, 1, :]))
    shift = np.array([G1[0, 0].sum(), G1[1, 1].sum()])
    return CouplingSet(epsilon=eps, J0=J0, J_eff=J_eff, G1=G1, G2=G2, shift=shift)


def j0_closed_form(params: SystemParams) -> float:
    """Two-mode sum in closed form, (mu_B dB)^2 / (6 m hbar nu1^2)."""
    num = (params.bohr_magneton * params.gradient) ** 2
    return num / (6.0 * params.ion_mass * params.hbar * params.nu1**2)


def doppler_limit(params: SystemParams, modes: ModeSpectrum | None = None) -> np.ndarray:
    """Doppler-limited mean phonon number Gamma / (2 nu_n) for each mode."""
    if modes is None:
        modes = mode_spectrum(params)
    return params.linewidth / (2.0 * modes.frequencies)


def sensitivities(params: SystemParams, B: float | None = None) -> Sensitivities:
    """Field sensitivities of the F=1 levels from the Breit-Rabi formula."""
    if B is None:
        B = params.B0
    if B <= 0:
        raise ParameterError("field must be positive")
    xi = params.g_factor * params.bohr_magneton / (params.hbar * params.omega0)
    quad = xi**2 * B / math.sqrt(1.0 + (xi * B) ** 2)
    w0 = params.omega0
    return Sensitivities(
        dBw_p1=0.5 * w0 * (xi + quad),
        dBw_m1=0.5 * w0 * (-xi + quad),
        dBw_0p=w0 * quad,
        xi=xi,
    )


def optimal_drive(params: SystemParams, phase_flip: bool = False) -> float:
    """Dressing Rabi frequency minimising the intrinsic error budget.

    Without a phase flip the minimum has a closed form that does not depend on
    the trap frequency. With a phase flip the budget is minimised numerically by
    golden-section search on (0, nu1/sqrt2).
    """
    if params.gradient <= 0:
        raise ParameterError("gradient must be positive to define an optimal drive")
    if not phase_flip:
        num = params.gradient**2 * params.bohr_magneton**2
        den = 5.0 * math.sqrt(19.0) * params.hbar * params.ion_mass * math.pi
        return 2.0 * (num / den) ** (1.0 / 3.0)

    from scipy.optimize import minimize_scalar

    from .analytic import eta_motional, eta_off_resonant

    J0 = j0_closed_form(params)
    upper = params.nu1 / math.sqrt(2.0)

    # work in log-frequency; the budget spans many decades
    def budget(logw):
        w = math.exp(logw)
        return eta_motional(w, params.nu1) + eta_off_resonant(J0, w, phase_flip=True)

    grid = np.linspace(math.log(upper) - 12.0, math.log(upper) - 1e-6, 400)
    vals = np.array([budget(x) for x in grid])
    k = int(np.argmin(vals))
    if k == 0 or k == len(grid) - 1:
        raise OptimizationError("no interior minimum of the phase-flip error budget below nu1/sqrt2")
    res = minimize_scalar(budget, bracket=(grid[k - 1], grid[k], grid[k + 1]), method="golden", tol=1e-8)
    if not res.success:
        raise OptimizationError(f"golden-section search failed: {res.message}")
    return math.exp(res.x)


def gate_time(c: CouplingSet) -> float:
    """Gate time pi / J_delta with J_delta = sqrt(Delta^2 + 2 J_tot^2)."""
    if c.J_tot <= 0:
        raise ParameterError("J_tot must be positive to define a gate time")
    return math.pi / math.sqrt(c.detuning**2 + 2.0 * c.J_tot**2)
