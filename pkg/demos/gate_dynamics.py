"""
Two-ion gate from a static gradient
===================================

Coupling constants at 20 T/m and a 140 kHz COM mode, then the Bell-state
fidelity over the gate window with the full spin-motion Hamiltonian and
with the effective spin-only one.
"""

# %%
import numpy as np

from gate_lab.analytic import error_budget
from gate_lab.physics import TWO_PI, SystemParams, couplings, doppler_limit, gate_time, optimal_drive
from gate_lab.propagator import BellConfig, bell_series

p = SystemParams.from_hz(20.0, 140e3, 20e3)
c = couplings(p)
tau = gate_time(c)
print(f"J0/2pi        {c.J0 / TWO_PI:8.2f} Hz")
print(f"gate time     {tau * 1e3:8.3f} ms")
print(f"Omega_opt/2pi {optimal_drive(p) / TWO_PI / 1e3:8.3f} kHz")
print(f"Doppler n     {doppler_limit(p)}")
print(f"error budget  {error_budget(p, c)}")

# %%
# Fidelity around the gate time. The exact model keeps both motional modes
# (three Fock levels each); the approximate one has the motion eliminated.
times = np.linspace(0.0, 1.2 * tau, 25)
exact = bell_series(BellConfig(p, motional_frame="lab"), times)
approx = bell_series(BellConfig(p, hamiltonian="approx"), times)
for t, fe, fa in zip(times, exact["fidelity"], approx["fidelity"]):
    print(f"{t * 1e3:7.3f} ms  {fe:.6f}  {fa:.6f}")

# %%
k = int(np.argmax(exact["fidelity"]))
print(f"peak at {times[k] * 1e3:.3f} ms, 1 - F = {1 - exact['fidelity'][k]:.2e}")
