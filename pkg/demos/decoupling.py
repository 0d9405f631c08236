"""
Continuous against pulsed decoupling
====================================

Magnetic noise with a finite T2 plus slow amplitude drifts. The dressed
gate is compared with an XY4 pulse train during a bare J-coupling gate.
Realisations are few here so the script finishes in seconds.
"""

# %%
from gate_lab import noise as nz
from gate_lab.physics import SystemParams

cfg = nz.NoiseScanConfig(
    SystemParams.from_hz(20.0, 140e3),
    t2_values=(8e-3, 40e-3),
    n_pulses=(4, 20, 60),
    cdd_drives_hz=(10e3, 20e3, 40e3),
    n_real=5,
)
rows = nz.noise_compare(cfg)
for r in rows:
    print(f"T2 {r['T2'] * 1e3:4.0f} ms  {r['scheme']}  {r['setting']:>8}  {r['mean_infidelity']:.2e} +- {r['sem']:.1e}")

# %%
# Free-induction decay: the dressed qubit outlives the bare one by far.
from gate_lab.physics import TWO_PI

T2 = 0.5e-3
bare = nz.bare_fid(T2, 3 * T2, n_real=300, seed=2)
dressed = nz.dressed_fid(T2, TWO_PI * 100e3, 16 * T2, n_real=40, seed=2)
print(f"bare T2 {bare.T2 * 1e3:.2f} ms, dressed {dressed.T2 * 1e3:.1f} ms")

# %%
# Trap-voltage noise turned into magnetic noise through the gradient.
import numpy as np

p = SystemParams.from_hz(20.0, 140e3)
v = nz.VoltageNoiseParams(alpha_z=0.1, d=100e-6, S_V=1e-18)
w = np.geomspace(p.nu1 / 1000, p.nu1 / 2, 6)
for wi, sb in zip(w, nz.voltage_to_b_psd(w, v, p)):
    print(f"omega/2pi {wi / TWO_PI:10.1f} Hz  S_B {sb:.3e} T^2/Hz")
