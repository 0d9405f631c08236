"""
Gate on a thermal motional state
================================

Initial COM Fock states are drawn from a thermal distribution, and each is
propagated with heating jumps. A small run: n_bar = 2 and four samples.
"""

# %%
from gate_lab import mcwf as mc

cfg = mc.HotGateConfig.desk(n_bar=2.0, n_max=20, n_samples=4, n_traj=3)
res = mc.hot_gate_experiment(cfg)
for row in res.rows():
    print(row)
print(f"average 1 - F {res.mean_infidelity:.2e} +- {res.sem:.1e}")
print(f"ground-state gate {res.intrinsic_infidelity:.2e}")
print(f"rank correlation with n {res.rank_correlation:.2f}")
