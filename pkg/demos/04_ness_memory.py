# %% [markdown]
# # The adiabatic steady state remembers the initial bound-state energies
#
# Switching on the bias slowly from an equilibrium at ``kT``, ``mu`` leads to
# a state whose bound-state weights are the Fermi weights of the energies
# *before* the switch, not after it.  A cold, tuned Fermi level makes the
# difference visible.

# %%
import numpy as np

from adiabatic_ness.model import SwitchingFunction, build_model
from adiabatic_ness.ness import (assemble_rho_ad, branch_table, ness_cell, observables,
                                 reference_panel)
from adiabatic_ness.spectral import FermiParams

config = {
    "geometry": {"h": 1.0, "L": 100.5, "a": 5.0, "a_tilde": 2.5},
    "potential": {"kind": "double_well", "amplitudes": [-1.0, -1.0],
                  "centers": [-1.0, 1.0], "radius": 1.25},
    "bias": {"v_minus": 0.0, "v_plus": 0.5},
}
hset = build_model(config)
table = branch_table(hset)
eps0, eps1 = table.energies[0], table.energies[-1]
fermi = FermiParams(kT=0.01, mu=float(eps0[1]))
print("eps(0):", np.round(eps0, 5), " eps(1):", np.round(eps1, 5))

rho = assemble_rho_ad(hset, table, fermi)
print("rho(eps(0)):", np.round(rho.pp_weights, 4), " rho(eps(1)):", np.round(rho.final_weights, 4))

# %% [markdown]
# ``rho_eta(0)`` comes from one backward and one forward sweep; the
# continued eigenvectors ride along and give the weights directly.

# %%
chi = SwitchingFunction()
panel = reference_panel(hset).vectors
for eta in (0.4, 0.2, 0.1):
    row = ness_cell(hset, chi, eta, panel, rho)
    print(f"eta={eta:<4} Delta={row.delta:.4f}  weights={np.round(row.pp_weights, 4)}")

# %% [markdown]
# Density and bond current in the sample under ``rho_ad``.

# %%
obs = observables(rho.apply, hset)
for x, n, j in zip(obs["x"][::2], obs["density"][::2], obs["current"][::2]):
    print(f"x={x:5.1f}  n={n:.4f}  j={j:+.2e}")
