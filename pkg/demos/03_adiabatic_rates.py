# %% [markdown]
# # Adiabatic error rates on synthetic families
#
# ``K(kappa) = U D U^T`` with a rotating basis and known eigenpairs.  We
# follow one eigenvector backward under the switched dynamics and measure
# how far it drifts from the instantaneous eigenvector.

# %%
import numpy as np

from adiabatic_ness.adiabatic import (CrossingPlan, crossing_family, family_table,
                                      no_crossing_family, verify_discrete_rate, y_operator)
from adiabatic_ness.model import SwitchingFunction

chi = SwitchingFunction()
etas = [0.2, 0.1, 0.05]

# %% [markdown]
# With a uniform gap the error is first order in ``eta``.

# %%
rep = verify_discrete_rate(no_crossing_family(), chi, etas)
print("sup errors:", np.array2string(rep.sup_errors, precision=4))
print(f"fitted exponent {rep.exponent:.2f}")

# %% [markdown]
# Two levels crossing linearly at ``kappa = 1/2``.  The crossing window
# ``|eta s - t0| <= eta^delta`` carries most of the error.

# %%
fam = crossing_family()
table = family_table(fam)
plan = CrossingPlan.from_table(table, chi)
print(f"crossing at kappa={plan.kappa0:.3f}, order M={plan.M}, delta={plan.delta}")
rep = verify_discrete_rate(fam, chi, etas, table=table)
for e, parts in zip(rep.etas, rep.interval_errors):
    print(f"eta={e:<5}  before/inside/after: {np.array2string(parts, precision=4)}")
print(f"fitted exponent {rep.exponent:.2f}, bound exponent {plan.predicted_exponent():.2f}")

# %% [markdown]
# The corrector ``Y`` solves ``i[K, Y] = -E'``; the trapezoid rule on a
# circle converges geometrically, and the residual tells when to stop.

# %%
y = y_operator(no_crossing_family(), 0.3, 0, np.eye(24)[:, :4])
print(f"N_theta={y.contour.n_theta}, radius={y.contour.radius:.3f}, "
      f"relative residual {y.residual:.1e}")
