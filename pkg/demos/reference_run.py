"""Elastic vs viscoelastic body on the rigid-plastic foundation.

Runs both bodies at the reference configuration and prints the contact
timeline: when the body first returns to the foundation, and the Gamma3
state at a few instants.  Memory (b > 0) relaxes the stress left over from
the upward phase, so the viscoelastic body comes back earlier.
"""
import numpy as np

from viscontact import experiments as ex
from viscontact.config import RunConfig

cfg = RunConfig()
runs = {"elastic": ex.simulate(cfg, b=0.0), "viscoelastic": ex.simulate(cfg)}

for name, tr in runs.items():
    print(f"{name}: {tr.space.n_dofs} DOFs, {tr.n_steps} steps, {tr.wall_clock:.1f}s, "
          f"t_c = {ex.contact_closure_time(tr)}")
    for t in (1.5, 2.75, 4.0, 5.0):
        i = tr.step_of_time(t)
        u, s = tr.u_nu[i], tr.sigma_nu[i]
        print(f"  t={t:4.2f}  u_nu in [{u.min():+.4f}, {u.max():+.4f}]  sigma_nu in [{s.min():+.3f}, {s.max():+.3f}]")

# once a node penetrates, its normal stress sits at -F: the foundation has yielded
tr = runs["viscoelastic"]
yielded = np.all(tr.u_nu > 0, axis=1) & np.all(np.isclose(tr.sigma_nu, -cfg.F, rtol=1e-6), axis=1)
print(f"fully yielded from t = {tr.times[np.argmax(yielded)]:.2f} s")
