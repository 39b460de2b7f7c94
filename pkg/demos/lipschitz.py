"""Continuous dependence on the data.

Perturbs the yield limit and the load amplitude by shrinking relative amounts
and compares the solution change with the data change.  A bounded,
scale-independent ratio is what a Lipschitz estimate predicts.
"""
from viscontact import experiments as ex
from viscontact.config import RunConfig

study = ex.lipschitz_study(RunConfig(lipschitz_scales=(0.1, 0.01, 0.001)))
print(f"{'scale':>8} {'|du|':>12} {'|data|':>12} {'ratio':>12}")
for r in study.rows:
    print(f"{r['scale']:8.0e} {r['numerator']:12.4e} {r['denominator']:12.4e} {r['ratio']:12.4e}")
print(f"spread {study.spread:.3f}, elastic scaling error {study.equivariance_error:.1e}")
