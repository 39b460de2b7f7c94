"""Certify a computed trajectory through its stress formulation.

The stress history of the viscoelastic run is tested for admissibility against
random virtual displacements, the strain is recovered by inverting the
Volterra stress law, and the displacement is rebuilt from that strain.
"""
from viscontact import experiments as ex
from viscontact.config import RunConfig
from viscontact.duality import certify_trajectory

tr = ex.simulate(RunConfig())
rep = certify_trajectory(tr, 500)

print(f"admissibility  min {rep.sigma_violation.min():+.2e}  ({rep.n_probes} probes per step)")
print(f"inclusion      min {rep.inclusion_violation.min():+.2e}  (>= {rep.n_samples.min()} samples per step)")
print(f"energy         max {rep.energy_residual.max():.2e}")
print(f"roundtrip      max {rep.roundtrip_error.max():.2e}")
print("certified" if rep.certified() else "NOT certified")
