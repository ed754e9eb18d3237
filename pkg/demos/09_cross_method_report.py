"""All four approximation routes against the oracle on one model.

Each method targets the same object from a different direction: stationary
particle averages, fixed-point iteration, history renewal, and branching
profiles.  The harness runs them under a shared budget and tabulates the
distance to the eigenvector oracle.
"""

from qsdsim import ReportBudget, cross_method_report, resolve_model

print(__doc__)

model = resolve_model("two-state")
budget = ReportBudget(
    fv_particles=400,
    fv_burnin=10.0,
    fv_horizon=110.0,
    afp_steps=300_000,
    branch_horizon=10.0,
    branch_cap=50_000,
    branch_attempts=30,
)
rows = cross_method_report(model, budget, seed=1)

print(f"{'method':<16} {'TV to oracle':>14} {'runtime':>9}  status")
for r in rows:
    print(f"{r['method']:<16} {r['tv_to_oracle']:>14.6f} {r['runtime_s']:>8.2f}s  {r['status']}")
