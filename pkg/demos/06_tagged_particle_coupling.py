"""The tagged particle and its limit process, coupled on shared marks.

Realizing Fleming-Viot from per-particle marked Poisson streams (internal
jumps plus voter/revival events) allows particle 1 to be coupled with the
time-inhomogeneous limit process whose return law is the conditioned
evolution.  The probability that the two trajectories split by a fixed
horizon shrinks as N grows, at the rate the empirical measure converges.

Expect a ~30 s run for the default sizes.
"""

import numpy as np

from qsdsim import (
    Distribution,
    RngStream,
    coupled_tagged_run,
    evolve_conditioned,
    resolve_model,
)

print(__doc__)

model = resolve_model("two-state")
mu = Distribution.delta(2)
horizon = 2.0
grid = np.linspace(0.0, horizon, 21)
path = evolve_conditioned(model, mu, horizon, 1e-3, 2)
t_mass1 = [path.vector_at(float(s))[0] for s in grid]
replicas = 1000

print(f"{replicas} coupled replicas per N, horizon {horizon}:")
print(" N    P(split)   divergence bound from the same runs")
for n in (20, 80, 320):
    hits = 0
    integrals = []
    for r in range(replicas):
        run = coupled_tagged_run(model, n, mu, horizon, RngStream(11, (n, r)), path=path, grid=grid)
        hits += run.coupling.diverged
        disc = [2.0 * abs(m.mass(1) - t_mass1[k]) for k, m in enumerate(run.trace.measures)]
        integrals.append(np.trapezoid(disc, grid))
    p = hits / replicas
    rhs = model.c0 * float(np.mean(integrals))
    print(f"{n:4d}   {p:.4f}     {rhs:.4f}")
print()
print("while the trajectories are coupled they are literally identical;")
print("the bound integrates the empirical-measure error, so both columns")
print("shrink like 1/sqrt N")
