"""Where it all starts: the QSD as a principal eigenvector.

On a finite window the quasi-stationary distribution is the normalized left
Perron vector of the live block of the rate matrix.  This script computes it
for the two-state chain and for a truncated drifted walk, then verifies the
two identities everything else in the package is tested against:

  * the fixed-point equation: (nu Q)(x) + theta nu(x) = 0 on every state,
  * the three-way identity: theta = -lambda = sum_x nu(x) q(x, 0).
"""

import math

from qsdsim import qsd_residual, resolve_model, solve_qsd_power, theta_of

print(__doc__)

for name in ("two-state", "bd:1,2,100"):
    model = resolve_model(name)
    sol = solve_qsd_power(model)
    res = qsd_residual(model, sol.nu)
    print(f"model {name}")
    print(f"  lambda  = {sol.lam:.12f}")
    print(f"  theta   = {sol.theta:.12f}")
    print(f"  theta_of(nu) = {theta_of(model, sol.nu):.12f}")
    print(f"  fixed-point residual (sup norm) = {res.sup_norm:.3e}")
    head = {x: round(m, 6) for x, m in list(sol.nu.items())[:5]}
    print(f"  nu (first states) = {head}")
    print()

# the two-state solution is known in closed form: the golden-ratio point
gold = (3.0 - math.sqrt(5.0)) / 2.0
sol = solve_qsd_power(resolve_model("two-state"))
print(f"closed form check: nu(1) = (3 - sqrt 5)/2 = {gold:.12f}")
print(f"                   solver nu(1)          = {sol.nu.mass(1):.12f}")
