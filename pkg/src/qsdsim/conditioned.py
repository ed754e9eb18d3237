"""Deterministic integration of the evolution conditioned on survival.

The law of the chain at time t conditioned on not yet being absorbed solves
a nonlinear forward system: the usual linear Kolmogorov term plus a
quadratic term that re-injects the killed flux proportionally to the current
law.  A QSD is exactly a stationary point of that system, so the same module
also evaluates the fixed-point residual and the absorption rate theta of a
candidate distribution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .chain import AbsorbedChainModel, Distribution
from .errors import StepUnstable, TruncationLeak

# Negative mass below this magnitude is clipped as roundoff; anything worse
# means the step size is unstable for the given rates.
NEG_TOL = 1e-8
LEAK_TOL = 1e-6


class ConditionedPath:
    """Conditioned law on a fixed truncation window, sampled on a time grid."""

    def __init__(self, times: np.ndarray, states: tuple[int, ...], masses: np.ndarray, meta=None):
        self.times = np.asarray(times, dtype=float)
        self.states = states
        self.masses = np.asarray(masses, dtype=float)
        self.meta = dict(meta or {})
        if (np.diff(self.times) <= 0).any():
            raise ValueError("time grid must be strictly increasing")
        if self.masses.shape != (len(self.times), len(states)):
            raise ValueError("masses must be (len(times), len(states))")

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    @property
    def final(self) -> Distribution:
        return self.distribution_at(self.horizon)

    def vector_at(self, t: float) -> np.ndarray:
        """Mass vector at time t, linearly interpolated on the grid."""
        if t < self.times[0] - 1e-12 or t > self.horizon + 1e-12:
            raise ValueError(f"time {t} outside the path range [0, {self.horizon}]")
        t = min(max(t, self.times[0]), self.horizon)
        j = int(np.searchsorted(self.times, t, side="right"))
        if j >= len(self.times):
            return self.masses[-1]
        if j == 0:
            return self.masses[0]
        t0, t1 = self.times[j - 1], self.times[j]
        w = (t - t0) / (t1 - t0)
        return (1.0 - w) * self.masses[j - 1] + w * self.masses[j]

    def distribution_at(self, t: float) -> Distribution:
        v = self.vector_at(t)
        return Distribution.from_weights({x: m for x, m in zip(self.states, v)})

    def inverse_cdf_at(self, t: float, u: float) -> int:
        """State whose cumulative-mass interval (in state order) contains u.

        Equivalent to ``distribution_at(t).inverse_cdf(u)`` without building
        the distribution; used by event loops that draw return states.
        """
        v = self.vector_at(t)
        target = u * v.sum()
        acc = 0.0
        for x, m in zip(self.states, v):
            acc += m
            if target < acc:
                return x
        return self.states[-1]


def _window_operator(model: AbsorbedChainModel, states):
    """(transpose generator, absorption-rate vector, boundary index set)."""
    index = {x: i for i, x in enumerate(states)}
    n = len(states)
    rows, cols, vals = [], [], []
    boundary = set()
    for x in states:
        i = index[x]
        total = model.absorb_rate(x)
        for y, r in model.transitions(x):
            total += r
            j = index.get(y)
            if j is None:
                boundary.add(x)  # transition dropped by the truncation
                continue
            rows.append(j)
            cols.append(i)
            vals.append(r)
        rows.append(i)
        cols.append(i)
        vals.append(-total)
    qt = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    absorb = np.array([model.absorb_rate(x) for x in states])
    # one step back from the boundary counts as "near" it
    near = set(boundary)
    for x in states:
        for y, _ in model.transitions(x):
            if y in boundary:
                near.add(x)
                break
    near_idx = np.array(sorted(index[x] for x in near), dtype=int)
    if n <= 400:
        qt = qt.toarray()
    return qt, absorb, near_idx


def _rhs(qt, absorb, u):
    return qt @ u + (absorb @ u) * u


def evolve_conditioned(
    model: AbsorbedChainModel,
    mu: Distribution,
    horizon: float,
    step: float,
    truncation: int,
    grid_dt: float | None = None,
) -> ConditionedPath:
    """Integrate the conditioned law from mu over [0, horizon] with RK4.

    Fixed-step classical RK4 with a per-step renormalization; the nonlinear
    system preserves total mass analytically, so the recorded renormalization
    magnitudes double as an integration-quality diagnostic.  A Richardson
    half-step estimate is refreshed periodically and stored in ``meta``.

    Raises :class:`TruncationLeak` when mass within one step of the cut
    boundary exceeds 1e-6, and :class:`StepUnstable` when a component drops
    below -1e-8 before clipping.
    """
    if step <= 0 or horizon <= 0:
        raise ValueError("horizon and step must be positive")
    states = model.state_window(truncation)
    if not set(mu.support) <= set(states):
        raise ValueError("truncation window does not cover the initial support")
    maxrate = model.max_total_rate(states)
    if maxrate > 0 and step > 0.1 / maxrate + 1e-15:
        raise ValueError(f"step {step} exceeds 0.1/max rate = {0.1 / maxrate:g}")
    qt, absorb, near_idx = _window_operator(model, states)

    n_steps = max(1, int(math.ceil(horizon / step - 1e-9)))
    h = horizon / n_steps
    record_every = 1
    if grid_dt is not None:
        record_every = max(1, int(round(grid_dt / h)))

    u = mu.as_vector(states)
    times = [0.0]
    snaps = [u.copy()]
    renorms = []
    richardson = 0.0

    def rk4(v, hh):
        k1 = _rhs(qt, absorb, v)
        k2 = _rhs(qt, absorb, v + 0.5 * hh * k1)
        k3 = _rhs(qt, absorb, v + 0.5 * hh * k2)
        k4 = _rhs(qt, absorb, v + hh * k3)
        return v + (hh / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    for k in range(1, n_steps + 1):
        nxt = rk4(u, h)
        if k == 1 or k % 100 == 0:
            halves = rk4(rk4(u, 0.5 * h), 0.5 * h)
            richardson = max(richardson, float(np.abs(halves - nxt).max()) / 15.0)
        low = float(nxt.min())
        if low < -NEG_TOL:
            raise StepUnstable(f"mass {low} at t={k * h:g}; reduce the step size")
        np.clip(nxt, 0.0, None, out=nxt)
        total = float(nxt.sum())
        renorms.append(abs(total - 1.0))
        nxt /= total
        if len(near_idx) and float(nxt[near_idx].sum()) > LEAK_TOL:
            raise TruncationLeak(
                f"mass {nxt[near_idx].sum():.3g} near the truncation boundary at t={k * h:g};"
                " increase the truncation"
            )
        u = nxt
        if k % record_every == 0 or k == n_steps:
            times.append(k * h)
            snaps.append(u.copy())

    meta = {
        "renorm_max": max(renorms) if renorms else 0.0,
        "richardson_max": richardson,
        "step": h,
        "truncation": truncation,
    }
    return ConditionedPath(np.array(times), states, np.array(snaps), meta)


@dataclass
class ResidualVector:
    """Fixed-point defect of a candidate distribution, per state."""

    values: dict[int, float] = field(default_factory=dict)

    @property
    def sup_norm(self) -> float:
        return max((abs(v) for v in self.values.values()), default=0.0)


def theta_of(model: AbsorbedChainModel, nu: Distribution) -> float:
    """Absorption rate under nu: sum of nu(x) q(x, 0).

    When nu is a QSD this is the rate of the exponential absorption-time law.
    """
    return math.fsum(nu.mass(x) * model.absorb_rate(x) for x in nu.support)


def qsd_residual(model: AbsorbedChainModel, mu: Distribution) -> ResidualVector:
    """Stationarity defect r(x) = (mu Q)(x) + theta_mu * mu(x).

    Evaluated on the support and its one-step neighborhood; identically zero
    exactly when mu is a QSD.
    """
    theta = theta_of(model, mu)
    targets = set(mu.support)
    for x in mu.support:
        targets.update(y for y, _ in model.transitions(x))
    acc = {x: theta * mu.mass(x) for x in sorted(targets)}
    for x in mu.support:
        m = mu.mass(x)
        total = model.absorb_rate(x)
        for y, r in model.transitions(x):
            total += r
            acc[y] += m * r
        acc[x] -= m * total
    return ResidualVector(acc)
