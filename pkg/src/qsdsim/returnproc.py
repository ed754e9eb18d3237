"""The return process, its fixed-point map, and the tagged-particle coupling.

A chain that re-enters the live states with law mu whenever it absorbs has
effective rates q(x, y) + q(x, 0) mu(y).  Its invariant law defines the map
Phi(mu); QSDs are exactly the fixed points of Phi, which makes both the
direct iteration and the time-inhomogeneous "tagged particle" limit process
(return law T_t mu) useful simulation routes.

The second half of the module realizes the Fleming-Viot system from marked
Poisson streams (internal jumps plus voter/revival events per particle) and
couples particle 1 with the limit process on the same marks, tracking the
indicator that the two trajectories have split.
"""

from __future__ import annotations

import heapq
import math
from bisect import bisect_right
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .chain import AbsorbedChainModel, Distribution
from .conditioned import ConditionedPath, evolve_conditioned
from .errors import EventCapExceeded, NotIrreducible, PathTooShort
from .fv import FvTrace, ParticleConfig
from .rng import RngStream, UniformBlock, TAG_EVENTS, TAG_INIT, TAG_INTERNAL, TAG_VOTER

MU_RETURN_EVENT_CAP = 10**8


class ReturnRates:
    """Effective rates of the chain that re-enters with law mu on absorption."""

    def __init__(self, model: AbsorbedChainModel, mu: Distribution):
        self.model = model
        self.mu = mu

    def rate(self, x: int, y: int) -> float:
        if x == y:
            raise ValueError("diagonal entries are derived, not stored")
        base = dict(self.model.transitions(x)).get(y, 0.0)
        return base + self.model.absorb_rate(x) * self.mu.mass(y)

    def matrix(self, states) -> np.ndarray:
        """Dense generator of the return chain on the given states.

        The self-return mass q(x, 0) mu(x) is a null event and is left out,
        so rows sum to zero exactly.
        """
        states = list(states)
        index = {x: i for i, x in enumerate(states)}
        n = len(states)
        gen = np.zeros((n, n))
        for x in states:
            i = index[x]
            a = self.model.absorb_rate(x)
            for y, r in self.model.transitions(x):
                gen[i, index[y]] += r
            if a > 0:
                for y, m in self.mu.items():
                    if y != x:
                        gen[i, index[y]] += a * m
            gen[i, i] = -gen[i].sum()
        return gen


class TimeDepReturnRates:
    """Rates of the limit process: the return law at time t is the conditioned law.

    Where the supplied path is constant and equal to a QSD, these rates are
    time-independent and coincide with :class:`ReturnRates` of that QSD.
    """

    def __init__(self, model: AbsorbedChainModel, path: ConditionedPath):
        self.model = model
        self.path = path

    def rate(self, t: float, x: int, y: int) -> float:
        if x == y:
            raise ValueError("diagonal entries are derived, not stored")
        base = dict(self.model.transitions(x)).get(y, 0.0)
        vec = self.path.vector_at(t)
        mass = 0.0
        for state, m in zip(self.path.states, vec):
            if state == y:
                mass = float(m)
                break
        return base + self.model.absorb_rate(x) * mass


@dataclass
class OccupationResult:
    """Time-weighted occupation of one return-process trajectory."""

    occupation: Distribution
    events: int
    returns: int
    horizon: float


def simulate_mu_return(
    model: AbsorbedChainModel,
    mu: Distribution,
    horizon: float,
    rng: RngStream,
    event_cap: int = MU_RETURN_EVENT_CAP,
) -> OccupationResult:
    """Simulate the return chain and accumulate its occupation measure.

    Base Gillespie dynamics; an absorbing jump instantaneously re-draws the
    position from mu (landing on the current state is a null event).  The
    occupation measure over [0, horizon] estimates Phi(mu) for long runs.
    """
    blocks = UniformBlock(rng.child(TAG_EVENTS).generator())
    x = mu.sample(blocks.u())
    t = 0.0
    events = 0
    returns = 0
    acc: dict[int, float] = {}
    while True:
        total = model.total_rate(x)
        if total <= 0.0:
            raise EventCapExceeded(f"state {x} has total rate 0")
        dt = blocks.exp(total)
        if t + dt >= horizon:
            acc[x] = acc.get(x, 0.0) + (horizon - t)
            break
        acc[x] = acc.get(x, 0.0) + dt
        t += dt
        y = model.sample_jump(x, blocks.u())
        if y == 0:
            y = mu.sample(blocks.u())
            returns += 1
        x = y
        events += 1
        if events > event_cap:
            raise EventCapExceeded(f"more than {event_cap} events before t={horizon}")
    return OccupationResult(Distribution.from_weights(acc), events, returns, horizon)


PHI_DENSE_LIMIT = 10_000


def phi_map(
    model: AbsorbedChainModel,
    mu: Distribution,
    sim_horizon: float = 1e5,
    rng: RngStream | None = None,
) -> Distribution:
    """Invariant distribution of the mu-return chain.

    Solved exactly from the stationarity equations (sparse direct solve) on
    finite spaces up to 1e4 states; beyond that the occupation measure of a
    long simulated trajectory is used instead.
    """
    if not model.is_finite:
        raise ValueError("phi_map needs a finite model; truncate first")
    states = model.states
    if len(states) > PHI_DENSE_LIMIT:
        return simulate_mu_return(
            model, mu, sim_horizon, rng if rng is not None else RngStream(0)
        ).occupation
    _check_return_irreducible(model, mu)
    n = len(states)
    index = {x: i for i, x in enumerate(states)}
    rows, cols, vals = [], [], []

    def add(i, j, v):
        rows.append(i)
        cols.append(j)
        vals.append(v)

    diag = [0.0] * n
    for x in states:
        i = index[x]
        a = model.absorb_rate(x)
        for y, r in model.transitions(x):
            add(index[y], i, r)  # transposed: stationarity reads pi Q = 0
            diag[i] -= r
        if a > 0:
            for y, m in mu.items():
                if y != x:
                    add(index[y], i, a * m)
                    diag[i] -= a * m
    for i in range(n):
        add(i, i, diag[i])
    # replace the last equation by the normalization sum(pi) = 1
    mat = sp.lil_matrix(sp.csr_matrix((vals, (rows, cols)), shape=(n, n)))
    mat[n - 1, :] = 1.0
    rhs = np.zeros(n)
    rhs[n - 1] = 1.0
    if n <= 200:
        pi = np.linalg.solve(mat.toarray(), rhs)
    else:
        pi = spla.spsolve(sp.csr_matrix(mat), rhs)
    return Distribution.from_weights({x: max(pi[index[x]], 0.0) for x in states})


def _check_return_irreducible(model: AbsorbedChainModel, mu: Distribution) -> None:
    states = model.states
    sset = set(states)
    fwd = {x: [y for y, r in model.transitions(x) if r > 0] for x in states}
    for x in states:
        if model.absorb_rate(x) > 0:
            fwd[x] = sorted(set(fwd[x]) | (set(mu.support) - {x}))
    bwd: dict[int, list[int]] = {x: [] for x in states}
    for x, ys in fwd.items():
        for y in ys:
            bwd[y].append(x)
    seen_f = _walk(fwd, states[0])
    seen_b = _walk(bwd, states[0])
    if seen_f != sset or seen_b != sset:
        raise NotIrreducible("the return chain is not strongly connected for this mu")


def _walk(adj, start):
    seen = {start}
    stack = [start]
    while stack:
        x = stack.pop()
        for y in adj.get(x, ()):
            if y not in seen:
                seen.add(y)
                stack.append(y)
    return seen


@dataclass
class PhiIterationResult:
    """Iterates of the return-map fixed-point search."""

    dist: Distribution
    tv_log: list[float]
    converged: bool
    iterations: int


def phi_iterate(
    model: AbsorbedChainModel,
    mu0: Distribution,
    max_iters: int = 200,
    tol: float = 1e-10,
) -> PhiIterationResult:
    """Iterate mu -> Phi(mu) until successive iterates agree in TV.

    Exhausting ``max_iters`` is reported through ``converged=False`` rather
    than an exception; the TV log is the useful diagnostic either way.
    """
    from .chain import tv_distance

    mu = mu0
    log: list[float] = []
    for k in range(1, max_iters + 1):
        nxt = phi_map(model, mu)
        gap = tv_distance(nxt, mu)
        log.append(gap)
        mu = nxt
        if gap < tol:
            return PhiIterationResult(mu, log, True, k)
    return PhiIterationResult(mu, log, False, max_iters)


# -- the time-inhomogeneous limit process ----------------------------------


@dataclass
class Trajectory:
    """Piecewise-constant path: states[i] holds on [times[i], times[i+1])."""

    times: list[float]
    states: list[int]

    def state_at(self, t: float) -> int:
        idx = bisect_right(self.times, t) - 1
        return self.states[max(idx, 0)]

    @property
    def final(self) -> int:
        return self.states[-1]


def simulate_tagged_limit(
    model: AbsorbedChainModel,
    path: ConditionedPath,
    y0: int,
    rng: RngStream,
    horizon: float | None = None,
    event_cap: int = MU_RETURN_EVENT_CAP,
) -> Trajectory:
    """Simulate the limit process of the tagged particle.

    Same driving jumps as the base chain; an absorption attempt at time t
    re-draws the position from the conditioned law at t (interpolated on the
    path grid).  The total event rate at x is the constant r(x) because the
    return law is a probability, so no thinning is needed.
    """
    horizon = path.horizon if horizon is None else horizon
    if horizon > path.horizon + 1e-12:
        raise PathTooShort(f"path covers [0, {path.horizon}], requested {horizon}")
    blocks = UniformBlock(rng.child(TAG_EVENTS).generator())
    t = 0.0
    x = y0
    times = [0.0]
    states = [x]
    events = 0
    while True:
        total = model.total_rate(x)
        if total <= 0.0:
            raise EventCapExceeded(f"state {x} has total rate 0")
        t_next = t + blocks.exp(total)
        if t_next >= horizon:
            break
        t = t_next
        y = model.sample_jump(x, blocks.u())
        if y == 0:
            y = path.inverse_cdf_at(t, blocks.u())
        if y != x:
            times.append(t)
            states.append(y)
            x = y
        events += 1
        if events > event_cap:
            raise EventCapExceeded(f"more than {event_cap} events before t={horizon}")
    return Trajectory(times, states)


# -- graphical construction and the coupling --------------------------------


class MarkStream:
    """Lazily realized internal and voter marks for one particle.

    The internal Poisson process (intensity qbar) carries a uniform mark; the
    voter process (intensity C0) carries a uniform pair (b, v).  Event times
    are strictly increasing within each stream and marks are independent of
    the times, so realizations can be extended on demand.

    ``source`` is either an RngStream (standalone use: the particle gets its
    own independent generators) or a shared :class:`UniformBlock`; drawing
    lazily from a shared block yields the same joint law at a fraction of
    the setup cost when thousands of replicas each need N streams.
    """

    __slots__ = ("qbar", "c0", "_internal", "_voter", "t_internal", "t_voter")

    def __init__(self, qbar: float, c0: float, source):
        if not (math.isfinite(qbar) and math.isfinite(c0)):
            raise ValueError("the graphical construction needs finite qbar and C0")
        self.qbar = qbar
        self.c0 = c0
        if isinstance(source, RngStream):
            self._internal = UniformBlock(source.child(TAG_INTERNAL).generator(), size=64)
            self._voter = UniformBlock(source.child(TAG_VOTER).generator(), size=64)
        else:
            self._internal = source
            self._voter = source
        self.t_internal = self._internal.exp(qbar) if qbar > 0 else math.inf
        self.t_voter = self._voter.exp(c0) if c0 > 0 else math.inf

    def pop_internal(self) -> float:
        """Uniform mark of the pending internal event; schedules the next one."""
        u = self._internal.u()
        self.t_internal += self._internal.exp(self.qbar)
        return u

    def pop_voter(self) -> tuple[float, float]:
        """(b, v) mark of the pending voter event; schedules the next one."""
        b = self._voter.u()
        v = self._voter.u()
        self.t_voter += self._voter.exp(self.c0)
        return b, v


def _internal_partition(model: AbsorbedChainModel, qbar: float):
    """Per-state inverse cdf over [0, 1): jump targets in state order, hold last.

    Interval widths are q(x, y)/qbar; the remainder is the holding interval.
    Both coupled processes use the same fixed partition, which is what makes
    internal events preserve coincidence of trajectories.
    """
    cache: dict[int, tuple[tuple[float, ...], tuple[int, ...]]] = {}

    def lookup(x: int):
        got = cache.get(x)
        if got is None:
            cum = []
            targets = []
            running = 0.0
            for y, r in sorted(model.transitions(x)):
                running += r / qbar
                cum.append(running)
                targets.append(y)
            cum.append(1.0)
            targets.append(x)  # holding interval
            got = (tuple(cum), tuple(targets))
            cache[x] = got
        return got

    def draw(x: int, u: float) -> int:
        cum, targets = lookup(x)
        idx = bisect_right(cum, u)
        if idx >= len(targets):
            idx = len(targets) - 1
        return targets[idx]

    return draw


def _voter_target_others(cfg: ParticleConfig, i: int, v: float) -> int:
    """Inverse cdf of the empirical law of the other N - 1 particles at v.

    Intervals are consecutive in increasing state order, matching the
    interval construction used by the limit process.
    """
    x_i = cfg.positions[i]
    target = v * (cfg.N - 1)
    for y in sorted(cfg.occupancy):
        c = cfg.occupancy[y] - (1 if y == x_i else 0)
        if c <= 0:
            continue
        if target < c:
            return y
        target -= c
    return max(y for y, c in cfg.occupancy.items() if c - (1 if y == x_i else 0) > 0)


@dataclass
class CouplingIndicator:
    """First time the coupled trajectories split; monotone indicator psi."""

    diverged: bool
    divergence_time: float | None = None

    def psi(self, t: float) -> int:
        return 1 if self.diverged and t >= self.divergence_time else 0


@dataclass
class CoupledRun:
    """One replica of the coupled FV / limit-process construction."""

    trace: FvTrace
    tagged: Trajectory
    limit: Trajectory
    coupling: CouplingIndicator
    meta: dict = field(default_factory=dict)


def _graphical_engine(
    model: AbsorbedChainModel,
    n: int,
    mu: Distribution,
    horizon: float,
    rng: RngStream,
    grid,
    path: ConditionedPath | None,
    event_cap: int,
):
    """Shared driver: FV from marked streams, optionally coupled with the limit."""
    qbar = model.qbar
    c0 = model.c0
    if qbar is None or c0 is None or not (math.isfinite(qbar) and math.isfinite(c0)):
        raise ValueError(
            "the graphical construction needs declared finite qbar and C0"
            " (position-dependent unbounded rates are not supported here)"
        )
    couple = path is not None
    if couple and horizon > path.horizon + 1e-12:
        raise PathTooShort(f"path covers [0, {path.horizon}], requested {horizon}")

    # shared initial draw for particle 1 and the limit process
    init_blocks = UniformBlock(rng.child(TAG_INIT).generator())
    u_shared = init_blocks.u()
    first = mu.inverse_cdf(u_shared)
    positions = [first] + [mu.sample(init_blocks.u()) for _ in range(n - 1)]
    cfg = ParticleConfig(model, positions)

    shared = UniformBlock(rng.child(TAG_EVENTS).generator())
    streams = [MarkStream(qbar, c0, shared) for i in range(n)]
    heap = []
    for i, ms in enumerate(streams):
        heapq.heappush(heap, (ms.t_internal, i, 0))
        heapq.heappush(heap, (ms.t_voter, i, 1))

    internal_draw = _internal_partition(model, qbar)

    y = first
    y_times = [0.0]
    y_states = [first]
    tagged_times = [0.0]
    tagged_states = [first]
    coupled = True
    divergence_time = None

    grid = np.atleast_1d(np.asarray(grid, dtype=float)) if grid is not None else np.array([horizon])
    gi = 0
    times = []
    measures = []
    events = 0
    revivals = 0

    while heap:
        t_ev, i, kind = heapq.heappop(heap)
        while gi < len(grid) and grid[gi] <= min(t_ev, horizon):
            times.append(grid[gi])
            measures.append(cfg.empirical())
            gi += 1
        if t_ev > horizon:
            break
        ms = streams[i]
        x = cfg.positions[i]
        if kind == 0:
            u = ms.pop_internal()
            heapq.heappush(heap, (ms.t_internal, i, 0))
            target = internal_draw(x, u)
            if target != x:
                cfg.move(i, target)
                if i == 0:
                    tagged_times.append(t_ev)
                    tagged_states.append(target)
            if couple and i == 0:
                y_target = internal_draw(y, u)
                if y_target != y:
                    y = y_target
                    y_times.append(t_ev)
                    y_states.append(y)
        else:
            b, v = ms.pop_voter()
            heapq.heappush(heap, (ms.t_voter, i, 1))
            if b <= model.absorb_rate(x) / c0:
                target = _voter_target_others(cfg, i, v)
                revivals += 1
                if target != x:
                    cfg.move(i, target)
                    if i == 0:
                        tagged_times.append(t_ev)
                        tagged_states.append(target)
                else:
                    target = x
            else:
                target = x
            if couple and i == 0:
                if b <= model.absorb_rate(y) / c0:
                    y_target = path.inverse_cdf_at(t_ev, v)
                    if coupled and y_target != cfg.positions[0]:
                        coupled = False
                        divergence_time = t_ev
                    if y_target != y:
                        y = y_target
                        y_times.append(t_ev)
                        y_states.append(y)
                elif coupled and target != x:
                    # accepted for the particle, rejected for the limit: only
                    # possible after divergence, asserted by monotonicity
                    coupled = False
                    divergence_time = t_ev
        events += 1
        if events > event_cap:
            raise EventCapExceeded(f"more than {event_cap} marks before t={horizon}")

    while gi < len(grid):
        times.append(grid[gi])
        measures.append(cfg.empirical())
        gi += 1

    trace = FvTrace(
        times=np.array(times),
        measures=measures,
        events=events,
        revivals=revivals,
        final=cfg,
    )
    tagged = Trajectory(tagged_times, tagged_states)
    limit = Trajectory(y_times, y_states)
    indicator = CouplingIndicator(not coupled, divergence_time)
    return trace, tagged, limit, indicator


def fv_run_graphical(
    model: AbsorbedChainModel,
    n: int,
    mu: Distribution,
    horizon: float,
    grid,
    rng: RngStream,
    event_cap: int = MU_RETURN_EVENT_CAP,
) -> FvTrace:
    """Fleming-Viot run realized from marked Poisson streams.

    Generates the same law as the Gillespie kernel; exists so the two event
    constructions can be tested against each other.
    """
    trace, _, _, _ = _graphical_engine(model, n, mu, horizon, rng, grid, None, event_cap)
    return trace


def coupled_tagged_run(
    model: AbsorbedChainModel,
    n: int,
    mu: Distribution,
    horizon: float,
    rng: RngStream,
    path: ConditionedPath | None = None,
    grid=None,
    path_step: float | None = None,
    truncation: int | None = None,
    event_cap: int = MU_RETURN_EVENT_CAP,
) -> CoupledRun:
    """Couple FV particle 1 with the limit process on shared marks.

    Both processes read the same internal and voter marks; revival targets
    come from state-ordered interval partitions (the empirical law of the
    other particles for the particle, the conditioned law for the limit), so
    the trajectories coincide until a voter mark falls outside the overlap.
    The returned indicator records the first divergence time.
    """
    if path is None:
        if truncation is None:
            if not model.is_finite:
                raise ValueError("an infinite model needs an explicit truncation")
            truncation = max(model.states)
        maxrate = model.max_total_rate(model.state_window(truncation))
        step = path_step if path_step is not None else min(1e-3, 0.1 / maxrate)
        path = evolve_conditioned(model, mu, horizon, step, truncation)
    trace, tagged, limit, indicator = _graphical_engine(
        model, n, mu, horizon, rng, grid, path, event_cap
    )
    meta = {"certified": False}  # equilibrium FV convergence is model-dependent
    return CoupledRun(trace, tagged, limit, indicator, meta)
