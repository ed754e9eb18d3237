"""Absorbed Markov jump chains on a countable state space.

States are positive integers; 0 is the reserved absorbing state.  A model
exposes, for every state x, the finite list of jump rates q(x, y) to other
states y >= 1 together with the absorption rate q(x, 0).  The diagonal
q(x, x) = -(sum of off-diagonal rates) is never stored, always derived.

This module also holds the sparse probability vectors used throughout the
package and the plain Gillespie simulation of the chain up to absorption.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import EventCapExceeded, ModelFormatError
from .rng import RngStream, UniformBlock, TAG_EVENTS

# Masses below this are treated as exact zeros when building distributions.
MASS_EPS = 1e-15
# Constructors require total mass 1 within this tolerance.
NORM_TOL = 1e-12


class Distribution:
    """Immutable sparse probability vector on the non-absorbing states.

    Supports must exclude 0, masses are nonnegative, and the total mass is 1
    within 1e-12.  Entries below 1e-15 are dropped at construction so that
    floating noise never creates spurious support.
    """

    __slots__ = ("_states", "_masses", "_cum")

    def __init__(self, masses: Mapping[int, float]):
        items = []
        for x, m in masses.items():
            x = int(x)
            if x <= 0:
                raise ValueError(f"state {x} is not a valid support point (states are >= 1)")
            if m < -MASS_EPS:
                raise ValueError(f"negative mass {m} at state {x}")
            if m > MASS_EPS:
                items.append((x, float(m)))
        items.sort()
        total = math.fsum(m for _, m in items)
        if abs(total - 1.0) > NORM_TOL:
            raise ValueError(f"total mass {total!r} is not 1 within {NORM_TOL}")
        self._states = tuple(x for x, _ in items)
        self._masses = tuple(m for _, m in items)
        self._cum = None

    @classmethod
    def delta(cls, x: int) -> "Distribution":
        return cls({x: 1.0})

    @classmethod
    def uniform(cls, states: Iterable[int]) -> "Distribution":
        states = list(states)
        return cls({x: 1.0 / len(states) for x in states})

    @classmethod
    def from_weights(cls, weights: Mapping[int, float]) -> "Distribution":
        """Normalize nonnegative weights into a distribution."""
        total = math.fsum(w for w in weights.values() if w > MASS_EPS)
        if total <= 0:
            raise ValueError("weights sum to zero")
        return cls({x: w / total for x, w in weights.items() if w > MASS_EPS})

    @property
    def support(self) -> tuple[int, ...]:
        return self._states

    def mass(self, x: int) -> float:
        # support is small; bisect would be noise here
        try:
            return self._masses[self._states.index(x)]
        except ValueError:
            return 0.0

    def items(self):
        """(state, mass) pairs in increasing state order."""
        return zip(self._states, self._masses)

    def as_dict(self) -> dict[int, float]:
        return dict(self.items())

    def as_vector(self, states: Sequence[int]) -> np.ndarray:
        """Dense mass vector over the given state ordering."""
        lookup = dict(self.items())
        return np.array([lookup.get(x, 0.0) for x in states])

    def _cumulative(self) -> np.ndarray:
        if self._cum is None:
            self._cum = np.cumsum(self._masses)
        return self._cum

    def sample(self, u_or_rng) -> int:
        """Draw one state; accepts a uniform in [0, 1) or a Generator."""
        u = u_or_rng if isinstance(u_or_rng, float) else u_or_rng.random()
        idx = int(np.searchsorted(self._cumulative(), u, side="right"))
        idx = min(idx, len(self._states) - 1)
        return self._states[idx]

    def sample_many(self, rng: np.random.Generator, n: int) -> np.ndarray:
        us = rng.random(n)
        idx = np.searchsorted(self._cumulative(), us, side="right")
        idx = np.minimum(idx, len(self._states) - 1)
        return np.array(self._states, dtype=np.int64)[idx]

    def inverse_cdf(self, u: float) -> int:
        """State whose cumulative-mass interval (in state order) contains u."""
        return self.sample(float(u))

    def __eq__(self, other):
        return (
            isinstance(other, Distribution)
            and self._states == other._states
            and self._masses == other._masses
        )

    def __hash__(self):
        return hash((self._states, self._masses))

    def __repr__(self):
        inner = ", ".join(f"{x}: {m:.6g}" for x, m in self.items())
        return f"Distribution({{{inner}}})"


def mean_distribution(dists: Sequence[Distribution]) -> Distribution:
    """Equal-weight average of distributions (itself a distribution)."""
    acc: dict[int, float] = {}
    for d in dists:
        for x, m in d.items():
            acc[x] = acc.get(x, 0.0) + m
    return Distribution.from_weights(acc)


def tv_distance(a: Distribution, b: Distribution) -> float:
    """Total variation distance (half the L1 difference over the joint support)."""
    states = set(a.support) | set(b.support)
    return 0.5 * math.fsum(abs(a.mass(x) - b.mass(x)) for x in states)


class AbsorbedChainModel:
    """Rate matrix of an absorbed chain, exposed as per-state transition lists.

    Parameters
    ----------
    transitions_fn : callable
        Maps a state x >= 1 to a finite sequence of (y, rate) pairs with
        y >= 1, y != x and rate >= 0.
    absorb_fn : callable
        Maps x to the absorption rate q(x, 0) >= 0.
    states : sequence of int, optional
        The full state set for finite models; None for lazily enumerated
        (countably infinite) models.
    c0, qbar, column_bound : float, optional
        Declared bounds sup q(x, 0), sup of total off-diagonal out-rate and
        sup of column sums (inflow).  ``math.inf`` marks an explicitly
        unbounded quantity; None means undeclared.
    """

    def __init__(
        self,
        transitions_fn: Callable[[int], Sequence[tuple[int, float]]],
        absorb_fn: Callable[[int], float],
        states: Sequence[int] | None = None,
        c0: float | None = None,
        qbar: float | None = None,
        column_bound: float | None = None,
        name: str = "",
    ):
        self._transitions_fn = transitions_fn
        self._absorb_fn = absorb_fn
        self.states = tuple(sorted(int(s) for s in states)) if states is not None else None
        self.c0 = c0
        self.qbar = qbar
        self.column_bound = column_bound
        self.name = name
        self._trans_cache: dict[int, tuple[tuple[int, float], ...]] = {}
        self._absorb_cache: dict[int, float] = {}
        self._jump_cache: dict[int, tuple[np.ndarray, np.ndarray, float]] = {}

    # -- basic access -----------------------------------------------------

    @property
    def is_finite(self) -> bool:
        return self.states is not None

    def transitions(self, x: int) -> tuple[tuple[int, float], ...]:
        """Jump rates out of x into other live states, cached per state."""
        got = self._trans_cache.get(x)
        if got is None:
            if x <= 0:
                raise ValueError("state 0 is absorbing; it has no outgoing transitions")
            got = tuple(
                (int(y), float(r)) for y, r in self._transitions_fn(x) if r != 0.0
            )
            self._trans_cache[x] = got
        return got

    def absorb_rate(self, x: int) -> float:
        got = self._absorb_cache.get(x)
        if got is None:
            got = float(self._absorb_fn(x))
            self._absorb_cache[x] = got
        return got

    def total_rate(self, x: int) -> float:
        return self.jump_table(x)[2]

    def jump_table(self, x: int) -> tuple[tuple[int, ...], tuple[float, ...], float]:
        """(targets, cumulative rates, total rate) with absorption first.

        The first target is 0 when q(x, 0) > 0; the remaining targets follow
        the transition list order.  Used for categorical jump draws; plain
        tuples keep per-event lookups cheap.
        """
        got = self._jump_cache.get(x)
        if got is None:
            targets = []
            cum = []
            running = 0.0
            a = self.absorb_rate(x)
            if a > 0:
                targets.append(0)
                running += a
                cum.append(running)
            for y, r in self.transitions(x):
                targets.append(y)
                running += r
                cum.append(running)
            got = (tuple(targets), tuple(cum), running)
            self._jump_cache[x] = got
        return got

    def sample_jump(self, x: int, u: float) -> int:
        """Jump target from x given a uniform u in [0, 1); 0 means absorption."""
        targets, cum, total = self.jump_table(x)
        if total <= 0.0:
            raise EventCapExceeded(f"state {x} has total rate 0; the chain is stuck")
        idx = bisect_right(cum, u * total)
        if idx >= len(targets):
            idx = len(targets) - 1
        return targets[idx]

    # -- derived views ----------------------------------------------------

    def state_window(self, K: int) -> tuple[int, ...]:
        """States covered by a truncation at K (ids <= K)."""
        if self.is_finite:
            return tuple(x for x in self.states if x <= K)
        return tuple(range(1, K + 1))

    def restricted(self, K: int) -> "AbsorbedChainModel":
        """Finite truncation: transitions leaving the window are dropped.

        Dropping (rather than redirecting) keeps the restricted generator
        substochastic, so the principal-eigenvector problem stays well posed.
        """
        window = self.state_window(K)
        wset = set(window)
        trans = {
            x: tuple((y, r) for y, r in self.transitions(x) if y in wset) for x in window
        }
        absorb = {x: self.absorb_rate(x) for x in window}
        model = AbsorbedChainModel(
            lambda x: trans[x],
            lambda x: absorb[x],
            states=window,
            name=f"{self.name}|K={K}" if self.name else f"K={K}",
        )
        model.c0, model.qbar, model.column_bound = exact_bounds(model)
        return model

    def max_total_rate(self, states: Iterable[int]) -> float:
        return max(self.total_rate(x) for x in states)

    def __repr__(self):
        size = len(self.states) if self.is_finite else "inf"
        return f"AbsorbedChainModel(name={self.name!r}, states={size})"


def exact_bounds(model: AbsorbedChainModel) -> tuple[float, float, float]:
    """(C0, qbar, column bound) computed exactly on a finite model.

    The column bound is the largest inflow sum over columns of the live
    block plus the absorption column: max over x in states of
    sum_y q(y, x), and sum_y q(y, 0) for the absorption column.
    """
    if not model.is_finite:
        raise ValueError("exact bounds require a finite model")
    c0 = max((model.absorb_rate(x) for x in model.states), default=0.0)
    qbar = max(
        (math.fsum(r for _, r in model.transitions(x)) for x in model.states),
        default=0.0,
    )
    col: dict[int, float] = {0: 0.0}
    for x in model.states:
        col.setdefault(x, 0.0)
    for x in model.states:
        col[0] += model.absorb_rate(x)
        for y, r in model.transitions(x):
            col[y] = col.get(y, 0.0) + r
    return c0, qbar, max(col.values())


def validate_model(model: AbsorbedChainModel, states: Iterable[int]) -> list[str]:
    """Check standing assumptions on the given states; violations are data.

    Verifies nonnegative rates, absence of listed self-loops, and that any
    declared C0 / qbar / column bound actually holds on ``states``.
    """
    states = sorted(set(int(s) for s in states))
    problems: list[str] = []
    inflow: dict[int, float] = {0: 0.0}
    for x in states:
        a = model.absorb_rate(x)
        if a < 0:
            problems.append(f"negative absorption rate at state {x}")
        out = 0.0
        for y, r in model.transitions(x):
            if r < 0:
                problems.append(f"negative rate on transition {x} -> {y}")
            if y == x:
                problems.append(f"self-loop listed at state {x}")
            out += r
            inflow[y] = inflow.get(y, 0.0) + r
        inflow[0] += max(a, 0.0)
        if model.c0 is not None and a > model.c0:
            problems.append(f"C0 exceeded at state {x}")
        if model.qbar is not None and out > model.qbar * (1 + 1e-12):
            problems.append(f"qbar exceeded at state {x}")
    if model.column_bound is not None:
        for y, total in sorted(inflow.items()):
            if total > model.column_bound * (1 + 1e-12):
                problems.append(f"column bound exceeded at state {y}")
    return problems


@dataclass(frozen=True)
class AbsorptionSample:
    """Absorption time and the last live state visited before absorbing."""

    tau: float
    exit_state: int


DEFAULT_EVENT_CAP = 10**7


def simulate_until_absorption(
    model: AbsorbedChainModel,
    start: Distribution,
    rng: RngStream,
    event_cap: int = DEFAULT_EVENT_CAP,
) -> AbsorptionSample:
    """Gillespie simulation of the raw chain until the absorbing jump.

    Exact event-driven simulation: exponential holding times at the total
    rate, categorical jump draws.  Raises :class:`EventCapExceeded` after
    ``event_cap`` jumps, which signals a practically non-absorbing input.
    """
    if event_cap <= 0:
        raise ValueError("event_cap must be positive")
    blocks = UniformBlock(rng.child(TAG_EVENTS).generator(), size=1 << 10)
    x = start.sample(blocks.u())
    t = 0.0
    for _ in range(event_cap):
        total = model.total_rate(x)
        if total <= 0.0:
            raise EventCapExceeded(f"state {x} has total rate 0; absorption is impossible")
        t += blocks.exp(total)
        y = model.sample_jump(x, blocks.u())
        if y == 0:
            return AbsorptionSample(tau=t, exit_state=x)
        x = y
    raise EventCapExceeded(f"no absorption within {event_cap} events")


# -- model files ----------------------------------------------------------

MODEL_HEADER = "qsdmodel v1"


def read_model_file(path) -> AbsorbedChainModel:
    """Parse the line-oriented model format.

    Header line ``qsdmodel v1``; one ``x y rate`` triple per line with y = 0
    meaning absorption; ``#`` starts a comment.  Negative rates, duplicate
    (x, y) pairs and self-loops are rejected.
    """
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    body = [ln.split("#", 1)[0].strip() for ln in lines]
    body = [(i + 1, ln) for i, ln in enumerate(body) if ln]
    if not body or body[0][1] != MODEL_HEADER:
        raise ModelFormatError(f"missing '{MODEL_HEADER}' header line")
    rates: dict[tuple[int, int], float] = {}
    for lineno, ln in body[1:]:
        parts = ln.split()
        if len(parts) != 3:
            raise ModelFormatError(f"line {lineno}: expected 'x y rate'")
        try:
            x, y = int(parts[0]), int(parts[1])
            rate = float(parts[2])
        except ValueError as exc:
            raise ModelFormatError(f"line {lineno}: {exc}") from None
        if x <= 0 or y < 0:
            raise ModelFormatError(f"line {lineno}: states must be x >= 1, y >= 0")
        if x == y:
            raise ModelFormatError(f"line {lineno}: self-loop at state {x}")
        if rate < 0:
            raise ModelFormatError(f"line {lineno}: negative rate {rate}")
        if (x, y) in rates:
            raise ModelFormatError(f"line {lineno}: duplicate pair ({x}, {y})")
        rates[(x, y)] = rate
    from .models import build_finite  # deferred; models builds on this module

    return build_finite(rates)


def write_model_file(path, model: AbsorbedChainModel) -> None:
    if not model.is_finite:
        raise ValueError("only finite models can be written to a file")
    lines = [MODEL_HEADER]
    for x in model.states:
        a = model.absorb_rate(x)
        if a > 0:
            lines.append(f"{x} 0 {a!r}")
        for y, r in model.transitions(x):
            lines.append(f"{x} {y} {r!r}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
