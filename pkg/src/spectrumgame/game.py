"""The multi-channel spectrum-access game.

Each cell n picks a set of load[n] distinct channels out of M. A cell's
experienced interference is the number of (own channel, neighbor channel)
coincidences summed over its graph neighbors; its utility is the negation.
The game is an exact potential game: minus half the aggregate interference
changes by exactly the deviating player's utility change under any
unilateral deviation, so best-response dynamics climb a global function.

All interference arithmetic is exact integer arithmetic, and the
equilibrium lower bound is an exact rational, so the structural identities
can be tested with zero tolerance.
"""

from __future__ import annotations

from fractions import Fraction
from functools import lru_cache
from itertools import combinations

import numpy as np

from .topology import NetworkTopology

# A profile is one sorted channel tuple per cell, channels numbered 1..M.
Profile = tuple


@lru_cache(maxsize=None)
def all_actions(n_channels: int, load: int) -> tuple:
    """Every size-``load`` channel subset of {1..n_channels}, lexicographic."""
    return tuple(combinations(range(1, n_channels + 1), load))


@lru_cache(maxsize=None)
def _combo_array(n_channels: int, load: int) -> np.ndarray:
    """Same subsets as 0-based column indices, shape (C, load)."""
    arr = np.array(all_actions(n_channels, load), dtype=np.intp) - 1
    arr.setflags(write=False)
    return arr


class GameInstance:
    """A topology plus a channel budget M; immutable, evaluation is pure.

    Construction fails unless every cell's load fits in M. Holds cached
    integer adjacency structures used by the evaluation routines.
    """

    def __init__(self, topology: NetworkTopology, n_channels: int):
        n_channels = int(n_channels)
        if n_channels < 1:
            raise ValueError("n_channels must be >= 1")
        max_load = max(topology.loads)
        if max_load > n_channels:
            raise ValueError(
                f"max load {max_load} exceeds channel count {n_channels}; game is infeasible"
            )
        self.topology = topology
        self.n_channels = n_channels
        self._loads = np.array(topology.loads, dtype=np.intp)
        n = topology.n_cells
        adj = np.zeros((n, n), dtype=np.int64)
        for i, j in topology.edges:
            adj[i, j] = 1
            adj[j, i] = 1
        adj.setflags(write=False)
        self._adjacency = adj
        self._neighbor_arrays = tuple(
            np.array(topology.neighbors(i), dtype=np.intp) for i in range(n)
        )
        # nodes at graph distance 1 or 2, used by two-hop contention exclusion
        two_hop = []
        for i in range(n):
            reach = set(topology.neighbors(i))
            for j in topology.neighbors(i):
                reach.update(topology.neighbors(j))
            reach.discard(i)
            two_hop.append(np.array(sorted(reach), dtype=np.intp))
        self._two_hop_arrays = tuple(two_hop)

    @property
    def n_cells(self) -> int:
        return self.topology.n_cells

    @property
    def loads(self) -> tuple:
        return self.topology.loads

    def neighbors(self, n: int) -> tuple:
        return self.topology.neighbors(n)

    def action_space(self, n: int) -> tuple:
        """All legal channel sets for cell ``n``, lexicographically ordered."""
        return all_actions(self.n_channels, self.topology.loads[n])

    def joint_profile_count(self) -> int:
        """Number of joint profiles, the brute-force enumeration size."""
        from math import comb

        total = 1
        for load in self.topology.loads:
            total *= comb(self.n_channels, load)
        return total


def validate_profile(game: GameInstance, profile: Profile) -> None:
    """Raise ValueError unless the profile is legal for this game."""
    if len(profile) != game.n_cells:
        raise ValueError(f"profile has {len(profile)} entries for {game.n_cells} cells")
    for n, action in enumerate(profile):
        channels = tuple(action)
        if len(channels) != game.topology.loads[n]:
            raise ValueError(
                f"cell {n} selects {len(channels)} channels, load is {game.topology.loads[n]}"
            )
        if len(set(channels)) != len(channels):
            raise ValueError(f"cell {n} repeats a channel: {channels}")
        if any(not 1 <= c <= game.n_channels for c in channels):
            raise ValueError(f"cell {n} uses a channel outside 1..{game.n_channels}: {channels}")


def canonical_profile(profile) -> Profile:
    """Profiles compare and serialize as sorted channel tuples."""
    return tuple(tuple(sorted(action)) for action in profile)


def random_profile(game: GameInstance, rng: np.random.Generator) -> Profile:
    """Independent uniform random channel set of the right size per cell."""
    return tuple(random_action(game.n_channels, load, rng) for load in game.topology.loads)


def random_action(n_channels: int, load: int, rng: np.random.Generator) -> tuple:
    picked = rng.choice(n_channels, size=load, replace=False)
    return tuple(int(c) + 1 for c in sorted(picked))


def channel_match(e: int, f: int) -> int:
    """Indicator that two channel choices collide: 1 if equal, else 0."""
    return 1 if e == f else 0


def channel_interference(game: GameInstance, profile: Profile, n: int, c: int) -> int:
    """How many neighbors of cell ``n`` currently occupy channel ``c``."""
    if not 0 <= n < game.n_cells:
        raise IndexError(f"cell index {n} out of range")
    if not 1 <= c <= game.n_channels:
        raise ValueError(f"channel {c} outside 1..{game.n_channels}")
    return sum(1 for j in game.neighbors(n) if c in profile[j])


def sap_interference(game: GameInstance, profile: Profile, n: int) -> int:
    """Total channel coincidences between cell ``n`` and its neighbors."""
    if not 0 <= n < game.n_cells:
        raise IndexError(f"cell index {n} out of range")
    total = 0
    for j in game.neighbors(n):
        other = profile[j]
        for e in profile[n]:
            for f in other:
                total += channel_match(e, f)
    return total


def utility(game: GameInstance, profile: Profile, n: int) -> int:
    """Negated experienced interference; each cell maximizes this."""
    return -sap_interference(game, profile, n)


def aggregate_interference(game: GameInstance, profile: Profile) -> int:
    """Network-wide objective: sum of per-cell interference (always even)."""
    return sum(sap_interference(game, profile, n) for n in range(game.n_cells))


def potential(game: GameInstance, profile: Profile) -> int:
    """Exact potential of the game: minus half the aggregate interference.

    Integer-valued because every conflict is counted once by each endpoint.
    Any unilateral deviation changes this by exactly the deviator's utility
    change.
    """
    agg = aggregate_interference(game, profile)
    assert agg % 2 == 0, "aggregate interference must be even"
    return -(agg // 2)


def _count_row(game: GameInstance, profile: Profile, n: int) -> np.ndarray:
    """Per-channel neighbor occupancy counts around cell ``n`` (0-based row)."""
    row = np.zeros(game.n_channels, dtype=np.int64)
    for j in game.neighbors(n):
        for c in profile[j]:
            row[c - 1] += 1
    return row


def find_improving_deviation(game: GameInstance, profile: Profile):
    """First cell with a strictly improving unilateral move, or None.

    Scans cells in index order; for the first improvable cell, returns
    ``(n, best_action)`` where best_action is the lexicographically first
    utility-maximizing channel set. The scan enumerates every alternative
    channel set of every cell, so a None return is an exhaustive
    equilibrium certificate.
    """
    validate_profile(game, profile)
    for n in range(game.n_cells):
        row = _count_row(game, profile, n)
        current = int(row[[c - 1 for c in profile[n]]].sum())
        combos = _combo_array(game.n_channels, game.topology.loads[n])
        sums = row[combos].sum(axis=1)
        best = int(sums.min())
        if best < current:
            alt = combos[int(sums.argmin())]
            return n, tuple(int(c) + 1 for c in alt)
    return None


def is_nash_equilibrium(game: GameInstance, profile: Profile) -> bool:
    """True iff no cell can strictly improve by changing its own channels."""
    return find_improving_deviation(game, profile) is None


def ne_lower_bound(game: GameInstance) -> Fraction:
    """Exact lower bound on aggregate utility at any pure equilibrium.

    Equals -(sum over cells n and neighbors j of load[n]*load[j]) / M. The
    aggregate utility (minus the aggregate interference) of every pure Nash
    equilibrium is at least this value; it tends to 0 as the channel budget
    grows or the graph thins.
    """
    loads = game.topology.loads
    total = 0
    for n in range(game.n_cells):
        for j in game.neighbors(n):
            total += loads[n] * loads[j]
    return Fraction(-total, game.n_channels)
