"""Learning dynamics and exhaustive oracles for the spectrum-access game.

Three update schemes are provided:

* ``standard``: one uniformly scheduled cell per iteration applies a best
  response if (and only if) it strictly improves its utility.
* ``autonomous``: every improvable cell contends with a random backoff
  timer; winners freeze their graph neighborhood, so a whole independent
  set of cells updates in the same round.
* ``random_once``: the non-adaptive baseline, a single independent uniform
  draw per cell.

Because the game is an exact potential game and simultaneous updaters are
mutually non-adjacent, the potential strictly increases on every effective
round, which bounds the number of effective rounds and guarantees
convergence to a pure Nash equilibrium.

The module also contains brute-force enumeration of joint profiles (global
optimum and the full equilibrium set) for oracle testing on small
instances.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .game import (
    GameInstance,
    Profile,
    all_actions,
    _combo_array,
    canonical_profile,
    is_nash_equilibrium,
    random_profile,
    validate_profile,
)

TRACE_FORMAT_HEADER = "spectrumgame-trace v1"
ALGORITHMS = ("standard", "autonomous", "random_once")
DEFAULT_ENUMERATION_CAP = 10_000_000

_CHUNK = 1 << 15


class EnumerationCapError(RuntimeError):
    """Joint-profile space too large for exhaustive enumeration."""

    def __init__(self, message: str, profile_count: int):
        super().__init__(message)
        self.profile_count = profile_count


@dataclass(frozen=True)
class ContentionConfig:
    """Backoff contention parameters for the autonomous scheme.

    Only the ordering of timers matters, so ``tau_max`` is an abstract
    scale. ``exclusion`` controls how far an update win silences other
    contenders: ``one_hop`` freezes graph neighbors (sufficient for
    convergence), ``two_hop`` additionally freezes neighbors-of-neighbors,
    mirroring a relayed-announcement protocol.
    """

    tau_max: float = 1.0
    exclusion: str = "two_hop"

    def __post_init__(self):
        if not self.tau_max > 0:
            raise ValueError("tau_max must be positive")
        if self.exclusion not in ("one_hop", "two_hop"):
            raise ValueError(f"exclusion must be one_hop or two_hop, got {self.exclusion!r}")


@dataclass(frozen=True)
class RoundRecord:
    round_index: int
    updaters: tuple          # cells that changed action this round
    potential: int           # after the round
    aggregate_interference: int


@dataclass
class DynamicsTrace:
    """Full record of one run: initial state, every round, final state."""

    algorithm: str
    initial_profile: Profile
    initial_potential: int
    initial_aggregate: int
    records: list = field(default_factory=list)
    final_profile: Profile = None
    converged: bool = False
    rounds_to_convergence: int = 0

    @property
    def final_potential(self) -> int:
        return self.records[-1].potential if self.records else self.initial_potential

    @property
    def final_aggregate(self) -> int:
        return self.records[-1].aggregate_interference if self.records else self.initial_aggregate

    @property
    def effective_rounds(self) -> int:
        return sum(1 for r in self.records if r.updaters)


class _EvalState:
    """Vectorized per-profile evaluation shared by all step routines.

    ``counts[n, c]`` is the number of neighbors of cell n occupying channel
    c+1; ``s`` the per-cell interference; ``best_s`` the smallest
    interference each cell could reach by changing only its own channels
    (the sum of its load-many smallest counts). A cell can strictly improve
    iff best_s < s.
    """

    __slots__ = ("counts", "s", "best_s", "improvers")

    def __init__(self, game: GameInstance, profile: Profile):
        n, m = game.n_cells, game.n_channels
        member = np.zeros((n, m), dtype=np.int64)
        for i, action in enumerate(profile):
            for c in action:
                member[i, c - 1] = 1
        counts = game._adjacency @ member
        self.counts = counts
        self.s = (counts * member).sum(axis=1)
        ordered = np.sort(counts, axis=1)
        cumulative = np.cumsum(ordered, axis=1)
        self.best_s = cumulative[np.arange(n), game._loads - 1]
        self.improvers = self.best_s < self.s

    def aggregate(self) -> int:
        return int(self.s.sum())

    def potential(self) -> int:
        agg = self.aggregate()
        assert agg % 2 == 0
        return -(agg // 2)


def _best_from_row(game: GameInstance, row: np.ndarray, load: int, rng) -> tuple:
    """Utility-maximizing channel set against fixed neighbor occupancy.

    Ties are broken uniformly at random over all maximizers; exactly one
    random draw is consumed.
    """
    combos = _combo_array(game.n_channels, load)
    sums = row[combos].sum(axis=1)
    minimizers = np.flatnonzero(sums == sums.min())
    pick = combos[int(minimizers[int(rng.integers(minimizers.size))])]
    return tuple(int(c) + 1 for c in pick)


def best_response(game: GameInstance, profile: Profile, n: int, rng: np.random.Generator) -> tuple:
    """A best channel set for cell ``n`` given everyone else's profile."""
    validate_profile(game, profile)
    row = np.zeros(game.n_channels, dtype=np.int64)
    for j in game.neighbors(n):
        for c in profile[j]:
            row[c - 1] += 1
    return _best_from_row(game, row, game.topology.loads[n], rng)


def _replace(profile: Profile, n: int, action: tuple) -> Profile:
    return profile[:n] + (action,) + profile[n + 1 :]


def step_standard_br(game: GameInstance, profile: Profile, rng: np.random.Generator):
    """Schedule one uniform random cell; apply its best response if it
    strictly improves. Returns ``(profile, updated)``."""
    profile = canonical_profile(profile)
    validate_profile(game, profile)
    state = _EvalState(game, profile)
    new_profile, updater = _standard_move(game, profile, state, rng)
    return new_profile, updater is not None


def _standard_move(game, profile, state, rng):
    i = int(rng.integers(game.n_cells))
    if not state.improvers[i]:
        return profile, None
    action = _best_from_row(game, state.counts[i], game.topology.loads[i], rng)
    return _replace(profile, i, action), i


def select_updaters_contention(
    game: GameInstance, profile: Profile, config: ContentionConfig, rng: np.random.Generator
) -> tuple:
    """Simulate one backoff contention round; return the winning cells.

    Every cell whose best response strictly improves draws a timer uniform
    on [0, tau_max]; timers fire in ascending order and a firing cell wins
    only if no earlier winner has frozen it. Winning freezes the cell's
    exclusion neighborhood. The result is sorted, pairwise non-adjacent
    (one_hop) or pairwise at graph distance >= 3 (two_hop), and every
    member has a strictly improving move.
    """
    profile = canonical_profile(profile)
    validate_profile(game, profile)
    state = _EvalState(game, profile)
    return _select_updaters(game, state, config, rng)


def _select_updaters(game, state, config, rng):
    contenders = np.flatnonzero(state.improvers)
    if contenders.size == 0:
        return ()
    timers = rng.uniform(0.0, config.tau_max, size=contenders.size)
    # stable sort: equal timers resolve by cell index
    order = np.argsort(timers, kind="stable")
    exclusion = (
        game._two_hop_arrays if config.exclusion == "two_hop" else game._neighbor_arrays
    )
    blocked = np.zeros(game.n_cells, dtype=bool)
    active = []
    for k in order:
        c = int(contenders[k])
        if blocked[c]:
            continue
        active.append(c)
        blocked[exclusion[c]] = True
    active.sort()
    _check_independent(game, active, config.exclusion)
    return tuple(active)


def _check_independent(game, active, exclusion):
    for a in range(len(active)):
        for b in range(a + 1, len(active)):
            i, j = active[a], active[b]
            nbrs_i = game.neighbors(i)
            if j in nbrs_i:
                raise RuntimeError(f"contention selected adjacent updaters {i} and {j}")
            if exclusion == "two_hop" and set(nbrs_i) & set(game.neighbors(j)):
                raise RuntimeError(f"contention selected updaters {i}, {j} at graph distance 2")


def step_autonomous_br(
    game: GameInstance, profile: Profile, config: ContentionConfig, rng: np.random.Generator
):
    """One contention round: all winners apply best responses simultaneously.

    Winners are mutually non-adjacent, so each one's neighborhood is fixed
    during the round and the potential gains add up. Returns
    ``(profile, updaters)``.
    """
    profile = canonical_profile(profile)
    validate_profile(game, profile)
    state = _EvalState(game, profile)
    return _autonomous_move(game, profile, state, rng, config)


def _autonomous_move(game, profile, state, rng, config):
    active = _select_updaters(game, state, config, rng)
    for n in active:
        action = _best_from_row(game, state.counts[n], game.topology.loads[n], rng)
        profile = _replace(profile, n, action)
    return profile, active


def run_to_convergence(
    game: GameInstance,
    initial_profile: Profile,
    algorithm: str,
    config: ContentionConfig = None,
    rng=None,
    max_rounds: int = 1_000_000,
) -> DynamicsTrace:
    """Iterate the chosen scheme until no cell can improve, then verify.

    ``standard`` and ``autonomous`` stop once a full improvement sweep
    finds no improvable cell; the final profile is then checked against the
    exhaustive equilibrium test and the trace is flagged converged.
    ``random_once`` draws a fresh uniform profile and stops. If
    ``max_rounds`` is exhausted first the trace comes back with
    ``converged=False``.
    """
    if algorithm not in ALGORITHMS:
        raise ValueError(f"unknown algorithm {algorithm!r}, expected one of {ALGORITHMS}")
    if max_rounds < 1:
        raise ValueError("max_rounds must be >= 1")
    if config is None:
        config = ContentionConfig()
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng

    profile = canonical_profile(initial_profile)
    validate_profile(game, profile)
    state = _EvalState(game, profile)
    trace = DynamicsTrace(
        algorithm=algorithm,
        initial_profile=profile,
        initial_potential=state.potential(),
        initial_aggregate=state.aggregate(),
    )

    if algorithm == "random_once":
        profile = random_profile(game, rng)
        state = _EvalState(game, profile)
        trace.records.append(
            RoundRecord(1, tuple(range(game.n_cells)), state.potential(), state.aggregate())
        )
        trace.final_profile = profile
        trace.rounds_to_convergence = 1
        trace.converged = is_nash_equilibrium(game, profile)
        return trace

    rounds = 0
    potential_now = trace.initial_potential
    aggregate_now = trace.initial_aggregate
    while state.improvers.any():
        if rounds >= max_rounds:
            trace.final_profile = profile
            trace.rounds_to_convergence = rounds
            trace.converged = False
            return trace
        rounds += 1
        if algorithm == "standard":
            new_profile, updater = _standard_move(game, profile, state, rng)
            updaters = ()
            if updater is not None:
                updaters = (updater,)
                profile = new_profile
                state = _EvalState(game, profile)
                potential_now, aggregate_now = state.potential(), state.aggregate()
        else:
            profile, updaters = _autonomous_move(game, profile, state, rng, config)
            state = _EvalState(game, profile)
            new_potential = state.potential()
            if updaters and not new_potential > potential_now:
                raise RuntimeError("autonomous round failed to increase the potential")
            potential_now, aggregate_now = new_potential, state.aggregate()
        trace.records.append(RoundRecord(rounds, updaters, potential_now, aggregate_now))

    trace.final_profile = profile
    trace.rounds_to_convergence = rounds
    if not is_nash_equilibrium(game, profile):
        raise RuntimeError("dynamics stopped at a profile that is not an equilibrium")
    trace.converged = True
    return trace


# ---------------------------------------------------------------------------
# Exhaustive oracles


@lru_cache(maxsize=None)
def _overlap_table(n_channels: int, load_a: int, load_b: int) -> np.ndarray:
    """Pairwise intersection sizes between all load_a- and load_b-subsets."""
    a = np.zeros((len(all_actions(n_channels, load_a)), n_channels), dtype=np.int64)
    combos_a = _combo_array(n_channels, load_a)
    a[np.arange(a.shape[0])[:, None], combos_a] = 1
    b = np.zeros((len(all_actions(n_channels, load_b)), n_channels), dtype=np.int64)
    combos_b = _combo_array(n_channels, load_b)
    b[np.arange(b.shape[0])[:, None], combos_b] = 1
    table = a @ b.T
    table.setflags(write=False)
    return table


def _check_cap(game: GameInstance, cap: int) -> int:
    total = game.joint_profile_count()
    if total > cap:
        raise EnumerationCapError(
            f"joint profile space has {total} entries, above the cap of {cap}", total
        )
    return total


def _decode_profile(game: GameInstance, flat_index: int, dims) -> Profile:
    idx = np.unravel_index(flat_index, dims)
    return tuple(
        all_actions(game.n_channels, game.topology.loads[n])[int(idx[n])]
        for n in range(game.n_cells)
    )


def _scan_profiles(game: GameInstance, cap: int, collect_equilibria: bool):
    """Walk every joint profile in lexicographic order, chunk-vectorized.

    Returns (best_value, first_best_flat_index, equilibria) where
    equilibria is a list of (flat_index, aggregate) pairs when requested.
    """
    total = _check_cap(game, cap)
    n, m = game.n_cells, game.n_channels
    loads = game.topology.loads
    dims = tuple(len(all_actions(m, k)) for k in loads)
    nbrs = [game.neighbors(i) for i in range(n)]

    best_value = None
    best_flat = None
    equilibria = []
    for start in range(0, total, _CHUNK):
        stop = min(start + _CHUNK, total)
        flat = np.arange(start, stop)
        idx = np.unravel_index(flat, dims)
        agg = np.zeros(stop - start, dtype=np.int64)
        ne_mask = np.ones(stop - start, dtype=bool) if collect_equilibria else None
        for i in range(n):
            totals = None
            for j in nbrs[i]:
                part = _overlap_table(m, loads[i], loads[j])[:, idx[j]]
                totals = part if totals is None else totals + part
            if totals is None:
                continue  # isolated cell: zero interference, never blocks NE
            current = totals[idx[i], np.arange(stop - start)]
            agg += current
            if collect_equilibria:
                ne_mask &= current == totals.min(axis=0)
        chunk_best = int(agg.min())
        if best_value is None or chunk_best < best_value:
            best_value = chunk_best
            best_flat = start + int(np.flatnonzero(agg == chunk_best)[0])
        if collect_equilibria:
            for k in np.flatnonzero(ne_mask):
                equilibria.append((start + int(k), int(agg[k])))
    return best_value, best_flat, equilibria, dims


def brute_force_optimum(game: GameInstance, cap: int = DEFAULT_ENUMERATION_CAP):
    """Globally minimal aggregate interference by exhaustive enumeration.

    Returns ``(profile, value)`` for the lexicographically first minimizer.
    Refuses (with the profile-space size) when the enumeration would exceed
    ``cap`` joint profiles.
    """
    best_value, best_flat, _, dims = _scan_profiles(game, cap, collect_equilibria=False)
    return _decode_profile(game, best_flat, dims), best_value


def enumerate_nash_equilibria(game: GameInstance, cap: int = DEFAULT_ENUMERATION_CAP):
    """Every pure equilibrium with its aggregate interference.

    A profile qualifies iff no cell can strictly lower its own interference
    against its neighbors' fixed channels. Nonempty for every instance (the
    potential maximizer is always an equilibrium). Same cap as
    ``brute_force_optimum``.
    """
    _, _, equilibria, dims = _scan_profiles(game, cap, collect_equilibria=True)
    assert equilibria, "a finite exact potential game always has a pure equilibrium"
    return [(_decode_profile(game, flat, dims), value) for flat, value in equilibria]


# ---------------------------------------------------------------------------
# Trace files


def _profile_lines(profile: Profile) -> list:
    return [f"{n} " + " ".join(str(c) for c in action) for n, action in enumerate(profile)]


def save_trace(trace: DynamicsTrace, path, config: dict = None) -> None:
    """Write a trace file (versioned text): config, per-round rows, profiles."""
    lines = [TRACE_FORMAT_HEADER]
    if config is not None:
        lines.append("# config " + json.dumps(config, sort_keys=True))
    lines.append(f"algorithm {trace.algorithm}")
    lines.append(f"converged {'true' if trace.converged else 'false'}")
    lines.append(f"rounds_to_convergence {trace.rounds_to_convergence}")
    lines.append(f"initial_potential {trace.initial_potential}")
    lines.append(f"initial_aggregate {trace.initial_aggregate}")
    lines.append(f"final_potential {trace.final_potential}")
    lines.append(f"final_aggregate {trace.final_aggregate}")
    lines.append("profile initial")
    lines.extend(_profile_lines(trace.initial_profile))
    lines.append(f"rounds {len(trace.records)}")
    for rec in trace.records:
        updaters = ",".join(str(u) for u in rec.updaters) if rec.updaters else "-"
        lines.append(
            f"round {rec.round_index} updaters {updaters} "
            f"potential {rec.potential} aggregate {rec.aggregate_interference}"
        )
    lines.append("profile final")
    lines.extend(_profile_lines(trace.final_profile))
    lines.append("end")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
