"""Game-theoretic core for the subband anti-coordination game.

Mixed strategies, per-player utility tables over joint subband choices,
Nash equilibrium computation, coarse-correlated-equilibrium certification,
and external regret accounting. Utilities are in dB throughout. All
operations are pure functions of their inputs.

Subband indices are 0-based everywhere in this package; index ``a`` maps
to starting frequency ``f_c + a * B_a``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

# Simplex membership tolerance for strategies and joint distributions.
PROB_ATOL = 1e-9
# Default tolerance (dB) for equilibrium checks.
EQ_TOL_DB = 1e-6
# Welfare ties below this are broken lexicographically on support sets.
WELFARE_TIE_ATOL = 1e-9
# Guard on the joint action space for exhaustive enumeration.
PURE_ENUM_GUARD = 10**7


class CapacityError(RuntimeError):
    """The joint action space is too large to enumerate exhaustively."""


class SolverIncompleteError(RuntimeError):
    """No equilibrium was found within the solver's mode."""


@dataclass(frozen=True)
class MixedStrategy:
    """Probability distribution over subband indices."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.ndim != 1 or p.size < 1:
            raise ValueError("strategy must be a non-empty 1-D probability vector")
        if np.any(p < -PROB_ATOL):
            raise ValueError("strategy has negative entries")
        if abs(p.sum() - 1.0) > PROB_ATOL:
            raise ValueError(f"strategy sums to {p.sum()!r}, not 1")
        p = np.clip(p, 0.0, None)
        object.__setattr__(self, "probs", p)

    @property
    def n_subbands(self) -> int:
        return self.probs.size

    @property
    def support(self) -> tuple[int, ...]:
        return tuple(int(i) for i in np.flatnonzero(self.probs > 0.0))

    @property
    def pure_action(self) -> int | None:
        """Action index if this is a point mass, else None."""
        a = int(np.argmax(self.probs))
        return a if self.probs[a] >= 1.0 - PROB_ATOL else None


def pure_strategy(action: int, n_subbands: int) -> MixedStrategy:
    p = np.zeros(n_subbands)
    p[action] = 1.0
    return MixedStrategy(p)


@dataclass(frozen=True)
class StrategyProfile:
    """One mixed strategy per radar."""

    strategies: tuple[MixedStrategy, ...]

    def __post_init__(self):
        strats = tuple(self.strategies)
        if len(strats) < 1:
            raise ValueError("profile needs at least one strategy")
        sizes = {s.n_subbands for s in strats}
        if len(sizes) != 1:
            raise ValueError("strategies disagree on the number of subbands")
        object.__setattr__(self, "strategies", strats)

    @property
    def n_players(self) -> int:
        return len(self.strategies)

    @property
    def n_subbands(self) -> int:
        return self.strategies[0].n_subbands

    @property
    def pure_actions(self) -> tuple[int, ...] | None:
        acts = tuple(s.pure_action for s in self.strategies)
        return None if any(a is None for a in acts) else acts

    def support_key(self) -> tuple[tuple[int, ...], ...]:
        return tuple(s.support for s in self.strategies)


def pure_profile(actions, n_subbands: int) -> StrategyProfile:
    return StrategyProfile(tuple(pure_strategy(a, n_subbands) for a in actions))


@dataclass(frozen=True)
class UtilityTable:
    """Per-player utility (dB) for every joint subband choice.

    ``values`` has shape (I, A, ..., A) with one trailing axis per player;
    ``values[i][f]`` is player i's utility at joint action f.
    """

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim < 2:
            raise ValueError("table must have shape (I, A, ..., A)")
        n_players = v.ndim - 1
        if v.shape[0] != n_players:
            raise ValueError(
                f"leading axis {v.shape[0]} does not match {n_players} action axes"
            )
        if len(set(v.shape[1:])) != 1:
            raise ValueError("action axes must all have the same length")
        if not np.all(np.isfinite(v)):
            raise ValueError("table entries must be finite")
        object.__setattr__(self, "values", v)

    @property
    def n_players(self) -> int:
        return self.values.ndim - 1

    @property
    def n_subbands(self) -> int:
        return self.values.shape[1]

    def utility(self, player: int, joint) -> float:
        return float(self.values[(player, *joint)])


@dataclass(frozen=True)
class JointDistribution:
    """Probability mass over joint subband choices, shape (A, ..., A)."""

    mass: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.mass, dtype=float)
        if m.ndim < 1 or len(set(m.shape)) != 1:
            raise ValueError("mass must have shape (A, ..., A)")
        if np.any(m < -PROB_ATOL):
            raise ValueError("mass has negative entries")
        if abs(m.sum() - 1.0) > PROB_ATOL:
            raise ValueError(f"mass sums to {m.sum()!r}, not 1")
        object.__setattr__(self, "mass", np.clip(m, 0.0, None))

    @property
    def n_players(self) -> int:
        return self.mass.ndim

    @property
    def n_subbands(self) -> int:
        return self.mass.shape[0]


@dataclass(frozen=True)
class RegretLedger:
    """Realized per-chirp utilities and opponent actions for one radar.

    ``opponent_actions[k]`` lists the other players' subbands at chirp k,
    ordered by ascending player index with ``player`` removed.
    """

    player: int
    realized_db: np.ndarray
    opponent_actions: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.realized_db, dtype=float)
        o = np.atleast_2d(np.asarray(self.opponent_actions, dtype=int))
        if r.ndim != 1 or o.shape[0] != r.size:
            raise ValueError("ledger arrays must agree on the chirp count")
        object.__setattr__(self, "realized_db", r)
        object.__setattr__(self, "opponent_actions", o)

    @property
    def n_chirps(self) -> int:
        return self.realized_db.size


def _check_profile_table(profile: StrategyProfile, table: UtilityTable):
    if profile.n_players != table.n_players:
        raise ValueError(
            f"profile has {profile.n_players} players, table {table.n_players}"
        )
    if profile.n_subbands != table.n_subbands:
        raise ValueError(
            f"profile has {profile.n_subbands} subbands, table {table.n_subbands}"
        )


def expected_utility(table: UtilityTable, profile: StrategyProfile, player: int) -> float:
    """Expected dB utility of ``player`` under the product distribution."""
    _check_profile_table(profile, table)
    u = table.values[player]
    for s in profile.strategies:
        u = np.tensordot(s.probs, u, axes=(0, 0))
    return float(u)


def deviation_utilities(table: UtilityTable, profile: StrategyProfile, player: int) -> np.ndarray:
    """Expected utility of each pure deviation of ``player``, others fixed."""
    _check_profile_table(profile, table)
    u = np.moveaxis(table.values[player], player, 0)
    for j, s in enumerate(profile.strategies):
        if j != player:
            u = np.tensordot(u, s.probs, axes=(1, 0))
    return u


def is_nash(profile: StrategyProfile, table: UtilityTable, tol: float = EQ_TOL_DB) -> bool:
    """True iff no player has a pure deviation improving by more than tol.

    Pure deviations suffice: the expectation is linear in each player's
    own strategy.
    """
    if tol < 0:
        raise ValueError("tol must be non-negative")
    for i in range(table.n_players):
        base = expected_utility(table, profile, i)
        if deviation_utilities(table, profile, i).max() > base + tol:
            return False
    return True


def enumerate_pure_nash(table: UtilityTable) -> list[StrategyProfile]:
    """All pure profiles with no strictly improving unilateral deviation."""
    n, a = table.n_players, table.n_subbands
    if a**n > PURE_ENUM_GUARD:
        raise CapacityError(f"joint action space {a}^{n} exceeds enumeration guard")
    mask = np.ones((a,) * n, dtype=bool)
    for i in range(n):
        vi = table.values[i]
        mask &= vi >= vi.max(axis=i, keepdims=True)
    return [pure_profile(tuple(act), a) for act in np.argwhere(mask)]


def _support_enumeration_2p(table: UtilityTable, br_tol: float = 1e-8) -> list[StrategyProfile]:
    """All mixed NE of a 2-player game found by equal-size support enumeration."""
    a = table.n_subbands
    u0, u1 = table.values[0], table.values[1]
    found: dict[tuple, StrategyProfile] = {}
    for m in range(1, a + 1):
        for sup0 in itertools.combinations(range(a), m):
            for sup1 in itertools.combinations(range(a), m):
                # Player 1's strategy y makes player 0 indifferent over sup0,
                # and symmetrically for x. Augmented system: utility rows
                # minus the common value v, plus the normalization row.
                m0 = u0[np.ix_(sup0, sup1)]
                m1 = u1[np.ix_(sup0, sup1)].T
                sol = []
                ok = True
                for mat in (m0, m1):
                    aug = np.zeros((m + 1, m + 1))
                    aug[:m, :m] = mat
                    aug[:m, m] = -1.0
                    aug[m, :m] = 1.0
                    rhs = np.zeros(m + 1)
                    rhs[m] = 1.0
                    try:
                        x = np.linalg.solve(aug, rhs)
                    except np.linalg.LinAlgError:
                        ok = False
                        break
                    if np.any(x[:m] < -1e-9):
                        ok = False
                        break
                    sol.append((np.clip(x[:m], 0.0, None), x[m]))
                if not ok:
                    continue
                (y, v0), (x, v1) = sol
                # Best-response check against all pure deviations.
                if (u0[:, sup1] @ y).max() > v0 + br_tol:
                    continue
                if (x @ u1[sup0, :]).max() > v1 + br_tol:
                    continue
                p0 = np.zeros(a)
                p0[list(sup0)] = x / x.sum()
                p1 = np.zeros(a)
                p1[list(sup1)] = y / y.sum()
                key = (tuple(np.round(p0, 9)), tuple(np.round(p1, 9)))
                found.setdefault(
                    key, StrategyProfile((MixedStrategy(p0), MixedStrategy(p1)))
                )
    return list(found.values())


def solve_nash_welfare_max(table: UtilityTable, mode: str = "auto") -> StrategyProfile:
    """The NE maximizing total expected utility, ties broken reproducibly.

    ``mode='auto'`` adds two-player mixed equilibria via support
    enumeration; ``mode='pure'`` considers pure equilibria only (the only
    option for three or more players). Ties in welfare are broken by
    lexicographic order on the support index sets.
    """
    if mode not in ("auto", "pure"):
        raise ValueError(f"unknown mode {mode!r}")
    candidates = {p.support_key(): p for p in enumerate_pure_nash(table)}
    if mode == "auto" and table.n_players == 2:
        for p in _support_enumeration_2p(table):
            candidates.setdefault(p.support_key(), p)
    if not candidates:
        raise SolverIncompleteError(
            "no equilibrium found (pure-only enumeration for >2 players, "
            "equal-size support enumeration for 2)"
        )
    welfare = {
        key: sum(expected_utility(table, p, i) for i in range(table.n_players))
        for key, p in candidates.items()
    }
    best = max(welfare.values())
    tied = sorted(k for k, w in welfare.items() if w >= best - WELFARE_TIE_ATOL)
    return candidates[tied[0]]


def cce_deviation_gap(joint: JointDistribution, table: UtilityTable, player: int) -> float:
    """Best fixed-deviation gain (dB) of ``player`` against ``joint``.

    Non-positive for every player iff the joint distribution is a CCE;
    at most eps iff it is an eps-CCE.
    """
    if joint.n_players != table.n_players or joint.n_subbands != table.n_subbands:
        raise ValueError("joint distribution does not match the table")
    base = float((joint.mass * table.values[player]).sum())
    marginal = joint.mass.sum(axis=player)
    u = np.moveaxis(table.values[player], player, 0)
    n_other = table.n_players - 1
    dev = np.tensordot(u, marginal, axes=(list(range(1, n_other + 1)), list(range(n_other))))
    return float(np.max(dev) - base)


def external_regret(ledger: RegretLedger, table: UtilityTable) -> float:
    """Hindsight gap (dB x chirps) to the best fixed subband."""
    n_other = table.n_players - 1
    if ledger.opponent_actions.shape[1] != n_other:
        raise ValueError("ledger opponent actions do not match the table")
    u = np.moveaxis(table.values[ledger.player], ledger.player, 0)
    if n_other == 0:
        per_arm = np.repeat(u[:, None], ledger.n_chirps, axis=1)
    else:
        idx = tuple(ledger.opponent_actions[:, j] for j in range(n_other))
        per_arm = u[(slice(None), *idx)]  # (A, K)
    return float((per_arm.sum(axis=1) - ledger.realized_db.sum()).max())


def empirical_joint(histories, n_subbands: int) -> JointDistribution:
    """Empirical distribution of joint actions over the chirp horizon.

    ``histories`` holds one action sequence per radar; all sequences must
    have the same length K >= 1.
    """
    seqs = [np.asarray(h, dtype=int) for h in histories]
    if not seqs or any(s.ndim != 1 for s in seqs):
        raise ValueError("histories must be 1-D action sequences")
    lengths = {s.size for s in seqs}
    if len(lengths) != 1:
        raise ValueError("ragged histories: all radars must report the same chirp count")
    k = lengths.pop()
    if k < 1:
        raise ValueError("need at least one chirp")
    counts = np.zeros((n_subbands,) * len(seqs))
    np.add.at(counts, tuple(seqs), 1.0)
    return JointDistribution(counts / k)
