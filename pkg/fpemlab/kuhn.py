"""
Two-player Kuhn poker, with exact evaluation.

Three cards J < Q < K, each player antes 1 chip and gets one private card.
Player 1 checks or bets; after a check player 2 checks or bets; facing a bet
a player calls or folds. Bets are limited to 1 chip, so payoffs lie in [-2, 2].

Action 0 is "pass" (check / fold) and action 1 is "bet" (bet / call).
Histories are strings over "p" and "b".
"""
import itertools
from functools import lru_cache
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .constants import PLAYER_1, PLAYER_2, PLAYERS
from .core import (
    BehaviorPolicy,
    Game,
    GameSpec,
    GameState,
    InfoState,
    SeatedPolicy,
    TabularPolicy,
    check_distribution,
)
from .errors import ContractError

__all__ = [
    "CARDS",
    "KuhnGame",
    "KuhnState",
    "ExactPolicyTable",
    "kuhn_infostate",
    "kuhn_infostates",
    "terminal_utility",
    "tabulate",
    "expected_value",
    "exact_best_response",
    "nash_conv",
    "pure_strategies",
    "PosteriorSelector",
    "posterior_mixture",
    "equilibrium_profile",
]

CARDS = "JQK"
PASS, BET = 0, 1
ACTION_CHARS = "pb"
TERMINAL_HISTORIES = ("pp", "bp", "bb", "pbp", "pbb")
DECISION_HISTORIES = {PLAYER_1: ("", "pb"), PLAYER_2: ("p", "b")}
DEALS = list(itertools.permutations(range(3), 2))
OBSERVATION_DIM = 2 + 3 + 3 * 2

ExactPolicyTable = Dict[str, np.ndarray]


def acting_player(history: str) -> int:
    return PLAYER_1 if len(history) % 2 == 0 else PLAYER_2


def is_terminal(history: str) -> bool:
    return history in TERMINAL_HISTORIES


def terminal_utility(card_1: int, card_2: int, history: str) -> float:
    """Chips won by player 1 at a terminal history, ante included."""
    if history == "bp":
        return 1.0
    if history == "pbp":
        return -1.0
    stake = 2.0 if history in ("bb", "pbb") else 1.0
    return stake if card_1 > card_2 else -stake


@lru_cache(None)
def kuhn_infostate(player: int, card: int, history: str) -> InfoState:
    features = np.zeros(OBSERVATION_DIM)
    features[player - 1] = 1.0
    features[2 + card] = 1.0
    for i, char in enumerate(history):
        features[5 + 2 * i + ACTION_CHARS.index(char)] = 1.0
    features.flags.writeable = False
    return InfoState(f"{player}:{CARDS[card]}:{history}", features, (PASS, BET), player, 2)


def kuhn_infostates(player: Optional[int] = None) -> List[InfoState]:
    """All 12 information states (or the 6 of one player)."""
    players = PLAYERS if player is None else (player,)
    return [
        kuhn_infostate(p, card, history)
        for p in players
        for card in range(3)
        for history in DECISION_HISTORIES[p]
    ]


class KuhnState(GameState):
    def __init__(self, deal: Tuple[int, int]):
        self.deal = deal
        self.history = ""
        self.tick = 0

    def __repr__(self):
        return f"<KuhnState({CARDS[self.deal[0]]}{CARDS[self.deal[1]]}, {self.history!r})>"

    @property
    def contributions(self) -> Tuple[int, int]:
        """Chips put in the pot by each player."""
        paid = [1, 1]
        for i, char in enumerate(self.history):
            if char == "b":
                paid[i % 2] += 1
        return paid[0], paid[1]

    def is_terminal(self) -> bool:
        return is_terminal(self.history)

    def acting_players(self) -> Tuple[int, ...]:
        return (acting_player(self.history),)

    def infostate(self, player: int) -> InfoState:
        return kuhn_infostate(player, self.deal[player - 1], self.history)

    def apply_actions(self, actions: Dict[int, int]) -> Tuple[float, float]:
        if self.is_terminal():
            raise ContractError("the hand is over")
        player = acting_player(self.history)
        self.history += ACTION_CHARS[actions[player]]
        self.tick += 1
        if self.is_terminal():
            u = terminal_utility(*self.deal, self.history)
            return u, -u
        return 0.0, 0.0


class KuhnGame(Game):
    name = "kuhn"
    symmetric = False
    spec = GameSpec(num_actions=(2, 2), max_episode_length=3, observation_dim=OBSERVATION_DIM)

    def __repr__(self):
        return "<KuhnGame>"

    def new_initial_state(self, rng: np.random.Generator) -> KuhnState:
        return KuhnState(DEALS[int(rng.integers(len(DEALS)))])


class _Lookup:
    """Memoized, validated access to a policy by (player, card, history)."""

    def __init__(self, policy: BehaviorPolicy):
        self.policy = policy
        self.cache = {}

    def __call__(self, player: int, card: int, history: str) -> np.ndarray:
        try:
            return self.cache[player, card, history]
        except KeyError:
            infostate = kuhn_infostate(player, card, history)
            probs = check_distribution(self.policy.act_distribution(infostate), infostate)
            self.cache[player, card, history] = probs
            return probs


def tabulate(policy: BehaviorPolicy, player: Optional[int] = None) -> ExactPolicyTable:
    """Flatten any policy to a table over the information states it has to cover."""
    return {s.key: check_distribution(policy.act_distribution(s), s) for s in kuhn_infostates(player)}


def _expected_value(deal, history, lookups) -> float:
    if is_terminal(history):
        return terminal_utility(*deal, history)
    player = acting_player(history)
    probs = lookups[player](player, deal[player - 1], history)
    value = 0.0
    for action, char in enumerate(ACTION_CHARS):
        if probs[action] > 0:
            value += probs[action] * _expected_value(deal, history + char, lookups)
    return value


def expected_value(policy_1: BehaviorPolicy, policy_2: BehaviorPolicy) -> float:
    """Exact expected chips won by player 1. Only reachable information states are queried."""
    lookups = {PLAYER_1: _Lookup(policy_1), PLAYER_2: _Lookup(policy_2)}
    return sum(_expected_value(deal, "", lookups) for deal in DEALS) / len(DEALS)


def _best_response(history, my_card, weights, responder, opponent, table) -> float:
    """Weighted responder value below history; weights hold chance x opponent reach per opponent card."""
    sign = 1.0 if responder == PLAYER_1 else -1.0

    if is_terminal(history):
        total = 0.0
        for card, w in weights.items():
            deal = (my_card, card) if responder == PLAYER_1 else (card, my_card)
            total += w * sign * terminal_utility(*deal, history)
        return total

    player = acting_player(history)
    if player == responder:
        values = [
            _best_response(history + char, my_card, weights, responder, opponent, table)
            for char in ACTION_CHARS
        ]
        best = int(np.argmax(values))
        table[kuhn_infostate(responder, my_card, history).key] = np.eye(2)[best]
        return values[best]

    total = 0.0
    for action, char in enumerate(ACTION_CHARS):
        reach = {
            card: w * opponent(player, card, history)[action] if w > 0 else 0.0
            for card, w in weights.items()
        }
        # Unreachable branches are still walked so the responder's table stays complete.
        total += _best_response(history + char, my_card, reach, responder, opponent, table)
    return total


def exact_best_response(opponent_policy: BehaviorPolicy, responder_role: int) -> Tuple[TabularPolicy, float]:
    """
    Best response by backward induction over the responder's information states.
    The value is the responder's own expected payoff.
    """
    opponent = _Lookup(opponent_policy)
    table: ExactPolicyTable = {}
    value = 0.0
    for my_card in range(3):
        weights = {card: 1.0 / len(DEALS) for card in range(3) if card != my_card}
        value += _best_response("", my_card, weights, responder_role, opponent, table)
    return TabularPolicy(table, name=f"best-response-p{responder_role}"), value


def nash_conv(policy_1: BehaviorPolicy, policy_2: BehaviorPolicy) -> float:
    """Sum over players of what a unilateral switch to a best response gains; 0 at equilibrium."""
    _, br_1 = exact_best_response(policy_2, PLAYER_1)
    _, br_2 = exact_best_response(policy_1, PLAYER_2)
    # (br_1 - v) + (br_2 - (-v))
    return br_1 + br_2


def pure_strategies(player: int) -> List[TabularPolicy]:
    """The 2^6 deterministic strategies of a player."""
    keys = [s.key for s in kuhn_infostates(player)]
    strategies = []
    for choice in itertools.product((PASS, BET), repeat=len(keys)):
        table = {key: np.eye(2)[a] for key, a in zip(keys, choice)}
        strategies.append(TabularPolicy(table, name="pure-" + "".join(map(str, choice))))
    return strategies


class PosteriorSelector:
    """
    The exact selector for a mixed strategy over a set of policies: at an information
    state, each policy is weighted by its prior times the probability that it takes
    the player's own past actions there.
    """

    def __init__(self, policies: Sequence[BehaviorPolicy], weights: Optional[Sequence[float]] = None):
        if not policies:
            raise ContractError("a selector needs at least one policy")
        self.lookups = [_Lookup(p) for p in policies]
        if weights is None:
            weights = np.full(len(policies), 1.0 / len(policies))
        self.prior = np.asarray(weights, dtype=np.float64)

    @property
    def size(self):
        return len(self.lookups)

    def distribution(self, infostate: InfoState) -> np.ndarray:
        player, card, history = infostate.key.split(":")
        player, card = int(player), CARDS.index(card)
        posterior = self.prior.copy()
        for i in range(player - 1, len(history), 2):
            action = ACTION_CHARS.index(history[i])
            posterior *= [lookup(player, card, history[:i])[action] for lookup in self.lookups]
        total = posterior.sum()
        if total <= 0:
            return self.prior / self.prior.sum()
        return posterior / total


def posterior_mixture(
    policies: Sequence[BehaviorPolicy], weights: Optional[Sequence[float]] = None, name="mixture"
) -> TabularPolicy:
    """The behavior strategy equivalent to playing policies[j] for a whole hand with probability weights[j]."""
    selector = PosteriorSelector(policies, weights)
    table = {}
    for infostate in kuhn_infostates():
        w = selector.distribution(infostate)
        player, card, history = infostate.key.split(":")
        player, card = int(player), CARDS.index(card)
        table[infostate.key] = sum(
            wj * lookup(player, card, history) for wj, lookup in zip(w, selector.lookups)
        )
    return TabularPolicy(table, name=name)


def equilibrium_profile(alpha: float = 0.0) -> SeatedPolicy:
    """
    The closed-form family of Kuhn equilibria, alpha in [0, 1/3]. Player 1's value is -1/18.
    """
    if not 0 <= alpha <= 1 / 3:
        raise ContractError("alpha must lie in [0, 1/3]")

    def row(bet):
        return np.array([1 - bet, bet])

    player_1 = {
        "1:J:": row(alpha),
        "1:Q:": row(0.0),
        "1:K:": row(3 * alpha),
        "1:J:pb": row(0.0),
        "1:Q:pb": row(alpha + 1 / 3),
        "1:K:pb": row(1.0),
    }
    player_2 = {
        "2:J:p": row(1 / 3),
        "2:Q:p": row(0.0),
        "2:K:p": row(1.0),
        "2:J:b": row(0.0),
        "2:Q:b": row(1 / 3),
        "2:K:b": row(1.0),
    }
    return SeatedPolicy(TabularPolicy(player_1, "eq-p1"), TabularPolicy(player_2, "eq-p2"), "equilibrium")
