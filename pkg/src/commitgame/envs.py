"""Concrete game instances: one-shot matrix dilemmas, a position grid with a
dilemma at every state, a repeated purely-conflicting game with multi-step
commitment blocks, and an n-player public goods game."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .game import GameSpec

PD_PAYOFF = {
    (0, 0): (-1.0, -1.0),  # (C, C)
    (0, 1): (-3.0, 0.0),   # (C, D)
    (1, 0): (0.0, -3.0),   # (D, C)
    (1, 1): (-2.0, -2.0),  # (D, D)
}

CONFLICT_PAYOFF = {
    (0, 0): (0.0, 0.0),    # (A1, A1)
    (0, 1): (-1.0, 2.0),   # (A1, A2)
    (1, 0): (2.0, -1.0),   # (A2, A1)
    (1, 1): (0.0, 0.0),    # (A2, A2)
}


@dataclass(frozen=True)
class MatrixGameSpec:
    """A repeated two-player matrix game with optional commitment blocks of
    length mega_step_k (1 means per-step commitment)."""

    payoff: dict
    action_labels: tuple[str, ...]
    repeats: int
    mega_step_k: int = 1
    gamma: float = 1.0
    name: str = "matrix"

    def __post_init__(self):
        if self.repeats < 1 or self.mega_step_k < 1:
            raise ConfigurationError("repeats and mega_step_k must be positive")
        if self.repeats % self.mega_step_k != 0:
            raise ConfigurationError(
                f"mega_step_k={self.mega_step_k} must divide horizon={self.repeats}")

    def build(self) -> GameSpec:
        k = self.mega_step_k
        n_base = len(self.action_labels)
        blocks = list(itertools.product(range(n_base), repeat=k))
        n_blocks_per_agent = len(blocks)
        n_steps = self.repeats // k
        rewards = np.zeros((n_steps, n_blocks_per_agent, n_blocks_per_agent, 2))
        for b1, seq1 in enumerate(blocks):
            for b2, seq2 in enumerate(blocks):
                total = np.zeros(2)
                for a1, a2 in zip(seq1, seq2):
                    total += self.payoff[(a1, a2)]
                rewards[:, b1, b2] = total
        transitions = np.zeros((n_steps, n_blocks_per_agent, n_blocks_per_agent, n_steps))
        for t in range(n_steps):
            transitions[t, :, :, min(t + 1, n_steps - 1)] = 1.0
        labels = tuple("+".join(self.action_labels[a] for a in seq) for seq in blocks)
        return GameSpec(
            n_agents=2, n_states=n_steps,
            action_sizes=(n_blocks_per_agent, n_blocks_per_agent),
            rewards=rewards, transitions=transitions, gamma=self.gamma,
            horizon=n_steps, start_state=0, name=self.name,
            state_labels=tuple(f"t{t}" for t in range(n_steps)),
            action_labels=(labels, labels),
        )


@dataclass(frozen=True)
class GridGameSpec:
    """Two agents on a 1-D grid of size n; agent 1 starts at 0, agent 2 at
    n - 1, and moving toward the other's start raises one's own reward while
    costing the other twice as much."""

    grid_size: int
    horizon: int
    gamma: float = 0.99

    def __post_init__(self):
        if self.grid_size < 2 or self.horizon < 1:
            raise ConfigurationError("need grid_size >= 2 and horizon >= 1")

    def build(self) -> GameSpec:
        n = self.grid_size
        n_states = n * n
        # action 0 moves up the line (clamped), action 1 moves down
        rewards = np.zeros((n_states, 2, 2, 2))
        transitions = np.zeros((n_states, 2, 2, n_states))
        for p1 in range(n):
            for p2 in range(n):
                s = p1 * n + p2
                for a1 in range(2):
                    for a2 in range(2):
                        q1 = min(p1 + 1, n - 1) if a1 == 0 else max(p1 - 1, 0)
                        q2 = min(p2 + 1, n - 1) if a2 == 0 else max(p2 - 1, 0)
                        rewards[s, a1, a2, 0] = q1 - 2 * (n - 1 - q2)
                        rewards[s, a1, a2, 1] = (n - 1 - q2) - 2 * q1
                        transitions[s, a1, a2, q1 * n + q2] = 1.0
        return GameSpec(
            n_agents=2, n_states=n_states, action_sizes=(2, 2),
            rewards=rewards, transitions=transitions, gamma=self.gamma,
            horizon=self.horizon, start_state=0 * n + (n - 1), name="grid",
            state_labels=tuple(f"({p1},{p2})" for p1 in range(n) for p2 in range(n)),
            action_labels=(("fwd", "back"), ("fwd", "back")),
        )


@dataclass(frozen=True)
class PublicGoodsSpec:
    """N-player one-shot public goods game with binary contributions; the pool
    is scaled by the benefit factor and shared equally."""

    n_agents: int
    benefit_factor: float

    def __post_init__(self):
        if self.n_agents < 2:
            raise ConfigurationError("public goods game needs at least 2 agents")
        if not 1.0 < self.benefit_factor < self.n_agents:
            raise ConfigurationError(
                f"benefit factor must lie strictly inside (1, {self.n_agents})")

    def build(self) -> GameSpec:
        n = self.n_agents
        sizes = (2,) * n
        rewards = np.zeros((1, *sizes, n))
        for joint in itertools.product(range(2), repeat=n):
            pool = sum(joint) * self.benefit_factor / n
            for i in range(n):
                rewards[(0, *joint, i)] = pool - joint[i]
        transitions = np.ones((1, *sizes, 1))
        return GameSpec(
            n_agents=n, n_states=1, action_sizes=sizes,
            rewards=rewards, transitions=transitions, gamma=1.0, horizon=1,
            name="public-goods", state_labels=("s0",),
            action_labels=tuple(("keep", "give") for _ in range(n)),
        )


def prisoners_dilemma() -> GameSpec:
    """One-shot prisoner's dilemma; cooperation is action 0, defection 1."""
    rewards = np.zeros((1, 2, 2, 2))
    for (a1, a2), r in PD_PAYOFF.items():
        rewards[0, a1, a2] = r
    transitions = np.ones((1, 2, 2, 1))
    return GameSpec(
        n_agents=2, n_states=1, action_sizes=(2, 2),
        rewards=rewards, transitions=transitions, gamma=1.0, horizon=1,
        name="pd", state_labels=("s0",), action_labels=(("C", "D"), ("C", "D")),
    )


def grid_game(n: int, horizon: int, gamma: float = 0.99) -> GameSpec:
    return GridGameSpec(grid_size=n, horizon=horizon, gamma=gamma).build()


def repeated_conflict(horizon: int, mega_step_k: int, gamma: float = 0.99) -> GameSpec:
    """Repeated purely conflicting game; proposals cover mega_step_k
    consecutive base actions bound by a single commitment decision."""
    return MatrixGameSpec(
        payoff=CONFLICT_PAYOFF, action_labels=("A1", "A2"), repeats=horizon,
        mega_step_k=mega_step_k, gamma=gamma, name="rpc",
    ).build()


def public_goods(n_agents: int, beta: float) -> GameSpec:
    return PublicGoodsSpec(n_agents=n_agents, benefit_factor=beta).build()


def block_components(block_index: int, n_base_actions: int, k: int) -> tuple[int, ...]:
    """Decode a block action index into its k base actions."""
    return tuple(np.unravel_index(block_index, (n_base_actions,) * k))


def build_env(name: str, *, grid_n: int = 4, horizon: int = 16, mega_step_k: int = 2,
              n_agents: int = 2, benefit_factor: float = 1.5,
              gamma: float | None = None) -> GameSpec:
    """Construct an environment from config keys."""
    if name == "pd":
        return prisoners_dilemma()
    if name == "grid":
        return grid_game(grid_n, horizon, gamma if gamma is not None else 0.99)
    if name == "rpc":
        return repeated_conflict(horizon, mega_step_k, gamma if gamma is not None else 0.99)
    if name == "public-goods":
        return public_goods(n_agents, benefit_factor)
    raise ConfigurationError(f"unknown environment '{name}'")
