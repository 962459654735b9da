"""Three-stage commitment game protocol: propose, commit, act.

A game is a finite tabular object: indexed states, per-agent action spaces
(the proposal space of every agent is identical to its action space), a
deterministic per-agent reward table and a stochastic transition table over
joint actions. Each timestep runs three stages:

1. every agent announces a proposal (an action index),
2. every agent observes the joint proposal and commits or rejects,
3. if all agents committed, the joint proposal is executed; otherwise every
   agent plays an independently sampled fallback action.

The fallback action is sampled and recorded at *every* step, including fully
committed ones, because the learners need value lookups at the counterfactual
joint action alongside the executed one. Transitions and rewards condition
only on (state, executed joint action), never on proposals or commitments.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolationError

_TRANSITION_ATOL = 1e-9


@dataclass
class GameSpec:
    """Tabular commitment game.

    rewards has shape (n_states, *action_sizes, n_agents); transitions has
    shape (n_states, *action_sizes, n_states) and each distribution must sum
    to one. Instances are treated as immutable once constructed.
    """

    n_agents: int
    n_states: int
    action_sizes: tuple[int, ...]
    rewards: np.ndarray
    transitions: np.ndarray
    gamma: float
    horizon: int
    start_state: int = 0
    name: str = "game"
    state_labels: tuple[str, ...] = ()
    action_labels: tuple[tuple[str, ...], ...] = ()

    rewards_flat: np.ndarray = field(init=False, repr=False)
    transitions_flat: np.ndarray = field(init=False, repr=False)
    transitions_cum: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.n_agents < 1 or self.n_states < 1 or self.horizon < 1:
            raise ContractViolationError("agents, states and horizon must be positive")
        if len(self.action_sizes) != self.n_agents:
            raise ContractViolationError("one action size per agent required")
        if not 0.0 <= self.gamma <= 1.0:
            raise ContractViolationError(f"gamma {self.gamma} outside [0, 1]")
        if not 0 <= self.start_state < self.n_states:
            raise ContractViolationError("start state out of range")
        expect_r = (self.n_states, *self.action_sizes, self.n_agents)
        expect_t = (self.n_states, *self.action_sizes, self.n_states)
        if self.rewards.shape != expect_r:
            raise ContractViolationError(f"reward shape {self.rewards.shape} != {expect_r}")
        if self.transitions.shape != expect_t:
            raise ContractViolationError(f"transition shape {self.transitions.shape} != {expect_t}")
        sums = self.transitions.reshape(-1, self.n_states).sum(axis=1)
        if not np.allclose(sums, 1.0, atol=_TRANSITION_ATOL, rtol=0.0):
            raise ContractViolationError("transition rows must sum to 1 within 1e-9")
        if np.any(self.transitions < 0):
            raise ContractViolationError("transition probabilities must be nonnegative")
        if not self.state_labels:
            self.state_labels = tuple(f"s{k}" for k in range(self.n_states))
        if not self.action_labels:
            self.action_labels = tuple(
                tuple(f"a{k}" for k in range(size)) for size in self.action_sizes
            )
        self.rewards = np.asarray(self.rewards, dtype=np.float64)
        self.transitions = np.asarray(self.transitions, dtype=np.float64)
        self.rewards_flat = self.rewards.reshape(self.n_states, -1, self.n_agents)
        self.transitions_flat = self.transitions.reshape(self.n_states, -1, self.n_states)
        self.transitions_cum = np.cumsum(self.transitions_flat, axis=-1)

    @property
    def n_joint_actions(self) -> int:
        return int(np.prod(self.action_sizes))

    @property
    def strides(self) -> tuple[int, ...]:
        """C-order ravel stride of each agent's axis in the joint index."""
        out = []
        acc = 1
        for size in reversed(self.action_sizes):
            out.append(acc)
            acc *= size
        return tuple(reversed(out))

    def ravel_joint(self, actions) -> int | np.ndarray:
        """Flatten per-agent action indices into a joint-action index.

        Accepts a tuple of ints or a sequence of per-agent index arrays.
        """
        return np.ravel_multi_index(tuple(actions), self.action_sizes)

    def unravel_joint(self, flat):
        return np.unravel_index(flat, self.action_sizes)

    def joint_label(self, flat: int) -> str:
        idx = self.unravel_joint(int(flat))
        return ",".join(self.action_labels[i][int(k)] for i, k in enumerate(idx))

    def validate_indices(self, state, actions) -> None:
        if not 0 <= state < self.n_states:
            raise ContractViolationError(f"state {state} out of range")
        if len(actions) != self.n_agents:
            raise ContractViolationError("one index per agent required")
        for i, a in enumerate(actions):
            if not 0 <= a < self.action_sizes[i]:
                raise ContractViolationError(f"agent {i} index {a} out of range")


@dataclass
class StepRecord:
    """One protocol timestep, including the sampling noise needed to replay it."""

    state: int
    joint_proposal: tuple[int, ...]
    joint_commit: tuple[int, ...]
    counterfactual_action: tuple[int, ...]
    executed_action: tuple[int, ...]
    rewards: np.ndarray
    proposal_noise: tuple[np.ndarray, ...]
    commit_noise: tuple[np.ndarray, ...]
    temperature: float

    @property
    def all_commit(self) -> bool:
        return all(c == 1 for c in self.joint_commit)


@dataclass
class Trajectory:
    """One episode: ordered step records plus per-step discounted return tails."""

    steps: list[StepRecord]
    returns: np.ndarray  # (horizon, n_agents)

    def __len__(self) -> int:
        return len(self.steps)


class TrajectoryBatch:
    """Structure-of-arrays view of a batch of episodes.

    Index convention: arrays are (n_episodes, horizon, ...) with per-agent
    quantities kept as lists (agents may have different action-space sizes).
    This is the object the gradient estimators consume; `to_trajectory`
    materialises a single episode as step records.
    """

    def __init__(self, spec: GameSpec, states, proposals, proposal_noise, commits,
                 commit_noise, counterfactuals, executed, rewards, returns,
                 temperature: float, commitment_forced: bool = False):
        self.spec = spec
        self.states = states                    # (B, T) int
        self.proposals = proposals              # per agent (B, T) int
        self.proposal_noise = proposal_noise    # per agent (B, T, A_i)
        self.commits = commits                  # (B, T, N) int
        self.commit_noise = commit_noise        # (B, T, N, 2)
        self.counterfactuals = counterfactuals  # per agent (B, T) int
        self.executed = executed                # per agent (B, T) int
        self.rewards = rewards                  # (B, T, N)
        self.returns = returns                  # (B, T, N)
        self.temperature = temperature
        self.commitment_forced = commitment_forced
        self.flat_proposals = spec.ravel_joint(proposals)
        self.flat_counterfactuals = spec.ravel_joint(counterfactuals)
        self.flat_executed = spec.ravel_joint(executed)
        self.all_commit = self.commits.all(axis=2)  # (B, T) bool

    @property
    def n_episodes(self) -> int:
        return self.states.shape[0]

    @property
    def horizon(self) -> int:
        return self.states.shape[1]

    def commit_product_except(self, agent: int) -> np.ndarray:
        """Product of the other agents' commit bits, shape (B, T)."""
        mask = np.ones(self.spec.n_agents, dtype=bool)
        mask[agent] = False
        return self.commits[:, :, mask].all(axis=2)

    def to_trajectory(self, episode: int) -> Trajectory:
        steps = []
        for t in range(self.horizon):
            steps.append(StepRecord(
                state=int(self.states[episode, t]),
                joint_proposal=tuple(int(p[episode, t]) for p in self.proposals),
                joint_commit=tuple(int(c) for c in self.commits[episode, t]),
                counterfactual_action=tuple(int(a[episode, t]) for a in self.counterfactuals),
                executed_action=tuple(int(a[episode, t]) for a in self.executed),
                rewards=self.rewards[episode, t].copy(),
                proposal_noise=tuple(g[episode, t].copy() for g in self.proposal_noise),
                commit_noise=tuple(self.commit_noise[episode, t, i].copy()
                                   for i in range(self.spec.n_agents)),
                temperature=self.temperature,
            ))
        return Trajectory(steps=steps, returns=self.returns[episode].copy())


def step(spec: GameSpec, state: int, joint_proposal, joint_commit,
         counterfactual_action, rng: np.random.Generator):
    """Resolve one timestep given the three stage outcomes.

    Returns (executed_action, rewards, next_state). The executed action is the
    joint proposal iff every commit bit is 1, else the counterfactual action;
    the next state is drawn from the transition row of (state, executed).
    """
    spec.validate_indices(state, joint_proposal)
    spec.validate_indices(state, counterfactual_action)
    if len(joint_commit) != spec.n_agents or any(c not in (0, 1) for c in joint_commit):
        raise ContractViolationError("commit bits must be 0/1, one per agent")
    executed = tuple(joint_proposal) if all(c == 1 for c in joint_commit) \
        else tuple(counterfactual_action)
    flat = spec.ravel_joint(executed)
    rewards = spec.rewards_flat[state, flat].copy()
    next_state = int(np.searchsorted(spec.transitions_cum[state, flat], rng.random(),
                                     side="right"))
    next_state = min(next_state, spec.n_states - 1)
    return executed, rewards, next_state


def gumbel_noise(rng: np.random.Generator, shape) -> np.ndarray:
    """Standard Gumbel draws, guarded against log(0)."""
    tiny = 1e-20
    u = rng.random(shape)
    return -np.log(-np.log(u + tiny) + tiny)


def rollout_batch(spec: GameSpec, policies, n_episodes: int, temperature: float,
                  rng: np.random.Generator, force_reject: bool = False) -> TrajectoryBatch:
    """Run a batch of full episodes against a fixed policy snapshot.

    Sampling order per timestep is fixed (proposal noise per agent, commit
    noise per agent, fallback noise per agent, one transition uniform per
    episode) so a seeded generator reproduces the batch bit for bit. With
    force_reject the commit stage is skipped and every step executes the
    fallback actions (used by the no-commitment baseline).
    """
    if n_episodes < 1:
        raise ContractViolationError("need at least one episode")
    if temperature <= 0:
        raise ContractViolationError("temperature must be positive")
    n, t_end = spec.n_agents, spec.horizon
    b = n_episodes
    states = np.zeros((b, t_end), dtype=np.int64)
    proposals = [np.zeros((b, t_end), dtype=np.int64) for _ in range(n)]
    proposal_noise = [np.zeros((b, t_end, spec.action_sizes[i])) for i in range(n)]
    commits = np.zeros((b, t_end, n), dtype=np.int64)
    commit_noise = np.zeros((b, t_end, n, 2))
    counterfactuals = [np.zeros((b, t_end), dtype=np.int64) for _ in range(n)]
    rewards = np.zeros((b, t_end, n))

    state = np.full(b, spec.start_state, dtype=np.int64)
    for t in range(t_end):
        states[:, t] = state
        for i in range(n):
            g = gumbel_noise(rng, (b, spec.action_sizes[i]))
            proposal_noise[i][:, t] = g
            proposals[i][:, t] = np.argmax(policies[i].proposal_logits[state] + g, axis=1)
        flat_m = spec.ravel_joint([p[:, t] for p in proposals])
        if not force_reject:
            for i in range(n):
                g = gumbel_noise(rng, (b, 2))
                commit_noise[:, t, i] = g
                z = policies[i].commit_logits[state, flat_m] + g
                commits[:, t, i] = np.argmax(z, axis=1)
        for i in range(n):
            g = gumbel_noise(rng, (b, spec.action_sizes[i]))
            counterfactuals[i][:, t] = np.argmax(policies[i].action_logits[state] + g, axis=1)
        all_commit = commits[:, t].all(axis=1)
        executed_t = [np.where(all_commit, proposals[i][:, t], counterfactuals[i][:, t])
                      for i in range(n)]
        flat_exec = spec.ravel_joint(executed_t)
        rewards[:, t] = spec.rewards_flat[state, flat_exec]
        # inverse-CDF draw: first index whose cumulative mass reaches u
        u = rng.random(b)
        state = (spec.transitions_cum[states[:, t], flat_exec] < u[:, None]).sum(axis=1)
        state = np.minimum(state, spec.n_states - 1).astype(np.int64)

    executed = [np.where(commits.all(axis=2), proposals[i], counterfactuals[i])
                for i in range(n)]
    returns = discounted_returns(rewards, spec.gamma)
    return TrajectoryBatch(spec, states, proposals, proposal_noise, commits, commit_noise,
                           counterfactuals, executed, rewards, returns, temperature,
                           commitment_forced=force_reject)


def rollout(spec: GameSpec, policies, temperature: float, seed: int) -> Trajectory:
    """Single seeded episode, identical to row 0 of a one-episode batch."""
    rng = np.random.default_rng(seed)
    return rollout_batch(spec, policies, 1, temperature, rng).to_trajectory(0)


def discounted_returns(rewards: np.ndarray, gamma: float) -> np.ndarray:
    """Per-step discounted reward tails over axis -2 of (..., T, n_agents)."""
    if rewards.shape[-2] == 0:
        raise ContractViolationError("cannot compute returns of an empty trajectory")
    out = np.zeros_like(rewards, dtype=np.float64)
    out[..., -1, :] = rewards[..., -1, :]
    for t in range(rewards.shape[-2] - 2, -1, -1):
        out[..., t, :] = rewards[..., t, :] + gamma * out[..., t + 1, :]
    return out


def compute_returns(trajectory: Trajectory, gamma: float) -> np.ndarray:
    """Monte-Carlo return tails of a single episode, shape (T, n_agents)."""
    rewards = np.stack([s.rewards for s in trajectory.steps])
    return discounted_returns(rewards, gamma)
