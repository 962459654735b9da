"""Tabular softmax policies, relaxed categorical sampling, and critics.

Every agent carries three logit tables: proposals over (state, action),
commitments over (state, joint proposal) as a reject/commit logit pair, and
fallback actions over (state, action). Hard samples drive the environment;
tempered soft samples computed from the same Gumbel noise carry the pathwise
derivative information the gradient estimators need.

Index conventions: commit bit 1 means commit, so column 1 of a commit logit
pair is the commit logit. Joint proposals are raveled in C order over agent
axes (agent 0 slowest).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import ContractViolationError
from .game import GameSpec, TrajectoryBatch, gumbel_noise


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    z = logits - logits.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


@dataclass
class RelaxedSample:
    """A Gumbel-perturbed draw: hard index for dynamics, tempered soft vector
    for gradients, plus the noise that reproduces both."""

    hard: int
    soft: np.ndarray
    noise: np.ndarray
    temperature: float


def sample_categorical_relaxed(logits_row: np.ndarray, temperature: float,
                               rng: np.random.Generator) -> RelaxedSample:
    """Draw one relaxed categorical sample.

    The hard index is argmax(logits + gumbel), which follows the softmax of
    the logits regardless of temperature; the soft vector is the tempered
    softmax of the same perturbed logits.
    """
    if temperature <= 0:
        raise ContractViolationError("temperature must be positive")
    if not np.all(np.isfinite(logits_row)):
        raise ContractViolationError("logits must be finite")
    g = gumbel_noise(rng, logits_row.shape)
    z = logits_row + g
    return RelaxedSample(hard=int(np.argmax(z)), soft=softmax(z / temperature),
                         noise=g, temperature=temperature)


def relaxed_soft(logits, noise, temperature: float) -> np.ndarray:
    """Recompute the soft vector of recorded noise under (possibly different)
    logits; works on batched rows."""
    return softmax((logits + noise) / temperature, axis=-1)


def soft_component_grad(soft: np.ndarray, component: int, temperature: float) -> np.ndarray:
    """d soft[component] / d logits for a relaxed sample, batched over rows."""
    y = soft
    grad = -(y[..., component:component + 1] * y) / temperature
    grad[..., component] += y[..., component] / temperature
    return grad


def log_prob_and_grad(logits_row: np.ndarray, chosen: int):
    """Log-probability of the chosen index and its gradient on this row.

    The gradient is one_hot(chosen) - softmax(logits); rows of the full table
    other than the queried one have zero gradient.
    """
    logp = log_softmax(logits_row)
    grad = -softmax(logits_row)
    grad[chosen] += 1.0
    return float(logp[chosen]), grad


def entropy_grad_rows(probs: np.ndarray) -> np.ndarray:
    """d entropy / d logits for batched softmax rows (..., K)."""
    logp = np.log(np.clip(probs, 1e-300, None))
    ent = -(probs * logp).sum(axis=-1, keepdims=True)
    return np.where(probs > 0, -probs * (logp + ent), 0.0)


@dataclass
class AgentPolicies:
    """Per-agent logit tables for the three stage policies."""

    proposal_logits: np.ndarray  # (n_states, n_proposals)
    commit_logits: np.ndarray    # (n_states, n_joint_proposals, 2)
    action_logits: np.ndarray    # (n_states, n_actions)

    def copy(self) -> "AgentPolicies":
        return AgentPolicies(self.proposal_logits.copy(), self.commit_logits.copy(),
                             self.action_logits.copy())

    def tables(self) -> dict[str, np.ndarray]:
        return {"proposal": self.proposal_logits, "commitment": self.commit_logits,
                "action": self.action_logits}


def init_policies(spec: GameSpec) -> list[AgentPolicies]:
    """Uniform (all-zero logit) policies for every agent."""
    out = []
    j = spec.n_joint_actions
    for i in range(spec.n_agents):
        a = spec.action_sizes[i]
        out.append(AgentPolicies(
            proposal_logits=np.zeros((spec.n_states, a)),
            commit_logits=np.zeros((spec.n_states, j, 2)),
            action_logits=np.zeros((spec.n_states, a)),
        ))
    return out


def commit_logit_relaxed(commit_logits: np.ndarray, state: int, soft_vectors):
    """Multilinear evaluation of a commitment logit table at relaxed proposals.

    Contracts the (joint proposal, 2) logit table of one state with one soft
    proposal vector per agent. At one-hot inputs this reduces exactly to the
    table lookup. Returns the contracted reject/commit logit pair and the
    partial derivatives of the pair with respect to each agent's soft vector
    (a list of (action_size, 2) arrays).
    """
    sizes = tuple(len(v) for v in soft_vectors)
    n = len(sizes)
    if commit_logits[state].shape[0] != int(np.prod(sizes)):
        raise ContractViolationError("soft vector arities do not match the table")
    table = commit_logits[state].reshape(*sizes, 2)
    letters = "abcdefghijklm"[:n]
    value = np.einsum(f"{letters}z," + ",".join(letters) + "->z",
                      table, *soft_vectors)
    partials = []
    for k in range(n):
        others = [soft_vectors[j] for j in range(n) if j != k]
        sub = f"{letters}z," + ",".join(letters[j] for j in range(n) if j != k)
        partials.append(np.einsum(sub + f"->{letters[k]}z", table, *others))
    return value, partials


@dataclass
class CriticTable:
    """Per-agent state-action values over (state, joint action)."""

    agent: int
    values: np.ndarray  # (n_states, n_joint_actions)

    def copy(self) -> "CriticTable":
        return CriticTable(self.agent, self.values.copy())


def init_critics(spec: GameSpec) -> list[CriticTable]:
    return [CriticTable(i, np.zeros((spec.n_states, spec.n_joint_actions)))
            for i in range(spec.n_agents)]


def fit_critic(critic: CriticTable, batch: TrajectoryBatch, learning_rate: float,
               n_updates: int, returns: np.ndarray | None = None) -> CriticTable:
    """Gradient descent on the mean squared error between the critic at the
    executed joint actions and the Monte-Carlo return tails.

    The loss is normalised by (episodes x horizon), so the per-cell gradient
    is 2 (count * Q - sum of targets) / (episodes * horizon). Cells never
    visited in the batch are untouched. Updates happen in place; the critic is
    also returned.
    """
    if batch.n_episodes < 1:
        raise ContractViolationError("empty batch")
    targets = batch.returns[:, :, critic.agent] if returns is None else returns
    s = batch.states.ravel()
    a = batch.flat_executed.ravel()
    g = targets.ravel()
    counts = np.zeros_like(critic.values)
    sums = np.zeros_like(critic.values)
    np.add.at(counts, (s, a), 1.0)
    np.add.at(sums, (s, a), g)
    norm = 2.0 / (batch.n_episodes * batch.horizon)
    for _ in range(n_updates):
        critic.values -= learning_rate * norm * (counts * critic.values - sums)
    return critic


def batch_mse(critic: CriticTable, batch: TrajectoryBatch) -> float:
    """The loss fit_critic descends, for tests and diagnostics."""
    q = critic.values[batch.states.ravel(), batch.flat_executed.ravel()]
    g = batch.returns[:, :, critic.agent].ravel()
    return float(np.mean((q - g) ** 2))


def policies_to_checkpoint(spec: GameSpec, policies, algorithm: str,
                           env_config: dict, include: tuple[str, ...] =
                           ("proposal", "commitment", "action")) -> dict:
    """Render policies as the flat checkpoint document.

    Logit vectors round-trip exactly: JSON floats are emitted with shortest
    repr, which python parses back to the identical double.
    """
    agents = []
    for i, pol in enumerate(policies):
        entry = {}
        if "proposal" in include:
            entry["proposal"] = {
                spec.state_labels[s]: list(pol.proposal_logits[s])
                for s in range(spec.n_states)}
        if "commitment" in include:
            entry["commitment"] = {
                f"{spec.state_labels[s]}|{spec.joint_label(m)}": list(pol.commit_logits[s, m])
                for s in range(spec.n_states) for m in range(spec.n_joint_actions)}
        if "action" in include:
            entry["action"] = {
                spec.state_labels[s]: list(pol.action_logits[s])
                for s in range(spec.n_states)}
        agents.append(entry)
    return {
        "format": "commitgame-checkpoint-v1",
        "algorithm": algorithm,
        "env": env_config,
        "n_agents": spec.n_agents,
        "agents": agents,
    }


def save_checkpoint(path, spec: GameSpec, policies, algorithm: str,
                    env_config: dict, include=("proposal", "commitment", "action")) -> None:
    doc = policies_to_checkpoint(spec, policies, algorithm, env_config, include)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def checkpoint_to_policies(doc: dict, spec: GameSpec) -> list[AgentPolicies]:
    """Rebuild policy tables from a checkpoint document, validating shapes."""
    if doc.get("n_agents") != spec.n_agents:
        raise ContractViolationError("checkpoint agent count does not match the game")
    policies = init_policies(spec)
    for i, entry in enumerate(doc["agents"]):
        for name, table in (("proposal", policies[i].proposal_logits),
                            ("action", policies[i].action_logits)):
            if name not in entry:
                continue
            got = entry[name]
            if set(got) != set(spec.state_labels):
                raise ContractViolationError(f"{name} state labels do not match the game")
            for s in range(spec.n_states):
                row = np.asarray(got[spec.state_labels[s]], dtype=np.float64)
                if row.shape != (spec.action_sizes[i],):
                    raise ContractViolationError(f"{name} row length mismatch")
                table[s] = row
        if "commitment" in entry:
            got = entry["commitment"]
            expected = {f"{spec.state_labels[s]}|{spec.joint_label(m)}"
                        for s in range(spec.n_states) for m in range(spec.n_joint_actions)}
            if set(got) != expected:
                raise ContractViolationError("commitment keys do not match the game")
            for s in range(spec.n_states):
                for m in range(spec.n_joint_actions):
                    key = f"{spec.state_labels[s]}|{spec.joint_label(m)}"
                    row = np.asarray(got[key], dtype=np.float64)
                    if row.shape != (2,):
                        raise ContractViolationError("commitment rows must have length 2")
                    policies[i].commit_logits[s, m] = row
    return policies


def load_checkpoint(path, spec: GameSpec):
    """Read a checkpoint file; returns (policies, document)."""
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != "commitgame-checkpoint-v1":
        raise ContractViolationError("unrecognised checkpoint format")
    return checkpoint_to_policies(doc, spec), doc
