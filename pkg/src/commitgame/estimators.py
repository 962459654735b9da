"""Sampled ascent-gradient estimators for the three stage policies.

Each estimator averages per-step contributions over a batch of episodes
(divided by the number of episodes, with timesteps summed inside each
episode). Value lookups that act as plain coefficients use the hard sampled
indices; terms that differentiate through a discrete sample replay the
recorded Gumbel noise through the tempered softmax and follow the
straight-through convention, with the derivative of the commitment logit with
respect to one agent's proposal taken as the table slice along that agent's
axis at the other agents' hard indices.

All functions accept the logit / critic tables to differentiate explicitly,
so the same code serves the centralized learner (true tables everywhere),
the decentralized learner (estimated opponent tables), and its opponent-model
updates (estimated perspective).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .game import TrajectoryBatch
from .policies import CriticTable, relaxed_soft, soft_component_grad, softmax


@dataclass
class GradientAccumulator:
    """Zero-initialised gradient tables aligned with one agent's policies."""

    proposal: np.ndarray
    commitment: np.ndarray
    action: np.ndarray

    @classmethod
    def zeros_like(cls, policies_i) -> "GradientAccumulator":
        return cls(np.zeros_like(policies_i.proposal_logits),
                   np.zeros_like(policies_i.commit_logits),
                   np.zeros_like(policies_i.action_logits))


def _row_weights(batch: TrajectoryBatch, step_weights) -> np.ndarray | None:
    """Expand per-timestep weights (T,) to flattened row order, or None."""
    if step_weights is None:
        return None
    return np.tile(np.asarray(step_weights, dtype=np.float64), batch.n_episodes)


def scatter_rows(target: np.ndarray, idx: np.ndarray, rows: np.ndarray) -> None:
    """target[idx] += rows with repeated indices accumulated (bincount-backed,
    much faster than np.add.at for the batch sizes used here)."""
    m, k = target.shape
    flat_idx = (idx[:, None] * k + np.arange(k)[None, :]).ravel()
    target += np.bincount(flat_idx, weights=rows.ravel(), minlength=m * k).reshape(m, k)


def _one_hot_minus_probs(chosen: np.ndarray, probs: np.ndarray) -> np.ndarray:
    rows = -probs.copy()
    rows[np.arange(rows.shape[0]), chosen] += 1.0
    return rows


def _axis_slice_index(batch: TrajectoryBatch, agent: int) -> np.ndarray:
    """Joint indices obtained by sweeping one agent's proposal coordinate,
    others held at their hard samples; shape (rows, action_size)."""
    stride = batch.spec.strides[agent]
    size = batch.spec.action_sizes[agent]
    flat_m = batch.flat_proposals.ravel()
    m_i = batch.proposals[agent].ravel()
    return flat_m[:, None] + (np.arange(size)[None, :] - m_i[:, None]) * stride


def _relaxed_jacobian_apply(y: np.ndarray, d: np.ndarray, temperature: float) -> np.ndarray:
    """Chain a downstream derivative d (rows, A) through the tempered-softmax
    jacobian of the recorded proposal sample y (rows, A)."""
    inner = (y * d).sum(axis=1, keepdims=True)
    return (y * d - y * inner) / temperature


def _coefficients(batch: TrajectoryBatch, critic_values: np.ndarray):
    """Hard-index value lookups: Q at the joint proposal, Q at the
    counterfactual joint action, and the commit-gated mix of the two."""
    s = batch.states.ravel()
    qm = critic_values[s, batch.flat_proposals.ravel()]
    qa = critic_values[s, batch.flat_counterfactuals.ravel()]
    allc = batch.all_commit.ravel().astype(np.float64)
    return qm, qa, allc * qm + (1.0 - allc) * qa


def action_grad_tables(batch: TrajectoryBatch, critic_values: np.ndarray,
                       action_logits: np.ndarray, agent: int,
                       step_weights=None) -> np.ndarray:
    """Fallback-policy gradient: on steps without full commitment, the value
    of the counterfactual joint action times the log-probability gradient of
    the agent's sampled fallback action."""
    s = batch.states.ravel()
    _, qa, _ = _coefficients(batch, critic_values)
    uncommitted = 1.0 - batch.all_commit.ravel().astype(np.float64)
    probs = softmax(action_logits)
    rows = _one_hot_minus_probs(batch.counterfactuals[agent].ravel(), probs[s])
    coef = uncommitted * qa
    w = _row_weights(batch, step_weights)
    if w is not None:
        coef = coef * w
    grad = np.zeros_like(action_logits)
    scatter_rows(grad, s, coef[:, None] * rows)
    return grad / batch.n_episodes


def commitment_grad_terms(batch: TrajectoryBatch, critic_values: np.ndarray,
                          commit_logits: np.ndarray, agent: int,
                          step_weights=None):
    """Score-function and pathwise parts of the commitment-policy gradient,
    returned separately (their sum is the estimator)."""
    s = batch.states.ravel()
    flat_m = batch.flat_proposals.ravel()
    qm, qa, mix = _coefficients(batch, critic_values)
    w = _row_weights(batch, step_weights)

    logit_rows = commit_logits[s, flat_m]
    probs = softmax(logit_rows)
    u = _one_hot_minus_probs(batch.commits[:, :, agent].ravel(), probs)
    coef = mix if w is None else mix * w
    n_joint = commit_logits.shape[1]
    reinforce = np.zeros_like(commit_logits)
    scatter_rows(reinforce.reshape(-1, 2), s * n_joint + flat_m, coef[:, None] * u)

    y = relaxed_soft(logit_rows, batch.commit_noise[:, :, agent].reshape(-1, 2),
                     batch.temperature)
    dsoft = soft_component_grad(y, 1, batch.temperature)
    pw_coef = (qm - qa) * batch.commit_product_except(agent).ravel()
    if w is not None:
        pw_coef = pw_coef * w
    pathwise = np.zeros_like(commit_logits)
    scatter_rows(pathwise.reshape(-1, 2), s * n_joint + flat_m, pw_coef[:, None] * dsoft)

    n = batch.n_episodes
    return reinforce / n, pathwise / n


def estimate_commitment_grad(batch: TrajectoryBatch, critic: CriticTable, policies,
                             step_weights=None) -> np.ndarray:
    reinforce, pathwise = commitment_grad_terms(
        batch, critic.values, policies[critic.agent].commit_logits, critic.agent,
        step_weights)
    return reinforce + pathwise


def estimate_action_grad(batch: TrajectoryBatch, critic: CriticTable, policies,
                         step_weights=None) -> np.ndarray:
    return action_grad_tables(batch, critic.values, policies[critic.agent].action_logits,
                              critic.agent, step_weights)


def proposal_grad_terms(batch: TrajectoryBatch, critic_values: np.ndarray,
                        proposal_logits: np.ndarray, commit_tables, agent: int,
                        step_weights=None):
    """The three parts of the proposal-policy gradient for one agent:

    - score-function term on the agent's own proposal distribution,
    - the commitment log-probability path of every agent, which reaches this
      agent's parameters through the relaxed proposal coordinate,
    - the pathwise commitment-indicator term, one summand per agent whose
      co-players all committed.

    commit_tables lists the commitment logit table to use for every agent
    (true tables in centralized training, estimated ones elsewhere).
    """
    spec = batch.spec
    s = batch.states.ravel()
    flat_m = batch.flat_proposals.ravel()
    qm, qa, mix = _coefficients(batch, critic_values)
    w = _row_weights(batch, step_weights)
    coef = mix if w is None else mix * w

    probs = softmax(proposal_logits)
    own_rows = _one_hot_minus_probs(batch.proposals[agent].ravel(), probs[s])
    reinforce = np.zeros_like(proposal_logits)
    scatter_rows(reinforce, s, coef[:, None] * own_rows)

    y_m = relaxed_soft(proposal_logits[s],
                       batch.proposal_noise[agent].reshape(-1, spec.action_sizes[agent]),
                       batch.temperature)
    idx = _axis_slice_index(batch, agent)

    logpsi_rows = np.zeros_like(own_rows)
    pathwise_rows = np.zeros_like(own_rows)
    qdiff = qm - qa
    for j in range(spec.n_agents):
        zeta = commit_tables[j]
        logit_rows = zeta[s, flat_m]
        zslice = zeta[s[:, None], idx]  # (rows, A_agent, 2)
        u = _one_hot_minus_probs(batch.commits[:, :, j].ravel(), softmax(logit_rows))
        d = np.einsum("rc,rac->ra", u, zslice)
        logpsi_rows += coef[:, None] * _relaxed_jacobian_apply(y_m, d, batch.temperature)

        y_c = relaxed_soft(logit_rows, batch.commit_noise[:, :, j].reshape(-1, 2),
                           batch.temperature)
        dsoft = soft_component_grad(y_c, 1, batch.temperature)
        e = np.einsum("rc,rac->ra", dsoft, zslice)
        pw_coef = qdiff * batch.commit_product_except(j).ravel()
        if w is not None:
            pw_coef = pw_coef * w
        pathwise_rows += pw_coef[:, None] * _relaxed_jacobian_apply(y_m, e, batch.temperature)

    logpsi = np.zeros_like(proposal_logits)
    pathwise = np.zeros_like(proposal_logits)
    scatter_rows(logpsi, s, logpsi_rows)
    scatter_rows(pathwise, s, pathwise_rows)
    n = batch.n_episodes
    return reinforce / n, logpsi / n, pathwise / n


def estimate_proposal_grad(batch: TrajectoryBatch, critic: CriticTable, policies,
                           step_weights=None) -> np.ndarray:
    i = critic.agent
    commit_tables = [p.commit_logits for p in policies]
    reinforce, logpsi, pathwise = proposal_grad_terms(
        batch, critic.values, policies[i].proposal_logits, commit_tables, i, step_weights)
    return reinforce + logpsi + pathwise


def ic_grad_tables(batch: TrajectoryBatch, critic_values_list, proposal_logits: np.ndarray,
                   agent: int, step_weights=None) -> np.ndarray:
    """Gradient of the hinged mutual-benefit penalty on one agent's proposals.

    Per step and per agent j the penalty is min(0, Q^j at the joint proposal
    minus Q^j at the counterfactual joint action); the gradient flows through
    the critic contracted with this agent's relaxed proposal coordinate and is
    zero wherever the hinge is inactive.
    """
    spec = batch.spec
    s = batch.states.ravel()
    flat_m = batch.flat_proposals.ravel()
    flat_a = batch.flat_counterfactuals.ravel()
    w = _row_weights(batch, step_weights)

    y_m = relaxed_soft(proposal_logits[s],
                       batch.proposal_noise[agent].reshape(-1, spec.action_sizes[agent]),
                       batch.temperature)
    idx = _axis_slice_index(batch, agent)
    rows = np.zeros((s.shape[0], spec.action_sizes[agent]))
    for q in critic_values_list:
        active = (q[s, flat_m] - q[s, flat_a] < 0.0).astype(np.float64)
        if w is not None:
            active = active * w
        wslice = q[s[:, None], idx]  # (rows, A_agent)
        rows += active[:, None] * _relaxed_jacobian_apply(y_m, wslice, batch.temperature)
    grad = np.zeros_like(proposal_logits)
    scatter_rows(grad, s, rows)
    return grad / batch.n_episodes


def estimate_ic_grad(batch: TrajectoryBatch, critics, policies, agent: int,
                     step_weights=None) -> np.ndarray:
    return ic_grad_tables(batch, [c.values for c in critics],
                          policies[agent].proposal_logits, agent, step_weights)
