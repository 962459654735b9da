"""Independent policy-gradient learner, the no-commitment comparison.

Each agent maximizes its own return with a fitted joint-action critic as the
value coefficient; proposals and commitments are disabled, so every step
executes the independently sampled actions. This is the stand-in for the
independent-RL baseline: plain policy gradient reaches the same defection
equilibria in these small games without clipped-surrogate machinery.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import estimators as est
from .game import GameSpec, rollout_batch
from .metrics import MetricsRow
from .policies import CriticTable, fit_critic, init_critics, init_policies
from .training import (Adam, TrainerConfig, TrainResult, _check_finite, _clip, _emit,
                       _entropy_tables, _step_weights, schedule)


@dataclass
class IndependentAgentParams:
    """What the baseline actually learns: a fallback-action table and a
    joint-action critic (joint, so values are comparable with the
    commitment learners)."""

    agent: int
    action_logits: np.ndarray
    critic: CriticTable


def train_independent(spec: GameSpec, config: TrainerConfig, seed: int) -> TrainResult:
    config.validate(spec)
    rng = np.random.default_rng(seed)
    policies = init_policies(spec)  # proposal/commitment tables stay at init
    critics = init_critics(spec)
    params = [IndependentAgentParams(i, policies[i].action_logits, critics[i])
              for i in range(spec.n_agents)]
    opts = [Adam(p.action_logits.shape, config.lr_policy) for p in params]
    weights = _step_weights(spec, config)
    rows: list[MetricsRow] = []
    for k in range(config.iterations):
        ent = schedule(config.entropy_start, config.entropy_decay, config.entropy_min, k)
        tau = schedule(config.temperature_start, config.temperature_decay,
                       config.temperature_min, k)
        batch = rollout_batch(spec, policies, config.batch_size, tau, rng,
                              force_reject=True)
        for p in params:
            fit_critic(p.critic, batch, config.lr_value, config.updates_per_iteration)
        grads = []
        for p in params:
            g = est.action_grad_tables(batch, p.critic.values, p.action_logits,
                                       p.agent, weights)
            if ent > 0 and config.entropy_on_action:
                g = g + ent * _entropy_tables(batch, policies[p.agent], config,
                                              weights)["action"]
            grads.append(g)
        for p, opt, g in zip(params, opts, grads):
            p.action_logits += opt.step(_clip(g, config.grad_clip))
            _check_finite({"action": p.action_logits}, k, f"agent {p.agent}")
        _emit(rows, batch, k, config, seed, ent, tau)
    return TrainResult(policies, critics, rows)
