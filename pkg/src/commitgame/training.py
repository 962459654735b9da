"""Training loops for the commitment learners.

Each iteration follows a fixed order: collect a batch of episodes against the
current policy snapshot, compute return tails, fit every critic on the batch,
estimate all policy gradients from the same snapshot, then update every
agent's parameters simultaneously. The proposal update combines the expected
return gradient with the hinged mutual-benefit penalty scaled by a fixed
multiplier, plus an annealed entropy bonus; policy tables step through Adam
(the learning rates in the experiment defaults are calibrated for adaptive
steps), while critics descend their mean squared error with plain gradient
steps inside fit_critic.

The decentralized variant gives each agent estimated copies of every other
agent's policy tables and critic, fit and updated from the shared batch alone;
those estimates stand in for the true opponent tables wherever the proposal
and penalty gradients need them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import estimators as est
from .errors import ConfigurationError, TrainingDivergedError
from .game import GameSpec, rollout_batch
from .metrics import MetricsRow, batch_metrics_row
from .policies import (AgentPolicies, CriticTable, entropy_grad_rows, fit_critic,
                       init_critics, init_policies, softmax)

MODES = ("centralized", "decentralized")


@dataclass
class TrainerConfig:
    iterations: int = 10000
    batch_size: int = 128
    lr_policy: float = 4e-4
    lr_value: float = 8e-4
    lambda_ic: float = 1.0
    ic_enabled: bool = True
    mode: str = "centralized"
    updates_per_iteration: int = 1
    gamma: float | None = None  # must match the game when set
    entropy_start: float = 1.0
    entropy_decay: float = 0.0005
    entropy_min: float = 0.0
    temperature_start: float = 10.0
    temperature_decay: float = 0.05
    temperature_min: float = 1.0
    entropy_on_proposal: bool = True
    entropy_on_commitment: bool = True
    entropy_on_action: bool = True
    discounted_state_weighting: bool = False
    grad_clip: float | None = None
    metrics_every: int = 1

    def validate(self, spec: GameSpec | None = None) -> None:
        if self.lr_policy <= 0 or self.lr_value <= 0:
            raise ConfigurationError("learning rates must be positive")
        if self.lambda_ic < 0:
            raise ConfigurationError("lambda_ic must be nonnegative")
        if self.iterations < 1 or self.batch_size < 1 or self.updates_per_iteration < 1:
            raise ConfigurationError("iterations, batch size and updates must be positive")
        if self.mode not in MODES:
            raise ConfigurationError(f"mode must be one of {MODES}")
        for name in ("entropy", "temperature"):
            decay = getattr(self, f"{name}_decay")
            start = getattr(self, f"{name}_start")
            floor = getattr(self, f"{name}_min")
            if decay < 0 or start < floor:
                raise ConfigurationError(f"{name} schedule must be nonincreasing to its floor")
        if self.temperature_min <= 0:
            raise ConfigurationError("temperature floor must be positive")
        if self.metrics_every < 1:
            raise ConfigurationError("metrics_every must be positive")
        if spec is not None and self.gamma is not None \
                and not math.isclose(self.gamma, spec.gamma, abs_tol=1e-12):
            raise ConfigurationError(
                f"config gamma {self.gamma} does not match game gamma {spec.gamma}")


def schedule(start: float, decay: float, floor: float, k: int) -> float:
    return max(start - decay * k, floor)


class Adam:
    """Adam ascent steps for one table; returns the increment to add."""

    def __init__(self, shape, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.t = 0

    def step(self, grad: np.ndarray) -> np.ndarray:
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        mhat = self.m / (1 - self.beta1 ** self.t)
        vhat = self.v / (1 - self.beta2 ** self.t)
        return self.lr * mhat / (np.sqrt(vhat) + self.eps)


@dataclass
class OpponentModel:
    """Agent `owner`'s estimate of agent `about`, never reading the true
    parameters; fit and updated from shared trajectories only."""

    owner: int
    about: int
    policies: AgentPolicies
    critic: CriticTable


@dataclass
class TrainResult:
    policies: list[AgentPolicies]
    critics: list[CriticTable]
    metrics: list[MetricsRow]
    opponent_models: dict = field(default_factory=dict)


def _clip(grad: np.ndarray, limit: float | None) -> np.ndarray:
    if limit is None:
        return grad
    norm = float(np.sqrt((grad * grad).sum()))
    if norm > limit > 0:
        return grad * (limit / norm)
    return grad


def _entropy_tables(batch, policies_i: AgentPolicies, config: TrainerConfig,
                    step_weights) -> dict[str, np.ndarray]:
    """Entropy-bonus ascent gradients at the visited states (and visited
    joint proposals, for the commitment policy)."""
    s = batch.states.ravel()
    w = est._row_weights(batch, step_weights)
    out = {}
    n = batch.n_episodes

    def scaled(rows):
        return rows if w is None else rows * w[:, None]

    if config.entropy_on_proposal:
        g = np.zeros_like(policies_i.proposal_logits)
        est.scatter_rows(g, s, scaled(entropy_grad_rows(softmax(policies_i.proposal_logits)[s])))
        out["proposal"] = g / n
    if config.entropy_on_commitment:
        flat_m = batch.flat_proposals.ravel()
        n_joint = policies_i.commit_logits.shape[1]
        rows = entropy_grad_rows(softmax(policies_i.commit_logits[s, flat_m]))
        g = np.zeros_like(policies_i.commit_logits)
        est.scatter_rows(g.reshape(-1, 2), s * n_joint + flat_m, scaled(rows))
        out["commitment"] = g / n
    if config.entropy_on_action:
        g = np.zeros_like(policies_i.action_logits)
        est.scatter_rows(g, s, scaled(entropy_grad_rows(softmax(policies_i.action_logits)[s])))
        out["action"] = g / n
    return out


def _check_finite(tables: dict[str, np.ndarray], iteration: int, label: str) -> None:
    for name, table in tables.items():
        if not np.all(np.isfinite(table)):
            raise TrainingDivergedError(
                f"non-finite {name} parameters for {label} at iteration {iteration}")


def _emit(rows, batch, k, config, seed, ent, tau):
    if (k + 1) % config.metrics_every == 0 or k == config.iterations - 1:
        rows.append(batch_metrics_row(batch, k + 1, seed, ent, tau))


def _step_weights(spec: GameSpec, config: TrainerConfig):
    if not config.discounted_state_weighting:
        return None
    return spec.gamma ** np.arange(spec.horizon)


def train_centralized(spec: GameSpec, config: TrainerConfig, seed: int,
                      initial_policies: list[AgentPolicies] | None = None) -> TrainResult:
    """Joint training with every agent differentiating through the true
    policies of the others."""
    config.validate(spec)
    rng = np.random.default_rng(seed)
    policies = [p.copy() for p in initial_policies] if initial_policies \
        else init_policies(spec)
    critics = init_critics(spec)
    opts = [{name: Adam(table.shape, config.lr_policy)
             for name, table in policies[i].tables().items()}
            for i in range(spec.n_agents)]
    weights = _step_weights(spec, config)
    rows: list[MetricsRow] = []
    for k in range(config.iterations):
        tau = schedule(config.temperature_start, config.temperature_decay,
                       config.temperature_min, k)
        ent = schedule(config.entropy_start, config.entropy_decay, config.entropy_min, k)
        batch = rollout_batch(spec, policies, config.batch_size, tau, rng)
        for critic in critics:
            fit_critic(critic, batch, config.lr_value, config.updates_per_iteration)
        updates = []
        for i in range(spec.n_agents):
            grads = {
                "action": est.estimate_action_grad(batch, critics[i], policies, weights),
                "commitment": est.estimate_commitment_grad(batch, critics[i], policies, weights),
                "proposal": est.estimate_proposal_grad(batch, critics[i], policies, weights),
            }
            if config.ic_enabled and config.lambda_ic > 0:
                grads["proposal"] = grads["proposal"] + config.lambda_ic * \
                    est.estimate_ic_grad(batch, critics, policies, i, weights)
            if ent > 0:
                for name, g in _entropy_tables(batch, policies[i], config, weights).items():
                    grads[name] = grads[name] + ent * g
            updates.append(grads)
        for i in range(spec.n_agents):
            tables = policies[i].tables()
            for name, grad in updates[i].items():
                tables[name] += opts[i][name].step(_clip(grad, config.grad_clip))
            _check_finite(tables, k, f"agent {i}")
        _emit(rows, batch, k, config, seed, ent, tau)
    return TrainResult(policies, critics, rows)


def train_decentralized(spec: GameSpec, config: TrainerConfig, seed: int,
                        initial_policies: list[AgentPolicies] | None = None) -> TrainResult:
    """Training with per-agent opponent models substituted for the true
    opponent tables in the proposal and penalty gradients."""
    config.validate(spec)
    rng = np.random.default_rng(seed)
    policies = [p.copy() for p in initial_policies] if initial_policies \
        else init_policies(spec)
    critics = init_critics(spec)
    models: dict[tuple[int, int], OpponentModel] = {}
    for i in range(spec.n_agents):
        for b in range(spec.n_agents):
            if b != i:
                models[(i, b)] = OpponentModel(
                    owner=i, about=b,
                    policies=init_policies(spec)[b],
                    critic=CriticTable(b, np.zeros((spec.n_states, spec.n_joint_actions))))
    opts = [{name: Adam(t.shape, config.lr_policy)
             for name, t in policies[i].tables().items()} for i in range(spec.n_agents)]
    opt_models = {key: {name: Adam(t.shape, config.lr_policy)
                        for name, t in model.policies.tables().items()}
                  for key, model in models.items()}
    weights = _step_weights(spec, config)

    def commit_mix(i):
        return [policies[j].commit_logits if j == i else models[(i, j)].policies.commit_logits
                for j in range(spec.n_agents)]

    def critic_mix(i):
        return [critics[j].values if j == i else models[(i, j)].critic.values
                for j in range(spec.n_agents)]

    rows: list[MetricsRow] = []
    for k in range(config.iterations):
        tau = schedule(config.temperature_start, config.temperature_decay,
                       config.temperature_min, k)
        ent = schedule(config.entropy_start, config.entropy_decay, config.entropy_min, k)
        batch = rollout_batch(spec, policies, config.batch_size, tau, rng)
        for critic in critics:
            fit_critic(critic, batch, config.lr_value, config.updates_per_iteration)
        for model in models.values():
            fit_critic(model.critic, batch, config.lr_value, config.updates_per_iteration)
        own_updates = []
        model_updates = {}
        for i in range(spec.n_agents):
            grads = {
                "action": est.estimate_action_grad(batch, critics[i], policies, weights),
                "commitment": est.estimate_commitment_grad(batch, critics[i], policies, weights),
            }
            reinforce, logpsi, pathwise = est.proposal_grad_terms(
                batch, critics[i].values, policies[i].proposal_logits, commit_mix(i), i,
                weights)
            grads["proposal"] = reinforce + logpsi + pathwise
            if config.ic_enabled and config.lambda_ic > 0:
                grads["proposal"] = grads["proposal"] + config.lambda_ic * est.ic_grad_tables(
                    batch, critic_mix(i), policies[i].proposal_logits, i, weights)
            if ent > 0:
                for name, g in _entropy_tables(batch, policies[i], config, weights).items():
                    grads[name] = grads[name] + ent * g
            own_updates.append(grads)
            for b in range(spec.n_agents):
                if b == i:
                    continue
                model = models[(i, b)]
                mg = {
                    "action": est.action_grad_tables(
                        batch, model.critic.values, model.policies.action_logits, b, weights),
                }
                mr, mp = est.commitment_grad_terms(
                    batch, model.critic.values, model.policies.commit_logits, b, weights)
                mg["commitment"] = mr + mp
                rr, lp, pw = est.proposal_grad_terms(
                    batch, model.critic.values, model.policies.proposal_logits,
                    commit_mix(i), b, weights)
                mg["proposal"] = rr + lp + pw
                if config.ic_enabled and config.lambda_ic > 0:
                    mg["proposal"] = mg["proposal"] + config.lambda_ic * est.ic_grad_tables(
                        batch, critic_mix(i), model.policies.proposal_logits, b, weights)
                if ent > 0:
                    for name, g in _entropy_tables(batch, model.policies, config,
                                                   weights).items():
                        mg[name] = mg[name] + ent * g
                model_updates[(i, b)] = mg
        for i in range(spec.n_agents):
            tables = policies[i].tables()
            for name, grad in own_updates[i].items():
                tables[name] += opts[i][name].step(_clip(grad, config.grad_clip))
            _check_finite(tables, k, f"agent {i}")
        for key, mg in model_updates.items():
            tables = models[key].policies.tables()
            for name, grad in mg.items():
                tables[name] += opt_models[key][name].step(_clip(grad, config.grad_clip))
            _check_finite(tables, k, f"model {key}")
        _emit(rows, batch, k, config, seed, ent, tau)
    return TrainResult(policies, critics, rows, opponent_models=models)


def train(spec: GameSpec, config: TrainerConfig, seed: int,
          initial_policies=None) -> TrainResult:
    if config.mode == "decentralized":
        return train_decentralized(spec, config, seed, initial_policies)
    return train_centralized(spec, config, seed, initial_policies)
