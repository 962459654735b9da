"""Exact verification machinery.

Everything here is enumeration, never sampling: closed-form expected values of
the three-stage protocol under arbitrary stochastic policies (backward
induction over the finite horizon), central finite differences for gradient
checking, and an exhaustive Nash / Pareto verifier over deterministic strategy
tuples. Routines refuse to run past a configurable size cap instead of
approximating.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolationError, EnumerationCapError
from .game import GameSpec
from .policies import AgentPolicies, softmax

DEFAULT_CAP = 1_000_000
_GAIN_TOL = 1e-9


def policy_probs(spec: GameSpec, policies: list[AgentPolicies]):
    """Per-agent (proposal, commitment, fallback) probability tables."""
    return [(softmax(p.proposal_logits), softmax(p.commit_logits), softmax(p.action_logits))
            for p in policies]


def _joint_row(rows) -> np.ndarray:
    """Outer product of per-agent probability rows, raveled in C order."""
    joint = np.ones(1)
    for row in rows:
        joint = (joint[:, None] * row[None, :]).ravel()
    return joint


def exact_state_values(spec: GameSpec, probs, cap: int = DEFAULT_CAP) -> np.ndarray:
    """Exact V[t, s, agent] for the finite-horizon protocol by backward
    induction; probs is the output format of policy_probs."""
    if spec.n_joint_actions > cap:
        raise EnumerationCapError(
            f"{spec.n_joint_actions} joint actions exceed the enumeration cap {cap}")
    v = np.zeros((spec.horizon + 1, spec.n_states, spec.n_agents))
    for t in range(spec.horizon - 1, -1, -1):
        for s in range(spec.n_states):
            q = spec.rewards_flat[s] + spec.gamma * spec.transitions_flat[s] @ v[t + 1]
            phi_joint = _joint_row([p[0][s] for p in probs])
            pi_joint = _joint_row([p[2][s] for p in probs])
            p_all = np.ones(spec.n_joint_actions)
            for p in probs:
                p_all = p_all * p[1][s, :, 1]
            v_indep = pi_joint @ q
            commit_mass = phi_joint * p_all
            v[t, s] = commit_mass @ q + (1.0 - commit_mass.sum()) * v_indep
    return v


def exact_value(spec: GameSpec, probs, cap: int = DEFAULT_CAP) -> np.ndarray:
    """Exact per-agent expected return from the start state."""
    return exact_state_values(spec, probs, cap)[0, spec.start_state].copy()


def finite_difference_grad(objective, params, epsilon: float = 1e-6):
    """Central-difference gradient of a scalar objective.

    params may be a single array or a dict of arrays; the returned gradient
    mirrors that structure. The objective must not mutate its argument.
    """
    if epsilon <= 0:
        raise ContractViolationError("epsilon must be positive")
    if isinstance(params, dict):
        return {k: finite_difference_grad(lambda arr, _k=k: objective({**params, _k: arr}),
                                          v, epsilon)
                for k, v in params.items()}
    params = np.asarray(params, dtype=np.float64)
    grad = np.zeros_like(params)
    flat = params.ravel()
    gflat = grad.ravel()
    for j in range(flat.size):
        orig = flat[j]
        flat[j] = orig + epsilon
        hi = objective(params)
        flat[j] = orig - epsilon
        lo = objective(params)
        flat[j] = orig
        gflat[j] = (hi - lo) / (2.0 * epsilon)
    return grad


@dataclass(frozen=True)
class DeterministicStrategy:
    """A pure strategy: one proposal per state, a 0/1 commit response to every
    (state, joint proposal), and one fallback action per state."""

    proposal: tuple[int, ...]
    commit_response: tuple[tuple[int, ...], ...]  # [state][flat joint proposal]
    fallback: tuple[int, ...]

    def describe(self, spec: GameSpec, agent: int) -> dict:
        return {
            "proposal": {spec.state_labels[s]: spec.action_labels[agent][self.proposal[s]]
                         for s in range(spec.n_states)},
            "commit_when": {f"{spec.state_labels[s]}|{spec.joint_label(m)}":
                            int(self.commit_response[s][m])
                            for s in range(spec.n_states)
                            for m in range(spec.n_joint_actions)},
            "fallback": {spec.state_labels[s]: spec.action_labels[agent][self.fallback[s]]
                         for s in range(spec.n_states)},
        }


def strategy_to_probs(spec: GameSpec, agent: int, strat: DeterministicStrategy):
    """Delta probability tables of a pure strategy (exact 0/1 masses)."""
    a = spec.action_sizes[agent]
    phi = np.zeros((spec.n_states, a))
    phi[np.arange(spec.n_states), list(strat.proposal)] = 1.0
    psi = np.zeros((spec.n_states, spec.n_joint_actions, 2))
    resp = np.asarray(strat.commit_response)
    psi[:, :, 1] = resp
    psi[:, :, 0] = 1.0 - resp
    pi = np.zeros((spec.n_states, a))
    pi[np.arange(spec.n_states), list(strat.fallback)] = 1.0
    return phi, psi, pi


def count_deterministic_strategies(spec: GameSpec, agent: int) -> int:
    a = spec.action_sizes[agent]
    return a ** spec.n_states * 2 ** (spec.n_states * spec.n_joint_actions) * a ** spec.n_states


def enumerate_deterministic_strategies(spec: GameSpec, agent: int,
                                       cap: int = DEFAULT_CAP):
    """All pure strategies of one agent, in a fixed deterministic order."""
    total = count_deterministic_strategies(spec, agent)
    if total > cap:
        raise EnumerationCapError(f"{total} strategies exceed the enumeration cap {cap}")
    a = spec.action_sizes[agent]
    j = spec.n_joint_actions
    proposals = itertools.product(range(a), repeat=spec.n_states)
    out = []
    for prop in proposals:
        for resp_flat in itertools.product((0, 1), repeat=spec.n_states * j):
            resp = tuple(tuple(resp_flat[s * j:(s + 1) * j]) for s in range(spec.n_states))
            for fb in itertools.product(range(a), repeat=spec.n_states):
                out.append(DeterministicStrategy(prop, resp, fb))
    return out


def _tuple_value(spec: GameSpec, strategies, cap: int) -> np.ndarray:
    # single-state one-shot games resolve in O(1) without induction
    if spec.n_states == 1 and spec.horizon == 1:
        m = tuple(st.proposal[0] for st in strategies)
        flat_m = int(spec.ravel_joint(m))
        if all(st.commit_response[0][flat_m] == 1 for st in strategies):
            executed = flat_m
        else:
            executed = int(spec.ravel_joint(tuple(st.fallback[0] for st in strategies)))
        return spec.rewards_flat[0, executed].copy()
    probs = [strategy_to_probs(spec, i, st) for i, st in enumerate(strategies)]
    return exact_value(spec, probs, cap)


@dataclass
class EquilibriumReport:
    """Outcome of an exhaustive unilateral-deviation and Pareto scan."""

    strategies: tuple[DeterministicStrategy, ...]
    values: np.ndarray
    is_nash: bool
    is_pareto_optimal: bool
    deviations: list = field(default_factory=list)  # (agent, strategy, gain), gain > 0
    deviations_scanned: tuple[int, ...] = ()

    def to_dict(self, spec: GameSpec) -> dict:
        return {
            "strategies": [st.describe(spec, i) for i, st in enumerate(self.strategies)],
            "values": [float(v) for v in self.values],
            "is_nash": bool(self.is_nash),
            "is_pareto_optimal": bool(self.is_pareto_optimal),
            "deviations_scanned": list(self.deviations_scanned),
            "improving_deviations": [
                {"agent": agent, "gain": float(gain), "strategy": st.describe(spec, agent)}
                for agent, st, gain in self.deviations],
        }


def deviation_gains(spec: GameSpec, strategies, agent: int, cap: int = DEFAULT_CAP):
    """Value gain of every unilateral deviation of one agent (including the
    strategy it already plays, whose gain is zero)."""
    base = _tuple_value(spec, strategies, cap)
    gains = []
    for alt in enumerate_deterministic_strategies(spec, agent, cap):
        devd = list(strategies)
        devd[agent] = alt
        gains.append((alt, float(_tuple_value(spec, devd, cap)[agent] - base[agent])))
    return gains


def verify_equilibrium(spec: GameSpec, strategies, cap: int = DEFAULT_CAP) -> EquilibriumReport:
    """Check a pure strategy tuple for Nash stability and Pareto optimality.

    Nash: no unilateral deterministic deviation strictly improves the deviating
    agent's exact value. Pareto: no deterministic strategy tuple yields an
    outcome that makes some agent strictly better off and none worse off.
    """
    strategies = tuple(strategies)
    if len(strategies) != spec.n_agents:
        raise ContractViolationError("one strategy per agent required")
    values = _tuple_value(spec, strategies, cap)
    deviations = []
    scanned = []
    for i in range(spec.n_agents):
        gains = deviation_gains(spec, strategies, i, cap)
        scanned.append(len(gains))
        for alt, gain in gains:
            if gain > _GAIN_TOL:
                deviations.append((i, alt, gain))
    total_tuples = 1
    for i in range(spec.n_agents):
        total_tuples *= count_deterministic_strategies(spec, i)
    if total_tuples > cap:
        raise EnumerationCapError(
            f"{total_tuples} strategy tuples exceed the enumeration cap {cap}")
    pareto = True
    per_agent = [enumerate_deterministic_strategies(spec, i, cap)
                 for i in range(spec.n_agents)]
    for combo in itertools.product(*per_agent):
        outcome = _tuple_value(spec, combo, cap)
        if np.all(outcome >= values - _GAIN_TOL) and np.any(outcome > values + _GAIN_TOL):
            pareto = False
            break
    return EquilibriumReport(
        strategies=strategies, values=values,
        is_nash=not deviations, is_pareto_optimal=pareto,
        deviations=deviations, deviations_scanned=tuple(scanned),
    )


def pd_starred_strategy(spec: GameSpec, agent: int, commit_on_dd: int) -> DeterministicStrategy:
    """The cooperative commitment strategy of the one-shot dilemma: propose
    cooperation, commit exactly when the co-player proposed cooperation (the
    response to mutual defection proposals is a free bit), defect as fallback.
    """
    c, d = 0, 1
    other = 1 - agent
    resp = []
    for flat in range(spec.n_joint_actions):
        joint = spec.unravel_joint(flat)
        if joint[other] == c:
            resp.append(1)
        elif joint[agent] == d and joint[other] == d:
            resp.append(int(commit_on_dd))
        else:
            resp.append(0)
    return DeterministicStrategy(proposal=(c,), commit_response=(tuple(resp),),
                                 fallback=(d,))


def pd_mutual_defection_strategy(spec: GameSpec) -> DeterministicStrategy:
    """Propose defection, reject every joint proposal, defect as fallback."""
    d = 1
    return DeterministicStrategy(
        proposal=(d,), commit_response=((0,) * spec.n_joint_actions,), fallback=(d,))


def named_pd_tuples(spec: GameSpec) -> dict[str, list]:
    """The named strategy tuples exposed on the command line."""
    starred = [
        [pd_starred_strategy(spec, 0, bit0), pd_starred_strategy(spec, 1, bit1)]
        for bit0 in (0, 1) for bit1 in (0, 1)
    ]
    defect = [[pd_mutual_defection_strategy(spec), pd_mutual_defection_strategy(spec)]]
    return {"starred": starred, "mutual-defect": defect}
