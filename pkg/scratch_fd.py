"""Scratch FD verification of the pathwise estimator terms (pre-test sanity)."""
import numpy as np

from commitgame import envs, game, oracle
from commitgame import policies as P
from commitgame import estimators as E


def random_instance(rng, n_agents, sizes):
    n_joint = int(np.prod(sizes))
    rewards = rng.normal(size=(1, *sizes, n_agents))
    transitions = np.ones((1, *sizes, 1))
    spec = game.GameSpec(n_agents=n_agents, n_states=1, action_sizes=tuple(sizes),
                         rewards=rewards, transitions=transitions, gamma=1.0, horizon=1)
    pol = P.init_policies(spec)
    for p in pol:
        p.proposal_logits += rng.normal(size=p.proposal_logits.shape)
        p.commit_logits += rng.normal(size=p.commit_logits.shape)
        p.action_logits += rng.normal(size=p.action_logits.shape)
    critics = [P.CriticTable(i, rng.normal(size=(1, n_joint))) for i in range(n_agents)]
    return spec, pol, critics


def rel_err(a, b, floor=1e-8):
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return np.max(np.abs(a - b) / denom)


rng = np.random.default_rng(0)
worst = {"zeta_pw": 0, "eta_logpsi": 0, "eta_pw": 0, "ic": 0}
for trial in range(30):
    n_agents = int(rng.integers(2, 4))
    sizes = [int(rng.integers(2, 4)) for _ in range(n_agents)]
    spec, pol, critics = random_instance(rng, n_agents, sizes)
    tau = float(rng.uniform(0.5, 4.0))
    batch = game.rollout_batch(spec, pol, 8, tau, rng)
    agent = int(rng.integers(n_agents))
    cv = critics[agent].values
    commit_tables = [p.commit_logits for p in pol]

    s = batch.states.ravel()
    flat_m = batch.flat_proposals.ravel()
    flat_a = batch.flat_counterfactuals.ravel()
    qm = cv[s, flat_m]; qa = cv[s, flat_a]
    allc = batch.all_commit.ravel().astype(float)
    mix = allc * qm + (1 - allc) * qa
    nB = batch.n_episodes
    g_c = [batch.commit_noise[:, :, j].reshape(-1, 2) for j in range(n_agents)]
    g_m = batch.proposal_noise[agent].reshape(-1, sizes[agent])
    prodexc = [batch.commit_product_except(j).ravel().astype(float) for j in range(n_agents)]
    stride = spec.strides[agent]
    m_i = batch.proposals[agent].ravel()
    idx = flat_m[:, None] + (np.arange(sizes[agent])[None, :] - m_i[:, None]) * stride

    # --- zeta pathwise
    _, pw = E.commitment_grad_terms(batch, cv, pol[agent].commit_logits, agent)

    def f_zeta(z):
        y = P.relaxed_soft(z[s, flat_m], g_c[agent], tau)
        return float(np.sum(prodexc[agent] * (qm - qa) * y[:, 1]) / nB)

    fd = oracle.finite_difference_grad(f_zeta, pol[agent].commit_logits.copy(), 1e-6)
    worst["zeta_pw"] = max(worst["zeta_pw"], rel_err(pw, fd))

    # --- eta terms
    _, logpsi, pw_eta = E.proposal_grad_terms(batch, cv, pol[agent].proposal_logits,
                                              commit_tables, agent)

    def lhat(eta, j):
        y_m = P.relaxed_soft(eta[s], g_m, tau)  # (R, A)
        zsl = commit_tables[j][s[:, None], idx]  # (R, A, 2)
        return np.einsum("ra,rac->rc", y_m, zsl)

    def f_logpsi(eta):
        acc = 0.0
        for j in range(n_agents):
            lp = P.log_softmax(lhat(eta, j))
            c_j = batch.commits[:, :, j].ravel()
            acc += np.sum(mix * lp[np.arange(len(s)), c_j])
        return float(acc / nB)

    fd = oracle.finite_difference_grad(f_logpsi, pol[agent].proposal_logits.copy(), 1e-6)
    worst["eta_logpsi"] = max(worst["eta_logpsi"], rel_err(logpsi, fd))

    def f_eta_pw(eta):
        acc = 0.0
        for j in range(n_agents):
            y = P.softmax((lhat(eta, j) + g_c[j]) / tau)
            acc += np.sum(prodexc[j] * (qm - qa) * y[:, 1])
        return float(acc / nB)

    fd = oracle.finite_difference_grad(f_eta_pw, pol[agent].proposal_logits.copy(), 1e-6)
    worst["eta_pw"] = max(worst["eta_pw"], rel_err(pw_eta, fd))

    # --- IC (skip kink-adjacent rows by construction check)
    margins = np.stack([c.values[s, flat_m] - c.values[s, flat_a] for c in critics])
    if np.min(np.abs(margins)) < 1e-3:
        continue
    ic = E.ic_grad_tables(batch, [c.values for c in critics], pol[agent].proposal_logits, agent)

    def f_ic(eta):
        y_m = P.relaxed_soft(eta[s], g_m, tau)
        acc = 0.0
        for c in critics:
            qhat = np.einsum("ra,ra->r", y_m, c.values[s[:, None], idx])
            acc += np.sum(np.minimum(0.0, qhat - c.values[s, flat_a]))
        return float(acc / nB)

    fd = oracle.finite_difference_grad(f_ic, pol[agent].proposal_logits.copy(), 1e-6)
    worst["ic"] = max(worst["ic"], rel_err(ic, fd))

print("worst relative errors:", {k: f"{v:.2e}" for k, v in worst.items()})
