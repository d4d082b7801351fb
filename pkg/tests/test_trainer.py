import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from graphwcs import gnn, policy, trainer
from graphwcs.proptest import _fd_grad
from graphwcs.scenarios import ScenarioConfig, make_environment

ARCH = gnn.Architecture.uniform(2, 2, 3)


def power_actor(rng, bias=0.0, log_std=-0.5, arch=ARCH):
    return policy.Actor(arch, gnn.init_params(arch, rng), policy.PolicyHead("power", 2.5), np.array([bias, log_std]))


def small_cfg(**kw):
    base = dict(m=4, T_train=6, N=3, t_max=3, E_RL=3, E_IL=0, layers=2, taps=2, hidden=3, reps=2, T_eval=5)
    return ScenarioConfig.defaults("adhoc", **(base | kw))


def batch_for(actor, rng, B=5, m=3, adv=None, shift=0.0):
    f, H = rng.random((B, m, 1)), rng.random((B, m, m))
    s = policy.act(actor, f, H, rng)
    return {"features": f, "H": H, "action": s, "old_log_prob": s.log_prob + shift,
            "advantages": rng.standard_normal(B) if adv is None else adv}


def brute_targets(rewards, bootstrap, gamma):
    """Literal windowed sum: each step's discounted remaining rewards plus the discounted bootstrap."""
    T = len(rewards)
    out = np.zeros_like(rewards)
    for t in range(T):
        acc = sum(gamma ** (tau - t) * rewards[tau] for tau in range(t, T))
        out[t] = acc + gamma ** (T - t) * bootstrap
    return out


def test_penalized_cost_examples():
    assert trainer.penalized_cost(2.0, 3.0, 0.0) == 2.0
    assert trainer.penalized_cost(2.0, 3.0, 0.5) == 3.5
    assert trainer.penalized_cost(2.0, 0.0, 7.0) == 2.0
    np.testing.assert_array_equal(trainer.penalized_cost(np.ones(2), np.array([[1.0, 2.0], [0.0, 1.0]]), [1.0, 3.0]), [8.0, 4.0])


def test_n_step_returns_examples(rng):
    r = rng.standard_normal((4, 2))
    np.testing.assert_array_equal(trainer.n_step_returns(r, rng.standard_normal(2), 0.0), r)
    np.testing.assert_array_equal(trainer.n_step_returns(np.ones((3, 1)), 0.0, 1.0)[:, 0], [3.0, 2.0, 1.0])


@given(arrays(float, (5, 3), elements=st.floats(-10, 10)), arrays(float, 3, elements=st.floats(-10, 10)),
       st.floats(0, 1))
def test_n_step_returns_matches_oracle(rewards, boot, gamma):
    np.testing.assert_allclose(trainer.n_step_returns(rewards, boot, gamma), brute_targets(rewards, boot, gamma),
                               rtol=1e-12, atol=1e-12)


def test_advantages_examples(rng):
    t = rng.standard_normal(6)
    np.testing.assert_array_equal(trainer.advantages(t, t), np.zeros(6))
    np.testing.assert_array_equal(trainer.advantages(t, np.zeros(6)), t)
    r = rng.standard_normal((4, 1))
    lower = r.copy()
    lower[2] -= 1.0
    a = trainer.advantages(trainer.n_step_returns(r, 0.0, 0.9), np.zeros((4, 1)))
    b = trainer.advantages(trainer.n_step_returns(lower, 0.0, 0.9), np.zeros((4, 1)))
    assert b[2, 0] < a[2, 0]


def test_ppo_zero_advantage_is_stationary(rng):
    actor = power_actor(rng)
    batch = batch_for(actor, rng, adv=np.zeros(5))
    _, g = trainer.ppo_gradient(actor, batch, 0.2)
    assert all(np.all(v == 0) for v in g.values())
    new, _, ok = trainer.ppo_update(actor, batch, 0.2, trainer.Optimizer("sgd", 0.1))
    assert ok
    for a, b in zip(new.params, actor.params):
        np.testing.assert_array_equal(a, b)


def test_ppo_first_step_objective_is_mean_advantage(rng):
    actor = power_actor(rng)
    batch = batch_for(actor, rng)
    J = trainer.ppo_objective(actor, batch, 0.2)
    np.testing.assert_allclose(J, batch["advantages"].mean(), rtol=1e-12)


def _fd(actor, batch, eps):
    f = lambda d: float(trainer.ppo_objective(trainer._with_actor_params(actor, d), batch, eps))  # noqa: E731
    return _fd_grad(f, trainer.actor_params(actor), 1e-5)


def test_ppo_inside_band_gradient_is_ratio_times_advantage(rng):
    actor = power_actor(rng)
    batch = batch_for(actor, rng, B=1, adv=np.array([1.7]), shift=0.05)
    ratio = np.exp(policy.log_prob(actor, batch["features"], batch["H"], batch["action"]) - batch["old_log_prob"])
    assert 0.8 < ratio[0] < 1.2
    _, g = trainer.ppo_gradient(actor, batch, 0.2)
    fd = _fd(actor, batch, 0.2)
    for k in fd:
        np.testing.assert_allclose(g[k], fd[k], rtol=1e-5, atol=1e-8)
    # unclipped surrogate gives the same gradient inside the band
    fd_plain = _fd(actor, batch, 0.999999)
    for k in fd:
        np.testing.assert_allclose(g[k], fd_plain[k], rtol=1e-5, atol=1e-8)


@pytest.mark.parametrize("shift,adv", [(-1.0, -1.0), (1.0, 1.0)])
def test_ppo_clipped_branch_has_no_gradient(rng, shift, adv):
    # cost convention: the pessimistic term is the max; for a ratio far above the
    # band with a negative advantage (or far below with a positive one) the
    # clipped constant wins
    actor = power_actor(rng)
    batch = batch_for(actor, rng, B=1, adv=np.array([adv]), shift=shift)
    ratio = np.exp(-shift)
    assert ratio > 1.2 or ratio < 0.8
    J, g = trainer.ppo_gradient(actor, batch, 0.2)
    np.testing.assert_allclose(J, np.clip(ratio, 0.8, 1.2) * adv, rtol=1e-12)
    assert all(np.all(v == 0) for v in g.values())
    fd = _fd(actor, batch, 0.2)
    assert all(np.max(np.abs(v)) < 1e-9 for v in fd.values())


def test_ppo_sign_on_bandit(rng):
    """Higher latent costs more: one descent step must lower the mean score."""
    actor = power_actor(rng, arch=gnn.Architecture((1,), (1, 1), ("identity",)))
    actor.params[0][:] = 0.0
    f, H = np.ones((256, 1, 1)), np.ones((256, 1, 1))
    s = policy.act(actor, f, H, rng)
    cost = s.latent[:, 0]
    batch = {"features": f, "H": H, "action": s, "old_log_prob": s.log_prob, "advantages": cost - cost.mean()}
    new, _, _ = trainer.ppo_update(actor, batch, 0.2, trainer.Optimizer("sgd", 0.05))
    assert new.head_params[0] < actor.head_params[0]


def test_value_update_examples(rng):
    critic = policy.Critic.create(ARCH, rng)
    f, H = rng.random((6, 4, 1)), rng.random((6, 4, 4))
    V = policy.value(critic, f, H).V
    _, g = trainer.value_gradient(critic, f, H, V)
    assert all(np.all(v == 0) for v in g.values())
    # scalar toy: V = sum of per-node outputs, so dV/dbias = m
    targets = rng.standard_normal(6)
    _, g = trainer.value_gradient(critic, f, H, targets)
    np.testing.assert_allclose(g["critic.head"], [np.mean(2 * (V - targets) * 4)], rtol=1e-12)
    fd = _fd_grad(lambda d: float(trainer.value_loss(trainer._with_critic_params(critic, d), f, H, targets)),
                  trainer.critic_params(critic), 1e-5)
    for k in fd:
        np.testing.assert_allclose(g[k], fd[k], rtol=1e-5, atol=1e-8)
    opt = trainer.Optimizer("sgd", 1e-3)
    losses = []
    for _ in range(30):
        critic, loss, _ = trainer.value_update(critic, f, H, targets, opt)
        losses.append(loss)
    assert all(b <= a for a, b in zip(losses, losses[1:]))


def test_dual_update_examples(rng):
    d = trainer.dual_update(trainer.DualState(0.0), -np.ones((5, 3)), 0.9, 1.0)
    assert d.lam[0] == 0.0
    d = trainer.dual_update(trainer.DualState(0.0), np.ones((5, 3)), 0.0, 0.1)
    assert d.lam[0] == 0.1
    l = rng.standard_normal((7, 4))
    brute = np.mean([sum(0.9 ** t * l[t, n] for t in range(7)) for n in range(4)])
    np.testing.assert_allclose(trainer.dual_gradient(l, 0.9), [brute], rtol=1e-12)
    np.testing.assert_allclose(trainer.dual_gradient(l, 0.9, undiscounted=True), [l.sum(0).mean()], rtol=1e-12)
    with pytest.raises(ValueError):
        trainer.DualState(-1.0)


@given(st.floats(0, 10), arrays(float, (4, 2), elements=st.floats(-100, 100)), st.floats(1e-6, 10), st.floats(0, 1))
def test_dual_stays_nonnegative(lam, l, beta, gamma):
    assert trainer.dual_update(trainer.DualState(lam), l, gamma, beta).lam[0] >= 0.0


def test_optimizers(rng):
    p = {"x": np.ones(3)}
    g = {"x": np.array([1.0, -2.0, 0.0])}
    np.testing.assert_allclose(trainer.Optimizer("sgd", 0.5).step(dict(p), g)["x"], [0.5, 2.0, 1.0])
    out = trainer.Optimizer("adam", 0.1).step(dict(p), g)["x"]
    np.testing.assert_allclose(out, [0.9, 1.1, 1.0], rtol=1e-6)


class ConstantExpert:
    mode = "power"

    def __init__(self, value):
        self.value = value

    def __call__(self, obs, H):
        return np.full(len(obs), self.value)


class SelfExpert:
    mode = "power"

    def __init__(self, actor):
        self.actor = actor

    def __call__(self, obs, H):
        s, _ = policy.scores(self.actor, policy.build_features(obs), H)
        return np.logaddexp(0.0, s)


def test_dagger_self_imitation_is_stationary(rng):
    cfg = small_cfg()
    env = make_environment(cfg)
    actor = power_actor(rng, bias=1.0, arch=cfg.architecture)
    res = trainer.dagger_pretrain(env, actor, 3, cfg, expert=SelfExpert(actor))
    for a, b in zip(res.actor.params, actor.params):
        np.testing.assert_allclose(a, b, atol=1e-12)
    np.testing.assert_allclose(res.actor.head_params, actor.head_params, atol=1e-12)


def test_dagger_fits_constant_expert_and_grows_linearly():
    cfg = small_cfg(m=1, optimizer="adam", beta_il=0.05, dagger_steps=20, dagger_batch=64,
                    layers=1, taps=1, hidden=1)
    env = make_environment(cfg)
    actor = policy.Actor(cfg.architecture, gnn.zeros_params(cfg.architecture), policy.PolicyHead("power", 2.5),
                         np.array([0.0, -0.5]))
    res = trainer.dagger_pretrain(env, actor, 15, cfg, expert=ConstantExpert(3.0))
    assert res.dataset_sizes == [cfg.N * cfg.T_train * (i + 1) for i in range(15)]
    assert res.losses[-1] < res.losses[0]
    obs = np.random.default_rng(0).standard_normal((50, 1, 3))
    modes = np.logaddexp(0.0, policy.scores(res.actor, policy.build_features(obs), np.ones((50, 1, 1)))[0])
    np.testing.assert_allclose(modes, 3.0, rtol=0.05)


def test_dagger_rejects_mode_mismatch(rng):
    cfg = small_cfg()
    env = make_environment(cfg)
    actor = policy.Actor(cfg.architecture, gnn.init_params(cfg.architecture, rng), policy.PolicyHead("bernoulli", 2.5),
                         np.zeros(1))
    with pytest.raises(ValueError):
        trainer.dagger_pretrain(env, actor, 1, cfg, expert=ConstantExpert(1.0))


def test_train_zero_episodes_returns_initial_parameters():
    cfg = small_cfg(E_RL=0)
    env = make_environment(cfg)
    a0, c0 = trainer.init_agents(env, cfg, cfg.seed)
    res = trainer.train(cfg, env)
    assert res.log == []
    for a, b in zip(res.actor.params + res.critic.params, a0.params + c0.params):
        np.testing.assert_array_equal(a, b)


def test_train_is_deterministic():
    cfg = small_cfg(E_IL=2)
    a, b = trainer.train(cfg), trainer.train(cfg)
    assert a.log == b.log
    assert policy.dump_checkpoint(a.actor, a.critic) == policy.dump_checkpoint(b.actor, b.critic)
    assert len(a.log) == cfg.E_RL and all(len(r) == len(trainer.LOG_HEADER) for r in a.log)


def test_unconstrained_training_keeps_lambda_zero():
    cfg = small_cfg(head="bernoulli", constraint=False, lambda0=0.0)
    res = trainer.train(cfg)
    assert all(r[4] == 0.0 for r in res.log)


@pytest.mark.parametrize("head", ["bernoulli", "percell"])
def test_scheduling_heads_train(head):
    cfg = ScenarioConfig.defaults("multicell" if head == "bernoulli" else "multicell_distributed",
                                  n=2, k=3, m=6, T_train=5, N=2, t_max=5, E_RL=2, E_IL=1, layers=2, taps=2, hidden=3)
    res = trainer.train(cfg)
    assert len(res.log) == 2 and res.dagger.dataset_sizes == [10]
