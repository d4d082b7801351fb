"""Primal-dual graph reinforcement learning with optional DAgger warm start.

Sign conventions: everything here is a *cost*. A positive advantage means
the action did worse than the critic expected, and the PPO surrogate is
minimized, so its pessimistic clipped form takes the max of the clipped
and unclipped terms (the mirror image of the reward-maximizing min).
"""

from __future__ import annotations

import dataclasses
import logging
import time

import numpy as np

from . import autodiff as ad
from . import baselines, policy
from .env import NumericalAbort, Simulator
from .scenarios import Environment, ScenarioConfig, make_environment, stream

log = logging.getLogger(__name__)

LOG_HEADER = ("episode", "mean_cost", "std_cost", "mean_constraint", "lambda", "wall_ms")


@dataclasses.dataclass
class Hyperparams:
    gamma: float = 0.95
    T: int = 30
    N: int = 16
    t_max: int = 10
    clip_eps: float = 0.2
    beta_rl: float = 5e-5
    beta_value: float = 5e-5
    beta_il: float = 5e-4
    beta_lambda: float = 1e-5
    E_RL: int = 10000
    optimizer: str = "sgd"
    normalize_advantages: bool = True
    cost_scale: float = 1.0
    undiscounted_dual: bool = False

    @classmethod
    def from_config(cls, cfg: ScenarioConfig):
        return cls(cfg.gamma, cfg.T_train, cfg.N, cfg.t_max, cfg.clip_eps, cfg.beta_rl, cfg.beta_value,
                   cfg.beta_il, cfg.beta_lambda, cfg.E_RL, cfg.optimizer, cfg.normalize_advantages,
                   cfg.cost_scale, cfg.undiscounted_dual)


@dataclasses.dataclass
class DualState:
    lam: np.ndarray

    def __post_init__(self):
        self.lam = np.atleast_1d(np.asarray(self.lam, dtype=float))
        if np.any(self.lam < 0):
            raise ValueError("dual variables must be nonnegative")


class Optimizer:
    """Plain gradient descent, or Adam moments when ``kind == 'adam'``."""

    def __init__(self, kind="sgd", lr=1e-3, b1=0.9, b2=0.999, eps=1e-8):
        self.kind, self.lr, self.b1, self.b2, self.eps = kind, lr, b1, b2, eps
        self.t = 0
        self.m, self.v = {}, {}

    def step(self, params: dict, grads: dict):
        self.t += 1
        for name, g in grads.items():
            if self.kind == "sgd":
                params[name] = params[name] - self.lr * g
                continue
            m = self.m.get(name, np.zeros_like(g)) * self.b1 + (1 - self.b1) * g
            v = self.v.get(name, np.zeros_like(g)) * self.b2 + (1 - self.b2) * g * g
            self.m[name], self.v[name] = m, v
            mhat = m / (1 - self.b1 ** self.t)
            vhat = v / (1 - self.b2 ** self.t)
            params[name] = params[name] - self.lr * mhat / (np.sqrt(vhat) + self.eps)
        return params


# -- parameter plumbing --------------------------------------------------------

def actor_params(actor):
    d = {f"actor.layer{l}": p for l, p in enumerate(actor.params)}
    d["actor.head"] = actor.head_params
    return d


def critic_params(critic):
    d = {f"critic.layer{l}": p for l, p in enumerate(critic.params)}
    d["critic.head"] = critic.head_params
    return d


def _with_actor_params(actor, d):
    return dataclasses.replace(actor, params=[d[f"actor.layer{l}"] for l in range(len(actor.params))],
                               head_params=d["actor.head"])


def _with_critic_params(critic, d):
    return dataclasses.replace(critic, params=[d[f"critic.layer{l}"] for l in range(len(critic.params))],
                               head_params=d["critic.head"])


def _leaves(tape, d, prefix):
    n = sum(1 for k in d if k.startswith(prefix + "layer"))
    return [tape.leaf(d[f"{prefix}layer{l}"], f"{prefix}layer{l}") for l in range(n)], tape.leaf(d[f"{prefix}head"], f"{prefix}head")


def _finite(grads):
    return all(np.all(np.isfinite(g)) for g in grads.values())


# -- losses and their gradients -------------------------------------------------

def penalized_cost(c, l, lam):
    """c + lam' l; ``l`` may carry a trailing constraint axis."""
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    l = np.asarray(l, dtype=float)
    if l.ndim == 0 or l.shape[-1] != lam.size:
        l = l[..., None]
    return np.asarray(c, dtype=float) + l @ lam


def n_step_returns(rewards, bootstrap, gamma):
    """Discounted targets for one update window.

    ``rewards`` has shape (t_max, N) (time first); ``bootstrap`` is the
    critic value of the state that follows the window, or 0 when the window
    ends the episode. Each target discounts the bootstrap by the number of
    steps left in the window.
    """
    rewards = np.asarray(rewards, dtype=float)
    out = np.empty_like(rewards)
    R = np.asarray(bootstrap, dtype=float) * np.ones(rewards.shape[1:])
    for t in range(len(rewards) - 1, -1, -1):
        R = rewards[t] + gamma * R
        out[t] = R
    return out


def advantages(targets, values):
    return np.asarray(targets) - np.asarray(values)


def ppo_objective(actor, batch, eps, tape=None, leaves=None):
    """Mean over the batch of max(r*A, clip(r, 1-eps, 1+eps)*A)."""
    logp = policy.log_prob(actor, batch["features"], batch["H"], batch["action"], tape=tape, leaves=leaves)
    ratio = ad.exp(logp - batch["old_log_prob"])
    adv = batch["advantages"]
    return ad.mean(ad.maximum(ratio * adv, ad.clip(ratio, 1.0 - eps, 1.0 + eps) * adv))


def ppo_gradient(actor, batch, eps):
    tape = ad.Tape()
    leaves = _leaves(tape, actor_params(actor), "actor.")
    J = ppo_objective(actor, batch, eps, tape, leaves)
    tape.finalize(J)
    return float(J.value), ad.backward(tape)


def ppo_update(actor, batch, eps, opt: Optimizer):
    """One full-batch gradient step on the clipped surrogate.

    Returns (actor, objective, ok); ``ok`` is False when the gradient was
    not finite and the update was skipped.
    """
    J, grads = ppo_gradient(actor, batch, eps)
    if not _finite(grads):
        log.warning("non-finite policy gradient; update skipped")
        return actor, J, False
    return _with_actor_params(actor, opt.step(dict(actor_params(actor)), grads)), J, True


def value_loss(critic, features, H, targets, tape=None, leaves=None):
    V = policy.value(critic, features, H, tape=tape, leaves=leaves).V
    return ad.mean(ad.square(V - np.asarray(targets)))


def value_gradient(critic, features, H, targets):
    tape = ad.Tape()
    leaves = _leaves(tape, critic_params(critic), "critic.")
    loss = value_loss(critic, features, H, targets, tape, leaves)
    tape.finalize(loss)
    return float(loss.value), ad.backward(tape)


def value_update(critic, features, H, targets, opt: Optimizer):
    loss, grads = value_gradient(critic, features, H, targets)
    if not _finite(grads):
        log.warning("non-finite value gradient; update skipped")
        return critic, loss, False
    return _with_critic_params(critic, opt.step(dict(critic_params(critic)), grads)), loss, True


def dual_gradient(constraints, gamma, undiscounted=False):
    """Mean over realizations of the (discounted) constraint sum.

    ``constraints`` has shape (T, N) or (T, N, r).
    """
    c = np.asarray(constraints, dtype=float)
    disc = np.ones(len(c)) if undiscounted else gamma ** np.arange(len(c))
    per_env = np.tensordot(disc, c, axes=(0, 0))
    return np.atleast_1d(per_env.mean(axis=0))


def dual_update(dual: DualState, constraints, gamma, beta, undiscounted=False) -> DualState:
    g = dual_gradient(constraints, gamma, undiscounted)
    return DualState(np.maximum(dual.lam + beta * g, 0.0))


def imitation_loss(actor, features, H, expert_latent, tape=None, leaves=None):
    """Negative log-likelihood of expert actions (log-std held fixed)."""
    sample = policy.ActionSample(None, None, None, expert_latent)
    lp = policy.log_prob(actor, features, H, sample, tape=tape, leaves=leaves, freeze_log_std=True)
    return -ad.mean(lp)


def imitation_gradient(actor, features, H, expert_latent):
    tape = ad.Tape()
    leaves = _leaves(tape, actor_params(actor), "actor.")
    loss = imitation_loss(actor, features, H, expert_latent, tape, leaves)
    tape.finalize(loss)
    return float(loss.value), ad.backward(tape)


# -- DAgger ------------------------------------------------------------------------

EXPERT_FLOOR = 1e-3


def expert_latent(mode, alpha):
    """Latent target matching an expert allocation under the actor head."""
    alpha = np.asarray(alpha, dtype=float)
    if mode == "power":
        return policy.inverse_softplus(np.maximum(alpha, EXPERT_FLOOR))
    return (alpha > 0).astype(float)


def default_expert(env: Environment):
    """Heuristic the actor imitates: WMMSE for power heads, control-aware
    scheduling otherwise."""
    m, p0, cfg = env.m, env.chan.p0, env.config
    if env.head == "power":
        name = "wmmse"
    else:
        name = "control_aware"
    pol = baselines.BaselinePolicy(name, m, p0, env.chan.noise_var, cells=env.cells,
                                   percell=env.head == "percell", wmmse_iters=cfg.wmmse_iters)
    pol.mode = "power" if name == "wmmse" else env.head
    return pol


def _expert_batch(expert, obs, H):
    if hasattr(expert, "batch"):
        return expert.batch(obs, H)
    return np.stack([expert(o, h) for o, h in zip(obs, H)])


@dataclasses.dataclass
class DaggerResult:
    actor: policy.Actor
    losses: list
    dataset_sizes: list


def dagger_pretrain(env: Environment, actor, episodes, cfg: ScenarioConfig, expert=None, seed=0):
    """Dataset aggregation: roll out a mixture of expert and learner, label
    every visited state with the expert action, and fit the actor to the
    growing dataset by minibatch steps on the imitation loss."""
    expert = expert or default_expert(env)
    if getattr(expert, "mode", actor.head.mode) != actor.head.mode:
        raise ValueError(f"expert acts in {expert.mode!r} mode but the actor head is {actor.head.mode!r}")
    rng = stream(seed, "trainer", 1)
    opt = Optimizer(cfg.optimizer, cfg.beta_il)
    sim = Simulator(env, cfg.N, seed + 7919)
    data_f, data_H, data_z = [], [], []
    losses, sizes = [], []
    size = 0
    for it in range(episodes):
        mix = cfg.dagger_decay ** it
        sim.reset()
        for _ in range(cfg.T_train):
            draws = sim.draw()
            obs, H = sim.observe(draws)
            feats = policy.build_features(obs)
            expert_alpha = _expert_batch(expert, obs, H)
            learner = policy.act(actor, feats, H, noise=draws.policy).alpha
            use_expert = rng.random(sim.n) < mix
            alpha = np.where(use_expert[:, None], expert_alpha, learner)
            sim.advance(obs, H, alpha, draws)
            data_f.append(feats)
            data_H.append(H)
            data_z.append(expert_latent(actor.head.mode, expert_alpha))
            size += sim.n
        F, HH, Z = np.concatenate(data_f), np.concatenate(data_H), np.concatenate(data_z)
        data_f, data_H, data_z = [F], [HH], [Z]
        loss = np.nan
        for _ in range(cfg.dagger_steps):
            idx = rng.choice(size, size=min(cfg.dagger_batch, size), replace=False)
            loss, grads = imitation_gradient(actor, F[idx], HH[idx], Z[idx])
            if _finite(grads):
                actor = _with_actor_params(actor, opt.step(dict(actor_params(actor)), grads))
        losses.append(loss)
        sizes.append(size)
    return DaggerResult(actor, losses, sizes)


# -- main loop -----------------------------------------------------------------------

@dataclasses.dataclass
class TrainResult:
    actor: policy.Actor
    critic: policy.Critic
    dual: DualState
    log: list  # rows matching LOG_HEADER
    dagger: DaggerResult | None = None
    skipped_updates: int = 0


def init_agents(env: Environment, cfg: ScenarioConfig, seed: int):
    rng = stream(seed, "trainer", 0)
    arch = cfg.architecture
    head = policy.PolicyHead(env.head, env.chan.p0, env.cells if env.head == "percell" else None)
    actor = policy.Actor.create(arch, head, rng, init_log_std=cfg.init_log_std)
    critic = policy.Critic.create(arch, rng)
    return actor, critic


def train(cfg: ScenarioConfig, env: Environment | None = None, actor=None, critic=None, dagger=True,
          seed=None, on_episode=None, timing=False) -> TrainResult:
    seed = cfg.seed if seed is None else seed
    env = env or make_environment(cfg, seed)
    if actor is None or critic is None:
        a0, c0 = init_agents(env, cfg, seed)
        actor = actor or a0
        critic = critic or c0
    hp = Hyperparams.from_config(cfg)
    dres = None
    if dagger and cfg.E_IL > 0:
        dres = dagger_pretrain(env, actor, cfg.E_IL, cfg, seed=seed)
        actor = dres.actor
    dual = DualState(np.array([cfg.lambda0]))
    pol_opt = Optimizer(hp.optimizer, hp.beta_rl)
    val_opt = Optimizer(hp.optimizer, hp.beta_value)
    sim = Simulator(env, hp.N, seed)
    topo_rng = stream(seed, "topology", 1)
    rows, skipped = [], 0
    disc = hp.gamma ** np.arange(hp.T)
    for episode in range(hp.E_RL):
        t0 = time.perf_counter()
        if cfg.redraw_topology and episode > 0:
            env = env.redraw(topo_rng)
            sim.env = env
        sim.reset()
        buf = {k: [] for k in ("features", "H", "latent", "log_prob", "value", "cost", "constraint")}
        start = 0
        for t in range(hp.T + 1):
            if t < hp.T:
                draws = sim.draw()
                obs, H = sim.observe(draws)
                feats = policy.build_features(obs)
            if t > start and (t - start == hp.t_max or t == hp.T):
                boot = 0.0 if t == hp.T else policy.value(critic, feats, H).V
                actor, critic, ok = _window_update(actor, critic, buf, start, t, boot, dual, hp, pol_opt, val_opt)
                skipped += 2 - ok
                start = t
            if t == hp.T:
                break
            sample = policy.act(actor, feats, H, noise=draws.policy)
            res = sim.advance(obs, H, sample.alpha, draws)
            buf["features"].append(feats)
            buf["H"].append(H)
            buf["latent"].append(sample.latent)
            buf["log_prob"].append(sample.log_prob)
            buf["value"].append(policy.value(critic, feats, H).V)
            buf["cost"].append(res.cost)
            buf["constraint"].append(res.constraint)
        costs = np.array(buf["cost"])
        cons = np.array(buf["constraint"])
        if env.constraint_active:
            dual = dual_update(dual, cons, hp.gamma, hp.beta_lambda, hp.undiscounted_dual)
        ep_cost = disc @ costs
        ep_con = dual_gradient(cons, hp.gamma, hp.undiscounted_dual)[0]
        wall = (time.perf_counter() - t0) * 1e3 if timing else 0.0
        row = (episode, float(ep_cost.mean()), float(ep_cost.std()), float(ep_con), float(dual.lam[0]), float(wall))
        rows.append(row)
        if on_episode is not None:
            on_episode(row)
    return TrainResult(actor, critic, dual, rows, dres, skipped)


def _window_update(actor, critic, buf, start, end, bootstrap, dual, hp, pol_opt, val_opt):
    sl = slice(start, end)
    cost = np.array(buf["cost"][sl])
    con = np.array(buf["constraint"][sl])
    rewards = penalized_cost(cost, con, dual.lam) / hp.cost_scale
    targets = n_step_returns(rewards, bootstrap, hp.gamma)
    values = np.array(buf["value"][sl])
    adv = advantages(targets, values)
    flat = lambda key: np.concatenate(buf[key][sl])  # noqa: E731
    feats, H = flat("features"), flat("H")
    adv = adv.ravel()
    if hp.normalize_advantages and adv.size > 1:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    batch = {
        "features": feats,
        "H": H,
        "action": policy.ActionSample(None, None, None, flat("latent")),
        "old_log_prob": np.concatenate(buf["log_prob"][sl]),
        "advantages": adv,
    }
    actor, _, ok_p = ppo_update(actor, batch, hp.clip_eps, pol_opt)
    critic, _, ok_v = value_update(critic, feats, H, targets.ravel(), val_opt)
    return actor, critic, int(ok_p) + int(ok_v)


__all__ = [
    "DualState", "Hyperparams", "NumericalAbort", "Optimizer", "TrainResult", "advantages", "dagger_pretrain",
    "dual_update", "n_step_returns", "penalized_cost", "ppo_update", "train", "value_update",
]
