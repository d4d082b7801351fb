"""Policy evaluation over independent rollouts."""

from __future__ import annotations

import dataclasses

import numpy as np

from . import baselines, policy
from .env import rollout
from .scenarios import Environment, stream

EVAL_HEADER = ("policy", "mean_cost_per_plant", "std_cost_per_plant", "mean_constraint", "reps")


def learned_policy_fn(actor: policy.Actor, deterministic_power=True):
    """Batch policy for rollouts. Power heads are deployed through the
    budget-normalizing softmax; scheduling heads sample their distribution."""
    def fn(obs, H, noise):
        feats = policy.build_features(obs)
        if actor.head.mode == "power" and deterministic_power:
            return policy.deploy_power(actor, feats, H)
        return policy.act(actor, feats, H, noise=noise).alpha
    return fn


def baseline_policy_fn(name, env: Environment, n_envs: int, seed: int):
    percell = env.head == "percell"
    shared = baselines.BaselinePolicy(name, env.m, env.chan.p0, env.chan.noise_var, cells=env.cells,
                                      percell=percell, wmmse_iters=env.config.wmmse_iters)
    if shared.stateless:
        return lambda obs, H, noise: shared.batch(obs, H)
    pols = [
        baselines.BaselinePolicy(name, env.m, env.chan.p0, env.chan.noise_var, rng=stream(seed, "baseline", i),
                                 cells=env.cells, percell=percell, wmmse_iters=env.config.wmmse_iters)
        for i in range(n_envs)
    ]

    def fn(obs, H, noise):
        return np.stack([p(obs[i], H[i]) for i, p in enumerate(pols)])
    return fn


@dataclasses.dataclass
class EvalRow:
    policy: str
    mean_cost_per_plant: float
    std_cost_per_plant: float
    mean_constraint: float
    reps: int
    per_rep: np.ndarray = dataclasses.field(repr=False, default=None)

    def as_tuple(self):
        return (self.policy, self.mean_cost_per_plant, self.std_cost_per_plant, self.mean_constraint, self.reps)


def evaluate_fn(env: Environment, name, fn, T, reps, seed) -> EvalRow:
    costs, cons = rollout(env, fn, T, reps, seed)
    per_rep = costs.sum(axis=0) / env.m
    return EvalRow(name, float(per_rep.mean()), float(per_rep.std()), float(cons.sum(axis=0).mean()), reps, per_rep)


def evaluate(env: Environment, actor=None, baseline_names=(), T=80, reps=10, seed=0, label="regnn"):
    """Evaluate the learned policy (if given) and each named baseline on the
    same seeds, so every policy sees identical initial states and fading."""
    rows = []
    if actor is not None:
        rows.append(evaluate_fn(env, label, learned_policy_fn(actor), T, reps, seed))
    for name in baseline_names:
        rows.append(evaluate_fn(env, name, baseline_policy_fn(name, env, reps, seed), T, reps, seed))
    return rows
