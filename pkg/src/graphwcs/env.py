"""Batched simulation of N independent realizations of one scenario.

Every realization owns its named random streams. All randomness for one
time step is drawn up front as a :class:`StepDraws` of per-node arrays, so
a relabelled copy of the system can be driven by the same draws in
relabelled order.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from . import channel, plant
from .scenarios import Environment, stream


class NumericalAbort(RuntimeError):
    pass


@dataclasses.dataclass
class StepDraws:
    fast: np.ndarray  # (N, m, m) Rayleigh factors
    obs: np.ndarray  # (N, m, p) standard normals
    policy: np.ndarray  # (N, m) normals (power head) or uniforms
    closure: np.ndarray  # (N, m) uniforms
    process: np.ndarray  # (N, m, p) standard normals

    def permuted(self, perm):
        perm = np.asarray(perm)
        return StepDraws(
            self.fast[..., perm, :][..., :, perm],
            self.obs[..., perm, :],
            self.policy[..., perm],
            self.closure[..., perm],
            self.process[..., perm, :],
        )


@dataclasses.dataclass
class StepResult:
    cost: np.ndarray  # c(x_{t+1}) per realization
    constraint: np.ndarray  # l(alpha_t) per realization
    closures: np.ndarray


class Simulator:
    def __init__(self, env: Environment, n_envs: int, seed: int, policy_noise: str | None = None):
        self.env = env
        self.n = n_envs
        self.policy_noise = policy_noise or ("normal" if env.head == "power" else "uniform")
        names = ("fading", "plant", "init", "closure", "policy")
        self.rngs = {name: [stream(seed, name, i) for i in range(n_envs)] for name in names}
        self.ensemble = None

    @property
    def states(self):
        return self.ensemble.states

    def reset(self, states=None):
        env = self.env
        if states is None:
            states = np.stack([r.standard_normal((env.m, env.model.p)) for r in self.rngs["init"]])
        self.ensemble = plant.PlantEnsemble.create(env.model, env.m, states=states)
        return self.states

    def draw(self) -> StepDraws:
        env, m, p = self.env, self.env.m, self.env.model.p
        fast = np.stack([r.rayleigh(env.chan.rayleigh_scale, size=(m, m)) for r in self.rngs["fading"]])
        obs, process = [], []
        for r in self.rngs["plant"]:
            obs.append(r.standard_normal((m, p)))
            process.append(r.standard_normal((m, p)))
        if self.policy_noise == "normal":
            pol = np.stack([r.standard_normal(m) for r in self.rngs["policy"]])
        else:
            pol = np.stack([r.random(m) for r in self.rngs["policy"]])
        clo = np.stack([r.random(m) for r in self.rngs["closure"]])
        return StepDraws(fast, np.stack(obs), pol, clo, np.stack(process))

    def observe(self, draws: StepDraws):
        H = channel.sample_fading(self.env.slow, self.env.chan.rayleigh_scale, fast=draws.fast)
        obs = plant.observe(self.ensemble, noise=draws.obs)
        return obs, H

    def advance(self, obs, H, alpha, draws: StepDraws) -> StepResult:
        env = self.env
        xi = channel.sinr(H, alpha, env.chan.noise_var)
        closures = channel.sample_closures(channel.success_prob(xi), uniforms=draws.closure)
        self.ensemble = plant.step(self.ensemble, obs, closures, noise=draws.process)
        if not np.all(np.isfinite(self.states)):
            raise NumericalAbort("plant states became non-finite")
        return StepResult(plant.one_step_cost(self.states, env.Q), env.constraint(alpha), closures)


def rollout(env: Environment, policy_fn, T: int, n_envs: int, seed: int, states=None):
    """Run ``T`` steps. ``policy_fn(obs, H, noise) -> alpha`` acts on the whole batch.

    Returns per-step costs of shape (T + 1, N) (including the initial state)
    and constraint values of shape (T, N).
    """
    sim = Simulator(env, n_envs, seed)
    sim.reset(states)
    costs = [plant.one_step_cost(sim.states, env.Q)]
    cons = []
    for _ in range(T):
        draws = sim.draw()
        obs, H = sim.observe(draws)
        alpha = policy_fn(obs, H, draws.policy)
        res = sim.advance(obs, H, alpha, draws)
        costs.append(res.cost)
        cons.append(res.constraint)
    return np.array(costs), np.array(cons).reshape(T, n_envs)
