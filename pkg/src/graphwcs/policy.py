"""Stochastic allocation policies and critics built on REGNN node scores.

Three action heads share the same graph network:

* ``bernoulli``: each plant transmits with probability sigmoid(score); the
  scheduled plants split the budget m*p0 equally.
* ``percell``: every cell schedules one plant, drawn from a softmax over the
  scores of its plants (sampled with Gumbel-max so node noise stays per node).
* ``power``: latent z ~ N(score, exp(log_std)^2) per plant, power = softplus(z).

All sampling noise is per node, so relabelling the nodes together with the
noise relabels the action.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

from . import autodiff as ad
from . import gnn
from .reduce import node_sum

MODES = ("bernoulli", "percell", "power")
_HALF_LOG_2PI = 0.5 * math.log(2 * math.pi)


@dataclasses.dataclass
class PolicyHead:
    mode: str
    p0: float
    cells: np.ndarray | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"invalid head mode {self.mode!r}")
        if self.mode == "percell" and self.cells is None:
            raise ValueError("percell head needs a cell assignment")

    @property
    def n_head_params(self):
        return {"bernoulli": 1, "percell": 0, "power": 2}[self.mode]


@dataclasses.dataclass
class Actor:
    arch: gnn.Architecture
    params: list
    head: PolicyHead
    head_params: np.ndarray  # [bias] | [] | [bias, log_std]

    @classmethod
    def create(cls, arch, head, rng, init_log_std=-0.5, init_bias=0.0):
        hp = {"bernoulli": [init_bias], "percell": [], "power": [init_bias, init_log_std]}[head.mode]
        return cls(arch, gnn.init_params(arch, rng), head, np.array(hp, dtype=float))

    def copy(self):
        return dataclasses.replace(self, params=[p.copy() for p in self.params], head_params=self.head_params.copy())


@dataclasses.dataclass
class Critic:
    arch: gnn.Architecture
    params: list
    head_params: np.ndarray  # [bias]

    @classmethod
    def create(cls, arch, rng):
        return cls(arch, gnn.init_params(arch, rng), np.zeros(1))

    def copy(self):
        return dataclasses.replace(self, params=[p.copy() for p in self.params], head_params=self.head_params.copy())


@dataclasses.dataclass
class ActionSample:
    alpha: np.ndarray
    log_prob: np.ndarray
    raw_scores: np.ndarray
    latent: np.ndarray  # power: pre-softplus draw; scheduling: 0/1 selection


@dataclasses.dataclass
class CriticOutput:
    per_node: np.ndarray
    V: np.ndarray


def build_features(observations):
    """Observation norm per plant, shape (..., m, 1)."""
    x = np.asarray(observations, dtype=float)
    sq = x[..., 0] * x[..., 0]
    for j in range(1, x.shape[-1]):
        sq = sq + x[..., j] * x[..., j]
    return np.sqrt(sq)[..., None]


def _leaves(tape, params, head_params, prefix):
    if tape is None:
        return params, head_params
    ps = [tape.leaf(p, f"{prefix}layer{l}") for l, p in enumerate(params)]
    return ps, tape.leaf(head_params, f"{prefix}head")


def scores(actor: Actor, features, H, tape=None, leaves=None):
    """Per-node scores (..., m), bias included. Returns (scores, head) where
    head is the head-parameter array or its tape leaf."""
    params, head = leaves if leaves is not None else _leaves(tape, actor.params, actor.head_params, "actor.")
    out = gnn.regnn_forward(gnn.normalize_gso(H), features, params, actor.arch)[..., 0]
    if actor.head.mode in ("bernoulli", "power"):
        out = out + head[0]
    return out, head


def _gumbel(u):
    return -np.log(-np.log(u))


def _share(selected, p0):
    m = selected.shape[-1]
    count = selected.sum(axis=-1, keepdims=True)
    return np.where(selected, m * p0 / np.maximum(count, 1), 0.0)


def act(actor: Actor, features, H, rng=None, noise=None) -> ActionSample:
    """Sample an allocation. ``noise`` gives per-node draws of shape (..., m):
    uniforms for the scheduling heads, standard normals for power."""
    mode = actor.head.mode
    s, _ = scores(actor, features, H)
    if noise is None:
        noise = rng.standard_normal(s.shape) if mode == "power" else rng.random(s.shape)
    if mode == "bernoulli":
        latent = (noise < ad._sigmoid(s)).astype(float)
        alpha = _share(latent > 0, actor.head.p0)
    elif mode == "percell":
        latent = _percell_choice(s + _gumbel(noise), actor.head.cells)
        alpha = _share(latent > 0, actor.head.p0)
    else:
        latent = s + math.exp(actor.head_params[1]) * noise
        alpha = np.logaddexp(0.0, latent)
    return ActionSample(alpha, _log_prob_from_scores(actor, s, actor.head_params, latent), s, latent)


def _percell_choice(perturbed, cells):
    cells = np.asarray(cells)
    out = np.zeros_like(perturbed)
    for c in np.unique(cells):
        idx = np.flatnonzero(cells == c)
        best = idx[np.argmax(perturbed[..., idx], axis=-1)]
        np.put_along_axis(out, best[..., None], 1.0, axis=-1)
    return out


def inverse_softplus(alpha):
    alpha = np.asarray(alpha, dtype=float)
    return alpha + np.log(-np.expm1(-alpha))


def log_prob(actor: Actor, features, H, action, tape=None, leaves=None, freeze_log_std=False):
    """Joint log-density of an action, one value per realization.

    ``action`` is an :class:`ActionSample` or a raw allocation array. With a
    tape the result is differentiable in the actor parameters.
    """
    s, head = scores(actor, features, H, tape=tape, leaves=leaves)
    if isinstance(action, ActionSample):
        latent = action.latent
    elif actor.head.mode == "power":
        latent = inverse_softplus(action)
    else:
        latent = (np.asarray(action) > 0).astype(float)
    return _log_prob_from_scores(actor, s, head, latent, freeze_log_std)


def _log_prob_from_scores(actor, s, head, latent, freeze_log_std=False):
    mode = actor.head.mode
    if mode == "bernoulli":
        lp = latent * ad.log_sigmoid(s) + (1.0 - latent) * ad.log_sigmoid(-s)
        return ad.sum(lp, axis=-1)
    if mode == "percell":
        return ad.sum(latent * ad.group_log_softmax(s, actor.head.cells), axis=-1)
    log_std = actor.head_params[1] if freeze_log_std or not isinstance(head, ad.Var) else head[1]
    diff = latent - s
    quad = ad.sum(ad.square(diff), axis=-1) * ad.exp(-2.0 * log_std)
    m = np.shape(latent)[-1]
    jac = node_sum(-np.logaddexp(0.0, -latent), axis=-1)  # log softplus'(z)
    return -0.5 * quad - m * log_std - (m * _HALF_LOG_2PI + jac)


def normalize_power(raw, p0):
    """softmax(raw) * m * p0 along the node axis."""
    raw = np.asarray(raw, dtype=float)
    m = raw.shape[-1]
    e = np.exp(raw - raw.max(axis=-1, keepdims=True))
    return e / node_sum(e, axis=-1)[..., None] * (m * p0)


def deploy_power(actor: Actor, features, H):
    """Deterministic power allocation spending exactly m*p0.

    The softmax acts on log softplus(score), i.e. the mean-latent powers are
    rescaled proportionally to the budget.
    """
    s, _ = scores(actor, features, H)
    return normalize_power(log_softplus(s), actor.head.p0)


def log_softplus(s):
    """log(log(1 + e^s)) without underflow; below -30 it equals s to 1e-13."""
    s = np.asarray(s, dtype=float)
    return np.where(s < -30.0, s, np.log(np.logaddexp(0.0, np.maximum(s, -30.0))))


def value(critic: Critic, features, H, tape=None, leaves=None) -> CriticOutput:
    params, head = leaves if leaves is not None else _leaves(tape, critic.params, critic.head_params, "critic.")
    per_node = gnn.regnn_forward(gnn.normalize_gso(H), features, params, critic.arch)[..., 0] + head[0]
    return CriticOutput(per_node, ad.sum(per_node, axis=-1))


# -- checkpoints --------------------------------------------------------------

def dump_checkpoint(actor: Actor, critic: Critic | None = None) -> str:
    text = f"[actor {actor.head.mode}]\n" + gnn.dump_regnn(actor.arch, actor.params, actor.head_params)
    if critic is not None:
        text += "[critic]\n" + gnn.dump_regnn(critic.arch, critic.params, critic.head_params)
    return text


def save_checkpoint(path, actor, critic=None):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dump_checkpoint(actor, critic))


def parse_checkpoint(text: str, p0: float, cells=None):
    """Returns (actor, critic or None). ``p0`` and ``cells`` come from the
    scenario: the filter taps do not depend on network size."""
    sections, current = {}, None
    for line in text.splitlines():
        if line.startswith("["):
            current = line.strip("[] \n").split()
            sections[current[0]] = (current, [])
        elif current is not None:
            sections[current[0]][1].append(line)
    if "actor" not in sections:
        raise ValueError("checkpoint has no actor section")
    (_, mode), lines = sections["actor"]
    arch, params, hp = gnn.load_regnn("\n".join(lines))
    head = PolicyHead(mode, p0, cells)
    if hp.size != head.n_head_params:
        raise ValueError("head parameter count does not match the head mode")
    actor = Actor(arch, params, head, hp)
    critic = None
    if "critic" in sections:
        carch, cparams, chp = gnn.load_regnn("\n".join(sections["critic"][1]))
        critic = Critic(carch, cparams, chp)
    return actor, critic


def load_checkpoint(path, p0, cells=None):
    with open(path, encoding="utf-8") as fh:
        return parse_checkpoint(fh.read(), p0, cells)
