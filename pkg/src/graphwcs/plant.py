"""Linear plants closed over a lossy actuation link.

States are stored plants-as-rows: an ``(m, p)`` array per realization
(extra leading axes are allowed everywhere and treated as independent
realizations).
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .reduce import node_sum, rowmap

DEFAULT_A = np.array([[1.05, 0.2, 0.2], [0.0, 1.05, 0.2], [0.0, 0.0, 1.05]])


@dataclasses.dataclass(frozen=True)
class PlantModel:
    A: np.ndarray
    B: np.ndarray
    W: np.ndarray
    W_o: np.ndarray

    def __post_init__(self):
        p = self.A.shape[0]
        if self.A.shape != (p, p) or self.B.shape[0] != p:
            raise ValueError("A must be p x p and B must have p rows")
        for name in ("W", "W_o"):
            M = getattr(self, name)
            if M.shape != (p, p) or not np.allclose(M, M.T):
                raise ValueError(f"{name} must be a symmetric p x p matrix")
            if np.linalg.eigvalsh(M).min() < -1e-12:
                raise ValueError(f"{name} must be positive semidefinite")
        for M in (self.A, self.B):
            if not np.all(np.isfinite(M)):
                raise ValueError("dynamics must be finite")

    @property
    def p(self):
        return self.A.shape[0]

    @property
    def q(self):
        return self.B.shape[1]

    @classmethod
    def default(cls, process_noise=1.0, obs_noise=0.01):
        I = np.eye(3)
        return cls(DEFAULT_A.copy(), I.copy(), process_noise * I, obs_noise * I)

    def noise_factors(self):
        """Square-root factors L with L L' = W (process) and W_o (observation)."""
        return _psd_factor(self.W), _psd_factor(self.W_o)


def _psd_factor(M):
    vals, vecs = np.linalg.eigh(M)
    return vecs * np.sqrt(np.clip(vals, 0.0, None))


@dataclasses.dataclass
class PlantEnsemble:
    states: np.ndarray  # (..., m, p)
    model: PlantModel
    gain: np.ndarray  # (q, p)

    @classmethod
    def create(cls, model: PlantModel, m: int, rng=None, gain=None, states=None):
        if m < 1:
            raise ValueError("need at least one plant")
        if states is None:
            states = rng.standard_normal((m, model.p))
        gain = model.A.copy() if gain is None else np.asarray(gain, dtype=float)
        if gain.shape != (model.q, model.p):
            raise ValueError("gain must be q x p")
        return cls(np.asarray(states, dtype=float), model, gain)

    @property
    def m(self):
        return self.states.shape[-2]


def observe(ensemble: PlantEnsemble, rng=None, noise=None):
    """Noisy observations x + w_o.

    ``noise`` may supply standard-normal draws of the state's shape, in
    which case ``rng`` is not touched.
    """
    if noise is None:
        noise = rng.standard_normal(ensemble.states.shape)
    _, L_o = ensemble.model.noise_factors()
    return ensemble.states + rowmap(noise, L_o.T)


def intended_control(observation, gain):
    """Deadbeat-style law u = -K x_hat (works row-wise on stacked observations)."""
    observation = np.asarray(observation, dtype=float)
    gain = np.asarray(gain, dtype=float)
    if observation.shape[-1] != gain.shape[1]:
        raise ValueError(f"observation has dimension {observation.shape[-1]}, gain expects {gain.shape[1]}")
    return -rowmap(observation, gain.T)


def step(ensemble: PlantEnsemble, observations, closures, rng=None, noise=None) -> PlantEnsemble:
    """Advance every plant one step; loops with closure 0 run open-loop."""
    closures = np.asarray(closures)
    if closures.shape != ensemble.states.shape[:-1]:
        raise ValueError("need one closure indicator per plant")
    model = ensemble.model
    if noise is None:
        noise = rng.standard_normal(ensemble.states.shape)
    L_w, _ = model.noise_factors()
    u = intended_control(observations, ensemble.gain) * closures[..., None]
    nxt = rowmap(ensemble.states, model.A.T) + rowmap(u, model.B.T) + rowmap(noise, L_w.T)
    return dataclasses.replace(ensemble, states=nxt)


def one_step_cost(ensemble_or_states, Q=None):
    """sum_i x_i' Q x_i over the plants (last two axes)."""
    x = ensemble_or_states.states if isinstance(ensemble_or_states, PlantEnsemble) else np.asarray(ensemble_or_states)
    Q = np.eye(x.shape[-1]) if Q is None else np.asarray(Q, dtype=float)
    return node_sum(_quad(x, Q), axis=-1)


def _quad(x, Q):
    # fixed-order accumulation keeps each plant's value independent of its row
    xq = rowmap(x, Q)
    acc = xq[..., 0] * x[..., 0]
    for j in range(1, x.shape[-1]):
        acc = acc + xq[..., j] * x[..., j]
    return acc
