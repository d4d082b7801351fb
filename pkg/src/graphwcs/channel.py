"""Fading, interference and loop-closure model for the actuation links.

Entry (i, j) of a fading matrix is the gain from the transmitter serving
plant j into the receiver of plant i; the diagonal holds the direct links.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .reduce import node_sum

MIN_DISTANCE = 1e-3


@dataclasses.dataclass(frozen=True)
class Topology:
    controller_positions: np.ndarray  # (n, 2)
    plant_positions: np.ndarray  # (m, 2)
    assignment: np.ndarray  # (m,) controller index serving each plant

    def __post_init__(self):
        a = np.asarray(self.assignment)
        if a.shape != (len(self.plant_positions),):
            raise ValueError("every plant needs exactly one controller")
        if a.size and (a.min() < 0 or a.max() >= len(self.controller_positions)):
            raise ValueError("assignment refers to an unknown controller")
        if not (np.all(np.isfinite(self.controller_positions)) and np.all(np.isfinite(self.plant_positions))):
            raise ValueError("positions must be finite")

    @property
    def m(self):
        return len(self.plant_positions)

    def permuted(self, perm):
        """Topology with plant i of the result equal to plant perm[i]."""
        perm = np.asarray(perm)
        return Topology(self.controller_positions, self.plant_positions[perm], np.asarray(self.assignment)[perm])


@dataclasses.dataclass(frozen=True)
class ChannelParams:
    pathloss: float = 1.5
    rayleigh_scale: float = 2.0
    noise_var: float = 1.0
    p0: float = 2.5

    def __post_init__(self):
        for f in dataclasses.fields(self):
            if not getattr(self, f.name) > 0:
                raise ValueError(f"{f.name} must be strictly positive")


def link_distances(topology: Topology) -> np.ndarray:
    """d[i, j]: distance from plant i to the controller serving plant j."""
    tx = np.asarray(topology.controller_positions)[np.asarray(topology.assignment)]
    rx = np.asarray(topology.plant_positions)
    diff = rx[:, None, :] - tx[None, :, :]
    return np.sqrt(diff[..., 0] ** 2 + diff[..., 1] ** 2)


def slow_fading(topology: Topology, pathloss: float) -> np.ndarray:
    d = np.maximum(link_distances(topology), MIN_DISTANCE)
    return d ** (-pathloss)


def sample_fast(m, rayleigh_scale, rng, size=()):
    return rng.rayleigh(rayleigh_scale, size=tuple(size) + (m, m))


def sample_fading(slow, rayleigh_scale, rng=None, fast=None):
    """Block-fading draw H = slow * f with f i.i.d. Rayleigh(scale).

    Pass ``fast`` to reuse a previous Rayleigh draw (coupled simulations).
    """
    slow = np.asarray(slow, dtype=float)
    if fast is None:
        fast = rng.rayleigh(rayleigh_scale, size=slow.shape)
    return slow * fast


def sinr(H, alpha, noise_var):
    H = np.asarray(H, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    diag = np.diagonal(H, axis1=-2, axis2=-1)
    received = H * alpha[..., None, :]
    # zero the direct term instead of subtracting it, so the interference
    # sum never picks up cancellation error
    m = H.shape[-1]
    interference = node_sum(np.where(np.eye(m, dtype=bool), 0.0, received), axis=-1)
    return diag * alpha / (noise_var + interference)


def success_prob(xi):
    return -np.expm1(-np.asarray(xi, dtype=float))


def sample_closures(v, rng=None, uniforms=None):
    """Bernoulli(v_i) loop closures; ``uniforms`` allows coupled draws."""
    v = np.asarray(v, dtype=float)
    if uniforms is None:
        uniforms = rng.random(v.shape)
    return (uniforms < v).astype(np.int8)
