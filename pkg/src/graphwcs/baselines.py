"""Heuristic allocation policies used as experts and comparison points.

Scheduling heuristics pick ceil(m/3) plants and share the total budget
m*p0 equally among them, so every baseline spends exactly m*p0 per step.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

from .channel import sinr

BASELINES = ("equal_power", "wmmse", "control_aware", "round_robin", "random_access")


def n_scheduled(m: int) -> int:
    return math.ceil(m / 3)


def equal_power(m: int, p0: float) -> np.ndarray:
    return np.full(m, float(p0))


def sum_rate(H, alpha, noise_var) -> float:
    return float(np.sum(np.log1p(sinr(H, alpha, noise_var))))


def wmmse(H, noise_var, p_max, iters=100, tol=1e-6, history=False):
    """Scalar-channel WMMSE power control for the sum-rate problem.

    ``H`` holds power gains (amplitudes are their square roots), optionally
    with leading batch axes. Starts from full power and runs block-coordinate
    MMSE updates until ``iters`` sweeps or until no amplitude of an instance
    moves by more than ``tol``; converged instances are frozen. With
    ``history=True`` also returns the power vector after every sweep.
    """
    H = np.asarray(H, dtype=float)
    m = H.shape[-1]
    batch = H.shape[:-2]
    p_max = np.broadcast_to(np.asarray(p_max, dtype=float), batch + (m,))
    g = np.sqrt(np.diagonal(H, axis1=-2, axis2=-1))
    vmax = np.sqrt(p_max)
    v = vmax.copy()
    active = np.ones(batch, dtype=bool)
    trace = [v ** 2]
    for _ in range(iters):
        denom = noise_var + np.einsum("...ij,...j->...i", H, v * v)
        u = g * v / denom
        w = 1.0 / (1.0 - u * g * v)
        num = w * u * g
        den = np.einsum("...ji,...j->...i", H, w * u * u)
        v_new = np.clip(np.divide(num, den, out=np.zeros_like(num), where=den > 0), 0.0, vmax)
        delta = np.max(np.abs(v_new - v), axis=-1)
        v = np.where(active[..., None], v_new, v)
        active = active & (delta >= tol)
        trace.append(v ** 2)
        if not active.any():
            break
    return (v ** 2, trace) if history else v ** 2


def budgeted_wmmse(H, noise_var, p0, iters=100, tol=1e-6):
    """WMMSE capped at p0 per link, rescaled to spend exactly m*p0."""
    m = np.shape(H)[-1]
    alpha = wmmse(H, noise_var, p0, iters, tol)
    total = alpha.sum(axis=-1, keepdims=True)
    safe = np.where(total > 0, total, 1.0)
    return np.where(total > 0, alpha * (m * p0 / safe), float(p0))


def control_aware(observations, count=None):
    """Indices of the plants with the largest observation norm (lowest index wins ties)."""
    norms = np.linalg.norm(np.asarray(observations, dtype=float), axis=-1)
    count = n_scheduled(len(norms)) if count is None else count
    order = np.argsort(-norms, kind="stable")
    return np.sort(order[:count])


@dataclasses.dataclass
class SchedulerState:
    cursor: int = 0
    rng: np.random.Generator | None = None
    cell_cursors: dict = dataclasses.field(default_factory=dict)


def round_robin(state: SchedulerState, m: int, count=None):
    count = n_scheduled(m) if count is None else count
    sel = (state.cursor + np.arange(count)) % m
    state.cursor = int((state.cursor + count) % m)
    return np.sort(sel)


def random_access(state: SchedulerState, m: int, count=None):
    count = n_scheduled(m) if count is None else count
    return np.sort(state.rng.choice(m, size=count, replace=False))


def selection_to_power(selection, m: int, p0: float) -> np.ndarray:
    alpha = np.zeros(m)
    selection = np.asarray(selection, dtype=int)
    if selection.size:
        alpha[selection] = m * p0 / selection.size
    return alpha


# one plant per cell ---------------------------------------------------------

def _cells(cells):
    cells = np.asarray(cells)
    return [np.flatnonzero(cells == c) for c in np.unique(cells)]


def control_aware_percell(observations, cells):
    norms = np.linalg.norm(np.asarray(observations, dtype=float), axis=-1)
    return np.array([idx[np.argmax(norms[idx])] for idx in _cells(cells)])


def round_robin_percell(state: SchedulerState, cells):
    out = []
    for c, idx in zip(np.unique(cells), _cells(cells)):
        cur = state.cell_cursors.get(int(c), 0)
        out.append(idx[cur % len(idx)])
        state.cell_cursors[int(c)] = (cur + 1) % len(idx)
    return np.array(out)


def random_access_percell(state: SchedulerState, cells):
    return np.array([state.rng.choice(idx) for idx in _cells(cells)])


class BaselinePolicy:
    """Callable ``(observations, H) -> allocation`` wrapping one heuristic.

    ``percell`` switches the scheduling heuristics to one plant per cell.
    """

    def __init__(self, name, m, p0, noise_var, rng=None, cells=None, percell=False, wmmse_iters=100):
        if name not in BASELINES:
            raise ValueError(f"unknown baseline {name!r}")
        self.name = name
        self.m, self.p0, self.noise_var = m, p0, noise_var
        self.cells = np.zeros(m, dtype=int) if cells is None else np.asarray(cells)
        self.percell = percell
        self.state = SchedulerState(rng=rng)
        self.wmmse_iters = wmmse_iters

    def __call__(self, observations, H):
        m, p0 = self.m, self.p0
        if self.name == "equal_power":
            return equal_power(m, p0)
        if self.name == "wmmse":
            return budgeted_wmmse(H, self.noise_var, p0, self.wmmse_iters)
        if self.percell:
            sel = {
                "control_aware": lambda: control_aware_percell(observations, self.cells),
                "round_robin": lambda: round_robin_percell(self.state, self.cells),
                "random_access": lambda: random_access_percell(self.state, self.cells),
            }[self.name]()
        else:
            sel = {
                "control_aware": lambda: control_aware(observations),
                "round_robin": lambda: round_robin(self.state, m),
                "random_access": lambda: random_access(self.state, m),
            }[self.name]()
        return selection_to_power(sel, m, p0)

    @property
    def stateless(self):
        return self.name in ("equal_power", "wmmse")

    def batch(self, observations, H):
        """Allocations for a batch of realizations sharing this policy's state."""
        if self.name == "wmmse":
            return budgeted_wmmse(H, self.noise_var, self.p0, self.wmmse_iters)
        return np.stack([self(o, h) for o, h in zip(observations, H)])
