"""Graph convolutional filters and random-edge graph neural networks.

Graph signals are arrays of shape ``(..., m, F)`` (one row per node) and
shift operators are ``(..., m, m)``; any leading batch axes are carried
through unchanged. A filter tensor is a list with one array per layer of
shape ``(K_l, F_{l-1}, F_l)``.
"""

from __future__ import annotations

import dataclasses
import io
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .reduce import node_sum


@dataclasses.dataclass(frozen=True)
class Architecture:
    taps: tuple[int, ...]
    features: tuple[int, ...]  # F_0, ..., F_L
    nonlinearities: tuple[str, ...]

    def __post_init__(self):
        if len(self.features) != len(self.taps) + 1 or len(self.nonlinearities) != len(self.taps):
            raise ValueError("architecture lists have inconsistent lengths")
        if min(self.taps) < 1 or min(self.features) < 1:
            raise ValueError("tap counts and feature counts must be >= 1")
        for name in self.nonlinearities:
            if name not in ad.NONLINEARITIES:
                raise ValueError(f"unknown nonlinearity {name!r}")

    @classmethod
    def uniform(cls, layers=3, taps=5, hidden=10, f_in=1, f_out=1, hidden_nonlinearity="relu", final="identity"):
        features = (f_in,) + (hidden,) * (layers - 1) + (f_out,)
        nonlin = (hidden_nonlinearity,) * (layers - 1) + (final,)
        return cls((taps,) * layers, features, nonlin)

    @property
    def n_layers(self):
        return len(self.taps)

    def layer_shape(self, l):
        return (self.taps[l], self.features[l], self.features[l + 1])


def param_count_gnn(arch: Architecture) -> int:
    return int(sum(K * fi * fo for K, fi, fo in (arch.layer_shape(l) for l in range(arch.n_layers))))


def param_count_nn(m: int, n_f: int, hidden: Sequence[int]) -> int:
    """Learnable parameters of a fully connected allocation network.

    ``hidden`` lists the unit counts K_1..K_L; the first layer sees all m
    node features plus the m*m interference entries.
    """
    hidden = list(hidden)
    if m < 1 or n_f < 1 or not hidden or min(hidden) < 1:
        raise ValueError("sizes must be positive")
    return m * (m + n_f) * hidden[0] + sum(hidden[l] * hidden[l - 1] for l in range(1, len(hidden)))


def init_params(arch: Architecture, rng: np.random.Generator) -> list[np.ndarray]:
    params = []
    for l in range(arch.n_layers):
        K, fi, fo = arch.layer_shape(l)
        a = (K * fi) ** -0.5
        params.append(rng.uniform(-a, a, size=(K, fi, fo)))
    return params


def zeros_params(arch: Architecture) -> list[np.ndarray]:
    return [np.zeros(arch.layer_shape(l)) for l in range(arch.n_layers)]


def flatten(params) -> np.ndarray:
    return np.concatenate([np.ravel(p) for p in params]) if params else np.zeros(0)


def unflatten(vec, arch: Architecture) -> list[np.ndarray]:
    vec = np.asarray(vec, dtype=float)
    if vec.size != param_count_gnn(arch):
        raise ValueError(f"expected {param_count_gnn(arch)} values, got {vec.size}")
    out, i = [], 0
    for l in range(arch.n_layers):
        shape = arch.layer_shape(l)
        n = int(np.prod(shape))
        out.append(vec[i:i + n].reshape(shape).copy())
        i += n
    return out


def graph_conv(S, y, taps):
    """sum_k S^k y taps[k], built from repeated shifts of ``y``."""
    K = np.shape(ad.value(taps))[0]
    if np.shape(ad.value(S))[-1] != np.shape(ad.value(y))[-2]:
        raise ValueError("shift operator and signal disagree on node count")
    if np.shape(ad.value(y))[-1] != np.shape(ad.value(taps))[1]:
        raise ValueError("signal features do not match the filter taps")
    z = ad.contract(y, taps[0])
    shifted = y
    for k in range(1, K):
        shifted = ad.shift(S, shifted)
        z = z + ad.contract(shifted, taps[k])
    return z


def regnn_forward(S, z0, params, arch: Architecture, tape: ad.Tape | None = None):
    """Multilayer REGNN output for shift operator ``S`` and input ``z0``.

    When ``tape`` is given, array parameters are recorded as leaves named
    ``layer0``, ``layer1``, ... so that :func:`autodiff.backward` returns
    their gradients.
    """
    if np.shape(ad.value(z0))[-1] != arch.features[0]:
        raise ValueError(f"input has {np.shape(ad.value(z0))[-1]} features, expected {arch.features[0]}")
    if len(params) != arch.n_layers:
        raise ValueError("parameter list does not match the architecture")
    if tape is not None:
        params = [p if isinstance(p, ad.Var) else tape.leaf(p, f"layer{l}") for l, p in enumerate(params)]
    y = z0
    for l in range(arch.n_layers):
        y = ad.NONLINEARITIES[arch.nonlinearities[l]](graph_conv(S, y, params[l]))
    return y


def normalize_gso(H):
    """Scale each shift operator by its largest row sum."""
    H = np.asarray(H, dtype=float)
    scale = node_sum(H, axis=-1).max(axis=-1)[..., None, None]
    return np.divide(H, scale, out=H.copy(), where=scale > 0)


def permute(perm, S, z):
    """Relabel nodes: returns (P^T S P, P^T z) with (P^T v)_i = v[perm[i]]."""
    perm = np.asarray(perm)
    if sorted(perm.tolist()) != list(range(len(perm))):
        raise ValueError("not a permutation")
    S = np.asarray(S)
    z = np.asarray(z)
    return S[..., perm, :][..., :, perm], z[..., perm, :] if z.ndim >= 2 else z[..., perm]


def inverse_permutation(perm):
    perm = np.asarray(perm)
    inv = np.empty_like(perm)
    inv[perm] = np.arange(len(perm))
    return inv


# -- checkpoint text format -------------------------------------------------

def _floats(values) -> str:
    return " ".join(format(float(v), ".17g") for v in np.ravel(values))


def dump_regnn(arch: Architecture, params, head=()) -> str:
    out = io.StringIO()
    out.write("REGNN v1\n")
    out.write(f"{arch.n_layers} {arch.features[0]}\n")
    for l in range(arch.n_layers):
        K, _, fo = arch.layer_shape(l)
        out.write(f"layer {l + 1} {K} {fo} {arch.nonlinearities[l]}\n")
        out.write(_floats(params[l]) + "\n")
    head = np.ravel(np.asarray(head, dtype=float))
    out.write(f"head {head.size}\n")
    out.write(_floats(head) + "\n")
    return out.getvalue()


def load_regnn(text: str):
    """Parse :func:`dump_regnn` output; returns (arch, params, head)."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0].strip() != "REGNN v1":
        raise ValueError("not a REGNN v1 block")
    L, f0 = (int(v) for v in lines[1].split())
    taps, feats, nonlin, raw = [], [f0], [], []
    i = 2
    for l in range(L):
        tag, idx, K, fo, name = lines[i].split()
        if tag != "layer" or int(idx) != l + 1:
            raise ValueError(f"bad layer header: {lines[i]!r}")
        taps.append(int(K))
        feats.append(int(fo))
        nonlin.append(name)
        raw.append(np.array([float(v) for v in lines[i + 1].split()]))
        i += 2
    arch = Architecture(tuple(taps), tuple(feats), tuple(nonlin))
    params = []
    for l, vals in enumerate(raw):
        shape = arch.layer_shape(l)
        if vals.size != np.prod(shape):
            raise ValueError(f"layer {l + 1}: expected {np.prod(shape)} values, got {vals.size}")
        params.append(vals.reshape(shape))
    tag, n = lines[i].split()
    if tag != "head":
        raise ValueError("missing head section")
    head = np.array([float(v) for v in lines[i + 1].split()]) if int(n) else np.zeros(0)
    if head.size != int(n):
        raise ValueError("head size mismatch")
    return arch, params, head
