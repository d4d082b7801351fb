"""Reductions over the node axis.

By default sums and shifts go through numpy/BLAS. Inside
``canonical_reductions()`` every reduction over nodes sums its terms in
sorted order, so the result depends only on the multiset of terms and not
on how the nodes are labelled. This is what makes a relabelled system
reproduce the original one bit for bit.
"""

from __future__ import annotations

import contextlib
import contextvars

import numpy as np

_CANONICAL = contextvars.ContextVar("graphwcs_canonical", default=False)


@contextlib.contextmanager
def canonical_reductions(enabled: bool = True):
    token = _CANONICAL.set(enabled)
    try:
        yield
    finally:
        _CANONICAL.reset(token)


def is_canonical() -> bool:
    return _CANONICAL.get()


def _sorted_sum(x, axis):
    # numpy's own reductions may block or vectorize differently depending on
    # where a row sits in memory; a plain left-to-right loop over sorted terms
    # rounds identically for every row
    xs = np.moveaxis(np.sort(x, axis=axis), axis, 0)
    if xs.shape[0] == 0:
        return np.zeros(xs.shape[1:])
    acc = xs[0].copy()
    for term in xs[1:]:
        acc += term
    return acc


def node_sum(x, axis=-1):
    """Sum along ``axis``; label-independent in canonical mode."""
    x = np.asarray(x, dtype=float)
    if _CANONICAL.get():
        return _sorted_sum(x, axis)
    return x.sum(axis=axis)


def shift(S, y):
    """Graph shift ``S @ y`` for ``S`` (..., m, m) and ``y`` (..., m, F)."""
    if _CANONICAL.get():
        return _sorted_sum(S[..., :, :, None] * y[..., None, :, :], -2)
    return S @ y


def rowmap(x, M):
    """Per-row linear map ``x @ M`` for ``M`` of shape (F_in, F_out).

    BLAS kernels may round a row differently depending on where it sits in
    the array, so canonical mode accumulates the inner dimension in a fixed
    order with elementwise operations only.
    """
    if _CANONICAL.get():
        x = np.asarray(x, dtype=float)
        M = np.asarray(M, dtype=float)
        out = x[..., 0:1] * M[0]
        for f in range(1, M.shape[0]):
            out = out + x[..., f:f + 1] * M[f]
        return out
    return x @ M
