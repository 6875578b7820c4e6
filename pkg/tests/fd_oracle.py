"""Finite-difference gradient oracle shared by the numeric and acceptance tests.

Plain central differences at a fixed step carry an O(h^2) truncation term
that explodes on stiff trees, so the oracle Richardson-extrapolates two
step sizes and accepts a coordinate only when a second extrapolation at a
smaller step agrees: that self-consistency certifies the h^2 error model.
Coordinates that fail it (tan-pole chaos, near-overflow scales) are
unverifiable by any numerical differencing and are reported as skipped.
"""

import math

import numpy as np

from otsforge.numeric import grad_constants


def _central(tree, points, targets, consts, i, h, vocab):
    plus, minus = consts.copy(), consts.copy()
    plus[i] += h
    minus[i] -= h
    try:
        lp, _ = grad_constants(tree.with_constants(plus), points, targets, vocab)
        lm, _ = grad_constants(tree.with_constants(minus), points, targets, vocab)
    except Exception:
        return math.nan
    return (lp - lm) / (2 * h)


def fd_reference(tree, points, targets, consts, i, vocab=None, h=1e-5):
    """Oracle gradient for constant ``i``, or NaN if unverifiable at this h."""
    fd_h = _central(tree, points, targets, consts, i, h, vocab)
    fd_q = _central(tree, points, targets, consts, i, h / 4, vocab)
    fd_s = _central(tree, points, targets, consts, i, h / 16, vocab)
    if not (np.isfinite(fd_h) and np.isfinite(fd_q) and np.isfinite(fd_s)):
        return math.nan
    first = (16.0 * fd_q - fd_h) / 15.0
    second = (16.0 * fd_s - fd_q) / 15.0
    if abs(first - second) > 2e-6 * max(1.0, abs(first), abs(second)):
        return math.nan
    return second
