"""Shared matrix primitives: whitening, row normalization, gradient checks, seeded streams."""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

# Stream identifiers for ``derive_rng``. A consumer's generator is keyed by
# (master seed, stream id, *counters), so e.g. epoch 7's shuffle can be
# regenerated without replaying anything else.
STREAM_INIT = 0
STREAM_AUGMENT = 1
STREAM_CLUSTER = 2
STREAM_SHUFFLE = 3
STREAM_PROBE = 4
STREAM_SPLIT = 5
STREAM_SYNTH = 6
STREAM_HEAD = 7


class DecompositionError(ArithmeticError):
    pass


class GradientCheckError(ArithmeticError):
    pass


def derive_rng(seed: int, stream: int, *counters: int) -> np.random.Generator:
    """Independent Philox stream for one consumer of a run's master seed."""
    seq = np.random.SeedSequence(int(seed), spawn_key=(int(stream), *map(int, counters)))
    return np.random.Generator(np.random.Philox(seq))


def as_matrix(x, name: str = "batch") -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def cholesky_whiten(batch, epsilon: float = 1e-6):
    """Whiten a B x D batch so that its sample covariance is the identity.

    Columns are centred, the (B-1)-normalized covariance gets an ``epsilon``
    ridge, and rows are mapped through the inverse Cholesky factor. Accepts a
    numpy array (returns an array) or a ``Tensor`` (returns a differentiable
    ``Tensor``).
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    tracked = isinstance(batch, Tensor)
    x = batch if tracked else Tensor(as_matrix(batch))
    b, d = x.shape
    if b < 2:
        raise ValueError("whitening needs at least two rows")
    centred = x - x.mean(axis=0, keepdims=True)
    cov = (centred.T @ centred) * (1.0 / (b - 1)) + epsilon * np.eye(d)
    try:
        factor = ad.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise DecompositionError("covariance + epsilon*I is not positive definite") from exc
    out = ad.solve_lower(factor, centred.T).T
    return out if tracked else out.data


def l2_normalize_rows(batch):
    if isinstance(batch, Tensor):
        return ad.l2_normalize_rows(batch)
    arr = np.asarray(batch, dtype=np.float64)
    norms = ad.row_norms(arr)
    return np.where(norms > 0, arr / np.where(norms > 0, norms, 1.0), arr)


def sample_covariance(batch: np.ndarray) -> np.ndarray:
    centred = batch - batch.mean(axis=0, keepdims=True)
    return centred.T @ centred / (batch.shape[0] - 1)


def grad_check(f: Callable[[Tensor], Tensor], point, h: float = 1e-5) -> float:
    """Max relative error between the autodiff gradient of ``f`` and central differences.

    ``f`` maps a Tensor shaped like ``point`` to a scalar Tensor. The relative
    error per coordinate uses ``max(|analytic|, |numeric|, 1e-8)`` as the
    denominator.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    x0 = np.array(point, dtype=np.float64)
    x = Tensor(x0.copy(), requires_grad=True)
    out = f(x)
    if not np.isfinite(out.data).all():
        raise GradientCheckError("f is not finite at the check point")
    out.backward()
    analytic = np.zeros_like(x0) if x.grad is None else x.grad

    numeric = np.empty_like(x0)
    flat = numeric.reshape(-1)
    for i in range(x0.size):
        step = np.zeros(x0.size)
        step[i] = h
        step = step.reshape(x0.shape)
        hi = f(Tensor(x0 + step)).item()
        lo = f(Tensor(x0 - step)).item()
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise GradientCheckError(f"f is not finite near coordinate {i}")
        flat[i] = (hi - lo) / (2 * h)

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom)) if x0.size else 0.0
