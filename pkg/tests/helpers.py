"""Shared test fixtures: tiny parameter sets, random problem instances, and a
finite-difference gradient oracle that is independent of autograd."""

from __future__ import annotations

from typing import Callable

import numpy as np
import torch

from metatracker.nn import DTYPE, NetworkDims, ParameterSet, _expected_shapes

FD_STEP = 1e-5


def tiny_dims(d: int = 3, d_s: int = 4, max_viewers: int = 6, hidden: int = 5) -> NetworkDims:
    return NetworkDims(d=d, d_s=d_s, max_viewers=max_viewers, hidden=hidden)


def random_params(dims: NetworkDims, rng: np.random.Generator, scale: float = 0.5) -> ParameterSet:
    """A ParameterSet with all entries drawn N(0, scale); leaves with grad."""
    tensors = {}
    for name, shape in _expected_shapes(dims).items():
        arr = rng.normal(0.0, scale, size=shape)
        tensors[name] = torch.from_numpy(arr).to(DTYPE).requires_grad_(True)
    return ParameterSet(dims, tensors)


def perturbed(params: ParameterSet, name: str, index: tuple[int, ...], delta: float) -> ParameterSet:
    """Copy of ``params`` with one scalar entry shifted by ``delta``.

    The copies do not require grad: finite differences must never touch
    autograd, or the oracle would stop being independent.
    """
    tensors = {}
    for field, tensor in params.named_tensors().items():
        t = tensor.detach().clone()
        if field == name:
            t[index] += delta
        tensors[field] = t
    return ParameterSet(params.dims, tensors)


def fd_gradients(
    loss_fn: Callable[[ParameterSet], torch.Tensor],
    params: ParameterSet,
    step: float = FD_STEP,
    names: tuple[str, ...] | None = None,
) -> dict[str, np.ndarray]:
    """Central-difference gradient of a scalar loss, entry by entry.

    ``names`` restricts the sweep; losses that hold a detached factor
    constant (semi-gradient objectives) are only differentiable-by-FD on
    the parameters that factor does not touch.
    """
    grads: dict[str, np.ndarray] = {}
    for name, tensor in params.named_tensors().items():
        if names is not None and name not in names:
            continue
        out = np.zeros(tensor.shape, dtype=np.float64)
        for index in np.ndindex(*tensor.shape):
            hi = float(loss_fn(perturbed(params, name, index, +step)))
            lo = float(loss_fn(perturbed(params, name, index, -step)))
            out[index] = (hi - lo) / (2.0 * step)
        grads[name] = out
    return grads


def max_rel_error(
    analytic: dict[str, torch.Tensor], numeric: dict[str, np.ndarray], floor: float = 1e-6
) -> float:
    """max over entries of |analytic - numeric| / max(|numeric|, floor)."""
    worst = 0.0
    for name, num in numeric.items():
        ana = analytic[name].detach().numpy()
        rel = np.abs(ana - num) / np.maximum(np.abs(num), floor)
        worst = max(worst, float(rel.max()))
    return worst


def random_neighbors(
    rng: np.random.Generator, u: int, max_viewers: int, count: int | None = None
) -> tuple[tuple[int, float], ...]:
    """A sorted neighbor list for ``u``: distinct ids with weights in [0, 1]."""
    others = [v for v in range(max_viewers) if v != u]
    if count is None:
        count = int(rng.integers(1, len(others) + 1))
    ids = sorted(rng.choice(others, size=count, replace=False).tolist())
    return tuple((int(v), float(rng.uniform(0.0, 1.0))) for v in ids)


def random_mask(rng: np.random.Generator, m: int, min_true: int = 1) -> torch.Tensor:
    mask = torch.zeros(m, dtype=torch.bool)
    on = rng.choice(m, size=int(rng.integers(min_true, m + 1)), replace=False)
    mask[on.tolist()] = True
    return mask
