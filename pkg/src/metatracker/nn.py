"""Learnable parameters and differentiable forward computations.

The model is small enough to keep explicit: a shared viewer-embedding table,
a linear attention transform, an affine signature map, and two two-layer
MLP heads (actor over the fixed action space, critic over state ++ action
distribution). Everything runs in float64 so analytic gradients can be
checked against central finite differences at tight tolerance.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np
import torch
import torch.nn.functional as F

DTYPE = torch.float64

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class NetworkDims:
    """Architecture sizes.

    d: viewer-embedding dimension; d_s: state dimension; max_viewers: fixed
    action-space capacity M (>= the viewer count of any event the model
    will see); hidden: MLP hidden width of both heads.
    """

    d: int
    d_s: int
    max_viewers: int
    hidden: int

    def __post_init__(self):
        for name in ("d", "d_s", "max_viewers", "hidden"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0, got {getattr(self, name)}")


@dataclass(frozen=True)
class GraphSignature:
    """Fixed-length summary (length 2*d_s) of one event's structure."""

    values: torch.Tensor
    event_id: str

    def __post_init__(self):
        if self.values.ndim != 1:
            raise ValueError(f"signature must be a vector, got shape {tuple(self.values.shape)}")
        if not torch.isfinite(self.values).all():
            raise ValueError(f"signature for {self.event_id!r} has non-finite entries")

    def detached(self) -> "GraphSignature":
        return GraphSignature(self.values.detach().clone(), self.event_id)


class ParameterSet:
    """All learnable weights of the tracker.

    Tensors (float64, leaf, requires_grad):
      embeddings        X    (M, d)      shared viewer-embedding table
      attention_transform W_S (d_s, d)   linear map into state space
      signature_weight  W_H  (2*d_s, d)  affine signature map, weight
      signature_bias    b_H  (2*d_s,)    affine signature map, bias
      actor_*           theta            MLP d_s -> hidden -> M
      critic_*          w                MLP (d_s + M) -> hidden -> 1
    """

    FIELD_NAMES = (
        "X",
        "W_S",
        "W_H",
        "b_H",
        "theta.W1",
        "theta.b1",
        "theta.W2",
        "theta.b2",
        "w.W1",
        "w.b1",
        "w.W2",
        "w.b2",
    )

    def __init__(self, dims: NetworkDims, tensors: Mapping[str, torch.Tensor]):
        self.dims = dims
        missing = set(self.FIELD_NAMES) - set(tensors)
        if missing:
            raise ValueError(f"parameter set missing tensors: {sorted(missing)}")
        expected = _expected_shapes(dims)
        self._tensors: dict[str, torch.Tensor] = {}
        for name in self.FIELD_NAMES:
            t = tensors[name]
            if tuple(t.shape) != expected[name]:
                raise ValueError(
                    f"tensor {name} has shape {tuple(t.shape)}, expected {expected[name]}"
                )
            if not torch.isfinite(t).all():
                raise ValueError(f"tensor {name} has non-finite entries")
            self._tensors[name] = t

    def __getitem__(self, name: str) -> torch.Tensor:
        return self._tensors[name]

    def named_tensors(self) -> dict[str, torch.Tensor]:
        return dict(self._tensors)

    # Convenience views used by the forward ops.
    @property
    def embeddings(self) -> torch.Tensor:
        return self._tensors["X"]

    @property
    def attention_transform(self) -> torch.Tensor:
        return self._tensors["W_S"]

    @property
    def signature_weight(self) -> torch.Tensor:
        return self._tensors["W_H"]

    @property
    def signature_bias(self) -> torch.Tensor:
        return self._tensors["b_H"]

    def clone(self) -> "ParameterSet":
        """Independent deep copy; fresh leaf tensors with requires_grad set."""
        return ParameterSet(
            self.dims,
            {
                name: t.detach().clone().requires_grad_(True)
                for name, t in self._tensors.items()
            },
        )


def _expected_shapes(dims: NetworkDims) -> dict[str, tuple[int, ...]]:
    d, d_s, m, h = dims.d, dims.d_s, dims.max_viewers, dims.hidden
    return {
        "X": (m, d),
        "W_S": (d_s, d),
        "W_H": (2 * d_s, d),
        "b_H": (2 * d_s,),
        "theta.W1": (h, d_s),
        "theta.b1": (h,),
        "theta.W2": (m, h),
        "theta.b2": (m,),
        "w.W1": (h, d_s + m),
        "w.b1": (h,),
        "w.W2": (1, h),
        "w.b2": (1,),
    }


def initialize(dims: NetworkDims, seed: int) -> ParameterSet:
    """Fresh parameters: weights uniform in +-1/sqrt(fan_in), biases zero."""
    rng = np.random.default_rng(seed)

    def uniform(shape: tuple[int, ...], fan_in: int) -> torch.Tensor:
        bound = 1.0 / np.sqrt(fan_in)
        arr = rng.uniform(-bound, bound, size=shape)
        return torch.from_numpy(arr).to(DTYPE).requires_grad_(True)

    def zeros(shape: tuple[int, ...]) -> torch.Tensor:
        return torch.zeros(shape, dtype=DTYPE, requires_grad=True)

    shapes = _expected_shapes(dims)
    tensors = {
        "X": uniform(shapes["X"], dims.d),
        "W_S": uniform(shapes["W_S"], dims.d),
        "W_H": uniform(shapes["W_H"], dims.d),
        "b_H": zeros(shapes["b_H"]),
        "theta.W1": uniform(shapes["theta.W1"], dims.d_s),
        "theta.b1": zeros(shapes["theta.b1"]),
        "theta.W2": uniform(shapes["theta.W2"], dims.hidden),
        "theta.b2": zeros(shapes["theta.b2"]),
        "w.W1": uniform(shapes["w.W1"], dims.d_s + dims.max_viewers),
        "w.b1": zeros(shapes["w.b1"]),
        "w.W2": uniform(shapes["w.W2"], dims.hidden),
        "w.b2": zeros(shapes["w.b2"]),
    }
    return ParameterSet(dims, tensors)


def embed(params: ParameterSet, u: int) -> torch.Tensor:
    """Row u of the embedding table (differentiable w.r.t. that row)."""
    if not 0 <= u < params.dims.max_viewers:
        raise ValueError(f"viewer id {u} outside embedding table of size {params.dims.max_viewers}")
    return params.embeddings[u]


def compute_signature(
    params: ParameterSet, active_viewers: Iterable[int], event_id: str
) -> GraphSignature:
    """H = ELU(W_H . meanpool(X over active viewers) + b_H), length 2*d_s.

    Viewers are mean-pooled in sorted-id order so the float summation order
    (and hence the bits) never depends on caller iteration order.
    """
    ids = sorted(set(active_viewers))
    if not ids:
        raise ValueError("active_viewers must be non-empty")
    for u in ids:
        if not 0 <= u < params.dims.max_viewers:
            raise ValueError(f"viewer id {u} outside embedding table")
    pooled = params.embeddings[list(ids)].mean(dim=0)
    values = F.elu(params.signature_weight @ pooled + params.signature_bias)
    return GraphSignature(values=values, event_id=event_id)


def attention_score(
    params: ParameterSet, H: GraphSignature, u: int, v: int, b_uv: float
) -> torch.Tensor:
    """o = LeakyReLU(b_uv * <H, concat(W_S X_u, W_S X_v)>), slope 0.2."""
    if u == v:
        raise ValueError(f"attention score undefined for self-pair (viewer {u})")
    if b_uv < 0:
        raise ValueError(f"throughput weight must be >= 0, got {b_uv}")
    w_s = params.attention_transform
    projected = torch.cat([w_s @ embed(params, u), w_s @ embed(params, v)])
    return F.leaky_relu(b_uv * (H.values @ projected), negative_slope=0.2)


def _neighbor_scores(
    params: ParameterSet,
    H: GraphSignature,
    u: int,
    neighbors: Sequence[tuple[int, float]],
) -> tuple[torch.Tensor, torch.Tensor]:
    """Vectorized attention scores over u's neighbors plus their projections.

    Splitting <H, concat(W_S X_u, W_S X_v)> into the two half-inner-products
    lets all neighbors go through one matmul instead of a per-pair loop.
    Returns (scores (k,), projected neighbor embeddings (k, d_s)).
    """
    d_s = params.dims.d_s
    if H.values.shape != (2 * d_s,):
        raise ValueError(
            f"signature has length {H.values.shape[0]}, expected {2 * d_s}"
        )
    ids = [v for v, _ in neighbors]
    for v in ids:
        if v == u:
            raise ValueError(f"attention score undefined for self-pair (viewer {u})")
        if not 0 <= v < params.dims.max_viewers:
            raise ValueError(f"viewer id {v} outside embedding table")
    weights = torch.tensor([b for _, b in neighbors], dtype=DTYPE)
    if (weights < 0).any():
        raise ValueError("throughput weights must be >= 0")
    w_s = params.attention_transform
    proj_u = w_s @ embed(params, u)
    proj_n = params.embeddings[ids] @ w_s.T
    h_u, h_n = H.values[:d_s], H.values[d_s:]
    scores = F.leaky_relu(weights * (h_u @ proj_u + proj_n @ h_n), negative_slope=0.2)
    return scores, proj_n


def attention_coefficients(
    params: ParameterSet,
    H: GraphSignature,
    u: int,
    neighbors: Sequence[tuple[int, float]],
) -> torch.Tensor:
    """Softmax-normalized attention scores over u's neighbors, in given order."""
    if not neighbors:
        raise ValueError("coefficients undefined for an empty neighborhood")
    scores, _ = _neighbor_scores(params, H, u, neighbors)
    return torch.softmax(scores, dim=0)


def encode_state(
    params: ParameterSet,
    H: GraphSignature,
    u: int,
    neighbors: Sequence[tuple[int, float]],
    literal_eq1: bool = False,
) -> torch.Tensor:
    """Attention-weighted state of viewer u (length d_s).

    Default mode aggregates the neighbors' transformed embeddings,
    s = ELU(sum_v c_v * W_S X_v). With ``literal_eq1`` the coefficients
    instead weight u's own transformed embedding, which collapses to
    ELU(W_S X_u) because the coefficients sum to one. A viewer with no
    neighbors yet falls back to ELU(W_S X_u) in both modes.
    """
    w_s = params.attention_transform
    if not neighbors:
        return F.elu(w_s @ embed(params, u))
    scores, proj_n = _neighbor_scores(params, H, u, neighbors)
    coeffs = torch.softmax(scores, dim=0)
    if literal_eq1:
        aggregated = coeffs.sum() * (w_s @ embed(params, u))
    else:
        aggregated = coeffs @ proj_n
    return F.elu(aggregated)


def _actor_logits(params: ParameterSet, state: torch.Tensor) -> torch.Tensor:
    hidden = F.elu(params["theta.W1"] @ state + params["theta.b1"])
    return params["theta.W2"] @ hidden + params["theta.b2"]


def _check_mask(mask: torch.Tensor, m: int) -> None:
    if mask.shape != (m,) or mask.dtype != torch.bool:
        raise ValueError(f"mask must be a boolean vector of length {m}")
    if not mask.any():
        raise ValueError("action mask has no selectable viewer")


def actor_forward(params: ParameterSet, state: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Masked action distribution over the M action slots.

    Masked-out entries get -inf logits, so they are exactly zero in the
    output and the rest sums to one.
    """
    _check_mask(mask, params.dims.max_viewers)
    logits = _actor_logits(params, state)
    masked = torch.where(mask, logits, torch.tensor(-torch.inf, dtype=DTYPE))
    return torch.softmax(masked, dim=0)


def actor_log_probs(params: ParameterSet, state: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """log softmax of the masked logits (masked entries are -inf)."""
    _check_mask(mask, params.dims.max_viewers)
    logits = _actor_logits(params, state)
    masked = torch.where(mask, logits, torch.tensor(-torch.inf, dtype=DTYPE))
    return torch.log_softmax(masked, dim=0)


def critic_forward(params: ParameterSet, state: torch.Tensor, action: torch.Tensor) -> torch.Tensor:
    """Scalar value of (state, action-distribution): MLP_w(state ++ action)."""
    if action.shape != (params.dims.max_viewers,):
        raise ValueError(
            f"action must have length {params.dims.max_viewers}, got {tuple(action.shape)}"
        )
    if state.shape != (params.dims.d_s,):
        raise ValueError(f"state must have length {params.dims.d_s}, got {tuple(state.shape)}")
    x = torch.cat([state, action])
    hidden = F.elu(params["w.W1"] @ x + params["w.b1"])
    return (params["w.W2"] @ hidden + params["w.b2"]).squeeze(0)


def gradient(loss: torch.Tensor, params: ParameterSet) -> dict[str, torch.Tensor]:
    """Exact partial derivatives of a scalar loss w.r.t. every parameter.

    Parameters the loss does not touch get zero gradients, so the returned
    structure always mirrors the full ParameterSet.
    """
    if loss.ndim != 0:
        raise ValueError(f"loss must be scalar, got shape {tuple(loss.shape)}")
    if not torch.isfinite(loss):
        raise ValueError(f"refusing to differentiate non-finite loss {loss.item()!r}")
    names = list(params.FIELD_NAMES)
    tensors = [params[name] for name in names]
    grads = torch.autograd.grad(loss, tensors, allow_unused=True)
    return {
        name: (g if g is not None else torch.zeros_like(t))
        for name, t, g in zip(names, tensors, grads)
    }


def apply_gradients(
    params: ParameterSet, grads: Mapping[str, torch.Tensor], lr: float
) -> ParameterSet:
    """One SGD step, returned as a new ParameterSet (inputs untouched)."""
    updated = {}
    for name, t in params.named_tensors().items():
        g = grads.get(name)
        new = t.detach().clone() if g is None else (t.detach() - lr * g.detach())
        updated[name] = new.requires_grad_(True)
    return ParameterSet(params.dims, updated)


def save_checkpoint(params: ParameterSet, seed: int, path: str) -> None:
    """Write all tensors plus dims/seed metadata into one .npz archive."""
    arrays = {name: t.detach().numpy() for name, t in params.named_tensors().items()}
    meta = {
        "version": CHECKPOINT_VERSION,
        "dims": {
            "d": params.dims.d,
            "d_s": params.dims.d_s,
            "max_viewers": params.dims.max_viewers,
            "hidden": params.dims.hidden,
        },
        "seed": seed,
    }
    arrays["__meta__"] = np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8)
    np.savez(path, **arrays)


def load_checkpoint(path: str, expected_dims: NetworkDims | None = None) -> tuple[ParameterSet, NetworkDims, int]:
    """Read a checkpoint; mismatched dims (vs. expected_dims) is a hard error."""
    with np.load(path) as archive:
        if "__meta__" not in archive:
            raise ValueError(f"{path}: not a parameter checkpoint (missing metadata)")
        meta = json.loads(bytes(archive["__meta__"]).decode("utf-8"))
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(
                f"{path}: checkpoint version {meta.get('version')!r}, "
                f"expected {CHECKPOINT_VERSION}"
            )
        dims = NetworkDims(**meta["dims"])
        if expected_dims is not None and dims != expected_dims:
            raise ValueError(
                f"{path}: checkpoint dims {dims} do not match expected {expected_dims}"
            )
        tensors = {
            name: torch.from_numpy(archive[name].copy()).to(DTYPE).requires_grad_(True)
            for name in ParameterSet.FIELD_NAMES
        }
    return ParameterSet(dims, tensors), dims, int(meta["seed"])
