"""Dense-network numerics.

A model is a "neck" of Linear-PReLU layers followed by a linear classification
head sized to the largest class count across tasks. Everything here is a pure
function over explicit parameter structures: forward pass, weighted
cross-entropy, exact reverse-mode gradients, exact Hessian-vector products,
and meta-gradients obtained by backpropagating through an unrolled inner-loop
SGD trajectory.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ConfigError, NumericError, ShapeError, UsageError

FIRST_ORDER = "first_order"
EXACT = "exact"
GRAD_MODES = (FIRST_ORDER, EXACT)

PRELU_INIT_SLOPE = 0.25


@dataclass
class Geometry:
    """Layer widths: input dim, neck hidden widths, head class count."""

    input_dim: int
    hidden: list[int]
    n_classes: int

    def validate(self) -> None:
        dims = [self.input_dim, *self.hidden, self.n_classes]
        if any(int(d) < 1 for d in dims):
            raise ConfigError(f"geometry dimensions must be >= 1, got {dims}")


@dataclass
class LayerParams:
    weight: np.ndarray  # [out, in]
    bias: np.ndarray  # [out]
    slope: np.ndarray  # [out], per-unit PReLU slope


@dataclass
class HeadParams:
    weight: np.ndarray  # [n_classes, in]
    bias: np.ndarray  # [n_classes]


@dataclass
class ModelParams:
    """Neck + head parameters. Gradient sets share this exact structure."""

    layers: list[LayerParams]
    head: HeadParams

    @property
    def input_dim(self) -> int:
        first = self.layers[0].weight if self.layers else self.head.weight
        return first.shape[1]

    @property
    def n_classes(self) -> int:
        return self.head.weight.shape[0]

    def all_finite(self) -> bool:
        return all(np.isfinite(a).all() for a in tree_leaves(self))


# ---------------------------------------------------------------------------
# Parameter trees. ModelParams, bare HeadParams, and lists of LayerParams are
# all valid trees; gradients and optimizer moments reuse the same shapes.
# ---------------------------------------------------------------------------


def tree_map(fn: Callable, *trees):
    """Apply fn leafwise across structurally identical trees."""
    head = trees[0]
    if isinstance(head, np.ndarray):
        return fn(*trees)
    if isinstance(head, (list, tuple)):
        mapped = (tree_map(fn, *parts) for parts in zip(*trees))
        return type(head)(mapped)
    if dataclasses.is_dataclass(head):
        kwargs = {
            f.name: tree_map(fn, *(getattr(t, f.name) for t in trees))
            for f in dataclasses.fields(head)
        }
        return type(head)(**kwargs)
    return head


def tree_leaves(tree) -> list[np.ndarray]:
    out: list[np.ndarray] = []

    def rec(t):
        if isinstance(t, np.ndarray):
            out.append(t)
        elif isinstance(t, (list, tuple)):
            for x in t:
                rec(x)
        elif dataclasses.is_dataclass(t):
            for f in dataclasses.fields(t):
                rec(getattr(t, f.name))

    rec(tree)
    return out


def tree_copy(tree):
    return tree_map(np.copy, tree)


def tree_zeros_like(tree):
    return tree_map(np.zeros_like, tree)


def tree_add(a, b):
    return tree_map(lambda x, y: x + y, a, b)


def tree_scale(tree, c: float):
    return tree_map(lambda x: c * x, tree)


def tree_to_vector(tree) -> np.ndarray:
    return np.concatenate([leaf.ravel() for leaf in tree_leaves(tree)])


def vector_to_tree(vec: np.ndarray, template):
    leaves = tree_leaves(template)
    total = sum(leaf.size for leaf in leaves)
    if vec.size != total:
        raise ShapeError(f"vector length {vec.size} does not match template ({total})")
    out, pos = [], 0
    for leaf in leaves:
        out.append(vec[pos : pos + leaf.size].reshape(leaf.shape).astype(leaf.dtype))
        pos += leaf.size
    it = iter(out)
    return tree_map(lambda _: next(it), template)


# ---------------------------------------------------------------------------
# Initialization and forward pass
# ---------------------------------------------------------------------------


def init_params(
    geometry: Geometry, rng: np.random.Generator, dtype=np.float32
) -> ModelParams:
    """Glorot-uniform weights, zero biases, PReLU slopes at 0.25."""
    geometry.validate()

    def linear(fan_in: int, fan_out: int) -> tuple[np.ndarray, np.ndarray]:
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-limit, limit, size=(fan_out, fan_in)).astype(dtype)
        return w, np.zeros(fan_out, dtype=dtype)

    layers = []
    fan_in = geometry.input_dim
    for width in geometry.hidden:
        w, b = linear(fan_in, width)
        slope = np.full(width, PRELU_INIT_SLOPE, dtype=dtype)
        layers.append(LayerParams(w, b, slope))
        fan_in = width
    hw, hb = linear(fan_in, geometry.n_classes)
    return ModelParams(layers=layers, head=HeadParams(hw, hb))


def prelu(x, slope):
    """x if x > 0 else slope * x (elementwise)."""
    return np.where(x > 0, x, slope * x)


def _check_input(params: ModelParams, x: np.ndarray) -> None:
    if x.ndim != 2 or x.shape[1] != params.input_dim:
        raise ShapeError(
            f"input has shape {x.shape}, model expects [B, {params.input_dim}]"
        )


def _forward_cache(params: ModelParams, x: np.ndarray):
    """Returns (logits, hs, zs): hs[k] is the input to layer k, zs[k] its preactivation."""
    _check_input(params, x)
    hs, zs = [x], []
    h = x
    for layer in params.layers:
        z = h @ layer.weight.T + layer.bias
        h = np.where(z > 0, z, layer.slope * z)
        zs.append(z)
        hs.append(h)
    logits = h @ params.head.weight.T + params.head.bias
    return logits, hs, zs


def forward(params: ModelParams, x: np.ndarray) -> np.ndarray:
    """Logits [B, n_classes] for features [B, D]."""
    logits, _, _ = _forward_cache(params, x)
    return logits


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _check_loss_inputs(logits, soft_labels, class_weights) -> None:
    if logits.shape != soft_labels.shape or logits.shape[1] != class_weights.shape[0]:
        raise ShapeError(
            f"loss inputs disagree: logits {logits.shape}, labels {soft_labels.shape}, "
            f"weights {class_weights.shape}"
        )
    for name, arr in (("logits", logits), ("labels", soft_labels), ("weights", class_weights)):
        if not np.isfinite(arr).all():
            raise NumericError(f"non-finite values in {name}")
    row_sums = soft_labels.sum(axis=1)
    if np.abs(row_sums - 1.0).max() > 1e-6:
        raise NumericError("soft-label rows must sum to 1 (+-1e-6)")
    if (class_weights < 0).any():
        raise NumericError("class weights must be nonnegative")


def weighted_ce(
    logits: np.ndarray, soft_labels: np.ndarray, class_weights: np.ndarray
) -> float:
    """Mean over the batch of -sum_c w_c * y_c * log softmax(logits)_c."""
    _check_loss_inputs(logits, soft_labels, class_weights)
    ls = _log_softmax(logits)
    per_example = -(soft_labels * ls * class_weights[None, :]).sum(axis=1)
    return float(per_example.mean())


# ---------------------------------------------------------------------------
# Exact gradients
# ---------------------------------------------------------------------------


def backward(params: ModelParams, batch) -> tuple[float, ModelParams]:
    """Loss and exact gradients of weighted_ce(forward(x)) for every parameter.

    Returns (loss, grads) where grads mirrors the ModelParams structure,
    including per-unit PReLU slope gradients. Reduction is the mean over the
    batch, so duplicating rows leaves gradients unchanged.
    """
    x, y, w = batch.x, batch.y, batch.w
    logits, hs, zs = _forward_cache(params, x)
    _check_loss_inputs(logits, y, w)

    b = x.shape[0]
    ls = _log_softmax(logits)
    loss = float(-(y * ls * w[None, :]).sum(axis=1).mean())

    p = np.exp(ls)
    weight_mass = y @ w  # [B]; total class weight carried by each row's labels
    delta = (weight_mass[:, None] * p - y * w[None, :]) / b  # dLoss/dlogits

    g_head_w = delta.T @ hs[-1]
    g_head_b = delta.sum(axis=0)
    d = delta @ params.head.weight

    g_layers: list[LayerParams] = []
    for k in range(len(params.layers) - 1, -1, -1):
        layer, z = params.layers[k], zs[k]
        act_slope = np.where(z > 0, 1.0, layer.slope)
        dz = d * act_slope
        g_slope = np.where(z > 0, 0.0, d * z).sum(axis=0)
        g_w = dz.T @ hs[k]
        g_b = dz.sum(axis=0)
        d = dz @ layer.weight
        g_layers.append(
            LayerParams(
                g_w.astype(layer.weight.dtype),
                g_b.astype(layer.bias.dtype),
                g_slope.astype(layer.slope.dtype),
            )
        )
    g_layers.reverse()

    grads = ModelParams(
        layers=g_layers,
        head=HeadParams(
            g_head_w.astype(params.head.weight.dtype),
            g_head_b.astype(params.head.bias.dtype),
        ),
    )
    return loss, grads


def loss_hvp(params: ModelParams, batch, direction: ModelParams) -> ModelParams:
    """Exact Hessian-vector product of the batch loss at params.

    Forward-over-reverse: propagate the directional tangent through the
    forward pass, then through the exact backward pass. PReLU is piecewise
    linear, so the tangent of its local slope w.r.t. z vanishes almost
    everywhere; the slope parameter's own tangent still flows.
    """
    x, y, w = batch.x, batch.y, batch.w
    logits, hs, zs = _forward_cache(params, x)
    b = x.shape[0]

    # Tangent forward pass.
    r_hs = [np.zeros_like(x)]
    r_zs = []
    rh = r_hs[0]
    for layer, v_layer, z, h_in in zip(params.layers, direction.layers, zs, hs):
        rz = rh @ layer.weight.T + h_in @ v_layer.weight.T + v_layer.bias
        rh = np.where(z > 0, rz, layer.slope * rz + z * v_layer.slope)
        r_zs.append(rz)
        r_hs.append(rh)
    r_logits = (
        rh @ params.head.weight.T + hs[-1] @ direction.head.weight.T + direction.head.bias
    )

    # Tangent of dLoss/dlogits. With labels and weights fixed, only the
    # softmax output moves: Rp = p * (Ru - <p, Ru>).
    ls = _log_softmax(logits)
    p = np.exp(ls)
    rp = p * (r_logits - (p * r_logits).sum(axis=1, keepdims=True))
    weight_mass = y @ w
    delta = (weight_mass[:, None] * p - y * w[None, :]) / b
    r_delta = (weight_mass[:, None] * rp) / b

    # Tangent backward pass.
    hv_head_w = r_delta.T @ hs[-1] + delta.T @ r_hs[-1]
    hv_head_b = r_delta.sum(axis=0)
    d = delta @ params.head.weight
    rd = r_delta @ params.head.weight + delta @ direction.head.weight

    hv_layers: list[LayerParams] = []
    for k in range(len(params.layers) - 1, -1, -1):
        layer, v_layer = params.layers[k], direction.layers[k]
        z, rz = zs[k], r_zs[k]
        neg = z <= 0
        act_slope = np.where(neg, layer.slope, 1.0)
        dz = d * act_slope
        r_dz = rd * act_slope + np.where(neg, d * v_layer.slope, 0.0)
        hv_slope = np.where(neg, rd * z + d * rz, 0.0).sum(axis=0)
        hv_w = r_dz.T @ hs[k] + dz.T @ r_hs[k]
        hv_b = r_dz.sum(axis=0)
        rd = r_dz @ layer.weight + dz @ v_layer.weight
        d = dz @ layer.weight
        hv_layers.append(
            LayerParams(
                hv_w.astype(layer.weight.dtype),
                hv_b.astype(layer.bias.dtype),
                hv_slope.astype(layer.slope.dtype),
            )
        )
    hv_layers.reverse()

    return ModelParams(
        layers=hv_layers,
        head=HeadParams(
            hv_head_w.astype(params.head.weight.dtype),
            hv_head_b.astype(params.head.bias.dtype),
        ),
    )


# ---------------------------------------------------------------------------
# Meta-gradients through an unrolled inner loop
# ---------------------------------------------------------------------------


@dataclass
class TraceStep:
    params: ModelParams  # parameters the inner gradient was evaluated at
    batch: object
    lr: float


@dataclass
class AdaptationTrace:
    """Record of one inner-loop run: n steps from theta to `adapted`.

    `steps` is None when the trace was not recorded (first-order training),
    which is an error to unroll through unless n_steps is zero.
    """

    n_steps: int
    adapted: ModelParams
    steps: list[TraceStep] | None


def backprop_through_trace(grads: ModelParams, trace: AdaptationTrace) -> ModelParams:
    """Pull query-loss gradients at the adapted parameters back to theta.

    Each inner SGD step theta_j = theta_{j-1} - lr * g(theta_{j-1}) contributes
    a Jacobian factor (I - lr * H_j); applying the factors in reverse order
    turns the gradient at theta_n into the exact meta-gradient at theta.
    """
    if trace.n_steps == 0:
        return grads
    if trace.steps is None:
        raise UsageError("exact meta-gradient requires a recorded adaptation trace")
    if len(trace.steps) != trace.n_steps:
        raise UsageError(
            f"trace has {len(trace.steps)} steps, expected {trace.n_steps}"
        )
    g = grads
    for step in reversed(trace.steps):
        hv = loss_hvp(step.params, step.batch, g)
        g = tree_map(lambda a, b, lr=step.lr: a - lr * b, g, hv)
    return g


def meta_gradient(
    theta: ModelParams,
    trace: AdaptationTrace | None,
    query_batch,
    mode: str = FIRST_ORDER,
) -> ModelParams:
    """Meta-gradient of the query loss w.r.t. theta.

    first_order: gradients at the adapted parameters, treated as gradients at
    theta. exact: additionally backpropagates through the unrolled inner-loop
    updates, including the second-order curvature terms. Both coincide when no
    inner steps were taken.
    """
    if mode not in GRAD_MODES:
        raise ConfigError(f"unknown gradient mode {mode!r}; choose from {GRAD_MODES}")
    if trace is None:
        trace = AdaptationTrace(n_steps=0, adapted=theta, steps=[])
    _, grads = backward(trace.adapted, query_batch)
    if mode == FIRST_ORDER:
        return grads
    return backprop_through_trace(grads, trace)
