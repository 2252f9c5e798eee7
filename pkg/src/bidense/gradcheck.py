"""Central finite-difference verification of every op's backward pass.

Each check builds small float64 tensors (the 64-bit forward keeps the
difference quotient meaningful at the 1e-3 tolerance), runs one taped
forward/backward, then re-differentiates the same scalar numerically.
The end-to-end check does the same through a tiny full network,
sampling a handful of elements per parameter tensor.
"""

from __future__ import annotations

import numpy as np

from . import autograd as ag
from .autograd import ConvParams, Tape, Tensor
from .model import ModelConfig, build_network, forward

__all__ = ["THRESHOLD", "OP_NAMES", "max_relative_error",
           "finite_difference_grad", "check_op", "run_suite"]

THRESHOLD = 1e-3
_EPS = 1e-3
_MAGNITUDE_FLOOR = 1e-6


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray,
                       floor: float = _MAGNITUDE_FLOOR) -> float:
    """Worst elementwise |a-n| / max(|a|,|n|), ignoring sub-floor pairs."""
    a = np.asarray(analytic, dtype=np.float64).reshape(-1)
    n = np.asarray(numeric, dtype=np.float64).reshape(-1)
    mag = np.maximum(np.abs(a), np.abs(n))
    keep = mag > floor
    if not keep.any():
        return 0.0
    return float((np.abs(a - n)[keep] / mag[keep]).max())


def finite_difference_grad(forward_fn, tensor: Tensor, eps: float = _EPS,
                           elements=None) -> np.ndarray:
    """Central differences of the scalar ``forward_fn()`` w.r.t. ``tensor``.

    ``elements`` restricts the probe to a flat-index subset; unprobed
    entries are returned as NaN so callers can mask them out.
    """
    flat = tensor.data.reshape(-1)
    grad = np.full(flat.size, np.nan)
    idx = range(flat.size) if elements is None else elements
    for i in idx:
        orig = flat[i]
        flat[i] = orig + eps
        f_plus = forward_fn()
        flat[i] = orig - eps
        f_minus = forward_fn()
        flat[i] = orig
        grad[i] = (f_plus - f_minus) / (2.0 * eps)
    return grad.reshape(tensor.data.shape)


def _rand(rng, *shape, lo=-1.0, hi=1.0) -> Tensor:
    return Tensor(rng.uniform(lo, hi, size=shape), dtype=np.float64)


def _rand_away_from_zero(rng, *shape, margin=0.1) -> Tensor:
    # keeps every element at least `margin` from the ReLU/L1 kinks
    base = rng.uniform(margin, 1.0, size=shape)
    sign = np.where(rng.random(shape) < 0.5, -1.0, 1.0)
    return Tensor(base * sign, dtype=np.float64)


def _loss_target(out: Tensor, rng) -> Tensor:
    # random-sign offsets make d(loss)/d(out) a +-1/N pattern, never 0
    offs = rng.uniform(0.5, 1.5, size=out.shape)
    sign = np.where(rng.random(out.shape) < 0.5, -1.0, 1.0)
    return Tensor(out.data + offs * sign, dtype=np.float64)


def _compare(build_graph, tensors, rng, elements_per_tensor=None,
             eps: float = _EPS) -> float:
    """Run taped backward vs finite differences over the given tensors."""
    with Tape() as tape:
        loss = build_graph()
        tape.backward(loss)
    worst = 0.0
    for t in tensors:
        if elements_per_tensor is None:
            elements = None
        else:
            k = min(elements_per_tensor, t.data.size)
            elements = rng.choice(t.data.size, size=k, replace=False)
        numeric = finite_difference_grad(lambda: build_graph().item(), t,
                                         eps=eps, elements=elements)
        mask = ~np.isnan(numeric)
        worst = max(worst, max_relative_error(t.grad[mask], numeric[mask]))
        t.grad = None
    return worst


def _conv_params(rng, in_c, out_c, k, stride, pad, transposed=False) -> ConvParams:
    shape = (in_c, out_c, k, k) if transposed else (out_c, in_c, k, k)
    w = _rand(rng, *shape)
    b = Tensor(rng.uniform(-0.5, 0.5, size=(1, out_c, 1, 1)), dtype=np.float64)
    return ConvParams(w, b, stride=stride, padding=pad, transposed=transposed)


def _check_conv2d(rng) -> float:
    worst = 0.0
    for stride, pad in ((1, 1), (2, 1)):
        x = _rand(rng, 2, 3, 5, 5)
        p = _conv_params(rng, 3, 4, 3, stride, pad)
        target_box = {}

        def graph():
            out = ag.conv2d(x, p)
            if "t" not in target_box:
                target_box["t"] = _loss_target(out, rng)
            return ag.l1_loss(out, target_box["t"])

        worst = max(worst, _compare(graph, [x, p.weight, p.bias], rng))
    return worst


def _check_conv2d_transpose(rng) -> float:
    worst = 0.0
    # geometries cover symmetric and asymmetric polyphase decompositions
    for k, stride, pad in ((6, 2, 2), (3, 1, 1), (9, 3, 3), (4, 2, 1)):
        x = _rand(rng, 2, 3, 4, 4)
        p = _conv_params(rng, 3, 2, k, stride, pad, transposed=True)
        target_box = {}

        def graph():
            out = ag.conv2d_transpose(x, p)
            if "t" not in target_box:
                target_box["t"] = _loss_target(out, rng)
            return ag.l1_loss(out, target_box["t"])

        worst = max(worst, _compare(graph, [x, p.weight, p.bias], rng))
    return worst


def _check_pixel_shuffle(rng) -> float:
    x = _rand(rng, 2, 8, 3, 3)
    box = {}

    def graph():
        out = ag.pixel_shuffle(x, 2)
        if "t" not in box:
            box["t"] = _loss_target(out, rng)
        return ag.l1_loss(out, box["t"])

    return _compare(graph, [x], rng)


def _check_concat_channels(rng) -> float:
    xs = [_rand(rng, 2, c, 4, 4) for c in (1, 3, 2)]
    box = {}

    def graph():
        out = ag.concat_channels(xs)
        if "t" not in box:
            box["t"] = _loss_target(out, rng)
        return ag.l1_loss(out, box["t"])

    return _compare(graph, xs, rng)


def _check_relu(rng) -> float:
    x = _rand_away_from_zero(rng, 2, 3, 4, 4)
    box = {}

    def graph():
        out = ag.relu(x)
        if "t" not in box:
            box["t"] = _loss_target(out, rng)
        return ag.l1_loss(out, box["t"])

    return _compare(graph, [x], rng)


def _check_add(rng) -> float:
    x = _rand(rng, 2, 3, 4, 4)
    y = _rand(rng, 2, 3, 4, 4)
    box = {}

    def graph():
        out = ag.add(x, y)
        if "t" not in box:
            box["t"] = _loss_target(out, rng)
        return ag.l1_loss(out, box["t"])

    return _compare(graph, [x, y], rng)


def _check_l1_loss(rng) -> float:
    pred = _rand(rng, 2, 3, 4, 4)
    # offsets >= 0.5 keep pred-target away from the kink during probing
    target = _loss_target(pred, rng)

    def graph():
        return ag.l1_loss(pred, target)

    return _compare(graph, [pred, target], rng)


def _check_sum_all(rng) -> float:
    x = _rand(rng, 2, 3, 4, 4)

    def graph():
        return ag.sum_all(x)

    return _compare(graph, [x], rng)


def _check_network(rng) -> float:
    cfg = ModelConfig(blocks=2, layers=2, n_r=8, n_g=8, scale=2)
    net = build_network(cfg, rng_seed=7, dtype=np.float64)
    x = _rand(rng, 1, 3, 6, 6, lo=0.0, hi=1.0)
    box = {}

    def graph():
        out = forward(net, x)
        if "t" not in box:
            box["t"] = _loss_target(out, rng)
        return ag.l1_loss(out, box["t"])

    tensors = [x] + [t for _, t in net.parameters()]
    # finer step: the deep graph multiplies perturbations, and a smaller eps
    # keeps probes from stepping across ReLU kinks
    return _compare(graph, tensors, rng, elements_per_tensor=4, eps=1e-4)


_CHECKS = {
    "conv2d": _check_conv2d,
    "conv2d_transpose": _check_conv2d_transpose,
    "pixel_shuffle": _check_pixel_shuffle,
    "concat_channels": _check_concat_channels,
    "relu": _check_relu,
    "add": _check_add,
    "l1_loss": _check_l1_loss,
    "sum_all": _check_sum_all,
    "network": _check_network,
}

OP_NAMES = tuple(_CHECKS)


def check_op(name: str, seed: int = 0) -> float:
    """Max relative error between taped and numeric gradients for one op."""
    if name not in _CHECKS:
        raise ValueError(f"unknown op {name!r}; choose from {', '.join(OP_NAMES)}")
    return _CHECKS[name](np.random.default_rng(seed))


def run_suite(op: str | None = None, seed: int = 0) -> dict[str, float]:
    names = [op] if op else list(OP_NAMES)
    return {name: check_op(name, seed) for name in names}
