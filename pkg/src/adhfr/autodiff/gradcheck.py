"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from . import functional as F
from .tensor import Tensor, backward, no_grad

KINK_MARGIN = 1e-3


def max_relative_error(fn: Callable[[], Tensor], tensors: Sequence[Tensor], eps: float = 1e-6) -> float:
    """Compare autodiff gradients of scalar ``fn()`` against central differences.

    Returns max over every coordinate of every tensor of
    ``|analytic - numeric| / max(1, |numeric|)``.
    """
    if not 1e-7 <= eps <= 1e-4:
        raise ValueError(f"eps must lie in [1e-7, 1e-4], got {eps}")
    for t in tensors:
        if t.dtype != np.float64:
            raise TypeError("gradient checks require float64 tensors")
        t.requires_grad = True
        t.zero_grad()
    backward(fn())
    analytic = [t.grad.copy() for t in tensors]

    worst = 0.0
    with no_grad():
        for t, ga in zip(tensors, analytic):
            flat = t.data.reshape(-1)
            gflat = ga.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                up = fn().item()
                flat[i] = orig - eps
                down = fn().item()
                flat[i] = orig
                numeric = (up - down) / (2.0 * eps)
                err = abs(gflat[i] - numeric) / max(1.0, abs(numeric))
                worst = max(worst, err)
    return worst


def _away_from_zero(a: np.ndarray) -> np.ndarray:
    a = a.copy()
    small = np.abs(a) < KINK_MARGIN
    a[small] = np.where(a[small] >= 0, 10 * KINK_MARGIN, -10 * KINK_MARGIN)
    return a


# Each builder returns (scalar closure, tensors to differentiate).
def _unary(op):
    def build(x: Tensor, rng):
        proj = Tensor(rng.normal(size=op(x).shape))
        return (lambda: F.sum(F.mul(op(x), proj))), [x]

    return build


def _binary(op, other_shape=None):
    def build(x: Tensor, rng):
        shape = other_shape(x.shape) if other_shape else x.shape
        y = Tensor(rng.normal(size=shape))
        proj = Tensor(rng.normal(size=op(x, y).shape))
        return (lambda: F.sum(F.mul(op(x, y), proj))), [x, y]

    return build


def _conv_builder(stride):
    def build(x: Tensor, rng):
        cin = x.shape[1]
        w = Tensor(rng.normal(size=(3, cin, 3, 3)))
        b = Tensor(rng.normal(size=3))
        out = F.conv2d(x, w, b, stride)
        proj = Tensor(rng.normal(size=out.shape))
        return (lambda: F.sum(F.mul(F.conv2d(x, w, b, stride), proj))), [x, w, b]

    return build


def _instance_norm_builder(x: Tensor, rng):
    c = x.shape[1]
    gamma = Tensor(rng.normal(size=c))
    beta = Tensor(rng.normal(size=c))
    proj = Tensor(rng.normal(size=x.shape))
    return (lambda: F.sum(F.mul(F.instance_norm(x, gamma, beta), proj))), [x, gamma, beta]


def _bias_builder(x: Tensor, rng):
    b = Tensor(rng.normal(size=x.shape[1]))
    proj = Tensor(rng.normal(size=x.shape))
    return (lambda: F.sum(F.mul(F.add_bias(x, b), proj))), [x, b]


def _xent_builder(x: Tensor, rng):
    labels = rng.integers(0, x.shape[1], size=x.shape[0])
    return (lambda: F.softmax_cross_entropy(x, labels)), [x]


def _l1_builder(x: Tensor, rng):
    y = Tensor(x.data + np.where(rng.random(x.shape) < 0.5, -1.0, 1.0) * rng.uniform(0.05, 1.0, x.shape))
    return (lambda: F.l1_mean(x, y)), [x, y]


def _concat_builder(x: Tensor, rng):
    shape = list(x.shape)
    shape[1] = 2
    y = Tensor(rng.normal(size=shape))
    out = F.concat([x, y], axis=1)
    proj = Tensor(rng.normal(size=out.shape))
    return (lambda: F.sum(F.mul(F.concat([x, y], axis=1), proj))), [x, y]


# op_kind -> (sample shape, point conditioner, builder)
PRIMITIVES: dict[str, tuple[tuple[int, ...], Callable | None, Callable]] = {
    "add": ((3, 4), None, _binary(F.add)),
    "sub": ((3, 4), None, _binary(F.sub)),
    "mul": ((3, 4), None, _binary(F.mul)),
    "add_bias": ((2, 3, 2, 2), None, _bias_builder),
    "matmul": ((3, 4), None, _binary(F.matmul, other_shape=lambda s: (s[1], 2))),
    "conv2d": ((2, 2, 5, 5), None, _conv_builder(1)),
    "conv2d_stride2": ((2, 2, 6, 6), None, _conv_builder(2)),
    "upsample": ((2, 2, 3, 3), None, _unary(F.upsample2x)),
    "max_pool": ((2, 2, 4, 4), None, _unary(F.max_pool2x2)),
    "leaky_relu": ((3, 4), _away_from_zero, _unary(lambda t: F.leaky_relu(t, 0.2))),
    "tanh": ((3, 4), None, _unary(F.tanh)),
    "sigmoid": ((3, 4), None, _unary(F.sigmoid)),
    "log": ((3, 4), lambda a: np.abs(a) + 0.5, _unary(F.log)),
    "mean": ((2, 3, 4), None, _unary(lambda t: F.mean(t, axes=(0, 2)))),
    "sum": ((2, 3, 4), None, _unary(lambda t: F.sum(t, axes=1))),
    "square": ((3, 4), None, _unary(F.square)),
    "l1_mean": ((3, 4), None, _l1_builder),
    "l2_norm": ((3, 5), None, _unary(F.l2_norm)),
    "softmax_cross_entropy": ((4, 5), None, _xent_builder),
    "concat": ((2, 3, 2, 2), None, _concat_builder),
    "slice": ((2, 3, 4, 4), None, _unary(lambda t: F.index(t, (slice(None), slice(1, 3), slice(0, 3), slice(None, None, -1))))),
    "pad": ((2, 2, 3, 3), None, _unary(lambda t: F.pad2d(t, 1, 2, 0, 1))),
    "reshape": ((2, 3, 4), None, _unary(lambda t: F.reshape(t, (6, 4)))),
    "instance_norm": ((2, 3, 4, 4), None, _instance_norm_builder),
}


def sample_point(op_kind: str, rng: np.random.Generator) -> Tensor:
    shape, condition, _ = PRIMITIVES[op_kind]
    data = rng.normal(size=shape)
    if condition is not None:
        data = condition(data)
    return Tensor(data)


def grad_check(op_kind: str, point: Tensor, eps: float = 1e-6, seed: int = 0) -> float:
    """Max relative gradient error of primitive ``op_kind`` evaluated at ``point``.

    Auxiliary operands (kernels, second arguments, labels) are drawn from
    ``seed``; every differentiable operand is checked.
    """
    if op_kind not in PRIMITIVES:
        raise KeyError(f"unknown primitive {op_kind!r}")
    build = PRIMITIVES[op_kind][2]
    x = Tensor(np.array(point.data, dtype=np.float64))
    fn, tensors = build(x, np.random.default_rng(seed))
    return max_relative_error(fn, tensors, eps)


def primitive_suite(points: int = 10, eps: float = 1e-6, seed: int = 0) -> dict[str, float]:
    """Worst error per primitive over ``points`` random sample points."""
    rng = np.random.default_rng(seed)
    results = {}
    for op_kind in PRIMITIVES:
        worst = 0.0
        for _ in range(points):
            x = sample_point(op_kind, rng)
            worst = max(worst, grad_check(op_kind, x, eps, seed=int(rng.integers(2**31))))
        results[op_kind] = worst
    return results
