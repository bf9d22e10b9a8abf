"""Exact input derivatives and parameter gradients.

All derivatives are computed by JAX automatic differentiation of the
discretized model (the trapezoid integrals are plain weighted sums, so
they are differentiated as such).  Nothing in here uses finite
differences; those live in the test-suite as oracles.
"""

from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

import jax
import jax.numpy as jnp
import numpy as np


class NumericError(ArithmeticError):
    """A non-finite value appeared while evaluating a model or loss."""

    def __init__(self, message, where=None, index=None):
        super().__init__(message)
        self.where = where
        self.index = index


class InputDerivs(NamedTuple):
    value: float
    d_u: float
    d_v: float
    d_uu: float
    d_vv: float
    d_uv: float


@dataclass(frozen=True)
class ParamLayout:
    """Names and shapes of the leaves of a parameter pytree, in flat order."""

    names: tuple
    shapes: tuple
    treedef: object

    @property
    def sizes(self):
        return tuple(int(np.prod(s, dtype=int)) for s in self.shapes)

    @property
    def size(self):
        return sum(self.sizes)

    def describe(self):
        return [[n, list(s)] for n, s in zip(self.names, self.shapes)]

    def unflatten(self, flat):
        flat = jnp.asarray(flat)
        if flat.shape != (self.size,):
            raise ValueError(f"expected {self.size} parameters, got shape {flat.shape}")
        leaves = []
        start = 0
        for size, shape in zip(self.sizes, self.shapes):
            leaves.append(flat[start:start + size].reshape(shape))
            start += size
        return jax.tree_util.tree_unflatten(self.treedef, leaves)


def _path_name(path):
    parts = []
    for key in path:
        if isinstance(key, jax.tree_util.DictKey):
            parts.append(str(key.key))
        elif isinstance(key, jax.tree_util.SequenceKey):
            parts.append(str(key.idx))
        else:
            parts.append(str(key))
    return ".".join(parts)


def layout_of(params) -> ParamLayout:
    leaves_with_path, treedef = jax.tree_util.tree_flatten_with_path(params)
    names = tuple(_path_name(p) for p, _ in leaves_with_path)
    shapes = tuple(tuple(np.shape(leaf)) for _, leaf in leaves_with_path)
    return ParamLayout(names, shapes, treedef)


def flatten(params):
    """Return ``(flat_vector, layout)`` for a parameter pytree."""
    leaves = jax.tree_util.tree_leaves(params)
    flat = jnp.concatenate([jnp.ravel(jnp.asarray(x)) for x in leaves]) if leaves else jnp.zeros(0)
    return flat, layout_of(params)


def input_hessian(f: Callable, u, v) -> InputDerivs:
    """Value, gradient and Hessian of a scalar field ``f(u, v)`` at one point.

    ``f`` must be written with ``jax.numpy``.  Uses forward-over-reverse
    differentiation.
    """
    u = jnp.asarray(u, dtype=jnp.float64)
    v = jnp.asarray(v, dtype=jnp.float64)

    def g(z):
        return f(z[0], z[1])

    z = jnp.stack([u, v])
    val = g(z)
    grad = jax.grad(g)(z)
    hess = jax.hessian(g)(z)
    out = InputDerivs(
        float(val), float(grad[0]), float(grad[1]),
        float(hess[0, 0]), float(hess[1, 1]), float(hess[0, 1]),
    )
    if not all(np.isfinite(out)):
        raise NumericError(f"non-finite derivative at (u={float(u)}, v={float(v)}): {out}")
    return out


def grad_params(loss: Callable, params):
    """Gradient of ``loss(params)`` with respect to every parameter leaf.

    Raises :class:`NumericError` naming the first non-finite flat coordinate.
    """
    g = jax.grad(loss)(params)
    flat, layout = flatten(g)
    bad = np.flatnonzero(~np.isfinite(np.asarray(flat)))
    if bad.size:
        idx = int(bad[0])
        start = 0
        name = "?"
        for n, size in zip(layout.names, layout.sizes):
            if idx < start + size:
                name = n
                break
            start += size
        raise NumericError(f"non-finite gradient at flat index {idx} ({name})", where=name, index=idx)
    return g


def check_finite_layers(activations: Sequence, names: Sequence[str]):
    """Raise naming the first layer whose activations are not all finite."""
    for name, act in zip(names, activations):
        if not np.all(np.isfinite(np.asarray(act))):
            raise NumericError(f"numeric overflow in layer {name}", where=name)
