"""The 2-Cats copula hypothesis and its variants.

``H(u, v) = G(z(t_v(u)), z(t_u(v)))`` where ``z`` is the logit, ``G`` a
bivariate CDF on R^2 (Gaussian or flexible logistic) and ``t_v(u)`` the
normalized cumulative integral of a strictly positive MLP along ``u``
with ``v`` held fixed (and symmetrically for ``t_u(v)``).

The integrals use the trapezoid rule on ``grid_size + 1`` equally spaced
knots with the query point inserted in order.  Every cumulative and full
integral is written as a weighted sum of network outputs, which keeps the
whole graph differentiable and cheap to batch.
"""

import functools
import json
from dataclasses import dataclass, field, replace

import jax
import jax.numpy as jnp
import numpy as np
from jax.scipy.special import ndtr
from scipy import stats

from .diff import InputDerivs, NumericError, check_finite_layers, flatten, input_hessian, layout_of
from .heads import bvlogistic_cdf, bvn_cdf, logistic_marginal_cdf
from .rng import make_rng

LAYER_SIZES = (2, 128, 64, 32, 16, 1)
GRID_SIZE = 200
T_CLAMP = 1e-6
RHO_MAX = 0.99999
HEADS = ("gaussian", "logistic")
FORMAT_NAME = "twocats-model"
FORMAT_VERSION = 1


def elu_plus_one(x):
    # same function as elu(x) + 1; expm1 is far slower than exp in float64 on CPU
    return jnp.maximum(x, 0.0) + jnp.exp(jnp.minimum(x, 0.0))


def mlp_apply(mlp, x, y):
    """Positive network ``m(x, y)``; ``x`` and ``y`` broadcast against each other."""
    w, b = mlp[0]["w"], mlp[0]["b"]
    x = jnp.asarray(x)[..., None]
    y = jnp.asarray(y)[..., None]
    h = elu_plus_one(x * w[0] + y * w[1] + b)
    for layer in mlp[1:]:
        h = elu_plus_one(h @ layer["w"] + layer["b"])
    return h[..., 0]


def mlp_activations(mlp, x, y):
    w, b = mlp[0]["w"], mlp[0]["b"]
    h = elu_plus_one(jnp.asarray(x)[..., None] * w[0] + jnp.asarray(y)[..., None] * w[1] + b)
    acts = [h]
    for layer in mlp[1:]:
        h = elu_plus_one(h @ layer["w"] + layer["b"])
        acts.append(h)
    return acts


def trapezoid_weights(target, grid_size):
    """Weights of the knot values and of the inserted point.

    Returns ``(a, a_t, b, b_t)`` such that, with ``m_j`` the integrand at
    knot ``j / grid_size`` and ``m_t`` at ``target``,
    ``sum(a * m) + a_t * m_t`` is the cumulative trapezoid integral up to
    ``target`` and ``sum(b * m) + b_t * m_t`` the integral over [0, 1],
    both on the grid with ``target`` inserted.
    """
    n = grid_size
    step = 1.0 / n
    t = target[..., None]
    k = jnp.clip(jnp.floor(target * n), 0, n - 1)[..., None]
    j = jnp.arange(n + 1, dtype=t.dtype)
    lo = t - k * step
    hi = (k + 1) * step - t
    at_k = (j == k).astype(t.dtype)
    at_k1 = (j == k + 1).astype(t.dtype)
    a = 0.5 * step * ((j < k).astype(t.dtype) + ((j >= 1) & (j <= k)).astype(t.dtype)) + 0.5 * lo * at_k
    base = jnp.where((j == 0) | (j == n), 0.5 * step, step).astype(t.dtype)
    b = base - 0.5 * step * (at_k + at_k1) + 0.5 * lo * at_k + 0.5 * hi * at_k1
    return a, 0.5 * lo[..., 0], b, 0.5 * (lo + hi)[..., 0]


def transform_t(mlp, target, fixed, axis, grid_size=GRID_SIZE):
    """Normalized cumulative integral of the network along one axis.

    ``axis=0`` integrates ``m(x, fixed)`` over ``x`` (this is ``t_v(u)``
    with ``target=u, fixed=v``); ``axis=1`` integrates ``m(fixed, y)``.
    ``fixed`` may be a scalar, in which case the knot evaluations are
    shared by every target.
    """
    target = jnp.asarray(target)
    fixed = jnp.asarray(fixed, dtype=target.dtype)
    knots = jnp.arange(grid_size + 1, dtype=target.dtype) / grid_size
    f = fixed[..., None]
    if axis == 0:
        m_knots = mlp_apply(mlp, knots, f)
        m_t = mlp_apply(mlp, target, fixed)
    else:
        m_knots = mlp_apply(mlp, f, knots)
        m_t = mlp_apply(mlp, fixed, target)
    a, a_t, b, b_t = trapezoid_weights(target, grid_size)
    num = jnp.sum(a * m_knots, -1) + a_t * m_t
    den = jnp.sum(b * m_knots, -1) + b_t * m_t
    t = num / den
    t = jnp.where(target >= 1.0, 1.0, t)
    return jnp.where(target <= 0.0, 0.0, t)


def cumulative_integral(mlp, target, fixed, axis, grid_size=GRID_SIZE):
    """Unnormalized version of :func:`transform_t`, used by the FLEX variant."""
    target = jnp.asarray(target)
    fixed = jnp.asarray(fixed, dtype=target.dtype)
    knots = jnp.arange(grid_size + 1, dtype=target.dtype) / grid_size
    f = fixed[..., None]
    if axis == 0:
        m_knots = mlp_apply(mlp, knots, f)
        m_t = mlp_apply(mlp, target, fixed)
    else:
        m_knots = mlp_apply(mlp, f, knots)
        m_t = mlp_apply(mlp, fixed, target)
    a, a_t, _, _ = trapezoid_weights(target, grid_size)
    return jnp.where(target <= 0.0, 0.0, jnp.sum(a * m_knots, -1) + a_t * m_t)


def logit(t):
    return jnp.log(t) - jnp.log1p(-t)


def head_values(head, hp):
    """Constrained head parameters from their unconstrained storage."""
    if head == "gaussian":
        # tanh saturates to exactly +-1 in float32 for large inputs
        rho = jnp.clip(jnp.tanh(hp["rho"]), -RHO_MAX, RHO_MAX)
        return {"mu1": hp["mu1"], "mu2": hp["mu2"], "rho": rho}
    if head == "logistic":
        return {
            "mu1": hp["mu1"],
            "mu2": hp["mu2"],
            "sigma1": jnp.exp(hp["log_sigma1"]),
            "sigma2": jnp.exp(hp["log_sigma2"]),
            "alpha": jnp.exp(hp["log_alpha"]),
        }
    raise ValueError(f"unknown head {head!r}")


def head_cdf(head, hp, za, zb):
    p = head_values(head, hp)
    if head == "gaussian":
        return bvn_cdf(za - p["mu1"], zb - p["mu2"], p["rho"])
    return bvlogistic_cdf(za, zb, p["mu1"], p["mu2"], p["sigma1"], p["sigma2"], p["alpha"])


def head_marginal(head, hp, z, which):
    p = head_values(head, hp)
    mu = p["mu1"] if which == 1 else p["mu2"]
    if head == "gaussian":
        return ndtr(z - mu)
    sigma = p["sigma1"] if which == 1 else p["sigma2"]
    return logistic_marginal_cdf(z, mu, sigma, p["alpha"])


def hypothesis(params, u, v, head, grid_size=GRID_SIZE, exact_boundary=True):
    """Batched ``H(u, v)`` for equally shaped arrays ``u`` and ``v``."""
    mlp = params["mlp"]
    ta = transform_t(mlp, u, v, 0, grid_size)
    tb = transform_t(mlp, v, u, 1, grid_size)
    za = logit(jnp.clip(ta, T_CLAMP, 1.0 - T_CLAMP))
    zb = logit(jnp.clip(tb, T_CLAMP, 1.0 - T_CLAMP))
    g = head_cdf(head, params["head"], za, zb)
    if not exact_boundary:
        return g
    u1 = u >= 1.0
    v1 = v >= 1.0
    g = jnp.where(u1, head_marginal(head, params["head"], zb, 2), g)
    g = jnp.where(v1, head_marginal(head, params["head"], za, 1), g)
    g = jnp.where(u1 & v1, 1.0, g)
    return jnp.where((u <= 0.0) | (v <= 0.0), 0.0, g)


def edge_u(params, u, head, grid_size=GRID_SIZE):
    """``H(u, 1)`` on the clamped-logit path; knots at v=1 are shared."""
    ta = transform_t(params["mlp"], u, 1.0, 0, grid_size)
    za = logit(jnp.clip(ta, T_CLAMP, 1.0 - T_CLAMP))
    zb = jnp.full_like(za, logit(jnp.asarray(1.0 - T_CLAMP, dtype=za.dtype)))
    return head_cdf(head, params["head"], za, zb)


def edge_v(params, v, head, grid_size=GRID_SIZE):
    """``H(1, v)`` on the clamped-logit path."""
    tb = transform_t(params["mlp"], v, 1.0, 1, grid_size)
    zb = logit(jnp.clip(tb, T_CLAMP, 1.0 - T_CLAMP))
    za = jnp.full_like(zb, logit(jnp.asarray(1.0 - T_CLAMP, dtype=zb.dtype)))
    return head_cdf(head, params["head"], za, zb)


def hypothesis_jets(params, u, v, head, grid_size=GRID_SIZE, exact_boundary=True):
    """``(H, dH/du, dH/dv, d2H/dudv)`` at every point, by nested forward mode."""
    ones = jnp.ones_like(u)

    def along_v(uu):
        return jax.jvp(
            lambda vv: hypothesis(params, uu, vv, head, grid_size, exact_boundary), (v,), (ones,)
        )

    (h, hv), (hu, huv) = jax.jvp(along_v, (u,), (ones,))
    return h, hu, hv, huv


def edge_jets(params, u, v, head, grid_size=GRID_SIZE):
    """``(H(u,1), dH/du(u,1), H(1,v), dH/dv(1,v))`` on the clamped path."""
    ones_u = jnp.ones_like(u)
    ones_v = jnp.ones_like(v)
    hu1, du = jax.jvp(lambda x: edge_u(params, x, head, grid_size), (u,), (ones_u,))
    h1v, dv = jax.jvp(lambda y: edge_v(params, y, head, grid_size), (v,), (ones_v,))
    return hu1, du, h1v, dv


def flex_hypothesis(params, u, v, head, grid_size=GRID_SIZE):
    """FLEX variant: unnormalized integrals fed straight into ``G``.

    ``t_v(u) = int_0^u m(x, v) dx`` and ``t_u(v) = int_0^v m(y, u) dy``
    (note the argument order of the second one).  No logit.
    """
    mlp = params["mlp"]
    ta = cumulative_integral(mlp, u, v, 0, grid_size)
    tb = cumulative_integral(mlp, v, u, 0, grid_size)
    return head_cdf(head, params["head"], ta, tb)


_jit_h = jax.jit(hypothesis, static_argnames=("head", "grid_size", "exact_boundary"))
_jit_jets = jax.jit(hypothesis_jets, static_argnames=("head", "grid_size", "exact_boundary"))
_jit_flex = jax.jit(flex_hypothesis, static_argnames=("head", "grid_size"))
_jit_edges = jax.jit(edge_jets, static_argnames=("head", "grid_size"))
_jit_transform = jax.jit(transform_t, static_argnames=("axis", "grid_size"))


def _point_h(params, u, v, head, grid_size):
    return hypothesis(params, u[None], v[None], head, grid_size)[0]


# differentiating through a jitted scalar keeps the Hessian compiled and cached
_jit_point_h = jax.jit(_point_h, static_argnames=("head", "grid_size"))

EVAL_CHUNK = 128


def _chunked(fn, *arrays, chunk=EVAL_CHUNK):
    """Apply a batched jitted function in fixed-size chunks (one compile)."""
    arrays = [np.asarray(a, dtype=np.float64).ravel() for a in arrays]
    n = arrays[0].size
    if n == 0:
        return fn(*[jnp.asarray(a) for a in arrays])
    # small inputs are padded to a power of two so only a few shapes get compiled
    size = min(chunk, 1 << (n - 1).bit_length())
    pad = (-n) % size
    padded = [np.concatenate([a, np.full(pad, a[-1])]) for a in arrays]
    outs = []
    for start in range(0, n + pad, size):
        outs.append(jax.device_get(fn(*[jnp.asarray(a[start:start + size]) for a in padded])))
    if isinstance(outs[0], tuple):
        return tuple(np.concatenate([o[i] for o in outs])[:n] for i in range(len(outs[0])))
    return np.concatenate(outs)[:n]


def _as_points(u, v):
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    u, v = np.broadcast_arrays(u, v)
    if np.any(~np.isfinite(u)) or np.any(~np.isfinite(v)):
        raise ValueError("u and v must be finite")
    if np.any((u < 0) | (u > 1) | (v < 0) | (v > 1)):
        raise ValueError("u and v must lie in [0, 1]")
    return u, v


def _scalar_or_array(x, shape):
    x = np.asarray(x).reshape(shape)
    return float(x) if x.ndim == 0 else x


def lecun_normal(rng, fan_in, fan_out):
    # truncated at two standard deviations, rescaled to keep variance 1 / fan_in
    std = np.sqrt(1.0 / fan_in) / 0.87962566103423978
    return stats.truncnorm.rvs(-2.0, 2.0, scale=std, size=(fan_in, fan_out), random_state=rng)


def init_params(seed=0, head="logistic", sizes=LAYER_SIZES):
    """LeCun-normal weights, zero biases, identity-like head."""
    if head not in HEADS:
        raise ValueError(f"unknown head {head!r}; expected one of {HEADS}")
    rng = make_rng(seed)
    mlp = [
        {"w": jnp.asarray(lecun_normal(rng, a, b)), "b": jnp.zeros(b)}
        for a, b in zip(sizes[:-1], sizes[1:])
    ]
    if head == "gaussian":
        hp = {"mu1": jnp.asarray(0.0), "mu2": jnp.asarray(0.0), "rho": jnp.asarray(0.0)}
    else:
        hp = {
            "mu1": jnp.asarray(0.0),
            "mu2": jnp.asarray(0.0),
            "log_sigma1": jnp.asarray(0.0),
            "log_sigma2": jnp.asarray(0.0),
            "log_alpha": jnp.asarray(0.0),
        }
    return {"mlp": mlp, "head": hp}


@dataclass(frozen=True)
class TwoCatsModel:
    """Parameters plus the static choices (head family, grid size)."""

    params: dict
    head: str = "logistic"
    grid_size: int = GRID_SIZE

    @classmethod
    def init(cls, seed=0, head="logistic", grid_size=GRID_SIZE):
        return cls(init_params(seed, head), head, grid_size)

    def with_params(self, params):
        return replace(self, params=params)

    def astype(self, dtype):
        return self.with_params(jax.tree_util.tree_map(lambda x: jnp.asarray(x, dtype=dtype), self.params))

    def head_values(self):
        return {k: float(v) for k, v in head_values(self.head, self.params["head"]).items()}

    def __call__(self, u, v):
        return self.H(u, v)

    def H(self, u, v):
        u, v = _as_points(u, v)
        fn = functools.partial(_jit_h, self.params, head=self.head, grid_size=self.grid_size)
        return _scalar_or_array(_chunked(fn, u, v), u.shape)

    def H_clamped(self, u, v):
        """H without the exact-boundary short circuits."""
        u, v = _as_points(u, v)
        fn = functools.partial(
            _jit_h, self.params, head=self.head, grid_size=self.grid_size, exact_boundary=False
        )
        return _scalar_or_array(_chunked(fn, u, v), u.shape)

    def jets(self, u, v):
        """``(H, d_u, d_v, d_uv)`` as arrays."""
        u, v = _as_points(u, v)
        fn = functools.partial(_jit_jets, self.params, head=self.head, grid_size=self.grid_size)
        out = _chunked(fn, u, v)
        return tuple(_scalar_or_array(o, u.shape) for o in out)

    def density(self, u, v):
        return self.jets(u, v)[3]

    def edge_jets(self, u, v):
        """``(H(u,1), dH/du(u,1), H(1,v), dH/dv(1,v))`` on the clamped-logit path."""
        u, v = _as_points(u, v)
        fn = functools.partial(_jit_edges, self.params, head=self.head, grid_size=self.grid_size)
        return tuple(_scalar_or_array(o, u.shape) for o in _chunked(fn, u, v))

    def transform(self, target, fixed, axis):
        target, fixed = _as_points(target, fixed)
        fn = functools.partial(_jit_transform, self.params["mlp"], axis=axis, grid_size=self.grid_size)
        return _scalar_or_array(_chunked(fn, target, fixed), target.shape)

    def derivs(self, u, v) -> InputDerivs:
        """Value, gradient and Hessian of H at a single interior point."""
        u, v = _as_points(u, v)
        try:
            return input_hessian(self._scalar_h, float(u), float(v))
        except NumericError:
            self._diagnose(float(u), float(v))
            raise

    def _scalar_h(self, u, v):
        return _jit_point_h(self.params, u, v, head=self.head, grid_size=self.grid_size)

    def _diagnose(self, u, v):
        knots = np.arange(self.grid_size + 1) / self.grid_size
        names = [f"dense_{i}" for i in range(len(self.params["mlp"]))]
        for x, y in ((knots, np.full_like(knots, v)), (np.full_like(knots, u), knots)):
            check_finite_layers(mlp_activations(self.params["mlp"], x, y), names)
        raise NumericError(f"non-finite value in the transform or head at ({u}, {v})", where="head")

    def flex_H(self, u, v):
        u, v = _as_points(u, v)
        fn = functools.partial(_jit_flex, self.params, head=self.head, grid_size=self.grid_size)
        return _scalar_or_array(_chunked(fn, u, v), u.shape)

    # serialization -----------------------------------------------------

    def to_dict(self):
        flat, layout = flatten(self.params)
        return {
            "format": FORMAT_NAME,
            "version": FORMAT_VERSION,
            "head": self.head,
            "grid_size": self.grid_size,
            "layout": layout.describe(),
            "params": [float(x) for x in np.asarray(flat, dtype=np.float64)],
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("format") != FORMAT_NAME:
            raise ValueError("not a twocats model file")
        if d.get("version") != FORMAT_VERSION:
            raise ValueError(f"unsupported model file version {d.get('version')}")
        head = d["head"]
        template = init_params(0, head, _sizes_from_layout(d["layout"]))
        layout = layout_of(template)
        if layout.describe() != d["layout"]:
            raise ValueError("model file layout does not match its head kind")
        flat = np.asarray(d["params"], dtype=np.float64)
        return cls(layout.unflatten(flat), head, int(d["grid_size"]))

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh)
            fh.write("\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def _sizes_from_layout(layout):
    sizes = []
    for name, shape in layout:
        if name.startswith("mlp.") and name.endswith(".w"):
            if not sizes:
                sizes.append(shape[0])
            sizes.append(shape[1])
    if not sizes:
        raise ValueError("model file has no network layers")
    return tuple(sizes)


@dataclass(frozen=True)
class MixtureTwoCats:
    """Convex combination of 2-Cats models with softmax weights."""

    components: tuple
    logits: np.ndarray = field(default=None)

    def __post_init__(self):
        if len(self.components) < 1:
            raise ValueError("a mixture needs at least one component")
        logits = np.zeros(len(self.components)) if self.logits is None else np.asarray(self.logits, float)
        if logits.shape != (len(self.components),):
            raise ValueError("one logit per component is required")
        object.__setattr__(self, "components", tuple(self.components))
        object.__setattr__(self, "logits", logits)

    @property
    def weights(self):
        z = self.logits - self.logits.max()
        w = np.exp(z)
        return w / w.sum()

    def H(self, u, v):
        return sum(w * np.asarray(c.H(u, v)) for w, c in zip(self.weights, self.components))

    def jets(self, u, v):
        parts = [c.jets(u, v) for c in self.components]
        return tuple(sum(w * np.asarray(p[i]) for w, p in zip(self.weights, parts)) for i in range(4))

    def density(self, u, v):
        return self.jets(u, v)[3]
