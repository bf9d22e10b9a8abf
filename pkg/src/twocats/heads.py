"""Bivariate CDFs used as the output layer of the copula model.

Both heads are written in ``jax.numpy`` so they can sit inside the
differentiated model graph.  The bivariate normal CDF follows Genz's
BVND algorithm (Drezner & Wesolowsky with Genz's refinements), with
analytic first derivatives attached through ``jax.custom_jvp``; all
higher derivatives (the copula density needs the mixed second one) are
therefore exact rather than derivatives of a quadrature rule.
"""

import math

import jax
import jax.numpy as jnp
import numpy as np
from jax.scipy.special import ndtr

_TWO_PI = 2.0 * math.pi
_INV_SQRT_2PI = 1.0 / math.sqrt(_TWO_PI)

# 20-point Gauss-Legendre rule, positive half of the nodes.
_GL_X = (
    0.9931285991850949, 0.9639719272779138, 0.9122344282513259,
    0.8391169718222188, 0.7463319064601508, 0.6360536807265150,
    0.5108670019508271, 0.3737060887154196, 0.2277858511416451,
    0.07652652113349733,
)
_GL_W = (
    0.01761400713915212, 0.04060142980038694, 0.06267204833410906,
    0.08327674157670475, 0.1019301198172404, 0.1181945319615184,
    0.1316886384491766, 0.1420961093183821, 0.1491729864726037,
    0.1527533871307259,
)


def _gl_nodes(dtype):
    x = jnp.asarray(_GL_X, dtype=dtype)
    w = jnp.asarray(_GL_W, dtype=dtype)
    return jnp.concatenate([1.0 - x, 1.0 + x]), jnp.concatenate([w, w])


def _npdf(x):
    return _INV_SQRT_2PI * jnp.exp(-0.5 * x * x)


def _bvn_upper(h, k, r):
    """P[X > h, Y > k] for a standard bivariate normal with correlation r.

    Inputs are broadcast arrays of finite values with |r| < 1.
    """
    dtype = jnp.result_type(h, k, r)
    x, w = _gl_nodes(dtype)
    h, k, r = jnp.broadcast_arrays(h, k, r)
    h = h[..., None]
    k = k[..., None]
    r = r[..., None]
    hk = h * k

    # moderate correlation: integrate along the arcsine of r
    r_mod = jnp.clip(r, -0.925, 0.925)
    hs = 0.5 * (h * h + k * k)
    asr = 0.5 * jnp.arcsin(r_mod)
    sn = jnp.sin(asr * x)
    moderate = jnp.sum(w * jnp.exp((sn * hk - hs) / (1.0 - sn * sn)), -1)
    moderate = moderate * asr[..., 0] / _TWO_PI + ndtr(-h[..., 0]) * ndtr(-k[..., 0])

    # strong correlation: expansion around |r| = 1
    neg = r < 0
    ks = jnp.where(neg, -k, k)
    hks = jnp.where(neg, -hk, hk)
    r_hi = jnp.where(jnp.abs(r) < 0.925, 0.95, jnp.abs(r))
    as_ = (1.0 - r_hi) * (1.0 + r_hi)
    a = jnp.sqrt(as_)
    bs = (h - ks) ** 2
    c = (4.0 - hks) / 8.0
    d = (12.0 - hks) / 16.0
    bvn = (
        a * jnp.exp(-0.5 * (bs / as_ + hks))
        * (1.0 - c * (bs - as_) * (1.0 - d * bs / 5.0) / 3.0 + c * d * as_ * as_ / 5.0)
    )
    b = jnp.sqrt(bs)
    tail = (
        jnp.exp(-0.5 * jnp.maximum(hks, -160.0)) * math.sqrt(_TWO_PI) * ndtr(-b / a) * b
        * (1.0 - c * bs * (1.0 - d * bs / 5.0) / 3.0)
    )
    bvn = bvn - jnp.where(hks > -160.0, tail, 0.0)
    a2 = 0.5 * a
    xn = x[:10]  # 1 - node
    xp = x[10:]  # 1 + node
    xs = (a2 * xn) ** 2
    rs = jnp.sqrt(1.0 - xs)
    s1 = jnp.exp(-bs / (2.0 * xs) - hks / (1.0 + rs)) / rs - jnp.exp(-(bs / xs + hks) / 2.0) * (
        1.0 + c * xs * (1.0 + d * xs)
    )
    xs = (a2 * xp) ** 2
    rs = jnp.sqrt(1.0 - xs)
    s2 = jnp.exp(-(bs / xs + hks) / 2.0) * (
        jnp.exp(-hks * (1.0 - rs) / (2.0 * (1.0 + rs))) / rs - (1.0 + c * xs * (1.0 + d * xs))
    )
    bvn = bvn + a2 * jnp.sum(w[:10] * (s1 + s2), -1, keepdims=True)
    bvn = -bvn[..., 0] / _TWO_PI
    hh, kk = h[..., 0], ks[..., 0]
    pos_case = bvn + ndtr(-jnp.maximum(hh, kk))
    neg_case = -bvn + jnp.maximum(0.0, ndtr(-hh) - ndtr(-kk))
    strong = jnp.where(neg[..., 0], neg_case, pos_case)

    out = jnp.where(jnp.abs(r[..., 0]) < 0.925, moderate, strong)
    return jnp.clip(out, 0.0, 1.0)


@jax.custom_jvp
def bvn_cdf(x, y, rho):
    """Standard bivariate normal CDF ``P[X <= x, Y <= y]`` with correlation ``rho``.

    Absolute error is below 1e-7 for finite arguments and ``|rho| < 1``.
    Infinite arguments are not supported here; callers that need the
    marginal limits branch on them before calling.
    """
    return _bvn_upper(-x, -y, rho)


@bvn_cdf.defjvp
def _bvn_cdf_jvp(primals, tangents):
    x, y, rho = primals
    dx, dy, dr = tangents
    out = bvn_cdf(x, y, rho)
    s = jnp.sqrt(1.0 - rho * rho)
    gx = _npdf(x) * ndtr((y - rho * x) / s)
    gy = _npdf(y) * ndtr((x - rho * y) / s)
    q = (x * x - 2.0 * rho * x * y + y * y) / (s * s)
    gr = jnp.exp(-0.5 * q) / (_TWO_PI * s)
    return out, gx * dx + gy * dy + gr * dr


def bivariate_normal_cdf(x, y, rho):
    """NumPy-facing :func:`bvn_cdf` that validates ``|rho| < 1``."""
    rho_arr = np.asarray(rho, dtype=np.float64)
    if np.any(np.abs(rho_arr) >= 1.0):
        raise ValueError(f"bivariate normal needs |rho| < 1, got {rho!r}")
    out = np.asarray(bvn_cdf(jnp.asarray(x, dtype=jnp.float64), jnp.asarray(y, dtype=jnp.float64),
                             jnp.asarray(rho_arr)))
    return out[()] if out.ndim == 0 else out


def bvn_pdf(x, y, rho):
    s2 = 1.0 - rho * rho
    q = (x * x - 2.0 * rho * x * y + y * y) / s2
    return jnp.exp(-0.5 * q) / (_TWO_PI * jnp.sqrt(s2))


def bvlogistic_cdf(x, y, mu1, mu2, sigma1, sigma2, alpha):
    """Flexible bivariate logistic CDF.

    ``((1 + e^{-a s1} + e^{-a s2} + e^{-a (s1 + s2)})^{1/a})^{-1}`` with
    ``s_i = (x_i - mu_i) / sigma_i``, evaluated as a log-sum-exp so large
    negative standardized arguments do not overflow.  Accepts +-inf.
    """
    s1 = (x - mu1) / sigma1
    s2 = (y - mu2) / sigma2
    s1, s2 = jnp.broadcast_arrays(s1, s2)
    # +inf coordinates contribute nothing; keep them out of the graph so
    # gradients with respect to the head parameters stay finite
    fin1 = jnp.isfinite(s1) | (s1 < 0)
    fin2 = jnp.isfinite(s2) | (s2 < 0)
    a1 = jnp.where(fin1, s1, 0.0)
    a2 = jnp.where(fin2, s2, 0.0)
    neg_inf = -jnp.inf
    terms = jnp.stack(
        [
            jnp.zeros_like(a1),
            jnp.where(fin1, -alpha * a1, neg_inf),
            jnp.where(fin2, -alpha * a2, neg_inf),
            jnp.where(fin1 & fin2, -alpha * (a1 + a2), neg_inf),
        ],
        axis=-1,
    )
    # a -inf standardized argument drives the CDF to zero
    bottom = (s1 == -jnp.inf) | (s2 == -jnp.inf)
    terms = jnp.where(bottom[..., None], 0.0, terms)
    log_f = -jax.scipy.special.logsumexp(terms, axis=-1) / alpha
    return jnp.where(bottom, 0.0, jnp.exp(log_f))


def logistic_marginal_cdf(x, mu, sigma, alpha):
    """Marginal of the flexible logistic: ``(1 + e^{-a s})^{-1/a}``."""
    s = (x - mu) / sigma
    return jnp.exp(-jax.nn.softplus(-alpha * s) / alpha)
