import jax
import jax.numpy as jnp
import numpy as np
import pytest
from scipy import integrate
from scipy.special import ndtr

from twocats.heads import bivariate_normal_cdf, bvlogistic_cdf, bvn_cdf, bvn_pdf, logistic_marginal_cdf


def plackett_oracle(x, y, rho):
    """Phi2(x, y; rho) = Phi(x) Phi(y) + int_0^rho phi2(x, y; r) dr."""

    def dens(r):
        s2 = 1 - r * r
        return np.exp(-(x * x - 2 * r * x * y + y * y) / (2 * s2)) / (2 * np.pi * np.sqrt(s2))

    return ndtr(x) * ndtr(y) + integrate.quad(dens, 0.0, rho, epsabs=1e-15, epsrel=1e-13, limit=200)[0]


def test_independence_at_medians():
    assert bivariate_normal_cdf(0.0, 0.0, 0.0) == pytest.approx(0.25, abs=1e-15)


@pytest.mark.parametrize("rho", [-0.999, -0.95, -0.6, 0.3, 0.9, 0.93, 0.99, 0.9999])
def test_median_orthant(rho):
    want = 0.25 + np.arcsin(rho) / (2 * np.pi)
    assert bivariate_normal_cdf(0.0, 0.0, rho) == pytest.approx(want, abs=1e-12)


def test_against_2d_quadrature():
    rho, x, y = 0.6, 0.5, -0.3
    s2 = 1 - rho * rho
    pdf = lambda b, a: np.exp(-(a * a - 2 * rho * a * b + b * b) / (2 * s2)) / (2 * np.pi * np.sqrt(s2))
    want = integrate.dblquad(pdf, -12, x, -12, y, epsabs=1e-12, epsrel=1e-12)[0]
    assert bivariate_normal_cdf(x, y, rho) == pytest.approx(want, abs=1e-6)


def test_against_plackett_oracle_on_grid():
    rng = np.random.default_rng(0)
    pts = np.column_stack([rng.uniform(-4, 4, 300), rng.uniform(-4, 4, 300), rng.uniform(-0.999, 0.999, 300)])
    got = bivariate_normal_cdf(pts[:, 0], pts[:, 1], pts[:, 2])
    want = np.array([plackett_oracle(*p) for p in pts])
    assert np.abs(got - want).max() < 1e-7


@pytest.mark.parametrize("rho", [1.0, -1.0, 1.5])
def test_domain_error(rho):
    with pytest.raises(ValueError):
        bivariate_normal_cdf(0.0, 0.0, rho)


@pytest.mark.parametrize("x,y,rho", [(0.3, -1.2, 0.4), (1.1, 0.7, -0.8), (-0.5, 0.2, 0.97)])
def test_bvn_gradient_against_differences(x, y, rho):
    g = jax.grad(lambda a: bvn_cdf(a[0], a[1], a[2]))(jnp.array([x, y, rho]))
    e = 1e-6
    for i in range(3):
        d = np.zeros(3)
        d[i] = e
        fd = (bivariate_normal_cdf(*(np.array([x, y, rho]) + d)) - bivariate_normal_cdf(*(np.array([x, y, rho]) - d))) / (2 * e)
        assert float(g[i]) == pytest.approx(fd, rel=1e-5, abs=1e-9)


def test_bvn_mixed_derivative_is_density():
    f = lambda a, b: bvn_cdf(a, b, 0.7)
    mixed = jax.grad(jax.grad(f, argnums=0), argnums=1)(0.2, -0.4)
    assert float(mixed) == pytest.approx(float(bvn_pdf(0.2, -0.4, 0.7)), rel=1e-12)


def test_logistic_limits():
    args = (0.0, 0.0, 1.0, 1.0, 1.0)
    assert float(bvlogistic_cdf(jnp.inf, jnp.inf, *args)) == 1.0
    assert float(bvlogistic_cdf(-jnp.inf, 0.3, *args)) == 0.0
    assert float(bvlogistic_cdf(0.3, -jnp.inf, *args)) == 0.0
    assert float(bvlogistic_cdf(0.3, jnp.inf, *args)) == pytest.approx(float(logistic_marginal_cdf(0.3, 0.0, 1.0, 1.0)))
    assert float(bvlogistic_cdf(1e4, 1e4, 0.0, 0.0, 1.0, 1.0, 2.0)) == 1.0
    assert float(bvlogistic_cdf(-1e4, -1e4, 0.0, 0.0, 1.0, 1.0, 2.0)) == 0.0


def test_logistic_alpha_one_factorizes():
    assert float(bvlogistic_cdf(0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0)) == pytest.approx(0.25, abs=1e-15)
    x, y = 0.7, -1.3
    want = 1 / (1 + np.exp(-x)) / (1 + np.exp(-y))
    assert float(bvlogistic_cdf(x, y, 0.0, 0.0, 1.0, 1.0, 1.0)) == pytest.approx(want, rel=1e-14)


def test_logistic_general_alpha_matches_direct_formula():
    x, y, m1, m2, s1, s2, a = 0.4, -0.2, 0.1, -0.3, 0.8, 1.7, 2.5
    t1, t2 = (x - m1) / s1, (y - m2) / s2
    want = 1 / (1 + np.exp(-a * t1) + np.exp(-a * t2) + np.exp(-a * (t1 + t2))) ** (1 / a)
    assert float(bvlogistic_cdf(x, y, m1, m2, s1, s2, a)) == pytest.approx(want, rel=1e-14)


def test_logistic_monotone_grid():
    g = jnp.linspace(-6, 6, 50)
    X, Y = jnp.meshgrid(g, g, indexing="ij")
    F = np.asarray(bvlogistic_cdf(X, Y, 0.2, -0.1, 0.7, 1.3, 0.6))
    assert np.all(np.diff(F, axis=0) >= 0) and np.all(np.diff(F, axis=1) >= 0)
    assert np.all((F >= 0) & (F <= 1))
