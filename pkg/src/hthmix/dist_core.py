"""The hidden truncation hyperbolic distribution and its relatives.

Provides the symmetric hyperbolic density and CDF, the canonical fundamental
skew-normal density, and the HTH density and exact sampler, plus the
unnormalized conditional density of the mixing variable given an observation
(the test oracle for the fitting engine's expectations).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.special import logsumexp, ndtr

from ._quadrature import QuadratureError, gig_kernel_nodes
from .gig import GigParams, gig_sample
from .specfun import MvnSpec, QuadratureSpec, _mvn_cdf_std_batch, log_bessel_k, mvn_rectangle_prob

__all__ = [
    "HthParams",
    "sym_hyperbolic_logpdf",
    "sym_hyperbolic_cdf",
    "cfusn_logpdf",
    "hth_logpdf",
    "hth_sample",
    "posterior_w_logdensity_unnorm",
]

_LOG_2PI = np.log(2.0 * np.pi)
_LOG_H_FLOOR = -34.0  # ~1e-15 in linear scale: the CDF evaluators' precision edge


def _chol_pd(mat, name):
    try:
        return np.linalg.cholesky(mat)
    except np.linalg.LinAlgError as exc:
        raise ValueError(f"{name} must be positive definite") from exc


def _canonical_columns(lambda_mat):
    """Sort skewness columns by descending norm (stable; ties keep order)."""
    norms = np.linalg.norm(lambda_mat, axis=0)
    order = np.argsort(-norms, kind="stable")
    return lambda_mat[:, order]


def nodes_for(q):
    """Gauss-Legendre node count for the mixing quadrature at dimension q."""
    return {1: 96, 2: 72, 3: 56}.get(q, 48)


@dataclass(frozen=True, eq=False)
class HthParams:
    """One HTH component: location, scale, skewness and mixing parameters.

    Derived matrices ``omega_mat`` (scale plus skew outer product) and
    ``delta_mat`` (skew-conditional innovation scale) are computed on
    construction, and skewness columns are put in canonical order
    (descending Euclidean norm; ties keep their relative order).
    """

    mu: np.ndarray
    sigma: np.ndarray
    lambda_mat: np.ndarray
    index: float
    omega: float
    omega_mat: np.ndarray = field(init=False, repr=False)
    delta_mat: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mu, dtype=float))
        sigma = np.atleast_2d(np.asarray(self.sigma, dtype=float))
        lam = np.asarray(self.lambda_mat, dtype=float)
        if lam.ndim == 1:
            lam = lam[:, None]
        p = mu.size
        q = lam.shape[1]
        if sigma.shape != (p, p):
            raise ValueError("sigma must be p x p")
        if lam.shape[0] != p:
            raise ValueError("lambda_mat must have p rows")
        if not 1 <= q <= p:
            raise ValueError("skewness rank q must satisfy 1 <= q <= p")
        if not self.omega > 0:
            raise ValueError("omega must be positive")
        sigma = 0.5 * (sigma + sigma.T)
        _chol_pd(sigma, "sigma")
        lam = _canonical_columns(lam)
        omega_mat = sigma + lam @ lam.T
        om_chol = _chol_pd(omega_mat, "omega_mat")
        delta_mat = np.eye(q) - lam.T @ cho_solve((om_chol, True), lam)
        delta_mat = 0.5 * (delta_mat + delta_mat.T)
        _chol_pd(delta_mat, "delta_mat")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "lambda_mat", lam)
        object.__setattr__(self, "index", float(self.index))
        object.__setattr__(self, "omega", float(self.omega))
        object.__setattr__(self, "omega_mat", omega_mat)
        object.__setattr__(self, "delta_mat", delta_mat)

    @property
    def p(self):
        return self.mu.size

    @property
    def q(self):
        return self.lambda_mat.shape[1]


def _mahalanobis_sq(x, mu, cov):
    """delta(x | mu, cov) row-wise; x is (n, p) or (p,)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    diff = x - mu
    cf = cho_factor(cov, lower=True)
    sol = cho_solve(cf, diff.T).T
    return np.einsum("ij,ij->i", diff, sol)


def sym_hyperbolic_logpdf(x, mu, sigma, index, omega):
    """Log density of the p-dimensional symmetric hyperbolic distribution.

    Normal mean-variance mixture with GIG(omega, omega, index) mixing and no
    skewness, evaluated through log Bessel values so that distant points do
    not underflow.  Vectorized over rows of ``x``.
    """
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
    p = mu.size
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 1
    delta = _mahalanobis_sq(x, mu, sigma)
    _, logdet = np.linalg.slogdet(sigma)
    nu = index - 0.5 * p
    arg = np.sqrt(omega * (omega + delta))
    out = (
        0.5 * nu * (np.log(omega + delta) - np.log(omega))
        + log_bessel_k(nu, arg)
        - 0.5 * p * _LOG_2PI
        - 0.5 * logdet
        - log_bessel_k(index, omega)
    )
    return float(out[0]) if scalar else out


def _corr_split(scale):
    d = np.sqrt(np.diag(scale))
    return scale / np.outer(d, d), d


def _logsumexp_last(a):
    """log-sum-exp over the last axis; tolerant of all-(-inf) rows."""
    m = np.max(a, axis=-1)
    safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(invalid="ignore"):
        out = safe + np.log(np.sum(np.exp(a - safe[..., None]), axis=-1))
    return np.where(np.isfinite(m), out, -np.inf)


def _log_h_cdf_multi(z, corr, scale_fac, indexes, pair, n_nodes):
    """log H_q for a batch of standardized points at one or more indexes.

    ``z`` is (n, q): the evaluation points minus location, divided by the
    square root of the scale diagonal; ``scale_fac`` multiplies the whole
    scale matrix row-wise; ``pair`` is the common GIG parameter per row.
    All requested ``indexes`` share one set of nodes (and hence one normal
    CDF evaluation) spanning the union of their kernel supports.
    """
    from ._quadrature import _gl, kernel_support

    z = np.atleast_2d(z)
    n = z.shape[0]
    pair = np.broadcast_to(np.asarray(pair, dtype=float), (n,))
    scale_fac = np.broadcast_to(np.asarray(scale_fac, dtype=float), (n,))
    # the CDF factor decays like exp(-extra/(2w)) into the orthant, which
    # shifts the integrand mass; widen the node window accordingly
    extra = np.sum(np.minimum(z, 0.0) ** 2, axis=-1) / scale_fac
    lo = hi = None
    for idx in indexes:
        for chi in (pair, pair + extra):
            t_lo, t_hi = kernel_support(idx, pair, chi)
            lo = t_lo if lo is None else np.minimum(lo, t_lo)
            hi = t_hi if hi is None else np.maximum(hi, t_hi)
    x, wq = _gl(n_nodes)
    half = 0.5 * (hi - lo)
    t = (0.5 * (hi + lo))[:, None] + half[:, None] * x
    log_w = np.log(half)[:, None] + np.log(wq)

    root_w = np.exp(0.5 * t) * np.sqrt(scale_fac)[:, None]
    b = z[:, None, :] / root_w[:, :, None]
    phi = _mvn_cdf_std_batch(b, corr)
    with np.errstate(divide="ignore"):
        log_phi = np.where(phi > 0.0, np.log(np.maximum(phi, 1e-320)), -np.inf)
    outs = []
    cosh_term = 0.5 * pair[:, None] * (np.exp(t) + np.exp(-t))
    for idx in indexes:
        log_kern = idx * t - cosh_term + log_w
        log_norm = np.log(2.0) + log_bessel_k(idx, pair)
        outs.append(_logsumexp_last(log_kern + log_phi) - log_norm)
    return outs


def _log_h_cdf_batch(z, corr, scale_fac, index, pair, n_nodes):
    """log H_q for a batch of standardized points at a single index."""
    return _log_h_cdf_multi(z, corr, scale_fac, (index,), pair, n_nodes)[0]


def _log_h_cdf_refined(z, corr, scale_fac, index, pair, quad, n_nodes):
    """Node-doubling refinement of ``_log_h_cdf_batch`` with per-point masks.

    Points already stable between successive node counts are frozen; only
    stragglers are recomputed at higher resolution, up to the node cap
    implied by the quadrature policy.
    """
    z = np.atleast_2d(z)
    n = z.shape[0]
    pair = np.broadcast_to(np.asarray(pair, dtype=float), (n,)).copy()
    scale_fac = np.broadcast_to(np.asarray(scale_fac, dtype=float), (n,)).copy()
    cap = max(512, 32 * quad.max_subdivisions)
    cur = _log_h_cdf_batch(z, corr, scale_fac, index, pair, n_nodes)
    live = np.ones(n, dtype=bool)
    while 2 * n_nodes <= cap and np.any(live):
        n_nodes *= 2
        nxt = _log_h_cdf_batch(z[live], corr, scale_fac[live], index, pair[live], n_nodes)
        prev = cur[live]
        with np.errstate(invalid="ignore"):
            err = np.abs(nxt - prev)
        settled = (err <= quad.relative_tolerance) | (~np.isfinite(nxt) & ~np.isfinite(prev))
        # the CDF evaluators carry ~1e-15 absolute error in linear scale, so
        # below that the relative criterion is unattainable; accept absolute
        # stability at the precision edge instead
        with np.errstate(over="ignore", invalid="ignore"):
            lin_diff = np.abs(np.exp(nxt) - np.exp(prev))
        settled |= lin_diff < 1e-13
        cur[live] = nxt
        idx_live = np.nonzero(live)[0]
        live[idx_live[settled]] = False
    return cur


def sym_hyperbolic_cdf(point, mu, scale, index, omega_pair, quad=QuadratureSpec(), mvn=MvnSpec()):
    """CDF H_q of the symmetric hyperbolic distribution at ``point``.

    Computed as a one-dimensional quadrature of the multivariate normal CDF
    against the GIG mixing density after a log substitution, refined by node
    doubling until the relative change meets ``quad.relative_tolerance``.
    """
    point = np.atleast_1d(np.asarray(point, dtype=float))
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    scale = np.atleast_2d(np.asarray(scale, dtype=float))
    _chol_pd(scale, "scale")
    if not omega_pair > 0:
        raise ValueError("omega_pair must be positive")
    corr, sd = _corr_split(scale)
    z = ((point - mu) / sd)[None, :]

    n_nodes = 64
    cap = max(256, 32 * quad.max_subdivisions)
    prev = None
    while True:
        log_h = _log_h_cdf_batch(z, corr, 1.0, index, omega_pair, n_nodes)[0]
        val = float(np.exp(log_h))
        if prev is not None:
            err = abs(val - prev) / max(abs(val), 1e-300)
            if err <= quad.relative_tolerance or abs(val - prev) < 1e-13:
                return min(max(val, 0.0), 1.0)
        if 2 * n_nodes > cap:
            achieved = err if prev is not None else np.inf
            raise QuadratureError(
                f"mixing quadrature did not reach {quad.relative_tolerance:g} "
                f"(achieved {achieved:g} with {n_nodes} nodes)",
                achieved_tolerance=achieved,
            )
        prev = val
        n_nodes *= 2


def cfusn_logpdf(y, mu, sigma, lambda_mat, mvn=MvnSpec()):
    """Log density of the canonical fundamental skew-normal distribution.

    A p-variate normal density with covariance ``sigma + lam lam^T`` times a
    q-variate normal CDF skewing factor; vectorized over rows of ``y``.
    """
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    lam = np.asarray(lambda_mat, dtype=float)
    if lam.ndim == 1:
        lam = lam[:, None]
    sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
    p, q = lam.shape
    omega_mat = sigma + lam @ lam.T
    om_chol = _chol_pd(omega_mat, "omega_mat")
    delta_mat = np.eye(q) - lam.T @ cho_solve((om_chol, True), lam)
    delta_mat = 0.5 * (delta_mat + delta_mat.T)
    _chol_pd(delta_mat, "delta_mat")

    y = np.asarray(y, dtype=float)
    scalar = y.ndim == 1
    y2 = np.atleast_2d(y)
    diff = y2 - mu
    delta = _mahalanobis_sq(y2, mu, omega_mat)
    _, logdet = np.linalg.slogdet(omega_mat)
    log_norm_pdf = -0.5 * (p * _LOG_2PI + logdet + delta)
    r = cho_solve((om_chol, True), diff.T).T @ lam
    corr, sd = _corr_split(delta_mat)
    phi = _mvn_cdf_std_batch(r / sd, corr)
    with np.errstate(divide="ignore"):
        log_phi = np.where(phi > 0.0, np.log(np.maximum(phi, 1e-320)), -np.inf)
    out = q * np.log(2.0) + log_norm_pdf + log_phi
    return float(out[0]) if scalar else out


def _hth_parts(x, params):
    """Shared geometry for HTH evaluations: delta, r, scale factor, pair."""
    x2 = np.atleast_2d(np.asarray(x, dtype=float))
    delta = _mahalanobis_sq(x2, params.mu, params.omega_mat)
    om_chol = np.linalg.cholesky(params.omega_mat)
    r = cho_solve((om_chol, True), (x2 - params.mu).T).T @ params.lambda_mat
    s = np.sqrt(1.0 + delta / params.omega)
    pair = params.omega * s
    return x2, delta, r, s, pair


def hth_logpdf(x, params: HthParams, quad=QuadratureSpec(), mvn=MvnSpec()):
    """Log density of the HTH distribution, vectorized over rows of ``x``.

    The skewing factor is the symmetric hyperbolic CDF of the conditional
    latent scale evaluated at the skew-projected residual, with index and
    GIG pair shifted by the observed squared distance.
    """
    x2, delta, r, s, pair = _hth_parts(x, params)
    scalar = np.asarray(x, dtype=float).ndim == 1
    p, q = params.p, params.q
    log_sym = sym_hyperbolic_logpdf(x2, params.mu, params.omega_mat, params.index, params.omega)
    corr, sd = _corr_split(params.delta_mat)
    log_h = _log_h_cdf_refined(
        r / sd, corr, s, params.index - 0.5 * p, pair, quad, nodes_for(q)
    )
    out = q * np.log(2.0) + log_sym + log_h
    return float(out[0]) if scalar else out


def hth_sample(params: HthParams, n, seed):
    """Exact HTH draws via the scale-mixture construction.

    Draws the GIG mixing variable, a half-normal skew driver and a normal
    innovation, then assembles rows of ``mu + sqrt(W) (Lam U + Sigma^(1/2) K)``.
    The matrix square root is the symmetric eigendecomposition root.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    ss = np.random.SeedSequence(seed)
    gig_seed, normal_seed = ss.spawn(2)
    w = gig_sample(GigParams(params.omega, params.omega, params.index), n, np.random.default_rng(gig_seed))
    rng = np.random.default_rng(normal_seed)
    u = np.abs(rng.standard_normal((n, params.q)))
    k = rng.standard_normal((n, params.p))
    evals, evecs = np.linalg.eigh(params.sigma)
    root = evecs @ np.diag(np.sqrt(np.maximum(evals, 0.0))) @ evecs.T
    y = u @ params.lambda_mat.T + k @ root
    return params.mu + np.sqrt(w)[:, None] * y


def posterior_w_logdensity_unnorm(w, x, params: HthParams):
    """Unnormalized log density of the mixing variable given an observation.

    Shape in ``w`` is a GIG kernel tilted by the normal-CDF skewing factor;
    the normalizing constant is what the fitting engine's quadrature
    supplies.  With zero skewness the shape is exactly GIG.
    """
    w = np.asarray(w, dtype=float)
    if np.any(w <= 0):
        raise ValueError("mixing variable must be positive")
    _, delta, r, _, _ = _hth_parts(x, params)
    delta = delta[0]
    r = r[0]
    corr, sd = _corr_split(params.delta_mat)
    b = (r / sd) / np.sqrt(w)[..., None]
    phi = _mvn_cdf_std_batch(b, corr)
    with np.errstate(divide="ignore"):
        log_phi = np.where(phi > 0.0, np.log(np.maximum(phi, 1e-320)), -np.inf)
    nu = params.index - 0.5 * params.p
    return (nu - 1.0) * np.log(w) - (params.omega * w * w + params.omega + delta) / (2.0 * w) + log_phi
