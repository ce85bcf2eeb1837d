"""First and second moments of the orthant-truncated symmetric hyperbolic law.

The mean and second moment of a symmetric hyperbolic vector restricted to a
product of half-lines decompose into boundary densities times tail
probabilities of conditional distributions with shifted index, inflated
scale and a common adjusted GIG pair.  The tail factors appearing for one
(resp. two) pinned coordinates carry the conditional location and Schur
complement scale of the pinned coordinates; a zero-dimensional tail factor
is the constant 1.

Public functions take a single parameter set; leading-underscore variants
batch over observations with a shared correlation structure, which is what
the fitting engine calls.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._quadrature import QuadratureError
from .dist_core import (
    _chol_pd,
    _corr_split,
    _log_h_cdf_batch,
    _log_h_cdf_multi,
    nodes_for,
    sym_hyperbolic_logpdf,
)
from .specfun import MvnSpec, QuadratureSpec, bessel_k_ratio, log_bessel_k

__all__ = [
    "ThParams",
    "DegenerateTruncationError",
    "th_orthant_prob",
    "th_mean",
    "th_second_moment",
    "th_univariate_moments",
]

_LOG_2PI = np.log(2.0 * np.pi)


class DegenerateTruncationError(ValueError):
    """The truncation region carries numerically negligible mass."""


@dataclass(frozen=True, eq=False)
class ThParams:
    """Truncated symmetric hyperbolic parameters with lower bounds ``lower``.

    Bounds default to the origin (the orthant used by the mixture model);
    ``-inf`` entries mark untruncated coordinates.
    """

    mu: np.ndarray
    sigma: np.ndarray
    index: float
    omega: float
    lower: np.ndarray = field(default=None)

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mu, dtype=float))
        sigma = np.atleast_2d(np.asarray(self.sigma, dtype=float))
        q = mu.size
        if sigma.shape != (q, q):
            raise ValueError("sigma must be q x q")
        sigma = 0.5 * (sigma + sigma.T)
        _chol_pd(sigma, "sigma")
        if not self.omega > 0:
            raise ValueError("omega must be positive")
        lower = self.lower
        lower = np.zeros(q) if lower is None else np.asarray(lower, dtype=float).ravel()
        if lower.size != q:
            raise ValueError("lower must have length q")
        if np.any(np.isnan(lower)) or np.any(lower == np.inf):
            raise ValueError("lower bounds must be finite or -inf")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "index", float(self.index))
        object.__setattr__(self, "omega", float(self.omega))
        object.__setattr__(self, "lower", lower)

    @property
    def q(self):
        return self.mu.size


def _upper_orthant(mu, sigma, index, omega, lower, n_nodes):
    """P(Y >= lower) for the (untruncated) symmetric hyperbolic law."""
    active = np.isfinite(lower)
    if not np.any(active):
        return 1.0
    sub = np.ix_(active, active)
    corr, sd = _corr_split(sigma[sub])
    z = (mu[active] - lower[active]) / sd
    log_c = _log_h_cdf_batch(z[None, :], corr, 1.0, index, omega, n_nodes)[0]
    return float(np.exp(log_c))


def _cond_upper_tail(mu, sigma, dens_index, omega, lower, pinned, n_nodes):
    """Tail factor for the moment formulas with ``pinned`` coordinates at bound.

    Conditions the remaining coordinates on the pinned ones, inflates the
    Schur-complement scale by sqrt((omega + gamma)/omega) with gamma the
    Mahalanobis distance of the pinned boundary point, shifts the index by
    half the number of pinned coordinates, and evaluates the upper orthant
    mass under the adjusted GIG pair.  With nothing left it is 1.
    """
    q = mu.size
    rest = [i for i in range(q) if i not in pinned]
    pin = list(pinned)
    a_pin = lower[pin]
    sub = np.ix_(pin, pin)
    apinv = np.linalg.inv(sigma[sub])
    resid = a_pin - mu[pin]
    gamma = float(resid @ apinv @ resid)
    cond_index = dens_index - 0.5 * len(pin)
    infl = np.sqrt((omega + gamma) / omega)
    pair = omega * infl
    if not rest:
        return 1.0
    cross = sigma[np.ix_(rest, pin)]
    cond_mu = mu[rest] + cross @ apinv @ resid
    cond_cov = sigma[np.ix_(rest, rest)] - cross @ apinv @ cross.T
    return _upper_orthant(cond_mu, infl * cond_cov, cond_index, pair, lower[rest], n_nodes)


def _epsilon_vector(p: ThParams, n_nodes):
    """Boundary-density vector driving the first-moment correction."""
    q = p.q
    ratio = bessel_k_ratio(p.index, p.omega)
    eps = np.zeros(q)
    for r in range(q):
        if not np.isfinite(p.lower[r]):
            continue
        h1 = np.exp(
            sym_hyperbolic_logpdf(
                np.array([p.lower[r]]), np.array([p.mu[r]]),
                np.array([[p.sigma[r, r]]]), p.index + 1.0, p.omega,
            )
        )[0]
        tail = _cond_upper_tail(p.mu, p.sigma, p.index + 1.0, p.omega, p.lower, (r,), n_nodes)
        eps[r] = ratio * h1 * tail
    return eps


def th_orthant_prob(p: ThParams, quad=QuadratureSpec(), mvn=MvnSpec()):
    """Mass the symmetric hyperbolic law puts on the truncation region."""
    n_nodes = nodes_for(max(1, int(np.isfinite(p.lower).sum())))
    val = _upper_orthant(p.mu, p.sigma, p.index, p.omega, p.lower, n_nodes)
    check = _upper_orthant(p.mu, p.sigma, p.index, p.omega, p.lower, 2 * n_nodes)
    if abs(check - val) > max(quad.relative_tolerance * abs(check), 1e-14) * 100:
        raise QuadratureError(
            "orthant quadrature failed to stabilize",
            achieved_tolerance=abs(check - val) / max(abs(check), 1e-300),
        )
    return min(max(check, 0.0), 1.0)


def th_mean(p: ThParams, quad=QuadratureSpec(), mvn=MvnSpec()):
    """Mean of the truncated symmetric hyperbolic distribution."""
    if not np.any(np.isfinite(p.lower)):
        return p.mu.copy()
    if p.q == 1:
        m1, _ = th_univariate_moments(
            p.mu[0], p.sigma[0, 0], p.index, p.omega, p.lower[0], np.inf, quad
        )
        return np.array([m1])
    n_nodes = nodes_for(p.q)
    c = th_orthant_prob(p, quad, mvn)
    if c < 1e-12:
        raise DegenerateTruncationError("truncation region has negligible mass")
    eps = _epsilon_vector(p, n_nodes)
    return p.mu + (p.sigma @ eps) / c


def th_second_moment(p: ThParams, quad=QuadratureSpec(), mvn=MvnSpec()):
    """Second moment matrix E[Y Y^T] of the truncated law."""
    q = p.q
    ratio = bessel_k_ratio(p.index, p.omega)
    if not np.any(np.isfinite(p.lower)):
        return np.outer(p.mu, p.mu) + ratio * p.sigma
    if q == 1:
        _, m2 = th_univariate_moments(
            p.mu[0], p.sigma[0, 0], p.index, p.omega, p.lower[0], np.inf, quad
        )
        return np.array([[m2]])
    n_nodes = nodes_for(q)
    c = th_orthant_prob(p, quad, mvn)
    if c < 1e-12:
        raise DegenerateTruncationError("truncation region has negligible mass")
    eps = _epsilon_vector(p, n_nodes)
    mean = p.mu + (p.sigma @ eps) / c

    ratio2 = np.exp(log_bessel_k(p.index + 2.0, p.omega) - log_bessel_k(p.index, p.omega))
    H = np.zeros((q, q))
    for r in range(q):
        for s in range(r + 1, q):
            if not (np.isfinite(p.lower[r]) and np.isfinite(p.lower[s])):
                continue
            pick = [r, s]
            h2 = np.exp(
                sym_hyperbolic_logpdf(
                    p.lower[pick][None, :], p.mu[pick],
                    p.sigma[np.ix_(pick, pick)], p.index + 2.0, p.omega,
                )
            )[0]
            tail = _cond_upper_tail(p.mu, p.sigma, p.index + 2.0, p.omega, p.lower, (r, s), n_nodes)
            H[r, s] = H[s, r] = ratio2 * h2 * tail
    sigma_h = p.sigma @ H
    dvec = np.zeros(q)
    for r in range(q):
        if np.isfinite(p.lower[r]) and eps[r] != 0.0:
            dvec[r] = ((p.lower[r] - p.mu[r]) * eps[r] - sigma_h[r, r]) / p.sigma[r, r]
        else:
            dvec[r] = -sigma_h[r, r] / p.sigma[r, r]
    k = ratio * _upper_orthant(p.mu, p.sigma, p.index + 1.0, p.omega, p.lower, n_nodes)
    second = (
        np.outer(p.mu, mean) + np.outer(mean, p.mu) - np.outer(p.mu, p.mu)
        + (k / c) * p.sigma
        + (p.sigma @ (H + np.diag(dvec)) @ p.sigma) / c
    )
    return 0.5 * (second + second.T)


def _h1_cdf(point, mu, s2, index, omega, quad):
    from .dist_core import sym_hyperbolic_cdf

    if point == np.inf:
        return 1.0
    if point == -np.inf:
        return 0.0
    return sym_hyperbolic_cdf(
        np.array([point]), np.array([mu]), np.array([[s2]]), index, omega, quad
    )


def th_univariate_moments(mu, sigma2, index, omega, l1, l2, quad=QuadratureSpec()):
    """First two moments of the doubly truncated univariate hyperbolic law.

    The mass denominator uses the base index; the boundary densities and the
    interval mass in the numerators use the index shifted by one, matching
    the multivariate formulas restricted to one dimension.
    """
    if not l1 < l2:
        raise ValueError("need l1 < l2")
    if not sigma2 > 0:
        raise ValueError("sigma2 must be positive")
    denom = _h1_cdf(l2, mu, sigma2, index, omega, quad) - _h1_cdf(l1, mu, sigma2, index, omega, quad)
    if denom < 1e-12:
        raise DegenerateTruncationError("truncation interval has negligible mass")
    ratio = bessel_k_ratio(index, omega)

    def dens(point):
        if not np.isfinite(point):
            return 0.0
        return float(
            np.exp(
                sym_hyperbolic_logpdf(
                    np.array([point]), np.array([mu]), np.array([[sigma2]]), index + 1.0, omega
                )
            )[0]
        )

    h_l1, h_l2 = dens(l1), dens(l2)
    m1 = mu + sigma2 * ratio * (h_l1 - h_l2) / denom
    mass_up = (
        _h1_cdf(l2, mu, sigma2, index + 1.0, omega, quad)
        - _h1_cdf(l1, mu, sigma2, index + 1.0, omega, quad)
    )
    edge = (l1 * h_l1 if np.isfinite(l1) else 0.0) - (l2 * h_l2 if np.isfinite(l2) else 0.0)
    m2 = mu * m1 + sigma2 * ratio * (mass_up + edge) / denom
    return float(m1), float(m2)


# ---------------------------------------------------------------------------
# Batched orthant moments for the fitting engine
# ---------------------------------------------------------------------------

def _sym_logpdf_scaled(resid, base_cov, scale_fac, index, omega):
    """Symmetric hyperbolic log density with row-wise scalar scale and pair.

    ``resid`` is (n, k) of point-minus-location values, the covariance is
    ``scale_fac[i] * base_cov`` and the GIG pair is ``omega[i]``.
    """
    resid = np.atleast_2d(resid)
    k = resid.shape[1]
    inv = np.linalg.inv(base_cov)
    delta = np.einsum("ij,jk,ik->i", resid, inv, resid) / scale_fac
    _, logdet = np.linalg.slogdet(base_cov)
    logdet = logdet + k * np.log(scale_fac)
    nu = index - 0.5 * k
    arg = np.sqrt(omega * (omega + delta))
    return (
        0.5 * nu * (np.log(omega + delta) - np.log(omega))
        + log_bessel_k(nu, arg)
        - 0.5 * k * _LOG_2PI
        - 0.5 * logdet
        - log_bessel_k(index, omega)
    )


def _safe_exp_ratio(log_num, log_mass):
    """exp(log_num - log_mass) with 0 where both terms have underflowed."""
    with np.errstate(invalid="ignore", over="ignore"):
        out = np.exp(log_num - log_mass)
    return np.where(np.isfinite(out), out, 0.0)


def _orthant_moments_batch(loc, base_cov, scale_fac, index, pair, n_nodes):
    """Zero-orthant mean and second moment, batched over rows.

    Row ``i`` follows the truncated symmetric hyperbolic law with location
    ``loc[i]``, scale ``scale_fac[i] * base_cov``, index ``index`` and GIG
    pair ``pair[i]``, truncated to the positive orthant.  Returns
    ``(mass, mean, second)`` with shapes (n,), (n, q), (n, q, q).  All
    boundary terms enter as ratios against the orthant mass in log scale, so
    rows whose orthant mass underflows still produce finite moments.
    """
    loc = np.atleast_2d(loc)
    n, q = loc.shape
    scale_fac = np.broadcast_to(np.asarray(scale_fac, dtype=float), (n,)).astype(float)
    pair = np.broadcast_to(np.asarray(pair, dtype=float), (n,)).astype(float)
    corr, base_sd = _corr_split(base_cov)

    log_ratio = log_bessel_k(index + 1.0, pair) - log_bessel_k(index, pair)
    log_mass, log_up = _log_h_cdf_multi(
        loc / base_sd, corr, scale_fac, (index, index + 1.0), pair, n_nodes
    )
    mass = np.exp(log_mass)

    if q == 1:
        s2 = scale_fac * base_cov[0, 0]
        log_h0 = _sym_logpdf_scaled(-loc, base_cov, scale_fac, index + 1.0, pair)
        m1 = loc[:, 0] + s2 * _safe_exp_ratio(log_ratio + log_h0, log_mass)
        m2 = loc[:, 0] * m1 + s2 * _safe_exp_ratio(log_ratio + log_up, log_mass)
        return mass, m1[:, None], m2[:, None, None]

    # eps_tilde[:, r] = (boundary density x conditional tail) / orthant mass
    eps_t = np.zeros((n, q))
    for r in range(q):
        rest = [i for i in range(q) if i != r]
        cross = base_cov[rest, r] / base_cov[r, r]
        schur = base_cov[np.ix_(rest, rest)] - np.outer(cross, base_cov[r, rest])
        gamma = loc[:, r] ** 2 / (scale_fac * base_cov[r, r])
        infl = np.sqrt(1.0 + gamma / pair)
        cond_pair = pair * infl
        cond_mu = loc[:, rest] - np.outer(loc[:, r], cross)
        log_h1 = _sym_logpdf_scaled(
            -loc[:, [r]], base_cov[[r]][:, [r]], scale_fac, index + 1.0, pair
        )
        _, schur_sd = _corr_split(schur)
        corr_s = schur / np.outer(schur_sd, schur_sd)
        log_tail = _log_h_cdf_batch(
            cond_mu / schur_sd, corr_s, scale_fac * infl, index + 0.5, cond_pair, n_nodes
        )
        eps_t[:, r] = _safe_exp_ratio(log_ratio + log_h1 + log_tail, log_mass)
    cov_rows = scale_fac[:, None, None] * base_cov
    mean = loc + np.einsum("nij,nj->ni", cov_rows, eps_t)

    # H_tilde = H / orthant mass, then D_tilde from its row sums
    log_ratio2 = log_bessel_k(index + 2.0, pair) - log_bessel_k(index, pair)
    H_t = np.zeros((n, q, q))
    for r in range(q):
        for s in range(r + 1, q):
            pick = [r, s]
            rest = [i for i in range(q) if i not in pick]
            block = base_cov[np.ix_(pick, pick)]
            log_h2 = _sym_logpdf_scaled(-loc[:, pick], block, scale_fac, index + 2.0, pair)
            if rest:
                inv_block = np.linalg.inv(block)
                gamma = np.einsum("ij,jk,ik->i", loc[:, pick], inv_block, loc[:, pick]) / scale_fac
                infl = np.sqrt(1.0 + gamma / pair)
                cond_pair = pair * infl
                cross = base_cov[np.ix_(rest, pick)] @ inv_block
                cond_mu = loc[:, rest] - loc[:, pick] @ cross.T
                schur = base_cov[np.ix_(rest, rest)] - cross @ base_cov[np.ix_(pick, rest)]
                _, schur_sd = _corr_split(schur)
                corr_s = schur / np.outer(schur_sd, schur_sd)
                log_tail = _log_h_cdf_batch(
                    cond_mu / schur_sd, corr_s, scale_fac * infl, index + 1.0, cond_pair, n_nodes
                )
            else:
                log_tail = 0.0
            H_t[:, r, s] = H_t[:, s, r] = _safe_exp_ratio(log_ratio2 + log_h2 + log_tail, log_mass)
    sigma_h = np.einsum("nij,njk->nik", cov_rows, H_t)
    dmat = np.zeros((n, q, q))
    idx = np.arange(q)
    dmat[:, idx, idx] = (-loc * eps_t - sigma_h[:, idx, idx]) / (
        scale_fac[:, None] * np.diag(base_cov)
    )
    k_over_c = _safe_exp_ratio(log_ratio + log_up, log_mass)
    second = (
        np.einsum("ni,nj->nij", loc, mean)
        + np.einsum("ni,nj->nij", mean, loc)
        - np.einsum("ni,nj->nij", loc, loc)
        + k_over_c[:, None, None] * cov_rows
        + np.einsum("nij,njk,nkl->nil", cov_rows, H_t + dmat, cov_rows)
    )
    return mass, mean, 0.5 * (second + np.swapaxes(second, 1, 2))
