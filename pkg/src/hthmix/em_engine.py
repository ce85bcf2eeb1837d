"""ECM fitting engine for finite HTH mixtures.

The E-step evaluates, per observation and component, the posterior moments
of the GIG mixing variable (by one shared log-substitution quadrature that
also yields the component log density) and the first two orthant moments of
the latent skew variable (through the truncated-moment formulas).  The
M-step applies the conditional updates in sequence: mixing weights,
location, skewness matrix, one Newton step on the mixing-shape objective,
the index fixed point, then the scale matrix.  Deterministic annealing
raises the responsibilities to a power that ramps up to one.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.cluster.vq import kmeans2
from scipy.linalg import cho_solve
from scipy.special import logsumexp

from .dist_core import HthParams, _corr_split, _hth_parts, nodes_for
from ._quadrature import gig_kernel_nodes
from .specfun import (
    MvnSpec,
    QuadratureSpec,
    _mvn_cdf_std_batch,
    dlog_bessel_k_darg,
    dlog_bessel_k_dorder,
    log_bessel_k,
)
from .trunc_moments import _orthant_moments_batch

__all__ = [
    "MixtureModel",
    "EStepCache",
    "FitConfig",
    "FitResult",
    "kmeans_init",
    "e_step",
    "m_step",
    "observed_loglik",
    "ecm_fit",
    "count_free_params",
    "bic",
]

_LOG_2PI = np.log(2.0 * np.pi)

_OMEGA_MIN = 0.01
_OMEGA_MAX = 200.0
_INDEX_MAX = 50.0


@dataclass(frozen=True, eq=False)
class MixtureModel:
    """Mixing proportions plus per-component HTH parameters.

    Canonical form: components ordered by descending weight (ties broken by
    the first location coordinate); each component's skewness columns are
    already norm-sorted by ``HthParams``.
    """

    weights: np.ndarray
    components: tuple

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).ravel()
        comps = tuple(self.components)
        if w.size != len(comps):
            raise ValueError("one weight per component required")
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-8:
            raise ValueError("weights must be positive and sum to one")
        w = w / w.sum()
        ps = {c.p for c in comps}
        qs = {c.q for c in comps}
        if len(ps) != 1 or len(qs) != 1:
            raise ValueError("components must share p and q")
        mu0 = np.array([c.mu[0] for c in comps])
        order = np.lexsort((mu0, -w))
        object.__setattr__(self, "weights", w[order])
        object.__setattr__(self, "components", tuple(comps[i] for i in order))

    @property
    def G(self):
        return len(self.components)

    @property
    def p(self):
        return self.components[0].p

    @property
    def q(self):
        return self.components[0].q


@dataclass
class EStepCache:
    """Per-observation, per-component posterior expectations.

    ``z`` holds responsibilities; ``a``, ``b``, ``c`` the posterior mean,
    inverse mean and log mean of the mixing variable; ``d`` and ``e_mat``
    the inverse-weighted first and second latent-skew moments.  ``loglik``
    is the observed-data log likelihood at the parameters the cache was
    computed from (annealing does not affect it).
    """

    z: np.ndarray
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: np.ndarray
    e_mat: np.ndarray
    loglik: float


@dataclass(frozen=True)
class FitConfig:
    """Knobs for the ECM fit."""

    max_iter: int = 1000
    loglik_rel_tol: float = 1e-6
    anneal_schedule: tuple = tuple(np.linspace(0.05, 1.0, 20))
    n_starts: int = 5
    seed: int = 0
    quad: QuadratureSpec = QuadratureSpec()
    mvn: MvnSpec = MvnSpec()

    def __post_init__(self):
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if not self.loglik_rel_tol > 0:
            raise ValueError("loglik_rel_tol must be positive")
        sched = tuple(float(d) for d in self.anneal_schedule)
        if sched:
            if any(not 0.0 < d <= 1.0 for d in sched):
                raise ValueError("anneal powers must lie in (0, 1]")
            if any(b < a for a, b in zip(sched, sched[1:])) or sched[-1] != 1.0:
                raise ValueError("anneal schedule must be nondecreasing and end at 1")
        object.__setattr__(self, "anneal_schedule", sched)
        if self.n_starts < 1:
            raise ValueError("n_starts must be >= 1")


@dataclass
class FitResult:
    """Converged model with its fitting history."""

    model: MixtureModel
    loglik_trace: list
    bic: float
    labels: np.ndarray
    converged: bool
    n_iter: int


def count_free_params(G, p, q):
    """Free-parameter count of a G-component HTH mixture in dimension p."""
    per_component = p + p * (p + 1) // 2 + p * q + 2
    return (G - 1) + G * per_component


def bic(loglik, rho, n):
    """Bayesian information criterion, 2*loglik - rho*ln(n); larger is better."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return 2.0 * loglik - rho * np.log(n)


# ---------------------------------------------------------------------------
# initialization
# ---------------------------------------------------------------------------

def _cluster_stats(data, labels, G):
    n, p = data.shape
    weights = np.empty(G)
    mus = np.empty((G, p))
    sigmas = np.empty((G, p, p))
    for g in range(G):
        sel = data[labels == g]
        weights[g] = sel.shape[0] / n
        mus[g] = sel.mean(axis=0)
        centered = sel - mus[g]
        cov = centered.T @ centered / sel.shape[0]
        # floor tiny eigenvalues so early iterations stay well conditioned
        evals, evecs = np.linalg.eigh(cov)
        floor = max(1e-6, 1e-6 * evals.max()) if evals.max() > 0 else 1e-6
        cov = evecs @ np.diag(np.maximum(evals, floor)) @ evecs.T
        sigmas[g] = cov
    return weights, mus, sigmas


def kmeans_init(data, G, q, seed):
    """k-means based starting model: Lloyd with 25 seeded restarts.

    Cluster means and covariances seed the component locations and scales,
    the skewness entries are standard normal draws, and the mixing-shape
    parameters start at one.  Restarts that lose a cluster are discarded; if
    every restart of ten consecutive reseedings degenerates, raises.
    """
    data = np.asarray(data, dtype=float)
    n, p = data.shape
    if n <= G * (p + 1):
        raise ValueError(f"need n > G*(p+1) = {G * (p + 1)} observations, got {n}")
    rng = np.random.default_rng(seed)

    if G == 1:
        labels = np.zeros(n, dtype=int)
    else:
        labels = None
        for _ in range(10):
            best_inertia = np.inf
            for _ in range(25):
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")
                    centers, lab = kmeans2(data, G, minit="++", seed=rng)
                if len(np.unique(lab)) != G:
                    continue
                inertia = float(((data - centers[lab]) ** 2).sum())
                if inertia < best_inertia:
                    best_inertia, labels = inertia, lab
            if labels is not None:
                break
        if labels is None:
            raise RuntimeError("k-means produced an empty cluster in every restart")

    weights, mus, sigmas = _cluster_stats(data, labels, G)
    comps = tuple(
        HthParams(
            mu=mus[g],
            sigma=sigmas[g],
            lambda_mat=rng.standard_normal((p, q)),
            index=1.0,
            omega=1.0,
        )
        for g in range(G)
    )
    return MixtureModel(weights=weights, components=comps)


# ---------------------------------------------------------------------------
# E-step
# ---------------------------------------------------------------------------

def _component_estep(data, comp: HthParams, n_nodes, want_moments=True):
    """Log density plus posterior expectations for one component.

    One quadrature over the conditional mixing density provides the log
    density and the (a, b, c) moments; the latent-skew moments come from the
    batched orthant-moment formulas under the tilted truncated law.
    """
    x2, delta, r, s, pair = _hth_parts(data, comp)
    n = x2.shape[0]
    p, q = comp.p, comp.q
    lam, om = comp.index, comp.omega
    nu = lam - 0.5 * p

    t, log_kern = gig_kernel_nodes(nu, om, om + delta, n_nodes)
    corr, sd = _corr_split(comp.delta_mat)
    b_lim = (r / sd)[:, None, :] / np.exp(0.5 * t)[:, :, None]
    phi = _mvn_cdf_std_batch(b_lim, corr)
    with np.errstate(divide="ignore"):
        log_phi = np.where(phi > 0.0, np.log(np.maximum(phi, 1e-320)), -np.inf)
    log_post = log_kern + log_phi
    log_norm = logsumexp(log_post, axis=-1)

    _, logdet_sigma = np.linalg.slogdet(comp.sigma)
    _, logdet_delta = np.linalg.slogdet(comp.delta_mat)
    log_const = (
        (q - 1.0) * np.log(2.0)
        - 0.5 * p * _LOG_2PI
        + 0.5 * logdet_delta
        - 0.5 * logdet_sigma
        - log_bessel_k(lam, om)
    )
    log_f = log_norm + log_const

    wts = np.exp(log_post - log_norm[:, None])
    a = np.einsum("nk,nk->n", wts, np.exp(t))
    b = np.einsum("nk,nk->n", wts, np.exp(-t))
    c = np.einsum("nk,nk->n", wts, t)

    if not want_moments:
        return log_f, a, b, c, None, None
    _, s_mean, s_second = _orthant_moments_batch(
        r, comp.delta_mat, s, lam - 0.5 * p - 1.0, pair, n_nodes
    )
    d = b[:, None] * s_mean
    e_mat = b[:, None, None] * s_second
    return log_f, a, b, c, d, e_mat


def _log_density_matrix(data, model: MixtureModel, n_nodes=None):
    data = np.atleast_2d(np.asarray(data, dtype=float))
    n_nodes = n_nodes or nodes_for(model.q)
    cols = [
        _component_estep(data, comp, n_nodes, want_moments=False)[0]
        for comp in model.components
    ]
    return np.column_stack(cols)


def e_step(data, model: MixtureModel, anneal_d=1.0, quad=QuadratureSpec(), mvn=MvnSpec()):
    """Responsibilities and posterior expectations at the current parameters.

    Responsibilities are proportional to the annealed weighted densities
    ``(pi_g f_g)^d`` row-normalized through log-sum-exp; the remaining
    expectations do not depend on the annealing power.
    """
    if not 0.0 < anneal_d <= 1.0:
        raise ValueError("anneal_d must lie in (0, 1]")
    data = np.atleast_2d(np.asarray(data, dtype=float))
    n = data.shape[0]
    G, q = model.G, model.q
    n_nodes = nodes_for(q)

    log_f = np.empty((n, G))
    a = np.empty((n, G))
    b = np.empty((n, G))
    c = np.empty((n, G))
    d = np.empty((n, G, q))
    e_mat = np.empty((n, G, q, q))
    for g, comp in enumerate(model.components):
        lf, ag, bg, cg, dg, eg = _component_estep(data, comp, n_nodes)
        log_f[:, g] = lf
        a[:, g], b[:, g], c[:, g] = ag, bg, cg
        d[:, g] = dg
        e_mat[:, g] = eg

    log_mix = np.log(model.weights)[None, :] + log_f
    row_max = log_mix.max(axis=1)
    dead = ~np.isfinite(row_max)
    if np.any(dead):
        i = int(np.nonzero(dead)[0][0])
        raise FloatingPointError(
            f"responsibilities underflow to zero for observation {i}"
        )
    log_z = anneal_d * log_mix
    log_z -= logsumexp(log_z, axis=1, keepdims=True)
    z = np.exp(log_z)
    loglik = float(logsumexp(log_mix, axis=1).sum())
    return EStepCache(z=z, a=a, b=b, c=c, d=d, e_mat=e_mat, loglik=loglik)


# ---------------------------------------------------------------------------
# M-step
# ---------------------------------------------------------------------------

def _objective_t(omega, lam, abar, bbar, cbar):
    return -log_bessel_k(lam, omega) + (lam - 1.0) * cbar - 0.5 * omega * (abar + bbar)


def _update_omega(omega, lam, abar, bbar, cbar):
    """One Newton step on the mixing-shape objective, guarded by golden search."""
    h = 1e-5 * max(1.0, omega)
    grad = -dlog_bessel_k_darg(lam, omega) - 0.5 * (abar + bbar)
    hess = -(dlog_bessel_k_darg(lam, omega + h) - dlog_bessel_k_darg(lam, omega - h)) / (2.0 * h)
    if hess < 0.0:
        cand = omega - grad / hess
        if _OMEGA_MIN < cand < _OMEGA_MAX:
            return float(cand)
    lo, hi = _OMEGA_MIN, _OMEGA_MAX
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    x1 = hi - invphi * (hi - lo)
    x2 = lo + invphi * (hi - lo)
    f1 = _objective_t(x1, lam, abar, bbar, cbar)
    f2 = _objective_t(x2, lam, abar, bbar, cbar)
    for _ in range(60):
        if f1 < f2:
            lo, x1, f1 = x1, x2, f2
            x2 = lo + invphi * (hi - lo)
            f2 = _objective_t(x2, lam, abar, bbar, cbar)
        else:
            hi, x2, f2 = x2, x1, f1
            x1 = hi - invphi * (hi - lo)
            f1 = _objective_t(x1, lam, abar, bbar, cbar)
    return float(0.5 * (lo + hi))


def _update_index(lam, omega, cbar):
    """Fixed-point update of the index against the mean posterior log weight.

    Near zero the update is taken in its limit form through the second
    order-derivative of ln K, which the plain ratio would lose to 0/0.
    """
    if abs(lam) >= 1e-3:
        denom = dlog_bessel_k_dorder(lam, omega)
        if denom == 0.0:
            return lam
        new = cbar * lam / denom
    else:
        h = 1e-3
        curv = (
            log_bessel_k(lam + h, omega)
            - 2.0 * log_bessel_k(lam, omega)
            + log_bessel_k(lam - h, omega)
        ) / h**2
        new = cbar / curv if curv > 0 else lam
    return float(np.clip(new, -_INDEX_MAX, _INDEX_MAX))


def m_step(data, cache: EStepCache, model: MixtureModel):
    """Conditional maximization updates, applied in sequence per component."""
    data = np.atleast_2d(np.asarray(data, dtype=float))
    n, p = data.shape
    q = model.q
    new_weights = []
    new_comps = []
    for g, comp in enumerate(model.components):
        zg = cache.z[:, g]
        ng = zg.sum()
        if ng <= 0:
            raise FloatingPointError(f"component {g} lost all responsibility")
        bg = cache.b[:, g]
        dg = cache.d[:, g]
        eg = cache.e_mat[:, g]

        pi_g = ng / n
        zb = zg * bg
        mu_g = (zb @ data - comp.lambda_mat @ (zg @ dg)) / zb.sum()

        m1 = np.einsum("n,nij->ij", zg, eg)
        m2 = np.einsum("n,ni,nj->ij", zg, dg, data - mu_g)
        try:
            lam_mat = np.linalg.solve(m1, m2).T
        except np.linalg.LinAlgError:
            warnings.warn("singular skew-moment matrix; applying ridge", RuntimeWarning)
            lam_mat = np.linalg.solve(m1 + 1e-8 * np.eye(q), m2).T

        abar = float(zg @ cache.a[:, g] / ng)
        bbar = float(zg @ bg / ng)
        cbar = float(zg @ cache.c[:, g] / ng)
        omega_g = _update_omega(comp.omega, comp.index, abar, bbar, cbar)
        index_g = _update_index(comp.index, omega_g, cbar)

        diff = data - mu_g
        sigma_g = (
            np.einsum("n,ni,nj->ij", zb, diff, diff)
            + lam_mat @ m1 @ lam_mat.T
            - m2.T @ lam_mat.T
            - lam_mat @ m2
        ) / ng
        sigma_g = 0.5 * (sigma_g + sigma_g.T)
        evals, evecs = np.linalg.eigh(sigma_g)
        floor = max(1e-10, 1e-10 * max(evals.max(), 1.0))
        if evals.min() < floor:
            sigma_g = evecs @ np.diag(np.maximum(evals, floor)) @ evecs.T

        new_weights.append(pi_g)
        new_comps.append(
            HthParams(mu=mu_g, sigma=sigma_g, lambda_mat=lam_mat, index=index_g, omega=omega_g)
        )
    return MixtureModel(weights=np.array(new_weights), components=tuple(new_comps))


def observed_loglik(data, model: MixtureModel, quad=QuadratureSpec(), mvn=MvnSpec()):
    """Observed-data log likelihood of the mixture."""
    log_f = _log_density_matrix(data, model)
    return float(logsumexp(np.log(model.weights)[None, :] + log_f, axis=1).sum())


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------

def _single_fit(data, G, q, config: FitConfig, start_seed):
    model = kmeans_init(data, G, q, start_seed)
    schedule = config.anneal_schedule
    trace = []
    converged = False
    n_iter = 0
    cache = None
    prev_power = None
    for it in range(config.max_iter):
        d_power = schedule[it] if it < len(schedule) else 1.0
        cache = e_step(data, model, anneal_d=d_power, quad=config.quad, mvn=config.mvn)
        trace.append(cache.loglik)
        if d_power == 1.0 and prev_power == 1.0:
            prev, cur = trace[-2], trace[-1]
            if abs(cur - prev) / (1.0 + abs(cur)) < config.loglik_rel_tol:
                converged = True
                break
        model = m_step(data, cache, model)
        prev_power = d_power
        n_iter += 1
    labels = np.argmax(cache.z, axis=1) + 1
    return FitResult(
        model=model,
        loglik_trace=trace,
        bic=np.nan,
        labels=labels,
        converged=converged,
        n_iter=n_iter,
    )


def ecm_fit(data, G, q, config: FitConfig = FitConfig()):
    """Fit a G-component HTH mixture from multiple k-means starts.

    Each start runs the annealed ECM iteration to convergence; the run with
    the largest final log likelihood wins (the standard guard against
    spurious roots of an unbounded mixture likelihood).  The BIC of the
    winning run is attached.
    """
    data = np.atleast_2d(np.asarray(data, dtype=float))
    n, p = data.shape
    if G < 1:
        raise ValueError("G must be >= 1")
    if not 1 <= q <= p:
        raise ValueError("need 1 <= q <= p")
    seeds = np.random.SeedSequence(config.seed).spawn(config.n_starts)
    results = []
    failures = []
    for s, seed in enumerate(seeds):
        try:
            results.append(_single_fit(data, G, q, config, seed))
        except Exception as exc:  # noqa: BLE001 - aggregated below
            failures.append(f"start {s}: {type(exc).__name__}: {exc}")
    if not results:
        raise RuntimeError("all starts failed:\n" + "\n".join(failures))
    best = max(results, key=lambda r: r.loglik_trace[-1])
    rho = count_free_params(G, p, q)
    best.bic = bic(best.loglik_trace[-1], rho, n)
    return best
