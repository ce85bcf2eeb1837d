"""Special functions shared by every density in the package.

Two families live here:

* the modified Bessel function of the third kind ``K_nu`` with real order,
  evaluated in log scale so large orders and arguments stay finite, together
  with the order- and argument-derivatives the fitting engine needs;
* multivariate normal rectangle probabilities ``Phi_q`` computed with a
  seeded quasi-random separation-of-variables rule (Genz), plus fast
  deterministic evaluators for the low dimensions (q <= 3) that dominate
  the inner loops.

Everything is a pure function of its arguments; samplers and quasi-random
rules take explicit seeds.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import kve, ndtr, ndtri, roots_legendre
from scipy.stats import qmc

__all__ = [
    "QuadratureSpec",
    "MvnSpec",
    "log_bessel_k",
    "bessel_k_ratio",
    "dlog_bessel_k_dorder",
    "dlog_bessel_k_darg",
    "mvn_rectangle_prob",
]


@dataclass(frozen=True)
class QuadratureSpec:
    """Policy for the one-dimensional mixing-variable quadratures."""

    relative_tolerance: float = 1e-8
    max_subdivisions: int = 200
    transform: str = "log_substitution"

    def __post_init__(self):
        if not self.relative_tolerance > 0:
            raise ValueError("relative_tolerance must be > 0")
        if self.max_subdivisions < 1:
            raise ValueError("max_subdivisions must be >= 1")
        if self.transform not in ("log_substitution", "none"):
            raise ValueError(f"unknown transform {self.transform!r}")


@dataclass(frozen=True)
class MvnSpec:
    """Policy for multivariate normal probability evaluation."""

    sample_budget: int = 10_000
    error_target: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if self.sample_budget < 100:
            raise ValueError("sample_budget must be >= 100")
        if not self.error_target > 0:
            raise ValueError("error_target must be > 0")


# ---------------------------------------------------------------------------
# log K_nu and derivatives
# ---------------------------------------------------------------------------

def _debye_log_k(order, arg):
    """Uniform asymptotic (Debye) expansion of ln K_order(arg), order > 0.

    Used only where the scaled Amos routine overflows, which requires the
    order to dominate the argument; there the expansion is accurate to
    ~order**-6.  Accuracy degrades (to ~0.3%) only for order < 2 together
    with arg below ~1e-150, far outside the supported envelope.
    """
    z = arg / order
    s = np.sqrt(1.0 + z * z)
    t = 1.0 / s
    t2 = t * t
    eta = s + np.log(z) - np.log1p(s)
    u1 = t * (3.0 - 5.0 * t2) / 24.0
    u2 = t2 * (81.0 + t2 * (-462.0 + t2 * 385.0)) / 1152.0
    u3 = (
        t * t2 * (30375.0 + t2 * (-369603.0 + t2 * (765765.0 - t2 * 425425.0)))
        / 414720.0
    )
    u4 = (
        t2 * t2 * (
            4465125.0
            + t2 * (-94121676.0 + t2 * (349922430.0 + t2 * (-446185740.0 + t2 * 185910725.0)))
        )
        / 39813120.0
    )
    u5 = (
        t * t2 * t2 * (
            1519035525.0
            + t2 * (
                -49286948607.0
                + t2 * (284499769554.0 + t2 * (-614135872350.0 + t2 * (566098157625.0 - t2 * 188699385875.0)))
            )
        )
        / 6688604160.0
    )
    nu = order
    series = 1.0 - u1 / nu + u2 / nu**2 - u3 / nu**3 + u4 / nu**4 - u5 / nu**5
    return 0.5 * np.log(np.pi / (2.0 * nu)) - nu * eta - 0.25 * np.log1p(z * z) + np.log(series)


def log_bessel_k(order, arg):
    """ln K_order(arg) for real order and positive argument.

    Vectorized over both inputs.  The scaled Bessel routine covers the bulk
    of the domain; a uniform asymptotic expansion takes over where the
    scaled value would overflow (order much larger than argument), so
    arguments up to ~700 and orders up to ~500 stay finite.
    """
    order = np.asarray(order, dtype=float)
    arg = np.asarray(arg, dtype=float)
    if not (np.all(np.isfinite(order)) and np.all(np.isfinite(arg))):
        raise ValueError("log_bessel_k requires finite order and argument")
    if np.any(arg <= 0.0):
        raise ValueError("log_bessel_k requires a positive argument")
    nu = np.abs(order)  # K is even in the order
    with np.errstate(over="ignore"):
        scaled = kve(nu, arg)
    out = np.where(scaled > 0.0, np.log(np.where(scaled > 0.0, scaled, 1.0)) - arg, np.nan)
    bad = ~np.isfinite(out)
    if np.any(bad):
        nu_b = np.maximum(np.atleast_1d(nu + np.zeros_like(arg))[np.atleast_1d(bad)], 1e-10)
        arg_b = np.atleast_1d(arg + np.zeros_like(nu))[np.atleast_1d(bad)]
        repl = _debye_log_k(nu_b, arg_b)
        if out.ndim == 0:
            out = repl.reshape(())
        else:
            out[bad] = repl
    return out if out.ndim else float(out)


def bessel_k_ratio(order, arg):
    """R_order(arg) = K_{order+1}(arg) / K_order(arg), always positive."""
    return np.exp(log_bessel_k(np.asarray(order, dtype=float) + 1.0, arg) - log_bessel_k(order, arg))


def dlog_bessel_k_dorder(order, arg, h=1e-5):
    """d/d(order) ln K_order(arg) by central finite difference.

    Odd in the order (ln K is even), and exactly 0 at order 0.
    """
    order = np.asarray(order, dtype=float)
    return (log_bessel_k(order + h, arg) - log_bessel_k(order - h, arg)) / (2.0 * h)


def dlog_bessel_k_darg(order, arg):
    """K'_order(arg) / K_order(arg) via the derivative recurrence.

    Uses K' = -(K_{order-1} + K_{order+1})/2 in log scale; always < -1.
    """
    order = np.asarray(order, dtype=float)
    base = log_bessel_k(order, arg)
    lo = log_bessel_k(order - 1.0, arg)
    hi = log_bessel_k(order + 1.0, arg)
    return -0.5 * (np.exp(lo - base) + np.exp(hi - base))


# ---------------------------------------------------------------------------
# Fast normal CDF evaluators for q <= 3 (deterministic, vectorized)
# ---------------------------------------------------------------------------

_CLIP = 38.0  # |z| beyond this: ndtr is exactly 0/1 in double precision


@lru_cache(maxsize=32)
def _gl_nodes(n):
    x, w = roots_legendre(n)
    return x, w


def _bvn_upper(dh, dk, r):
    """P(X > dh, Y > dk) for standard bivariate normal, scalar correlation.

    Vectorized translation of Genz's BVN algorithm (Drezner-Wesolowsky with
    Genz's near-unity branch), accurate to ~1e-14.
    """
    dh = np.asarray(dh, dtype=float)
    dk = np.asarray(dk, dtype=float)
    r = float(r)
    if r == 0.0:
        return ndtr(-dh) * ndtr(-dk)
    if r >= 1.0:
        return ndtr(-np.maximum(dh, dk))
    if r <= -1.0:
        return np.maximum(0.0, ndtr(-dk) - ndtr(dh))

    h = np.clip(dh, -_CLIP, _CLIP)
    k = np.clip(dk, -_CLIP, _CLIP)
    hk = h * k
    xg, w = _gl_nodes(20)
    x = 1.0 + xg  # nodes on (0, 2)

    if abs(r) < 0.925:
        hs = (h * h + k * k) / 2.0
        asr = np.arcsin(r) / 2.0
        sn = np.sin(asr * x)
        f = np.exp((sn * hk[..., None] - hs[..., None]) / (1.0 - sn**2))
        p = f @ w * asr / (2.0 * np.pi) + ndtr(-h) * ndtr(-k)
        return np.clip(p, 0.0, 1.0)

    # |r| in [0.925, 1): Genz's expansion about r = +-1
    if r < 0.0:
        k = -k
        hk = -hk
    bs = (h - k) ** 2
    a_s = 1.0 - r * r
    a = np.sqrt(a_s)
    c = (4.0 - hk) / 8.0
    d = (12.0 - hk) / 80.0
    asr0 = -(bs / a_s + hk) / 2.0
    bvn = np.where(
        asr0 > -100.0,
        a * np.exp(asr0) * (1.0 - c * (bs - a_s) * (1.0 - d * bs) / 3.0 + c * d * a_s * a_s),
        0.0,
    )
    b = np.sqrt(bs)
    sp = np.sqrt(2.0 * np.pi) * ndtr(-b / a)
    bvn = bvn - np.where(
        hk > -100.0,
        np.exp(np.maximum(-hk / 2.0, -700.0)) * sp * b * (1.0 - c * bs * (1.0 - d * bs) / 3.0),
        0.0,
    )
    ah = a / 2.0
    xs = (ah * x) ** 2
    asr1 = -(bs[..., None] / xs + hk[..., None]) / 2.0
    live = asr1 > -100.0
    sp1 = 1.0 + c[..., None] * xs * (1.0 + 5.0 * d[..., None] * xs)
    rs = np.sqrt(1.0 - xs)
    ep = np.exp(-(hk[..., None] / 2.0) * xs / (1.0 + rs) ** 2) / rs
    integ = np.where(live, np.exp(np.where(live, asr1, 0.0)) * (sp1 - ep), 0.0)
    bvn = (ah * (integ @ w) - bvn) / (2.0 * np.pi)
    if r > 0.0:
        p = bvn + ndtr(-np.maximum(h, k))
    else:
        L = np.where(h < 0.0, ndtr(k) - ndtr(h), ndtr(-h) - ndtr(-k))
        p = np.where(h >= k, -bvn, L - bvn)
    return np.clip(p, 0.0, 1.0)


def _bvn_cdf(b1, b2, rho):
    """P(X <= b1, Y <= b2) for standard bivariate normal, scalar rho."""
    return _bvn_upper(-np.asarray(b1, dtype=float), -np.asarray(b2, dtype=float), rho)


def _tvn_cdf(b, corr, n_nodes=16, chunk=4096):
    """P(X <= b) for standard trivariate normal, shared correlation matrix.

    Conditions on one coordinate and integrates an exact bivariate CDF along
    it with composite Gauss-Legendre nodes mapped through the normal
    quantile.  When the conditional correlation allows it, the bivariate
    evaluation is fused into one vectorized pass.  `b` has shape (..., 3);
    the correlation matrix is common to the whole batch.
    """
    b = np.asarray(b, dtype=float)
    corr = np.asarray(corr, dtype=float)
    # condition on the coordinate with the weakest couplings
    j = int(np.argmin(np.abs(corr - np.eye(3)).max(axis=1)))
    rest = [i for i in range(3) if i != j]
    r12, r13 = corr[j, rest[0]], corr[j, rest[1]]
    r23 = corr[rest[0], rest[1]]
    s2 = np.sqrt(max(1.0 - r12 * r12, 1e-14))
    s3 = np.sqrt(max(1.0 - r13 * r13, 1e-14))
    rc = float(np.clip((r23 - r12 * r13) / (s2 * s3), -1.0, 1.0))

    x, w = _gl_nodes(n_nodes)
    # two-panel composite rule on (0, 1); resolves the quantile-map endpoints
    v = np.concatenate([0.25 * (x + 1.0), 0.5 + 0.25 * (x + 1.0)])
    wv = np.concatenate([0.25 * w, 0.25 * w])

    fuse = abs(rc) < 0.925
    if fuse:
        asr = np.arcsin(rc) / 2.0
        xg, wg = _gl_nodes(20)
        sn = np.sin(asr * (1.0 + xg))
        one_m_sn2 = 1.0 - sn**2

    shape = b.shape[:-1]
    flat = b.reshape(-1, 3)
    out = np.empty(flat.shape[0])
    for start in range(0, flat.shape[0], chunk):
        blk = flat[start : start + chunk]
        b1 = np.clip(blk[:, j], -_CLIP, np.inf)
        p1 = ndtr(b1)
        u = v * p1[:, None]
        z = ndtri(np.clip(u, 1e-320, 1.0 - 1e-16))
        c2 = np.clip((blk[:, rest[0], None] - r12 * z) / s2, -_CLIP, _CLIP)
        c3 = np.clip((blk[:, rest[1], None] - r13 * z) / s3, -_CLIP, _CLIP)
        if fuse:
            hk = c2 * c3
            hs = 0.5 * (c2 * c2 + c3 * c3)
            f = np.exp((sn * hk[..., None] - hs[..., None]) / one_m_sn2)
            inner = (f @ wg) * asr / (2.0 * np.pi) + ndtr(c2) * ndtr(c3)
        else:
            inner = _bvn_cdf(c2, c3, rc)
        out[start : start + chunk] = p1 * (np.clip(inner, 0.0, 1.0) @ wv)
    return np.clip(out.reshape(shape), 0.0, 1.0)


def _mvn_cdf_std_batch(b, corr, chunk=200_000):
    """P(Z <= b) for Z ~ N(0, corr), batched over leading axes of `b`.

    Dispatches to exact/deterministic evaluators for q <= 3, chunking large
    batches to bound temporary memory; probabilities for larger q go through
    the quasi-random rectangle rule one row at a time (not used by the
    fitting engine's hot paths).
    """
    b = np.asarray(b, dtype=float)
    q = b.shape[-1]
    if q == 1:
        return ndtr(b[..., 0])
    if q == 2:
        rho = float(np.asarray(corr)[0, 1])
        flat = b.reshape(-1, 2)
        out = np.empty(flat.shape[0])
        for lo in range(0, flat.shape[0], chunk):
            blk = flat[lo : lo + chunk]
            out[lo : lo + chunk] = _bvn_cdf(blk[:, 0], blk[:, 1], rho)
        return out.reshape(b.shape[:-1])
    if q == 3:
        return _tvn_cdf(b, corr)
    flat = b.reshape(-1, q)
    spec = MvnSpec()
    out = np.array([
        mvn_rectangle_prob(np.full(q, -np.inf), row, np.zeros(q), corr, spec)
        for row in flat
    ])
    return out.reshape(b.shape[:-1])


# ---------------------------------------------------------------------------
# Quasi-random rectangle probabilities (Genz separation of variables)
# ---------------------------------------------------------------------------

def _severity_permuted_cholesky(cov, lower, upper):
    """Cholesky factor with variables reordered by truncation severity.

    At each stage the remaining variable with the smallest conditional
    rectangle mass is pivoted next, following Genz; returns the permuted
    lower-triangular factor and the reordered, scaled bounds.
    """
    cov = np.array(cov, dtype=float)
    lo = np.array(lower, dtype=float)
    hi = np.array(upper, dtype=float)
    n = cov.shape[0]
    d = np.sqrt(np.diag(cov))
    lo, hi = lo / d, hi / d
    cov = cov / np.outer(d, d)
    L = np.zeros_like(cov)
    y = np.zeros(n)
    order = np.arange(n)
    for k in range(n):
        best, best_de = k, np.inf
        for i in range(k, n):
            ci = cov[i, i] - L[i, :k] @ L[i, :k]
            if ci <= 1e-12:
                continue
            ci = np.sqrt(ci)
            s = L[i, :k] @ y[:k]
            de = ndtr((hi[i] - s) / ci) - ndtr((lo[i] - s) / ci)
            if de < best_de:
                best, best_de = i, de
        if best != k:
            for arr in (lo, hi, order):
                arr[[k, best]] = arr[[best, k]]
            cov[[k, best], :] = cov[[best, k], :]
            cov[:, [k, best]] = cov[:, [best, k]]
            L[[k, best], :k] = L[[best, k], :k]
        ck2 = cov[k, k] - L[k, :k] @ L[k, :k]
        ck = np.sqrt(max(ck2, 1e-14))
        L[k, k] = ck
        for i in range(k + 1, n):
            L[i, k] = (cov[i, k] - L[i, :k] @ L[k, :k]) / ck
        s = L[k, :k] @ y[:k]
        a, bnd = (lo[k] - s) / ck, (hi[k] - s) / ck
        de = ndtr(bnd) - ndtr(a)
        if de > 1e-12:
            ea = np.exp(-0.5 * a * a) if np.isfinite(a) else 0.0
            eb = np.exp(-0.5 * bnd * bnd) if np.isfinite(bnd) else 0.0
            y[k] = (ea - eb) / (np.sqrt(2.0 * np.pi) * de)
        else:
            y[k] = np.clip((a + bnd) / 2.0, -10.0, 10.0) if np.isfinite(a + bnd) else 0.0
    return L, lo, hi


def mvn_rectangle_prob(lower, upper, mean, cov, spec=MvnSpec()):
    """P(lower <= X <= upper) for X ~ N(mean, cov).

    Uses a scrambled-Sobol separation-of-variables rule after reordering the
    variables by truncation severity; deterministic for a fixed
    ``spec.seed``.  The univariate case goes straight through the normal CDF.
    """
    lower = np.asarray(lower, dtype=float).ravel()
    upper = np.asarray(upper, dtype=float).ravel()
    mean = np.asarray(mean, dtype=float).ravel()
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    q = mean.size
    if lower.size != q or upper.size != q or cov.shape != (q, q):
        raise ValueError("dimension mismatch between bounds, mean and covariance")
    if np.any(lower > upper):
        raise ValueError("lower bound exceeds upper bound")
    try:
        np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise ValueError("covariance matrix is not positive definite") from exc

    lo = lower - mean
    hi = upper - mean
    if q == 1:
        sd = np.sqrt(cov[0, 0])
        return float(np.clip(ndtr(hi[0] / sd) - ndtr(lo[0] / sd), 0.0, 1.0))

    L, lo, hi = _severity_permuted_cholesky(cov, lo, hi)
    n_rep = 8
    m = max(128, int(2 ** np.floor(np.log2(max(spec.sample_budget // n_rep, 2)))))
    sob = qmc.Sobol(d=q - 1, scramble=True, seed=spec.seed)
    pts = sob.random(n_rep * m).reshape(n_rep, m, q - 1)

    c0 = ndtr(lo[0] / L[0, 0])
    d0 = ndtr(hi[0] / L[0, 0])
    cvec = np.full((n_rep, m), c0)
    dvec = np.full((n_rep, m), d0)
    prob = dvec - cvec
    y = np.zeros((n_rep, m, q - 1))
    for i in range(1, q):
        u = cvec + pts[:, :, i - 1] * (dvec - cvec)
        y[:, :, i - 1] = ndtri(np.clip(u, 1e-320, 1.0 - 1e-16))
        s = y[:, :, :i] @ L[i, :i]
        cvec = ndtr((lo[i] - s) / L[i, i])
        dvec = ndtr((hi[i] - s) / L[i, i])
        prob = prob * (dvec - cvec)
    return float(np.clip(prob.mean(), 0.0, 1.0))
