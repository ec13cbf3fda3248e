"""
Multivariate normal truncated above at a common bound: Gaussian
conditioning, Gibbs sampling and Monte Carlo moment estimates.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
from scipy import special

__all__ = [
    "TruncSpec",
    "MomentEstimate",
    "conditional_normal",
    "conditional_from_precision",
    "truncnorm_upper_moments",
    "sample_truncnorm_upper",
    "sample_truncated",
    "estimate_moments",
    "project_psd",
]

# marginals whose standardized bound falls below this are treated as empty
MIN_STD_BOUND = -8.0


def _symmetrize(M):
    return 0.5 * (M + M.T)


class TruncSpec:
    """
    N(mean, cov) restricted to the box {x : x_i < upper for all i}.

    Either ``cov`` or ``precision`` may be given; the other is derived
    lazily. Gibbs sampling only needs the precision matrix.

    With ``check`` the matrix must be symmetric positive definite and, unless
    ``check_bound`` is False, no marginal may put numerically zero mass
    below ``upper``.
    """

    def __init__(self, mean, cov=None, upper=0.0, precision=None, check=True, check_bound=True):
        self.mean = np.atleast_1d(np.asarray(mean, dtype=float))
        d = self.mean.shape[0]
        if cov is None and precision is None:
            raise ValueError("either cov or precision is required")
        self.upper = float(upper)
        self._cov = None if cov is None else np.atleast_2d(np.asarray(cov, dtype=float))
        self._prec = None if precision is None else np.atleast_2d(np.asarray(precision, dtype=float))
        for M in (self._cov, self._prec):
            if M is not None and M.shape != (d, d):
                raise ValueError(f"matrix shape {M.shape} does not match mean of length {d}")
        if check:
            self.validate(check_bound)

    @property
    def d(self):
        return self.mean.shape[0]

    @property
    def cov(self):
        if self._cov is None:
            c, low = sla.cho_factor(self._prec, lower=True)
            self._cov = _symmetrize(sla.cho_solve((c, low), np.eye(self.d)))
        return self._cov

    @property
    def precision(self):
        if self._prec is None:
            c, low = sla.cho_factor(self._cov, lower=True)
            self._prec = _symmetrize(sla.cho_solve((c, low), np.eye(self.d)))
        return self._prec

    @property
    def sd(self):
        return np.sqrt(np.diag(self.cov))

    def validate(self, check_bound=True):
        M = self._cov if self._cov is not None else self._prec
        scale = max(np.abs(M).max(), 1.0)
        if np.abs(M - M.T).max() > 1e-12 * scale:
            raise ValueError("covariance/precision matrix is not symmetric")
        try:
            sla.cholesky(M, lower=True)
        except sla.LinAlgError as exc:
            raise ValueError("covariance/precision matrix is not positive definite") from exc
        if not check_bound or not np.isfinite(self.upper):
            return
        z = (self.upper - self.mean) / self.sd
        if np.any(z <= MIN_STD_BOUND):
            worst = int(np.argmin(z))
            raise ValueError(
                f"truncation region has numerically zero probability (coordinate {worst} has "
                f"standardized bound {z[worst]:.2f}); review the censoring threshold"
            )


@dataclass
class MomentEstimate:
    """Monte Carlo estimate of the truncated mean and covariance."""

    mu_c: np.ndarray
    sigma_c: np.ndarray
    draws_used: int
    mc_se: np.ndarray


def conditional_normal(mu, sigma, observed_idx, y_o):
    """
    Distribution of the unobserved block of N(mu, sigma) given the observed block.

    Parameters
    ----------
    mu : (N,) array
    sigma : (N, N) array
    observed_idx : index array or boolean mask of observed coordinates
    y_o : values of the observed coordinates

    Returns
    -------
    mean, cov : conditional mean and (symmetrized) Schur-complement covariance
        of the remaining coordinates, in increasing index order.
    """
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    N = mu.shape[0]
    obs = np.zeros(N, dtype=bool)
    obs[observed_idx] = True
    mis = ~obs
    y_o = np.asarray(y_o, dtype=float)
    if y_o.shape[0] != obs.sum():
        raise ValueError("y_o does not match the number of observed coordinates")
    if not obs.any():
        return mu.copy(), sigma.copy()
    S_oo = sigma[np.ix_(obs, obs)]
    S_mo = sigma[np.ix_(mis, obs)]
    try:
        fac = sla.cho_factor(S_oo, lower=True)
    except sla.LinAlgError as exc:
        raise np.linalg.LinAlgError(
            f"observed-block covariance is singular (condition number {np.linalg.cond(S_oo):.3g})"
        ) from exc
    mean = mu[mis] + S_mo @ sla.cho_solve(fac, y_o - mu[obs])
    cov = sigma[np.ix_(mis, mis)] - S_mo @ sla.cho_solve(fac, S_mo.T)
    return mean, _symmetrize(cov)


def conditional_from_precision(mu, precision, observed_idx, y_o):
    """
    Same as :func:`conditional_normal` but parameterized by the joint precision.

    Returns the conditional mean and the conditional precision (the
    missing-missing block of the joint precision).
    """
    mu = np.asarray(mu, dtype=float)
    N = mu.shape[0]
    obs = np.zeros(N, dtype=bool)
    obs[observed_idx] = True
    mis = ~obs
    P_mm = precision[np.ix_(mis, mis)]
    P_mo = precision[np.ix_(mis, obs)]
    fac = sla.cho_factor(P_mm, lower=True)
    mean = mu[mis] - sla.cho_solve(fac, P_mo @ (np.asarray(y_o, dtype=float) - mu[obs]))
    return mean, _symmetrize(P_mm)


def truncnorm_upper_moments(mean, sd, upper):
    """Closed-form mean and variance of N(mean, sd^2) truncated to (-inf, upper)."""
    mean = np.asarray(mean, dtype=float)
    sd = np.asarray(sd, dtype=float)
    b = (upper - mean) / sd
    # inverse Mills ratio phi(b)/Phi(b), evaluated in log space for deep tails
    lam = np.exp(-0.5 * b**2 - 0.5 * np.log(2 * np.pi) - special.log_ndtr(b))
    m = mean - sd * lam
    v = sd**2 * (1.0 - b * lam - lam**2)
    return m, v


def sample_truncnorm_upper(mean, sd, upper, u):
    """
    Inverse-CDF draws from N(mean, sd^2) truncated to (-inf, upper).

    ``u`` are uniforms in (0, 1). The CDF is handled on the log scale so the
    lower tail keeps full relative accuracy.
    """
    b = (upper - mean) / sd
    z = special.ndtri_exp(np.log(u) + special.log_ndtr(b))
    x = mean + sd * z
    return np.minimum(x, np.nextafter(upper, -np.inf))


def sample_truncated(spec, count, seed=None, burn_in=200, thin=5, n_chains=None, init=None,
                     return_state=False):
    """
    Systematic-scan Gibbs sampler for a TruncSpec.

    ``n_chains`` independent chains run in lock-step (vectorized); each is
    burned in for ``burn_in`` sweeps and then records every ``thin``-th
    sweep. Draws are returned chain-major.

    Parameters
    ----------
    spec : TruncSpec
    count : int
        Number of draws to return.
    seed : int, np.random.SeedSequence or np.random.Generator
    burn_in, thin : int
    n_chains : int, optional
        Defaults to ``min(count, 100)``.
    init : (n_chains, d) array, optional
        Starting states, e.g. the final states of a previous run. Must lie
        strictly inside the truncation region.
    return_state : bool
        Also return the final (n_chains, d) chain states for warm starts.

    Returns
    -------
    (count, d) array, or (draws, state) when ``return_state`` is set
    """
    count = int(count)
    if count < 1:
        raise ValueError("count must be positive")
    if thin < 1 or burn_in < 0:
        raise ValueError("thin must be >= 1 and burn_in >= 0")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    d, c = spec.d, spec.upper
    mu = spec.mean
    P = np.ascontiguousarray(spec.precision)
    pdiag = np.diag(P).copy()
    if np.any(pdiag <= 0):
        raise ValueError("precision matrix has a non-positive diagonal")
    csd = 1.0 / np.sqrt(pdiag)

    K = min(count, 100) if n_chains is None else int(n_chains)
    per_chain = -(-count // K)
    if init is None:
        start = np.minimum(mu, c - 0.5 * spec.sd)
        R = np.repeat((start - mu)[:, None], K, axis=1)
    else:
        init = np.asarray(init, dtype=float)
        if init.shape != (K, d):
            raise ValueError(f"init must have shape ({K}, {d})")
        if np.any(init >= c):
            raise ValueError("init must lie strictly below the truncation bound")
        R = np.ascontiguousarray((init - mu).T)

    # x_j | rest ~ N(mu_j - s_j * csd_j, csd_j^2) with s = Pn @ (x - mu), so the
    # standardized bound is b0_j + s_j and the new residual csd_j * (z - s_j)
    Pn = P / (pdiag * csd)[:, None]
    np.fill_diagonal(Pn, 0.0)
    b0 = (c - mu) / csd
    out = np.empty((per_chain, K, d))
    n_sweeps = burn_in + per_chain * thin
    recorded = 0
    s = np.empty(K)
    t = np.empty(K)
    for sweep in range(n_sweeps):
        logu = np.log(rng.random((d, K)))
        for j in range(d):
            np.dot(Pn[j], R, out=s)
            special.log_ndtr(s + b0[j], out=t)
            t += logu[j]
            special.ndtri_exp(t, out=t)
            t -= s
            np.multiply(t, csd[j], out=R[j])
        if sweep >= burn_in and (sweep - burn_in + 1) % thin == 0:
            out[recorded] = (R + mu[:, None]).T
            recorded += 1
    np.minimum(out, np.nextafter(c, -np.inf), out=out)
    draws = out.transpose(1, 0, 2).reshape(K * per_chain, d)
    if K * per_chain > count:
        # drop surplus draws from the front of each chain
        keep = np.ones((K, per_chain), dtype=bool)
        surplus = K * per_chain - count
        keep[:surplus, 0] = False
        draws = draws[keep.ravel()]
    if not np.all(draws < c):
        raise AssertionError("Gibbs draw outside the truncation region")
    if return_state:
        return draws, np.minimum((R + mu[:, None]).T, np.nextafter(c, -np.inf))
    return draws


def estimate_moments(draws, n_batches=None):
    """
    Sample mean and covariance (denominator = count) with batch-means
    standard errors for the mean.
    """
    draws = np.asarray(draws, dtype=float)
    if draws.ndim == 1:
        draws = draws[:, None]
    m, d = draws.shape
    if m < 2:
        raise ValueError("at least two draws are required")
    mu = draws.mean(axis=0)
    dev = draws - mu
    sigma = _symmetrize(dev.T @ dev / m)
    nb = max(2, int(np.sqrt(m))) if n_batches is None else int(n_batches)
    nb = min(nb, m)
    size = m // nb
    bm = draws[: nb * size].reshape(nb, size, d).mean(axis=1)
    se = bm.std(axis=0, ddof=1) / np.sqrt(nb)
    return MomentEstimate(mu_c=mu, sigma_c=sigma, draws_used=m, mc_se=se)


def project_psd(M):
    """Clip negative eigenvalues of a symmetric matrix to zero."""
    M = _symmetrize(np.asarray(M, dtype=float))
    if M.size == 0:
        return M
    w, V = np.linalg.eigh(M)
    if w.min() >= 0:
        return M
    return _symmetrize((V * np.clip(w, 0.0, None)) @ V.T)
