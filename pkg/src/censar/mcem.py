"""
Monte Carlo EM estimation of the censored SAR network model

    y = sum_k rho_k W_k y + X beta + eps,   eps ~ N(0, sigma2 I),

where only the entries of y at or above a threshold c are observed.
"""

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy import optimize, special

from .netlinalg import EdgeIndex, SarOperator, sar_gram
from .optim import bfgs_maximize
from .tmvn import (
    TruncSpec,
    conditional_from_precision,
    estimate_moments,
    project_psd,
    sample_truncated,
    truncnorm_upper_moments,
)

__all__ = [
    "CensoredNetwork",
    "Theta",
    "EStepMoments",
    "MCEMConfig",
    "FitResult",
    "ProfileObjective",
    "complete_loglik",
    "complete_score",
    "complete_hessian",
    "tobit_init",
    "e_step",
    "profile_Q",
    "profile_grad",
    "profile_constant",
    "m_step",
    "fit",
    "louis_se",
    "shrink_to_feasible",
]

logger = logging.getLogger(__name__)

LOG2PI = np.log(2 * np.pi)


class ConvergenceWarning(UserWarning):
    pass


@dataclass
class CensoredNetwork:
    """
    One period of a vectorized network censored from below at ``c``.

    Attributes
    ----------
    edge_index : EdgeIndex
    y : (N,) array
        Log-flows at observed slots, NaN at censored slots.
    mask : (N,) bool array
        True where the flow is observed.
    c : float
        Censoring threshold; observed values satisfy ``y >= c``.
    X : (N, p) array
    labels : tuple of str
        Covariate names.
    """

    edge_index: EdgeIndex
    y: np.ndarray
    mask: np.ndarray
    c: float
    X: np.ndarray
    labels: tuple = ()

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float)
        self.mask = np.asarray(self.mask, dtype=bool)
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        self.c = float(self.c)
        N = self.edge_index.N
        if self.y.shape != (N,) or self.mask.shape != (N,):
            raise ValueError(f"y and mask must have length N={N}")
        if self.X.shape[0] != N:
            raise ValueError(f"X must have N={N} rows, got {self.X.shape[0]}")
        if not self.labels:
            self.labels = tuple(f"x{i + 1}" for i in range(self.X.shape[1]))
        self.labels = tuple(self.labels)
        if len(self.labels) != self.X.shape[1]:
            raise ValueError("one label per covariate required")
        yo = self.y[self.mask]
        if not np.all(np.isfinite(yo)):
            raise ValueError("observed flows must be finite")
        if np.any(yo < self.c):
            raise ValueError("observed values must not lie below the censoring threshold")
        self.y = np.where(self.mask, self.y, np.nan)

    @property
    def N(self):
        return self.edge_index.N

    @property
    def p(self):
        return self.X.shape[1]

    @property
    def n_obs(self):
        return int(self.mask.sum())

    @property
    def n_mis(self):
        return self.N - self.n_obs

    @property
    def obs_idx(self):
        return np.flatnonzero(self.mask)

    @property
    def mis_idx(self):
        return np.flatnonzero(~self.mask)

    def filled(self, values=None):
        """y with censored slots replaced by ``values`` (default: the threshold)."""
        out = self.y.copy()
        out[~self.mask] = self.c if values is None else values
        return out

    def check_estimable(self):
        if self.n_obs == 0:
            raise ValueError("no observed flows: the model cannot be estimated")
        if self.n_obs <= self.p:
            raise ValueError(f"only {self.n_obs} observed flows for {self.p} covariates")
        if np.linalg.matrix_rank(self.X) < self.p:
            raise ValueError("design matrix X does not have full column rank")


@dataclass
class Theta:
    """Parameter vector (rho, beta, sigma2) plus feasibility notes."""

    rho: np.ndarray
    beta: np.ndarray
    sigma2: float
    notes: tuple = ()

    def __post_init__(self):
        self.rho = np.atleast_1d(np.asarray(self.rho, dtype=float))
        self.beta = np.atleast_1d(np.asarray(self.beta, dtype=float))
        self.sigma2 = float(self.sigma2)
        if not self.sigma2 > 0:
            raise ValueError(f"sigma2 must be positive, got {self.sigma2}")

    @property
    def q(self):
        return self.rho.size

    @property
    def p(self):
        return self.beta.size

    def to_vector(self):
        return np.concatenate([self.rho, self.beta, [self.sigma2]])

    @classmethod
    def from_vector(cls, vec, q, notes=()):
        vec = np.asarray(vec, dtype=float)
        return cls(vec[:q], vec[q:-1], vec[-1], notes)

    @staticmethod
    def names(ws_labels, x_labels):
        return [f"rho_{w}" for w in ws_labels] + list(x_labels) + ["sigma2"]


@dataclass
class EStepMoments:
    """
    Truncated conditional moments of the censored block.

    ``y_star`` holds the observed values and the truncated conditional means
    at the censored slots ``mis_idx``; ``sigma_c`` is the truncated
    conditional covariance with rows ordered like ``mis_idx``.
    """

    y_star: np.ndarray
    sigma_c: np.ndarray
    mis_idx: np.ndarray
    mc_se: np.ndarray
    draws_used: int
    exact: bool = False
    state: np.ndarray = None

    @property
    def mu_c(self):
        return self.y_star[self.mis_idx]


@dataclass
class MCEMConfig:
    """
    Tuning constants of the MCEM loop.

    The Monte Carlo sample size of E-step t is ``min(cap, m0 * growth**t)``.
    ``exact_independent`` uses closed-form truncated moments whenever the
    censored coordinates are conditionally independent (e.g. rho fixed at 0).
    Chains restarted from the previous E-step use ``warm_burn_in`` sweeps.
    """

    m0: int = 500
    growth: float = 1.2
    cap: int = 5000
    burn_in: int = 200
    warm_burn_in: int = 20
    thin: int = 5
    n_chains: int = 100
    tol: float = 0.1
    max_iter: int = 100
    bfgs_gtol: float = 1e-8
    bfgs_max_iter: int = 200
    warm_start: bool = True
    exact_independent: bool = True

    def __post_init__(self):
        if min(self.m0, self.cap, self.thin, self.n_chains, self.max_iter) < 1 or min(self.burn_in, self.warm_burn_in) < 0:
            raise ValueError("MC sizes, thinning and iteration limits must be positive")
        if not self.tol > 0 or not self.growth >= 1:
            raise ValueError("tol must be positive and growth >= 1")

    def draws(self, t):
        return int(min(self.cap, round(self.m0 * self.growth**t)))


@dataclass
class FitResult:
    theta: Theta
    std_errors: np.ndarray
    vcov: np.ndarray
    em_iterations: int
    trace: list
    converged: bool
    seeds: list
    names: list
    moments: EStepMoments = None
    notes: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# complete-data likelihood


def _operator(ws, rho, op=None):
    if op is not None and np.array_equal(op.rho, rho):
        op._check()
        return op
    op = SarOperator(ws, rho)
    op._check()
    return op


def _residual(theta, Y, X, ws):
    """A(rho) y - X beta for a single y (N,) or a batch (w, N)."""
    Y = np.asarray(Y, dtype=float)
    lag = ws.lags(Y.T) if Y.ndim == 2 else ws.lags(Y)
    # lag: (N, q) or (N, q, w)
    if Y.ndim == 2:
        AY = Y - np.einsum("k,nkw->wn", theta.rho, lag)
        return AY - (X @ theta.beta)[None, :], np.transpose(lag, (2, 0, 1))
    AY = Y - lag @ theta.rho
    return AY - X @ theta.beta, lag


def complete_loglik(theta, y, data, ws, op=None):
    """Complete-data log-likelihood of a fully specified latent vector."""
    op = _operator(ws, theta.rho, op)
    r, _ = _residual(theta, y, data.X, ws)
    N = data.N
    return -0.5 * N * (LOG2PI + np.log(theta.sigma2)) + op.logdet - (r @ r) / (2 * theta.sigma2)


def _score_hessian_batch(theta, Y, X, ws, op, with_hessian=True):
    """Scores (w, k) and Hessians (w, k, k) for a batch of completed vectors."""
    Y = np.atleast_2d(Y)
    w, N = Y.shape
    q, p = theta.q, theta.p
    s2 = theta.sigma2
    r, lag = _residual(theta, Y, X, ws)  # r: (w, N), lag: (w, N, q)
    trBW = op.trace_BW() if q else np.zeros(0)
    rr = np.einsum("wn,wn->w", r, r)
    rWy = np.einsum("wn,wnk->wk", r, lag)
    k = q + p + 1
    S = np.empty((w, k))
    S[:, :q] = -trBW[None, :] + rWy / s2
    S[:, q:q + p] = (r @ X) / s2
    S[:, -1] = -N / (2 * s2) + rr / (2 * s2**2)
    if not with_hessian:
        return S, None
    H = np.zeros((w, k, k))
    if q:
        BW = op.BW()
        tr2 = np.array([[np.sum(BW[a] * BW[b].T) for b in range(q)] for a in range(q)])
        H[:, :q, :q] = -tr2[None] - np.einsum("wnk,wnl->wkl", lag, lag) / s2
        XtWy = np.einsum("np,wnk->wpk", X, lag)
        H[:, q:q + p, :q] = -XtWy / s2
        H[:, :q, q:q + p] = np.transpose(H[:, q:q + p, :q], (0, 2, 1))
        H[:, :q, -1] = -rWy / s2**2
        H[:, -1, :q] = H[:, :q, -1]
    H[:, q:q + p, q:q + p] = -(X.T @ X)[None] / s2
    H[:, q:q + p, -1] = -(r @ X) / s2**2
    H[:, -1, q:q + p] = H[:, q:q + p, -1]
    H[:, -1, -1] = N / (2 * s2**2) - rr / s2**3
    return S, H


def complete_score(theta, y, data, ws, op=None):
    """Gradient of :func:`complete_loglik` in the order (rho, beta, sigma2)."""
    op = _operator(ws, theta.rho, op)
    S, _ = _score_hessian_batch(theta, np.asarray(y)[None, :], data.X, ws, op, with_hessian=False)
    return S[0]


def complete_hessian(theta, y, data, ws, op=None):
    """Hessian of :func:`complete_loglik` in the order (rho, beta, sigma2)."""
    op = _operator(ws, theta.rho, op)
    _, H = _score_hessian_batch(theta, np.asarray(y)[None, :], data.X, ws, op)
    return H[0]


# ---------------------------------------------------------------------------
# initialization


def shrink_to_feasible(ws, rho, factor=0.5, max_halvings=60):
    """Scale rho toward 0 until A(rho) has a positive determinant."""
    rho = np.asarray(rho, dtype=float)
    for _ in range(max_halvings):
        if SarOperator(ws, rho).feasible:
            return rho
        rho = rho * factor
    return np.zeros_like(rho)


def _tobit_negll(params, Z, y, obs, c):
    gamma, logs = params[:-1], params[-1]
    s = np.exp(logs)
    xb = Z @ gamma
    e = (y[obs] - xb[obs]) / s
    a = (c - xb[~obs]) / s
    logcdf = special.log_ndtr(a)
    ll = np.sum(-0.5 * LOG2PI - logs - 0.5 * e**2) + np.sum(logcdf)
    lam = np.exp(-0.5 * a**2 - 0.5 * LOG2PI - logcdf)
    g_gamma = Z[obs].T @ e / s - Z[~obs].T @ lam / s
    g_logs = np.sum(e**2 - 1.0) - np.sum(lam * a)
    return -ll, -np.concatenate([g_gamma, [g_logs]])


def tobit_fit(Z, y, obs, c):
    """
    Maximum likelihood for y = Z gamma + e left-censored at c.

    Returns
    -------
    gamma, sigma2, success
    """
    obs = np.asarray(obs, dtype=bool)
    if not obs.any():
        raise ValueError("no observed rows: Tobit likelihood is not identified")
    yf = np.where(obs, y, c)
    gamma0, *_ = np.linalg.lstsq(Z, yf, rcond=None)
    resid = yf - Z @ gamma0
    x0 = np.concatenate([gamma0, [0.5 * np.log(max(resid @ resid / len(y), 1e-8))]])
    res = optimize.minimize(
        _tobit_negll, x0, args=(Z, yf, obs, c), jac=True, method="BFGS",
        options={"gtol": 1e-9 * max(1, len(y)), "maxiter": 2000},
    )
    gnorm = np.max(np.abs(res.jac)) if res.jac is not None else np.inf
    ok = bool(np.all(np.isfinite(res.x)) and gnorm < 1e-4 * max(1, len(y)))
    return res.x[:-1], float(np.exp(2 * res.x[-1])), ok


def tobit_init(data, ws):
    """
    Pseudo-likelihood start: Tobit fit with the spatial lags ``W_k y_bar`` as
    extra regressors, where ``y_bar`` imputes the threshold at censored slots.
    """
    data.check_estimable()
    ybar = data.filled()
    lags = ws.lags(ybar)
    Z = np.hstack([data.X, lags])
    notes = []
    try:
        gamma, sigma2, ok = tobit_fit(Z, ybar, data.mask, data.c)
    except (np.linalg.LinAlgError, FloatingPointError, ValueError) as exc:
        if data.n_obs == 0:
            raise
        gamma, sigma2, ok = None, None, False
        logger.warning("Tobit start failed: %s", exc)
    if not ok or not np.all(np.isfinite(gamma)) or not sigma2 > 0:
        notes.append("tobit-fallback")
        beta, *_ = np.linalg.lstsq(data.X, ybar, rcond=None)
        resid = ybar - data.X @ beta
        return Theta(np.zeros(ws.q), beta, max(resid @ resid / data.N, 1e-8), tuple(notes))
    p = data.p
    rho = gamma[p:]
    rho_f = shrink_to_feasible(ws, rho)
    if not np.array_equal(rho_f, rho):
        notes.append("rho-shrunk")
    return Theta(rho_f, gamma[:p], sigma2, tuple(notes))


# ---------------------------------------------------------------------------
# E-step


def _conditional(theta, data, ws, op=None):
    """Mean and precision of the censored block given the observed block."""
    op = _operator(ws, theta.rho, op)
    mu = op.solve(data.X @ theta.beta)
    P = sar_gram(ws, theta.rho) / theta.sigma2
    mean, P_mm = conditional_from_precision(mu, P, data.obs_idx, data.y[data.obs_idx])
    return mean, P_mm, mu


def e_step(theta0, data, ws, config=None, seed=None, count=None, init=None):
    """
    Truncated conditional moments of the censored flows at ``theta0``.

    Parameters
    ----------
    theta0 : Theta
    data : CensoredNetwork
    ws : WeightSet
    config : MCEMConfig, optional
    seed : int or SeedSequence
    count : int, optional
        Monte Carlo sample size; defaults to ``config.m0``.
    init : (n_chains, N_m) array, optional
        Warm-start chain states.

    Returns
    -------
    EStepMoments
    """
    config = config or MCEMConfig()
    mis = data.mis_idx
    if mis.size == 0:
        return EStepMoments(data.y.copy(), np.zeros((0, 0)), mis, np.zeros(0), 0, exact=True)
    mean, prec, _ = _conditional(theta0, data, ws)
    off = prec - np.diag(np.diag(prec))
    if config.exact_independent and not np.any(off):
        sd = 1.0 / np.sqrt(np.diag(prec))
        mu_c, var_c = truncnorm_upper_moments(mean, sd, data.c)
        y_star = data.filled(mu_c)
        return EStepMoments(y_star, np.diag(var_c), mis, np.zeros(mis.size), 0, exact=True)
    # a poor start can put the conditional mean far above c; the log-scale
    # sampler copes, so only the matrix itself is checked here
    spec = TruncSpec(mean, precision=prec, upper=data.c, check_bound=False)
    count = config.m0 if count is None else int(count)
    n_chains = min(count, config.n_chains)
    if init is not None and (init.shape != (n_chains, mis.size) or np.any(init >= data.c)):
        init = None
    draws, state = sample_truncated(
        spec, count, seed, burn_in=config.burn_in if init is None else config.warm_burn_in,
        thin=config.thin,
        n_chains=n_chains, init=init, return_state=True,
    )
    est = estimate_moments(draws)
    y_star = data.filled(est.mu_c)
    return EStepMoments(y_star, project_psd(est.sigma_c), mis, est.mc_se, est.draws_used, state=state)


# ---------------------------------------------------------------------------
# M-step


class ProfileObjective:
    """
    The profiled expected complete log-likelihood as a function of rho.

    With c = (1, rho) and V_0 = I, V_k = -W_k we have A(rho) = sum_a c_a V_a,
    so both the expected quadratic form S*(rho) and its hat-matrix part are
    quadratic forms in c. Their coefficient matrices are computed once per
    M-step; every evaluation then costs one LU factorization of A(rho).
    """

    def __init__(self, moments, data, ws):
        self.ws = ws
        self.N = data.N
        self.X = data.X
        y = moments.y_star
        q = ws.q
        U = np.empty((self.N, q + 1))
        U[:, 0] = y
        if q:
            U[:, 1:] = -ws.lags(y)
        self.Qx, self.Rx = np.linalg.qr(data.X)
        self.U = U
        E = U - self.Qx @ (self.Qx.T @ U)
        self.G = U.T @ U
        self.G_res = E.T @ E
        self.T = self._trace_terms(moments, ws)
        self.K = self.G_res + self.T

    @staticmethod
    def _trace_terms(moments, ws):
        q = ws.q
        T = np.zeros((q + 1, q + 1))
        mis = moments.mis_idx
        Sc = moments.sigma_c
        if mis.size == 0 or not np.any(Sc):
            return T
        # columns m of V_a: V_0 = I, V_k = -W_k
        cols = [None] + [-(w.tocsc()[:, mis]).tocsr() for w in ws.W]
        T[0, 0] = np.trace(Sc)
        prods = [None] * (q + 1)
        for a in range(1, q + 1):
            prods[a] = np.asarray(cols[a] @ Sc)  # (N, N_m)
            T[0, a] = T[a, 0] = np.trace(prods[a][mis])
        for a in range(1, q + 1):
            for b in range(a, q + 1):
                T[a, b] = T[b, a] = cols[b].multiply(prods[a]).sum()
        return T

    def _c(self, rho):
        return np.concatenate([[1.0], np.asarray(rho, dtype=float)])

    def denominator(self, rho):
        """S*(rho) - y*' A' H A y*, i.e. N times the profiled variance."""
        c = self._c(rho)
        return float(c @ self.K @ c)

    def s_star(self, rho):
        c = self._c(rho)
        return float(c @ (self.G + self.T) @ c)

    def value(self, rho, op=None):
        op = _operator(self.ws, rho, op)
        D = self.denominator(rho)
        if not D > 0:
            raise FloatingPointError("profiled residual sum of squares is not positive")
        return op.logdet - 0.5 * self.N * np.log(D)

    def gradient(self, rho, op=None):
        op = _operator(self.ws, rho, op)
        c = self._c(rho)
        D = float(c @ self.K @ c)
        return -op.trace_BW() - self.N * (self.K @ c)[1:] / D

    def value_and_gradient(self, rho):
        op = SarOperator(self.ws, rho)
        if not op.feasible:
            return None
        D = self.denominator(rho)
        if not D > 0:
            return None
        return self.value(rho, op), self.gradient(rho, op)

    def beta_hat(self, rho):
        c = self._c(rho)
        return sla.solve_triangular(self.Rx, self.Qx.T @ (self.U @ c))

    def sigma2_hat(self, rho):
        return self.denominator(rho) / self.N

    def theta_hat(self, rho, notes=()):
        return Theta(rho, self.beta_hat(rho), self.sigma2_hat(rho), notes)


def profile_constant(N):
    """Additive constant linking the profiled objective to the full Q function."""
    return -0.5 * N * (LOG2PI + 1.0 - np.log(N))


def profile_Q(rho, moments, data, ws):
    """Profiled objective (without its additive constant) at rho."""
    return ProfileObjective(moments, data, ws).value(rho)


def profile_grad(rho, moments, data, ws):
    """Gradient of :func:`profile_Q` with respect to rho."""
    return ProfileObjective(moments, data, ws).gradient(rho)


def m_step(moments, data, ws, rho_init, config=None, objective=None):
    """
    Maximize the profiled Q function over rho with BFGS, then plug in the
    closed-form beta and sigma2.

    If no feasible ascent step exists, ``rho_init`` is returned with the
    note ``"m-step-stalled"``.
    """
    config = config or MCEMConfig()
    obj = objective or ProfileObjective(moments, data, ws)
    if ws.q == 0:
        return obj.theta_hat(np.zeros(0))
    rho0 = np.asarray(rho_init, dtype=float)
    notes = ()
    if obj.value_and_gradient(rho0) is None:
        rho0 = shrink_to_feasible(ws, rho0)
        notes = ("rho-init-shrunk",)
    res = bfgs_maximize(obj.value_and_gradient, rho0, gtol=config.bfgs_gtol, max_iter=config.bfgs_max_iter)
    if not res.converged:
        notes = notes + ("m-step-stalled",)
        if res.n_iter <= 1 and np.array_equal(res.x, rho0):
            warnings.warn("M-step found no feasible ascent direction", ConvergenceWarning, stacklevel=2)
    return obj.theta_hat(res.x, notes)


# ---------------------------------------------------------------------------
# driver


def _seed_list(seed, n):
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return [int(s) for s in ss.generate_state(n, dtype=np.uint32)]


def fit(data, ws, config=None, seed=0, theta_init=None):
    """
    Fit the censored SAR model by Monte Carlo EM.

    Iterates E- and M-steps from the Tobit start until the squared change of
    the parameter vector is below ``config.tol``.

    Returns
    -------
    FitResult
        ``std_errors`` and ``vcov`` are NaN; see :func:`louis_se`.
    """
    config = config or MCEMConfig()
    data.check_estimable()
    names = Theta.names(ws.labels, data.labels)
    k = ws.q + data.p + 1
    nan_se, nan_vc = np.full(k, np.nan), np.full((k, k), np.nan)
    theta0 = theta_init if theta_init is not None else tobit_init(data, ws)
    notes = list(theta0.notes)
    seeds = _seed_list(seed, config.max_iter)
    trace = [{"iteration": 0, "theta": theta0.to_vector(), "Q": np.nan, "draws": 0, "delta": np.nan}]

    if data.n_mis == 0:
        moments = e_step(theta0, data, ws, config)
        obj = ProfileObjective(moments, data, ws)
        theta = m_step(moments, data, ws, theta0.rho, config, obj)
        trace.append({"iteration": 1, "theta": theta.to_vector(), "Q": obj.value(theta.rho),
                      "draws": 0, "delta": float(np.sum((theta.to_vector() - theta0.to_vector()) ** 2))})
        notes.extend(theta.notes)
        return FitResult(theta, nan_se, nan_vc, 1, trace, True, seeds[:1], names, moments, notes)

    state = None
    converged = False
    theta, moments = theta0, None
    for t in range(config.max_iter):
        count = config.draws(t)
        moments = e_step(theta0, data, ws, config, seed=seeds[t], count=count,
                         init=state if config.warm_start else None)
        state = moments.state
        obj = ProfileObjective(moments, data, ws)
        theta = m_step(moments, data, ws, theta0.rho, config, obj)
        if not theta.sigma2 > 0:
            raise AssertionError("profiled sigma2 is not positive")
        delta = float(np.sum((theta.to_vector() - theta0.to_vector()) ** 2))
        trace.append({"iteration": t + 1, "theta": theta.to_vector(), "Q": obj.value(theta.rho),
                      "draws": moments.draws_used, "delta": delta, "notes": theta.notes})
        logger.debug("EM iteration %d: delta=%.3g rho=%s", t + 1, delta, theta.rho)
        theta0 = theta
        if delta < config.tol:
            converged = True
            break
    if not converged:
        notes.append("max-iterations")
    n_iter = len(trace) - 1
    return FitResult(theta, nan_se, nan_vc, n_iter, trace, converged, seeds[:n_iter], names, moments, notes)


def louis_se(theta_hat, data, ws, w=1000, seed=0, config=None):
    """
    Observed-information standard errors by Louis's identity, with the
    conditional expectations replaced by means over ``w`` completed networks
    drawn from the truncated conditional distribution.

    Returns
    -------
    std_errors : (q + p + 1,) array
    vcov : (q + p + 1, q + p + 1) array
        NaN-filled (with a warning) if the information matrix is not positive definite.
    """
    config = config or MCEMConfig()
    if w < 2:
        raise ValueError("at least two draws are required")
    op = _operator(ws, theta_hat.rho)
    mis = data.mis_idx
    if mis.size == 0:
        Y = data.y[None, :]
    else:
        mean, prec, _ = _conditional(theta_hat, data, ws, op)
        spec = TruncSpec(mean, precision=prec, upper=data.c)
        draws = sample_truncated(spec, w, seed, burn_in=config.burn_in, thin=config.thin,
                                 n_chains=min(w, config.n_chains))
        Y = np.repeat(data.filled()[None, :], w, axis=0)
        Y[:, mis] = draws
    info = louis_information(theta_hat, Y, data, ws, op)
    k = info.shape[0]
    info = 0.5 * (info + info.T)
    eig = np.linalg.eigvalsh(info)
    if eig.min() <= 0:
        warnings.warn(
            f"Louis information matrix is not positive definite (eigenvalues {eig}); "
            "the fit may not have converged or too few draws were used",
            ConvergenceWarning, stacklevel=2,
        )
        return np.full(k, np.nan), np.full((k, k), np.nan)
    vcov = np.linalg.inv(info)
    vcov = 0.5 * (vcov + vcov.T)
    return np.sqrt(np.diag(vcov)), vcov


def louis_information(theta, Y, data, ws, op=None, chunk=200):
    """
    Empirical Louis matrix: mean negative complete Hessian minus the
    covariance (denominator w) of the complete scores over the rows of Y.
    """
    op = _operator(ws, theta.rho, op)
    Y = np.atleast_2d(Y)
    w = Y.shape[0]
    k = ws.q + data.p + 1
    H_sum = np.zeros((k, k))
    scores = np.empty((w, k))
    for start in range(0, w, chunk):
        S, H = _score_hessian_batch(theta, Y[start:start + chunk], data.X, ws, op)
        scores[start:start + chunk] = S
        H_sum += H.sum(axis=0)
    dev = scores - scores.mean(axis=0)
    return -H_sum / w - dev.T @ dev / w
