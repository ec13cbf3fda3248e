"""
Edge-level exceedance probabilities from a fitted model and the derived
under-/over-reporting networks.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .mcem import _operator
from .netlinalg import sar_gram

__all__ = [
    "ForensicBundle",
    "AggregateForensic",
    "NodeMetrics",
    "edge_probabilities",
    "youden_threshold",
    "youden_statistic",
    "forensic_networks",
    "aggregate",
    "node_metrics",
    "eigenvector_centrality",
]


@dataclass
class ForensicBundle:
    """
    Probabilities, Youden threshold and binary networks of one period.

    ``omega = pi_net - gamma_net`` takes values in {-1, 0, 1};
    ``omega_plus`` marks predicted but unobserved edges (possible
    under-reporting) and ``omega_minus`` observed but unpredicted ones.
    """

    pi: np.ndarray
    youden_j: float
    pi_net: np.ndarray
    gamma_net: np.ndarray
    omega: np.ndarray
    omega_plus: np.ndarray
    omega_minus: np.ndarray


@dataclass
class AggregateForensic:
    omega_plus_sum: np.ndarray
    omega_minus_sum: np.ndarray
    n_periods: int


@dataclass
class NodeMetrics:
    eigencentrality: np.ndarray
    outdegree: np.ndarray
    indegree: np.ndarray
    flags: list = field(default_factory=list)


def edge_probabilities(theta_hat, data, ws, mode="untruncated", moments=None):
    """
    P(Z_ij > c | X, Z_-ij) for every slot under the fitted model.

    ``Z_-ij`` holds the observed values and, at censored slots, conditional
    means of the censored block given the observed block: untruncated
    Gaussian means by default, or the truncated E-step means
    (``mode="truncated"``, requires ``moments``).

    The leave-one-out conditionals come from the joint precision
    A' A / sigma2: the conditional variance of slot k is 1 / P_kk and its
    conditional mean ``z_k - (P (z - mu))_k / P_kk``.
    """
    op = _operator(ws, theta_hat.rho)
    mu = op.solve(data.X @ theta_hat.beta)
    P = sar_gram(ws, theta_hat.rho) / theta_hat.sigma2
    z = data.filled()
    mis = data.mis_idx
    if mis.size:
        if mode == "untruncated":
            obs = data.obs_idx
            P_mm = P[np.ix_(mis, mis)]
            rhs = P[np.ix_(mis, obs)] @ (data.y[obs] - mu[obs])
            z[mis] = mu[mis] - np.linalg.solve(P_mm, rhs)
        elif mode == "truncated":
            if moments is None:
                raise ValueError("truncated mode needs E-step moments")
            z[mis] = moments.y_star[mis]
        else:
            raise ValueError(f"unknown mode {mode!r}")
    pdiag = np.diag(P)
    if np.any(pdiag <= 0):
        raise np.linalg.LinAlgError("non-positive leave-one-out conditional variance")
    cond_mean = z - (P @ (z - mu)) / pdiag
    cond_sd = 1.0 / np.sqrt(pdiag)
    return special.ndtr((cond_mean - data.c) / cond_sd)


def youden_statistic(pi, gamma, cut):
    """Sensitivity + specificity - 1 of the rule ``pi > cut``."""
    pi = np.asarray(pi)
    gamma = np.asarray(gamma, dtype=bool)
    pred = pi > cut
    tp = np.count_nonzero(pred & gamma)
    tn = np.count_nonzero(~pred & ~gamma)
    return tp / np.count_nonzero(gamma) + tn / np.count_nonzero(~gamma) - 1.0


def youden_threshold(pi, gamma, return_statistic=False, ties="largest"):
    """
    Cut J maximizing sensitivity + specificity - 1 for the rule ``pi > J``.

    Candidate cuts are the midpoints between adjacent distinct scores plus one
    cut below and one above all scores. Ties go to the largest cut unless
    ``ties="smallest"``.
    """
    if ties not in ("largest", "smallest"):
        raise ValueError(f"unknown tie rule {ties!r}")
    pi = np.asarray(pi, dtype=float)
    gamma = np.asarray(gamma, dtype=bool)
    n_pos = np.count_nonzero(gamma)
    n_neg = gamma.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("labels must contain both classes")
    vals, inv = np.unique(pi, return_inverse=True)
    pos_at = np.bincount(inv, weights=gamma, minlength=vals.size)
    neg_at = np.bincount(inv, weights=~gamma, minlength=vals.size)
    # cut number k (0..K) predicts positive for vals[k:]
    tp = np.concatenate([np.cumsum(pos_at[::-1])[::-1], [0.0]])
    fp = np.concatenate([np.cumsum(neg_at[::-1])[::-1], [0.0]])
    tn = n_neg - fp
    stat = tp.astype(np.int64) / n_pos + tn.astype(np.int64) / n_neg - 1.0
    best = int(np.flatnonzero(stat == stat.max())[-1 if ties == "largest" else 0])
    if best == 0:
        cut = vals[0] - 0.5 * (1.0 if vals.size == 1 else vals[1] - vals[0])
    elif best == vals.size:
        cut = vals[-1] + 0.5 * (1.0 if vals.size == 1 else vals[-1] - vals[-2])
    else:
        cut = 0.5 * (vals[best - 1] + vals[best])
    if return_statistic:
        return cut, float(stat[best])
    return cut


def forensic_networks(pi, gamma, J):
    pi = np.asarray(pi, dtype=float)
    gamma = np.asarray(gamma, dtype=bool)
    if pi.shape != gamma.shape:
        raise ValueError("pi and gamma must have the same length")
    pi_net = (pi > J).astype(np.int8)
    gamma_net = gamma.astype(np.int8)
    omega = pi_net - gamma_net
    return ForensicBundle(
        pi=pi, youden_j=float(J), pi_net=pi_net, gamma_net=gamma_net, omega=omega,
        omega_plus=(omega == 1).astype(np.int8), omega_minus=(omega == -1).astype(np.int8),
    )


def aggregate(bundles):
    """Elementwise sums of the under-/over-reporting networks over periods."""
    bundles = list(bundles)
    if not bundles:
        raise ValueError("nothing to aggregate")
    plus = np.sum([b.omega_plus for b in bundles], axis=0, dtype=np.int64)
    minus = np.sum([b.omega_minus for b in bundles], axis=0, dtype=np.int64)
    return AggregateForensic(plus, minus, len(bundles))


def eigenvector_centrality(S, tol=1e-10, max_iter=10000):
    """
    Principal eigenvector of a symmetric nonnegative matrix by power iteration,
    scaled to unit Euclidean norm with nonnegative entries.

    Iterates with S + I, which has the same leading eigenvector but no
    oscillation on bipartite graphs.
    """
    S = np.asarray(S, dtype=float)
    n = S.shape[0]
    M = S + np.eye(n)
    x = np.full(n, 1.0 / np.sqrt(n))
    for _ in range(max_iter):
        x_new = M @ x
        x_new /= np.linalg.norm(x_new)
        if np.max(np.abs(x_new - x)) < tol:
            x = x_new
            break
        x = x_new
    return np.abs(x)


def _minmax(v, name, flags):
    lo, hi = v.min(), v.max()
    if hi == lo:
        flags.append(f"{name}-constant")
        return np.zeros_like(v, dtype=float)
    return (v - lo) / (hi - lo)


def node_metrics(network, edge_index):
    """
    Eigenvector centrality of the undirected version of a binary network and
    out-/in-degrees, each min-max scaled to [0, 1].
    """
    M = edge_index.devectorize(np.asarray(network, dtype=float), fill=0.0)
    n = edge_index.n
    flags = []
    if not np.any(M):
        flags.append("empty-network")
        z = np.zeros(n)
        return NodeMetrics(z, z.copy(), z.copy(), flags)
    S = ((M + M.T) > 0).astype(float)
    ev = eigenvector_centrality(S)
    return NodeMetrics(
        eigencentrality=_minmax(ev, "eigencentrality", flags),
        outdegree=_minmax(M.sum(axis=1), "outdegree", flags),
        indegree=_minmax(M.sum(axis=0), "indegree", flags),
        flags=flags,
    )
