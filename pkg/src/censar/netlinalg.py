"""
Vectorization of directed networks, endogenous weight matrices and the
SAR operators A(rho) = I - sum_k rho_k W_k and B(rho) = A(rho)^{-1}.
"""

import warnings

import numpy as np
import scipy.linalg as sla
from scipy import sparse as sp

__all__ = [
    "EdgeIndex",
    "WeightSet",
    "SarOperator",
    "InfeasibleRhoError",
    "build_weights",
    "sar_matrix",
    "sar_matrix_sparse",
    "sar_gram",
    "logdet_A",
    "apply_B",
]


class InfeasibleRhoError(ValueError):
    """Raised when A(rho) is singular or has a non-positive determinant."""


class EdgeIndex:
    """
    Row-wise vectorization of an n x n matrix with the diagonal removed.

    Slot k enumerates the ordered pairs (i, j), i != j, in row-major order,
    so ``vectorize(M)[k] == M[senders[k], receivers[k]]``.

    Parameters
    ----------
    n : int
        Number of nodes.
    labels : sequence of str, optional
        Node labels, defaults to ``"0" .. "n-1"``.
    """

    def __init__(self, n, labels=None):
        n = int(n)
        if n < 2:
            raise ValueError(f"need at least 2 nodes, got {n}")
        self.n = n
        self.N = n * (n - 1)
        if labels is None:
            labels = [str(i) for i in range(n)]
        if len(labels) != n:
            raise ValueError("labels must have length n")
        self.labels = tuple(labels)
        senders, receivers = np.nonzero(~np.eye(n, dtype=bool))
        slots = np.full((n, n), -1, dtype=np.int64)
        slots[senders, receivers] = np.arange(self.N)
        for arr in (senders, receivers, slots):
            arr.flags.writeable = False
        self.senders = senders
        self.receivers = receivers
        self.slots = slots

    def __repr__(self):
        return f"EdgeIndex(n={self.n}, N={self.N})"

    def __eq__(self, other):
        return isinstance(other, EdgeIndex) and other.n == self.n and other.labels == self.labels

    def __hash__(self):
        return hash((self.n, self.labels))

    def slot(self, i, j):
        if i == j:
            raise KeyError("diagonal pairs are not vectorized")
        return int(self.slots[i, j])

    def pair(self, k):
        return int(self.senders[k]), int(self.receivers[k])

    def vectorize(self, M):
        M = np.asarray(M)
        if M.shape[:2] != (self.n, self.n):
            raise ValueError(f"expected an {self.n}x{self.n} matrix, got {M.shape}")
        return M[self.senders, self.receivers]

    def devectorize(self, v, fill=0.0):
        v = np.asarray(v)
        if v.shape[0] != self.N:
            raise ValueError(f"expected a vector of length {self.N}, got {v.shape[0]}")
        M = np.full((self.n, self.n) + v.shape[1:], fill, dtype=np.result_type(v, type(fill)))
        M[self.senders, self.receivers] = v
        return M

    def permutation(self, perm):
        """
        Slot permutation induced by relabeling nodes.

        If node ``a`` becomes node ``perm[a]``, then for a vectorized network
        ``v`` the relabeled network is ``v[result]``.
        """
        perm = np.asarray(perm)
        inv = np.empty_like(perm)
        inv[perm] = np.arange(self.n)
        return self.slots[inv[self.senders], inv[self.receivers]]


class WeightSet:
    """
    The q row-normalized N x N endogenous-effect matrices.

    Parameters
    ----------
    W : sequence of scipy.sparse matrices
    labels : sequence of str
    edge_index : EdgeIndex
    """

    def __init__(self, W, labels, edge_index):
        W = tuple(sp.csr_matrix(w) for w in W)
        if len(W) != len(labels):
            raise ValueError("one label per weight matrix required")
        for w in W:
            if w.shape != (edge_index.N, edge_index.N):
                raise ValueError("weight matrix shape does not match the edge index")
            w.sort_indices()
        self.W = W
        self.labels = tuple(labels)
        self.edge_index = edge_index
        self._WT = tuple(w.T.tocsr() for w in W)

    @property
    def q(self):
        return len(self.W)

    @property
    def N(self):
        return self.edge_index.N

    def __repr__(self):
        return f"WeightSet(q={self.q}, N={self.N}, labels={self.labels})"

    def lags(self, y):
        """Stack ``W_k y`` column-wise, shape (N, q) (or (N, q, m) for matrix input)."""
        y = np.asarray(y, dtype=float)
        if self.q == 0:
            return np.zeros((y.shape[0], 0) + y.shape[1:])
        return np.stack([w @ y for w in self.W], axis=1)

    def transpose(self, k):
        return self._WT[k]

    def subset(self, keep):
        """Weight set restricted to the effects with positions in ``keep``."""
        keep = list(keep)
        return WeightSet([self.W[k] for k in keep], [self.labels[k] for k in keep], self.edge_index)


def build_weights(n, labels=None):
    """
    Reciprocity, exporter and importer weight matrices for an n-node network.

    ``(W1 y)_ij = y_ji``, ``(W2 y)_ij`` is the mean of ``y_iu`` over
    ``u != i, j`` and ``(W3 y)_ij`` the mean of ``y_uj`` over ``u != i, j``.

    Parameters
    ----------
    n : int or EdgeIndex
    labels : sequence of str, optional
        Node labels, only used when ``n`` is an int.

    Returns
    -------
    WeightSet
    """
    idx = n if isinstance(n, EdgeIndex) else EdgeIndex(int(n), labels)
    n = idx.n
    if n < 3:
        raise ValueError(f"exporter/importer effects need n >= 3 nodes, got n={n}")
    N = idx.N
    snd, rcv, slots = idx.senders, idx.receivers, idx.slots
    rows = np.arange(N)

    w_recip = sp.csr_matrix((np.ones(N), (rows, slots[rcv, snd])), shape=(N, N))

    # for each slot (i, j) the n-2 third nodes u != i, j
    others = np.array([[u for u in range(n) if u != i and u != j] for i, j in zip(snd, rcv)])
    r = np.repeat(rows, n - 2)
    val = np.full(N * (n - 2), 1.0 / (n - 2))
    w_exp = sp.csr_matrix((val, (r, slots[np.repeat(snd, n - 2), others.ravel()])), shape=(N, N))
    w_imp = sp.csr_matrix((val, (r, slots[others.ravel(), np.repeat(rcv, n - 2)])), shape=(N, N))
    return WeightSet([w_recip, w_exp, w_imp], ["reciprocity", "exporter", "importer"], idx)


def sar_matrix(ws, rho):
    """Dense A(rho) = I - sum_k rho_k W_k."""
    rho = np.asarray(rho, dtype=float)
    if rho.shape != (ws.q,):
        raise ValueError(f"rho must have length {ws.q}")
    A = np.eye(ws.N)
    for r, w in zip(rho, ws.W):
        if r != 0.0:
            A -= r * w.toarray()
    return A


def sar_matrix_sparse(ws, rho):
    """A(rho) as a CSR matrix."""
    rho = np.asarray(rho, dtype=float)
    if rho.shape != (ws.q,):
        raise ValueError(f"rho must have length {ws.q}")
    A = sp.identity(ws.N, format="csr")
    for r, w in zip(rho, ws.W):
        if r != 0.0:
            A = A - r * w
    return A.tocsr()


def sar_gram(ws, rho):
    """Dense A(rho)' A(rho), formed from the sparse factors."""
    A = sar_matrix_sparse(ws, rho)
    G = (A.T @ A).toarray()
    return 0.5 * (G + G.T)


class SarOperator:
    """
    Pivoted LU factorization of A(rho) with sign-tracked log-determinant.

    ``feasible`` is False when the determinant is not strictly positive or
    a pivot underflows; the solve methods then raise InfeasibleRhoError.
    """

    pivot_tol = 1e-13

    def __init__(self, ws, rho):
        self.ws = ws
        self.rho = np.array(rho, dtype=float)
        if not np.all(np.isfinite(self.rho)):
            raise ValueError("rho must be finite")
        self.A = sar_matrix(ws, self.rho)
        self._B = None
        if not np.any(self.rho):
            self.lu, self.piv = None, None
            self.logdet, self.sign, self.feasible = 0.0, 1.0, True
            return
        with warnings.catch_warnings():
            # singular A is reported through ``feasible``
            warnings.simplefilter("ignore", sla.LinAlgWarning)
            self.lu, self.piv = sla.lu_factor(self.A, check_finite=False)
        diag = np.diag(self.lu)
        absd = np.abs(diag)
        if absd.min() <= self.pivot_tol * max(absd.max(), 1.0):
            self.logdet, self.sign, self.feasible = -np.inf, 0.0, False
            return
        n_swaps = np.count_nonzero(self.piv != np.arange(len(self.piv)))
        sign = (-1.0) ** n_swaps * np.prod(np.sign(diag))
        self.sign = float(sign)
        self.logdet = float(np.sum(np.log(absd)))
        self.feasible = sign > 0

    def _check(self):
        if not self.feasible:
            raise InfeasibleRhoError(f"A(rho) is not invertible with positive determinant at rho={self.rho}")

    def solve(self, v):
        """A(rho)^{-1} v."""
        self._check()
        if self.lu is None:
            return np.array(v, dtype=float)
        return sla.lu_solve((self.lu, self.piv), v, check_finite=False)

    def solve_T(self, v):
        """A(rho)^{-T} v."""
        self._check()
        if self.lu is None:
            return np.array(v, dtype=float)
        return sla.lu_solve((self.lu, self.piv), v, trans=1, check_finite=False)

    @property
    def B(self):
        """Dense B(rho); materialized on first use and cached."""
        if self._B is None:
            self._B = self.solve(np.eye(self.ws.N))
        return self._B

    def trace_BW(self):
        """Vector of tr(B W_k), k = 1..q."""
        B = self.B
        return np.array([w.multiply(B.T).sum() for w in self.ws.W])

    def BW(self):
        """Dense products B W_k, one per effect."""
        B = self.B
        return [np.asarray((self.ws.transpose(k) @ B.T).T) for k in range(self.ws.q)]


def logdet_A(ws, rho):
    """
    log|A(rho)| from a pivoted LU factorization.

    Raises
    ------
    InfeasibleRhoError
        If the determinant is not strictly positive.
    """
    op = SarOperator(ws, rho)
    op._check()
    return op.logdet


def apply_B(ws, rho, v):
    """Solve A(rho) x = v for x (i.e. B(rho) v) without forming B."""
    return SarOperator(ws, rho).solve(v)
