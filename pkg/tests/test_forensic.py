import numpy as np
import pytest
from conftest import simulate_network
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from censar.forensic import (
    aggregate,
    edge_probabilities,
    eigenvector_centrality,
    forensic_networks,
    node_metrics,
    youden_statistic,
    youden_threshold,
)
from censar.mcem import MCEMConfig, Theta, e_step
from censar.netlinalg import EdgeIndex, sar_matrix
from censar.tmvn import conditional_normal


def probabilities_by_covariance(theta, data, ws, z_fill):
    """Leave-one-out exceedance probabilities from the joint covariance."""
    A = sar_matrix(ws, theta.rho)
    B = np.linalg.inv(A)
    mu = B @ data.X @ theta.beta
    S = theta.sigma2 * B @ B.T
    out = np.empty(data.N)
    for k in range(data.N):
        rest = np.delete(np.arange(data.N), k)
        m, v = conditional_normal(mu, S, rest, z_fill[rest])
        out[k] = stats.norm.sf(data.c, m[0], np.sqrt(v[0, 0]))
    return out


@pytest.fixture
def fitted():
    data, ws, _ = simulate_network(5, [0.1, 0.2, 0.3], [1.0, 0.5], observed_share=0.5, seed=8)
    theta = Theta([0.08, 0.22, 0.27], [0.9, 0.6], 1.1)
    return data, ws, theta


class TestProbabilities:
    def test_untruncated_mode_matches_covariance_oracle(self, fitted):
        data, ws, theta = fitted
        A = sar_matrix(ws, theta.rho)
        B = np.linalg.inv(A)
        mu = B @ data.X @ theta.beta
        m_mis, _ = conditional_normal(mu, theta.sigma2 * B @ B.T, data.obs_idx, data.y[data.obs_idx])
        z = data.filled(m_mis)
        ref = probabilities_by_covariance(theta, data, ws, z)
        assert np.allclose(edge_probabilities(theta, data, ws), ref, atol=1e-10)

    def test_truncated_mode_uses_estep_means(self, fitted):
        data, ws, theta = fitted
        mom = e_step(theta, data, ws, MCEMConfig(), seed=3, count=300)
        ref = probabilities_by_covariance(theta, data, ws, mom.y_star)
        got = edge_probabilities(theta, data, ws, mode="truncated", moments=mom)
        assert np.allclose(got, ref, atol=1e-10)
        with pytest.raises(ValueError):
            edge_probabilities(theta, data, ws, mode="truncated")
        with pytest.raises(ValueError):
            edge_probabilities(theta, data, ws, mode="other")

    def test_probabilities_in_unit_interval(self, fitted):
        data, ws, theta = fitted
        pi = edge_probabilities(theta, data, ws)
        assert pi.shape == (data.N,) and np.all((pi >= 0) & (pi <= 1))


def exhaustive_youden(pi, gamma):
    vals = np.unique(pi)
    cuts = np.concatenate([[vals[0] - 1.0], (vals[:-1] + vals[1:]) / 2, [vals[-1] + 1.0]])
    best_cut, best = None, -np.inf
    for cut in cuts:
        j = youden_statistic(pi, gamma, cut)
        if j >= best:
            best_cut, best = cut, j
    return best_cut, best


class TestYouden:
    def test_perfect_separation(self):
        pi = np.array([0.1, 0.2, 0.8, 0.9])
        gamma = np.array([0, 0, 1, 1], bool)
        cut, j = youden_threshold(pi, gamma, return_statistic=True)
        assert cut == pytest.approx(0.5) and j == 1.0

    def test_statistic_at_chosen_cut_is_optimal(self):
        rng = np.random.default_rng(0)
        pi = rng.random(200)
        gamma = rng.random(200) < pi
        cut, j = youden_threshold(pi, gamma, return_statistic=True)
        ref_cut, ref_j = exhaustive_youden(pi, gamma)
        assert j == ref_j and cut == ref_cut
        assert youden_statistic(pi, gamma, cut) == j

    def test_ties_rule(self):
        # cuts between 0.2/0.4 and between 0.6/0.8 both give J = 0.5
        pi = np.array([0.2, 0.4, 0.6, 0.8])
        gamma = np.array([0, 1, 0, 1], bool)
        assert youden_threshold(pi, gamma) == pytest.approx(0.7)
        assert youden_threshold(pi, gamma, ties="smallest") < 0.7

    def test_tied_scores(self):
        pi = np.array([0.5, 0.5, 0.5, 0.9])
        gamma = np.array([0, 1, 0, 1], bool)
        cut = youden_threshold(pi, gamma)
        assert 0.5 < cut < 0.9

    def test_single_class_rejected(self):
        with pytest.raises(ValueError):
            youden_threshold(np.array([0.1, 0.2]), np.array([True, True]))


class TestNetworks:
    def test_omega_values(self):
        pi = np.array([0.9, 0.9, 0.1, 0.1])
        gamma = np.array([1, 0, 1, 0], bool)
        b = forensic_networks(pi, gamma, 0.5)
        assert b.omega.tolist() == [0, 1, -1, 0]
        assert b.omega_plus.tolist() == [0, 1, 0, 0]
        assert b.omega_minus.tolist() == [0, 0, 1, 0]
        with pytest.raises(ValueError):
            forensic_networks(pi, gamma[:3], 0.5)

    @given(st.lists(st.tuples(st.floats(0, 1), st.booleans()), min_size=2, max_size=40), st.floats(0, 1))
    def test_plus_minus_partition_disagreements(self, items, cut):
        pi = np.array([a for a, _ in items])
        gamma = np.array([b for _, b in items])
        b = forensic_networks(pi, gamma, cut)
        assert not np.any(b.omega_plus & b.omega_minus)
        assert np.array_equal(b.omega_plus + b.omega_minus, (b.pi_net != b.gamma_net).astype(np.int8))
        assert set(np.unique(b.omega)) <= {-1, 0, 1}

    def test_aggregate_counts(self):
        b1 = forensic_networks(np.array([0.9, 0.1, 0.9]), np.array([0, 1, 1], bool), 0.5)
        b2 = forensic_networks(np.array([0.9, 0.9, 0.1]), np.array([0, 1, 1], bool), 0.5)
        agg = aggregate([b1, b2])
        assert agg.omega_plus_sum.tolist() == [2, 0, 0]
        assert agg.omega_minus_sum.tolist() == [0, 1, 1]
        assert agg.n_periods == 2
        with pytest.raises(ValueError):
            aggregate([])


class TestNodeMetrics:
    def test_centrality_matches_eigendecomposition(self):
        rng = np.random.default_rng(1)
        for _ in range(5):
            S = (rng.random((8, 8)) < 0.5).astype(float)
            S = np.triu(S, 1)
            S = S + S.T
            S[0, 1:] = S[1:, 0] = 1  # connected
            w, V = np.linalg.eigh(S)
            ref = np.abs(V[:, -1])
            assert np.allclose(eigenvector_centrality(S), ref, atol=1e-8)

    def test_star_network(self):
        idx = EdgeIndex(4)
        M = np.zeros((4, 4))
        M[0, 1:] = 1
        m = node_metrics(idx.vectorize(M), idx)
        assert m.eigencentrality[0] == 1.0 and np.allclose(m.eigencentrality[1:], 0.0)
        assert m.outdegree.tolist() == [1, 0, 0, 0]
        assert m.indegree.tolist() == [0, 1, 1, 1]
        assert m.flags == []

    def test_empty_and_constant(self):
        idx = EdgeIndex(3)
        m = node_metrics(np.zeros(6), idx)
        assert m.flags == ["empty-network"] and not np.any(m.eigencentrality)
        m = node_metrics(np.ones(6), idx)
        assert "eigencentrality-constant" in m.flags and "outdegree-constant" in m.flags
        assert not np.any(m.outdegree)

    @given(st.lists(st.booleans(), min_size=20, max_size=20))
    def test_metrics_in_unit_interval(self, bits):
        idx = EdgeIndex(5)
        m = node_metrics(np.array(bits, dtype=np.int8), idx)
        for v in (m.eigencentrality, m.outdegree, m.indegree):
            assert np.all((v >= 0) & (v <= 1))
