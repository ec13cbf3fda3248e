"""
Draw from a bivariate normal truncated from above and compare the Gibbs
moments with plain rejection sampling.
"""

import numpy as np

from censar.tmvn import TruncSpec, estimate_moments, sample_truncated

mean = np.array([0.5, -0.2])
cov = np.array([[1.0, 0.6], [0.6, 2.0]])
spec = TruncSpec(mean, cov=cov, upper=0.0)

draws = sample_truncated(spec, 20000, seed=1)
est = estimate_moments(draws)

rng = np.random.default_rng(2)
x = rng.multivariate_normal(mean, cov, size=400000)
ref = x[np.all(x < 0.0, axis=1)]

print("Gibbs mean     ", np.round(est.mu_c, 4), "+/-", np.round(est.mc_se, 4))
print("rejection mean ", np.round(ref.mean(axis=0), 4))
print("Gibbs cov\n", np.round(est.sigma_c, 4))
print("rejection cov\n", np.round(np.cov(ref.T, bias=True), 4))
