"""
A short replication study on small networks; the full-size designs are run
by the acceptance suite or by ``censar simulate``.
"""

import numpy as np

from censar import MCEMConfig
from censar.simlab import DgpConfig, run_study

report = run_study(DgpConfig(n=8, replications=5, seed=11), "dgp1", MCEMConfig(tol=1e-2))
for key, (q25, q50, q75) in report.summary(probs=(0.25, 0.5, 0.75)).items():
    print(f"{key:>26s}  median {q50:+.3f}  IQR [{q25:+.3f}, {q75:+.3f}]")
pairs = report.imputation_pairs()
print("pooled imputation regression (slope, intercept):", np.round(np.polyfit(pairs[:, 0], pairs[:, 1], 1), 3))
