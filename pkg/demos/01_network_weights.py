"""
Build the three directed-network weight matrices for a small network and
check that the SAR operator agrees with dense linear algebra.
"""

import numpy as np

from censar import SarOperator, build_weights, logdet_A

ws = build_weights(5, labels=list("ABCDE"))
print(ws)
for label, W in zip(ws.labels, ws.W):
    print(f"{label:>14s}: nnz={W.nnz}, row sums in [{W.sum(axis=1).min():.3f}, {W.sum(axis=1).max():.3f}]")

rho = np.array([0.1, 0.2, 0.3])
op = SarOperator(ws, rho)
A = np.eye(ws.N) - sum(r * W.toarray() for r, W in zip(rho, ws.W))
sign, ld = np.linalg.slogdet(A)
print(f"feasible={op.feasible}  log|A|={logdet_A(ws, rho):.12f}  dense={ld:.12f}")

v = np.arange(ws.N, dtype=float)
print("max |B v - solve(A, v)| =", np.abs(op.solve(v) - np.linalg.solve(A, v)).max())
