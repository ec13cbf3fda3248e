"""Censored SAR network models fitted by Monte Carlo EM, with forensic edge screening."""

from .netlinalg import EdgeIndex, InfeasibleRhoError, SarOperator, WeightSet, apply_B, build_weights, logdet_A
from .mcem import (
    CensoredNetwork,
    EStepMoments,
    FitResult,
    MCEMConfig,
    Theta,
    complete_hessian,
    complete_loglik,
    complete_score,
    e_step,
    fit,
    louis_se,
    m_step,
    profile_grad,
    profile_Q,
    tobit_init,
)
from .forensic import (
    aggregate,
    edge_probabilities,
    forensic_networks,
    node_metrics,
    youden_threshold,
)

__version__ = "0.1.0"
