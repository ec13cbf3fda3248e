"""
Per-year estimation and forensic analysis of a dyadic panel.
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .forensic import aggregate, edge_probabilities, forensic_networks, node_metrics, youden_threshold
from .mcem import fit, louis_se
from .netlinalg import build_weights

__all__ = ["YearResult", "PipelineResult", "run_year", "run_pipeline"]

logger = logging.getLogger(__name__)


@dataclass
class YearResult:
    year: int
    seed: int
    ok: bool
    error: str = ""
    fit: object = None
    std_errors: np.ndarray = None
    vcov: np.ndarray = None
    bundle: object = None
    metrics: dict = None
    threshold: float = float("nan")
    n_observed: int = 0
    notes: list = field(default_factory=list)


@dataclass
class PipelineResult:
    years: list
    nodes: tuple
    per_year: dict
    aggregate: object = None

    @property
    def gaps(self):
        return [y for y in self.years if not self.per_year[y].ok]


def run_year(data, year, config, forensic=True):
    """
    Fit, Louis standard errors and forensic networks of one censored network.

    Every year is driven by the same master seed, so identical inputs give
    identical results regardless of the year label or worker.
    """
    seed = int(config.seed)
    ss_fit, ss_louis = np.random.SeedSequence(seed).spawn(2)
    out = YearResult(year, seed, ok=False, threshold=data.c, n_observed=data.n_obs)
    try:
        ws = build_weights(data.edge_index)
        res = fit(data, ws, config.mcem, seed=ss_fit)
        se, vcov = louis_se(res.theta, data, ws, w=config.louis_draws, seed=ss_louis, config=config.mcem)
        out.fit, out.std_errors, out.vcov = res, se, vcov
        if not np.all(np.isfinite(se)):
            out.notes.append("louis-not-positive-definite")
        if forensic:
            pi = edge_probabilities(res.theta, data, ws, mode=config.forensic_mode, moments=res.moments)
            J = youden_threshold(pi, data.mask, ties=config.youden_ties)
            out.bundle = forensic_networks(pi, data.mask, J)
            out.metrics = {
                "plus": node_metrics(out.bundle.omega_plus, data.edge_index),
                "minus": node_metrics(out.bundle.omega_minus, data.edge_index),
            }
        out.ok = True
    except Exception as exc:  # noqa: BLE001 - a failing year must not stop the others
        logger.warning("year %s failed: %s", year, exc)
        out.error = f"{type(exc).__name__}: {exc}"
    return out


def _year_job(args):
    return run_year(*args)


def run_pipeline(panel, config, forensic=True):
    """
    Run every year of ``panel`` and aggregate the forensic networks over
    the years that succeeded.
    """
    jobs = []
    per_year = {}
    for year in panel.years:
        try:
            data = panel.network(year)
        except ValueError as exc:
            per_year[year] = YearResult(year, int(config.seed), ok=False, error=f"ValueError: {exc}")
            continue
        jobs.append((data, year, config, forensic))
    if config.n_jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=config.n_jobs) as pool:
            results = list(pool.map(_year_job, jobs))
    else:
        results = [_year_job(j) for j in jobs]
    for r in results:
        per_year[r.year] = r
    agg = None
    good = [per_year[y].bundle for y in panel.years if per_year[y].ok and per_year[y].bundle is not None]
    if good:
        agg = aggregate(good)
    return PipelineResult(list(panel.years), tuple(panel.nodes), per_year, agg)
