"""
Simulation designs for the censored SAR network model.

``dgp1`` censors the lowest share of a latent network draw. ``dgp2`` in
addition hides a random subset of above-threshold edges ("planted"
under-reporting) that the forensic step should recover.
"""

import csv
import logging
import math
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .forensic import edge_probabilities, forensic_networks, youden_threshold
from .mcem import CensoredNetwork, MCEMConfig, Theta, fit
from .netlinalg import SarOperator, build_weights

__all__ = [
    "DgpConfig",
    "Truth",
    "SimReport",
    "gen_dgp1",
    "gen_dgp2",
    "evaluate",
    "run_replication",
    "run_study",
    "write_study",
    "export_panel",
]

logger = logging.getLogger(__name__)


@dataclass
class DgpConfig:
    """
    Simulation design.

    For ``dgp1`` ``censor_frac`` is the share of censored edges. For
    ``dgp2`` it is the share censored legitimately (the lowest values),
    and ``underreport_frac`` of all edges are hidden on top of that,
    drawn from the edges above the censoring quantile.
    """

    n: int = 20
    p: int = 5
    rho_true: tuple = (0.1, 0.2, 0.3)
    beta_true: tuple = (1.0, 2.0, 3.0, 4.0, 5.0)
    sigma2_true: float = 1.0
    censor_frac: float = 0.75
    underreport_frac: float = 0.10
    replications: int = 100
    seed: int = 0

    def __post_init__(self):
        self.rho_true = tuple(float(r) for r in self.rho_true)
        self.beta_true = tuple(float(b) for b in self.beta_true)
        if len(self.beta_true) != self.p:
            raise ValueError(f"beta_true must have p={self.p} entries")
        if len(self.rho_true) != 3:
            raise ValueError("rho_true needs one value per weight matrix (3)")
        if not 0 <= self.censor_frac < 1 or not 0 <= self.underreport_frac < 1:
            raise ValueError("censoring fractions must lie in [0, 1)")
        if self.censor_frac + self.underreport_frac >= 1:
            raise ValueError("censored plus under-reported share must stay below 1")
        if self.n < 3 or self.replications < 1 or not self.sigma2_true > 0:
            raise ValueError("need n >= 3, replications >= 1 and sigma2_true > 0")

    @property
    def q(self):
        return len(self.rho_true)

    @property
    def N(self):
        return self.n * (self.n - 1)

    @classmethod
    def dgp2(cls, **kw):
        """Defaults of the under-reporting design: 65% censored plus 10% hidden."""
        kw.setdefault("censor_frac", 0.65)
        return cls(**kw)


@dataclass
class Truth:
    """What the simulation knows and the analyst does not."""

    z: np.ndarray
    censored: np.ndarray
    underreported: np.ndarray
    q_thresh: float
    theta: Theta


@dataclass
class SimReport:
    design: str
    config: DgpConfig
    rows: list
    imputation: list = field(default_factory=list)

    def successes(self):
        return [r for r in self.rows if r["status"] == "ok"]

    def column(self, key):
        return np.array([r[key] for r in self.successes()], dtype=float)

    def summary(self, probs=(0.0, 0.25, 0.5, 0.75, 1.0)):
        """Quantiles of the estimation errors and classification rates."""
        ok = self.successes()
        out = {}
        if not ok:
            return out
        names = ok[0]["names"]
        truth = ok[0]["truth"]
        est = np.array([r["estimate"] for r in ok])
        for k, name in enumerate(names):
            out[f"{name}-error"] = np.quantile(est[:, k] - truth[k], probs)
        for key in ("FPR", "TPR", "FDR"):
            v = self.column(key)
            v = v[np.isfinite(v)]
            if v.size:
                out[key] = np.quantile(v, probs)
        return out

    def imputation_pairs(self):
        """Pooled (true latent, imputed mean) pairs over successful replications."""
        if not self.imputation:
            return np.zeros((0, 2))
        return np.vstack(self.imputation)


def _counts(N, censor_frac):
    # guard against fractions like 0.75 * 380 = 285.00000000000006
    n_obs = math.ceil((1.0 - censor_frac) * N - 1e-9)
    return n_obs, N - n_obs


def _latent(cfg, ss):
    ws = build_weights(cfg.n)
    op = SarOperator(ws, cfg.rho_true)
    if not op.feasible:
        raise ValueError(f"rho_true={cfg.rho_true} is infeasible")
    rng = np.random.default_rng(ss)
    X = rng.normal(1.0, 1.0, size=(cfg.N, cfg.p))
    eps = rng.normal(0.0, math.sqrt(cfg.sigma2_true), size=cfg.N)
    z = op.solve(X @ np.asarray(cfg.beta_true) + eps)
    return ws, X, z


def _network(ws, X, z, censored):
    mask = ~censored
    c = float(z[mask].min()) if mask.any() else float(z.max())
    y = np.where(mask, z, np.nan)
    return CensoredNetwork(ws.edge_index, y, mask, c, X)


def _seeds(seed):
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return ss.spawn(2)


def gen_dgp1(cfg, seed):
    """
    Latent network from the SAR model, censored below its ``censor_frac``
    quantile. The threshold handed to the model is the smallest observed value.

    Returns
    -------
    CensoredNetwork, Truth
    """
    ss_latent, _ = _seeds(seed)
    ws, X, z = _latent(cfg, ss_latent)
    n_obs, n_cens = _counts(cfg.N, cfg.censor_frac)
    order = np.argsort(z, kind="stable")
    censored = np.zeros(cfg.N, dtype=bool)
    censored[order[:n_cens]] = True
    data = _network(ws, X, z, censored)
    q = float(z[order[n_cens - 1]]) if n_cens else -np.inf
    truth = Truth(z, censored, np.zeros(cfg.N, dtype=bool), q,
                  Theta(cfg.rho_true, cfg.beta_true, cfg.sigma2_true))
    return data, truth


def gen_dgp2(cfg, seed):
    """
    DGP1 censoring at ``censor_frac`` plus ``underreport_frac * N`` edges
    drawn uniformly without replacement among those above the threshold
    and hidden as well.

    With the same seed and ``underreport_frac = 0`` the output equals
    :func:`gen_dgp1`.
    """
    ss_latent, ss_plant = _seeds(seed)
    ws, X, z = _latent(cfg, ss_latent)
    n_above, n_cens = _counts(cfg.N, cfg.censor_frac)
    n_ur = int(round(cfg.underreport_frac * cfg.N))
    if n_ur >= n_above:
        raise ValueError("not enough above-threshold edges to plant under-reporting")
    order = np.argsort(z, kind="stable")
    censored = np.zeros(cfg.N, dtype=bool)
    censored[order[:n_cens]] = True
    underreported = np.zeros(cfg.N, dtype=bool)
    if n_ur:
        rng = np.random.default_rng(ss_plant)
        underreported[rng.choice(order[n_cens:], size=n_ur, replace=False)] = True
    q = float(z[order[n_cens - 1]]) if n_cens else -np.inf
    assert np.all(z[underreported] > q)
    data = _network(ws, X, z, censored | underreported)
    truth = Truth(z, censored | underreported, underreported, q,
                  Theta(cfg.rho_true, cfg.beta_true, cfg.sigma2_true))
    return data, truth


def evaluate(bundle, truth):
    """
    Classification rates of the under-reporting network on the censored slots.

    A censored slot counts as flagged when ``omega_plus`` is set. FPR and
    TPR use the not-under-reported and under-reported censored slots as
    denominators; FDR = FP / (TP + FP). TPR and FDR are NaN when nothing was
    under-reported; FDR is 0 with ``fdr_undefined`` set when nothing is flagged.
    """
    cens = np.asarray(truth.censored, dtype=bool)
    ur = np.asarray(truth.underreported, dtype=bool)
    flagged = np.asarray(bundle.omega_plus, dtype=bool) & cens
    neg = cens & ~ur
    tp = int(np.count_nonzero(flagged & ur))
    fp = int(np.count_nonzero(flagged & neg))
    n_ur, n_neg = int(ur.sum()), int(neg.sum())
    out = {"TP": tp, "FP": fp, "FN": n_ur - tp, "TN": n_neg - fp, "n_ur": n_ur, "n_neg": n_neg,
           "fdr_undefined": False}
    out["FPR"] = fp / n_neg if n_neg else float("nan")
    if n_ur:
        out["TPR"] = tp / n_ur
        if tp + fp:
            out["FDR"] = fp / (tp + fp)
        else:
            out["FDR"] = 0.0
            out["fdr_undefined"] = True
    else:
        out["TPR"] = float("nan")
        out["FDR"] = float("nan")
    return out


def _forensic(fit_result, data, ws):
    pi = edge_probabilities(fit_result.theta, data, ws)
    J = youden_threshold(pi, data.mask)
    return forensic_networks(pi, data.mask, J)


def run_replication(cfg, design, rep_seed, fit_config=None):
    """One simulated data set, fit and forensic evaluation; returns a report row."""
    ss_data, ss_fit = np.random.SeedSequence(rep_seed).spawn(2)
    gen = gen_dgp1 if design == "dgp1" else gen_dgp2
    data, truth = gen(cfg, ss_data)
    ws = build_weights(data.edge_index)
    res = fit(data, ws, fit_config, seed=ss_fit)
    bundle = _forensic(res, data, ws)
    rates = evaluate(bundle, truth)
    mis = data.mis_idx
    legit = truth.censored[mis] & ~truth.underreported[mis]
    pairs = np.column_stack([truth.z[mis][legit], res.moments.y_star[mis][legit]])
    row = {
        "status": "ok",
        "error": "",
        "names": res.names,
        "estimate": res.theta.to_vector(),
        "truth": truth.theta.to_vector(),
        "em_iterations": res.em_iterations,
        "converged": res.converged,
        "youden_j": bundle.youden_j,
        **rates,
    }
    return row, pairs


def _run_one(args):
    cfg, design, rep, rep_seed, fit_config = args
    try:
        row, pairs = run_replication(cfg, design, rep_seed, fit_config)
    except Exception as exc:  # noqa: BLE001 - failures are recorded, not fatal
        logger.warning("replication %d failed: %s", rep, exc)
        row = {"status": "failed", "error": f"{type(exc).__name__}: {exc}",
               "traceback": traceback.format_exc()}
        pairs = None
    row["replication"] = rep
    row["seed"] = rep_seed
    return row, pairs


def run_study(cfg, design="dgp1", fit_config=None, n_jobs=1, min_success=0.8):
    """
    Replicate a design ``cfg.replications`` times.

    Replication r uses the r-th integer of ``SeedSequence(cfg.seed)``, so
    results do not depend on ``n_jobs``.

    Raises
    ------
    RuntimeError
        If fewer than ``min_success`` of the replications succeed.
    """
    if design not in ("dgp1", "dgp2"):
        raise ValueError(f"unknown design {design!r}")
    fit_config = fit_config or MCEMConfig()
    seeds = np.random.SeedSequence(cfg.seed).generate_state(cfg.replications, dtype=np.uint32)
    jobs = [(cfg, design, r, int(s), fit_config) for r, s in enumerate(seeds)]
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [_run_one(j) for j in jobs]
    rows = [r for r, _ in results]
    pairs = [p for _, p in results if p is not None]
    report = SimReport(design, cfg, rows, pairs)
    n_ok = len(report.successes())
    if n_ok < min_success * cfg.replications:
        raise RuntimeError(f"only {n_ok} of {cfg.replications} replications succeeded")
    return report


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return v


def write_study(report, outdir):
    """
    Tidy CSV files of a study: ``estimates.csv`` (one row per replication
    and parameter), ``rates.csv`` and ``imputation.csv``.
    """
    from pathlib import Path

    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    with open(outdir / "estimates.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["design", "replication", "seed", "status", "parameter", "estimate", "truth"])
        for r in report.rows:
            if r["status"] != "ok":
                w.writerow([report.design, r["replication"], r["seed"], r["status"], "", "", ""])
                continue
            for name, est, tru in zip(r["names"], r["estimate"], r["truth"]):
                w.writerow([report.design, r["replication"], r["seed"], "ok", name, _fmt(est), _fmt(tru)])
    keys = ["FPR", "TPR", "FDR", "TP", "FP", "FN", "TN", "fdr_undefined", "em_iterations",
            "converged", "youden_j"]
    with open(outdir / "rates.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["design", "replication", "seed", "status", *keys, "error"])
        for r in report.rows:
            vals = [_fmt(r.get(k, "")) for k in keys]
            w.writerow([report.design, r["replication"], r["seed"], r["status"], *vals, r.get("error", "")])
    with open(outdir / "imputation.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["latent", "imputed"])
        for a, b in report.imputation_pairs():
            w.writerow([_fmt(a), _fmt(b)])
    return outdir


def export_panel(data, flows_path, covariates_path, year=2000):
    """
    Write a simulated network as a one-year panel (flows on the original
    scale, zero where censored) readable by :func:`censar.dataio.load_panel`.
    """
    from .dataio import write_panel

    n = data.edge_index.n
    width = len(str(n - 1))
    nodes = [f"n{a:0{width}d}" for a in range(n)]
    flows = np.where(data.mask, np.exp(np.where(data.mask, data.y, 0.0)), 0.0)
    write_panel(flows_path, covariates_path, [year], nodes, data.labels, {year: flows}, {year: data.X})
    return nodes
