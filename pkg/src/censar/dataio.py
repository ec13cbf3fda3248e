"""
Dyadic panel ingestion, run configuration and report files.
"""

import csv
import json
import math
import platform
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
from scipy import special

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .mcem import CensoredNetwork, MCEMConfig
from .netlinalg import EdgeIndex

__all__ = [
    "DataValidationError",
    "DyadicPanel",
    "RunConfig",
    "load_panel",
    "write_panel",
    "load_config",
    "check_outdir",
    "emit_reports",
    "fmt_float",
]

FLOW_COLUMNS = ("year", "exporter", "importer", "value")
KEY_COLUMNS = ("year", "exporter", "importer")


class DataValidationError(ValueError):
    """Input data or configuration that cannot be used as given."""


def fmt_float(v):
    """Shortest text for a float that reads back exactly (17 significant digits)."""
    v = float(v)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return format(v, ".17g")


@dataclass
class DyadicPanel:
    """
    Yearly directed flows between a fixed node set, with covariates.

    Attributes
    ----------
    years : list of int
    nodes : tuple of str
        Sorted node labels; node order of every vectorized array.
    covariates : tuple of str
    flows : dict year -> (N,) array
        Raw flows in edge-index order, 0 where no flow was reported.
    X : dict year -> (N, p) array
    """

    years: list
    nodes: tuple
    covariates: tuple
    flows: dict
    X: dict

    @property
    def n(self):
        return len(self.nodes)

    @property
    def edge_index(self):
        return EdgeIndex(self.n, self.nodes)

    def threshold(self, year):
        """log of the smallest positive flow of the year (NaN if none)."""
        v = self.flows[year]
        pos = v[v > 0]
        return float(np.log(pos.min())) if pos.size else float("nan")

    def network(self, year):
        """The year's censored network on the log scale."""
        v = self.flows[year]
        mask = v > 0
        y = np.full(v.shape, np.nan)
        y[mask] = np.log(v[mask])
        return CensoredNetwork(self.edge_index, y, mask, self.threshold(year), self.X[year], self.covariates)


def _read_csv(path, required):
    path = Path(path)
    if not path.is_file():
        raise DataValidationError(f"{path}: file not found")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataValidationError(f"{path}: empty file") from None
        if tuple(header[: len(required)]) != tuple(required):
            raise DataValidationError(
                f"{path}: header must start with {','.join(required)}, got {','.join(header)}"
            )
        if len(set(header)) != len(header):
            raise DataValidationError(f"{path}: duplicate column names in header")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataValidationError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            rows.append((lineno, [c.strip() for c in row]))
    return header, rows


def _number(text, path, lineno, what):
    try:
        v = float(text)
    except ValueError:
        raise DataValidationError(f"{path}:{lineno}: {what} {text!r} is not a number") from None
    if not math.isfinite(v):
        raise DataValidationError(f"{path}:{lineno}: {what} must be finite")
    return v


def _year(text, path, lineno):
    try:
        return int(text)
    except ValueError:
        raise DataValidationError(f"{path}:{lineno}: year {text!r} is not an integer") from None


def _key(row, path, lineno):
    year = _year(row[0], path, lineno)
    i, j = row[1], row[2]
    if not i or not j:
        raise DataValidationError(f"{path}:{lineno}: empty node label")
    if i == j:
        raise DataValidationError(f"{path}:{lineno}: self-loop {i} -> {j}")
    return year, i, j


def load_panel(flows_path, covariates_path):
    """
    Read and validate a dyadic panel.

    The covariate file defines the years and the node set and must contain
    every ordered pair of distinct nodes in every year. Flows absent from
    the flow file are zero.

    Raises
    ------
    DataValidationError
        With file name and line number for malformed, negative, duplicate or
        unknown entries and for missing covariate rows.
    """
    cpath, fpath = Path(covariates_path), Path(flows_path)
    header, crows = _read_csv(cpath, KEY_COLUMNS)
    covariates = tuple(header[3:])
    if not covariates:
        raise DataValidationError(f"{cpath}: no covariate columns")
    cov = {}
    for lineno, row in crows:
        key = _key(row, cpath, lineno)
        if key in cov:
            raise DataValidationError(f"{cpath}:{lineno}: duplicate row for {key}")
        cov[key] = [_number(v, cpath, lineno, f"covariate {name}") for v, name in zip(row[3:], covariates)]
    if not cov:
        raise DataValidationError(f"{cpath}: no data rows")
    nodes = tuple(sorted({k[1] for k in cov} | {k[2] for k in cov}))
    years = sorted({k[0] for k in cov})
    if len(nodes) < 3:
        raise DataValidationError(f"{cpath}: need at least 3 nodes, got {len(nodes)}")
    idx = EdgeIndex(len(nodes), nodes)
    pos = {lab: a for a, lab in enumerate(nodes)}
    X = {}
    for year in years:
        M = np.full((idx.N, len(covariates)), np.nan)
        for k in range(idx.N):
            i, j = idx.pair(k)
            vals = cov.get((year, nodes[i], nodes[j]))
            if vals is None:
                raise DataValidationError(
                    f"{cpath}: missing covariate row for year {year}, {nodes[i]} -> {nodes[j]}"
                )
            M[k] = vals
        X[year] = M

    _, frows = _read_csv(fpath, FLOW_COLUMNS)
    flows = {year: np.zeros(idx.N) for year in years}
    seen = set()
    for lineno, row in frows:
        year, i, j = _key(row, fpath, lineno)
        if year not in flows:
            raise DataValidationError(f"{fpath}:{lineno}: year {year} has no covariates")
        for lab in (i, j):
            if lab not in pos:
                raise DataValidationError(f"{fpath}:{lineno}: unknown node label {lab!r}")
        if (year, i, j) in seen:
            raise DataValidationError(f"{fpath}:{lineno}: duplicate flow for {(year, i, j)}")
        seen.add((year, i, j))
        v = _number(row[3], fpath, lineno, "flow")
        if v < 0:
            raise DataValidationError(f"{fpath}:{lineno}: negative flow {v}")
        flows[year][idx.slot(pos[i], pos[j])] = v
    return DyadicPanel(years, nodes, covariates, flows, X)


def write_panel(path_flows, path_covariates, years, nodes, covariates, flows, X):
    """
    Write a panel in the format read by :func:`load_panel`. Zero flows are omitted.

    ``flows`` and ``X`` map years to arrays in edge-index order of ``nodes``.
    """
    idx = EdgeIndex(len(nodes), list(nodes))
    with open(path_flows, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FLOW_COLUMNS)
        for year in years:
            for k in range(idx.N):
                if flows[year][k] > 0:
                    i, j = idx.pair(k)
                    w.writerow([year, nodes[i], nodes[j], fmt_float(flows[year][k])])
    with open(path_covariates, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*KEY_COLUMNS, *covariates])
        for year in years:
            for k in range(idx.N):
                i, j = idx.pair(k)
                w.writerow([year, nodes[i], nodes[j], *(fmt_float(v) for v in X[year][k])])


@dataclass
class RunConfig:
    """
    Settings of a pipeline run.

    TOML layout::

        seed = 1
        [mcem]      # any MCEMConfig field
        tol = 0.001
        [louis]
        draws = 1000
        [forensic]
        mode = "untruncated"   # or "truncated"
        youden_ties = "largest"  # or "smallest"
        [run]
        out = "results"
        n_jobs = 1
    """

    seed: int = 0
    mcem: MCEMConfig = field(default_factory=MCEMConfig)
    louis_draws: int = 1000
    forensic_mode: str = "untruncated"
    youden_ties: str = "largest"
    out: str = "results"
    n_jobs: int = 1

    def __post_init__(self):
        if self.louis_draws < 2 or self.n_jobs < 1:
            raise DataValidationError("louis draws must be >= 2 and n_jobs >= 1")
        if self.seed < 0:
            raise DataValidationError("seed must be non-negative")
        if self.forensic_mode not in ("untruncated", "truncated"):
            raise DataValidationError(f"unknown forensic mode {self.forensic_mode!r}")
        if self.youden_ties not in ("largest", "smallest"):
            raise DataValidationError(f"unknown Youden tie rule {self.youden_ties!r}")

    def to_dict(self):
        d = asdict(self)
        d["mcem"] = asdict(self.mcem)
        return d


def _mcem_from(table):
    known = {f.name for f in fields(MCEMConfig)}
    unknown = set(table) - known
    if unknown:
        raise DataValidationError(f"unknown [mcem] keys: {sorted(unknown)}")
    try:
        return MCEMConfig(**table)
    except (TypeError, ValueError) as exc:
        raise DataValidationError(f"invalid [mcem] settings: {exc}") from exc


def load_config(path=None, **overrides):
    """
    RunConfig from a TOML file (or defaults) with keyword overrides.

    Overrides named like MCEMConfig fields (e.g. ``tol``) go to the MC-EM
    settings; ``None`` values are ignored.
    """
    data = {}
    if path is not None:
        path = Path(path)
        try:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        except FileNotFoundError:
            raise DataValidationError(f"{path}: config file not found") from None
        except tomllib.TOMLDecodeError as exc:
            raise DataValidationError(f"{path}: {exc}") from exc
    allowed = {"seed", "mcem", "louis", "forensic", "run", "dgp"}
    unknown = set(data) - allowed
    if unknown:
        raise DataValidationError(f"unknown config sections/keys: {sorted(unknown)}")
    mcem = dict(data.get("mcem", {}))
    kw = {
        "seed": data.get("seed", 0),
        "louis_draws": data.get("louis", {}).get("draws", 1000),
        "forensic_mode": data.get("forensic", {}).get("mode", "untruncated"),
        "youden_ties": data.get("forensic", {}).get("youden_ties", "largest"),
        "out": data.get("run", {}).get("out", "results"),
        "n_jobs": data.get("run", {}).get("n_jobs", 1),
    }
    mcem_names = {f.name for f in fields(MCEMConfig)}
    for key, val in overrides.items():
        if val is None:
            continue
        if key in mcem_names:
            mcem[key] = val
        elif key in kw:
            kw[key] = val
        else:
            raise DataValidationError(f"unknown override {key!r}")
    return RunConfig(mcem=_mcem_from(mcem), **kw)


def check_outdir(outdir):
    """Create ``outdir`` if needed and make sure files can be written there."""
    outdir = Path(outdir)
    try:
        outdir.mkdir(parents=True, exist_ok=True)
        probe = outdir / ".censar-write-test"
        probe.write_bytes(b"")
        probe.unlink()
    except OSError as exc:
        raise PermissionError(f"output directory {outdir} is not writable: {exc}") from exc
    return outdir


def _writer(path):
    fh = open(path, "w", newline="", encoding="utf-8")
    return fh, csv.writer(fh, lineterminator="\n")


def versions():
    import scipy

    from . import __version__

    return {"censar": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def emit_reports(results, outdir, config=None, extra=None):
    """
    Write the run's CSV reports and ``manifest.json`` into ``outdir``.

    ``results`` is a :class:`~censar.pipeline.PipelineResult` or ``None``
    for an empty run (header-only CSV files).
    """
    outdir = check_outdir(outdir)
    years = results.years if results is not None else []
    nodes = results.nodes if results is not None else ()

    fh, w = _writer(outdir / "coefficients.csv")
    with fh:
        w.writerow(["year", "parameter", "estimate", "std_error", "z", "p"])
        for year in years:
            yr = results.per_year[year]
            if not yr.ok:
                continue
            for name, est, se in zip(yr.fit.names, yr.fit.theta.to_vector(), yr.std_errors):
                z = est / se if se > 0 else float("nan")
                p = float(2 * special.ndtr(-abs(z))) if math.isfinite(z) else float("nan")
                w.writerow([year, name, fmt_float(est), fmt_float(se), fmt_float(z), fmt_float(p)])

    idx = EdgeIndex(len(nodes), list(nodes)) if len(nodes) >= 2 else None
    fh, w = _writer(outdir / "forensic_edges.csv")
    with fh:
        w.writerow(["year", "exporter", "importer", "pi", "observed", "omega"])
        for year in years:
            yr = results.per_year[year]
            if not yr.ok or yr.bundle is None:
                continue
            b = yr.bundle
            for k in range(idx.N):
                i, j = idx.pair(k)
                w.writerow([year, nodes[i], nodes[j], fmt_float(b.pi[k]), int(b.gamma_net[k]), int(b.omega[k])])

    fh, w = _writer(outdir / "aggregate_forensic.csv")
    with fh:
        w.writerow(["exporter", "importer", "n_years_underreported", "n_years_overreported"])
        agg = results.aggregate if results is not None else None
        if agg is not None:
            for k in range(idx.N):
                i, j = idx.pair(k)
                w.writerow([nodes[i], nodes[j], int(agg.omega_plus_sum[k]), int(agg.omega_minus_sum[k])])

    fh, w = _writer(outdir / "node_metrics.csv")
    with fh:
        w.writerow(["year", "node", "network", "eigencentrality", "outdegree", "indegree"])
        for year in years:
            yr = results.per_year[year]
            if not yr.ok or yr.metrics is None:
                continue
            for net in ("plus", "minus"):
                m = yr.metrics[net]
                for a, lab in enumerate(nodes):
                    w.writerow([year, lab, net, fmt_float(m.eigencentrality[a]),
                                fmt_float(m.outdegree[a]), fmt_float(m.indegree[a])])

    echo = None
    if config is not None:
        # where the files go is not part of the computation
        echo = config.to_dict()
        echo.pop("out", None)
    manifest = {
        "config": echo,
        "versions": versions(),
        "years": {},
        "gaps": [],
    }
    for year in years:
        yr = results.per_year[year]
        entry = {"ok": yr.ok, "seed": yr.seed}
        if yr.ok:
            entry.update({
                "converged": bool(yr.fit.converged),
                "em_iterations": int(yr.fit.em_iterations),
                "fit_seeds": [int(s) for s in yr.fit.seeds],
                "notes": list(yr.fit.notes) + list(yr.notes),
                "youden_j": fmt_float(yr.bundle.youden_j) if yr.bundle is not None else None,
                "threshold": fmt_float(yr.threshold),
                "n_observed": int(yr.n_observed),
            })
        else:
            entry["error"] = yr.error
            manifest["gaps"].append(year)
        manifest["years"][str(year)] = entry
    if extra:
        manifest.update(extra)
    with open(outdir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return outdir
