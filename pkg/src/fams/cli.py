"""Command line entry point: ``fams {estimate,simulate,factors}``.

Configuration is an INI file. Sections: ``[data]``, ``[model]``, ``[chain]``,
``[prior]``, ``[factors]`` and ``[study]``. States are numbered from 1 in the
file and in every output.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import os
import sys

import numpy as np

from .core import PriorConfig
from .factor_sv import (
    export_centered_factor_means,
    factor_count_criterion,
    run_factor_sv,
    top_loadings_report,
)
from .io import (
    IngestError,
    IngestionSpec,
    export_plot_data,
    ingest_with_report,
    read_intervals,
    write_table,
)
from .msar import IdentificationRule, companion_eigenvalues
from .pipeline import DivergenceError, FamsConfig, merge_stores, run_chains, summarize
from .simulation import SimStudyConfig, run_study


class ConfigError(ValueError):
    def __init__(self, problems):
        super().__init__("invalid configuration:\n  " + "\n  ".join(problems))
        self.problems = problems


REQUIRED = {
    "estimate": [("data", "csv"), ("data", "target"), ("model", "H"), ("model", "p"),
                 ("model", "r"), ("chain", "burn"), ("chain", "keep")],
    "factors": [("data", "csv"), ("data", "target"), ("model", "r"),
                ("chain", "factor_burn"), ("chain", "factor_keep")],
    "simulate": [("study", "N"), ("study", "burn"), ("study", "keep")],
}

_BOOL = {"1": True, "true": True, "yes": True, "on": True,
         "0": False, "false": False, "no": False, "off": False}


class _Reader:
    """Typed access to the parsed file that collects every problem."""

    def __init__(self, cp: configparser.ConfigParser):
        self.cp = cp
        self.problems: list[str] = []

    def get(self, section, key, kind=str, default=None):
        if not self.cp.has_option(section, key):
            return default
        raw = self.cp.get(section, key).strip()
        try:
            if kind is bool:
                return _BOOL[raw.lower()]
            return kind(raw)
        except (KeyError, ValueError):
            self.problems.append(f"[{section}] {key} = {raw!r} is not a valid {kind.__name__}")
            return default

    def floats(self, section, key, default=()):
        raw = self.get(section, key)
        if raw is None:
            return tuple(default)
        try:
            return tuple(float(x) for x in raw.replace(",", " ").split())
        except ValueError:
            self.problems.append(f"[{section}] {key} must be a list of numbers")
            return tuple(default)

    def ints(self, section, key, default=()):
        raw = self.get(section, key)
        if raw is None:
            return tuple(default)
        out = []
        try:
            for part in raw.replace(",", " ").split():
                if "-" in part:
                    a, b = part.split("-")
                    out.extend(range(int(a), int(b) + 1))
                else:
                    out.append(int(part))
        except ValueError:
            self.problems.append(f"[{section}] {key} must list integers or ranges like 1-25")
        return tuple(out)


def load_config(path: str, command: str) -> configparser.ConfigParser:
    cp = configparser.ConfigParser()
    cp.optionxform = str
    if not os.path.exists(path):
        raise ConfigError([f"config file not found: {path}"])
    try:
        cp.read(path)
    except configparser.Error as exc:
        raise ConfigError([f"cannot parse {path}: {exc}"]) from exc
    missing = [f"missing key [{s}] {k}" for s, k in REQUIRED[command] if not cp.has_option(s, k)]
    if missing:
        raise ConfigError(missing)
    return cp


def prior_from(rd: _Reader) -> PriorConfig:
    kw = {}
    fields = {f.name for f in dataclasses.fields(PriorConfig)}
    if rd.cp.has_section("prior"):
        for key in rd.cp.options("prior"):
            if key not in fields:
                rd.problems.append(f"[prior] unknown key {key}")
                continue
            v = rd.get("prior", key, float)
            if v is not None:
                kw[key] = v
    try:
        return PriorConfig(**kw)
    except ValueError as exc:
        rd.problems.append(str(exc))
        return PriorConfig()


def ingestion_from(rd: _Reader) -> IngestionSpec | None:
    codes = {}
    raw = rd.get("data", "codes")
    if raw:
        for item in raw.replace("\n", ",").split(","):
            if not item.strip():
                continue
            try:
                name, code = item.rsplit(":", 1)
                codes[name.strip()] = int(code)
            except ValueError:
                rd.problems.append(f"[data] codes entry {item.strip()!r} must look like name:code")
    try:
        return IngestionSpec(
            path=rd.get("data", "csv"), target=rd.get("data", "target"), codes=codes,
            target_code=rd.get("data", "target_code", int, 5),
            na_tolerance=rd.get("data", "na_tolerance", float, 0.1),
            date_column=rd.get("data", "date_column"),
            default_code=rd.get("data", "default_code", int, 1),
            standardize=rd.get("data", "standardize", bool, True),
            include_target=rd.get("data", "include_target", bool, False),
            target_scale=rd.get("data", "target_scale", float, 1.0))
    except ValueError as exc:
        rd.problems.append(str(exc))
        return None


def fams_config_from(rd: _Reader, seed) -> FamsConfig | None:
    H = rd.get("model", "H", int, 2)
    direction = rd.get("model", "identify_direction", str, "descending").lower()
    if direction not in ("descending", "ascending"):
        rd.problems.append("[model] identify_direction must be descending or ascending")
    block = rd.get("model", "identify_block", str, "mu")
    if block not in ("mu", "sigma2", "phi1"):
        rd.problems.append("[model] identify_block must be mu, sigma2 or phi1")
    init = rd.floats("model", "init") or None
    try:
        return FamsConfig(
            H=H, p=rd.get("model", "p", int, 1),
            switch_mean=rd.get("model", "switch_mean", bool, True),
            switch_ar=rd.get("model", "switch_ar", bool, False),
            switch_var=rd.get("model", "switch_var", bool, False),
            h0=rd.get("model", "h0", int, 1) - 1, d=rd.get("model", "d", int, 0),
            r=rd.get("model", "r", int, 0),
            burn=rd.get("chain", "burn", int, 1000), keep=rd.get("chain", "keep", int, 1000),
            thin=rd.get("chain", "thin", int, 1),
            factor_burn=rd.get("chain", "factor_burn", int, 1000),
            factor_keep=rd.get("chain", "factor_keep", int, 1000),
            shrinkage=rd.get("model", "shrinkage", bool, False),
            prior=prior_from(rd),
            rule=IdentificationRule(block, direction == "descending"),
            init=init, seed=seed)
    except ValueError as exc:
        rd.problems.append(str(exc))
        return None


def study_config_from(rd: _Reader, seed) -> SimStudyConfig | None:
    kw = {}
    ints = ("r", "m", "T", "N", "burn", "keep", "factor_burn", "factor_keep", "subsample")
    floats = ("factor_ar", "loading_zero_prob", "loading_scale", "phi")
    for k in ints:
        v = rd.get("study", k, int)
        if v is not None:
            kw[k] = v
    for k in floats:
        v = rd.get("study", k, float)
        if v is not None:
            kw[k] = v
    grid = rd.floats("study", "omega_grid")
    if grid:
        kw["omega_grid"] = grid
    variants = rd.get("study", "variants")
    if variants:
        kw["variants"] = tuple(v.strip() for v in variants.replace(",", " ").split())
    if seed is not None:
        kw["seed"] = seed
    elif rd.get("study", "seed", int) is not None:
        kw["seed"] = rd.get("study", "seed", int)
    kw["prior"] = prior_from(rd)
    try:
        return SimStudyConfig(**kw)
    except (ValueError, TypeError) as exc:
        rd.problems.append(str(exc))
        return None


# --- commands -------------------------------------------------------------------

def _log(msg):
    print(msg, file=sys.stderr)


def _factor_outputs(stage1, panel, out, top_k):
    files = {}
    fp = export_centered_factor_means(stage1.factors)
    r = fp.r
    files["factors"] = write_table(
        os.path.join(out, "factors.csv"), ["date"] + [f"factor_{j + 1}" for j in range(r)],
        [[d] + [float(v) for v in fp.values[:, t]] for t, d in enumerate(panel.time_index)])
    share = stage1.share_mean
    files["explained_variance_series"] = write_table(
        os.path.join(out, "explained_variance_series.csv"), ["series", "share"],
        [(n, float(s)) for n, s in zip(panel.names, share.mean(axis=1))])
    files["explained_variance_time"] = write_table(
        os.path.join(out, "explained_variance_time.csv"), ["date", "share"],
        [(d, float(s)) for d, s in zip(panel.time_index, share.mean(axis=0))])
    L = stage1.loadings.mean(axis=0)
    k = min(top_k, panel.m)
    report = top_loadings_report(L, panel.names, k)
    files["top_loadings"] = write_table(
        os.path.join(out, "top_loadings.csv"), ["rank"] + [f"factor_{j + 1}" for j in range(r)],
        [[i + 1] + [report[j][i] for j in range(r)] for i in range(k)])
    _log(f"explained variance share (mean over series and time): {float(share.mean()):.4f}")
    return files


def cmd_estimate(rd: _Reader, args) -> int:
    spec = ingestion_from(rd)
    cfg = fams_config_from(rd, args.seed if args.seed is not None else rd.get("chain", "seed", int))
    hpd = rd.get("chain", "hpd_level", float, 0.9)
    labels = rd.get("model", "state_labels")
    labels = [s.strip() for s in labels.split(",")] if labels else None
    order = rd.ints("model", "report_order") or None
    rec_path = rd.get("data", "recessions")
    top_k = rd.get("factors", "top_k", int, 10)
    chains = args.chains or rd.get("chain", "chains", int, 1)
    if labels is not None and cfg is not None and len(labels) != cfg.H:
        rd.problems.append("[model] state_labels needs one label per state")
    if order is not None and cfg is not None and sorted(order) != list(range(1, cfg.H + 1)):
        rd.problems.append("[model] report_order must list every state 1..H once")
    if rd.problems:
        raise ConfigError(rd.problems)
    panel, report = ingest_with_report(spec)
    if cfg.r > panel.m:
        raise ConfigError([f"[model] r={cfg.r} exceeds the {panel.m} series left after cleaning"])
    _log(f"panel: {panel.m} series x {panel.T} periods; dropped for missing values: "
         f"{report.dropped_na or 'none'}; dropped for gaps: {report.dropped_gaps or 'none'}")
    stores = run_chains(panel, cfg, chains, seed=cfg.seed, workers=args.workers)
    store = merge_stores(stores)
    out = args.output_dir
    os.makedirs(out, exist_ok=True)
    table = summarize(store, hpd, labels, None if order is None else [h - 1 for h in order])
    table.to_csv(os.path.join(out, "summary.csv"), float_format="%.17g")
    with open(os.path.join(out, "summary_meta.txt"), "w") as fh:
        fh.write(f"two_step={str(table.attrs['two_step']).lower()}\n")
        fh.write(f"hpd_level={hpd:.17g}\nchains={chains}\ndraws={store.K}\n")
        fh.write(f"series={panel.m}\nperiods={panel.T}\n")
        fh.write(f"dropped_na={';'.join(report.dropped_na)}\n")
        fh.write(f"dropped_gaps={';'.join(report.dropped_gaps)}\n")
    recessions = read_intervals(rec_path) if rec_path else None
    export_plot_data(store, panel, out, recessions, hpd)
    if cfg.p:
        med = np.median(store.phi[:, 0, :], axis=0)
        ev = companion_eigenvalues(med)
        flag = "stationary" if np.all(np.abs(ev) < 1) else "NON-STATIONARY"
        _log(f"companion eigenvalue moduli at median phi: {np.round(np.abs(ev), 4)} ({flag})")
    if stores[0].factor_stage is not None:
        _factor_outputs(stores[0].factor_stage, panel, out, top_k)
    print(table.to_string(float_format=lambda v: f"{v:.4f}"))
    return 0


def cmd_factors(rd: _Reader, args) -> int:
    spec = ingestion_from(rd)
    r = rd.get("model", "r", int, 1)
    prior = prior_from(rd)
    burn = rd.get("chain", "factor_burn", int, 1000)
    keep = rd.get("chain", "factor_keep", int, 1000)
    cands = rd.ints("factors", "candidates", default=range(1, r + 1))
    top_k = rd.get("factors", "top_k", int, 10)
    seed = args.seed if args.seed is not None else rd.get("chain", "seed", int)
    if rd.problems:
        raise ConfigError(rd.problems)
    panel, _ = ingest_with_report(spec)
    out = args.output_dir
    os.makedirs(out, exist_ok=True)
    stage1 = run_factor_sv(panel.series, r, prior, burn, keep, np.random.default_rng(seed))
    _factor_outputs(stage1, panel, out, top_k)
    cands = [c for c in cands if c <= panel.m]
    crit = factor_count_criterion(panel.series, cands)
    write_table(os.path.join(out, "factor_count.csv"), ["r", "bic"],
                [(k, float(v)) for k, v in crit.items()])
    best = min(crit, key=crit.get)
    print(f"factor count criterion minimized at r={best}")
    return 0


def cmd_simulate(rd: _Reader, args) -> int:
    cfg = study_config_from(rd, args.seed)
    workers = args.workers if args.workers > 1 else rd.get("study", "workers", int, 1)
    if rd.problems:
        raise ConfigError(rd.problems)
    report = run_study(cfg, workers=workers,
                       progress=lambda n, _: _log(f"dataset {n + 1}/{cfg.N} done"))
    os.makedirs(args.output_dir, exist_ok=True)
    text = report.to_text()
    with open(os.path.join(args.output_dir, "study_report.tsv"), "w") as fh:
        fh.write(text)
    report.per_dataset.to_csv(os.path.join(args.output_dir, "study_datasets.csv"),
                              index=False, float_format="%.17g")
    print(text, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fams", description="Factor-augmented Markov switching AR estimation")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, help_ in (("estimate", "ingest a panel and run the two-step estimation"),
                        ("simulate", "run the synthetic-data comparison study"),
                        ("factors", "run only the factor stage and the factor-count criterion")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=True, help="INI configuration file")
        p.add_argument("--seed", type=int, default=None, help="master seed (overrides the file)")
        p.add_argument("--output-dir", default=".", help="directory for output files")
        p.add_argument("--chains", type=int, default=None, help="number of chains (estimate)")
        p.add_argument("--workers", type=int, default=1, help="parallel worker processes")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        rd = _Reader(load_config(args.config, args.command))
        return {"estimate": cmd_estimate, "simulate": cmd_simulate,
                "factors": cmd_factors}[args.command](rd, args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (IngestError, DivergenceError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
