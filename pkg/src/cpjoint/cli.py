"""Command-line interface: ``cpjoint {simulate,fit,replicate,summarize}``.

Settings come from built-in defaults, then an INI file given by
``--config``, then command-line flags; later sources win. Sections:

``[scenario]``
    ``n``, ``target_censoring``, ``visit_interval``, ``visit_jitter``,
    ``replications``, ``seed``, ``censor_rate`` (skips calibration) and
    the generating parameters ``gamma``, ``eta``, ``alpha``, ``beta``,
    ``sigma_y``, ``mu_omega``, ``mu_b``, ``sd_r`` (comma lists for vectors).
``[priors]``
    Prior hyperparameters; GND priors as ``location, scale, shape``.
``[sampler]``
    Sampler settings (``chains``, ``warmup``, ``samples``, ``seed``, ...).
``[data]``
    ``longitudinal``, ``survival`` and ``draws`` file paths.
``[summarize]``
    ``t_star`` (comma list), ``x`` (covariate row for mean curves),
    ``grid_points``, ``max_draws``, ``w`` (survival covariates used when
    no survival file is given).
``[output]``
    ``dir``.

Every failure prints one line ``error[<code>]: <message>`` on stderr and
exits with 2 (configuration), 3 (data) or 4 (sampler).
"""
from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from .data_io import (
    DataError,
    read_draws,
    read_subjects,
    write_draws,
    write_subjects,
    write_table,
    write_truth,
)
from .marginal import marginal_mean_y, population_mean_changepoint
from .model.records import DEFAULT_TRUTH, ModelParams, PriorConfig, RE_NAMES
from .ptmvn import PtmvnParams
from .sampler.core import SamplerConfig, SamplerError
from .sampler.diagnostics import effective_sample_size, split_rhat
from .sim.generate import SimScenario, generate_dataset, tune_censoring_rate
from .sim.study import ReplicationError, replication_study

__all__ = ["main", "ConfigError", "RunConfig", "load_config"]

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_SAMPLER = 0, 2, 3, 4
TRUTH_KEYS = ("gamma", "eta", "alpha", "beta", "sigma_y", "mu_omega", "mu_b", "sd_r")
SCENARIO_KEYS = ("n", "target_censoring", "visit_interval", "visit_jitter",
                 "replications", "seed", "censor_rate")
SUMMARIZE_DEFAULTS = {"t_star": (0.5, 1.0, 2.0), "x": (0.0,), "grid_points": 21,
                      "max_draws": 400, "w": None}

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


def _parse_value(raw: str, like, key: str):
    raw = raw.strip()
    try:
        if isinstance(like, bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError
        if isinstance(like, int):
            return int(raw)
        if isinstance(like, float):
            return float(raw)
        if isinstance(like, (tuple, list, np.ndarray)) or like is None:
            return tuple(float(v) for v in raw.split(","))
        return raw
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r}") from None


@dataclasses.dataclass
class RunConfig:
    """Resolved settings for one command."""

    scenario: SimScenario
    priors: PriorConfig
    sampler: SamplerConfig
    censor_rate: float | None = None
    data: dict = dataclasses.field(default_factory=dict)
    summarize: dict = dataclasses.field(default_factory=lambda: dict(SUMMARIZE_DEFAULTS))
    out: Path = Path(".")


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Merge an INI file and ``{section: {key: value}}`` overrides."""
    cp = configparser.ConfigParser(interpolation=None)
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                cp.read_file(fh)
        except OSError as exc:
            raise ConfigError(f"{path}: cannot read ({exc.strerror})") from None
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc.message.splitlines()[0]}") from None
    known = {"scenario", "priors", "sampler", "data", "summarize", "output"}
    for sec in cp.sections():
        if sec not in known:
            raise ConfigError(f"unknown section [{sec}]")
    raw = {sec: dict(cp[sec]) for sec in cp.sections()}
    for sec, vals in (overrides or {}).items():
        raw.setdefault(sec, {}).update({k: v for k, v in vals.items() if v is not None})

    def get(sec):
        return raw.get(sec, {})

    # scenario and generating parameters
    scn_defaults = SimScenario()
    scn_kw, truth_kw, censor_rate = {}, {}, None
    for key, val in get("scenario").items():
        if key in TRUTH_KEYS:
            like = getattr(DEFAULT_TRUTH, key)
            v = _parse_value(str(val), like if np.ndim(like) == 0 else (), f"scenario.{key}")
            truth_kw[key] = v
        elif key == "censor_rate":
            censor_rate = _parse_value(str(val), 0.0, "scenario.censor_rate")
        elif key in SCENARIO_KEYS:
            scn_kw[key] = _parse_value(str(val), getattr(scn_defaults, key), f"scenario.{key}")
        else:
            raise ConfigError(f"scenario.{key}: unknown field")
    try:
        truth = DEFAULT_TRUTH.copy(**truth_kw)
        scn = SimScenario(truth=truth, **scn_kw).validate()
    except ValueError as exc:
        raise ConfigError(f"scenario: {exc}") from None
    if censor_rate is not None and not censor_rate > 0:
        raise ConfigError("scenario.censor_rate: must be positive")

    priors = _dataclass_from(PriorConfig, get("priors"), "priors")
    sampler = _dataclass_from(SamplerConfig, get("sampler"), "sampler")
    try:
        sampler.validate()
    except ValueError as exc:
        raise ConfigError(f"sampler: {exc}") from None

    data = {}
    for key, val in get("data").items():
        if key not in ("longitudinal", "survival", "draws"):
            raise ConfigError(f"data.{key}: unknown field")
        data[key] = Path(val)
    summ = dict(SUMMARIZE_DEFAULTS)
    for key, val in get("summarize").items():
        if key not in SUMMARIZE_DEFAULTS:
            raise ConfigError(f"summarize.{key}: unknown field")
        summ[key] = _parse_value(str(val), SUMMARIZE_DEFAULTS[key], f"summarize.{key}")
    if not summ["t_star"] or min(summ["t_star"]) <= 0:
        raise ConfigError("summarize.t_star: values must be positive")
    if summ["grid_points"] < 2 or summ["max_draws"] < 1:
        raise ConfigError("summarize: grid_points must be >= 2 and max_draws >= 1")
    out = Path(get("output").get("dir", "."))
    for key in get("output"):
        if key != "dir":
            raise ConfigError(f"output.{key}: unknown field")
    return RunConfig(scn, priors, sampler, censor_rate, data, summ, out)


def _dataclass_from(cls, values: dict, section: str):
    default = cls()
    names = {f.name for f in dataclasses.fields(cls) if f.init}
    kw = {}
    for key, val in values.items():
        if key not in names:
            raise ConfigError(f"{section}.{key}: unknown field")
        kw[key] = _parse_value(str(val), getattr(default, key), f"{section}.{key}")
    try:
        return dataclasses.replace(default, **kw)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{section}: {exc}") from None


def _outdir(cfg: RunConfig) -> Path:
    try:
        cfg.out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"output directory {cfg.out}: {exc.strerror}") from None
    return cfg.out


def _need(cfg: RunConfig, key: str) -> Path:
    path = cfg.data.get(key)
    if path is None:
        raise ConfigError(f"data.{key}: required (or pass --{key})")
    if not path.exists():
        raise DataError(f"{path}: file not found")
    return path


# -- commands ----------------------------------------------------------------

def cmd_simulate(cfg: RunConfig) -> dict:
    """Generate one dataset; returns the paths written."""
    scn = cfg.scenario
    out = _outdir(cfg)
    rate = cfg.censor_rate
    if rate is None:
        rate = tune_censoring_rate(scn, scn.target_censoring,
                                   np.random.default_rng(np.random.SeedSequence([scn.seed, 1])))
    data = generate_dataset(scn, rate, np.random.default_rng(scn.seed))
    write_subjects(data.subjects, out)
    write_truth(out / "truth.json", scn.truth, seed=scn.seed, n=scn.n, censor_rate=rate,
                target_censoring=scn.target_censoring,
                observed_censoring=float(np.mean([not s.event for s in data.subjects])))
    return {k: out / f for k, f in (("longitudinal", "longitudinal.csv"),
                                     ("survival", "survival.csv"), ("truth", "truth.json"))}


def _summary_rows(names, values):
    rows = []
    for k, name in enumerate(names):
        x = values[:, :, k]
        flat = x.reshape(-1)
        q = np.quantile(flat, [0.025, 0.5, 0.975])
        try:
            rh = split_rhat(x)
        except ValueError:
            rh = math.nan
        try:
            es = effective_sample_size(x)
        except ValueError:
            es = math.nan
        rows.append([name, flat.mean(), flat.std(ddof=1) if flat.size > 1 else math.nan,
                     q[0], q[1], q[2], rh, es])
    return rows


SUMMARY_HEADER = ["parameter", "mean", "sd", "q2.5", "q50", "q97.5", "rhat", "ess"]


def cmd_fit(cfg: RunConfig, model: str = "joint") -> dict:
    from .fit import fit

    subjects = read_subjects(_need(cfg, "longitudinal"), _need(cfg, "survival"))
    out = _outdir(cfg)
    draws = fit(subjects, cfg.priors, cfg.sampler, model=model)
    write_draws(out / "draws.csv", draws)
    write_table(out / "summary.csv", SUMMARY_HEADER, _summary_rows(draws.names, draws.values))
    diag = {"model": model, "seed": cfg.sampler.seed, "chains": cfg.sampler.chains,
            "warmup": cfg.sampler.warmup, "samples": cfg.sampler.samples,
            "divergences": int(draws.total_divergences()),
            "chain_diagnostics": draws.diagnostics}
    (out / "diagnostics.json").write_text(
        json.dumps(diag, indent=2, sort_keys=True, default=_jsonable) + "\n", encoding="utf-8")
    return {"draws": out / "draws.csv", "summary": out / "summary.csv"}


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    return str(v)


def cmd_replicate(cfg: RunConfig, models=("joint", "longitudinal-only")) -> dict:
    out = _outdir(cfg)
    res = replication_study(cfg.scenario, cfg.priors, cfg.sampler, cfg.scenario.seed,
                            models=models, censor_rate=cfg.censor_rate)
    (out / "metrics.tsv").write_text(res.table.to_text(), encoding="utf-8")
    rec = {"seed": cfg.scenario.seed, "censor_rate": res.censor_rate,
           "table": res.table.to_dict(), "replications": res.records}
    (out / "replications.json").write_text(
        json.dumps(rec, indent=2, sort_keys=True, default=_jsonable) + "\n", encoding="utf-8")
    return {"metrics": out / "metrics.tsv", "replications": out / "replications.json"}


def params_from_draw(row: dict) -> ModelParams:
    """Rebuild :class:`ModelParams` from one draw keyed by parameter name."""
    def vec(prefix):
        out, k = [], 1
        while f"{prefix}[{k}]" in row:
            out.append(row[f"{prefix}[{k}]"])
            k += 1
        return out

    G = np.eye(4)
    for i in range(4):
        for j in range(i + 1, 4):
            G[i, j] = G[j, i] = row.get(f"corr[{RE_NAMES[i]},{RE_NAMES[j]}]", 0.0)
    return ModelParams(
        gamma=vec("gamma") or [0.0], eta=row.get("eta", 1.0), alpha=row.get("alpha", 1.0),
        beta=vec("beta"), sigma_y=row["sigma_y"], mu_omega=row["mu_omega"],
        mu_b=[row[f"mu_{n}"] for n in RE_NAMES[1:]],
        sd_r=[row[f"sigma_{n}"] for n in RE_NAMES], Gamma_r=G,
    )


def _thin(values, max_draws):
    flat = values.reshape(-1, values.shape[-1])
    if flat.shape[0] <= max_draws:
        return flat
    idx = np.linspace(0, flat.shape[0] - 1, max_draws).round().astype(int)
    return flat[idx]


def _interval_row(x):
    q = np.quantile(x, [0.025, 0.5, 0.975])
    return [float(np.mean(x)), float(np.std(x, ddof=1)) if x.size > 1 else math.nan, *q]


def summarize_draws(names, values, settings: dict, w_rows=None):
    """Population mean change point and marginal mean curves over draws.

    Returns ``(m_omega_samples, curves)`` where ``curves`` is a list of
    ``(t_star, visit_grid, mean_curve_samples)``. Survival covariates are
    averaged over ``w_rows`` (duplicates are folded into weights).
    """
    missing = [k for k in ("gamma[1]", "eta", "alpha") if k not in names]
    if missing:
        raise DataError(f"draws lack {', '.join(missing)}: summaries need joint-model draws")
    rows = _thin(values, settings["max_draws"])
    params = [params_from_draw(dict(zip(names, r))) for r in rows]
    q = params[0].gamma.size
    if w_rows is None:
        w = settings.get("w")
        w_rows = np.zeros((1, q)) if w is None else np.asarray(w, dtype=float).reshape(1, q)
    uniq, counts = np.unique(np.asarray(w_rows, dtype=float).reshape(-1, q), axis=0,
                             return_counts=True)
    weights = counts / counts.sum()
    m_omega = np.empty(len(params))
    for k, p in enumerate(params):
        m_omega[k] = sum(wt * population_mean_changepoint(
            p.mu_omega, p.sigma_omega, p.gamma, p.eta, p.alpha, w=row)
            for row, wt in zip(uniq, weights))
    curves = []
    x = np.asarray(settings["x"], dtype=float)
    for t in settings["t_star"]:
        grid = np.linspace(0.0, t, settings["grid_points"])
        X = np.broadcast_to(x, (grid.size, x.size))
        vals = np.array([marginal_mean_y(X, grid, p.beta, PtmvnParams(p.mu_r, p.Sigma_r, 0.0, t))
                         for p in params])
        curves.append((t, grid, vals))
    return m_omega, curves


def cmd_summarize(cfg: RunConfig) -> dict:
    names, values = read_draws(_need(cfg, "draws"))
    w_rows = None
    if "survival" in cfg.data:
        path = _need(cfg, "survival")
        with open(path, newline="", encoding="utf-8") as fh:
            rd = csv.reader(fh)
            header = next(rd)
            wcols = [i for i, h in enumerate(header) if h.startswith("w")]
            try:
                w_rows = np.array([[float(r[i]) for i in wcols] for r in rd if r])
            except (ValueError, IndexError):
                raise DataError(f"{path}: malformed survival covariates") from None
    out = _outdir(cfg)
    m_omega, curves = summarize_draws(names, values, cfg.summarize, w_rows)
    write_table(out / "m_omega.csv", ["quantity", "mean", "sd", "q2.5", "q50", "q97.5"],
                [["m_omega", *_interval_row(m_omega)]])
    paths = {"m_omega": out / "m_omega.csv"}
    for k, (t, grid, vals) in enumerate(curves, start=1):
        rows = [[t, s, *_interval_row(vals[:, j])] for j, s in enumerate(grid)]
        path = out / f"mean_curve_{k}.csv"
        write_table(path, ["t_star", "visit_time", "mean", "sd", "q2.5", "q50", "q97.5"], rows)
        paths[f"mean_curve_{k}"] = path
    return paths


# -- entry point ---------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    """Reports usage errors on one line with the configuration exit code."""

    def error(self, message):
        self.exit(EXIT_CONFIG, f"error[usage]: {' '.join(message.split())}\n")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="cpjoint", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)
    common = _Parser(add_help=False)
    common.add_argument("--config", type=Path, help="INI settings file")
    common.add_argument("--seed", type=int, help="scenario and sampler seed")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--model", choices=["joint", "longitudinal-only"], default=None)
    common.add_argument("--chains", type=int)
    common.add_argument("--warmup", type=int)
    common.add_argument("--samples", type=int)
    common.add_argument("-v", "--verbose", action="store_true")
    sub.add_parser("simulate", parents=[common], help="generate one dataset")
    p = sub.add_parser("fit", parents=[common], help="fit a model to CSV data")
    p.add_argument("--longitudinal", type=Path)
    p.add_argument("--survival", type=Path)
    p = sub.add_parser("replicate", parents=[common], help="run a replication study")
    p.add_argument("--replications", type=int)
    p = sub.add_parser("summarize", parents=[common], help="summaries derived from draws")
    p.add_argument("--draws", type=Path)
    p.add_argument("--survival", type=Path)
    p.add_argument("--t-star", help="comma-separated event times for mean curves")
    return ap


def _overrides(args) -> dict:
    ov = {"scenario": {}, "sampler": {}, "data": {}, "summarize": {}, "output": {}}
    if args.seed is not None:
        ov["scenario"]["seed"] = args.seed
        ov["sampler"]["seed"] = args.seed
    for key in ("chains", "warmup", "samples"):
        ov["sampler"][key] = getattr(args, key)
    if args.out is not None:
        ov["output"]["dir"] = str(args.out)
    for key in ("longitudinal", "survival", "draws"):
        if getattr(args, key, None) is not None:
            ov["data"][key] = str(getattr(args, key))
    if getattr(args, "replications", None) is not None:
        ov["scenario"]["replications"] = args.replications
    if getattr(args, "t_star", None) is not None:
        ov["summarize"]["t_star"] = args.t_star
    return ov


def run(argv=None) -> dict:
    """Parse ``argv`` and run the command; raises on failure."""
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    cfg = load_config(args.config, _overrides(args))
    if args.command == "simulate":
        return cmd_simulate(cfg)
    if args.command == "fit":
        return cmd_fit(cfg, args.model or "joint")
    if args.command == "replicate":
        models = (args.model,) if args.model else ("joint", "longitudinal-only")
        return cmd_replicate(cfg, models)
    return cmd_summarize(cfg)


def _fail(code: int, tag: str, msg) -> int:
    text = " ".join(str(msg).split())
    print(f"error[{tag}]: {text}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    try:
        paths = run(argv)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, "config", exc)
    except DataError as exc:
        return _fail(EXIT_DATA, "data", exc)
    except (SamplerError, ReplicationError) as exc:
        return _fail(EXIT_SAMPLER, "sampler", exc)
    for key, path in paths.items():
        print(f"{key}\t{path}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
