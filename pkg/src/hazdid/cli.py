"""Command-line front end.

Every command reads a JSON config (paths relative to the config file), lets
a few flags override it, and writes its outputs atomically into ``--out``.
Each output carries the config hash and seed so a run can be traced back to
its inputs.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import warnings
from pathlib import Path

import pandas as pd

from . import __version__
from .cox import TIES, default_terms, fit_cox, ratt_from_fit
from .data import PeriodWindows
from .diagnostics import cost_effectiveness, distance_sweep, loglog_curves, placebo_fit
from .episodes import build_episodes
from .errors import EstimationError, InputError
from .io import (canonical_json, read_distances_csv, read_panel_csv, read_spells_csv,
                 sha256_file, spells_for_csv, write_csv, write_json, write_text)
from .lineardid import fit_ols_fe, format_did_table
from .matching import (METRICS, MatchConfig, matched_sample, municipalities_from_spells,
                       nearest_counterpart)
from .report import coefficient_table, format_cox_table, sample_counts
from .simulation import DgpConfig, analytic_ratt, bound_check, simulate_geography, simulate_population

COMMANDS = ("fit", "match", "simulate", "placebo", "sweep", "loglog", "cost", "did")
PATH_KEYS = ("spells", "distances", "panel")


class Run:
    """Resolved configuration plus bookkeeping shared by all commands."""

    def __init__(self, command, config: dict, base: Path, out: Path):
        self.command = command
        self.config = config
        self.base = base
        self.out = out
        self.seed = int(config.get("seed", 0))
        self.hash = hashlib.sha256(canonical_json(config).encode()).hexdigest()
        self.inputs = {}

    def path(self, key, required=True):
        value = self.config.get(key)
        if value is None:
            if required:
                raise InputError(f"config lacks {key!r}")
            return None
        p = Path(value)
        p = p if p.is_absolute() else self.base / p
        if not p.is_file():
            raise InputError(f"{key} file not found: {value}")
        self.inputs[key] = sha256_file(p)
        return p

    @property
    def meta(self):
        return {"command": self.command, "config_hash": self.hash, "seed": self.seed,
                "inputs": dict(sorted(self.inputs.items())), "version": __version__}

    @property
    def comment(self):
        return f"hazdid {self.command} config_hash={self.hash} seed={self.seed}"

    def windows(self):
        return PeriodWindows.from_dict(self.config.get("windows"))

    def ties(self):
        ties = self.config.get("ties", "efron")
        if ties not in TIES:
            raise InputError(f"ties must be one of {TIES}")
        return ties

    def cluster(self):
        return self.config.get("cluster", "cluster_id")

    def match_config(self):
        return MatchConfig(metric=self.config.get("metric", "km"),
                           threshold=float(self.config.get("threshold", 20.0)),
                           same_year=bool(self.config.get("same_year", True)))

    def json(self, name, payload):
        write_json(self.out / name, {"meta": self.meta, **payload})

    def csv(self, name, frame):
        write_csv(self.out / name, frame, self.comment)

    def text(self, name, body):
        write_text(self.out / name, f"# {self.comment}\n{body}")


def _episodes(run: Run):
    spells = read_spells_csv(run.path("spells"))
    return build_episodes(spells, run.windows(), int(run.config.get("stratum_width", 5)))


def _fit_payload(fit, level=0.95, term="treat_x_pilot"):
    payload = {"fit": fit.to_dict(),
               "table": coefficient_table(fit).to_dict(orient="records")}
    if term in fit.terms:
        payload["ratt"] = ratt_from_fit(fit, level, term=term).to_dict()
    return payload


def _finish(fit):
    if not fit.converged:
        raise EstimationError(fit.message or "model did not converge")
    return 0


def cmd_fit(run: Run) -> int:
    eps = _episodes(run)
    terms = run.config.get("terms") or default_terms(eps)
    fit = fit_cox(eps, terms, ties=run.ties(), cluster=run.cluster())
    counts = sample_counts(eps)
    run.json("fit.json", {**_fit_payload(fit, float(run.config.get("level", 0.95))),
                          "counts": counts, "windows": run.windows().to_dict()})
    run.text("fit_table.txt", format_cox_table(fit, counts))
    return _finish(fit)


def cmd_match(run: Run) -> int:
    spells = read_spells_csv(run.path("spells"))
    distances = read_distances_csv(run.path("distances"))
    cfg = run.match_config()
    nearest = nearest_counterpart(municipalities_from_spells(spells, cfg.same_year), distances, cfg)
    local, weights = matched_sample(spells, distances, cfg, nearest=nearest)
    run.csv("weights.csv", weights)
    run.csv("matched_spells.csv", spells_for_csv(local))
    pairs = [{"municipality": m, "year": y, "match": None if hit is None else hit[0],
              "distance": None if hit is None else hit[1]}
             for (m, y), hit in sorted(nearest.items(), key=lambda kv: (str(kv[0][1]), str(kv[0][0])))]
    treated = local["treated"].to_numpy(bool)
    run.json("match.json", {
        "metric": cfg.metric, "threshold": cfg.threshold, "same_year": cfg.same_year,
        "n_spells_input": int(len(spells)), "n_spells_local": int(len(local)),
        "n_treated": int(treated.sum()),
        "control_weight_total": float(local["weight"].to_numpy()[~treated].sum()),
        "nearest": pairs})
    return 0


def cmd_simulate(run: Run) -> int:
    sim = dict(run.config.get("simulation", {}))
    sim["seed"] = run.seed
    if "windows" in run.config and "windows" not in sim:
        sim["windows"] = run.config["windows"]
    dgp = DgpConfig.from_dict(sim)
    geo_cfg = run.config.get("geography")
    geography = None
    if geo_cfg is not None:
        munis, dist = simulate_geography(seed=run.seed, **geo_cfg)
        treated_ids = munis.loc[munis["treated"], "muni"].tolist()
        control_ids = munis.loc[~munis["treated"], "muni"].tolist()
        if not treated_ids or not control_ids:
            raise InputError("geography has an empty treatment arm; change n_munis or seed")
        geography = (treated_ids, control_ids)
        run.csv("distances.csv", dist)
        run.csv("municipalities.csv", munis)
    spells = simulate_population(dgp, geography, threads=int(run.config.get("threads", 1)))
    run.csv("spells.csv", spells_for_csv(spells))
    run.json("truth.json", {"config": dgp.to_dict(), "ratt": analytic_ratt(dgp),
                            "bounds": bound_check(dgp.effects, dgp.p_eligible).to_dict(),
                            "n_spells": int(len(spells)), "n_events": int(spells["event"].sum())})
    return 0


def cmd_placebo(run: Run) -> int:
    spells = read_spells_csv(run.path("spells"))
    window = run.config.get("pseudo_window")
    if window is None:
        raise InputError("config lacks 'pseudo_window'")
    if len(window) != 2:
        raise InputError("pseudo_window must be [start, end_exclusive]")
    fit = placebo_fit(spells, tuple(window), run.windows(), retain=run.config.get("retain", "none"),
                      ties=run.ties(), stratum_width=int(run.config.get("stratum_width", 5)),
                      cluster=run.cluster())
    run.json("placebo.json", {**_fit_payload(fit, float(run.config.get("level", 0.95)),
                                             term="treat_x_pre"),
                              "pseudo_window": list(window)})
    run.text("placebo_table.txt", format_cox_table(fit))
    return _finish(fit)


def cmd_sweep(run: Run) -> int:
    spells = read_spells_csv(run.path("spells"))
    distances = read_distances_csv(run.path("distances"))
    thresholds = run.config.get("thresholds")
    if thresholds is None:
        thresholds = [run.config.get("threshold", 20.0)]
    results = distance_sweep(spells, distances, thresholds, metric=run.config.get("metric", "km"),
                             windows=run.windows(), ties=run.ties(),
                             stratum_width=int(run.config.get("stratum_width", 5)),
                             same_year=bool(run.config.get("same_year", True)),
                             terms=run.config.get("terms"), cluster=run.cluster(),
                             level=float(run.config.get("level", 0.95)),
                             threads=int(run.config.get("threads", 1)))
    rows = [r.to_dict() for r in results]
    run.csv("sweep.csv", pd.DataFrame(rows))
    run.json("sweep.json", {"results": rows})
    return 0


def cmd_loglog(run: Run) -> int:
    eps = _episodes(run)
    res = loglog_curves(eps, group_var=run.config.get("group_var", "d"),
                        by_stratum=bool(run.config.get("by_stratum", False)),
                        floor=int(run.config.get("floor", 30)),
                        flag_level=float(run.config.get("flag_level", 0.25)))
    run.csv("curves.csv", res.to_frame())
    stat = res.parallelism_stat
    run.json("loglog.json", {"parallelism_stat": None if stat != stat else stat,
                             "flagged": res.flagged, "flag_level": res.flag_level,
                             "n_compared": res.n_compared})
    return 0


def cmd_cost(run: Run) -> int:
    params = run.config.get("cost")
    if params is None:
        raise InputError("config lacks a 'cost' block")
    run.json("cost.json", {"inputs_used": params, "result": cost_effectiveness(params)})
    return 0


def cmd_did(run: Run) -> int:
    panel = read_panel_csv(run.path("panel"))
    fit = fit_ols_fe(panel, run.config.get("terms"),
                     correction=run.config.get("correction", "CR0"))
    run.json("did.json", {"fit": fit.to_dict()})
    run.text("did_table.txt", format_did_table(fit))
    return 0


HANDLERS = {"fit": cmd_fit, "match": cmd_match, "simulate": cmd_simulate,
            "placebo": cmd_placebo, "sweep": cmd_sweep, "loglog": cmd_loglog,
            "cost": cmd_cost, "did": cmd_did}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hazdid",
                                     description="Hazard-model difference-in-differences runs.")
    parser.add_argument("--version", action="version", version=f"hazdid {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=HANDLERS[name].__name__[4:])
        p.add_argument("--config", type=Path, help="JSON run configuration")
        p.add_argument("--out", type=Path, help="output directory")
        p.add_argument("--seed", type=int)
        p.add_argument("--ties", choices=TIES)
        p.add_argument("--metric", choices=sorted(METRICS))
        p.add_argument("--threshold", type=float)
        p.add_argument("--cluster")
        p.add_argument("--threads", type=int, help="worker threads (outputs do not depend on it)")
    return parser


def load_config(path: Path | None) -> tuple[dict, Path]:
    if path is None:
        return {}, Path.cwd()
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        config = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from None
    if not isinstance(config, dict):
        raise InputError(f"{path}: config must be a JSON object")
    return config, Path(path).resolve().parent


def run_command(command: str, config: dict, base: Path, out: Path) -> int:
    return HANDLERS[command](Run(command, config, base, out))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config, base = load_config(args.config)
        for key in ("seed", "ties", "metric", "threshold", "cluster"):
            value = getattr(args, key)
            if value is not None:
                config[key] = value
        # thread count never changes results, so it stays out of the hash
        threads = args.threads if args.threads is not None else config.pop("threads", 1)
        config.pop("threads", None)
        out = args.out or Path(config.pop("out", "."))
        if args.out is not None:
            config.pop("out", None)
        out = out if out.is_absolute() else (Path.cwd() / out)
        run = Run(args.command, config, base, out)
        run.config = {**config, "threads": int(threads)}
        if int(threads) < 1:
            raise InputError("threads must be at least 1")
        with warnings.catch_warnings():
            warnings.simplefilter("always")
            warnings.showwarning = _warn
            return HANDLERS[args.command](run)
    except InputError as exc:
        print(f"hazdid: input error: {exc}", file=sys.stderr)
        return 2
    except EstimationError as exc:
        print(f"hazdid: estimation failed: {exc}", file=sys.stderr)
        return 1


def _warn(message, category, filename, lineno, file=None, line=None):
    print(f"hazdid: warning: {message}", file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
