"""Command-line front end.

Every subcommand reads one YAML config with flat dotted keys (nested
mappings are flattened, so both spellings work) and accepts
``--set key=value`` overrides.  Exit codes: 0 success, 1 invalid input,
2 runtime failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from . import analysis as A
from . import outputs as io
from .disease_model import ModelParams, ModelStructure, StageDurations
from .mcmc import PARAM_NAMES, ChainResult, PriorSpec, ProposalConfig, effective_sample_size, run_chain
from .population import DataError, OutbreakData, VaccinationConfig, default_paths, load_data
from .simulator import SimConfig, SimPopulation, batch_simulate, run_seeds, simulate_conditional

DEFAULTS: dict = {
    "paths.cases": None,
    "paths.population": None,
    "paths.moves": None,
    "paths.output": "out",
    "data.table_after_move": False,
    "theta.mu_I": 11.6, "theta.sigma_I": 1.9,
    "theta.mu_F": 2.49, "theta.sigma_F": 0.88,
    "theta.mu_R": 16.0, "theta.sigma_R": 2.83,
    "theta.mu_Q": 2.0, "theta.sigma_Q": 2.0,
    "prior.rate_mean": 1e3,
    "prior.rate_sd": 1e3,
    "prior.truncate_tq": False,
    "prior.b_max": None,
    "mcmc.iterations": 100_000,
    "mcmc.burn_in": 10_000,
    "mcmc.thinning": 10,
    "mcmc.seed": 1967,
    "mcmc.chains": 1,
    "mcmc.workers": 1,
    "mcmc.adapt": True,
    "mcmc.check_every": 1000,
    "mcmc.scale.lambda_a": 0.6,
    "mcmc.scale.lambda_f": 0.5,
    "mcmc.scale.lambda_h": 0.3,
    "mcmc.scale.v": 0.6,
    "mcmc.scale.b": 1.0,
    "mcmc.scale.t_q": 0.5,
    "mcmc.scale.t_q_shift": 2.0,
    "sim.count": 5000,
    "sim.seed": 25,
    "sim.source": "posterior",
    "sim.target": 0,
    "sim.tq_override": "keep",
    "sim.workers": 1,
    "sim.lambda_a": 0.041, "sim.lambda_f": 0.063, "sim.lambda_h": 0.358,
    "sim.v": 0.808, "sim.b": 0.522, "sim.t_q": 50.4,
    "sim.vax_config": "1,1,2",
    "analysis.seed": 76,
    "analysis.wiw": True,
    "analysis.exposure": True,
    "analysis.protection": True,
    "analysis.ppc": True,
    "analysis.envelope_runs": 1000,
    "analysis.ppp": True,
    "analysis.ppp_M": 100,
    "analysis.ppp_M1": 100,
    "sensitivity.grid": "baseline; mu_R=12; mu_R=20; mu_Q=1,sigma_Q=1; mu_Q=4,sigma_Q=4",
    "sensitivity.iterations": 100_000,
    "sensitivity.burn_in": 10_000,
    "sensitivity.thinning": 10,
}

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class ConfigError(ValueError):
    pass


def flatten(tree: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in tree.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(flatten(v, key + "."))
        else:
            out[key] = v
    return out


def _coerce(key: str, value, default):
    if default is None or value is None:
        return value
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
        raise ConfigError(f"{key}: expected true/false, got {value!r}")
    if isinstance(default, int) and not isinstance(value, bool):
        if isinstance(value, float) and value.is_integer():
            return int(value)
        if isinstance(value, int):
            return value
        raise ConfigError(f"{key}: expected an integer, got {value!r}")
    if isinstance(default, float):
        try:
            return float(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{key}: expected a number, got {value!r}") from None
    return value


@dataclass
class RunConfig:
    values: dict
    source: Path | None = None
    overrides: dict = field(default_factory=dict)

    @classmethod
    def load(cls, path=None, overrides=()) -> "RunConfig":
        values = dict(DEFAULTS)
        source = None
        if path is not None:
            source = Path(path)
            if not source.exists():
                raise ConfigError(f"config file not found: {source}")
            try:
                tree = yaml.safe_load(source.read_text()) or {}
            except yaml.YAMLError as exc:
                raise ConfigError(f"{source}: {exc}") from None
            if not isinstance(tree, dict):
                raise ConfigError(f"{source}: top level must be a mapping")
            values.update(cls._checked(flatten(tree), source))
        over = {}
        for item in overrides:
            if "=" not in item:
                raise ConfigError(f"--set expects key=value, got {item!r}")
            k, v = item.split("=", 1)
            over[k.strip()] = yaml.safe_load(v)
        values.update(cls._checked(over, "--set"))
        return cls(values, source, over)

    @staticmethod
    def _checked(flat: dict, where) -> dict:
        out = {}
        for k, v in flat.items():
            if k not in DEFAULTS:
                raise ConfigError(f"{where}: unknown config key {k!r}")
            out[k] = _coerce(k, v, DEFAULTS[k])
        return out

    def __getitem__(self, key):
        return self.values[key]

    def digest(self) -> str:
        blob = json.dumps(self.values, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()

    @property
    def output(self) -> Path:
        return Path(self["paths.output"])

    def data_paths(self) -> dict[str, Path]:
        packaged = default_paths()
        return {k: Path(self[f"paths.{k}"]) if self[f"paths.{k}"] else packaged[k]
                for k in ("cases", "population", "moves")}

    def theta(self) -> StageDurations:
        return StageDurations.from_values(**{k.split(".", 1)[1]: self[k]
                                             for k in DEFAULTS if k.startswith("theta.")})

    def priors(self) -> PriorSpec:
        b_max = self["prior.b_max"]
        return PriorSpec(self["prior.rate_mean"], self["prior.rate_sd"], bool(self["prior.truncate_tq"]),
                         math.inf if b_max is None else float(b_max))

    def proposal(self) -> ProposalConfig:
        scales = {k.rsplit(".", 1)[1]: float(self[k]) for k in DEFAULTS if k.startswith("mcmc.scale.")}
        return ProposalConfig(scales=scales, adapt=bool(self["mcmc.adapt"]))

    def tq_override(self):
        raw = self["sim.tq_override"]
        if raw is None or (isinstance(raw, str) and raw.lower() == "none"):
            return None
        if isinstance(raw, str) and raw.lower() == "keep":
            return "keep"
        try:
            return float(raw)
        except (TypeError, ValueError):
            raise ConfigError(f"sim.tq_override: expected keep, none or a number, got {raw!r}") from None


def parse_grid(text: str) -> list[dict]:
    """'baseline; mu_R=12; mu_Q=1,sigma_Q=1' -> [{}, {'mu_R': 12.0}, ...]."""
    grid = []
    allowed = {k.split(".", 1)[1] for k in DEFAULTS if k.startswith("theta.")}
    for part in str(text).split(";"):
        part = part.strip()
        if not part:
            continue
        if part == "baseline":
            grid.append({})
            continue
        setting = {}
        for kv in part.split(","):
            k, _, v = kv.partition("=")
            k = k.strip()
            if k not in allowed or not v:
                raise ConfigError(f"sensitivity.grid: bad entry {kv!r}")
            setting[k] = float(v)
        grid.append(setting)
    if not grid:
        raise ConfigError("sensitivity.grid is empty")
    return grid


# -- run bookkeeping ---------------------------------------------------------------------


def _versions() -> dict:
    import numba
    import scipy
    return {"abakaliki": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "numba": numba.__version__, "pyyaml": yaml.__version__}


class Run:
    """Tracks one command's outputs; the manifest says 'incomplete' until done."""

    def __init__(self, command: str, cfg: RunConfig):
        self.command = command
        self.cfg = cfg
        self.out = cfg.output
        self.out.mkdir(parents=True, exist_ok=True)
        self.files: list[str] = []
        self.seeds: dict = {}
        self.extra: dict = {}
        self.start = time.time()
        self.manifest = self.out / f"manifest_{command}.json"
        self._write("incomplete")

    def path(self, name: str) -> Path:
        self.files.append(name)
        return self.out / name

    def _write(self, status: str) -> None:
        io.write_json(self.manifest, {
            "command": self.command, "status": status, "config_hash": self.cfg.digest(),
            "config": self.cfg.values, "config_file": str(self.cfg.source) if self.cfg.source else None,
            "overrides": self.cfg.overrides, "seeds": self.seeds, "versions": _versions(),
            "wall_clock_seconds": time.time() - self.start, "outputs": sorted(set(self.files)),
            **self.extra,
        })

    def finish(self) -> None:
        self._write("complete")


class Progress:
    """Line-oriented progress on stderr, at most one line per ``every`` seconds."""

    def __init__(self, label: str, every: float = 10.0):
        self.label = label
        self.every = every
        self.last = 0.0

    def __call__(self, done, total, *_):
        now = time.time()
        if now - self.last >= self.every or done == total:
            self.last = now
            print(f"[{self.label}] {done}/{total}", file=sys.stderr, flush=True)


# -- shared steps --------------------------------------------------------------------------


def load_inputs(cfg: RunConfig) -> OutbreakData:
    paths = cfg.data_paths()
    for name, p in paths.items():
        if not p.exists():
            raise ConfigError(f"{name} file not found: {p}")
    return load_data(paths["cases"], paths["population"], paths["moves"],
                     table_after_move=bool(cfg["data.table_after_move"]))


def chain_seeds(cfg: RunConfig) -> list[int]:
    return run_seeds(cfg["mcmc.seed"], cfg["mcmc.chains"])


def _chain_job(args):
    structure, theta, priors, proposal, iterations, burn_in, thinning, seed, check_every, label = args
    return run_chain(structure, theta, priors, proposal, iterations=iterations, burn_in=burn_in,
                     thinning=thinning, seed=seed, check_every=check_every, progress=Progress(label))


def load_chains(cfg: RunConfig, structure: ModelStructure) -> ChainResult:
    results = []
    for c in range(cfg["mcmc.chains"]):
        s = cfg.output / f"samples_chain{c}.csv"
        lat = cfg.output / f"latent_chain{c}.csv"
        if not s.exists() or not lat.exists():
            raise ConfigError(f"samples not found: {s} (run the mcmc command first)")
        results.append(io.read_chain(s, lat, structure.configs, structure.case_ids))
    res = ChainResult.concatenate(results)
    if len(res) == 0:
        raise ConfigError("sample files hold no retained samples")
    return res


def _summary_rows(summary: A.PosteriorSummary):
    for name, iv in summary.rows.items():
        yield (name, iv.mean, iv.median, iv.lower, iv.upper)


def simulation_inputs(cfg: RunConfig, data: OutbreakData, structure: ModelStructure):
    source = cfg["sim.source"]
    if source == "posterior":
        return A.posterior_simulation_inputs(load_chains(cfg, structure), data.population, structure)
    if source == "means":
        res = load_chains(cfg, structure)
        means = ModelParams(*res.params.mean(axis=0))
        pops = {i: SimPopulation.from_population(data.population, c) for i, c in enumerate(res.configs)}
        return [(means, int(ci)) for ci in res.config_index], pops
    if source == "fixed":
        try:
            cfg_t = tuple(int(x) for x in str(cfg["sim.vax_config"]).split(","))
            vax = VaccinationConfig(*cfg_t)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"sim.vax_config: {exc}") from None
        params = ModelParams(*(float(cfg[f"sim.{k}"]) for k in PARAM_NAMES))
        return [(params, 0)], {0: SimPopulation.from_population(data.population, vax)}
    raise ConfigError(f"sim.source must be posterior, means or fixed, got {source!r}")


def write_ppc(run: Run, report: A.PredictiveReport) -> None:
    io.write_histogram(run.path("ppc_finalsize.csv"), report.final_size, "final_size")
    io.write_histogram(run.path("ppc_finalsize_movers.csv"), report.mover_final_size, "final_size")
    io.write_histogram(run.path("ppc_duration.csv"), report.duration, "duration")
    io.write_csv(run.path("ppc_stats.csv"), ("statistic", "value"), sorted(report.as_dict().items()))
    if report.envelope is not None:
        io.write_csv(run.path("ppc_envelope.csv"), ("day", "min", "q025", "median", "q975", "max"),
                     report.envelope)


def _update_summary(path: Path, key: str, value) -> None:
    current = json.loads(path.read_text()) if path.exists() else {}
    current[key] = value
    io.write_json(path, current)


# -- commands ----------------------------------------------------------------------------


def cmd_validate(cfg: RunConfig) -> int:
    data = load_inputs(cfg)
    structure = ModelStructure.from_data(data)
    pop = data.population
    print(f"OK: N={pop.N}, cases={len(data.cases)}, configs={len(structure.configs)}")
    return EXIT_OK


def cmd_mcmc(cfg: RunConfig) -> int:
    data = load_inputs(cfg)
    structure = ModelStructure.from_data(data)
    run = Run("mcmc", cfg)
    seeds = chain_seeds(cfg)
    run.seeds = {"mcmc.seed": cfg["mcmc.seed"], "chains": seeds}
    jobs = [(structure, cfg.theta(), cfg.priors(), cfg.proposal(), cfg["mcmc.iterations"],
             cfg["mcmc.burn_in"], cfg["mcmc.thinning"], s, cfg["mcmc.check_every"], f"chain {c}")
            for c, s in enumerate(seeds)]
    workers = max(1, cfg["mcmc.workers"])
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_chain_job, jobs))
    else:
        results = [_chain_job(j) for j in jobs]
    for c, res in enumerate(results):
        io.write_samples(run.path(f"samples_chain{c}.csv"), res)
        io.write_latent(run.path(f"latent_chain{c}.csv"), res)
    run.extra["acceptance"] = {f"chain{c}": r.acceptance for c, r in enumerate(results)}
    combined = ChainResult.concatenate(results)
    if len(combined) == 0:
        print("no retained samples; summary not written", file=sys.stderr)
        run.finish()
        return EXIT_OK
    summary = A.PosteriorSummary.from_chain(combined, cfg.theta())
    first = results[0]
    ess = ({name: effective_sample_size(first.params[:, k]) for k, name in enumerate(PARAM_NAMES)}
           if len(first) >= 10 else {})
    out = run.path("summary.json")
    io.write_json(out, {"posterior": summary.as_dict(), "ess_chain0": ess,
                        "acceptance": run.extra["acceptance"]})
    io.write_csv(run.path("posterior_summary.csv"), ("quantity", "mean", "median", "lower", "upper"),
                 _summary_rows(summary))
    run.finish()
    for name, iv in summary.rows.items():
        print(f"{name:9s} mean {iv.mean:.4g}  95% [{iv.lower:.4g}, {iv.upper:.4g}]")
    return EXIT_OK


def cmd_simulate(cfg: RunConfig) -> int:
    data = load_inputs(cfg)
    structure = ModelStructure.from_data(data)
    tq = cfg.tq_override()
    param_sets, pops = simulation_inputs(cfg, data, structure)
    run = Run("simulate", cfg)
    run.seeds = {"sim.seed": cfg["sim.seed"]}
    target = cfg["sim.target"]
    if target > 0:
        rng = np.random.default_rng(cfg["sim.seed"])
        rows, summaries = [], []
        for k, s in enumerate(run_seeds(cfg["sim.seed"], cfg["sim.count"])):
            params, key = param_sets[int(rng.integers(len(param_sets)))]
            if tq != "keep":
                params = params.replace(t_q=math.inf if tq is None else tq)
            res = simulate_conditional(SimConfig(params, pops[key], cfg.theta(), s), target)
            summaries.append(res.summary())
            rows.extend((k, rank, t) for rank, t in enumerate(np.sort(res.rash)))
        io.write_csv(run.path("sim_rash.csv"), ("run_id", "rank", "rash"), rows)
    else:
        summaries = batch_simulate(param_sets, cfg["sim.count"], seed=cfg["sim.seed"],
                                   parallelism=cfg["sim.workers"], theta=cfg.theta(),
                                   populations=pops, tq_override=tq)
    io.write_sim_summaries(run.path("sim_summary.csv"), summaries)
    if summaries:
        write_ppc(run, A.predictive_checks(summaries, min_runs=1))
        fs = np.mean([s.final_size for s in summaries])
        print(f"{len(summaries)} simulations, mean final size {fs:.3f}")
    run.finish()
    return EXIT_OK


def cmd_analyze(cfg: RunConfig) -> int:
    data = load_inputs(cfg)
    structure = ModelStructure.from_data(data)
    res = load_chains(cfg, structure)
    theta = cfg.theta()
    run = Run("analyze", cfg)
    run.seeds = {"analysis.seed": cfg["analysis.seed"], "sim.seed": cfg["sim.seed"]}
    summary_path = run.path("summary.json")
    _update_summary(summary_path, "posterior", A.PosteriorSummary.from_chain(res, theta).as_dict())
    ids = list(structure.case_ids)
    if cfg["analysis.wiw"]:
        w = A.who_infected_whom(res, structure)
        io.write_csv(run.path("wiw.csv"), ["case_id", "index"] + [f"from_{c}" for c in ids],
                     ([cid, w.index_mass[j], *w.matrix[j]] for j, cid in enumerate(ids)))
    if cfg["analysis.exposure"]:
        h = A.exposure_posterior(res)
        io.write_csv(run.path("exposure_heatmap.csv"),
                     ["case_id", "mean"] + ["day_%g" % d for d in h.edges[:-1]],
                     ([cid, h.means[j], *h.mass[j]] for j, cid in enumerate(ids)))
    if cfg["analysis.protection"]:
        pp = A.protection_posterior(res, structure)
        io.write_csv(run.path("protection.csv"),
                     ("compound_before", "compound_after", "confession", "vaccinated", "p_protected"),
                     (("outside" if k[0] == 0 else k[0], "outside" if k[1] == 0 else k[1],
                       "FTC" if k[2] == 0 else "nonFTC", k[3], prob)
                      for k, prob in zip(pp.cell_keys, pp.probability) if k[3]))
    param_sets, pops = A.posterior_simulation_inputs(res, data.population, structure)
    rng = np.random.default_rng(cfg["analysis.seed"])
    if cfg["analysis.ppc"]:
        summaries = batch_simulate(param_sets, cfg["sim.count"], seed=cfg["sim.seed"],
                                   parallelism=cfg["sim.workers"], theta=theta, populations=pops)
        io.write_sim_summaries(run.path("sim_summary.csv"), summaries)
        rash = []
        for s in run_seeds(int(rng.integers(2**32)), cfg["analysis.envelope_runs"]):
            params, key = param_sets[int(rng.integers(len(param_sets)))]
            rash.append(simulate_conditional(SimConfig(params, pops[key], theta, s), structure.m).rash)
        report = A.predictive_checks(summaries, rash or None, min_runs=1)
        write_ppc(run, report)
        _update_summary(summary_path, "predictive", report.as_dict())
    if cfg["analysis.ppp"]:
        M = cfg["analysis.ppp_M"]
        picks = rng.choice(len(param_sets), size=M, replace=M > len(param_sets))
        draws = [(param_sets[k][0], pops[param_sets[k][1]]) for k in picks]
        rep = A.ppp_value(draws, structure.rash, M1=cfg["analysis.ppp_M1"],
                          seed=int(rng.integers(2**32)), theta=theta)
        io.write_csv(run.path("ppp.csv"), ("draw", "d_obs", "d_rep"),
                     ((k, a, b) for k, (a, b) in enumerate(zip(rep.d_obs, rep.d_rep))))
        _update_summary(summary_path, "ppp", {"value": rep.ppp, "M": rep.M, "M1": rep.M1,
                                              "excluded_ranks": list(rep.excluded_ranks)})
        print(f"ppp-value {rep.ppp:.3f} (M={rep.M}, M1={rep.M1})")
    run.finish()
    return EXIT_OK


def cmd_report(cfg: RunConfig) -> int:
    path = cfg.output / "summary.json"
    if not path.exists():
        raise ConfigError(f"summary not found: {path} (run mcmc or analyze first)")
    summary = json.loads(path.read_text())
    run = Run("report", cfg)
    rows = []
    for name, iv in summary.get("posterior", {}).get("parameters", {}).items():
        rows.append(("posterior", name, iv["mean"], iv["median"], iv["lower"], iv["upper"]))
    for name, value in sorted(summary.get("predictive", {}).items()):
        rows.append(("predictive", name, value, "", "", ""))
    if "ppp" in summary:
        rows.append(("assessment", "ppp", summary["ppp"]["value"], "", "", ""))
    io.write_csv(run.path("report.csv"), ("section", "quantity", "mean", "median", "lower", "upper"), rows)
    for section, name, mean, med, lo, hi in rows:
        interval = f"  [{lo:.4g}, {hi:.4g}]" if lo != "" else ""
        print(f"{section:11s} {name:22s} {mean:.4g}{interval}")
    run.finish()
    return EXIT_OK


def cmd_sensitivity(cfg: RunConfig) -> int:
    data = load_inputs(cfg)
    structure = ModelStructure.from_data(data)
    grid = parse_grid(cfg["sensitivity.grid"])
    run = Run("sensitivity", cfg)
    run.seeds = {"mcmc.seed": cfg["mcmc.seed"]}
    results = A.sensitivity_sweep(structure, grid, cfg.priors(), cfg.proposal(),
                                  iterations=cfg["sensitivity.iterations"],
                                  burn_in=cfg["sensitivity.burn_in"],
                                  thinning=cfg["sensitivity.thinning"], seed=cfg["mcmc.seed"],
                                  progress=Progress("sensitivity"))
    io.write_csv(run.path("sensitivity_summary.csv"),
                 ("setting", "quantity", "mean", "median", "lower", "upper"),
                 ((r.label, *row) for r in results for row in _summary_rows(r.summary)))
    for name, table in A.density_table(results).items():
        io.write_csv(run.path(f"sensitivity_density_{name}.csv"),
                     ["value"] + [r.label for r in results], table)
    run.finish()
    return EXIT_OK


COMMANDS = {
    "validate": cmd_validate,
    "mcmc": cmd_mcmc,
    "simulate": cmd_simulate,
    "analyze": cmd_analyze,
    "report": cmd_report,
    "sensitivity": cmd_sensitivity,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="abakaliki", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("config", nargs="?", help="YAML config file (defaults apply if omitted)")
        sp.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key; repeatable")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = RunConfig.load(args.config, args.overrides)
        return COMMANDS[args.command](cfg)
    except (ConfigError, DataError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001 - any other failure is a runtime error
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
