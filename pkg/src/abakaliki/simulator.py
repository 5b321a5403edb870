"""Event-driven forward simulation of the transmission model.

Between consecutive stage transitions (and the day-25 move) every
pressure is constant, so the waiting time to the next exposure is
exponential with the summed rate over cells of identical susceptibles.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .disease_model import ModelParams, StageDurations
from .population import OUTSIDE, Confession, Population, VaccinationConfig


class ConditioningFailure(RuntimeError):
    def __init__(self, target: int, attempts: int):
        super().__init__(f"no outbreak of size {target} in {attempts} attempts")
        self.target = target
        self.attempts = attempts


@dataclass(frozen=True, eq=False)
class SimPopulation:
    """Cell arrays of the full population for one vaccination config."""

    cell_cb: np.ndarray
    cell_ca: np.ndarray
    cell_conf: np.ndarray
    cell_vax: np.ndarray
    cell_total: np.ndarray
    gsize_before: np.ndarray
    gsize_after: np.ndarray
    N: int
    n_ftc: int
    move_day: float
    index_cell: int
    mover_cells: tuple = ()

    @classmethod
    def from_population(cls, pop: Population, config: VaccinationConfig,
                        index: tuple[int, Confession, bool] = (1, Confession.FTC, False)):
        """``index`` picks the index case's cell as (compound, confession,
        vaccinated), or (compound_before, compound_after, confession,
        vaccinated) for a cell that moves."""
        cells = pop.cell_counts(config)
        mv = pop.move
        n_comp = max(max(r.compound for r in pop.rows), mv.to_compound) + 1
        gb = np.zeros((n_comp, 2), dtype=np.int64)
        ga = np.zeros((n_comp, 2), dtype=np.int64)
        for c in range(1, n_comp):
            for conf in Confession:
                gb[c, conf.code] = pop.group_size_of(c, conf, mv.day - 1.0)
                ga[c, conf.code] = pop.group_size_of(c, conf, mv.day)
        if len(index) == 3:
            index = (index[0], index[0], *index[1:])
        cb, ca, conf, vax = index
        if not isinstance(conf, Confession):
            conf = Confession.FTC if int(conf) == 0 else Confession.NON_FTC
        index_cell = next(k for k, c in enumerate(cells)
                          if c.compound_before == cb and c.compound_after == ca
                          and c.confession is conf and c.vaccinated == bool(vax))
        movers = tuple(k for k, c in enumerate(cells) if c.compound_before != c.compound_after)
        return cls(
            np.array([c.compound_before for c in cells], dtype=np.int64),
            np.array([c.compound_after for c in cells], dtype=np.int64),
            np.array([c.confession.code for c in cells], dtype=np.int64),
            np.array([c.vaccinated for c in cells], dtype=np.bool_),
            np.array([c.count for c in cells], dtype=np.int64),
            gb, ga, pop.N, pop.n, float(mv.day), index_cell, movers,
        )

    @classmethod
    def from_individuals(cls, individuals, index_individual: int = 0, move_day: float = 25.0):
        """Toy populations: one cell per distinct (cb, ca, conf, vax) tuple."""
        ind = [tuple(int(x) for x in row) for row in individuals]
        keys = sorted(set(ind))
        n_comp = max(max(k[0], k[1]) for k in keys) + 1
        gb = np.zeros((n_comp, 2), dtype=np.int64)
        ga = np.zeros((n_comp, 2), dtype=np.int64)
        for cb, ca, conf, _ in ind:
            if cb != OUTSIDE:
                gb[cb, conf] += 1
            if ca != OUTSIDE:
                ga[ca, conf] += 1
        totals = np.array([ind.count(k) for k in keys], dtype=np.int64)
        movers = tuple(k for k, key in enumerate(keys) if key[0] != key[1])
        return cls(
            np.array([k[0] for k in keys], dtype=np.int64),
            np.array([k[1] for k in keys], dtype=np.int64),
            np.array([k[2] for k in keys], dtype=np.int64),
            np.array([bool(k[3]) for k in keys], dtype=np.bool_),
            totals, gb, ga, len(ind), sum(1 for k in ind if k[2] == 0), float(move_day),
            keys.index(ind[index_individual]), movers,
        )


@dataclass
class SimConfig:
    """``params.e_kappa`` sets the index exposure time; ``None`` places it
    so that the index rash falls on day 0 (the data's time origin)."""

    params: ModelParams
    population: SimPopulation
    theta: StageDurations = field(default_factory=StageDurations)
    seed: int | None = None


@dataclass
class SimResult:
    times: np.ndarray  # (n, 5): e, i, r, tau, q
    cells: np.ndarray
    infector: np.ndarray
    protected: np.ndarray
    final_size: int
    duration: float
    n_ftc: int
    n_outside: int
    mover_infected: bool
    attempts: int = 1

    @property
    def rash(self) -> np.ndarray:
        return self.times[:, 2]

    @property
    def tree(self) -> list[tuple[int, int, float]]:
        """(infector, infectee, exposure time) for every non-index case."""
        return [(int(self.infector[k]), k, float(self.times[k, 0]))
                for k in range(self.final_size) if self.infector[k] >= 0]

    def summary(self) -> "SimSummary":
        return SimSummary(self.final_size, self.duration, self.n_ftc, self.n_outside,
                          self.mover_infected)


@dataclass(frozen=True)
class SimSummary:
    final_size: int
    duration: float
    n_ftc: int
    n_outside: int
    mover_infected: bool


def _run_core(pop: SimPopulation, p: ModelParams, theta: StageDurations, stop_above: int = 0):
    tq = math.inf if p.t_q is None else float(p.t_q)
    e0 = math.nan if p.e_kappa is None else float(p.e_kappa)
    return K.simulate_core(pop.cell_cb, pop.cell_ca, pop.cell_conf, pop.cell_vax, pop.cell_total,
                           pop.index_cell, p.lambda_a, p.lambda_f, p.lambda_h, p.v, p.b, tq,
                           pop.gsize_before, pop.gsize_after, float(pop.N), float(pop.n_ftc),
                           pop.move_day, theta.shapes, theta.scales, stop_above, e0)


def _result(pop: SimPopulation, out, attempts: int = 1) -> SimResult:
    nc, times, cells, infector, protected, _ = out
    rash = times[:, 2]
    conf = pop.cell_conf[cells]
    outside = pop.cell_cb[cells] == OUTSIDE
    movers = np.isin(cells, pop.mover_cells) & (times[:, 0] < pop.move_day)
    return SimResult(times, cells, infector, protected, int(nc),
                     float(rash.max() - rash.min()) if nc else 0.0,
                     int((conf == 0).sum()), int(outside.sum()), bool(movers.any()), attempts)


def simulate(config: SimConfig) -> SimResult:
    if config.seed is not None:
        K.seed(int(config.seed))
    return _result(config.population, _run_core(config.population, config.params, config.theta))


def simulate_conditional(config: SimConfig, target: int, max_attempts: int = 100_000) -> SimResult:
    """Rejection sampler: simulate until the final size equals ``target``."""
    if target < 1:
        raise ValueError("target final size must be >= 1")
    if config.seed is not None:
        K.seed(int(config.seed))
    for attempt in range(1, max_attempts + 1):
        out = _run_core(config.population, config.params, config.theta, stop_above=target)
        if out[0] == target and not out[5]:
            return _result(config.population, out, attempt)
    raise ConditioningFailure(target, max_attempts)


# -- batches ------------------------------------------------------------------


def run_seeds(master_seed, count: int) -> list[int]:
    ss = np.random.SeedSequence(master_seed)
    return [int(x) for x in ss.generate_state(count, dtype=np.uint32)] if count else []


def _batch_worker(args):
    pop, theta, items = args
    out = []
    for params, seed in items:
        K.seed(seed)
        out.append(_result(pop, _run_core(pop, params, theta)).summary())
    return out


def batch_simulate(param_sets, count: int, seed=None, parallelism: int = 1,
                   theta: StageDurations = StageDurations(), populations=None,
                   tq_override="keep") -> list[SimSummary]:
    """One simulation per drawn parameter set, results ordered by run index.

    ``param_sets`` is a list of ``(ModelParams, key)`` pairs where ``key``
    selects a SimPopulation from ``populations`` (a dict).  Parameter sets
    are drawn uniformly with replacement.  ``tq_override`` replaces t_q
    (``None`` means no control measures at all).
    """
    if count <= 0:
        return []
    if not param_sets:
        raise ValueError("no parameter sets to simulate from")
    rng = np.random.default_rng(seed)
    picks = rng.integers(len(param_sets), size=count)
    seeds = run_seeds(rng.integers(2**63), count)
    groups: dict = {}
    for run, (pick, s) in enumerate(zip(picks, seeds)):
        params, key = param_sets[int(pick)]
        if tq_override != "keep":
            params = params.replace(t_q=math.inf if tq_override is None else float(tq_override))
        groups.setdefault(key, []).append((run, params, s))
    results: list = [None] * count
    jobs = []
    for key, items in groups.items():
        pop = populations[key]
        step = max(1, math.ceil(len(items) / max(1, parallelism)))
        for lo in range(0, len(items), step):
            chunk = items[lo:lo + step]
            jobs.append(([run for run, _, _ in chunk], (pop, theta, [(p, s) for _, p, s in chunk])))
    if parallelism > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=parallelism) as ex:
            outs = list(ex.map(_batch_worker, [j[1] for j in jobs]))
    else:
        outs = [_batch_worker(j[1]) for j in jobs]
    for (runs, _), out in zip(jobs, outs):
        for run, summ in zip(runs, out):
            results[run] = summ
    return results
