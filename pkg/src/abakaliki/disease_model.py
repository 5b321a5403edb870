"""Transmission model: stage durations, infectious pressure and likelihood.

The likelihood treats every protection status as a latent Bernoulli(v)
variable and sums it out analytically, which is exact because the
augmented likelihood factorises over individuals.  Never-infected people
are handled per cell (same compound trajectory, confession and vaccine
status) since all members of a cell feel the same pressure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import stats

from . import _kernels as K
from .population import OUTSIDE, Confession, OutbreakData, enumerate_vaccination_configs


@dataclass(frozen=True)
class GammaSpec:
    """Gamma distribution given by its mean and standard deviation (days)."""

    mean: float
    sd: float

    def __post_init__(self):
        if not (self.mean > 0 and self.sd > 0):
            raise ValueError(f"gamma mean and sd must be positive, got {self.mean}, {self.sd}")

    @property
    def shape(self) -> float:
        return (self.mean / self.sd) ** 2

    @property
    def scale(self) -> float:
        return self.sd ** 2 / self.mean

    def logpdf(self, x):
        return stats.gamma.logpdf(x, self.shape, scale=self.scale)

    def pdf(self, x):
        return stats.gamma.pdf(x, self.shape, scale=self.scale)

    def sample(self, rng: np.random.Generator, size=None):
        return rng.gamma(self.shape, self.scale, size)

    @property
    def dist(self):
        return stats.gamma(self.shape, scale=self.scale)


def gamma_from_mean_sd(mean: float, sd: float) -> GammaSpec:
    return GammaSpec(float(mean), float(sd))


@dataclass(frozen=True)
class StageDurations:
    incubation: GammaSpec = GammaSpec(11.6, 1.9)
    fever: GammaSpec = GammaSpec(2.49, 0.88)
    rash: GammaSpec = GammaSpec(16.0, 2.83)
    quarantine: GammaSpec = GammaSpec(2.0, 2.0)

    @classmethod
    def from_values(cls, mu_I=11.6, sigma_I=1.9, mu_F=2.49, sigma_F=0.88,
                    mu_R=16.0, sigma_R=2.83, mu_Q=2.0, sigma_Q=2.0) -> "StageDurations":
        return cls(GammaSpec(mu_I, sigma_I), GammaSpec(mu_F, sigma_F),
                   GammaSpec(mu_R, sigma_R), GammaSpec(mu_Q, sigma_Q))

    def as_dict(self) -> dict[str, float]:
        out = {}
        for key, spec in zip("IFRQ", self.stages):
            out[f"mu_{key}"] = spec.mean
            out[f"sigma_{key}"] = spec.sd
        return out

    @property
    def stages(self) -> tuple[GammaSpec, ...]:
        return (self.incubation, self.fever, self.rash, self.quarantine)

    @property
    def shapes(self) -> np.ndarray:
        return np.array([s.shape for s in self.stages])

    @property
    def scales(self) -> np.ndarray:
        return np.array([s.scale for s in self.stages])


@dataclass(frozen=True)
class ModelParams:
    lambda_a: float
    lambda_f: float
    lambda_h: float
    v: float
    b: float
    t_q: float
    kappa: int = 0
    e_kappa: float | None = None

    def __post_init__(self):
        if min(self.lambda_a, self.lambda_f, self.lambda_h) < 0:
            raise ValueError("contact rates must be non-negative")
        if not 0.0 <= self.v <= 1.0:
            raise ValueError("v must lie in [0, 1]")
        if self.b < 0 or self.t_q < 0:
            raise ValueError("b and t_q must be non-negative")

    def replace(self, **kw) -> "ModelParams":
        return replace(self, **kw)


@dataclass
class AugmentedEvents:
    """Latent event times of every case alongside the observed rash times."""

    e: np.ndarray
    i: np.ndarray
    r: np.ndarray
    tau: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        for name in ("e", "i", "r", "tau", "q"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))

    def copy(self) -> "AugmentedEvents":
        return AugmentedEvents(self.e.copy(), self.i.copy(), self.r.copy(),
                               self.tau.copy(), self.q.copy())

    @property
    def end(self) -> np.ndarray:
        """Time each case stops being infectious."""
        return np.minimum(self.tau, self.q)

    def __len__(self):
        return len(self.r)

    def is_ordered(self, t_q: float) -> bool:
        return bool(np.all(self.e < self.i) and np.all(self.i < self.r)
                    and np.all(self.r < self.tau) and np.all(self.q > np.maximum(self.r, t_q)))


@dataclass(frozen=True)
class PressureBreakdown:
    contributions: np.ndarray
    total: float


@dataclass(frozen=True, eq=False)
class ModelStructure:
    """Everything about the population the likelihood needs, as arrays.

    Built from the Abakaliki data by :meth:`from_data`, or from an explicit
    list of individuals for small test populations.
    """

    N: int
    n_ftc: int
    move_day: float
    T: float
    gsize_before: np.ndarray
    gsize_after: np.ndarray
    case_conf: np.ndarray
    case_cb: np.ndarray
    case_ca: np.ndarray
    case_vax: np.ndarray
    rash: np.ndarray
    cell_cb: np.ndarray
    cell_ca: np.ndarray
    cell_conf: np.ndarray
    cell_vax: np.ndarray
    # one row per vaccination config; never-infected counts
    cell_count: np.ndarray
    configs: tuple = (None,)
    case_ids: tuple = field(default=())

    @property
    def m(self) -> int:
        return len(self.rash)

    def config_index(self, config) -> int:
        return self.configs.index(config)

    @classmethod
    def from_data(cls, data: OutbreakData) -> "ModelStructure":
        pop = data.population
        configs = tuple(enumerate_vaccination_configs())
        cases = data.cases
        mv = pop.move
        n_comp = max(max(r.compound for r in pop.rows), mv.to_compound) + 1
        gb = np.zeros((n_comp, 2), dtype=np.int64)
        ga = np.zeros((n_comp, 2), dtype=np.int64)
        for c in range(1, n_comp):
            for conf in Confession:
                gb[c, conf.code] = pop.group_size_of(c, conf, mv.day - 1.0)
                ga[c, conf.code] = pop.group_size_of(c, conf, mv.day)
        case_cb, case_ca = [], []
        for c in cases:
            if c.case_id in mv.case_ids:
                case_cb.append(mv.from_compound)
                case_ca.append(mv.to_compound)
            else:
                case_cb.append(c.compound)
                case_ca.append(c.compound)
        case_conf = np.array([c.confession.code for c in cases], dtype=np.int64)
        case_vax = np.array([c.vaccinated for c in cases], dtype=np.bool_)
        case_cb = np.array(case_cb, dtype=np.int64)
        case_ca = np.array(case_ca, dtype=np.int64)

        cells0 = pop.cell_counts(configs[0])
        keys = [(c.compound_before, c.compound_after, c.confession.code, c.vaccinated) for c in cells0]
        counts = np.zeros((len(configs), len(keys)), dtype=np.int64)
        for ci, cfg in enumerate(configs):
            cells = pop.cell_counts(cfg)
            for k, cell in enumerate(cells):
                assert (cell.compound_before, cell.compound_after, cell.confession.code,
                        cell.vaccinated) == keys[k]
                counts[ci, k] = cell.count
        for j in range(len(cases)):
            key = (case_cb[j], case_ca[j], case_conf[j], bool(case_vax[j]))
            k = keys.index(key)
            counts[:, k] -= 1
        if (counts < 0).any():
            raise ValueError("more cases than individuals in some cell")
        rash = np.array([c.rash_day for c in cases], dtype=float)
        return cls(
            N=pop.N, n_ftc=pop.n, move_day=float(mv.day), T=float(rash.max()),
            gsize_before=gb, gsize_after=ga, case_conf=case_conf, case_cb=case_cb,
            case_ca=case_ca, case_vax=case_vax, rash=rash,
            cell_cb=np.array([k[0] for k in keys], dtype=np.int64),
            cell_ca=np.array([k[1] for k in keys], dtype=np.int64),
            cell_conf=np.array([k[2] for k in keys], dtype=np.int64),
            cell_vax=np.array([k[3] for k in keys], dtype=np.bool_),
            cell_count=counts, configs=configs,
            case_ids=tuple(c.case_id for c in cases),
        )

    @classmethod
    def from_individuals(cls, individuals, case_individuals, rash, move_day=25.0, T=None):
        """Build a structure from explicit individuals.

        ``individuals`` is a sequence of ``(compound_before, compound_after,
        confession_code, vaccinated)`` tuples; ``case_individuals`` lists
        which of them are the cases, in case order.
        """
        ind = np.array(individuals, dtype=np.int64).reshape(-1, 4)
        n_comp = int(ind[:, :2].max()) + 1
        gb = np.zeros((n_comp, 2), dtype=np.int64)
        ga = np.zeros((n_comp, 2), dtype=np.int64)
        for cb, ca, conf, _ in ind:
            if cb != OUTSIDE:
                gb[cb, conf] += 1
            if ca != OUTSIDE:
                ga[ca, conf] += 1
        cases = ind[list(case_individuals)]
        keys = sorted({tuple(int(x) for x in row) for row in ind})
        counts = np.zeros((1, len(keys)), dtype=np.int64)
        for idx, row in enumerate(ind):
            if idx in case_individuals:
                continue
            counts[0, keys.index(tuple(int(x) for x in row))] += 1
        rash = np.asarray(rash, dtype=float)
        return cls(
            N=len(ind), n_ftc=int((ind[:, 2] == 0).sum()), move_day=float(move_day),
            T=float(rash.max() if T is None else T), gsize_before=gb, gsize_after=ga,
            case_conf=cases[:, 2].copy(), case_cb=cases[:, 0].copy(), case_ca=cases[:, 1].copy(),
            case_vax=cases[:, 3].astype(np.bool_), rash=rash,
            cell_cb=np.array([k[0] for k in keys], dtype=np.int64),
            cell_ca=np.array([k[1] for k in keys], dtype=np.int64),
            cell_conf=np.array([k[2] for k in keys], dtype=np.int64),
            cell_vax=np.array([bool(k[3]) for k in keys], dtype=np.bool_),
            cell_count=counts, configs=(None,), case_ids=tuple(range(len(cases))),
        )

    def compound_at(self, cb: int, ca: int, t: float) -> int:
        return cb if t < self.move_day else ca

    def group_size(self, compound: int, conf: int, t: float) -> int:
        table = self.gsize_before if t < self.move_day else self.gsize_after
        return int(table[compound, conf])


def end_time(r) -> float:
    r = np.asarray(r, dtype=float)
    if r.size == 0:
        raise ValueError("no cases")
    return float(r.max())


def infectivity_multiplier(k: int, t: float, events: AugmentedEvents, b: float) -> float:
    if events.i[k] <= t < events.r[k]:
        return b
    if events.r[k] <= t < min(events.tau[k], events.q[k]):
        return 1.0
    return 0.0


def pair_rate(params: ModelParams, structure: ModelStructure, k: int,
              target: tuple[int, int, int], t: float) -> float:
    """Per-pair contact rate from case k to a target (cb, ca, conf) at t."""
    cb, ca, conf_j = target
    ck = int(structure.case_conf[k])
    rate = K.global_rate(ck, conf_j, params.lambda_a, params.lambda_f,
                         float(structure.N), float(structure.n_ftc))
    comp_k = structure.compound_at(int(structure.case_cb[k]), int(structure.case_ca[k]), t)
    comp_j = structure.compound_at(cb, ca, t)
    size = structure.group_size(comp_k, ck, t) if comp_k != OUTSIDE else 0
    return rate + K.household_rate(params.lambda_h, comp_k, ck, comp_j, conf_j, size)


def _target_of(j, structure: ModelStructure, data: OutbreakData | None):
    if isinstance(j, tuple):
        return j
    if data is None:
        raise ValueError("an individual id needs the outbreak data to resolve it")
    ind = data.population.individual(j)
    return (ind.compound_before, ind.compound_after, ind.confession.code)


def pressure_on(j, t: float, params: ModelParams, events: AugmentedEvents,
                structure: ModelStructure, data: OutbreakData | None = None) -> PressureBreakdown:
    """Pressure on a susceptible at time t, split by infector.

    ``j`` is either an individual id (resolved through ``data``) or a
    ``(compound_before, compound_after, confession_code)`` tuple.
    """
    target = _target_of(j, structure, data)
    contrib = np.zeros(len(events))
    for k in range(len(events)):
        mult = infectivity_multiplier(k, t, events, params.b)
        if mult:
            contrib[k] = mult * pair_rate(params, structure, k, target, t)
    return PressureBreakdown(contrib, float(contrib.sum()))


def pressure_breakpoints(events: AugmentedEvents, move_day: float = 25.0) -> list[float]:
    """Times at which some pressure can change value."""
    times = {float(move_day)}
    times.update(float(x) for x in events.i)
    times.update(float(x) for x in events.r)
    times.update(float(x) for x in events.end)
    return sorted(times)


def integrated_pressure(j, window: tuple[float, float], params: ModelParams,
                        events: AugmentedEvents, structure: ModelStructure,
                        data: OutbreakData | None = None) -> float:
    """Exact integral of the pressure on j over a window, interval by interval."""
    t0, t1 = window
    if t1 < t0:
        raise ValueError("window must satisfy t0 <= t1")
    if t1 == t0:
        return 0.0
    cuts = [t0] + [x for x in pressure_breakpoints(events, structure.move_day) if t0 < x < t1] + [t1]
    total = 0.0
    for a, b in zip(cuts[:-1], cuts[1:]):
        total += (b - a) * pressure_on(j, a, params, events, structure, data).total
    return total


def _kernel_args(params: ModelParams, structure: ModelStructure):
    return (params.lambda_a, params.lambda_f, params.lambda_h, params.b,
            structure.gsize_before, structure.gsize_after, float(structure.N),
            float(structure.n_ftc), structure.move_day)


def log_likelihood_parts(params: ModelParams, events: AugmentedEvents, config,
                         theta: StageDurations, structure: ModelStructure) -> tuple[float, float, float, float]:
    """(exposure, avoidance, protection, stage-density) log terms."""
    ci = structure.config_index(config)
    return K.loglik_parts(
        events.e, events.i, events.r, events.tau, events.q, int(params.kappa),
        params.lambda_a, params.lambda_f, params.lambda_h, params.v, params.b, params.t_q,
        structure.case_conf, structure.case_cb, structure.case_ca, structure.case_vax,
        structure.cell_cb, structure.cell_ca, structure.cell_conf, structure.cell_vax,
        structure.cell_count[ci], structure.gsize_before, structure.gsize_after,
        float(structure.N), float(structure.n_ftc), structure.move_day, structure.T,
        theta.shapes, theta.scales,
    )


def log_likelihood(params: ModelParams, events: AugmentedEvents, config,
                   theta: StageDurations, structure: ModelStructure) -> float:
    """Augmented log-likelihood with every protection status summed out."""
    if len(events) != structure.m:
        raise ValueError(f"expected {structure.m} cases, got {len(events)}")
    if not 0 <= params.kappa < structure.m:
        raise ValueError(f"index case {params.kappa} out of range")
    if not np.allclose(events.r, structure.rash):
        raise ValueError("event rash times differ from the observed rash times")
    parts = log_likelihood_parts(params, events, config, theta, structure)
    if parts[0] == -math.inf:
        return -math.inf
    return float(sum(parts))


def cell_log_terms(params: ModelParams, events: AugmentedEvents, config,
                   structure: ModelStructure) -> np.ndarray:
    """Per-cell marginal contributions of never-infected individuals."""
    out = np.empty(len(structure.cell_cb))
    K.cell_log_terms(out, events.e, events.i, events.r, events.tau, events.q,
                     params.lambda_a, params.lambda_f, params.lambda_h, params.v, params.b,
                     structure.case_conf, structure.case_cb, structure.case_ca,
                     structure.cell_cb, structure.cell_ca, structure.cell_conf, structure.cell_vax,
                     structure.cell_count[structure.config_index(config)],
                     structure.gsize_before, structure.gsize_after, float(structure.N),
                     float(structure.n_ftc), structure.move_day, structure.T)
    return out


def marginal_protection_term(v: float, exposure: float) -> float:
    """log P(avoid infection) for a vaccinated person facing integrated pressure."""
    return math.log(v + (1.0 - v) * math.exp(-exposure))
