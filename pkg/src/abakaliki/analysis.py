"""Posterior post-processing and model assessment.

Reproduction numbers, who-infected-whom, exposure-time histograms,
protection probabilities, posterior predictive checks, the chi-squared discrepancy with its
ppp-value, and sensitivity sweeps over the stage-duration settings.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .disease_model import ModelParams, ModelStructure, StageDurations
from .mcmc import PARAM_NAMES, ChainResult, PriorSpec, ProposalConfig, run_chain
from .population import OUTSIDE, Population
from .simulator import SimConfig, SimPopulation, SimSummary, simulate_conditional

# -- reproduction numbers -------------------------------------------------------


@dataclass(frozen=True)
class ReproductionNumbers:
    R0: float
    RF: float
    Ra: float
    Rf: float
    Rh: float
    R0_post_control: float


def reproduction_numbers(params: ModelParams, theta: StageDurations = StageDurations()) -> ReproductionNumbers:
    """Expected secondary cases from a compound-dwelling FTC infective.

    The component numbers use one rate at a time; the post-control value
    swaps the mean rash period for the mean time to quarantine.
    """
    lam = params.lambda_a + params.lambda_f + params.lambda_h
    fever = params.b * theta.fever.mean
    per_rate = theta.rash.mean + fever
    return ReproductionNumbers(
        R0=per_rate * lam,
        RF=fever * lam,
        Ra=per_rate * params.lambda_a,
        Rf=per_rate * params.lambda_f,
        Rh=per_rate * params.lambda_h,
        R0_post_control=(theta.quarantine.mean + fever) * lam,
    )


def reproduction_samples(params: np.ndarray, theta: StageDurations = StageDurations()) -> dict[str, np.ndarray]:
    """Vectorised reproduction numbers for an (n, 6) parameter array."""
    p = np.asarray(params, dtype=float)
    la, lf, lh, b = p[:, 0], p[:, 1], p[:, 2], p[:, 4]
    lam = la + lf + lh
    fever = b * theta.fever.mean
    per_rate = theta.rash.mean + fever
    return {
        "R0": per_rate * lam, "RF": fever * lam,
        "Ra": per_rate * la, "Rf": per_rate * lf, "Rh": per_rate * lh,
        "R0_post_control": (theta.quarantine.mean + fever) * lam,
        "Ra_post_control": (theta.quarantine.mean + fever) * la,
        "Rf_post_control": (theta.quarantine.mean + fever) * lf,
        "Rh_post_control": (theta.quarantine.mean + fever) * lh,
    }


# -- posterior summaries ----------------------------------------------------------


@dataclass(frozen=True)
class Interval:
    mean: float
    median: float
    lower: float
    upper: float

    @classmethod
    def of(cls, x) -> "Interval":
        x = np.asarray(x, dtype=float)
        if x.size == 0:
            raise ValueError("cannot summarise an empty sample")
        lo, med, hi = np.percentile(x, [2.5, 50.0, 97.5])
        return cls(float(x.mean()), float(med), float(lo), float(hi))

    def as_dict(self) -> dict[str, float]:
        return {"mean": self.mean, "median": self.median, "lower": self.lower, "upper": self.upper}


@dataclass
class PosteriorSummary:
    """Mean, median and equal-tailed 95% interval per quantity.

    ``rows`` holds the six parameters followed by R0 and RF, each computed
    per sample; ``plug_in`` has R0 and RF evaluated at the posterior means.
    """

    rows: dict[str, Interval]
    n_samples: int
    plug_in: dict[str, float] = field(default_factory=dict)
    extra: dict[str, Interval] = field(default_factory=dict)

    @classmethod
    def from_chain(cls, result: ChainResult, theta: StageDurations = StageDurations()) -> "PosteriorSummary":
        if len(result) == 0:
            raise ValueError("no retained samples to summarise")
        rows = {name: Interval.of(result.params[:, k]) for k, name in enumerate(PARAM_NAMES)}
        rn = reproduction_samples(result.params, theta)
        rows["R0"] = Interval.of(rn["R0"])
        rows["RF"] = Interval.of(rn["RF"])
        means = result.params.mean(axis=0)
        plug = reproduction_numbers(ModelParams(*means), theta)
        extra = {k: Interval.of(v) for k, v in rn.items() if k not in ("R0", "RF")}
        return cls(rows, len(result), {"R0": plug.R0, "RF": plug.RF}, extra)

    def as_dict(self) -> dict:
        return {
            "n_samples": self.n_samples,
            "parameters": {k: v.as_dict() for k, v in self.rows.items()},
            "plug_in": dict(self.plug_in),
            "reproduction_components": {k: v.as_dict() for k, v in self.extra.items()},
        }


# -- who infected whom ---------------------------------------------------------------


@dataclass
class WhoInfectedWhom:
    """``matrix[j, k]``: posterior probability that case k infected case j.

    ``index_mass[j]`` is the probability that j was the index case, so
    ``matrix[j].sum() + index_mass[j] == 1``.
    """

    matrix: np.ndarray
    index_mass: np.ndarray
    case_ids: tuple = ()

    def modal_infector(self) -> np.ndarray:
        """Most probable infector per case, or -1 where the index mass wins."""
        best = self.matrix.argmax(axis=1)
        top = self.matrix[np.arange(len(best)), best]
        return np.where(self.index_mass >= top, -1, best)


def _rate_bases(structure: ModelStructure):
    """Unit-rate matrices [j, k] for the global and household terms."""
    m = structure.m
    N, n = float(structure.N), float(structure.n_ftc)
    ga = np.zeros((m, m))
    gf = np.zeros((m, m))
    hb = np.zeros((m, m))
    ha = np.zeros((m, m))
    for j in range(m):
        cj = int(structure.case_conf[j])
        for k in range(m):
            ck = int(structure.case_conf[k])
            ga[j, k] = K.global_rate(ck, cj, 1.0, 0.0, N, n)
            gf[j, k] = K.global_rate(ck, cj, 0.0, 1.0, N, n)
            for table, col, src in ((hb, structure.case_cb, structure.gsize_before),
                                    (ha, structure.case_ca, structure.gsize_after)):
                comp_k = int(col[k])
                size = int(src[comp_k, ck]) if comp_k != OUTSIDE else 0
                table[j, k] = K.household_rate(1.0, comp_k, ck, int(col[j]), cj, size)
    return ga, gf, hb, ha


def who_infected_whom(result: ChainResult, structure: ModelStructure, chunk: int = 512) -> WhoInfectedWhom:
    """Average over samples of each infector's share of the pressure at e_j."""
    m = structure.m
    n = len(result)
    if n == 0:
        raise ValueError("no retained samples")
    ga, gf, hb, ha = _rate_bases(structure)
    total = np.zeros((m, m))
    index_mass = np.zeros(m)
    for lo in range(0, n, chunk):
        lat = result.latent[lo:lo + chunk]
        par = result.params[lo:lo + chunk]
        kap = result.kappa[lo:lo + chunk]
        e = lat[:, :, 0][:, :, None]          # target j
        i = lat[:, :, 1][:, None, :]          # infector k
        r = lat[:, :, 2][:, None, :]
        end = np.minimum(lat[:, :, 3], lat[:, :, 4])[:, None, :]
        b = par[:, 4][:, None, None]
        # left limits at the exposure time: stage windows are (start, stop]
        mult = np.where((i < e) & (e <= r), b, 0.0) + np.where((r < e) & (e <= end), 1.0, 0.0)
        la, lf, lh = (par[:, c][:, None, None] for c in range(3))
        after = e > structure.move_day
        rate = la * ga + lf * gf + lh * np.where(after, ha, hb)
        contrib = mult * rate
        s = contrib.sum(axis=2, keepdims=True)
        rows = np.arange(len(kap))
        is_index = np.zeros((len(kap), m), dtype=bool)
        is_index[rows, kap] = True
        if np.any((s[:, :, 0] <= 0) & ~is_index):
            raise ValueError("a retained sample has a case with no feasible infector")
        share = np.divide(contrib, s, out=np.zeros_like(contrib), where=s > 0)
        share[is_index] = 0.0
        total += share.sum(axis=0)
        index_mass += is_index.sum(axis=0)
    return WhoInfectedWhom(total / n, index_mass / n, tuple(result.case_ids))


# -- exposure times ------------------------------------------------------------------


@dataclass
class ExposureHistogram:
    """Per-case probability mass of e_j in 1-day bins starting at ``edges[:-1]``."""

    edges: np.ndarray
    mass: np.ndarray
    means: np.ndarray
    case_ids: tuple = ()


def exposure_posterior(result: ChainResult, bin_width: float = 1.0) -> ExposureHistogram:
    e = result.latent[:, :, 0]
    if e.size == 0:
        raise ValueError("no retained samples")
    lo = math.floor(e.min() / bin_width) * bin_width
    hi = math.floor(e.max() / bin_width) * bin_width + bin_width
    edges = np.arange(lo, hi + 0.5 * bin_width, bin_width)
    idx = np.clip(((e - lo) // bin_width).astype(np.int64), 0, len(edges) - 2)
    mass = np.zeros((e.shape[1], len(edges) - 1))
    for j in range(e.shape[1]):
        mass[j] = np.bincount(idx[:, j], minlength=len(edges) - 1) / e.shape[0]
    return ExposureHistogram(edges, mass, e.mean(axis=0), tuple(result.case_ids))


# -- protection statuses ----------------------------------------------------------------


@dataclass
class ProtectionPosterior:
    """Posterior probability that a never-infected individual of each cell was protected.

    Unvaccinated cells carry 0.  ``cell_keys[c]`` is (compound_before,
    compound_after, confession code, vaccinated).
    """

    probability: np.ndarray
    cell_keys: tuple


def protection_posterior(result: ChainResult, structure: ModelStructure) -> ProtectionPosterior:
    """Average of v / (v + (1 - v) exp(-E)) over samples, E being the cell's exposure up to T.

    The statuses are integrated out of the likelihood, so this conditional
    probability is the Rao-Blackwellised posterior for each individual.
    """
    n = len(result)
    if n == 0:
        raise ValueError("no retained samples")
    s = structure
    n_cells = len(s.cell_cb)
    total = np.zeros(n_cells)
    vax = np.flatnonzero(s.cell_vax)
    for k in range(n):
        la, lf, lh, v, b, _ = result.params[k]
        lat = result.latent[k]
        for c in vax:
            E = K.integrated_pressure_upto(s.T, int(s.cell_conf[c]), int(s.cell_cb[c]), int(s.cell_ca[c]),
                                           -1, lat[:, 1], lat[:, 2], lat[:, 3], lat[:, 4],
                                           s.case_conf, s.case_cb, s.case_ca, la, lf, lh, b,
                                           s.gsize_before, s.gsize_after, float(s.N), float(s.n_ftc),
                                           s.move_day)
            total[c] += v / (v + (1.0 - v) * math.exp(-E))
    keys = tuple((int(s.cell_cb[c]), int(s.cell_ca[c]), int(s.cell_conf[c]), bool(s.cell_vax[c]))
                 for c in range(n_cells))
    return ProtectionPosterior(total / n, keys)


# -- posterior-driven simulation -----------------------------------------------------


def case_cell_key(structure: ModelStructure, j: int) -> tuple[int, int, int, bool]:
    return (int(structure.case_cb[j]), int(structure.case_ca[j]),
            int(structure.case_conf[j]), bool(structure.case_vax[j]))


def posterior_simulation_inputs(result: ChainResult, population: Population,
                                structure: ModelStructure, thin: int = 1):
    """(param_sets, populations) for :func:`simulator.batch_simulate`.

    Each retained sample contributes its parameters, its index exposure
    time and a population keyed by its vaccination config and the cell of
    its index case, so simulations start the way the sample says the
    outbreak started.
    """
    param_sets = []
    populations: dict = {}
    for k in range(0, len(result), thin):
        cfg_i = int(result.config_index[k])
        key = (cfg_i, case_cell_key(structure, int(result.kappa[k])))
        if key not in populations:
            populations[key] = SimPopulation.from_population(population, result.configs[cfg_i], key[1])
        param_sets.append((result.params_at(k), key))
    return param_sets, populations


# -- chi-squared discrepancy and ppp ----------------------------------------------------


def anchored_ranks(rash) -> np.ndarray:
    """Sorted rash times with the first one moved to zero."""
    r = np.sort(np.asarray(rash, dtype=float))
    return r - r[0]


@dataclass(frozen=True)
class RankMoments:
    mean: np.ndarray
    var: np.ndarray


def conditional_rank_moments(config: SimConfig, target: int, M1: int) -> RankMoments:
    """Per-rank mean and variance of anchored rash times over M1 outbreaks of size ``target``."""
    if M1 < 2:
        raise ValueError("need at least two conditional outbreaks")
    ranks = np.empty((M1, target))
    for s in range(M1):
        res = simulate_conditional(config if s == 0 else _unseeded(config), target)
        ranks[s] = anchored_ranks(res.rash)
    return RankMoments(ranks.mean(axis=0), ranks.var(axis=0, ddof=1))


def _unseeded(config: SimConfig) -> SimConfig:
    return SimConfig(config.params, config.population, config.theta, None)


def discrepancy(r, moments: RankMoments, min_var: float = 1e-9) -> tuple[float, tuple[int, ...]]:
    """Sum of squared standardised rank deviations; low-variance ranks are skipped."""
    r = anchored_ranks(r)
    if len(r) != len(moments.mean):
        raise ValueError(f"expected {len(moments.mean)} rash times, got {len(r)}")
    keep = moments.var >= min_var
    d = float(np.sum((r[keep] - moments.mean[keep]) ** 2 / moments.var[keep]))
    return d, tuple(int(x) for x in np.flatnonzero(~keep))


def chi_squared_discrepancy(r, config: SimConfig, M1: int = 100) -> float:
    """D(r, Phi) with the moments estimated from M1 conditional outbreaks."""
    moments = conditional_rank_moments(config, len(r), M1)
    return discrepancy(r, moments)[0]


@dataclass
class DiscrepancyReport:
    d_obs: np.ndarray
    d_rep: np.ndarray
    ppp: float
    M: int
    M1: int
    excluded_ranks: tuple = ()


def ppp_from_discrepancies(d_obs, d_rep) -> float:
    d_obs = np.asarray(d_obs, dtype=float)
    d_rep = np.asarray(d_rep, dtype=float)
    if d_obs.size == 0:
        raise ValueError("no discrepancies")
    return float(np.mean(d_rep >= d_obs))


def ppp_value(draws, r_obs, M1: int = 100, seed=None,
              theta: StageDurations = StageDurations()) -> DiscrepancyReport:
    """Posterior predictive p-value of the chi-squared discrepancy.

    ``draws`` is a sequence of ``(ModelParams, SimPopulation)`` pairs, one
    per posterior draw.  Each draw gets its own moments from M1 conditional
    outbreaks plus one further conditional replicate.
    """
    r_obs = np.asarray(r_obs, dtype=float)
    target = len(r_obs)
    seeds = np.random.SeedSequence(seed).generate_state(max(1, len(draws)), dtype=np.uint32)
    d_obs, d_rep, excluded = [], [], set()
    for (params, pop), s in zip(draws, seeds):
        cfg = SimConfig(params, pop, theta, int(s))
        moments = conditional_rank_moments(cfg, target, M1)
        rep = simulate_conditional(_unseeded(cfg), target).rash
        do, ex = discrepancy(r_obs, moments)
        dr, _ = discrepancy(rep, moments)
        d_obs.append(do)
        d_rep.append(dr)
        excluded.update(ex)
    return DiscrepancyReport(np.array(d_obs), np.array(d_rep), ppp_from_discrepancies(d_obs, d_rep),
                             len(draws), M1, tuple(sorted(excluded)))


# -- predictive checks -------------------------------------------------------------------


@dataclass
class Histogram:
    edges: np.ndarray
    counts: np.ndarray
    mean: float

    @classmethod
    def of(cls, values, width: float = 1.0) -> "Histogram":
        x = np.asarray(values, dtype=float)
        if x.size == 0:
            return cls(np.array([0.0, width]), np.zeros(1, dtype=np.int64), math.nan)
        lo = math.floor(x.min() / width) * width
        hi = math.floor(x.max() / width) * width + width
        edges = np.arange(lo, hi + 0.5 * width, width)
        counts, _ = np.histogram(x, bins=edges)
        return cls(edges, counts, float(x.mean()))


@dataclass
class PredictiveReport:
    final_size: Histogram
    mover_final_size: Histogram
    duration: Histogram
    n_runs: int
    n_mover_runs: int
    ftc_fraction: float
    outside_fraction: float
    envelope: np.ndarray | None = None  # rows: day, min, 2.5%, median, 97.5%, max

    def as_dict(self) -> dict:
        return {
            "n_runs": self.n_runs, "n_mover_runs": self.n_mover_runs,
            "final_size_mean": self.final_size.mean,
            "mover_final_size_mean": self.mover_final_size.mean,
            "duration_mean": self.duration.mean,
            "ftc_fraction": self.ftc_fraction, "outside_fraction": self.outside_fraction,
        }


def cumulative_envelope(rash_sets, days=None) -> np.ndarray:
    """Pointwise quantiles of cumulative case counts, time anchored at first rash."""
    ranks = [anchored_ranks(r) for r in rash_sets]
    if not ranks:
        raise ValueError("no outbreaks for the envelope")
    if days is None:
        days = np.arange(0.0, math.ceil(max(r[-1] for r in ranks)) + 1.0)
    cum = np.array([np.searchsorted(r, days, side="right") for r in ranks], dtype=float)
    q = np.percentile(cum, [0.0, 2.5, 50.0, 97.5, 100.0], axis=0)
    return np.column_stack([days, q.T])


def predictive_checks(summaries: list[SimSummary], conditional_rash=None,
                      min_runs: int = 1000) -> PredictiveReport:
    """Final size, duration and case-category statistics of a simulation batch.

    Category fractions are averaged over outbreaks.  ``conditional_rash``
    optionally holds rash-time vectors of fixed-size outbreaks for the
    cumulative-case envelope.
    """
    if len(summaries) < min_runs:
        raise ValueError(f"need at least {min_runs} simulations, got {len(summaries)}")
    fs = np.array([s.final_size for s in summaries], dtype=float)
    dur = np.array([s.duration for s in summaries], dtype=float)
    mover = np.array([s.mover_infected for s in summaries], dtype=bool)
    ftc = np.array([s.n_ftc for s in summaries], dtype=float)
    out = np.array([s.n_outside for s in summaries], dtype=float)
    ok = fs > 0
    env = cumulative_envelope(conditional_rash) if conditional_rash else None
    return PredictiveReport(
        Histogram.of(fs), Histogram.of(fs[mover]), Histogram.of(dur),
        len(summaries), int(mover.sum()),
        float(np.mean(ftc[ok] / fs[ok])), float(np.mean(out[ok] / fs[ok])), env,
    )


# -- sensitivity ---------------------------------------------------------------------------


DEFAULT_SENSITIVITY_GRID: tuple[dict, ...] = (
    {},
    {"mu_R": 12.0},
    {"mu_R": 20.0},
    {"mu_Q": 1.0, "sigma_Q": 1.0},
    {"mu_Q": 4.0, "sigma_Q": 4.0},
)


def setting_label(overrides: dict) -> str:
    if not overrides:
        return "baseline"
    return ",".join(f"{k}={v:g}" for k, v in sorted(overrides.items()))


@dataclass
class SensitivityResult:
    label: str
    theta: StageDurations
    summary: PosteriorSummary
    params: np.ndarray
    R0: np.ndarray


def sensitivity_sweep(structure: ModelStructure, grid=DEFAULT_SENSITIVITY_GRID,
                      priors: PriorSpec = PriorSpec(), proposal: ProposalConfig | None = None,
                      iterations: int = 100_000, burn_in: int = 10_000, thinning: int = 10,
                      seed=None, progress=None) -> list[SensitivityResult]:
    """One inference run per stage-duration setting, all sharing the seed."""
    grid = list(grid)
    if not grid:
        raise ValueError("sensitivity grid is empty")
    out = []
    for overrides in grid:
        theta = StageDurations.from_values(**overrides)
        res = run_chain(structure, theta, priors, proposal or ProposalConfig(),
                        iterations=iterations, burn_in=burn_in, thinning=thinning, seed=seed,
                        progress=progress)
        summ = PosteriorSummary.from_chain(res, theta)
        out.append(SensitivityResult(setting_label(overrides), theta, summ, res.params,
                                     reproduction_samples(res.params, theta)["R0"]))
    return out


def density_table(results: list[SensitivityResult], bins: int = 50) -> dict[str, np.ndarray]:
    """Overlaid histogram densities on a shared grid, one column per setting."""
    tables = {}
    names = list(PARAM_NAMES) + ["R0"]
    for c, name in enumerate(names):
        cols = [r.R0 if name == "R0" else r.params[:, c] for r in results]
        lo = min(float(np.min(x)) for x in cols)
        hi = max(float(np.max(x)) for x in cols)
        if hi <= lo:
            hi = lo + 1.0
        edges = np.linspace(lo, hi, bins + 1)
        mids = 0.5 * (edges[:-1] + edges[1:])
        dens = [np.histogram(x, bins=edges, density=True)[0] for x in cols]
        tables[name] = np.column_stack([mids] + dens)
    return tables
