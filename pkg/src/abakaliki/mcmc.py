"""Data-augmentation Metropolis-within-Gibbs sampler.

One sweep updates each scalar parameter with an adaptive random walk,
refreshes the latent times of every case with an independence proposal
drawn from the stage-duration distributions, tries to swap the index case
and tries a new vaccination configuration.  Because the event-time
proposals are drawn from exactly the stage densities that appear in the
likelihood, those densities cancel and only the transmission part of the
likelihood enters the acceptance ratio.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .disease_model import AugmentedEvents, ModelParams, ModelStructure, StageDurations

log = logging.getLogger(__name__)

PARAM_NAMES = ("lambda_a", "lambda_f", "lambda_h", "v", "b", "t_q")
UPDATE_NAMES = PARAM_NAMES + ("t_q_shift", "case_times", "kappa", "config")


class InitialisationError(RuntimeError):
    pass


@dataclass(frozen=True)
class PriorSpec:
    """Gamma prior on each rate (by mean and sd); flat priors on v, b and t_q.

    The default sd equals the mean, i.e. an exponential with mean 1000,
    which is flat over any plausible range of the rates.  A much larger
    sd puts a ~1/lambda shape on the rates and then the posterior mass
    escapes along b -> infinity, so ``b_max`` and ``truncate_tq`` exist
    to bound that escape when experimenting with such priors.
    """

    rate_mean: float = 1e3
    rate_sd: float = 1e3
    truncate_tq: bool = False
    b_max: float = math.inf

    @property
    def rate_shape(self) -> float:
        return (self.rate_mean / self.rate_sd) ** 2

    @property
    def rate_scale(self) -> float:
        return self.rate_sd ** 2 / self.rate_mean

    def log_rate_prior(self, lam: float) -> float:
        if lam <= 0:
            return -math.inf
        return (self.rate_shape - 1.0) * math.log(lam) - lam / self.rate_scale


@dataclass
class ProposalConfig:
    scales: dict = field(default_factory=lambda: {
        "lambda_a": 0.6, "lambda_f": 0.5, "lambda_h": 0.3, "v": 0.6, "b": 1.0,
        "t_q": 0.5, "t_q_shift": 2.0,
    })
    case_updates: int | None = None  # per sweep; None means one per case
    tq_shift: bool = True
    kappa_swap: bool = True
    adapt: bool = True
    target_accept: float = 0.234

    def __post_init__(self):
        for key, val in self.scales.items():
            if not val >= 0:
                raise ValueError(f"proposal scale for {key} must be non-negative")


@dataclass
class ChainState:
    params: ModelParams
    events: AugmentedEvents
    config_index: int
    loglik: float = -math.inf
    # (exposure, avoidance, protection, density)
    parts: tuple = (0.0, 0.0, 0.0, 0.0)

    @property
    def rest(self) -> float:
        """Log-likelihood without the stage densities."""
        return self.parts[0] + self.parts[1] + self.parts[2]


class Sampler:
    """Holds fixed inputs and the chain's generator; methods mutate a state."""

    def __init__(self, structure: ModelStructure, theta: StageDurations = StageDurations(),
                 priors: PriorSpec = PriorSpec(), proposal: ProposalConfig | None = None,
                 rng: np.random.Generator | None = None):
        self.s = structure
        self.theta = theta
        self.priors = priors
        self.proposal = proposal or ProposalConfig()
        self.rng = rng if rng is not None else np.random.default_rng()
        self.shapes = theta.shapes
        self.scales = theta.scales
        self.accepted = {k: 0 for k in UPDATE_NAMES}
        self.tried = {k: 0 for k in UPDATE_NAMES}

    # -- likelihood -------------------------------------------------------

    def parts(self, p: ModelParams, ev: AugmentedEvents, config_index: int):
        s = self.s
        return K.loglik_parts(
            ev.e, ev.i, ev.r, ev.tau, ev.q, p.kappa,
            p.lambda_a, p.lambda_f, p.lambda_h, p.v, p.b, p.t_q,
            s.case_conf, s.case_cb, s.case_ca, s.case_vax,
            s.cell_cb, s.cell_ca, s.cell_conf, s.cell_vax, s.cell_count[config_index],
            s.gsize_before, s.gsize_after, float(s.N), float(s.n_ftc), s.move_day, s.T,
            self.shapes, self.scales,
        )

    def evaluate(self, state: ChainState) -> ChainState:
        parts = self.parts(state.params, state.events, state.config_index)
        state.parts = parts
        state.loglik = -math.inf if parts[0] == -math.inf else sum(parts)
        return state

    def _record(self, name, ok):
        self.tried[name] += 1
        self.accepted[name] += ok

    def _accept(self, log_ratio: float) -> bool:
        if log_ratio >= 0:
            return True
        if log_ratio == -math.inf or math.isnan(log_ratio):
            return False
        return math.log(self.rng.random()) < log_ratio

    # -- initial state ----------------------------------------------------

    def draw_case_block(self, j: int, r: float, t_q: float):
        st = self.theta
        rng = self.rng
        i = r - st.fever.sample(rng)
        e = i - st.incubation.sample(rng)
        tau = r + st.rash.sample(rng)
        q = max(r, t_q) + st.quarantine.sample(rng)
        return e, i, tau, q

    def init_state(self, max_attempts: int = 10000, t_q=50.0, rate=0.1, v=0.8, b=0.5) -> ChainState:
        s = self.s
        m = s.m
        r = s.rash.copy()
        kappa = int(np.argmin(r))
        params = ModelParams(rate, rate, rate, v, b, t_q, kappa)
        ev = AugmentedEvents(np.zeros(m), np.zeros(m), r, np.zeros(m), np.zeros(m))
        for j in range(m):
            ev.e[j], ev.i[j], ev.tau[j], ev.q[j] = self.draw_case_block(j, r[j], t_q)
        state = ChainState(params, ev, 0)
        # redraw cases whose exposure has no infector (or precedes the index)
        for attempt in range(max_attempts):
            self.evaluate(state)
            if state.loglik > -math.inf:
                state.params = params.replace(e_kappa=float(ev.e[kappa]))
                return state
            bad = self._unsupported_cases(state)
            if not bad:
                bad = list(range(m))
            for j in bad:
                ev.e[j], ev.i[j], ev.tau[j], ev.q[j] = self.draw_case_block(j, r[j], t_q)
        raise InitialisationError(f"no finite-likelihood start after {max_attempts} attempts")

    def _unsupported_cases(self, state: ChainState) -> list[int]:
        s, p, ev = self.s, state.params, state.events
        bad = []
        for j in range(s.m):
            if ev.e[j] < ev.e[p.kappa]:
                bad.append(j)
                continue
            if j == p.kappa:
                continue
            lam = K.exposure_pressure(j, ev.e, ev.i, ev.r, ev.tau, ev.q, s.case_conf, s.case_cb,
                                      s.case_ca, p.lambda_a, p.lambda_f, p.lambda_h, p.b,
                                      s.gsize_before, s.gsize_after, float(s.N),
                                      float(s.n_ftc), s.move_day)
            if lam <= 0:
                bad.append(j)
        return bad

    # -- scalar updates ---------------------------------------------------

    def _try_params(self, state: ChainState, name: str, new: ModelParams, log_extra: float) -> bool:
        parts = self.parts(new, state.events, state.config_index)
        if parts[0] == -math.inf:
            self._record(name, False)
            return False
        ll = sum(parts)
        ok = self._accept(ll - state.loglik + log_extra)
        if ok:
            state.params, state.parts, state.loglik = new, parts, ll
        self._record(name, ok)
        return ok

    def update_rate(self, state: ChainState, which: str, scale: float | None = None) -> bool:
        scale = self.proposal.scales[which] if scale is None else scale
        old = getattr(state.params, which)
        new = old * math.exp(scale * self.rng.standard_normal())
        if new <= 0.0 or not math.isfinite(new):
            self._record(which, False)
            return False
        log_extra = (self.priors.log_rate_prior(new) - self.priors.log_rate_prior(old)
                     + math.log(new) - math.log(old))
        return self._try_params(state, which, state.params.replace(**{which: new}), log_extra)

    def update_v(self, state: ChainState, scale: float | None = None) -> bool:
        scale = self.proposal.scales["v"] if scale is None else scale
        v = state.params.v
        z = math.log(v) - math.log1p(-v) + scale * self.rng.standard_normal()
        new = 1.0 / (1.0 + math.exp(-z))
        if not 0.0 < new < 1.0:
            self._record("v", False)
            return False
        log_extra = math.log(new) + math.log1p(-new) - math.log(v) - math.log1p(-v)
        return self._try_params(state, "v", state.params.replace(v=new), log_extra)

    def update_b(self, state: ChainState, scale: float | None = None) -> bool:
        scale = self.proposal.scales["b"] if scale is None else scale
        old = state.params.b
        new = old * math.exp(scale * self.rng.standard_normal())
        if not 0.0 < new < self.priors.b_max:
            self._record("b", False)
            return False
        return self._try_params(state, "b", state.params.replace(b=new),
                                math.log(new) - math.log(old))

    def _tq_allowed(self, t: float) -> bool:
        if t <= 0:
            return False
        return not (self.priors.truncate_tq and t > self.s.T)

    def update_tq(self, state: ChainState, scale: float | None = None) -> bool:
        scale = self.proposal.scales["t_q"] if scale is None else scale
        new = state.params.t_q + scale * self.rng.standard_normal()
        if not self._tq_allowed(new):
            self._record("t_q", False)
            return False
        return self._try_params(state, "t_q", state.params.replace(t_q=new), 0.0)

    def update_tq_shift(self, state: ChainState, scale: float | None = None) -> bool:
        """Move t_q and drag every quarantine time so each delay is unchanged.

        The map (t_q, q) -> (t_q + d, q + g(t_q, d)) is a volume-preserving
        involution family, so the proposal is symmetric.
        """
        scale = self.proposal.scales["t_q_shift"] if scale is None else scale
        p, ev = state.params, state.events
        new_tq = p.t_q + scale * self.rng.standard_normal()
        if not self._tq_allowed(new_tq):
            self._record("t_q_shift", False)
            return False
        old_q = ev.q.copy()
        ev.q += np.maximum(ev.r, new_tq) - np.maximum(ev.r, p.t_q)
        new = p.replace(t_q=new_tq)
        parts = self.parts(new, ev, state.config_index)
        ok = parts[0] != -math.inf
        if ok:
            ll = sum(parts)
            ok = self._accept(ll - state.loglik)
        if ok:
            state.params, state.parts, state.loglik = new, parts, ll
        else:
            ev.q[:] = old_q
        self._record("t_q_shift", ok)
        return ok

    # -- latent times -----------------------------------------------------

    def update_case_times(self, state: ChainState, j: int) -> bool:
        ev = state.events
        old = (ev.e[j], ev.i[j], ev.tau[j], ev.q[j])
        ev.e[j], ev.i[j], ev.tau[j], ev.q[j] = self.draw_case_block(j, ev.r[j], state.params.t_q)
        parts = self.parts(state.params, ev, state.config_index)
        ok = parts[0] != -math.inf
        if ok:
            rest = parts[0] + parts[1] + parts[2]
            ok = self._accept(rest - state.rest)
        if ok:
            state.parts, state.loglik = parts, sum(parts)
            if j == state.params.kappa:
                state.params = state.params.replace(e_kappa=float(ev.e[j]))
        else:
            ev.e[j], ev.i[j], ev.tau[j], ev.q[j] = old
        self._record("case_times", ok)
        return ok

    def update_kappa(self, state: ChainState) -> bool:
        m = self.s.m
        if m < 2:
            return False
        p, ev = state.params, state.events
        old_k = p.kappa
        new_k = int(self.rng.integers(m - 1))
        if new_k >= old_k:
            new_k += 1
        saved = {k: (ev.e[k], ev.i[k]) for k in (old_k, new_k)}
        st = self.theta
        for k in (old_k, new_k):
            ev.i[k] = ev.r[k] - st.fever.sample(self.rng)
            ev.e[k] = ev.i[k] - st.incubation.sample(self.rng)
        new = p.replace(kappa=new_k, e_kappa=float(ev.e[new_k]))
        parts = self.parts(new, ev, state.config_index)
        ok = parts[0] != -math.inf
        if ok:
            ok = self._accept(parts[0] + parts[1] + parts[2] - state.rest)
        if ok:
            state.params, state.parts, state.loglik = new, parts, sum(parts)
        else:
            for k, (e, i) in saved.items():
                ev.e[k], ev.i[k] = e, i
        self._record("kappa", ok)
        return ok

    def update_vax_config(self, state: ChainState) -> bool:
        n = len(self.s.configs)
        new_c = int(self.rng.integers(n))
        parts = self.parts(state.params, state.events, new_c)
        ok = parts[0] != -math.inf
        if ok:
            ok = self._accept(sum(parts) - state.loglik)
        if ok:
            state.config_index, state.parts, state.loglik = new_c, parts, sum(parts)
        self._record("config", ok)
        return ok

    # -- sweeps -----------------------------------------------------------

    def sweep(self, state: ChainState) -> None:
        for name in ("lambda_a", "lambda_f", "lambda_h"):
            self.update_rate(state, name)
        self.update_v(state)
        self.update_b(state)
        self.update_tq(state)
        if self.proposal.tq_shift:
            self.update_tq_shift(state)
        m = self.s.m
        n_case = self.proposal.case_updates
        if n_case is None or n_case == m:
            order = self.rng.permutation(m)
        else:
            order = self.rng.integers(m, size=n_case)
        for j in order:
            self.update_case_times(state, int(j))
        if self.proposal.kappa_swap:
            self.update_kappa(state)
        self.update_vax_config(state)

    def acceptance_rates(self) -> dict[str, float]:
        return {k: (self.accepted[k] / self.tried[k] if self.tried[k] else float("nan"))
                for k in UPDATE_NAMES}


@dataclass
class ChainResult:
    iters: np.ndarray
    params: np.ndarray  # (n, 6) in PARAM_NAMES order
    kappa: np.ndarray
    config_index: np.ndarray
    loglik: np.ndarray
    # (n, m, 5): e, i, r, tau, q
    latent: np.ndarray
    acceptance: dict
    configs: tuple
    case_ids: tuple
    final_scales: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.iters)

    def column(self, name: str) -> np.ndarray:
        return self.params[:, PARAM_NAMES.index(name)]

    @property
    def e_kappa(self) -> np.ndarray:
        return self.latent[np.arange(len(self)), self.kappa, 0]

    def params_at(self, k: int) -> ModelParams:
        vals = dict(zip(PARAM_NAMES, (float(x) for x in self.params[k])))
        return ModelParams(**vals, kappa=int(self.kappa[k]), e_kappa=float(self.e_kappa[k]))

    def events_at(self, k: int) -> AugmentedEvents:
        e, i, r, tau, q = (self.latent[k, :, c].copy() for c in range(5))
        return AugmentedEvents(e, i, r, tau, q)

    def config_at(self, k: int):
        return self.configs[int(self.config_index[k])]

    @classmethod
    def concatenate(cls, results: list["ChainResult"]) -> "ChainResult":
        first = results[0]
        acc = {}
        for k in first.acceptance:
            vals = [r.acceptance[k] for r in results if not math.isnan(r.acceptance[k])]
            acc[k] = float(np.mean(vals)) if vals else math.nan
        return cls(np.concatenate([r.iters for r in results]),
                   np.concatenate([r.params for r in results]),
                   np.concatenate([r.kappa for r in results]),
                   np.concatenate([r.config_index for r in results]),
                   np.concatenate([r.loglik for r in results]),
                   np.concatenate([r.latent for r in results]),
                   acc, first.configs, first.case_ids)


@dataclass
class Sample:
    iteration: int
    params: ModelParams
    events: AugmentedEvents
    config: object
    loglik: float


def samples(result: ChainResult):
    for k in range(len(result)):
        yield Sample(int(result.iters[k]), result.params_at(k), result.events_at(k),
                     result.config_at(k), float(result.loglik[k]))


def _adapt(sampler: Sampler, before: dict, sweep: int):
    """Robbins-Monro step on the log proposal scales toward the target rate."""
    gain = 1.0 / (sweep + 1) ** 0.6
    target = sampler.proposal.target_accept
    for name, (acc0, try0) in before.items():
        tried = sampler.tried[name] - try0
        if not tried:
            continue
        rate = (sampler.accepted[name] - acc0) / tried
        sc = sampler.proposal.scales[name]
        if sc == 0.0:
            continue
        sampler.proposal.scales[name] = float(min(max(sc * math.exp(gain * (rate - target)), 1e-4), 50.0))


def run_chain(structure: ModelStructure, theta: StageDurations = StageDurations(),
              priors: PriorSpec = PriorSpec(), proposal: ProposalConfig | None = None,
              iterations: int = 100_000, burn_in: int = 10_000, thinning: int = 10,
              seed=None, check_every: int = 1000, init: ChainState | None = None,
              progress=None) -> ChainResult:
    """Run one chain; ``iterations`` counts sweeps including burn-in."""
    if thinning < 1:
        raise ValueError("thinning must be >= 1")
    proposal = ProposalConfig(**{**vars(proposal or ProposalConfig())})
    proposal.scales = dict(proposal.scales)
    sampler = Sampler(structure, theta, priors, proposal, np.random.default_rng(seed))
    m = structure.m
    keep = [it for it in range(iterations) if it >= burn_in and (it - burn_in) % thinning == 0]
    n = len(keep)
    out = ChainResult(np.array(keep, dtype=np.int64), np.empty((n, 6)), np.empty(n, dtype=np.int64),
                      np.empty(n, dtype=np.int64), np.empty(n), np.empty((n, m, 5)), {},
                      structure.configs, structure.case_ids)
    if iterations <= 0:
        out.acceptance = sampler.acceptance_rates()
        return out
    state = init if init is not None else sampler.init_state()
    sampler.evaluate(state)
    adapt_names = list(PARAM_NAMES) + (["t_q_shift"] if proposal.tq_shift else [])
    row = 0
    for it in range(iterations):
        adapting = proposal.adapt and it < burn_in
        if adapting:
            before = {k: (sampler.accepted[k], sampler.tried[k]) for k in adapt_names}
        if it == burn_in:
            # acceptance is reported for the post-burn-in phase
            sampler.accepted = {k: 0 for k in UPDATE_NAMES}
            sampler.tried = {k: 0 for k in UPDATE_NAMES}
        sampler.sweep(state)
        if adapting:
            _adapt(sampler, before, it)
        if check_every and (it + 1) % check_every == 0:
            fresh = sum(sampler.parts(state.params, state.events, state.config_index))
            if not math.isclose(fresh, state.loglik, rel_tol=1e-8, abs_tol=1e-8):
                raise AssertionError(f"cached log-likelihood {state.loglik} != fresh {fresh}")
            if progress is not None:
                progress(it + 1, iterations, state)
        if row < n and it == keep[row]:
            p = state.params
            out.params[row] = (p.lambda_a, p.lambda_f, p.lambda_h, p.v, p.b, p.t_q)
            out.kappa[row] = p.kappa
            out.config_index[row] = state.config_index
            out.loglik[row] = state.loglik
            ev = state.events
            out.latent[row] = np.stack([ev.e, ev.i, ev.r, ev.tau, ev.q], axis=1)
            row += 1
    out.acceptance = sampler.acceptance_rates()
    out.final_scales = dict(proposal.scales)
    return out


# -- diagnostics --------------------------------------------------------------


def autocorrelation(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    n = len(x)
    x = x - x.mean()
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, size)
    acov = np.fft.irfft(f * np.conjugate(f), size)[:n]
    if acov[0] == 0:
        out = np.zeros(n)
        out[0] = 1.0
        return out
    return acov / acov[0]


def effective_sample_size(trace) -> float:
    """Geyer's initial monotone sequence estimator."""
    x = np.asarray(trace, dtype=float)
    n = len(x)
    if n < 10:
        raise ValueError("trace too short for an ESS estimate (need >= 10)")
    if np.ptp(x) == 0:
        return 1.0
    rho = autocorrelation(x)
    pairs = rho[: n - n % 2].reshape(-1, 2).sum(axis=1)
    total = 0.0
    prev = math.inf
    for gamma in pairs:
        if gamma <= 0:
            break
        gamma = min(gamma, prev)
        total += gamma
        prev = gamma
    tau = -1.0 + 2.0 * total
    # antithetic traces can drive tau towards zero; cap ESS at n * log10(n)
    return float(n / max(tau, 1.0 / math.log10(n)))
