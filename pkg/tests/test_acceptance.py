"""Acceptance criteria, one test (and one PASS/FAIL line) per criterion.

The chain and the simulation batches are shared through module fixtures.
The full module takes roughly ten minutes on one core.
"""

import math
import time

import numpy as np
import pytest

from abakaliki import _kernels as K
from abakaliki.analysis import (
    posterior_simulation_inputs, ppp_value, predictive_checks, reproduction_samples, who_infected_whom,
)
from abakaliki.cli import main
from abakaliki.disease_model import AugmentedEvents, ModelParams, ModelStructure, StageDurations, log_likelihood
from abakaliki.mcmc import PriorSpec, run_chain
from abakaliki.simulator import SimPopulation, batch_simulate

import geweke
import oracles
from conftest import record_criterion

pytestmark = pytest.mark.slow

CHAIN_SEED = 7
SIM_SEED = 2024
N_SIM = 5000


@pytest.fixture(scope="module")
def chain(structure):
    t0 = time.time()
    res = run_chain(structure, iterations=100_000, burn_in=10_000, thinning=10, seed=CHAIN_SEED)
    res.wall_clock = time.time() - t0
    return res


@pytest.fixture(scope="module")
def sim_inputs(chain, data, structure):
    return posterior_simulation_inputs(chain, data.population, structure)


@pytest.fixture(scope="module")
def predictive(sim_inputs):
    param_sets, pops = sim_inputs
    runs = batch_simulate(param_sets, N_SIM, seed=SIM_SEED, populations=pops)
    return predictive_checks(runs)


def within(x, target, tol):
    return abs(x - target) <= tol


def test_criterion_01_posterior_means(chain):
    targets = {"lambda_a": (0.041, 0.02), "lambda_f": (0.063, 0.02), "lambda_h": (0.358, 0.05),
               "v": (0.808, 0.05), "b": (0.522, 0.15), "t_q": (50.4, 2.0)}
    means = {k: float(chain.column(k).mean()) for k in targets}
    rn = reproduction_samples(chain.params)
    means["R0"] = float(rn["R0"].mean())
    means["RF"] = float(rn["RF"].mean())
    targets.update({"R0": (7.96, 0.75), "RF": (0.53, 0.20)})
    ok = {k: within(means[k], *targets[k]) for k in targets}
    detail = ", ".join(f"{k} {means[k]:.4g}{'' if ok[k] else '(!)'}" for k in targets)
    passed = record_criterion(1, all(ok.values()),
                              f"{detail}; {len(chain)} samples in {chain.wall_clock:.0f}s")
    assert passed


def test_criterion_02_final_size(predictive):
    fs, mv = predictive.final_size.mean, predictive.mover_final_size.mean
    passed = record_criterion(2, within(fs, 23.5, 2.0) and within(mv, 29.3, 2.0),
                              f"final size {fs:.2f} (23.5 +- 2), mover subset {mv:.2f} (29.3 +- 2) "
                              f"over {predictive.n_mover_runs} runs")
    assert passed


def test_criterion_03_duration(predictive):
    d = predictive.duration.mean
    assert record_criterion(3, within(d, 76.8, 4.0), f"mean duration {d:.2f} days (76.8 +- 4)")


def test_criterion_04_fractions(predictive):
    f, o = predictive.ftc_fraction, predictive.outside_fraction
    passed = record_criterion(4, within(f, 0.91, 0.03) and within(o, 0.20, 0.05),
                              f"FTC fraction {f:.3f} (0.91 +- 0.03), outside {o:.3f} (0.20 +- 0.05)")
    assert passed


def test_criterion_05_ppp(sim_inputs, structure):
    param_sets, pops = sim_inputs
    rng = np.random.default_rng(5)
    picks = rng.choice(len(param_sets), size=100, replace=False)
    draws = [(param_sets[k][0], pops[param_sets[k][1]]) for k in picks]
    rep = ppp_value(draws, structure.rash, M1=100, seed=6)
    assert record_criterion(5, 0.2 <= rep.ppp <= 0.7,
                            f"ppp {rep.ppp:.2f} with M = M1 = 100 (band [0.2, 0.7]); "
                            f"excluded ranks {list(rep.excluded_ranks)}")


def test_criterion_06_tq_experiments(sim_inputs):
    param_sets, pops = sim_inputs
    targets = ((50.0, 24.0), (100.0, 44.0), (200.0, 64.0), (None, 86.0))
    parts, ok = [], []
    for tq, target in targets:
        runs = batch_simulate(param_sets, N_SIM, seed=SIM_SEED, populations=pops, tq_override=tq)
        mean = float(np.mean([r.final_size for r in runs]))
        good = abs(mean - target) <= 0.15 * target
        ok.append(good)
        parts.append(f"t_q {tq if tq is not None else 'none'}: {mean:.1f} vs {target:g}{'' if good else '(!)'}")
    assert record_criterion(6, all(ok), "; ".join(parts) + " (each +- 15%)")


def _toy(inds, cases, ev, params):
    s = ModelStructure.from_individuals(inds, cases, [x[2] for x in ev], move_day=params["move_day"])
    events = AugmentedEvents(*(np.array([x[c] for x in ev]) for c in range(5)))
    p = ModelParams(params["la"], params["lf"], params["lh"], params["v"], params["b"], params["tq"], 0)
    return s, events, p


def test_criterion_07_likelihood_oracle():
    rng = np.random.default_rng(77)
    theta = StageDurations()
    t0 = time.time()
    worst, mismatches, n_finite = 0.0, 0, 0
    for _ in range(1000):
        inds, cases, ev, params = oracles.random_toy(rng, max_vaccinated=10)
        s, events, p = _toy(inds, cases, ev, params)
        ref = oracles.brute_force_loglik(inds, cases, ev, 0, params, theta, float(s.T))
        got = log_likelihood(p, events, None, theta, s)
        if math.isinf(ref) or math.isinf(got):
            mismatches += got != ref
            continue
        n_finite += 1
        worst = max(worst, abs(got - ref) / abs(ref))
    passed = worst <= 1e-10 and mismatches == 0
    assert record_criterion(7, passed, f"1000 instances ({n_finite} finite), worst relative error "
                                       f"{worst:.2e} (<= 1e-10), {time.time() - t0:.1f}s")


def test_criterion_08_pressure_quadrature():
    rng = np.random.default_rng(88)
    worst = 0.0
    for _ in range(1000):
        inds, cases, ev, params = oracles.random_toy(rng)
        s, events, p = _toy(inds, cases, ev, params)
        j = int(rng.integers(len(inds)))
        upto = float(rng.uniform(min(x[1] for x in ev), max(min(x[3], x[4]) for x in ev) + 5))
        ref = oracles.integrated_pressure_quad(inds, cases, ev, j, upto, params)
        skip = cases.index(j) if j in cases else -1
        got = K.integrated_pressure_upto(upto, inds[j][2], inds[j][0], inds[j][1], skip,
                                         events.i, events.r, events.tau, events.q,
                                         s.case_conf, s.case_cb, s.case_ca,
                                         p.lambda_a, p.lambda_f, p.lambda_h, p.b,
                                         s.gsize_before, s.gsize_after, float(s.N), float(s.n_ftc),
                                         s.move_day)
        if ref == 0.0:
            worst = max(worst, 0.0 if got == 0.0 else math.inf)
        else:
            worst = max(worst, abs(got - ref) / abs(ref))
    assert record_criterion(8, worst <= 1e-8, f"1000 instances, worst relative error {worst:.2e} (<= 1e-8)")


def test_criterion_09_sampler_validity():
    prior = PriorSpec(rate_mean=0.5, rate_sd=0.5)
    draws = geweke.prior_recovery(4000, 10, seed=3, prior=prior)
    pvals = geweke.prior_cdf_pvalues(draws, prior)
    grid = geweke.single_case_check()
    grid_ok = all(abs(m - r) < 3 * se for _, m, r, se in grid)
    detail = ("prior recovery p-values " + ", ".join(f"{x:.3f}" for x in pvals) + " (> 0.01); "
              + ", ".join(f"{n} {m:.4f} vs grid {r:.4f} ({abs(m - r) / se:.1f} MCSE)" for n, m, r, se in grid))
    assert record_criterion(9, min(pvals) > 0.01 and grid_ok, detail)


def test_criterion_10_three_person_final_size():
    theta = StageDurations()
    la, lf, lh, b = 0.03, 0.02, 0.05, 0.7
    exact = oracles.three_person_final_size((la + lf) / 2 + lh / 2, b, theta)
    pop = SimPopulation.from_individuals([(1, 1, 0, 0)] * 3, 0)
    runs = batch_simulate([(ModelParams(la, lf, lh, 0.5, b, math.inf), 0)], 100_000, seed=10,
                          populations={0: pop})
    freq = np.bincount([r.final_size for r in runs], minlength=4)[1:] / len(runs)
    tv = 0.5 * float(np.abs(freq - exact).sum())
    assert record_criterion(10, tv < 0.01, f"total variation {tv:.4f} (< 0.01) over 100000 runs")


def _chain_invariants(res, structure):
    lat = res.latent
    e, i, r, tau, q = (lat[..., k] for k in range(5))
    tq = res.column("t_q")
    checks = [
        np.isfinite(res.loglik).all(),
        ((e < i) & (i < r) & (r < tau)).all(),
        (q > np.maximum(r, tq[:, None])).all(),
        (r == structure.rash[None, :]).all(),
        (e >= res.e_kappa[:, None]).all(),
        (res.params[:, :3] > 0).all(),
        ((res.column("v") > 0) & (res.column("v") < 1)).all(),
        (res.column("b") > 0).all() and (tq > 0).all(),
    ]
    return all(bool(c) for c in checks)


def _outputs(directory):
    return {p.name: p.read_bytes() for p in sorted(directory.iterdir())
            if p.is_file() and not p.name.startswith("manifest_")}


def test_criterion_11_structural_invariants(chain, structure, tmp_path):
    w = who_infected_whom(chain, structure)
    row_err = float(np.abs(w.matrix.sum(axis=1) + w.index_mass - 1.0).max())
    invariants = _chain_invariants(chain, structure)
    args = ["--set", "mcmc.iterations=500", "--set", "mcmc.burn_in=100", "--set", "sim.count=200"]
    for out in ("a", "b"):
        main(["mcmc", *args, "--set", f"paths.output={tmp_path / out}"])
        main(["simulate", *args, "--set", f"paths.output={tmp_path / out}"])
    same = _outputs(tmp_path / "a") == _outputs(tmp_path / "b") and len(_outputs(tmp_path / "a")) > 3
    again = run_chain(structure, iterations=300, burn_in=100, thinning=5, seed=CHAIN_SEED)
    again2 = run_chain(structure, iterations=300, burn_in=100, thinning=5, seed=CHAIN_SEED)
    same = same and np.array_equal(again.latent, again2.latent)
    passed = row_err <= 1e-9 and invariants and same
    assert record_criterion(11, passed, f"wiw max row error {row_err:.1e} (<= 1e-9); retained states valid: "
                                        f"{invariants}; byte-identical reruns: {same}")
