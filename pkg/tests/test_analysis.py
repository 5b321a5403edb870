import math

import numpy as np
import pytest

from abakaliki.analysis import (
    Histogram, Interval, PosteriorSummary, RankMoments, anchored_ranks, cumulative_envelope,
    discrepancy, exposure_posterior, ppp_from_discrepancies, ppp_value, predictive_checks,
    protection_posterior, reproduction_numbers, reproduction_samples, setting_label, who_infected_whom,
)
from abakaliki.disease_model import ModelParams, ModelStructure
from abakaliki.mcmc import ChainResult
from abakaliki.simulator import SimPopulation, SimSummary

import oracles

POSTERIOR_MEANS = ModelParams(0.041, 0.063, 0.358, 0.808, 0.522, 50.4)


def chain_from(params_rows, latent, kappa=None, case_ids=None):
    n = len(params_rows)
    m = latent.shape[1]
    return ChainResult(np.arange(n), np.asarray(params_rows, float),
                       np.zeros(n, np.int64) if kappa is None else np.asarray(kappa, np.int64),
                       np.zeros(n, np.int64), np.zeros(n), latent, {}, (None,),
                       tuple(range(m)) if case_ids is None else case_ids)


def test_reproduction_numbers():
    rn = reproduction_numbers(POSTERIOR_MEANS)
    assert rn.R0 == pytest.approx((16 + 0.522 * 2.49) * 0.462, rel=1e-12)
    assert rn.R0 == pytest.approx(7.993, abs=1e-3)
    assert rn.R0_post_control == pytest.approx(1.52, abs=5e-3)
    assert rn.Ra + rn.Rf + rn.Rh == pytest.approx(rn.R0)
    assert reproduction_numbers(POSTERIOR_MEANS.replace(b=0.0)).RF == 0.0
    smp = reproduction_samples(np.array([[0.041, 0.063, 0.358, 0.808, 0.522, 50.4]] * 2))
    assert smp["R0"] == pytest.approx([rn.R0] * 2)


def test_interval_and_summary():
    x = np.random.default_rng(0).gamma(2.0, 1.0, 5000)
    iv = Interval.of(x)
    assert iv.lower <= iv.median <= iv.upper
    assert iv.mean == pytest.approx(x.mean())
    rows = np.column_stack([x * 0.01, x * 0.02, x * 0.1, np.full_like(x, 0.8), x * 0.3, 50 + x])
    res = chain_from(rows, np.zeros((len(x), 1, 5)))
    ps = PosteriorSummary.from_chain(res)
    d = ps.as_dict()
    assert list(d["parameters"]) == ["lambda_a", "lambda_f", "lambda_h", "v", "b", "t_q", "R0", "RF"]
    assert d["n_samples"] == len(x)
    for iv in ps.rows.values():
        assert iv.lower <= iv.median <= iv.upper
    # per-sample average differs from the plug-in value at the posterior means
    assert ps.rows["R0"].mean != pytest.approx(ps.plug_in["R0"], rel=1e-6)
    with pytest.raises(ValueError):
        PosteriorSummary.from_chain(chain_from(np.empty((0, 6)), np.empty((0, 1, 5))))


def test_wiw_matches_pair_rates():
    rng = np.random.default_rng(4)
    checked = 0
    while checked < 40:
        inds, cases, ev, params = oracles.random_toy(rng)
        if len(cases) < 2:
            continue
        s = ModelStructure.from_individuals(inds, cases, [x[2] for x in ev], move_day=params["move_day"])
        row = [params["la"], params["lf"], params["lh"], params["v"], params["b"], params["tq"]]
        res = chain_from([row], np.array([ev])[:, :, :])
        w = who_infected_whom(res, s)
        assert w.index_mass[0] == 1.0 and w.matrix[0].sum() == 0.0
        for c in range(1, len(cases)):
            j = cases[c]
            e = ev[c][0]
            tot = oracles.pressure(inds, cases, ev, j, e, params)
            for d, k in enumerate(cases):
                if d == c:
                    continue
                share = oracles.multiplier(ev, d, e, params["b"]) * oracles.pair_rate(
                    inds, k, j, e, params["la"], params["lf"], params["lh"], params["move_day"]) / tot
                assert w.matrix[c, d] == pytest.approx(share, rel=1e-9, abs=1e-12)
            assert w.matrix[c].sum() + w.index_mass[c] == pytest.approx(1.0, abs=1e-9)
        checked += 1


def test_wiw_symmetric_infectors():
    inds = [(1, 1, 0, 0)] * 4 + [(0, 0, 1, 0)]
    ev = np.array([[[-30, -18, -16, -1, 60], [-5, 5, 7, 25, 60], [-5, 5, 7, 25, 60],
                    [20, 28, 30, 45, 60]]], float)
    s = ModelStructure.from_individuals(inds, [0, 1, 2, 3], [-16, 7, 7, 30])
    params = [[0.1, 0.1, 0.1, 0.5, 0.5, 50.0]]
    w = who_infected_whom(chain_from(params, ev), s)
    assert w.matrix[1, 0] == 1.0 and w.matrix[2, 0] == 1.0
    assert w.matrix[3, 1] == pytest.approx(0.5) and w.matrix[3, 2] == pytest.approx(0.5)
    assert w.modal_infector()[0] == -1
    # with case 3 as the index, case 0 has nobody to infect it
    with pytest.raises(ValueError):
        who_infected_whom(chain_from(params, ev, kappa=[3]), s)


def test_exposure_histogram():
    lat = np.zeros((10, 2, 5))
    lat[:, 0, 0] = -3.5
    lat[:, 1, 0] = np.linspace(0, 4.99, 10)
    h = exposure_posterior(chain_from(np.ones((10, 6)) * 0.5, lat))
    np.testing.assert_allclose(h.mass.sum(axis=1), 1.0)
    assert h.mass[0].max() == 1.0
    assert np.all(np.diff(h.edges) == 1.0)


def test_protection_posterior():
    inds = [(1, 1, 0, 0), (1, 1, 0, 1), (0, 0, 1, 1), (0, 0, 1, 0)]
    s = ModelStructure.from_individuals(inds, [0], [0.0], T=100.0)
    ev = np.array([[[-14, -2, 0, 16, 60]]], float)
    v = 0.6
    res = chain_from([[0.2, 0.3, 0.4, v, 0.5, 50.0]], ev)
    pp = protection_posterior(res, s)
    E_ftc = (0.2 / 3 + 0.3 / 1 + 0.4 / 1) * (2 * 0.5 + 16)
    E_out = (0.2 / 3) * (2 * 0.5 + 16)
    for c, key in enumerate(pp.cell_keys):
        if not key[3]:
            assert pp.probability[c] == 0.0
        else:
            E = E_ftc if key[2] == 0 else E_out
            assert pp.probability[c] == pytest.approx(v / (v + (1 - v) * math.exp(-E)), rel=1e-12)


def test_discrepancy_definition():
    mom = RankMoments(np.array([0.0, 2.0, 5.0]), np.array([0.0, 4.0, 1.0]))
    assert discrepancy([0.0, 2.0, 5.0], mom) == (0.0, (0,))
    d, excluded = discrepancy([10.0, 14.0, 15.0], mom)
    assert d == pytest.approx(1.0) and excluded == (0,)
    # unsorted, shifted input gives the same value
    assert discrepancy([25.0, 20.0, 24.0], mom)[0] == pytest.approx(1.0)
    with pytest.raises(ValueError):
        discrepancy([0.0, 1.0], mom)


def test_ppp_ties_and_range():
    assert ppp_from_discrepancies([1.0, 2.0], [1.0, 2.0]) == 1.0
    assert ppp_from_discrepancies([0.0] * 5, [0.0] * 5) == 1.0
    assert ppp_from_discrepancies([3.0, 3.0], [1.0, 4.0]) == 0.5
    with pytest.raises(ValueError):
        ppp_from_discrepancies([], [])


def test_ppp_shift_invariant():
    pop = SimPopulation.from_individuals([(1, 1, 0, 0)] * 4 + [(2, 2, 1, 1)] * 3, 0)
    p = ModelParams(0.3, 0.3, 0.6, 0.5, 0.5, 30.0)
    r = np.array([0.0, 12.0, 15.0, 27.0])
    draws = [(p, pop)] * 5
    a = ppp_value(draws, r, M1=20, seed=3)
    b = ppp_value(draws, r + 40.0, M1=20, seed=3)
    np.testing.assert_allclose(a.d_obs, b.d_obs)
    assert a.ppp == b.ppp and 0.0 <= a.ppp <= 1.0
    assert a.M == 5 and a.M1 == 20
    assert (a.d_obs > 0).all()


def test_anchored_ranks():
    np.testing.assert_array_equal(anchored_ranks([5.0, 3.0, 9.0]), [0.0, 2.0, 6.0])


def test_predictive_checks():
    runs = [SimSummary(1, 0.0, 1, 0, False)] * 600 + [SimSummary(4, 20.0, 3, 1, True)] * 600
    rep = predictive_checks(runs, conditional_rash=[[0, 1, 2], [0, 5, 9]])
    assert rep.n_runs == 1200 and rep.n_mover_runs == 600
    assert rep.final_size.mean == pytest.approx(2.5)
    assert rep.mover_final_size.mean == pytest.approx(4.0)
    assert rep.ftc_fraction == pytest.approx(0.5 * 1.0 + 0.5 * 0.75)
    assert rep.outside_fraction == pytest.approx(0.125)
    assert rep.envelope.shape[1] == 6
    assert set(rep.as_dict()) >= {"final_size_mean", "ftc_fraction"}
    with pytest.raises(ValueError):
        predictive_checks(runs[:10])
    ones = predictive_checks([SimSummary(1, 0.0, 1, 0, False)] * 1000)
    assert ones.final_size.counts.tolist() == [1000]


def test_cumulative_envelope():
    env = cumulative_envelope([[3.0, 4.0, 6.0], [10.0, 10.0, 11.0]])
    np.testing.assert_array_equal(env[:, 0], np.arange(4.0))
    assert (env[:, 1] <= env[:, 3]).all() and (env[:, 3] <= env[:, 5]).all()
    assert env[-1, 5] == 3
    with pytest.raises(ValueError):
        cumulative_envelope([])


def test_histogram():
    h = Histogram.of([1, 1, 2, 5])
    assert h.counts.sum() == 4 and h.mean == pytest.approx(2.25)
    assert math.isnan(Histogram.of([]).mean)


def test_setting_label():
    assert setting_label({}) == "baseline"
    assert "mu_R" in setting_label({"mu_R": 12.0})
