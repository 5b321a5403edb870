import math

import numpy as np
import pytest

from abakaliki.disease_model import ModelParams, StageDurations
from abakaliki.population import Confession, enumerate_vaccination_configs
from abakaliki.simulator import (
    ConditioningFailure, SimConfig, SimPopulation, batch_simulate, run_seeds, simulate,
    simulate_conditional,
)

import oracles

POSTERIOR_MEANS = ModelParams(0.041, 0.063, 0.358, 0.808, 0.522, 50.4)
TRIO = [(1, 1, 0, 0)] * 3


def abakaliki_pop(data):
    return SimPopulation.from_population(data.population, enumerate_vaccination_configs()[0], (1, Confession.FTC, False))


def test_population_cells(data):
    pop = abakaliki_pop(data)
    assert pop.cell_total.sum() == 31200
    assert pop.N == 31200 and pop.n_ftc == 120
    assert pop.gsize_before[1, 0] == 33 and pop.gsize_after[1, 0] == 29
    assert len(pop.mover_cells) > 0
    four = SimPopulation.from_population(data.population, enumerate_vaccination_configs()[0], (1, 1, 0, 0))
    assert four.index_cell == pop.index_cell


def test_same_seed_same_outbreak(data):
    pop = abakaliki_pop(data)
    a = simulate(SimConfig(POSTERIOR_MEANS, pop, seed=4))
    b = simulate(SimConfig(POSTERIOR_MEANS, pop, seed=4))
    np.testing.assert_array_equal(a.times, b.times)
    np.testing.assert_array_equal(a.cells, b.cells)
    assert a.summary() == b.summary()


def test_outbreak_invariants(data):
    pop = abakaliki_pop(data)
    for seed in range(30):
        res = simulate(SimConfig(POSTERIOR_MEANS, pop, seed=seed))
        t = res.times[: res.final_size]
        assert t[0, 2] == pytest.approx(0.0, abs=1e-9)
        assert (t[:, 0] < t[:, 1]).all() and (t[:, 1] < t[:, 2]).all() and (t[:, 2] < t[:, 3]).all()
        assert (t[:, 4] >= np.maximum(t[:, 2], POSTERIOR_MEANS.t_q) - 1e-12).all()
        assert res.infector[0] == -1
        for src, dst, e in res.tree:
            assert src < dst
            s = t[src]
            # infected while the source was infectious
            assert s[1] < e <= min(s[3], s[4]) + 1e-9
        assert res.n_ftc + (res.final_size - res.n_ftc) == res.final_size
        assert (np.bincount(res.cells[: res.final_size], minlength=len(pop.cell_total))
                <= pop.cell_total).all()


def test_index_exposure_anchor(data):
    pop = abakaliki_pop(data)
    res = simulate(SimConfig(POSTERIOR_MEANS.replace(e_kappa=-20.0), pop, seed=1))
    assert res.times[0, 0] == -20.0


def test_zero_rates_give_single_case(data):
    pop = abakaliki_pop(data)
    res = simulate(SimConfig(ModelParams(0.0, 0.0, 0.0, 0.5, 0.5, 50.0), pop, seed=2))
    assert res.final_size == 1 and res.duration == 0.0 and res.tree == []


def test_full_protection_spares_vaccinated():
    pop = SimPopulation.from_individuals([(1, 1, 0, 0)] + [(1, 1, 0, 1)] * 5, 0)
    res = simulate(SimConfig(ModelParams(5.0, 5.0, 5.0, 1.0, 1.0, 100.0), pop, seed=3))
    assert res.final_size == 1


def test_conditional(data):
    pop = SimPopulation.from_individuals(TRIO, 0)
    p = ModelParams(0.2, 0.2, 0.2, 0.5, 0.5, math.inf)
    res = simulate_conditional(SimConfig(p, pop, seed=5), target=3)
    assert res.final_size == 3 and res.attempts >= 1
    with pytest.raises(ConditioningFailure):
        simulate_conditional(SimConfig(p, pop, seed=5), target=4, max_attempts=50)
    with pytest.raises(ValueError):
        simulate_conditional(SimConfig(p, pop, seed=5), target=0)


def test_three_person_final_size():
    theta = StageDurations()
    la, lf, lh, b = 0.03, 0.02, 0.05, 0.7
    beta = (la + lf) / 2 + lh / 2
    exact = oracles.three_person_final_size(beta, b, theta)
    pop = SimPopulation.from_individuals(TRIO, 0)
    runs = batch_simulate([(ModelParams(la, lf, lh, 0.5, b, math.inf), "trio")], 100_000, seed=8,
                          populations={"trio": pop})
    freq = np.bincount([r.final_size for r in runs], minlength=4)[1:] / len(runs)
    assert 0.5 * np.abs(freq - exact).sum() < 0.01


def test_batch_order_independent_of_workers():
    pop = SimPopulation.from_individuals(TRIO + [(2, 2, 1, 1)] * 3, 0)
    sets = [(ModelParams(0.3, 0.2, 0.4, 0.6, 0.5, 20.0), "a"),
            (ModelParams(0.1, 0.1, 0.1, 0.6, 0.5, 20.0), "a")]
    one = batch_simulate(sets, 200, seed=9, populations={"a": pop})
    two = batch_simulate(sets, 200, seed=9, populations={"a": pop}, parallelism=2)
    assert one == two
    assert batch_simulate(sets, 0, seed=9, populations={"a": pop}) == []
    with pytest.raises(ValueError):
        batch_simulate([], 5, seed=1, populations={})


def test_tq_override():
    pop = SimPopulation.from_individuals(TRIO, 0)
    sets = [(ModelParams(0.1, 0.1, 0.1, 0.5, 0.5, 1.0), "t")]
    early = batch_simulate(sets, 4000, seed=2, populations={"t": pop})
    never = batch_simulate(sets, 4000, seed=2, populations={"t": pop}, tq_override=None)
    assert np.mean([r.final_size for r in never]) > np.mean([r.final_size for r in early])


def test_run_seeds():
    assert run_seeds(1, 5) == run_seeds(1, 5)
    assert run_seeds(1, 5) != run_seeds(2, 5)
    assert run_seeds(1, 0) == []
