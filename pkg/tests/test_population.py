import shutil

import pytest

from abakaliki.population import (
    CountExpr, Confession, DataError, VaccinationConfig, default_paths,
    enumerate_vaccination_configs, load_cases, load_data, load_moves, load_population,
)


def test_totals(data):
    pop = data.population
    assert pop.N == 31200
    assert pop.n == 120
    assert pop.n_com == 251


def test_cases(data):
    cases = data.cases
    assert len(cases) == 32
    assert cases[0].rash_day == 0
    assert max(c.rash_day for c in cases) == 76
    assert {c.case_id for c in cases if c.vaccinated} == {7, 8, 20, 21, 22, 27, 31}
    # record order differs from time order for cases 9 and 10
    assert cases[9].rash_day > cases[10].rash_day


def test_vaccination_configs():
    configs = enumerate_vaccination_configs()
    assert [c.as_tuple() for c in configs] == [(0, 1, 3), (0, 2, 2), (1, 0, 3), (1, 1, 2), (1, 2, 1)]
    with pytest.raises(ValueError):
        VaccinationConfig(1, 1, 1)
    with pytest.raises(ValueError):
        VaccinationConfig(2, 0, 2)


def test_count_expressions():
    cfg = VaccinationConfig(1, 2, 1)
    assert CountExpr.parse("28+i4").evaluate(cfg) == 29
    assert CountExpr.parse("4-i5").evaluate(cfg) == 2
    assert CountExpr.parse("i7").evaluate(cfg) == 1
    assert CountExpr.parse("13").evaluate(cfg) == 13
    for bad in ("", "x", "2*i4", "3i4", "i6"):
        with pytest.raises(ValueError):
            CountExpr.parse(bad)


def test_every_config_keeps_totals(data):
    pop = data.population
    for cfg in enumerate_vaccination_configs():
        counts = pop.table_counts(cfg)
        assert sum(v + u for v, u in counts.values()) == 31200
        cells = pop.cell_counts(cfg)
        assert sum(c.count for c in cells) == 31200


def test_group_sizes_follow_the_move(data):
    pop = data.population
    ftc = Confession.FTC
    assert pop.group_size_of(1, ftc, 10.0) == 33
    assert pop.group_size_of(1, ftc, 30.0) == 29
    assert pop.group_size_of(2, ftc, 10.0) == 14
    assert pop.group_size_of(2, ftc, 30.0) == 18
    j = next(k for k in range(pop.n_com) if pop.individual(k).compound_before == 1
             and pop.individual(k).compound_after == 1 and pop.individual(k).confession is ftc)
    assert pop.group_size(j, 10.0) == 33
    assert pop.group_size(j, 30.0) == 29


def test_alternative_table_reading():
    data = load_data(table_after_move=True)
    pop = data.population
    assert pop.group_size_of(1, Confession.FTC, 24.0) == 37
    assert pop.group_size_of(1, Confession.FTC, 25.0) == 33
    assert pop.group_size_of(2, Confession.FTC, 25.0) == 14


def test_movers_and_unknowns(data):
    pop = data.population
    movers = [c for c in pop.cell_counts(enumerate_vaccination_configs()[0])
              if c.compound_before != c.compound_after]
    assert sum(c.count for c in movers) == 4
    assert all((c.compound_before, c.compound_after) == (1, 2) for c in movers)
    unknown = [pop.individual(j) for j in range(pop.n_com) if pop.individual(j).vaccinated is None]
    assert len(unknown) == 10


def test_case_individuals_are_distinct(data):
    ids = [c.individual for c in data.cases]
    assert len(set(ids)) == 32
    assert all(0 <= j < data.population.n_com for j in ids)


def _copy_inputs(tmp_path):
    paths = default_paths()
    out = {}
    for k, p in paths.items():
        out[k] = tmp_path / p.name
        shutil.copy(p, out[k])
    return out


def test_ftc_total_mismatch(tmp_path):
    p = _copy_inputs(tmp_path)
    text = p["population"].read_text().replace("1,FTC,18,15", "1,FTC,19,15")
    p["population"].write_text(text)
    with pytest.raises(DataError, match="FTC total mismatch: 121 != 120"):
        load_population(p["population"], p["moves"])


def test_malformed_case_row_reports_line(tmp_path):
    p = _copy_inputs(tmp_path)
    lines = p["cases"].read_text().splitlines()
    lines[3] = "2,abc,1,FTC,No"
    p["cases"].write_text("\n".join(lines) + "\n")
    with pytest.raises(DataError, match="row 4"):
        load_cases(p["cases"])


def test_negative_rash_and_duplicates(tmp_path):
    p = _copy_inputs(tmp_path)
    lines = p["cases"].read_text().splitlines()
    p["cases"].write_text("\n".join(lines[:3] + ["2,-1,1,FTC,No"]) + "\n")
    with pytest.raises(DataError, match="negative rash day"):
        load_cases(p["cases"])
    p["cases"].write_text("\n".join(lines[:3] + ["1,5,1,FTC,No"]) + "\n")
    with pytest.raises(DataError, match="duplicate case id"):
        load_cases(p["cases"])


def test_rash_days_reanchored(tmp_path):
    path = tmp_path / "cases.csv"
    path.write_text("case_id,rash_day,compound,confession,vaccinated\n0,5,1,FTC,No\n1,9,1,FTC,No\n")
    cases = load_cases(path)
    assert [c.rash_day for c in cases] == [0, 4]


def test_missing_moves_file(tmp_path):
    p = _copy_inputs(tmp_path)
    with pytest.raises(FileNotFoundError, match="nothere.csv"):
        load_moves(tmp_path / "nothere.csv")
    with pytest.raises(FileNotFoundError):
        load_data(p["cases"], p["population"], tmp_path / "nothere.csv")
