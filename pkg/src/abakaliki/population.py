"""Structured population and case data for the Abakaliki outbreak.

The population is described by three small CSV files: the case list,
the per-compound composition (with symbolic ``i4``/``i5``/``i7`` entries
for the few individuals whose vaccination status is not pinned down) and
the single move event on day 25.  Individuals inside compounds get ids
``0 .. n_com-1``; everybody outside the compounds is aggregated into two
homogeneous groups (FTC and non-FTC) and only exists as an id range.
"""

from __future__ import annotations

import csv
import enum
import itertools
import re
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from pathlib import Path

OUTSIDE = 0
COMPOUNDS = tuple(range(1, 10))
EXPECTED_FTC_TOTAL = 120
EXPECTED_NON_FTC_TOTAL = 31080
EXPECTED_IN_COMPOUND = 251


class DataError(ValueError):
    """Raised for malformed or inconsistent input data."""


class Confession(enum.Enum):
    FTC = "FTC"
    NON_FTC = "Non"

    @classmethod
    def parse(cls, text: str) -> "Confession":
        key = text.strip().lower()
        if key == "ftc":
            return cls.FTC
        if key in ("non", "non-ftc", "nonftc", "non_ftc"):
            return cls.NON_FTC
        raise ValueError(f"unknown confession {text!r}")

    @property
    def code(self) -> int:
        """0 for FTC, 1 for non-FTC; used to index arrays."""
        return 0 if self is Confession.FTC else 1


def _parse_bool(text: str) -> bool:
    key = text.strip().lower()
    if key in ("yes", "y", "true", "1"):
        return True
    if key in ("no", "n", "false", "0"):
        return False
    raise ValueError(f"expected Yes/No, got {text!r}")


@dataclass(frozen=True)
class VaccinationConfig:
    """Resolution of the unknown vaccination splits in compounds 4, 5 and 7."""

    i4: int
    i5: int
    i7: int

    def __post_init__(self):
        if self.i4 not in (0, 1) or self.i5 not in (0, 1, 2) or self.i7 not in (1, 2, 3):
            raise ValueError(f"vaccination config out of range: {self}")
        if self.i4 + self.i5 + self.i7 != 4:
            raise ValueError(f"vaccination config must sum to 4: {self}")

    def as_dict(self) -> dict[str, int]:
        return {"i4": self.i4, "i5": self.i5, "i7": self.i7}

    def as_tuple(self) -> tuple[int, int, int]:
        return (self.i4, self.i5, self.i7)


def enumerate_vaccination_configs() -> list[VaccinationConfig]:
    """All admissible configurations, in lexicographic order."""
    configs = []
    for i4, i5, i7 in itertools.product((0, 1), (0, 1, 2), (1, 2, 3)):
        if i4 + i5 + i7 == 4:
            configs.append(VaccinationConfig(i4, i5, i7))
    return configs


@dataclass(frozen=True)
class CaseRecord:
    case_id: int
    rash_day: int
    compound: int
    confession: Confession
    vaccinated: bool
    individual: int = -1


@dataclass(frozen=True)
class MoveEvent:
    day: float
    from_compound: int
    to_compound: int
    n_vaccinated: int
    n_unvaccinated: int
    case_ids: tuple[int, ...]

    @property
    def n_movers(self) -> int:
        return self.n_vaccinated + self.n_unvaccinated


@dataclass(frozen=True)
class Individual:
    id: int
    compound_before: int
    compound_after: int
    confession: Confession
    # None means unknown until a VaccinationConfig is chosen
    vaccinated: bool | None

    def compound(self, t: float, move_day: float) -> int:
        return self.compound_before if t < move_day else self.compound_after

    def is_vaccinated(self, config: VaccinationConfig, pop: "Population") -> bool:
        if self.vaccinated is not None:
            return self.vaccinated
        return pop._resolve_unknown(self, config)


_TERM = re.compile(r"^\s*(\d*)\s*(?:([+-])?\s*i([457]))?\s*$")


@dataclass(frozen=True)
class CountExpr:
    """A count of the form ``a``, ``a + i_c``, ``a - i_c`` or ``i_c``."""

    const: int
    sign: int = 0
    symbol: str | None = None

    @classmethod
    def parse(cls, text: str) -> "CountExpr":
        m = _TERM.match(text)
        if not m or (not m.group(1) and not m.group(3)):
            raise ValueError(f"cannot parse count {text!r}")
        const = int(m.group(1)) if m.group(1) else 0
        if m.group(3) is None:
            return cls(const)
        sign = -1 if m.group(2) == "-" else 1
        if m.group(1) and m.group(2) is None:
            raise ValueError(f"cannot parse count {text!r}")
        return cls(const, sign, "i" + m.group(3))

    def evaluate(self, config: VaccinationConfig) -> int:
        if self.symbol is None:
            return self.const
        return self.const + self.sign * getattr(config, self.symbol)


@dataclass(frozen=True)
class CompositionRow:
    compound: int
    confession: Confession
    vaccinated: CountExpr
    unvaccinated: CountExpr

    def counts(self, config: VaccinationConfig) -> tuple[int, int]:
        return self.vaccinated.evaluate(config), self.unvaccinated.evaluate(config)


@dataclass(frozen=True)
class Cell:
    """Individuals sharing compound trajectory, confession and vaccination.

    Everybody in a cell experiences the same infectious pressure at all
    times, which is what lets the likelihood and simulator work on cells
    instead of individuals.
    """

    compound_before: int
    compound_after: int
    confession: Confession
    vaccinated: bool
    count: int


@dataclass(frozen=True)
class Population:
    """Compound composition plus the move event.

    ``table_after_move`` says whether the composition rows describe the
    compounds before the move (the default) or after it.
    """

    rows: tuple[CompositionRow, ...]
    move: MoveEvent
    table_after_move: bool = False
    _row_index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        index = {(r.compound, r.confession): r for r in self.rows}
        object.__setattr__(self, "_row_index", index)

    # -- totals ---------------------------------------------------------

    def table_counts(self, config: VaccinationConfig) -> dict[tuple[int, Confession], tuple[int, int]]:
        return {key: row.counts(config) for key, row in self._row_index.items()}

    @cached_property
    def N(self) -> int:
        cfg = enumerate_vaccination_configs()[0]
        return sum(v + u for v, u in self.table_counts(cfg).values())

    @cached_property
    def n(self) -> int:
        """Number of FTC members."""
        cfg = enumerate_vaccination_configs()[0]
        return sum(v + u for (c, f), (v, u) in self.table_counts(cfg).items() if f is Confession.FTC)

    @cached_property
    def n_com(self) -> int:
        cfg = enumerate_vaccination_configs()[0]
        return sum(v + u for (c, f), (v, u) in self.table_counts(cfg).items() if c != OUTSIDE)

    # -- time-dependent composition --------------------------------------

    def _count(self, compound: int, confession: Confession, config: VaccinationConfig) -> tuple[int, int]:
        row = self._row_index.get((compound, confession))
        return row.counts(config) if row is not None else (0, 0)

    def cell_counts(self, config: VaccinationConfig) -> list[Cell]:
        """All cells (movers as their own trajectory), including cases."""
        mv = self.move
        cells = []
        for (compound, conf), (vax, unvax) in sorted(
            self.table_counts(config).items(), key=lambda kv: (kv[0][0], kv[0][1].code)
        ):
            if conf is Confession.FTC and compound in (mv.from_compound, mv.to_compound):
                # residents who never move; the table includes the movers in
                # exactly one of the two compounds
                side = mv.to_compound if self.table_after_move else mv.from_compound
                if compound == side:
                    vax -= mv.n_vaccinated
                    unvax -= mv.n_unvaccinated
            if vax < 0 or unvax < 0:
                raise DataError(f"compound {compound} {conf.value} cannot supply the movers")
            for is_vax, count in ((True, vax), (False, unvax)):
                cells.append(Cell(compound, compound, conf, is_vax, count))
        for is_vax, count in ((True, mv.n_vaccinated), (False, mv.n_unvaccinated)):
            cells.append(Cell(mv.from_compound, mv.to_compound, Confession.FTC, is_vax, count))
        return cells

    def group_size_of(self, compound: int, confession: Confession, t: float) -> int:
        """n_{c,f}(t): the size of a compound/confession group at time t."""
        if compound == OUTSIDE:
            raise ValueError("individuals outside the compounds have no compound group")
        cfg = enumerate_vaccination_configs()[0]
        vax, unvax = self._count(compound, confession, cfg)
        size = vax + unvax
        mv = self.move
        if confession is Confession.FTC:
            after = t >= mv.day
            if self.table_after_move and not after:
                size += mv.n_movers * ((compound == mv.from_compound) - (compound == mv.to_compound))
            elif not self.table_after_move and after:
                size += mv.n_movers * ((compound == mv.to_compound) - (compound == mv.from_compound))
        return size

    def group_size(self, j: int, t: float) -> int:
        """Group size n_{c,f_j}(t) for individual ``j`` (including j)."""
        ind = self.individual(j)
        return self.group_size_of(ind.compound(t, self.move.day), ind.confession, t)

    # -- individuals -------------------------------------------------------

    @cached_property
    def _individuals(self) -> tuple[Individual, ...]:
        """In-compound individuals; vaccination is None where configs disagree."""
        configs = enumerate_vaccination_configs()
        per_config = [self.cell_counts(c) for c in configs]
        out: list[Individual] = []
        n_cells = len(per_config[0])
        for idx in range(0, n_cells, 2):
            vax_cell = per_config[0][idx]
            if vax_cell.compound_before == OUTSIDE:
                continue
            vax_counts = [cells[idx].count for cells in per_config]
            totals = [cells[idx].count + cells[idx + 1].count for cells in per_config]
            total = totals[0]
            lo, hi = min(vax_counts), max(vax_counts)
            for slot in range(total):
                if slot < lo:
                    status = True
                elif slot < hi:
                    status = None
                else:
                    status = False
                out.append(
                    Individual(len(out), vax_cell.compound_before, vax_cell.compound_after,
                               vax_cell.confession, status)
                )
        return tuple(out)

    def _resolve_unknown(self, ind: Individual, config: VaccinationConfig) -> bool:
        same = [
            x for x in self._individuals
            if (x.compound_before, x.compound_after, x.confession)
            == (ind.compound_before, ind.compound_after, ind.confession)
        ]
        vax = next(
            c.count for c in self.cell_counts(config)
            if (c.compound_before, c.compound_after, c.confession, c.vaccinated)
            == (ind.compound_before, ind.compound_after, ind.confession, True)
        )
        return same.index(ind) < vax

    def individual(self, j: int) -> Individual:
        if not 0 <= j < self.N:
            raise IndexError(f"individual {j} out of range")
        if j < len(self._individuals):
            return self._individuals[j]
        # outsiders: FTC first, then non-FTC; vaccinated before unvaccinated
        cfg = enumerate_vaccination_configs()[0]
        k = j - len(self._individuals)
        fv, fu = self._count(OUTSIDE, Confession.FTC, cfg)
        if k < fv + fu:
            return Individual(j, OUTSIDE, OUTSIDE, Confession.FTC, k < fv)
        k -= fv + fu
        nv, _ = self._count(OUTSIDE, Confession.NON_FTC, cfg)
        return Individual(j, OUTSIDE, OUTSIDE, Confession.NON_FTC, k < nv)

    def assign_cases(self, cases: list[CaseRecord]) -> list[CaseRecord]:
        """Attach an individual id to every case, movers first for moved cases."""
        taken: set[int] = set()
        out = []
        for case in cases:
            moved = case.case_id in self.move.case_ids
            match = None
            for ind in self._individuals:
                if ind.id in taken or ind.vaccinated is not case.vaccinated:
                    continue
                if ind.confession is not case.confession:
                    continue
                if moved:
                    ok = (ind.compound_before, ind.compound_after) == (
                        self.move.from_compound, self.move.to_compound)
                else:
                    ok = ind.compound_before == ind.compound_after == case.compound
                if ok:
                    match = ind
                    break
            if match is None:
                raise DataError(f"no individual available for case {case.case_id}")
            taken.add(match.id)
            out.append(CaseRecord(case.case_id, case.rash_day, case.compound,
                                  case.confession, case.vaccinated, match.id))
        return out


# -- loading ----------------------------------------------------------------


def _open_rows(path):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"missing input file: {path}")
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
        return reader.fieldnames or [], rows


def _require_columns(fieldnames, required, path):
    missing = [c for c in required if c not in fieldnames]
    if missing:
        raise DataError(f"{path}: missing columns {missing}")


def load_cases(path) -> list[CaseRecord]:
    """Read the case list; rash days are re-anchored so the first is day 0."""
    fieldnames, rows = _open_rows(path)
    _require_columns(fieldnames, ("case_id", "rash_day", "compound", "confession", "vaccinated"), path)
    cases = []
    seen = set()
    for lineno, row in enumerate(rows, start=2):
        try:
            case_id = int(row["case_id"])
            rash = int(row["rash_day"])
            compound = int(row["compound"])
            conf = Confession.parse(row["confession"])
            vax = _parse_bool(row["vaccinated"])
        except (TypeError, ValueError) as exc:
            raise DataError(f"{path}: row {lineno}: malformed row ({exc})") from None
        if rash < 0:
            raise DataError(f"{path}: row {lineno}: negative rash day {rash}")
        if case_id in seen:
            raise DataError(f"{path}: row {lineno}: duplicate case id {case_id}")
        if compound not in COMPOUNDS and compound != OUTSIDE:
            raise DataError(f"{path}: row {lineno}: unknown compound {compound}")
        seen.add(case_id)
        cases.append(CaseRecord(case_id, rash, compound, conf, vax))
    if not cases:
        raise DataError(f"{path}: no cases")
    first = min(c.rash_day for c in cases)
    if first:
        cases = [CaseRecord(c.case_id, c.rash_day - first, c.compound, c.confession, c.vaccinated)
                 for c in cases]
    return sorted(cases, key=lambda c: c.case_id)


def load_moves(path) -> MoveEvent:
    fieldnames, rows = _open_rows(path)
    _require_columns(fieldnames, ("day", "from_compound", "to_compound", "n_vaccinated",
                                  "n_unvaccinated", "case_ids"), path)
    if len(rows) != 1:
        raise DataError(f"{path}: expected exactly one move event, found {len(rows)}")
    row = rows[0]
    try:
        ids = tuple(int(x) for x in re.split(r"[;\s|]+", row["case_ids"].strip()) if x)
        move = MoveEvent(float(row["day"]), int(row["from_compound"]), int(row["to_compound"]),
                         int(row["n_vaccinated"]), int(row["n_unvaccinated"]), ids)
    except (TypeError, ValueError) as exc:
        raise DataError(f"{path}: row 2: malformed row ({exc})") from None
    if move.n_vaccinated < 0 or move.n_unvaccinated < 0:
        raise DataError(f"{path}: row 2: negative mover count")
    return move


def load_population(path, moves=None, *, table_after_move: bool = False,
                    expected_ftc: int = EXPECTED_FTC_TOTAL,
                    expected_non_ftc: int = EXPECTED_NON_FTC_TOTAL,
                    expected_in_compound: int = EXPECTED_IN_COMPOUND) -> Population:
    """Read the composition table and check its totals under every config.

    ``moves`` is a path to the moves CSV or a MoveEvent; if omitted the
    ``moves.csv`` next to the composition file is used.
    """
    fieldnames, raw = _open_rows(path)
    _require_columns(fieldnames, ("compound", "confession", "vaccinated_count", "unvaccinated_count"), path)
    rows = []
    seen = set()
    for lineno, row in enumerate(raw, start=2):
        try:
            compound = int(row["compound"])
            conf = Confession.parse(row["confession"])
            vax = CountExpr.parse(row["vaccinated_count"])
            unvax = CountExpr.parse(row["unvaccinated_count"])
        except (TypeError, ValueError) as exc:
            raise DataError(f"{path}: row {lineno}: malformed row ({exc})") from None
        if (compound, conf) in seen:
            raise DataError(f"{path}: row {lineno}: duplicate row for compound {compound} {conf.value}")
        seen.add((compound, conf))
        rows.append(CompositionRow(compound, conf, vax, unvax))

    if moves is None:
        moves = Path(path).with_name("moves.csv")
    move = moves if isinstance(moves, MoveEvent) else load_moves(moves)
    pop = Population(tuple(rows), move, table_after_move)

    for cfg in enumerate_vaccination_configs():
        counts = pop.table_counts(cfg)
        for (c, f), (v, u) in counts.items():
            if v < 0 or u < 0:
                raise DataError(f"negative count for compound {c} {f.value} under {cfg}")
        ftc = sum(v + u for (c, f), (v, u) in counts.items() if f is Confession.FTC)
        non = sum(v + u for (c, f), (v, u) in counts.items() if f is Confession.NON_FTC)
        inside = sum(v + u for (c, f), (v, u) in counts.items() if c != OUTSIDE)
        if ftc != expected_ftc:
            raise DataError(f"FTC total mismatch: {ftc} != {expected_ftc}")
        if non != expected_non_ftc:
            raise DataError(f"non-FTC total mismatch: {non} != {expected_non_ftc}")
        if inside != expected_in_compound:
            raise DataError(f"in-compound total mismatch: {inside} != {expected_in_compound}")
    pop.cell_counts(enumerate_vaccination_configs()[0])
    return pop


def _data_file(name: str) -> Path:
    return Path(str(resources.files("abakaliki") / "data" / name))


def default_paths() -> dict[str, Path]:
    return {"cases": _data_file("cases.csv"), "population": _data_file("population.csv"),
            "moves": _data_file("moves.csv")}


@dataclass(frozen=True)
class OutbreakData:
    """Cases attached to individuals of a loaded population."""

    population: Population
    cases: tuple[CaseRecord, ...]

    @property
    def rash_times(self):
        return [c.rash_day for c in self.cases]


def load_data(cases_path=None, population_path=None, moves_path=None, *,
              table_after_move: bool = False) -> OutbreakData:
    paths = default_paths()
    pop = load_population(population_path or paths["population"], moves_path or paths["moves"],
                          table_after_move=table_after_move)
    cases = load_cases(cases_path or paths["cases"])
    for cid in pop.move.case_ids:
        if cid not in {c.case_id for c in cases}:
            raise DataError(f"mover case {cid} not in case list")
    return OutbreakData(pop, tuple(pop.assign_cases(cases)))
