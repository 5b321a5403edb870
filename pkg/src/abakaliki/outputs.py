"""Reading and writing run outputs.

Every CSV has a single header line and floats carry 17 significant
digits, so values survive a round trip exactly.  Files are written to a
temporary sibling first and then renamed into place.
"""

from __future__ import annotations

import csv
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .mcmc import PARAM_NAMES, ChainResult
from .simulator import SimSummary

SAMPLE_COLUMNS = ("iter",) + PARAM_NAMES + ("kappa", "e_kappa", "loglik",
                                            "config_i4", "config_i5", "config_i7")
LATENT_COLUMNS = ("iter", "case_id", "e", "i", "r", "tau", "q")
SIM_COLUMNS = ("run_id", "final_size", "duration", "n_ftc", "n_outside", "mover_infected")


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return "%.17g" % float(x)
    if x is None:
        return ""
    return str(x)


def _atomic_open(path: Path):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    return os.fdopen(fd, "w", newline=""), tmp


def write_text(path, text: str) -> Path:
    path = Path(path)
    fh, tmp = _atomic_open(path)
    with fh:
        fh.write(text)
    os.replace(tmp, path)
    return path


def write_json(path, obj) -> Path:
    return write_text(path, json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(x):
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.floating):
        return float(x)
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, Path):
        return str(x)
    raise TypeError(f"cannot serialise {type(x).__name__}")


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    fh, tmp = _atomic_open(path)
    with fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(x) for x in row])
    os.replace(tmp, path)
    return path


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty file (no header)")
    return rows[0], rows[1:]


# -- chains -------------------------------------------------------------------------


def write_samples(path, result: ChainResult) -> Path:
    ek = result.e_kappa if len(result) else np.empty(0)

    def rows():
        for k in range(len(result)):
            cfg = result.configs[int(result.config_index[k])]
            cfg_t = cfg.as_tuple() if cfg is not None else ("", "", "")
            yield (int(result.iters[k]), *result.params[k], int(result.kappa[k]), ek[k],
                   result.loglik[k], *cfg_t)

    return write_csv(path, SAMPLE_COLUMNS, rows())


def write_latent(path, result: ChainResult) -> Path:
    def rows():
        for k in range(len(result)):
            for j, cid in enumerate(result.case_ids):
                yield (int(result.iters[k]), cid, *result.latent[k, j])

    return write_csv(path, LATENT_COLUMNS, rows())


def read_chain(samples_path, latent_path, configs, case_ids) -> ChainResult:
    """Rebuild a ChainResult from its two CSV files."""
    header, rows = read_csv(samples_path)
    if tuple(header) != SAMPLE_COLUMNS:
        raise ValueError(f"{samples_path}: unexpected header {header}")
    n = len(rows)
    m = len(case_ids)
    iters = np.array([int(r[0]) for r in rows], dtype=np.int64)
    params = np.array([[float(x) for x in r[1:7]] for r in rows], dtype=float).reshape(n, 6)
    kappa = np.array([int(r[7]) for r in rows], dtype=np.int64)
    loglik = np.array([float(r[9]) for r in rows], dtype=float)
    lookup = {c.as_tuple() if c is not None else None: i for i, c in enumerate(configs)}
    cfg_idx = np.array([lookup[tuple(int(x) for x in r[10:13])] if r[10] else lookup[None]
                        for r in rows], dtype=np.int64)
    lheader, lrows = read_csv(latent_path)
    if tuple(lheader) != LATENT_COLUMNS:
        raise ValueError(f"{latent_path}: unexpected header {lheader}")
    if len(lrows) != n * m:
        raise ValueError(f"{latent_path}: expected {n * m} rows, found {len(lrows)}")
    latent = np.array([[float(x) for x in r[2:7]] for r in lrows], dtype=float).reshape(n, m, 5)
    return ChainResult(iters, params, kappa, cfg_idx, loglik, latent, {}, tuple(configs), tuple(case_ids))


# -- simulations ------------------------------------------------------------------------


def write_sim_summaries(path, summaries: list[SimSummary]) -> Path:
    return write_csv(path, SIM_COLUMNS,
                     ((k, s.final_size, s.duration, s.n_ftc, s.n_outside, s.mover_infected)
                      for k, s in enumerate(summaries)))


def read_sim_summaries(path) -> list[SimSummary]:
    header, rows = read_csv(path)
    if tuple(header) != SIM_COLUMNS:
        raise ValueError(f"{path}: unexpected header {header}")
    return [SimSummary(int(r[1]), float(r[2]), int(r[3]), int(r[4]), r[5] == "1") for r in rows]


def write_histogram(path, hist, label: str = "value") -> Path:
    return write_csv(path, (f"{label}_lo", f"{label}_hi", "count"),
                     zip(hist.edges[:-1], hist.edges[1:], hist.counts))
