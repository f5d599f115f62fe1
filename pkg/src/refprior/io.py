"""CSV ingestion and persistence for observed data, latent states and chains.

File layouts (1-based indices)::

    catches.csv   t,cstar
    indices.csv   t,a,istar
    latent.csv    t,c,jtilde
    state.csv     t,a,n,f
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .model import ModelError, ObservedData, PopulationState


class DataFormatError(ModelError):
    pass


def _fmt(x: float) -> str:
    return repr(float(x))


def _read_rows(path: Path, header: list[str]) -> list[list[str]]:
    path = Path(path)
    if not path.exists():
        raise DataFormatError(f"{path}: file not found")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            got = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataFormatError(f"{path}: empty file") from None
        if got != header:
            raise DataFormatError(f"{path}: expected header {','.join(header)}, got {','.join(got)}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataFormatError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            rows.append((lineno, [c.strip() for c in row]))
        return rows


def _index(value: str, path, lineno, name) -> int:
    try:
        i = int(value)
    except ValueError:
        raise DataFormatError(f"{path}:{lineno}: {name} must be an integer, got {value!r}") from None
    if i < 1:
        raise DataFormatError(f"{path}:{lineno}: {name} must be >= 1 (1-based)")
    return i


def _number(value: str, path, lineno, name) -> float:
    try:
        return float(value)
    except ValueError:
        raise DataFormatError(f"{path}:{lineno}: {name} must be numeric, got {value!r}") from None


def _series(path, header, value_cols):
    rows = _read_rows(path, header)
    out = {}
    for lineno, row in rows:
        t = _index(row[0], path, lineno, "t")
        if t in out:
            raise DataFormatError(f"{path}:{lineno}: duplicate t={t}")
        out[t] = [_number(v, path, lineno, n) for v, n in zip(row[1:], value_cols)]
    T = len(out)
    if sorted(out) != list(range(1, T + 1)):
        raise DataFormatError(f"{path}: t must cover 1..{T} without gaps")
    return np.array([out[t] for t in range(1, T + 1)])


def _grid(path, header, value_cols):
    rows = _read_rows(path, header)
    cells = {}
    for lineno, row in rows:
        t = _index(row[0], path, lineno, "t")
        a = _index(row[1], path, lineno, "a")
        if (t, a) in cells:
            raise DataFormatError(f"{path}:{lineno}: duplicate (t={t}, a={a})")
        cells[(t, a)] = [_number(v, path, lineno, n) for v, n in zip(row[2:], value_cols)]
    if not cells:
        raise DataFormatError(f"{path}: no data rows")
    T = max(t for t, _ in cells)
    A = max(a for _, a in cells)
    if len(cells) != A * T:
        missing = [(t, a) for t in range(1, T + 1) for a in range(1, A + 1) if (t, a) not in cells]
        raise DataFormatError(f"{path}: not rectangular, missing (t, a) = {missing[:5]}")
    out = np.empty((len(value_cols), A, T))
    for (t, a), vals in cells.items():
        out[:, a - 1, t - 1] = vals
    return out


def read_observed(catches_path, indices_path) -> ObservedData:
    Cstar = _series(catches_path, ["t", "cstar"], ["cstar"])[:, 0]
    (Istar,) = _grid(indices_path, ["t", "a", "istar"], ["istar"])
    if Istar.shape[1] != Cstar.size:
        raise DataFormatError(
            f"catches cover T={Cstar.size} steps but indices cover T={Istar.shape[1]}")
    return ObservedData(Istar=Istar, Cstar=Cstar)


def write_observed(data: ObservedData, catches_path, indices_path) -> None:
    with open(catches_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "cstar"])
        for t, c in enumerate(data.Cstar, start=1):
            w.writerow([t, _fmt(c)])
    with open(indices_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "a", "istar"])
        for t in range(data.T):
            for a in range(data.A):
                w.writerow([t + 1, a + 1, _fmt(data.Istar[a, t])])


def write_state(state: PopulationState, latent_path, state_path) -> None:
    with open(latent_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "c", "jtilde"])
        for t in range(state.T):
            w.writerow([t + 1, _fmt(state.C[t]), _fmt(state.Jtilde[t])])
    with open(state_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "a", "n", "f"])
        for t in range(state.T):
            for a in range(state.A):
                w.writerow([t + 1, a + 1, _fmt(state.N[a, t]), _fmt(state.F[a, t])])


def read_state(latent_path, state_path) -> PopulationState:
    latent = _series(latent_path, ["t", "c", "jtilde"], ["c", "jtilde"])
    N, F = _grid(state_path, ["t", "a", "n", "f"], ["n", "f"])
    if N.shape[1] != latent.shape[0]:
        raise DataFormatError("latent.csv and state.csv disagree on T")
    return PopulationState(N=N, F=F, C=latent[:, 0], Jtilde=latent[:, 1])
