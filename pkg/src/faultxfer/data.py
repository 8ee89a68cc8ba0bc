"""Hourly telemetry tables, normalization, and synthetic building scenarios."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.signal import lfilter

from ._random import derive_seed, make_rng
from .errors import ParseError, RejectedInputError
from .kernel import (Dataset, KernelConfig, TransitionMatrix, feature_names, featurize_series,
                     perturb_matrix, simulate)

TIMESTAMP = "timestamp"


@dataclass(frozen=True, eq=False)
class RawTable:
    """Rectangular table of hourly readings.

    ``values`` is ``T x len(columns)``; ``timestamps`` are integer hour
    indices that increase by exactly one per row.
    """

    columns: tuple
    values: np.ndarray
    timestamps: np.ndarray

    def __post_init__(self):
        cols = tuple(str(c) for c in self.columns)
        values = np.array(self.values, dtype=float).reshape(-1, len(cols))
        ts = np.array(self.timestamps, dtype=np.int64).ravel()
        if ts.shape[0] != values.shape[0]:
            raise RejectedInputError(f"{ts.shape[0]} timestamps for {values.shape[0]} rows")
        if len(set(cols)) != len(cols) or TIMESTAMP in cols:
            raise RejectedInputError(f"column names must be unique and not {TIMESTAMP!r}")
        steps = np.diff(ts)
        if np.any(steps != 1):
            bad = int(np.flatnonzero(steps != 1)[0]) + 2
            raise ParseError("timestamps must increase by one hour per row", row=bad, column=TIMESTAMP)
        values.setflags(write=False)
        ts.setflags(write=False)
        object.__setattr__(self, "columns", cols)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "timestamps", ts)

    def __len__(self):
        return self.values.shape[0]

    def column(self, name) -> np.ndarray:
        try:
            return self.values[:, self.columns.index(name)]
        except ValueError:
            raise RejectedInputError(f"no column named {name!r}; have {list(self.columns)}") from None

    def select(self, names) -> np.ndarray:
        return np.column_stack([self.column(c) for c in names]) if names else np.empty((len(self), 0))

    def rows(self, start, stop) -> "RawTable":
        return RawTable(self.columns, self.values[start:stop], self.timestamps[start:stop])

    def with_columns(self, names, values) -> "RawTable":
        values = np.asarray(values, dtype=float).reshape(len(self), len(names))
        return RawTable(self.columns + tuple(names), np.hstack([self.values, values]), self.timestamps)

    def equals(self, other: "RawTable") -> bool:
        return (self.columns == other.columns
                and np.array_equal(self.values, other.values)
                and np.array_equal(self.timestamps, other.timestamps))


def load_csv(path) -> RawTable:
    """Read a headered CSV whose first column is ``timestamp``."""
    path = Path(path)
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot open {path}: {exc.strerror}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path} is empty") from None
        header = [h.strip() for h in header]
        if not header or header[0] != TIMESTAMP:
            raise ParseError(f"first column must be {TIMESTAMP!r}", row=0)
        ncol = len(header)
        ts, vals = [], []
        for i, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) != ncol:
                raise ParseError(f"expected {ncol} cells, found {len(row)}", row=i)
            try:
                ts.append(int(row[0]))
            except ValueError:
                raise ParseError(f"non-integer timestamp {row[0]!r}", row=i, column=TIMESTAMP) from None
            parsed = []
            for name, cell in zip(header[1:], row[1:]):
                try:
                    v = float(cell)
                except ValueError:
                    raise ParseError(f"non-numeric value {cell!r}", row=i, column=name) from None
                if not math.isfinite(v):
                    raise ParseError(f"non-finite value {cell!r}", row=i, column=name)
                parsed.append(v)
            vals.append(parsed)
    values = np.array(vals, dtype=float).reshape(len(vals), ncol - 1)
    return RawTable(tuple(header[1:]), values, np.array(ts, dtype=np.int64))


def write_csv(table: RawTable, path) -> None:
    # repr() round-trips floats exactly
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow((TIMESTAMP,) + table.columns)
        for t, row in zip(table.timestamps, table.values):
            w.writerow([str(int(t))] + [repr(float(v)) for v in row])


MATRIX_TAG = "transition-matrix"


def save_matrix(A: TransitionMatrix, path, dependent: Sequence[str], independent: Sequence[str]) -> None:
    """Write ``A`` as a headered CSV with a one-line dimension preamble.

    The preamble records the kernel layout and the variable names so that
    ``classify`` can rebuild features from a raw table.
    """
    cfg = A.config
    if cfg is None:
        raise RejectedInputError("only kernel-configured matrices can be saved")
    meta = {"n": cfg.n, "p": cfg.p, "k": cfg.k, "d": cfg.d, "window": cfg.window,
            "dependent": ";".join(dependent), "independent": ";".join(independent)}
    header = feature_names(cfg, dependent, independent)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# {MATRIX_TAG} " + " ".join(f"{k}={v}" for k, v in meta.items()) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in A.entries:
            w.writerow([repr(float(v)) for v in row])


def load_matrix(path):
    """Inverse of :func:`save_matrix`; returns ``(A, dependent, independent)``."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot open {path}: {exc.strerror}") from exc
    lines = text.splitlines()
    if not lines or not lines[0].startswith(f"# {MATRIX_TAG}"):
        raise ParseError(f"{path} lacks the {MATRIX_TAG!r} preamble", row=0)
    meta = {}
    for item in lines[0][len(f"# {MATRIX_TAG}"):].split():
        key, sep, value = item.partition("=")
        if not sep:
            raise ParseError(f"malformed preamble item {item!r}", row=0)
        meta[key] = value
    try:
        cfg = KernelConfig(int(meta["n"]), int(meta["k"]), int(meta["d"]), int(meta.get("window", 1)))
        p = int(meta["p"])
    except (KeyError, ValueError) as exc:
        raise ParseError(f"preamble missing or bad dimension: {exc}", row=0) from None
    if p != cfg.p:
        raise ParseError(f"preamble says p={p} but n, k, d, window imply p={cfg.p}", row=0)
    dependent = [v for v in meta.get("dependent", "").split(";") if v]
    independent = [v for v in meta.get("independent", "").split(";") if v]
    rows = list(csv.reader(lines[1:]))
    if not rows or len(rows[0]) != p:
        raise ParseError(f"header must have p={p} columns", row=1)
    body = [r for r in rows[1:] if r]
    if len(body) != cfg.n:
        raise ParseError(f"expected n={cfg.n} matrix rows, found {len(body)}")
    entries = np.empty((cfg.n, p))
    for i, r in enumerate(body):
        if len(r) != p:
            raise ParseError(f"expected {p} cells, found {len(r)}", row=i + 2)
        for j, cell in enumerate(r):
            try:
                entries[i, j] = float(cell)
            except ValueError:
                raise ParseError(f"non-numeric value {cell!r}", row=i + 2, column=rows[0][j]) from None
    if not np.all(np.isfinite(entries)):
        raise ParseError("matrix entries must be finite")
    return TransitionMatrix(entries, cfg), dependent, independent


# ---------------------------------------------------------------------------
# Normalization


@dataclass(frozen=True, eq=False)
class NormalizationParams:
    columns: tuple
    mins: np.ndarray
    maxs: np.ndarray

    def __post_init__(self):
        mins = np.asarray(self.mins, dtype=float).ravel()
        maxs = np.asarray(self.maxs, dtype=float).ravel()
        if mins.shape != (len(self.columns),) or maxs.shape != mins.shape:
            raise RejectedInputError("normalization parameters do not match columns")
        if np.any(maxs < mins):
            raise RejectedInputError("normalization max below min")
        object.__setattr__(self, "columns", tuple(self.columns))
        object.__setattr__(self, "mins", mins)
        object.__setattr__(self, "maxs", maxs)

    @property
    def constant(self) -> np.ndarray:
        """Mask of columns whose training range is zero."""
        return self.maxs == self.mins

    @classmethod
    def from_table(cls, table: RawTable) -> "NormalizationParams":
        if len(table) == 0:
            raise RejectedInputError("cannot compute normalization from an empty table")
        return cls(table.columns, table.values.min(axis=0), table.values.max(axis=0))

    def save(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.columns)
            w.writerow([repr(float(v)) for v in self.mins])
            w.writerow([repr(float(v)) for v in self.maxs])

    @classmethod
    def load(cls, path) -> "NormalizationParams":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = [r for r in csv.reader(fh) if r]
        if len(rows) != 3 or not (len(rows[0]) == len(rows[1]) == len(rows[2])):
            raise ParseError(f"{path}: expected header, min row and max row")
        try:
            mins = [float(v) for v in rows[1]]
            maxs = [float(v) for v in rows[2]]
        except ValueError as exc:
            raise ParseError(f"{path}: {exc}") from None
        return cls(tuple(rows[0]), mins, maxs)


def normalize(table: RawTable, params: Optional[NormalizationParams] = None):
    """Min-max scale each column to [0, 1] over the parameter range.

    Without ``params`` the range is taken from ``table`` itself.  Values
    outside the training range map outside [0, 1] and are not clipped;
    constant columns map to 0.
    """
    if params is None:
        params = NormalizationParams.from_table(table)
    idx = []
    for c in table.columns:
        if c not in params.columns:
            raise RejectedInputError(f"normalization parameters lack column {c!r}")
        idx.append(params.columns.index(c))
    lo = params.mins[idx]
    span = params.maxs[idx] - lo
    safe = np.where(span > 0, span, 1.0)
    out = np.where(span > 0, (table.values - lo) / safe, 0.0)
    return RawTable(table.columns, out, table.timestamps), params


def denormalize(table: RawTable, params: NormalizationParams) -> RawTable:
    idx = [params.columns.index(c) for c in table.columns]
    lo = params.mins[idx]
    span = params.maxs[idx] - lo
    return RawTable(table.columns, table.values * span + lo, table.timestamps)


# ---------------------------------------------------------------------------
# Time handling


def embed_time(hour_of_day: int, day_of_week: int) -> np.ndarray:
    """Hour and weekday as points on the unit circle: ``(cos, sin)`` each."""
    if not (0 <= hour_of_day <= 23 and 0 <= day_of_week <= 6):
        raise RejectedInputError(f"hour must be 0-23 and day 0-6, got {hour_of_day}, {day_of_week}")
    h = 2.0 * math.pi * hour_of_day / 24.0
    d = 2.0 * math.pi * day_of_week / 7.0
    return np.array([math.cos(h), math.sin(h), math.cos(d), math.sin(d)])


TIME_COLUMNS = ("hour_cos", "hour_sin", "day_cos", "day_sin")


def add_time_features(table: RawTable, start_day: int = 0) -> RawTable:
    """Append the four circular time columns derived from the hour index.

    Hour index 0 is taken as midnight on weekday ``start_day``.
    """
    emb = [embed_time(int(t) % 24, (int(t) // 24 + start_day) % 7) for t in table.timestamps]
    return table.with_columns(TIME_COLUMNS, np.array(emb).reshape(len(table), 4))


def split_chronological(table: RawTable, fraction: float = 0.5):
    """First ``ceil(fraction * T)`` rows for training, the rest for validation."""
    T = len(table)
    if not 0 < fraction < 1:
        raise RejectedInputError(f"fraction must be in (0, 1), got {fraction}")
    cut = math.ceil(fraction * T)
    if T < 2 or cut >= T:
        raise RejectedInputError(f"cannot split {T} rows at fraction {fraction}")
    return table.rows(0, cut), table.rows(cut, T)


def build_dataset(table: RawTable, dependent: Sequence[str], independent: Sequence[str],
                  config: KernelConfig) -> Dataset:
    """Pairs ``(s_t, x_{t+1})`` from consecutive rows.

    ``s_t`` featurizes the ``config.window`` rows ending at ``t``; the
    dataset timestamps are the input rows' hour indices.
    """
    if (len(dependent), len(independent)) != (config.n, config.k):
        raise RejectedInputError(
            f"config expects n={config.n}, k={config.k} but got {len(dependent)} dependent "
            f"and {len(independent)} independent columns"
        )
    Xr = table.select(list(dependent))
    Ur = table.select(list(independent))
    L = config.window
    T = len(table)
    if T < L + 1:
        raise RejectedInputError(f"need at least {L + 1} rows, got {T}")
    S = featurize_series(Xr[:T - 1], Ur[:T - 1], config)
    return Dataset(S, Xr[L:].T, table.timestamps[L - 1:T - 1])


# ---------------------------------------------------------------------------
# Synthetic buildings

# Fan-power output driven by outdoor temperature, three zone temperatures,
# humidity and three fan powers.
DEFAULT_KERNEL = KernelConfig(n=1, k=7, d=2)


@dataclass(frozen=True)
class ScenarioSpec:
    kernel: KernelConfig = DEFAULT_KERNEL
    matrix_seed: Optional[int] = None
    drift: float = 0.1
    fault_sigma: float = 1.0
    n_source: int = 4000
    n_target: int = 2000
    n_fault: int = 2000
    noise: float = 1.0
    inputs: str = "seasonal"

    def __post_init__(self):
        if self.inputs not in INPUT_PROFILES:
            raise RejectedInputError(f"inputs must be one of {sorted(INPUT_PROFILES)}, got {self.inputs!r}")
        for name in ("drift", "fault_sigma", "noise"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise RejectedInputError(f"{name} must be finite and >= 0, got {v}")
        for name in ("n_source", "n_target", "n_fault"):
            if getattr(self, name) < 0:
                raise RejectedInputError(f"{name} must be >= 0")


@dataclass(frozen=True, eq=False)
class Scenario:
    building1: Dataset
    building1_fault: Dataset
    building2: Dataset
    building2_fault: Dataset
    A1: TransitionMatrix
    A1_fault: TransitionMatrix
    A2: TransitionMatrix
    A2_fault: TransitionMatrix


SEASON_HOURS = 24 * 180
SEASON_AMP = 0.15
DAILY_AMP = 0.2
AR_RHO = 0.9
AR_SD = 0.1


def operating_profile(channels: int, T: int, rng) -> np.ndarray:
    """``T x channels`` raw readings that drift slowly, cycle daily, and wander.

    Each channel is ``0.5 + 0.15 sin(season) + 0.2 sin(day) + AR(1)`` with
    random phases, so a few consecutive days cover a narrow slice of the
    range the channel visits over months.
    """
    t = np.arange(T)[:, None] + rng.uniform(0, SEASON_HOURS)
    season = SEASON_AMP * np.sin(2 * np.pi * t / SEASON_HOURS + rng.uniform(0, 2 * np.pi, channels))
    daily = DAILY_AMP * np.sin(2 * np.pi * t / 24 + rng.uniform(0, 2 * np.pi, channels))
    rho = AR_RHO
    shocks = AR_SD * math.sqrt(1 - rho * rho) * rng.standard_normal((T, channels))
    start = AR_SD * rng.standard_normal(channels)
    ar, _ = lfilter([1.0], [1.0, -rho], shocks, axis=0, zi=(rho * start)[None, :])
    return 0.5 + season + daily + ar


def iid_inputs(config: KernelConfig, T: int, rng) -> np.ndarray:
    """``p x T`` featurized inputs from raw readings i.i.d. uniform on [0, 1]."""
    if T == 0:
        return np.empty((config.p, 0))
    raw = rng.uniform(0.0, 1.0, (T + config.window - 1, config.n + config.k))
    return featurize_series(raw[:, :config.n], raw[:, config.n:], config)


def profile_inputs(config: KernelConfig, T: int, rng) -> np.ndarray:
    """``p x T`` featurized inputs built from one :func:`operating_profile` run."""
    if T == 0:
        return np.empty((config.p, 0))
    L = config.window
    raw = operating_profile(config.n + config.k, T + L - 1, rng)
    return featurize_series(raw[:, :config.n], raw[:, config.n:], config)


INPUT_PROFILES = {"seasonal": profile_inputs, "iid": iid_inputs}


def generate_scenario(spec: ScenarioSpec, seed: int = 0) -> Scenario:
    """Two related synthetic buildings plus fault variants.

    ``A1`` has standard normal entries; ``A2 = A1 + drift * Delta`` with
    ``Delta`` standard normal; each fault matrix perturbs its building's
    matrix entry-wise with standard deviation ``fault_sigma``, using the
    same draw for both buildings.  Inputs come from the ``spec.inputs``
    profile; each dataset is its own stretch of hours.
    """
    cfg = spec.kernel
    mseed = seed if spec.matrix_seed is None else spec.matrix_seed
    mrng = make_rng(mseed, 0)
    W1 = mrng.standard_normal((cfg.n, cfg.p))
    W2 = W1 + spec.drift * mrng.standard_normal((cfg.n, cfg.p))
    A1 = TransitionMatrix(W1, cfg)
    A2 = TransitionMatrix(W2, cfg)
    A1f = perturb_matrix(A1, spec.fault_sigma, derive_seed(mseed, 1))
    A2f = perturb_matrix(A2, spec.fault_sigma, derive_seed(mseed, 1))

    def draw(A, T, key):
        S = INPUT_PROFILES[spec.inputs](cfg, T, make_rng(seed, key, 0))
        return simulate(A, S, spec.noise, derive_seed(seed, key, 1))

    return Scenario(
        building1=draw(A1, spec.n_source, 10),
        building1_fault=draw(A1f, spec.n_fault, 11),
        building2=draw(A2, spec.n_target, 20),
        building2_fault=draw(A2f, spec.n_fault, 21),
        A1=A1, A1_fault=A1f, A2=A2, A2_fault=A2f,
    )
