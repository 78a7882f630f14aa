"""Profiles, context vocabulary, CSV ingestion, faux data and sparsity labels.

CSV layouts
-----------
profiles:  ``household_id,date,channel,v0,...,v{T-1}`` with ``channel`` in
           {load, pv}; one row per (household, date, channel).
metadata:  ``household_id,<context_col_1>,...``; categorical text values.

Month and weekday are derived from the ISO date and appended after the
declared metadata columns (January = 0, Monday = 0).
"""

from __future__ import annotations

import csv
import datetime as dt
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .numerics import Rng

CHANNELS = ("load", "pv")
MONTHS = tuple(f"{m:02d}" for m in range(1, 13))
WEEKDAYS = ("mon", "tue", "wed", "thu", "fri", "sat", "sun")
TIME_VARIABLES = ("month", "weekday")


class DataError(ValueError):
    pass


@dataclass
class LoadProfile:
    series: np.ndarray  # (T, d) kWh
    date: dt.date
    household_id: str
    context_codes: np.ndarray


class ContextVocabulary:
    """Ordered categorical variables with a fixed integer coding."""

    def __init__(self, variables):
        self.variables = [(str(name), [str(c) for c in cats]) for name, cats in variables]
        names = [n for n, _ in self.variables]
        if len(set(names)) != len(names):
            raise DataError(f"duplicate context variable names in {names}")
        for name, cats in self.variables:
            if not cats:
                raise DataError(f"context variable {name!r} has no categories")
            if len(set(cats)) != len(cats):
                raise DataError(f"context variable {name!r} has duplicate categories")
        self._index = [{c: i for i, c in enumerate(cats)} for _, cats in self.variables]

    def __eq__(self, other):
        return isinstance(other, ContextVocabulary) and self.variables == other.variables

    def __repr__(self):
        return f"ContextVocabulary({[(n, len(c)) for n, c in self.variables]})"

    @property
    def names(self) -> list[str]:
        return [n for n, _ in self.variables]

    @property
    def cardinalities(self) -> list[int]:
        return [len(c) for _, c in self.variables]

    def __len__(self):
        return len(self.variables)

    def position(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise DataError(f"unknown context variable {name!r}") from None

    def encode_value(self, i: int, value: str) -> int:
        try:
            return self._index[i][str(value)]
        except KeyError:
            name = self.variables[i][0]
            raise DataError(f"unseen category {value!r} for context variable {name!r}") from None

    def encode(self, values) -> np.ndarray:
        if len(values) != len(self):
            raise DataError(f"expected {len(self)} context values, got {len(values)}")
        return np.array([self.encode_value(i, v) for i, v in enumerate(values)], dtype=np.int64)

    def decode(self, codes) -> list[str]:
        self.validate(np.asarray(codes)[None, :])
        return [self.variables[i][1][int(c)] for i, c in enumerate(codes)]

    def validate(self, codes: np.ndarray) -> None:
        codes = np.atleast_2d(np.asarray(codes))
        if codes.shape[1] != len(self):
            raise DataError(f"context codes have {codes.shape[1]} columns, vocabulary has {len(self)}")
        for i, (name, cats) in enumerate(self.variables):
            col = codes[:, i]
            bad = (col < 0) | (col >= len(cats))
            if np.any(bad):
                raise DataError(
                    f"code {int(col[bad][0])} out of range for context variable {name!r} "
                    f"with {len(cats)} categories"
                )

    def to_json(self) -> list:
        return [[n, list(c)] for n, c in self.variables]

    @classmethod
    def from_json(cls, obj) -> "ContextVocabulary":
        return cls([(n, c) for n, c in obj])


def month_weekday(date: dt.date) -> tuple[str, str]:
    return MONTHS[date.month - 1], WEEKDAYS[date.weekday()]


def build_vocabulary(metadata: dict[str, dict[str, str]], context_columns) -> ContextVocabulary:
    """Sorted unique categories per declared column, then month and weekday."""
    variables = []
    for col in context_columns:
        values = set()
        for hid, row in metadata.items():
            if col not in row:
                raise DataError(f"metadata for household {hid!r} lacks column {col!r}")
            values.add(row[col])
        if not values:
            raise DataError(f"context column {col!r} is empty")
        variables.append((col, sorted(values)))
    variables.append(("month", list(MONTHS)))
    variables.append(("weekday", list(WEEKDAYS)))
    return ContextVocabulary(variables)


@dataclass
class Dataset:
    series: np.ndarray  # (n, T, d)
    codes: np.ndarray  # (n, N) int
    vocabulary: ContextVocabulary
    household_ids: list[str]
    dates: list[dt.date]
    channels: tuple[str, ...] = ("load",)
    sparsity_mask: np.ndarray | None = None

    def __post_init__(self):
        self.series = np.asarray(self.series, dtype=np.float64)
        self.codes = np.asarray(self.codes, dtype=np.int64)
        if self.series.ndim != 3:
            raise DataError(f"series must be (n, T, d), got {self.series.shape}")
        n = self.series.shape[0]
        if self.codes.shape != (n, len(self.vocabulary)):
            raise DataError(f"codes shape {self.codes.shape} does not match {n} profiles")
        if len(self.household_ids) != n or len(self.dates) != n:
            raise DataError("household_ids/dates length mismatch")
        if not np.all(np.isfinite(self.series)):
            raise DataError("non-finite profile values")
        self.vocabulary.validate(self.codes) if n else None

    def __len__(self):
        return self.series.shape[0]

    def __getitem__(self, i) -> LoadProfile:
        return LoadProfile(self.series[i], self.dates[i], self.household_ids[i], self.codes[i])

    @property
    def T(self) -> int:
        return self.series.shape[1]

    @property
    def d(self) -> int:
        return self.series.shape[2]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        if idx.dtype == bool:
            idx = np.flatnonzero(idx)
        return Dataset(
            self.series[idx], self.codes[idx], self.vocabulary,
            [self.household_ids[i] for i in idx], [self.dates[i] for i in idx],
            self.channels, None if self.sparsity_mask is None else self.sparsity_mask[idx],
        )

    def combination_keys(self, columns=None) -> list[tuple]:
        codes = self.codes if columns is None else self.codes[:, list(columns)]
        return [tuple(int(c) for c in row) for row in codes]

    def household_metadata(self) -> dict[str, dict[str, str]]:
        """Household-level context values (every non-time variable)."""
        meta = {}
        n_house = len(self.vocabulary) - len(TIME_VARIABLES)
        for hid, row in zip(self.household_ids, self.codes):
            values = self.vocabulary.decode(row)[:n_house]
            meta.setdefault(hid, dict(zip(self.vocabulary.names[:n_house], values)))
        return meta


# -- CSV ingestion -----------------------------------------------------------

def load_profiles_csv(path) -> list[dict]:
    """Parse a profiles CSV into raw records ``{household_id, date, channel, values}``."""
    path = Path(path)
    records = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty profiles file") from None
        if header[:3] != ["household_id", "date", "channel"] or len(header) < 4:
            raise DataError(f"{path}: header must start with household_id,date,channel,v0,...")
        T = len(header) - 3
        expected = [f"v{i}" for i in range(T)]
        if header[3:] != expected:
            raise DataError(f"{path}: value columns must be v0..v{T - 1}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != T + 3:
                raise DataError(f"{path}: row {lineno} has {len(row) - 3} values, expected {T}")
            hid, date_s, channel = row[0], row[1], row[2]
            if channel not in CHANNELS:
                raise DataError(f"{path}: row {lineno} has unknown channel {channel!r}")
            try:
                date = dt.date.fromisoformat(date_s)
            except ValueError:
                raise DataError(f"{path}: row {lineno} has invalid date {date_s!r}") from None
            try:
                values = np.array([float(v) for v in row[3:]])
            except ValueError:
                raise DataError(f"{path}: row {lineno} has a non-numeric value") from None
            if not np.all(np.isfinite(values)):
                raise DataError(f"{path}: row {lineno} has non-finite values")
            records.append({"household_id": hid, "date": date, "channel": channel,
                            "values": values, "row": lineno})
    if not records:
        raise DataError(f"{path}: no profiles")
    return records


def load_metadata_csv(path) -> tuple[list[str], dict[str, dict[str, str]]]:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or reader.fieldnames[0] != "household_id":
            raise DataError(f"{path}: header must start with household_id")
        columns = list(reader.fieldnames[1:])
        meta = {}
        for lineno, row in enumerate(reader, start=2):
            hid = row["household_id"]
            if hid in meta:
                raise DataError(f"{path}: duplicate household {hid!r} on row {lineno}")
            if any(row[c] in (None, "") for c in columns):
                raise DataError(f"{path}: row {lineno} has an empty context value")
            meta[hid] = {c: row[c] for c in columns}
    return columns, meta


def assemble_dataset(records, metadata, context_columns=None, vocabulary=None,
                     channels=None) -> Dataset:
    """Join raw profile records with household metadata into a :class:`Dataset`."""
    if context_columns is None:
        context_columns = list(next(iter(metadata.values())).keys()) if metadata else []
    if vocabulary is None:
        vocabulary = build_vocabulary(metadata, context_columns)
    declared = vocabulary.names[: len(vocabulary) - len(TIME_VARIABLES)]
    if list(declared) != list(context_columns):
        raise DataError(f"context columns {list(context_columns)} differ from vocabulary {declared}")
    present = sorted({r["channel"] for r in records}, key=CHANNELS.index)
    channels = tuple(channels or present)
    grouped: dict[tuple, dict] = {}
    order = []
    for r in records:
        key = (r["household_id"], r["date"])
        if key not in grouped:
            grouped[key] = {}
            order.append(key)
        if r["channel"] in grouped[key]:
            raise DataError(f"row {r['row']}: duplicate {r['channel']} row for {key[0]} on {key[1]}")
        grouped[key][r["channel"]] = r
    T = len(records[0]["values"])
    series, codes, hids, dates = [], [], [], []
    for key in order:
        rows = grouped[key]
        missing = [c for c in channels if c not in rows]
        if missing:
            first = next(iter(rows.values()))["row"]
            raise DataError(f"row {first}: profile {key[0]} {key[1]} lacks channel(s) {missing}")
        for c in channels:
            if len(rows[c]["values"]) != T:
                raise DataError(f"row {rows[c]['row']}: inconsistent length {len(rows[c]['values'])} != {T}")
        hid, date = key
        if hid not in metadata:
            raise DataError(f"row {next(iter(rows.values()))['row']}: household {hid!r} missing from metadata")
        values = [metadata[hid][c] for c in context_columns] + list(month_weekday(date))
        codes.append(vocabulary.encode(values))
        series.append(np.stack([rows[c]["values"] for c in channels], axis=-1))
        hids.append(hid)
        dates.append(date)
    return Dataset(np.array(series), np.array(codes), vocabulary, hids, dates, channels)


def load_dataset(profiles_path, metadata_path, context_columns=None, vocabulary=None) -> Dataset:
    columns, meta = load_metadata_csv(metadata_path)
    if context_columns is None:
        context_columns = columns
    missing = [c for c in context_columns if c not in columns]
    if missing:
        raise DataError(f"{metadata_path}: missing context column(s) {missing}")
    return assemble_dataset(load_profiles_csv(profiles_path), meta, context_columns, vocabulary)


def _atomic_write(path: Path, write) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("w", newline="") as fh:
        write(fh)
    tmp.replace(path)


def write_profiles_csv(dataset: Dataset, path) -> None:
    def write(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["household_id", "date", "channel"] + [f"v{i}" for i in range(dataset.T)])
        for i in range(len(dataset)):
            for c, ch in enumerate(dataset.channels):
                w.writerow([dataset.household_ids[i], dataset.dates[i].isoformat(), ch]
                           + [repr(float(v)) for v in dataset.series[i, :, c]])
    _atomic_write(path, write)


def write_metadata_csv(dataset: Dataset, path) -> None:
    meta = dataset.household_metadata()
    columns = dataset.vocabulary.names[: len(dataset.vocabulary) - len(TIME_VARIABLES)]

    def write(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["household_id"] + columns)
        for hid in sorted(meta):
            w.writerow([hid] + [meta[hid][c] for c in columns])
    _atomic_write(path, write)


def canonical_date(month_code: int, weekday_code: int, year: int = 2018) -> dt.date:
    """First date in ``year`` with the given month and weekday codes."""
    d = dt.date(year, month_code + 1, 1)
    return d + dt.timedelta(days=(weekday_code - d.weekday()) % 7)


# -- faux data ---------------------------------------------------------------

@dataclass
class FauxSpec:
    """Parameters of the synthetic household population.

    Household variables are assigned per household; the last category of
    every variable in ``sparse_variables`` is rare (``sparse_rate`` of
    households) and carries effects scaled by ``rare_effect_scale``. The
    variable named ``pv_variable`` is balanced within every cell of the
    other household variables; its category ``pv_yes`` receives a midday dip.
    """

    n_households: int = 60
    days_per_household: int = 40
    T: int = 24
    d: int = 1
    variables: dict = field(default_factory=lambda: {"location": 4, "pv": 2})
    pv_variable: str = "pv"
    pv_yes: str = "yes"
    base_level: float = 0.6
    base_amplitude: float = 0.4
    effect_scale: float = 0.15
    phase_scale: float = 0.6
    month_amplitude: float = 0.15
    weekend_level: float = 0.08
    pv_dip_depth: float = 0.5
    pv_dip_width: float = 0.12
    noise_level: float = 0.04
    sparse_variables: tuple = ("location",)
    sparse_rate: float = 0.05
    rare_effect_scale: float = 2.5
    year: int = 2018

    def validate(self) -> None:
        if self.n_households < 1 or self.days_per_household < 1 or self.T < 4:
            raise DataError("faux spec needs n_households >= 1, days_per_household >= 1, T >= 4")
        if self.d not in (1, 2):
            raise DataError("faux spec supports d in {1, 2}")
        if self.days_per_household > 365:
            raise DataError("days_per_household must be <= 365")
        if self.noise_level < 0:
            raise DataError("noise_level must be >= 0")
        for name, card in self.variables.items():
            if int(card) < 2:
                raise DataError(f"variable {name!r} needs at least 2 categories")
            if name in TIME_VARIABLES:
                raise DataError(f"variable name {name!r} is reserved")
        if self.pv_variable and self.pv_variable not in self.variables:
            raise DataError(f"pv_variable {self.pv_variable!r} not among variables")
        if self.pv_variable and int(self.variables[self.pv_variable]) != 2:
            raise DataError("pv variable must have exactly 2 categories")
        if not 0 <= self.sparse_rate < 1:
            raise DataError("sparse_rate must lie in [0, 1)")

    def categories(self, name: str) -> list[str]:
        if name == self.pv_variable:
            return ["no", "yes"]
        return [f"{name[:3]}{i}" for i in range(int(self.variables[name]))]

    def to_dict(self) -> dict:
        out = asdict(self)
        out["sparse_variables"] = list(self.sparse_variables)
        return out


def pv_dip_profile(spec: FauxSpec) -> np.ndarray:
    """Ground-truth additive pv effect on net load, shape (T,)."""
    tau = (np.arange(spec.T) + 0.5) / spec.T
    return -spec.pv_dip_depth * np.exp(-0.5 * ((tau - 0.5) / spec.pv_dip_width) ** 2)


def _assign_households(spec: FauxSpec, rng: Rng) -> dict[str, np.ndarray]:
    # Household variables are drawn per pair of households; with a pv variable
    # the two members of a pair take opposite states, so every cell is balanced.
    n = spec.n_households
    paired = bool(spec.pv_variable) and spec.pv_variable in spec.variables
    units = (n + 1) // 2 if paired else n
    unit_of = np.arange(n) // 2 if paired else np.arange(n)
    out = {}
    for name, card in spec.variables.items():
        if name == spec.pv_variable:
            continue
        card = int(card)
        if name in spec.sparse_variables and spec.sparse_rate > 0:
            n_rare = max(1, int(round(spec.sparse_rate * units)))
            common = np.arange(units - n_rare) % (card - 1)
            labels = np.concatenate([common, np.full(n_rare, card - 1)])
        else:
            labels = np.arange(units) % card
        out[name] = labels[rng.permutation(units)][unit_of]
    if paired:
        start = rng.integers(2, units)
        out[spec.pv_variable] = (start[unit_of] + np.arange(n)) % 2
    return out


def _draw_effects(spec: FauxSpec, rng: Rng) -> dict:
    effects = {}
    for name, card in spec.variables.items():
        if name == spec.pv_variable:
            continue
        per = {}
        for c, cat in enumerate(spec.categories(name)):
            scale = spec.rare_effect_scale if (name in spec.sparse_variables and c == int(card) - 1) else 1.0
            u = 2.0 * rng.uniform(4) - 1.0
            per[cat] = {
                "level": float(scale * spec.effect_scale * u[0]),
                "amplitude": float(scale * spec.effect_scale * u[1]),
                "phase": float(scale * spec.phase_scale * u[2]),
                "trend": float(scale * spec.effect_scale * u[3]),
            }
        effects[name] = per
    return effects


def faux_series(spec: FauxSpec, effects: dict, values: dict[str, str], date: dt.date) -> np.ndarray:
    """Noise-free series (T, d) for one household context and date."""
    tau = (np.arange(spec.T) + 0.5) / spec.T
    level, amp, phase, trend = spec.base_level, spec.base_amplitude, 0.0, 0.0
    for name, cat in values.items():
        if name in effects:
            e = effects[name][cat]
            level += e["level"]
            amp += e["amplitude"]
            phase += e["phase"]
            trend += e["trend"]
    amp *= 1.0 + spec.month_amplitude * math.cos(2.0 * math.pi * (date.month - 1) / 12.0)
    if date.weekday() >= 5:
        level += spec.weekend_level
    # evening-peaked daily cycle plus a linear intraday drift
    load = level + amp * 0.5 * (1.0 - np.cos(2.0 * np.pi * tau - math.pi * 0.35 + phase)) \
        + trend * (tau - 0.5)
    has_pv = spec.pv_variable and values.get(spec.pv_variable) == spec.pv_yes
    dip = pv_dip_profile(spec)
    if spec.d == 1:
        return (load + (dip if has_pv else 0.0))[:, None]
    pv = -dip if has_pv else np.zeros(spec.T)
    return np.stack([load, pv], axis=-1)


def generate_faux_dataset(spec: FauxSpec, seed: int = 0) -> tuple[Dataset, dict]:
    """Sample a faux population; returns the dataset and its ground-truth effects."""
    spec.validate()
    rng = Rng(seed)
    assign = _assign_households(spec, rng.spawn(1))
    effects = _draw_effects(spec, rng.spawn(2))
    date_rng, noise_rng = rng.spawn(3), rng.spawn(4)
    names = list(spec.variables)
    metadata = {}
    for h in range(spec.n_households):
        metadata[f"h{h:04d}"] = {k: spec.categories(k)[int(assign[k][h])] for k in names}
    vocabulary = ContextVocabulary(
        [(k, spec.categories(k)) for k in names] + [("month", MONTHS), ("weekday", WEEKDAYS)]
    )
    start = dt.date(spec.year, 1, 1)
    series, codes, hids, dates = [], [], [], []
    for hid, values in metadata.items():
        days = np.sort(date_rng.permutation(365)[: spec.days_per_household])
        for day in days:
            date = start + dt.timedelta(days=int(day))
            x = faux_series(spec, effects, values, date)
            series.append(x)
            codes.append(vocabulary.encode([values[k] for k in names] + list(month_weekday(date))))
            hids.append(hid)
            dates.append(date)
    series = np.array(series)
    if spec.noise_level > 0:
        series = series + spec.noise_level * noise_rng.normal(series.shape)
    channels = ("load",) if spec.d == 1 else ("load", "pv")
    truth = {
        "spec": spec.to_dict(),
        "seed": seed,
        "effects": effects,
        "pv_dip": pv_dip_profile(spec).tolist(),
        "households": metadata,
    }
    return Dataset(series, np.array(codes), vocabulary, hids, dates, channels), truth


def write_truth_json(truth: dict, path) -> None:
    _atomic_write(Path(path), lambda fh: json.dump(truth, fh, indent=2, sort_keys=True))


# -- k-means and sparsity ----------------------------------------------------

def kmeans(points, k: int, seed: int = 0, max_iter: int = 100):
    """Lloyd's algorithm with k-means++ seeding. Returns ``(assignments, centroids)``."""
    X = np.asarray(points, dtype=np.float64)
    n = X.shape[0]
    if k < 1 or n < k:
        raise ValueError(f"kmeans needs 1 <= k <= n, got k={k}, n={n}")
    rng = Rng(seed)
    centroids = np.empty((k, X.shape[1]))
    centroids[0] = X[rng.integers(n)]
    d2 = ((X - centroids[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            idx = rng.integers(n)
        else:
            idx = int(rng.categorical(d2 / total))
        centroids[j] = X[idx]
        d2 = np.minimum(d2, ((X - centroids[j]) ** 2).sum(axis=1))
    assign = np.full(n, -1)
    for _ in range(max_iter):
        dist = ((X[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        new = dist.argmin(axis=1)
        for j in range(k):
            if not np.any(new == j):
                # re-seed an empty cluster at the point farthest from its centroid
                far = int(dist[np.arange(n), new].argmax())
                new[far] = j
                dist[far] = 0.0
        if np.array_equal(new, assign):
            break
        assign = new
        for j in range(k):
            centroids[j] = X[assign == j].mean(axis=0)
    return assign, centroids


def profile_features(series: np.ndarray) -> np.ndarray:
    """mean, std, min, max per channel -> (n, 4 d)."""
    return np.concatenate(
        [series.mean(axis=1), series.std(axis=1), series.min(axis=1), series.max(axis=1)], axis=1
    )


def frequency_sparse(keys: list[tuple], freq_percentile: float = 0.90) -> np.ndarray:
    n = len(keys)
    counts: dict[tuple, int] = {}
    for key in keys:
        counts[key] = counts.get(key, 0) + 1
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    common, covered = set(), 0
    for key, c in ranked:
        if covered >= freq_percentile * n:
            break
        common.add(key)
        covered += c
    return np.array([key not in common for key in keys], dtype=bool)


def cluster_sparse(series: np.ndarray, k: int = 10, cluster_fraction: float = 0.10,
                   seed: int = 0) -> np.ndarray:
    """Profiles in the smallest k-means clusters that together hold <= ``cluster_fraction`` of all."""
    feats = profile_features(series)
    std = feats.std(axis=0)
    feats = (feats - feats.mean(axis=0)) / np.where(std > 0, std, 1.0)
    assign, _ = kmeans(feats, k, seed=seed)
    sizes = np.bincount(assign, minlength=k)
    order = np.argsort(sizes, kind="stable")
    # smallest clusters, accumulated while they cover at most the target share of profiles
    covered = np.cumsum(sizes[order])
    n_sparse = max(1, int(np.searchsorted(covered, cluster_fraction * len(series), side="right")))
    return np.isin(assign, order[:n_sparse])


def household_columns(vocabulary: ContextVocabulary) -> list[int]:
    """Positions of the non-time context variables."""
    return [i for i, name in enumerate(vocabulary.names) if name not in TIME_VARIABLES]


def label_sparsity(dataset: Dataset, freq_percentile: float = 0.90, cluster_fraction: float = 0.10,
                   k: int = 10, seed: int = 0, columns=None) -> np.ndarray:
    """Union of frequency-sparse and cluster-sparse profiles.

    Combination frequencies are counted over ``columns`` (default: the
    household variables, leaving month and weekday to temporal sparsity).
    """
    n = len(dataset)
    if n == 0:
        raise DataError("cannot label sparsity of an empty dataset")
    if k > n:
        raise ValueError(f"k={k} exceeds the number of profiles ({n})")
    if columns is None:
        columns = household_columns(dataset.vocabulary) or None
    freq = frequency_sparse(dataset.combination_keys(columns), freq_percentile)
    clus = cluster_sparse(dataset.series, k, cluster_fraction, seed)
    return freq | clus
