"""Lambda ablation and pv-extrapolation protocols."""

from __future__ import annotations

import csv
import dataclasses
import io
from dataclasses import dataclass

import numpy as np

from .data import Dataset, DataError, TIME_VARIABLES
from .metrics import context_fid_series, sparse_synthetic_mask
from .trainer import Checkpoint, TrainConfig, generate_dataset, train

ABLATION_COLUMNS = ("model", "lambda", "seed", "overall_context_fid", "sparse_only_context_fid")


# -- lambda ablation -----------------------------------------------------------

def _fmt(v) -> str:
    return "" if v is None else repr(float(v))


def ablation_run(config: TrainConfig, dataset: Dataset, sparsity_mask, lam: float, seed: int,
                 eval_seed: int = 0) -> dict:
    """One (lambda, seed) cell: train, generate for every training context, score."""
    cfg = dataclasses.replace(config, lambda_aux=float(lam), seed=int(seed))
    ckpt = train(cfg, dataset)
    syn = generate_dataset(ckpt, dataset.codes, 1, seed=eval_seed + 1000 * int(seed), dates=dataset.dates)
    overall = context_fid_series(dataset.series, syn.series)
    mask = np.asarray(sparsity_mask, dtype=bool)
    syn_mask = sparse_synthetic_mask(dataset, syn, mask)
    sparse = None
    if mask.sum() >= 2 and syn_mask.sum() >= 2:
        sparse = context_fid_series(dataset.series[mask], syn.series[syn_mask])
    return {"model": cfg.model, "lambda": float(lam), "seed": int(seed),
            "overall_context_fid": overall, "sparse_only_context_fid": sparse}


def ablation_medians(rows: list[dict], lambdas) -> list[dict]:
    out = []
    for lam in lambdas:
        cell = [r for r in rows if r["lambda"] == float(lam)]
        med = {"model": cell[0]["model"] if cell else "", "lambda": float(lam), "seed": "median"}
        for key in ABLATION_COLUMNS[3:]:
            vals = [r[key] for r in cell if r[key] is not None]
            med[key] = float(np.median(vals)) if vals else None
        out.append(med)
    return out


def ablate_lambda(config: TrainConfig, dataset: Dataset, sparsity_mask, lambdas, seeds,
                  eval_seed: int = 0, progress=None) -> list[dict]:
    """Per-(lambda, seed) Context-FID rows followed by one median row per lambda.

    A failed sub-run leaves its metric cells empty and records the error.
    """
    lambdas = [float(x) for x in lambdas]
    seeds = [int(s) for s in seeds]
    if len(set(lambdas)) < 2:
        raise ValueError("ablation needs at least 2 distinct lambda values")
    if len(set(seeds)) < 3:
        raise ValueError("ablation needs at least 3 distinct seeds")
    rows = []
    for lam in lambdas:
        for seed in seeds:
            try:
                row = ablation_run(config, dataset, sparsity_mask, lam, seed, eval_seed)
            except Exception as err:  # a failed cell is reported, not fatal
                row = {"model": config.model, "lambda": lam, "seed": seed,
                       "overall_context_fid": None, "sparse_only_context_fid": None, "error": str(err)}
            rows.append(row)
            if progress:
                progress(row)
    return rows + ablation_medians(rows, lambdas)


def ablation_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(ABLATION_COLUMNS)
    for r in rows:
        w.writerow([r["model"], repr(float(r["lambda"])), r["seed"],
                    _fmt(r["overall_context_fid"]), _fmt(r["sparse_only_context_fid"])])
    return buf.getvalue()


def read_ablation_csv(text: str) -> list[dict]:
    rows = []
    reader = csv.DictReader(io.StringIO(text))
    if tuple(reader.fieldnames or ()) != ABLATION_COLUMNS:
        raise DataError(f"ablation table header must be {','.join(ABLATION_COLUMNS)}")
    for r in reader:
        rows.append({
            "model": r["model"], "lambda": float(r["lambda"]),
            "seed": r["seed"] if r["seed"] == "median" else int(r["seed"]),
            **{k: (float(r[k]) if r[k] else None) for k in ABLATION_COLUMNS[3:]},
        })
    return rows


# -- extrapolation ----------------------------------------------------------------

@dataclass
class ShiftReport:
    model_shift: np.ndarray
    dataset_avg_shift: np.ndarray
    dataset_avg_se: np.ndarray
    context_matched_shift: np.ndarray
    pearson: float
    n_combos: int
    n_samples: int

    def csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "model_shift", "dataset_avg_shift", "dataset_avg_se", "context_matched_shift"])
        for t in range(len(self.model_shift)):
            w.writerow([t, repr(float(self.model_shift[t])), repr(float(self.dataset_avg_shift[t])),
                        repr(float(self.dataset_avg_se[t])), repr(float(self.context_matched_shift[t]))])
        return buf.getvalue()

    def summary(self) -> dict:
        return {"pearson": self.pearson, "n_combos": self.n_combos, "n_samples": self.n_samples}


def read_shift_csv(text: str) -> dict[str, np.ndarray]:
    reader = csv.DictReader(io.StringIO(text))
    cols = ["t", "model_shift", "dataset_avg_shift", "dataset_avg_se", "context_matched_shift"]
    if reader.fieldnames != cols:
        raise DataError(f"shift table header must be {','.join(cols)}")
    rows = list(reader)
    return {c: np.array([float(r[c]) for r in rows]) for c in cols}


def pearson(a, b) -> float:
    a, b = np.asarray(a, dtype=np.float64).ravel(), np.asarray(b, dtype=np.float64).ravel()
    a, b = a - a.mean(), b - b.mean()
    den = np.sqrt((a * a).sum() * (b * b).sum())
    return float((a * b).sum() / den) if den > 0 else 0.0


def net_load(series: np.ndarray, channels) -> np.ndarray:
    """(n, T) net consumption: load minus pv generation when a pv channel exists."""
    channels = list(channels)
    net = series[:, :, channels.index("load")]
    if "pv" in channels:
        net = net - series[:, :, channels.index("pv")]
    return net


def mean_shift(dataset: Dataset, target: str, yes: str, no: str):
    """mean(yes profiles) - mean(no profiles) per time step with its standard error."""
    pos = dataset.vocabulary.position(target)
    cats = dataset.vocabulary.variables[pos][1]
    net = net_load(dataset.series, dataset.channels)
    a = net[dataset.codes[:, pos] == cats.index(yes)]
    b = net[dataset.codes[:, pos] == cats.index(no)]
    if len(a) < 2 or len(b) < 2:
        raise DataError(f"need at least 2 profiles per {target} state")
    se = np.sqrt(a.var(axis=0, ddof=1) / len(a) + b.var(axis=0, ddof=1) / len(b))
    return a.mean(axis=0) - b.mean(axis=0), se


def context_matched_shift(dataset: Dataset, target: str, yes: str, no: str, match_columns) -> np.ndarray:
    """Mean over matching groups of the within-group yes - no difference."""
    pos = dataset.vocabulary.position(target)
    cats = dataset.vocabulary.variables[pos][1]
    cols = [dataset.vocabulary.position(c) for c in match_columns]
    net = net_load(dataset.series, dataset.channels)
    groups: dict[tuple, list[int]] = {}
    for i, key in enumerate(dataset.combination_keys(cols)):
        groups.setdefault(key, []).append(i)
    diffs = []
    for key in sorted(groups):
        idx = np.array(groups[key])
        state = dataset.codes[idx, pos]
        a, b = idx[state == cats.index(yes)], idx[state == cats.index(no)]
        if len(a) and len(b):
            diffs.append(net[a].mean(axis=0) - net[b].mean(axis=0))
    if not diffs:
        raise DataError(f"no {list(match_columns)} group holds both {target} states")
    return np.mean(diffs, axis=0)


def eligible_combinations(dataset: Dataset, target: str, yes: str, no: str) -> list[tuple]:
    """Full context combinations (target excluded) observed with exactly one target state."""
    pos = dataset.vocabulary.position(target)
    cats = dataset.vocabulary.variables[pos][1]
    seen: dict[tuple, set] = {}
    for row in dataset.codes:
        key = tuple(int(c) for j, c in enumerate(row) if j != pos)
        seen.setdefault(key, set()).add(int(row[pos]))
    want = {cats.index(yes), cats.index(no)}
    return sorted(k for k, states in seen.items() if len(states & want) == 1)


def _with_state(key: tuple, pos: int, code: int) -> list[int]:
    key = list(key)
    return key[:pos] + [code] + key[pos:]


def extrapolate(ckpt: Checkpoint, dataset: Dataset, target: str = "pv", yes: str = "yes", no: str = "no",
                match_columns=("location", "building_type"), n_samples: int = 20, n_combos: int = 50,
                seed: int = 0) -> ShiftReport:
    """Model, dataset-average and context-matched pv shifts."""
    if ckpt.vocabulary != dataset.vocabulary:
        raise DataError("checkpoint and dataset vocabularies differ")
    pos = dataset.vocabulary.position(target)
    cats = dataset.vocabulary.variables[pos][1]
    for c in (yes, no):
        if c not in cats:
            raise DataError(f"{target!r} has no category {c!r}")
    combos = eligible_combinations(dataset, target, yes, no)
    if not combos:
        raise DataError(f"no context combination is missing a {target} state")
    if n_combos and len(combos) > n_combos:
        pick = np.linspace(0, len(combos) - 1, n_combos).round().astype(int)
        combos = [combos[i] for i in np.unique(pick)]
    nets = {}
    for state in (yes, no):
        code = cats.index(state)
        codes = np.array([_with_state(k, pos, code) for k in combos], dtype=np.int64)
        # per-state seed, so exchanging the roles of the two states only flips the sign
        syn = generate_dataset(ckpt, codes, n_samples, seed=seed * 1000003 + code)
        nets[state] = net_load(syn.series, syn.channels).reshape(len(combos), n_samples, -1).mean(axis=1)
    model_shift = (nets[yes] - nets[no]).mean(axis=0)
    avg, se = mean_shift(dataset, target, yes, no)
    present = [c for c in match_columns if c in dataset.vocabulary.names]
    matched = context_matched_shift(dataset, target, yes, no, present) if present else avg
    return ShiftReport(model_shift, avg, se, matched, pearson(model_shift, matched), len(combos), n_samples)


def household_variables(dataset: Dataset) -> list[str]:
    return [n for n in dataset.vocabulary.names if n not in TIME_VARIABLES]
