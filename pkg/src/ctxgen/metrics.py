"""Fidelity and utility metrics for synthetic load profiles.

Series are arrays shaped (T, d); sets of series are (n, T, d).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, DataError
from .numerics import Adam, Rng, loss_and_grad, mlp, symmetric_eig

N_SPECTRAL_BINS = 8
N_AUTOCORR = 3
FEATURES_PER_CHANNEL = 4 + N_AUTOCORR + N_SPECTRAL_BINS + 2


class MetricError(ValueError):
    pass


# -- MDTWD ---------------------------------------------------------------------

def _as_series(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return x[:, None] if x.ndim == 1 else x


def mdtwd_batch(G, R) -> np.ndarray:
    """Pairwise MDTWD for aligned stacks G, R of shape (n, T, d)."""
    G, R = np.asarray(G, dtype=np.float64), np.asarray(R, dtype=np.float64)
    if G.shape != R.shape:
        raise MetricError(f"mdtwd needs equal shapes, got {G.shape} and {R.shape}")
    n, T, _ = G.shape
    # cost[b, i, j] = squared Euclidean distance between G[b, i] and R[b, j]
    cost = ((G[:, :, None, :] - R[:, None, :, :]) ** 2).sum(axis=-1)
    D = np.full((n, T + 1, T + 1), np.inf)
    D[:, 0, 0] = 0.0
    for i in range(1, T + 1):
        for j in range(1, T + 1):
            best = np.minimum(np.minimum(D[:, i - 1, j], D[:, i, j - 1]), D[:, i - 1, j - 1])
            D[:, i, j] = cost[:, i - 1, j - 1] + best
    return D[:, T, T]


def mdtwd(Xg, Xr) -> float:
    """Minimum cumulative squared-Euclidean cost over monotone alignments."""
    Xg, Xr = _as_series(Xg), _as_series(Xr)
    if Xg.shape != Xr.shape:
        raise MetricError(f"mdtwd needs equal length and dimension, got {Xg.shape} and {Xr.shape}")
    return float(mdtwd_batch(Xg[None], Xr[None])[0])


def mdtwd_avg(pairs) -> float:
    """Mean MDTWD over (synthetic, real) pairs."""
    pairs = list(pairs)
    if not pairs:
        raise MetricError("mdtwd_avg needs at least one pair")
    G = np.stack([_as_series(g) for g, _ in pairs])
    R = np.stack([_as_series(r) for _, r in pairs])
    return float(mdtwd_batch(G, R).mean())


def context_index(dataset: Dataset, columns=None) -> dict[tuple, np.ndarray]:
    groups: dict[tuple, list[int]] = {}
    for i, key in enumerate(dataset.combination_keys(columns)):
        groups.setdefault(key, []).append(i)
    return {k: np.array(v) for k, v in groups.items()}


def pair_by_context(syn: Dataset, real: Dataset, columns=None):
    """Each synthetic profile paired with its nearest (by MSE) same-context real one.

    Returns ``(syn_idx, real_idx, skipped)``; synthetic profiles whose context
    has no real profile are skipped.
    """
    real_groups = context_index(real, columns)
    s_idx, r_idx, skipped = [], [], 0
    for key, members in context_index(syn, columns).items():
        if key not in real_groups:
            skipped += len(members)
            continue
        cand = real_groups[key]
        diff = syn.series[members][:, None] - real.series[cand][None]
        mse = (diff ** 2).mean(axis=(2, 3))
        s_idx.extend(members.tolist())
        r_idx.extend(cand[mse.argmin(axis=1)].tolist())
    order = np.argsort(s_idx, kind="stable")
    return np.array(s_idx, dtype=np.int64)[order], np.array(r_idx, dtype=np.int64)[order], skipped


# -- MMD -----------------------------------------------------------------------

def _flatten(S) -> np.ndarray:
    S = np.asarray(S, dtype=np.float64)
    return S.reshape(S.shape[0], int(np.prod(S.shape[1:])))


def _sq_dists(A, B) -> np.ndarray:
    d = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * A @ B.T
    return np.maximum(d, 0.0)


def median_bandwidth(A, B, max_points: int = 1000) -> float:
    """Median pairwise distance of the pooled set (evenly strided when large)."""
    P = np.concatenate([_flatten(A), _flatten(B)])
    if len(P) > max_points:
        P = P[np.linspace(0, len(P) - 1, max_points).astype(int)]
    iu = np.triu_indices(len(P), k=1)
    dist = np.sqrt(_sq_dists(P, P)[iu])
    med = float(np.median(dist)) if dist.size else 0.0
    return med if med > 0 else 1.0


def mmd(A, B, bandwidth="median") -> float:
    """Biased RBF-kernel MMD, square-rooted (negative radicand clamped to 0)."""
    A, B = _flatten(A), _flatten(B)
    if len(A) == 0 or len(B) == 0:
        raise MetricError("mmd needs non-empty sets")
    if A.shape[1] != B.shape[1]:
        raise MetricError(f"mmd needs equal series length, got {A.shape[1]} and {B.shape[1]}")
    sigma = median_bandwidth(A, B) if bandwidth == "median" else float(bandwidth)
    if sigma <= 0:
        raise MetricError("mmd bandwidth must be positive")
    k = lambda X, Y: np.exp(-_sq_dists(X, Y) / (2.0 * sigma * sigma))
    val = k(A, A).mean() - 2.0 * k(A, B).mean() + k(B, B).mean()
    return float(np.sqrt(max(val, 0.0)))


# -- BMSE ----------------------------------------------------------------------

@dataclass
class Band:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        self.lower, self.upper = _as_series(self.lower), _as_series(self.upper)
        if self.lower.shape != self.upper.shape:
            raise MetricError("band bounds differ in shape")
        if np.any(self.upper < self.lower):
            raise MetricError("band upper bound below lower bound")

    @classmethod
    def from_series(cls, S) -> "Band":
        S = np.asarray(S, dtype=np.float64)
        return cls(S.min(axis=0), S.max(axis=0))


def bmse(Xg, band: Band, mode: str = "outside_only") -> float:
    """Banded squared error, mean over time steps and channels.

    ``outside_only`` scores interior points as 0; ``literal`` always uses
    ``min((x - lower)^2, (x - upper)^2)``.
    """
    X = _as_series(Xg)
    if X.shape != band.lower.shape:
        raise MetricError(f"series shape {X.shape} does not match band {band.lower.shape}")
    term = np.minimum((X - band.lower) ** 2, (X - band.upper) ** 2)
    if mode == "outside_only":
        term = np.where((X >= band.lower) & (X <= band.upper), 0.0, term)
    elif mode != "literal":
        raise MetricError(f"unknown bmse mode {mode!r}")
    return float(term.mean())


def bmse_dataset(syn: Dataset, real: Dataset, mode: str = "outside_only", columns=None):
    """Mean BMSE of synthetic profiles against their same-context real bands.

    Returns ``(value, n_scored, skipped)``; value is None if nothing scored.
    """
    real_groups = context_index(real, columns)
    vals, skipped = [], 0
    for key, members in context_index(syn, columns).items():
        if key not in real_groups:
            skipped += len(members)
            continue
        band = Band.from_series(real.series[real_groups[key]])
        term = np.minimum((syn.series[members] - band.lower) ** 2, (syn.series[members] - band.upper) ** 2)
        if mode == "outside_only":
            inside = (syn.series[members] >= band.lower) & (syn.series[members] <= band.upper)
            term = np.where(inside, 0.0, term)
        elif mode != "literal":
            raise MetricError(f"unknown bmse mode {mode!r}")
        vals.extend(term.mean(axis=(1, 2)).tolist())
    return (float(np.mean(vals)) if vals else None), len(vals), skipped


# -- feature embedding and Context-FID ----------------------------------------

def feature_embed_batch(S) -> np.ndarray:
    """Per-channel features of a stack (n, T, d) -> (n, 17 d).

    Per channel: mean, std, min, max, autocorrelation at lags 1-3, DFT
    magnitudes of bins 1-8 divided by T, mean and std of first differences.
    """
    S = np.asarray(S, dtype=np.float64)
    if S.ndim == 2:
        S = S[:, :, None]
    n, T, d = S.shape
    if T < 4:
        raise MetricError("feature_embed needs T >= 4")
    mean, std = S.mean(axis=1), S.std(axis=1)
    c = S - mean[:, None, :]
    var = (c * c).sum(axis=1)
    safe = np.where(var > 0, var, 1.0)
    ac = [np.where(var > 0, (c[:, lag:] * c[:, :-lag]).sum(axis=1) / safe, 0.0)
          for lag in range(1, N_AUTOCORR + 1)]
    k = np.arange(1, N_SPECTRAL_BINS + 1)
    t = np.arange(T)
    basis = np.exp(-2j * np.pi * np.outer(k, t) / T)  # bins past T/2 alias, still deterministic
    spec = np.abs(np.einsum("kt,ntd->nkd", basis, S)) / T
    diff = np.diff(S, axis=1)
    parts = [mean, std, S.min(axis=1), S.max(axis=1), *ac]
    parts += [spec[:, i] for i in range(N_SPECTRAL_BINS)]
    parts += [diff.mean(axis=1), diff.std(axis=1)]
    # (n, 17, d) -> channel-major concatenation
    return np.stack(parts, axis=1).transpose(0, 2, 1).reshape(n, -1)


def feature_embed(X) -> np.ndarray:
    return feature_embed_batch(_as_series(X)[None])[0]


@dataclass
class EmbeddingSet:
    vectors: np.ndarray | None
    mean: np.ndarray
    covariance: np.ndarray

    @classmethod
    def from_vectors(cls, V) -> "EmbeddingSet":
        V = np.atleast_2d(np.asarray(V, dtype=np.float64))
        if len(V) < 2:
            raise MetricError("an embedding set needs at least 2 vectors")
        mu = V.mean(axis=0)
        c = V - mu
        return cls(V, mu, c.T @ c / (len(V) - 1))

    @classmethod
    def from_series(cls, S) -> "EmbeddingSet":
        return cls.from_vectors(feature_embed_batch(S))

    @classmethod
    def from_moments(cls, mean, covariance) -> "EmbeddingSet":
        return cls(None, np.atleast_1d(np.asarray(mean, dtype=np.float64)),
                   np.atleast_2d(np.asarray(covariance, dtype=np.float64)))


def context_fid(real: EmbeddingSet, syn: EmbeddingSet, ridge: float = 1e-6) -> float:
    """Frechet distance between the Gaussian moments of two embedding sets."""
    f = real.mean.shape[0]
    if syn.mean.shape[0] != f:
        raise MetricError(f"embedding widths differ: {f} vs {syn.mean.shape[0]}")
    Sr = real.covariance + ridge * np.eye(f)
    Sg = syn.covariance + ridge * np.eye(f)
    wr, Vr = symmetric_eig(Sr)
    if wr.min() < -1e-9 * max(1.0, abs(wr.max())):
        raise MetricError("real covariance is not PSD after ridge")
    if symmetric_eig(Sg)[0].min() < -1e-9 * max(1.0, np.abs(Sg).max()):
        raise MetricError("synthetic covariance is not PSD after ridge")
    root = (Vr * np.sqrt(np.clip(wr, 0.0, None))) @ Vr.T
    M = root @ Sg @ root
    lam = np.clip(symmetric_eig(0.5 * (M + M.T))[0], 0.0, None)
    dm = real.mean - syn.mean
    return float(dm @ dm + np.trace(Sr) + np.trace(Sg) - 2.0 * np.sqrt(lam).sum())


def context_fid_series(real_series, syn_series) -> float:
    return context_fid(EmbeddingSet.from_series(real_series), EmbeddingSet.from_series(syn_series))


# -- discriminative and predictive scores -------------------------------------

def _split(n: int, rng: Rng, train_frac: float = 0.7):
    perm = rng.permutation(n)
    cut = int(round(train_frac * n))
    return perm[:cut], perm[cut:]


def discriminative_score(real, syn, seed: int = 0, max_per_class: int = 1000, steps: int = 300,
                         hidden: int = 32, lr: float = 1e-2) -> float:
    """|test accuracy - 0.5| of a 2-layer MLP separating real from synthetic features."""
    real, syn = np.asarray(real, dtype=np.float64), np.asarray(syn, dtype=np.float64)
    if len(real) < 20 or len(syn) < 20:
        raise MetricError("discriminative score needs at least 20 series per set")
    rng = Rng(seed)
    m = min(len(real), len(syn), max_per_class)
    ri = np.sort(rng.permutation(len(real))[:m])
    si = np.sort(rng.permutation(len(syn))[:m])
    X = np.concatenate([feature_embed_batch(real[ri]), feature_embed_batch(syn[si])])
    y = np.concatenate([np.ones(m), np.zeros(m)])
    tr, te = _split(2 * m, rng)
    if len(te) == 0 or len(np.unique(y[tr])) < 2:
        raise MetricError("degenerate train/test split")
    mu, sd = X[tr].mean(axis=0), X[tr].std(axis=0)
    X = (X - mu) / np.where(sd > 0, sd, 1.0)
    net = mlp([X.shape[1], hidden, 1], rng.spawn(1))
    opt = Adam(net.parameters(), lr)
    for _ in range(steps):
        logit, cache = net.forward(X[tr])
        p = 1.0 / (1.0 + np.exp(-logit[:, 0]))
        # BCE through the sigmoid: d/dlogit = (p - y) / n
        net.backward(((p - y[tr]) / len(tr))[:, None], cache)
        opt.step()
    logit, _ = net.forward(X[te])
    acc = float(((logit[:, 0] > 0) == (y[te] > 0.5)).mean())
    return abs(acc - 0.5)


def _windows(S, window: int):
    n, T, d = S.shape
    if T < window + 1:
        raise MetricError(f"series length {T} too short for window {window}")
    idx = np.arange(window)[None, :] + np.arange(T - window)[:, None]
    X = S[:, idx, :].reshape(n * (T - window), window * d)
    Y = S[:, window:, :].reshape(n * (T - window), d)
    return np.concatenate([X, np.ones((len(X), 1))], axis=1), Y


def fit_forecaster(train, window: int = 12, ridge: float = 1e-8) -> np.ndarray:
    """Least-squares linear map from ``window`` past steps (all channels) to the next step."""
    X, Y = _windows(np.asarray(train, dtype=np.float64), window)
    A = X.T @ X + ridge * np.eye(X.shape[1])
    return np.linalg.solve(A, X.T @ Y)


def predictive_score(syn_train, real_test, seed: int = 0, window: int = 12, weights=None) -> float:
    """MAE on real data of a forecaster fitted to synthetic data (or given ``weights``).

    The linear forecaster is fitted in closed form, so ``seed`` only matters
    for interface symmetry with the discriminative score.
    """
    real_test = np.asarray(real_test, dtype=np.float64)
    W = fit_forecaster(syn_train, window) if weights is None else np.asarray(weights, dtype=np.float64)
    X, Y = _windows(real_test, window)
    return float(np.abs(X @ W - Y).mean())


# -- report ---------------------------------------------------------------------

METRIC_KEYS = ("context_fid", "bmse", "mmd", "mdtwd_avg", "discriminative_score", "predictive_score")


@dataclass
class MetricReport:
    overall: dict
    sparse_only: dict | None
    metadata: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps({"overall": self.overall, "sparse_only": self.sparse_only,
                           "metadata": self.metadata}, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "MetricReport":
        obj = json.loads(text)
        missing = {"overall", "sparse_only", "metadata"} - set(obj)
        if missing:
            raise MetricError(f"metric report lacks {sorted(missing)}")
        return cls(obj["overall"], obj["sparse_only"], obj["metadata"])


def _guard(fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except MetricError:
        return None


def evaluate_subset(real: Dataset, syn: Dataset, seed: int = 0, bandwidth="median",
                    bmse_mode: str = "outside_only", columns=None) -> tuple[dict, dict]:
    """All metrics for one (real, synthetic) pair; returns (values, counts)."""
    values = {k: None for k in METRIC_KEYS}
    counts = {"n_real": len(real), "n_syn": len(syn)}
    if len(real) >= 2 and len(syn) >= 2:
        values["context_fid"] = _guard(context_fid_series, real.series, syn.series)
    if len(real) and len(syn):
        values["mmd"] = mmd(real.series, syn.series, bandwidth)
        b, scored, skipped = bmse_dataset(syn, real, bmse_mode, columns)
        values["bmse"] = b
        counts["bmse_skipped"] = skipped
        s_idx, r_idx, skipped = pair_by_context(syn, real, columns)
        counts["mdtwd_pairs"], counts["mdtwd_skipped"] = int(len(s_idx)), skipped
        if len(s_idx):
            values["mdtwd_avg"] = float(mdtwd_batch(syn.series[s_idx], real.series[r_idx]).mean())
        values["predictive_score"] = _guard(predictive_score, syn.series, real.series, seed)
    values["discriminative_score"] = _guard(discriminative_score, real.series, syn.series, seed)
    return values, counts


def sparse_synthetic_mask(real: Dataset, syn: Dataset, sparsity_mask) -> np.ndarray:
    """Synthetic profiles whose full context appears among sparse-labelled real profiles."""
    if syn.sparsity_mask is not None:
        return np.asarray(syn.sparsity_mask, dtype=bool)
    keys = {k for k, m in zip(real.combination_keys(), sparsity_mask) if m}
    return np.array([k in keys for k in syn.combination_keys()], dtype=bool)


def evaluate_all(real: Dataset, syn: Dataset, sparsity_mask=None, seed: int = 0,
                 bandwidth="median", bmse_mode: str = "outside_only", columns=None) -> MetricReport:
    if real.vocabulary != syn.vocabulary:
        a, b = real.vocabulary.variables, syn.vocabulary.variables
        diff = sorted({n for n, _ in a} ^ {n for n, _ in b}
                      | {n for (n, c), (m, e) in zip(a, b) if n == m and c != e})
        raise DataError(f"vocabularies differ in variables {diff}")
    if real.T != syn.T or real.d != syn.d:
        raise DataError(f"shape mismatch: real (T={real.T}, d={real.d}) vs synthetic (T={syn.T}, d={syn.d})")
    overall, counts = evaluate_subset(real, syn, seed, bandwidth, bmse_mode, columns)
    if sparsity_mask is None:
        sparsity_mask = real.sparsity_mask
    sparse, sparse_counts = None, None
    if sparsity_mask is not None:
        sparsity_mask = np.asarray(sparsity_mask, dtype=bool)
        if len(sparsity_mask) != len(real):
            raise DataError("sparsity mask length does not match the real dataset")
        syn_mask = sparse_synthetic_mask(real, syn, sparsity_mask)
        if sparsity_mask.any() and syn_mask.any():
            sparse, sparse_counts = evaluate_subset(real.subset(sparsity_mask), syn.subset(syn_mask),
                                                    seed, bandwidth, bmse_mode, columns)
        else:
            sparse_counts = {"n_real": int(sparsity_mask.sum()), "n_syn": int(syn_mask.sum())}
    meta = {"seed": int(seed), "bandwidth": bandwidth if bandwidth == "median" else float(bandwidth),
            "bmse_mode": bmse_mode, "counts": counts, "sparse_counts": sparse_counts}
    return MetricReport(overall, sparse, meta)
