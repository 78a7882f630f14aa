import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctxgen.data import ContextVocabulary, Dataset, FauxSpec, generate_faux_dataset
from ctxgen.metrics import (
    Band, EmbeddingSet, MetricError, MetricReport, bmse, context_fid, discriminative_score,
    evaluate_all, feature_embed, fit_forecaster, mdtwd, mdtwd_avg, mmd, predictive_score,
)
from ctxgen.numerics import Rng
from oracles import dtw_bruteforce, fid_commuting, mmd_loops


def test_mdtwd_examples():
    assert mdtwd([0.0, 1.0], [1.0, 0.0]) == dtw_bruteforce([0.0, 1.0], [1.0, 0.0]) == 2.0
    x = Rng(0).normal((6, 2))
    assert mdtwd(x, x) == 0.0
    with pytest.raises(MetricError):
        mdtwd(np.zeros((4, 1)), np.zeros((5, 1)))


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 5), st.integers(1, 2), st.integers(0, 2**32))
def test_mdtwd_properties(T, d, seed):
    rng = Rng(seed)
    x, y = rng.normal((T, d)), rng.normal((T, d))
    v = mdtwd(x, y)
    assert abs(v - dtw_bruteforce(x, y)) <= 1e-9
    assert v == pytest.approx(mdtwd(y, x), abs=1e-12)
    assert v <= ((x - y) ** 2).sum() + 1e-12


def test_mdtwd_avg():
    rng = Rng(1)
    pairs = [(rng.normal((4, 1)), rng.normal((4, 1))) for _ in range(3)]
    assert mdtwd_avg(pairs[:1]) == mdtwd(*pairs[0])
    assert mdtwd_avg(pairs) == pytest.approx(np.mean([dtw_bruteforce(a, b) for a, b in pairs]), abs=1e-12)
    assert mdtwd_avg([(a, a) for a, _ in pairs]) == 0.0
    with pytest.raises(MetricError):
        mdtwd_avg([])


def test_mmd_properties():
    rng = Rng(2)
    A, B = rng.normal((15, 6, 1)), rng.normal((12, 6, 1)) + 0.3
    assert mmd(A, A) == 0.0
    assert mmd(A, B) == pytest.approx(mmd(B, A), abs=1e-12)
    assert mmd(A, B, 1.3) == pytest.approx(mmd_loops(A, B, 1.3), abs=1e-10)
    shifts = [mmd(A, A + c, 2.0) for c in (0.5, 1.0, 2.0)]
    assert shifts[0] < shifts[1] < shifts[2]
    with pytest.raises(MetricError):
        mmd(A[:0], B)


def test_bmse_examples():
    band = Band(np.zeros(4), np.ones(4))
    assert bmse(np.full(4, 0.5), band) == 0.0
    assert bmse(np.array([0.5, 0.5, 3.0, 0.5]), band) == 1.0
    x = np.array([0.25, 0.5, 3.0, -1.0])
    interior = (0.25 ** 2 + 0.5 ** 2) / 4
    assert bmse(x, band, "literal") - bmse(x, band) == pytest.approx(interior)
    with pytest.raises(MetricError):
        bmse(np.zeros(3), band)
    with pytest.raises(MetricError):
        Band(np.ones(2), np.zeros(2))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32))
def test_bmse_zero_iff_inside(seed):
    rng = Rng(seed)
    lo = rng.normal(6)
    band = Band(lo, lo + rng.uniform(6))
    x = lo + 1.5 * rng.uniform(6) - 0.2
    inside = np.all((x >= band.lower[:, 0]) & (x <= band.upper[:, 0]))
    assert (bmse(x, band) == 0.0) == bool(inside)


def test_feature_embed_examples():
    f = feature_embed(np.full((24, 1), 3.0))
    assert f.shape == (17,)
    assert f[0] == 3.0 and f[2] == 3.0 and f[3] == 3.0
    assert np.all(f[[1, 4, 5, 6]] == 0.0) and np.allclose(f[7:15], 0.0) and np.all(f[15:] == 0.0)
    t = np.arange(24)
    tone = feature_embed(np.cos(2 * np.pi * 3 * t / 24)[:, None])
    spectral = tone[7:15]
    assert spectral.argmax() == 2 and spectral[2] == pytest.approx(0.5)
    two = feature_embed(np.stack([np.full(24, 3.0), np.cos(2 * np.pi * 3 * t / 24)], axis=1))
    assert np.array_equal(two[:17], f) and np.allclose(two[17:], tone)


def test_context_fid_closed_forms():
    E = EmbeddingSet.from_vectors(Rng(3).normal((50, 4)))
    assert abs(context_fid(E, E)) < 1e-6
    one = context_fid(EmbeddingSet.from_moments([0.0], [[1.0]]), EmbeddingSet.from_moments([1.0], [[1.0]]))
    assert abs(one - 1.0) < 1e-6
    v1, v2 = np.array([1.0, 4.0]), np.array([2.0, 0.5])
    got = context_fid(EmbeddingSet.from_moments([0.0, 1.0], np.diag(v1)),
                      EmbeddingSet.from_moments([1.0, -1.0], np.diag(v2)), ridge=0.0)
    assert got == pytest.approx(fid_commuting([0, 1], v1, [1, -1], v2), abs=1e-8)


def test_context_fid_rotation_invariant():
    rng = Rng(4)
    A, B = rng.normal((40, 3)), 1.5 * rng.normal((40, 3)) + 0.2
    Q, _ = np.linalg.qr(rng.normal((3, 3)))
    base = context_fid(EmbeddingSet.from_vectors(A), EmbeddingSet.from_vectors(B))
    rot = context_fid(EmbeddingSet.from_vectors(A @ Q), EmbeddingSet.from_vectors(B @ Q))
    assert base >= 0 and abs(base - rot) < 1e-6


def faux(seed=0, **kw):
    return generate_faux_dataset(FauxSpec(n_households=20, days_per_household=10, **kw), seed=seed)[0]


def test_discriminative_score_examples():
    real = faux(0).series
    a, b = real[::2], real[1::2]
    assert discriminative_score(a, b, seed=0) < 0.1
    assert discriminative_score(a, a + 10 * a.std(), seed=0) > 0.4
    assert discriminative_score(a, b, seed=3) == discriminative_score(a, b, seed=3)
    with pytest.raises(MetricError):
        discriminative_score(a[:10], b)


def test_predictive_score_examples():
    # deterministic AR(1): x_{t+1} = 0.9 x_t
    x0 = Rng(5).uniform(30) + 0.5
    real = (x0[:, None] * 0.9 ** np.arange(20)[None, :])[:, :, None]
    W = np.zeros((13, 1))
    W[11, 0] = 0.9
    assert predictive_score(None, real, weights=W) < 1e-6
    Y = real[:, 12:, :]
    assert predictive_score(None, real, weights=np.zeros((13, 1))) == pytest.approx(np.abs(Y).mean())
    assert predictive_score(real, real) < 1e-6
    with pytest.raises(MetricError):
        predictive_score(real[:, :10], real[:, :10])


def test_predictive_real_beats_noise():
    scores = []
    for seed in range(5):
        real = faux(seed).series
        train, test = real[::2], real[1::2]
        noise = Rng(seed).uniform(train.shape) * real.max()
        scores.append((predictive_score(train, test), predictive_score(noise, test)))
    assert np.median([a for a, _ in scores]) <= np.median([b for _, b in scores])


def test_fit_forecaster_shape():
    W = fit_forecaster(Rng(6).normal((5, 20, 2)), 12)
    assert W.shape == (12 * 2 + 1, 2)


def test_evaluate_all_identity_and_sparse_counts():
    ds = faux(1)
    mask = np.zeros(len(ds), dtype=bool)
    mask[:30] = True
    rep = evaluate_all(ds, ds, mask, seed=0)
    assert abs(rep.overall["context_fid"]) < 1e-6
    assert rep.overall["bmse"] == 0.0 and rep.overall["mmd"] == 0.0 and rep.overall["mdtwd_avg"] == 0.0
    expect = len({k for k, m in zip(ds.combination_keys(), mask) if m})
    assert rep.metadata["sparse_counts"]["n_real"] == 30
    assert rep.metadata["sparse_counts"]["n_syn"] == sum(
        k in {kk for kk, m in zip(ds.combination_keys(), mask) if m} for k in ds.combination_keys())
    assert expect > 0
    back = MetricReport.from_json(rep.to_json())
    assert back.overall == rep.overall and back.sparse_only == rep.sparse_only
    none = evaluate_all(ds, ds, np.zeros(len(ds), dtype=bool))
    assert none.sparse_only is None


def test_evaluate_all_vocabulary_mismatch():
    ds = faux(1)
    other = Dataset(ds.series, ds.codes[:, :1], ContextVocabulary([ds.vocabulary.variables[0]]),
                    ds.household_ids, ds.dates)
    with pytest.raises(ValueError, match="pv"):
        evaluate_all(ds, other)
