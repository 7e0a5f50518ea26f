import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from conftest import trained_preset
from uncgap.data import GridSpec, sample_in_domain
from uncgap.dirichlet import all_measures
from uncgap.evaluation import (
    GRID_HEADER,
    GaussianFit2D,
    GroupTooSmall,
    ScoredPopulation,
    aupr,
    auroc,
    evaluate,
    evaluate_grid,
    fit_gaussian_2d,
    gap_kl,
    gaussian_kl,
    model_measures,
    representation_gap,
    rms_calibration_error,
    write_grid_csv,
)
from uncgap.network import MlpModel

scores = st.lists(st.integers(0, 6).map(float), min_size=1, max_size=25)


def brute_auroc(pos, neg):
    total = 0.0
    for p in pos:
        for n in neg:
            total += 1.0 if p > n else 0.5 if p == n else 0.0
    return total / (len(pos) * len(neg))


def enumerated_aupr(pos, neg):
    pos, neg = np.asarray(pos), np.asarray(neg)
    area, prev_recall = 0.0, 0.0
    for t in sorted(set(pos) | set(neg), reverse=True):
        tp, fp = np.sum(pos >= t), np.sum(neg >= t)
        recall = tp / len(pos)
        area += (recall - prev_recall) * tp / (tp + fp)
        prev_recall = recall
    return area


def test_auroc_examples():
    assert auroc(ScoredPopulation([0.9, 0.8], [0.1, 0.2])) == 1.0
    assert auroc(ScoredPopulation([0.5], [0.5])) == 0.5
    with pytest.raises(ValueError):
        auroc(ScoredPopulation([], [1.0]))
    with pytest.raises(ValueError):
        ScoredPopulation([np.nan], [1.0])


def test_auroc_brute_force_random():
    rng = np.random.default_rng(0)
    for _ in range(20):
        pos, neg = rng.normal(size=50), rng.normal(size=50) - 0.3
        assert auroc(ScoredPopulation(pos, neg)) == brute_auroc(pos, neg)


@settings(max_examples=300)
@given(scores, scores)
def test_auroc_brute_force_with_ties(pos, neg):
    assert auroc(ScoredPopulation(pos, neg)) == pytest.approx(brute_auroc(pos, neg), abs=1e-15)


@settings(max_examples=200)
@given(scores, scores)
def test_auroc_complement(pos, neg):
    assert auroc(ScoredPopulation(pos, neg)) + auroc(ScoredPopulation(neg, pos)) == pytest.approx(1.0, abs=1e-15)


@settings(max_examples=200)
@given(scores, scores)
def test_auroc_monotone_invariance(pos, neg):
    base = auroc(ScoredPopulation(pos, neg))
    for f in (np.exp, lambda v: 10 * np.asarray(v) + 3):
        assert auroc(ScoredPopulation(f(pos), f(neg))) == base


def test_aupr_examples():
    assert aupr(ScoredPopulation([0.9, 0.8], [0.1, 0.2])) == 1.0
    assert aupr(ScoredPopulation([1.0] * 4, [1.0] * 4)) == 0.5
    with pytest.raises(ValueError):
        aupr(ScoredPopulation([], [1.0]))


@settings(max_examples=300)
@given(scores, scores)
def test_aupr_threshold_enumeration(pos, neg):
    got = aupr(ScoredPopulation(pos, neg))
    assert got == pytest.approx(enumerated_aupr(pos, neg), abs=1e-12)
    assert 0 < got <= 1


def test_rms_examples():
    assert rms_calibration_error(np.ones(30), np.ones(30, bool)) == 0.0
    assert rms_calibration_error(np.ones(30), np.zeros(30, bool)) == 1.0
    rng = np.random.default_rng(1)
    conf = rng.uniform(0.3, 1.0, 100)
    corr = rng.random(100) < 0.6
    assert rms_calibration_error(conf, corr, 1) == pytest.approx(abs(conf.mean() - corr.mean()), abs=1e-15)
    with pytest.raises(ValueError):
        rms_calibration_error(conf, corr[:-1])
    with pytest.raises(ValueError):
        rms_calibration_error(conf[:10], corr[:10], 15)


def test_rms_hand_two_bins():
    conf = [0.2, 0.4, 0.8, 1.0]
    corr = [False, True, True, True]
    want = math.sqrt(0.5 * (0.3 - 0.5) ** 2 + 0.5 * (0.9 - 1.0) ** 2)
    assert rms_calibration_error(conf, corr, 2) == pytest.approx(want, abs=1e-15)


@settings(max_examples=100)
@given(st.lists(st.tuples(st.sampled_from([0.25, 0.5, 0.75, 1.0]), st.booleans()), min_size=15, max_size=60),
       st.randoms(use_true_random=False))
def test_rms_permutation_invariant(rows, rnd):
    conf, corr = map(np.array, zip(*rows))
    perm = list(range(len(rows)))
    rnd.shuffle(perm)
    assert rms_calibration_error(conf[perm], corr[perm], 5) == rms_calibration_error(conf, corr, 5)


def test_gaussian_fit_degenerate():
    f = fit_gaussian_2d(np.tile([[2.0, -1.0]], (5, 1)))
    np.testing.assert_array_equal(f.mean, [2.0, -1.0])
    np.testing.assert_allclose(f.covariance, 1e-9 * np.eye(2), rtol=0, atol=1e-24)
    assert np.all(np.linalg.eigvalsh(f.covariance) > 0)


def test_gaussian_fit_hand_three_points():
    f = fit_gaussian_2d([[0, 0], [2, 0], [1, 3]])
    np.testing.assert_allclose(f.mean, [1, 1])
    # deviations (-1,-1), (1,-1), (0,2): sums of products 2, 0, 6 over n-1 = 2
    ridge = 1e-9 * 2.0
    np.testing.assert_allclose(f.covariance, [[1 + ridge, 0], [0, 3 + ridge]], atol=1e-15)


def test_gaussian_fit_sampling():
    rng = np.random.default_rng(3)
    n = 100_000
    sd = np.array([1.5, 0.5])
    pts = np.array([2.0, -3.0]) + sd * rng.standard_normal((n, 2))
    f = fit_gaussian_2d(pts)
    assert np.all(np.abs(f.mean - [2, -3]) <= 3 * sd / math.sqrt(n))
    var_se = sd**2 * math.sqrt(2 / (n - 1))
    assert np.all(np.abs(np.diag(f.covariance) - sd**2) <= 3 * var_se)
    assert abs(f.covariance[0, 1]) <= 3 * sd.prod() / math.sqrt(n)


def test_gaussian_fit_errors():
    with pytest.raises(ValueError):
        fit_gaussian_2d([[0, 0], [1, 1]])
    with pytest.raises(ValueError):
        fit_gaussian_2d([[0, 0], [1, 1], [np.inf, 0]])


def G(mean, cov):
    return GaussianFit2D(np.asarray(mean, float), np.asarray(cov, float))


def random_pd(rng):
    a = rng.normal(size=(2, 2))
    return a @ a.T + 0.1 * np.eye(2)


def test_gaussian_kl_examples():
    g = G([0, 0], np.eye(2))
    assert gaussian_kl(g, g) == 0.0
    assert gaussian_kl(g, G([1, 0], np.eye(2))) == pytest.approx(0.5, abs=1e-15)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_gaussian_kl_monte_carlo(seed):
    rng = np.random.default_rng(seed)
    g1 = G(rng.normal(size=2), random_pd(rng))
    g2 = G(rng.normal(size=2), random_pd(rng))
    n = 1_000_000
    x = rng.multivariate_normal(g2.mean, g2.covariance, size=n)
    v = (stats.multivariate_normal(g2.mean, g2.covariance).logpdf(x)
         - stats.multivariate_normal(g1.mean, g1.covariance).logpdf(x))
    # from g1 to g2 means the expectation is taken under g2
    assert abs(gaussian_kl(g1, g2) - v.mean()) <= 3 * v.std(ddof=1) / math.sqrt(n)


def test_gaussian_kl_random_pairs():
    rng = np.random.default_rng(9)
    for _ in range(1000):
        a = G(rng.normal(size=2) * 3, random_pd(rng))
        b = G(rng.normal(size=2) * 3, random_pd(rng))
        assert gaussian_kl(a, b) > 0
        assert abs(gaussian_kl(a, a)) <= 1e-10


def test_gap_null_distribution():
    rng = np.random.default_rng(4)
    groups = [rng.normal(size=(10_000, 2)) for _ in range(3)]
    miss, correct = gap_kl(*groups)
    assert 0 <= miss < 0.2 and 0 <= correct < 0.2


def test_gap_grows_with_shift():
    rng = np.random.default_rng(5)
    correct, miss, ood = (rng.normal(size=(5000, 2)) for _ in range(3))
    vals = [gap_kl(correct, miss, ood + [0, s]) for s in (1, 5, 10)]
    for i in range(2):
        assert vals[i + 1][0] > vals[i][0] and vals[i + 1][1] > vals[i][1]


def test_gap_group_too_small():
    pts = np.random.default_rng(0).normal(size=(10, 2))
    with pytest.raises(GroupTooSmall, match="misclassified"):
        gap_kl(pts, pts[:2], pts)


def _constant_model(z):
    w = [np.zeros((2, 3))]
    return MlpModel([2, 3], w, [np.asarray(z, float)])


def test_evaluate_grid_shapes(tmp_path):
    m = _constant_model([1.0, 0.0, -1.0])
    table = evaluate_grid(m, GridSpec((-1, 1), (-2, 2), 7))
    assert table.shape == (49, len(GRID_HEADER))
    assert np.all(table[:, 2:] == table[0, 2:])
    u = all_measures([1.0, 0.0, -1.0])
    assert table[0, 2] == pytest.approx(u.max_p) and table[0, 7] == pytest.approx(u.differential_entropy)
    path = tmp_path / "g.csv"
    write_grid_csv(table, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "x0,x1,max_p,entropy,mi,precision,epkl,dent"
    assert len(lines) == 50


def test_parallel_measures_match_serial(monkeypatch):
    m = trained_preset("dpn-minus")[0]
    x = np.random.default_rng(0).uniform(-15, 15, size=(1000, 2))
    monkeypatch.setenv("UNCGAP_THREADS", "1")
    z1, a = model_measures(m, x, chunk=64)
    monkeypatch.setenv("UNCGAP_THREADS", "4")
    z2, b = model_measures(m, x, chunk=64)
    assert np.array_equal(z1, z2)
    assert all(np.array_equal(a[k], b[k]) for k in a)


def test_trained_model_grid_corners_have_low_precision():
    m = trained_preset("dpn-minus")[0]
    table = evaluate_grid(m, GridSpec((-15, 15), (-13, 17), 100))
    corners = table[[0, 99, 9900, 9999]]
    assert np.all(corners[:, GRID_HEADER.index("precision")] < 3)


def test_precision_and_negated_epkl_rank_identically():
    m, _, _, te = trained_preset("dpn-minus")
    rep = evaluate(m, te.in_domain, te.ood)
    det = rep.ood_detection
    # EPKL = (K-1)/precision, so the orientation table makes both rankings agree
    assert det["precision"]["auroc"] == det["epkl"]["auroc"]


def test_trained_dpn_minus_gap_ordering():
    m, _, _, te = trained_preset("dpn-minus")
    miss, correct = representation_gap(m, te.in_domain, te.ood)
    assert correct > miss >= 0


def test_evaluate_report_fields():
    m, _, _, te = trained_preset("dpn-minus")
    rep = evaluate(m, te.in_domain, te.ood)
    assert rep.complete
    for name, d in rep.ood_detection.items():
        assert 0 <= d["auroc"] <= 1 and 0 < d["aupr"] <= 1
    assert rep.rms_calibration >= 0
    assert rep.n_in == 600 and rep.n_ood == 600


def test_evaluate_flags_missing_groups():
    ds = sample_in_domain(20, seed=0)
    only_class0 = ds.subset(ds.labels == 0)
    no_ood = ds.subset(np.zeros(len(ds), bool))
    # always predicting class 0 leaves the misclassified group empty
    rep = evaluate(_constant_model([5.0, 0.0, 0.0]), only_class0, no_ood)
    assert not rep.complete
    assert rep.accuracy == 1.0
    assert rep.misclassification is None and rep.gap_kl_miss is None
    assert rep.ood_detection == {}
