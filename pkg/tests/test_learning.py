import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_psd
from fosl.exceptions import ConfigError, MiningError
from fosl.learning import (
    MahalanobisMetricLearner,
    TrainConfig,
    Triplet,
    constraint_satisfied,
    eta_upper_bound,
    mine_triplet,
    train_metric,
    triplet_loss,
    update_metric,
)
from fosl.metric import MetricModel, lockstep_distance
from fosl.mts import Dataset, MtsSample
from fosl.validation import as_dataset
from oracles import bisect_eta, direct_update


def sample(values, label):
    return MtsSample(np.atleast_2d(np.asarray(values, dtype=float)), label=label)


def triplet(a, p, n):
    return Triplet(sample(a, 1), sample(p, 1), sample(n, 2))


def points_dataset(points, labels):
    return Dataset(tuple(sample([pt], lab) for pt, lab in zip(points, labels)))


# ---------------------------------------------------------------- mining


def test_mining_hand_placed():
    ds = points_dataset([[0, 0], [1, 0], [3, 0], [0.5, 2], [2, 0], [9, 9]], [1, 1, 1, 2, 2, 2])
    t = mine_triplet(ds, MetricModel.identity(2), 0, same_shift=False)
    # same-class distances 1, 9; other-class 4.25, 4, 162
    assert t.indices == (0, 2, 4)


def test_mining_two_member_class_is_forced():
    ds = points_dataset([[0.0], [100.0], [0.1], [50.0]], [1, 1, 2, 2])
    assert mine_triplet(ds, MetricModel.identity(1), 1).indices[:2] == (1, 0)


def test_mining_ties_go_low():
    ds = points_dataset([[0.0]] * 6, [2, 1, 2, 1, 1, 2])
    assert mine_triplet(ds, MetricModel.identity(1), 0).indices == (0, 2, 1)


def test_mining_singleton_class():
    ds = points_dataset([[0.0], [1.0], [2.0]], [1, 1, 2])
    with pytest.raises(MiningError, match="class 2"):
        mine_triplet(ds, MetricModel.identity(1), 2)


def test_triplet_validates_labels():
    with pytest.raises(MiningError):
        Triplet(sample([0], 1), sample([0], 2), sample([0], 2))


# ---------------------------------------------------------------- loss


def test_loss_examples(rng):
    assert triplet_loss(triplet([0], [2], [1]), MetricModel.identity(1)) == 3.0
    a, n = rng.standard_normal((4, 3)), rng.standard_normal((4, 3))
    t = Triplet(sample(a, 1), sample(a, 1), sample(n, 2))
    assert triplet_loss(t, MetricModel.identity(3)) == pytest.approx(-np.sum((a - n) ** 2))


def test_loss_matches_euclidean(rng):
    a, p, n = (rng.standard_normal((5, 2)) for _ in range(3))
    t = triplet(a, p, n)
    expect = 0.5 + np.sum((a - p) ** 2) - np.sum((a - n) ** 2)
    assert triplet_loss(t, MetricModel.identity(2), rho=0.5) == pytest.approx(expect, rel=1e-12)


def test_constraint_uses_both_negative_distances():
    # D(a,p)=1, D(a,n)=16, D(p,n)=9
    t = triplet([0], [1], [4])
    assert constraint_satisfied(t, MetricModel.identity(1), rho=7.9)
    assert not constraint_satisfied(t, MetricModel.identity(1), rho=8.0)


# ---------------------------------------------------------------- step bound and update


def test_eta_bound_diagonal():
    t = triplet([[0, 0]], [[-1, 0]], [[0, -2]])
    assert eta_upper_bound(t, MetricModel.identity(2)) == pytest.approx(0.25)


def test_eta_bound_unbounded():
    t = triplet([[1.0, 2.0]], [[0.0, 0.0]], [[1.0, 2.0]])
    assert eta_upper_bound(t, MetricModel.identity(2)) == np.inf


def test_eta_bound_matches_bisection(rng):
    for _ in range(20):
        p, h = int(rng.integers(1, 5)), int(rng.integers(1, 4))
        a, pos, neg = (rng.standard_normal((h, p)) for _ in range(3))
        m = random_psd(rng, p, ridge=0.5)
        bound = eta_upper_bound(triplet(a, pos, neg), MetricModel(m))
        oracle = bisect_eta(m, (a - pos).T, (a - neg).T)
        assert bound == pytest.approx(oracle, rel=1e-6)


def test_update_diagonal():
    t = triplet([[0, 0]], [[-1, 0]], [[0, -1]])
    m = update_metric(MetricModel.identity(2), t, 0.1).m
    np.testing.assert_allclose(m, np.diag([1 / 1.1, 1 / 0.9]), atol=1e-15)


def test_update_eta_zero_fixed_point(rng):
    model = MetricModel(random_psd(rng, 3))
    t = triplet(*(rng.standard_normal((2, 3)) for _ in range(3)))
    assert np.array_equal(update_metric(model, t, 0.0).m, model.m)


def test_update_rejects_infeasible_eta():
    t = triplet([[0, 0]], [[-1, 0]], [[0, -2]])
    with pytest.raises(ConfigError):
        update_metric(MetricModel.identity(2), t, 0.25)
    with pytest.raises(ConfigError):
        update_metric(MetricModel.identity(2), t, -0.01)


def test_woodbury_equals_direct_inverse(rng):
    for _ in range(100):
        p, h = int(rng.integers(1, 11)), int(rng.integers(1, 6))
        m = random_psd(rng, p, ridge=0.1)
        a, pos, neg = (rng.standard_normal((h, p)) for _ in range(3))
        t = triplet(a, pos, neg)
        model = MetricModel(m)
        eta = 0.5 * min(1.0, eta_upper_bound(t, model))
        got = update_metric(model, t, eta).m
        np.testing.assert_allclose(got, direct_update(m, (a - pos).T, (a - neg).T, eta), rtol=0, atol=1e-8)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(1, 4), st.floats(0.05, 0.95), st.integers(0, 2**32 - 1))
def test_update_stays_psd(p, h, frac, seed):
    rng = np.random.default_rng(seed)
    model = MetricModel(random_psd(rng, p, ridge=0.01))
    t = triplet(*(rng.standard_normal((h, p)) for _ in range(3)))
    bound = eta_upper_bound(t, model)
    new = update_metric(model, t, frac * min(bound, 10.0)).m
    assert np.array_equal(new, new.T)
    assert np.linalg.eigvalsh(new)[0] >= -1e-8 * max(1.0, np.abs(new).max())


# ---------------------------------------------------------------- training


def blobs(rng, n=30):
    a = rng.normal([0, 0], [3.0, 0.3], size=(n, 2))
    b = rng.normal([0, 1.5], [3.0, 0.3], size=(n, 2))
    X = np.concatenate([a, b])[:, None, :]
    return as_dataset(X, np.repeat([1, 2], n))


def satisfaction_rate(ds, model):
    X, y = ds.X[:, 0, :], ds.y
    D = np.array([[lockstep_distance(X[i:i + 1], X[j:j + 1], model) for j in range(len(y))] for i in range(len(y))])
    ok = total = 0
    for i in range(len(y)):
        for j in np.flatnonzero(y == y[i]):
            if j == i:
                continue
            for k in np.flatnonzero(y != y[i]):
                total += 1
                ok += min(D[i, k], D[j, k]) - D[i, j] > 0
    return ok / total


def test_training_improves_satisfaction(rng):
    ds = blobs(rng)
    model = train_metric(ds, TrainConfig(eta_base=0.05, max_cycles=10))
    assert satisfaction_rate(ds, model) > satisfaction_rate(ds, MetricModel.identity(2))
    meta = model.training_meta
    assert meta["cycles_run"] == len(meta["cycle_losses"]) <= 10
    assert meta["stop_reason"] in {"epsilon", "max_cycles", "no_violations"}
    assert meta["triplets_per_cycle"] == len(ds)


def test_training_is_deterministic(rng):
    ds = blobs(rng)
    cfg = TrainConfig(eta_base=0.05, max_cycles=3, seed=4)
    assert np.array_equal(train_metric(ds, cfg).m, train_metric(ds, cfg).m)


def test_training_singleton_class():
    ds = points_dataset([[0.0], [1.0]], [1, 2])
    with pytest.raises(MiningError):
        train_metric(ds, TrainConfig())


def test_satisfied_triplets_leave_metric_unchanged():
    ds = points_dataset([[0.0], [0.1], [10.0], [10.1]], [1, 1, 2, 2])
    model = train_metric(ds, TrainConfig())
    assert np.array_equal(model.m, np.eye(1))
    assert model.training_meta["stop_reason"] == "no_violations"


def test_paper_offline_setting_accepted():
    cfg = TrainConfig(triplets_per_cycle=1000, max_cycles=10)
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg


@pytest.mark.parametrize("bad", [dict(rho=-1), dict(eta_base=0), dict(epsilon=0), dict(max_cycles=0)])
def test_config_validation(bad):
    with pytest.raises(ConfigError):
        TrainConfig(**bad)


def test_assertion_mode_run(small_corpus):
    ds = small_corpus.select_quantities(["angle", "speed", "p"])
    seen = []
    model = train_metric(
        ds,
        TrainConfig(eta_base=3e-6, max_cycles=2, check_every_update=True),
        callback=lambda c, i, m: seen.append(np.linalg.eigvalsh(m)[0]),
    )
    assert seen and min(seen) >= -1e-8
    model.check_psd()


def test_learner_estimator(rng):
    ds = blobs(rng)
    X, y = ds.X, np.where(ds.y == 1, "a", "b")
    est = MahalanobisMetricLearner(eta_base=0.05).fit(X, y)
    assert list(est.classes_) == ["a", "b"]
    Z = est.transform(X)
    d = np.sum((Z[0] - Z[1]) ** 2)
    assert d == pytest.approx(lockstep_distance(X[0], X[1], est.metric_), rel=1e-9)
