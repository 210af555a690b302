import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from fosl.classifier import ForcedOscillationLocator, TemplateKNNClassifier
from fosl.learning import MahalanobisMetricLearner
from fosl.selection import QuantityForwardSelector


@pytest.fixture(scope="module")
def arrays(small_corpus):
    ds = small_corpus
    shifts = np.array([s.shift_s for s in ds])
    groups = np.array([s.scenario_id for s in ds])
    names = np.array([f"G{c}" for c in ds.y])
    return ds.X, names, shifts, groups


@pytest.mark.parametrize(
    "est",
    [
        MahalanobisMetricLearner(eta_base=1e-6, max_cycles=2),
        TemplateKNNClassifier(n_templates=1),
        ForcedOscillationLocator(n_templates=1, eta_base=1e-6, max_cycles=2),
        QuantityForwardSelector(n_quantities=2, folds=2),
    ],
)
def test_params_round_trip(est):
    c = clone(est)
    assert c.get_params() == est.get_params()
    with pytest.raises(NotFittedError):
        c.transform(np.zeros((1, 5, 30))) if hasattr(c, "transform") else c.predict(np.zeros((1, 5, 30)))


def test_knn_on_training_data(arrays):
    X, y, shifts, _ = arrays
    clf = TemplateKNNClassifier().fit(X, y, shifts=shifts)
    assert clf.score(X[::7], y[::7]) == 1.0
    assert set(clf.predict(X[:3])) <= set(y)


def test_locator_pipeline(arrays):
    X, y, shifts, _ = arrays
    loc = ForcedOscillationLocator(n_templates=1, eta_base=1e-6, max_cycles=2).fit(X, y, shifts=shifts)
    assert len(loc.references_) == 6 * 2
    assert loc.kneighbors_distances(X[:2]).shape == (2, 12)
    assert loc.predict(X[:1]).dtype == y.dtype


def test_selector(arrays):
    X, y, _, groups = arrays
    sel = QuantityForwardSelector(n_quantities=3, folds=2, n_gens=6).fit(X, y, groups=groups)
    assert not {"q", "v"} & set(sel.result_.chosen_quantities)
    Z = sel.transform(X)
    assert Z.shape == (len(X), X.shape[1], 18)
    assert sel.get_support().sum() == 18
