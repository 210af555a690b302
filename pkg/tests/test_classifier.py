import numpy as np
import pytest

from fosl.classifier import build_templates, classify, evaluate
from fosl.exceptions import ConfigError, DataError
from fosl.metric import MetricModel
from fosl.mts import Dataset, MtsSample

I2 = MetricModel.identity(2)


def pts(points, label, start=0):
    return [MtsSample(np.array([p], dtype=float), label=label, scenario_id=start + k) for k, p in enumerate(points)]


def test_medoid_example():
    ds = Dataset(tuple(pts([[0, 0], [1, 0], [1, 1]], 1)))
    ts = build_templates(ds, I2, 1)
    (t,) = ts.classes[1]
    assert t.index == 1 and t.c_value == 2.0
    full = build_templates(ds, I2, 3).classes[1]
    assert [x.c_value for x in full] == [2.0, 3.0, 3.0]
    assert [x.index for x in full] == [1, 0, 2]


def test_template_count_errors():
    ds = Dataset(tuple(pts([[0, 0], [1, 0]], 1)))
    with pytest.raises(ConfigError):
        build_templates(ds, I2, 3)
    with pytest.raises(ConfigError):
        build_templates(ds, I2, 0)


def test_per_shift_groups_rank_separately():
    a = pts([[0, 0], [1, 0], [5, 5]], 1)
    b = [MtsSample(s.values, 1, s.scenario_id, 1.0) for s in pts([[9, 9], [8, 8]], 1)]
    ds = Dataset(tuple(a + b))
    assert len(build_templates(ds, I2, 1, per_shift=True)) == 2
    assert len(build_templates(ds, I2, 1, per_shift=False)) == 1


def refs():
    return pts([[0, 0]], 1) + pts([[5, 0]], 2) + pts([[0, 5]], 3) + pts([[5, 5]], 3, start=1)


def test_classify_nearest():
    pred, ranked = classify(np.array([[0.4, 4.5]]), refs(), I2)
    assert pred == 3
    assert ranked[0][0].label == 3 and ranked[0][1] == pytest.approx(0.16 + 0.25)
    assert [d for _, d in ranked] == sorted(d for _, d in ranked)


def test_query_equal_to_template():
    r = refs()
    pred, ranked = classify(r[1], r, I2)
    assert pred == 2 and ranked[0][1] == 0.0


def test_vote_tie_uses_mean_distance():
    r = pts([[0, 0]], 1) + pts([[3, 0]], 2)
    assert classify(np.array([[1.0, 0.0]]), r, I2, k=2)[0] == 1
    assert classify(np.array([[2.0, 0.0]]), r, I2, k=2)[0] == 2


def test_k_range():
    with pytest.raises(ConfigError):
        classify(np.zeros((1, 2)), refs(), I2, k=5)
    with pytest.raises(ConfigError):
        classify(np.zeros((1, 2)), [], I2)


def test_evaluate_on_templates(small_corpus):
    ds = small_corpus.select_quantities(["angle", "speed", "p"])
    m = MetricModel.identity(ds.P)
    ts = build_templates(ds, m, 1)
    report = evaluate(ts.to_dataset(6), ts, m)
    assert report.overall_accuracy == 100.0
    assert np.array_equal(report.confusion, np.diag(np.diag(report.confusion)))
    assert report.counts.tolist() == [2] * 6
    doc = report.to_dict(ts.to_dataset(6).y)
    assert doc["overall_accuracy_pct"] == 100.0 and len(doc["per_class"]) == 6
    assert "overall" in report.format_table()


def test_evaluate_empty():
    with pytest.raises(DataError):
        evaluate(Dataset(()), refs(), I2)


def test_per_delay_table():
    r = refs()
    test = Dataset(tuple(MtsSample(s.values, s.label, 0, d) for s, d in zip(r, [0.0, 0.0, 1.3, 1.3])))
    report = evaluate(test, r, I2)
    pd = report.per_delay(test.y)
    assert list(pd) == [0.0, 1.3] and pd[1.3]["count"] == 2
    assert "delay(s)" in report.format_table(test.y)
