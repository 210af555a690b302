import json

import numpy as np
import pytest

from fosl.exceptions import ConfigError
from fosl.mts import Dataset, MtsSample, channel_names
from fosl.selection import TIE_ORDER, sequential_select


def test_constant_channels_not_selected(small_corpus):
    res = sequential_select(small_corpus, 3, folds=4)
    assert not {"q", "v"} & set(res.chosen_quantities)
    assert len(res.step_accuracies) == 3 and all(0 <= a <= 1 for a in res.step_accuracies)


def test_all_quantities(small_corpus, tmp_path):
    res = sequential_select(small_corpus, 5, folds=4)
    assert set(res.chosen_quantities) == set(TIE_ORDER)
    assert res.chosen_quantities[3:] == ("q", "v")
    res.save(tmp_path / "s.json")
    assert json.loads((tmp_path / "s.json").read_text())["chosen_quantities"] == list(res.chosen_quantities)


def test_deterministic(small_corpus):
    assert sequential_select(small_corpus, 2, folds=4, seed=3) == sequential_select(small_corpus, 2, folds=4, seed=3)


def copy_corpus(rng):
    """Angle copied into speed; everything else constant."""
    names = channel_names(2)
    samples = []
    for label in (1, 2):
        for j in range(6):
            x = np.zeros((10, len(names)))
            sig = rng.standard_normal(10) + 3 * label
            x[:, names.index("g1.angle")] = sig
            x[:, names.index("g1.speed")] = sig
            samples.append(MtsSample(x, label, scenario_id=j, channel_names=names))
    return Dataset(tuple(samples))


def test_duplicate_quantity_tie_break(rng):
    res = sequential_select(copy_corpus(rng), 1, folds=3)
    assert res.chosen_quantities == ("angle",)
    assert res.candidate_scores[0]["angle"] == res.candidate_scores[0]["speed"]


@pytest.mark.parametrize("t_target", [0, 6])
def test_bad_target(small_corpus, t_target):
    with pytest.raises(ConfigError):
        sequential_select(small_corpus, t_target)


def test_single_class(small_corpus):
    one = small_corpus.subset([i for i, s in enumerate(small_corpus) if s.label == 1])
    with pytest.raises(ConfigError):
        sequential_select(one, 3, folds=2)


def test_too_few_scenarios_for_folds(small_corpus):
    with pytest.raises(ConfigError):
        sequential_select(small_corpus, 3, folds=5)
