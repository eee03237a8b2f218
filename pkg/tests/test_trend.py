import math

import numpy as np
import pytest

from simulation.corpus import convert_raw
from simulation.settings import DEFAULT_SEEDS
from simulation.simulator import prepare_corpus, run_experiment
from simulation.synthetic import write_planted_corpus
from tests.helpers import make_config

THRESHOLD = 0.85


def first_crossing(curve, metric="test_macro_f1"):
    for count, value in zip(curve.labeled_counts(), curve.series(metric)):
        if value >= THRESHOLD:
            return count
    return math.inf


@pytest.mark.slow
def test_margin_beats_random_on_planted_corpus(tmp_path):
    raw = write_planted_corpus(tmp_path / "raw", train=2000, dev=500, test=500, seed=0)
    sections = {
        "experiment": {"step_size": 100, "budget": 1000, "initial_ratio": 0.05, "seeds": DEFAULT_SEEDS},
        "trainer": {"epochs_per_step": 20, "learning_rate": 1.0},
        "tracking": {"worker_count": 5},
    }
    base = make_config(raw, **sections)
    corpus = prepare_corpus(convert_raw(raw, base), base)

    results = {
        strategy: run_experiment(make_config(raw, teacher={"strategy": strategy}, **sections), corpus)
        for strategy in ("margin", "random")
    }
    margin, random = results["margin"], results["random"]

    wins = sum(first_crossing(m) <= first_crossing(r) for m, r in zip(margin.curves, random.curves))
    assert wins >= 4

    margin_mean = margin.aggregate.series("test_macro_f1")[1:]
    random_mean = random.aggregate.series("test_macro_f1")[1:]
    assert np.mean(margin_mean >= random_mean) >= 0.6
