import dataclasses

import numpy as np
import pytest

from esm_tts.config import RunConfig
from esm_tts.errors import DivergedLoss
from esm_tts.model import ToyModel, phonology_label_gap
from esm_tts.training import SyntheticTask, random_utterance, run_gradcheck, train_toy


def small(**kw):
    return RunConfig(n_utterances=4, max_len=8, **kw)


def test_task_deterministic(inv):
    a, b = SyntheticTask.generate(small(), inv), SyntheticTask.generate(small(), inv)
    assert a.utterances == b.utterances
    for x, y in zip(a.targets, b.targets):
        np.testing.assert_array_equal(x, y)


def test_random_utterances_valid(inv):
    rng = np.random.default_rng(0)
    for _ in range(200):
        u = random_utterance(rng, inv, 12)
        u.validate(inv)
        assert 1 <= len(u) <= 12


def test_zero_learning_rate_flat(inv):
    cfg = small(learning_rate=0.0, steps=5)
    _, losses = train_toy(SyntheticTask.generate(cfg, inv), cfg, inv=inv)
    assert len(losses) == 6
    assert len(set(losses)) == 1


def test_short_run_decreases(inv):
    cfg = small(steps=40)
    _, losses = train_toy(SyntheticTask.generate(cfg, inv), cfg, inv=inv)
    assert losses[-1] < 0.5 * losses[0]


def test_diverges(inv):
    cfg = small(learning_rate=50.0, steps=20)
    with pytest.raises(DivergedLoss):
        train_toy(SyntheticTask.generate(cfg, inv), cfg, inv=inv)


def test_ignore_phonology_shrinks_gap(inv):
    cfg = small(ignore_phonology=True, steps=150)
    task = SyntheticTask.generate(cfg, inv)
    model = ToyModel.init(cfg)
    before = sum(phonology_label_gap(model, u, inv) for u in task.utterances)
    trained, _ = train_toy(task, cfg, model=model.copy(), inv=inv)
    after = sum(phonology_label_gap(trained, u, inv) for u in task.utterances)
    assert after < before


def test_gradcheck_small():
    cfg = RunConfig(d_model=8, heads=2, ffn_hidden=8, gradcheck_max_entries=300)
    report = run_gradcheck(cfg)
    assert report.passed, report.worst()


def test_config_round_trip(tmp_path):
    cfg = small(steps=3)
    assert RunConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError):
        RunConfig.from_dict({**cfg.to_dict(), "bogus": 1})
    assert dataclasses.replace(cfg, seed=1).seed == 1
