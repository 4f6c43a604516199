import numpy as np
import pytest
import torch

from streamanon import training
from streamanon.nnet import param_checksum
from streamanon.synth import copy_task_example, copy_task_table


def test_copy_task_table_is_injective_per_codebook():
    table = copy_task_table(np.random.default_rng(0), 64, 8, 1024)
    assert table.shape == (8, 64)
    assert all(len(set(row)) == 64 for row in table)
    ex = copy_task_example(np.random.default_rng(1), table)
    assert 8 <= len(ex.content) <= 24 and len(ex.acoustic) == len(ex.content)
    assert all(f == tuple(table[:, c]) for c, f in zip(ex.content, ex.acoustic))
    with pytest.raises(ValueError):
        copy_task_table(np.random.default_rng(0), 64, 2, 32)


def test_codec_loss_halves_on_tones():
    run = training.codec_tone_run(500, seed=0)
    first, last = np.mean(run["losses"][:10]), np.mean(run["losses"][-10:])
    assert last < 0.5 * first


def test_toy_training_keeps_encoder_and_codec_frozen(monkeypatch):
    sums = {}
    original = training.train_arvc

    def spy(models, *a, **k):
        sums["before"] = (param_checksum(models.content_encoder), param_checksum(models.codec))
        out = original(models, *a, **k)
        sums["after"] = (param_checksum(models.content_encoder), param_checksum(models.codec))
        return out

    monkeypatch.setattr(training, "train_arvc", spy)
    cfg = training.ToyTrainConfig(encoder_steps=2, codec_steps=2, arvc_steps=3, arvc_utterances=4,
                                  utterance_seconds=0.6)
    models, history = training.train_toy(cfg)
    assert [len(history[k]) for k in ("content_encoder", "acoustic_codec", "arvc")] == [2, 2, 3]
    assert all(np.isfinite(v).all() for v in history.values())
    assert sums["before"] == sums["after"]
    assert not models.arvc.training


def test_featurize_aligns_tokens_and_frames(models):
    audio = np.random.default_rng(0).standard_normal(5 * 2048 + 100) * 0.2
    tokens, frames = training.featurize(models, audio)
    assert len(tokens) == len(frames) == 5
