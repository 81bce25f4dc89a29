import numpy as np
import pytest

from deftlab.experiments import synthetic_examples
from deftlab.train import (
    AdamState,
    ConfigError,
    TrainConfig,
    adam_step,
    build_model,
    load_checkpoint,
    read_manifest,
    train_loop,
)

SMALL = dict(d_emb=16, d_out=8, batch_size=4, lr=1e-3, epochs=2)


@pytest.fixture(scope="module")
def data():
    vocab, examples = synthetic_examples("finetune")
    return vocab, examples[:12]


def test_adam_first_step_is_lr_times_sign():
    p = {"w": np.array([1.0, -2.0, 0.5])}
    g = {"w": np.array([0.3, -4.0, 0.0])}
    adam_step(p, g, AdamState(), lr=0.1)
    # bias-corrected first step is lr * g / (|g| + eps)
    expected = np.array([1.0, -2.0, 0.5]) - 0.1 * np.array([0.3, -4.0, 0.0]) / (np.abs([0.3, -4.0, 0.0]) + 1e-8)
    np.testing.assert_allclose(p["w"], expected, rtol=0, atol=1e-15)


def test_adam_two_steps_by_hand():
    p = {"w": np.array([0.0])}
    s = AdamState()
    adam_step(p, {"w": np.array([1.0])}, s, lr=0.01)
    adam_step(p, {"w": np.array([3.0])}, s, lr=0.01)
    m = 0.9 * 0.1 + 0.1 * 3.0
    v = 0.999 * 0.001 + 0.001 * 9.0
    step2 = 0.01 * (m / (1 - 0.9**2)) / (np.sqrt(v / (1 - 0.999**2)) + 1e-8)
    step1 = 0.01 * 1.0 / (1.0 + 1e-8)
    assert p["w"][0] == pytest.approx(-step1 - step2, abs=1e-15)


def test_adam_skips_missing_gradients_and_converges():
    p = {"w": np.array([3.0, -1.0]), "frozen": np.array([7.0])}
    s = AdamState()
    for _ in range(2000):
        adam_step(p, {"w": 2 * (p["w"] - np.array([1.0, 2.0]))}, s, lr=0.05)
    np.testing.assert_allclose(p["w"], [1.0, 2.0], atol=1e-3)
    assert p["frozen"][0] == 7.0


def test_adam_rounds_to_requested_precision():
    p = {"w": np.array([0.1])}
    adam_step(p, {"w": np.array([1.0])}, AdamState(), lr=1e-3, precision=np.float32)
    assert p["w"][0] == float(np.float32(p["w"][0]))


@pytest.mark.parametrize(
    "kw",
    [dict(epochs=0), dict(lr=0.0), dict(batch_size=0), dict(mode="thawed"), dict(task="3"), dict(dropout=1.0), dict(weights=(1, 1))],
)
def test_config_validation(kw):
    with pytest.raises(ConfigError):
        TrainConfig(**kw)


def test_default_dropout_by_mode():
    assert TrainConfig(mode="finetune").effective_dropout == 0.8
    assert TrainConfig(mode="frozen").effective_dropout == 0.2
    assert TrainConfig(mode="frozen", dropout=0.5).echo()["dropout"] == 0.5


def test_frozen_table_is_untouched(data):
    vocab, ex = data
    cfg = TrainConfig(mode="frozen", **SMALL)
    model = build_model(cfg, len(vocab))
    before = model.params["emb"].copy()
    w_before = model.params["proj.W1"].copy()
    train_loop(cfg, ex, ex, model=model)
    assert np.array_equal(model.params["emb"], before)
    assert not np.array_equal(model.params["proj.W1"], w_before)


def test_finetune_moves_the_table(data):
    vocab, ex = data
    cfg = TrainConfig(mode="finetune", **SMALL)
    model = build_model(cfg, len(vocab))
    before = model.params["emb"].copy()
    train_loop(cfg, ex, ex, model=model)
    assert not np.array_equal(model.params["emb"], before)


def test_same_seed_same_run(data):
    vocab, ex = data
    cfg = TrainConfig(**SMALL)
    a = train_loop(cfg, ex, ex, vocab_size=len(vocab))
    b = train_loop(cfg, ex, ex, vocab_size=len(vocab))
    assert a.step_losses == b.step_losses and a.trace == b.trace
    c = train_loop(TrainConfig(**{**SMALL, "seed": 1}), ex, ex, vocab_size=len(vocab))
    assert c.step_losses != a.step_losses


def test_checkpoint_reload_is_exact(data, tmp_path):
    vocab, ex = data
    cfg = TrainConfig(checkpoint_dir=str(tmp_path / "ck"), task="multitask", **SMALL)
    vocab, ex_mt = synthetic_examples("finetune", task="multitask")
    result = train_loop(cfg, ex_mt[:8], ex_mt[:8], vocab_size=len(vocab), manifest_extra={"note": "x"})
    model, manifest = load_checkpoint(tmp_path / "ck")
    assert manifest["note"] == "x" and manifest["epoch"] == result.best_epoch
    for name, p in result.model.params.items():
        assert np.array_equal(model.params[name], p), name
    assert model.predict_multitask(ex_mt[0]) == result.model.predict_multitask(ex_mt[0])
    rows = (tmp_path / "ck" / "trace.tsv").read_text().splitlines()
    assert rows[0] == "epoch\ttrain_loss\tdev_metric" and len(rows) == 1 + cfg.epochs
    assert read_manifest(tmp_path / "ck")["config"]["lr"] == cfg.lr


def test_empty_data_rejected(data):
    with pytest.raises(ConfigError):
        train_loop(TrainConfig(**SMALL), [], data[1])


def test_multitask_with_only_tag_weight_matches_single_task():
    vocab, ex = synthetic_examples("finetune", task="multitask")
    ex = ex[:10]
    single = train_loop(TrainConfig(task="2", **SMALL), ex, ex, vocab_size=len(vocab))
    multi = train_loop(TrainConfig(task="multitask", weights=(1, 0, 0), **SMALL), ex, ex, vocab_size=len(vocab))
    assert np.max(np.abs(np.array(single.step_losses) - np.array(multi.step_losses))) <= 1e-12


def test_sentence_task_trains(data):
    vocab, ex = data
    result = train_loop(TrainConfig(task="1", **{**SMALL, "epochs": 3}), ex, ex, vocab_size=len(vocab))
    assert len(result.trace) == 3 and 0.0 <= result.best_metric <= 1.0
