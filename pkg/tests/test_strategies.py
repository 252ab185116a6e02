import numpy as np
import pytest

from conftest import make_encoded
from nesyhar.knowledge import KnowledgeModel
from nesyhar.losses import LossConfig
from nesyhar.nn import parameter_count
from nesyhar.strategies import (
    EarlyStopping,
    StrategyConfig,
    TrainConfig,
    TrainedModel,
    consistency_masks,
    load_model,
    predict,
    predict_many,
    refine,
    save_model,
    train,
)

FAST = TrainConfig(epochs=3, batch_size=8, patience=5)


@pytest.fixture(scope="module")
def split(tiny_model, tiny_net_spec):
    train_data = make_encoded(tiny_model, tiny_net_spec, 48, seed=1)
    val_data = make_encoded(tiny_model, tiny_net_spec, 12, seed=2)
    return train_data, val_data


# ---------------------------------------------------------------------------
# refine
# ---------------------------------------------------------------------------

def test_refine_hand_example():
    probs, fallback = refine(np.array([0.5, 0.3, 0.2]), [True, False, True])
    np.testing.assert_allclose(probs, [0.5 / 0.7, 0.0, 0.2 / 0.7], atol=1e-12)
    assert not fallback
    assert probs[1] == 0.0


def test_refine_identity_when_all_consistent():
    p = np.array([0.5, 0.3, 0.2])
    out, fallback = refine(p, [True, True, True])
    np.testing.assert_allclose(out, p, atol=1e-12)
    assert not fallback


def test_refine_zero_mass_fallback():
    p = np.array([1.0, 0.0, 0.0])
    out, fallback = refine(p, [False, True, False])
    np.testing.assert_array_equal(out, p)
    assert fallback
    out, fallback = refine(p, [False, False, False])
    np.testing.assert_array_equal(out, p)
    assert fallback


def test_refine_properties():
    rng = np.random.default_rng(0)
    for _ in range(200):
        k = int(rng.integers(2, 8))
        p = rng.random(k)
        p /= p.sum()
        mask = rng.integers(0, 2, size=k).astype(bool)
        out, fallback = refine(p, mask)
        if fallback:
            np.testing.assert_array_equal(out, p)
            continue
        assert out.sum() == pytest.approx(1.0, abs=1e-9)
        assert not out[~mask].any()
        again, _ = refine(out, mask)
        np.testing.assert_allclose(again, out, atol=1e-12)
        inside = np.flatnonzero(mask)
        order = np.argsort(p[inside], kind="stable")
        np.testing.assert_array_equal(np.argsort(out[inside], kind="stable"), order)


# ---------------------------------------------------------------------------
# Strategy configuration
# ---------------------------------------------------------------------------

def test_strategy_validation():
    with pytest.raises(ValueError):
        StrategyConfig("magic")
    with pytest.raises(ValueError, match="semantic loss type"):
        StrategyConfig("semantic_loss")
    cfg = StrategyConfig("semantic_loss", LossConfig("-P1", 7.0))
    assert cfg.label == "semantic_loss[-P1,a=7]"
    assert StrategyConfig("baseline").training_signature() == \
        StrategyConfig("context_refinement").training_signature()


# ---------------------------------------------------------------------------
# Early stopping and the training protocol
# ---------------------------------------------------------------------------

def test_early_stopping_patience_contract():
    # improving through epoch 3, flat afterwards: stop fires at epoch 8
    stopper = EarlyStopping(patience=5)
    losses = {1: 1.0, 2: 0.9, 3: 0.8}
    stopped_at = None
    for epoch in range(1, 50):
        stopper.update(losses.get(epoch, 0.9))
        if stopper.should_stop:
            stopped_at = epoch
            break
    assert stopped_at == 8


def test_train_stops_at_patience_with_injected_sequence(tiny_model, tiny_net_spec, split):
    train_data, val_data = split
    forced = {1: 1.0, 2: 0.9, 3: 0.8}
    cfg = TrainConfig(epochs=200, batch_size=32, patience=5,
                      val_metric=lambda epoch, params: forced.get(epoch, 0.9))
    model = train(train_data, val_data, StrategyConfig("baseline"), tiny_net_spec,
                  seed=0, cfg=cfg)
    assert model.meta["epochs_run"] == 8
    assert model.meta["best_epoch"] == 3


def test_train_honors_batch_size_and_epoch_cap(tiny_model, tiny_net_spec, split):
    train_data, val_data = split
    cfg = TrainConfig(epochs=4, batch_size=32, patience=10)
    model = train(train_data, val_data, StrategyConfig("baseline"), tiny_net_spec,
                  seed=0, cfg=cfg)
    batches_per_epoch = -(-len(train_data) // 32)
    assert model.meta["epochs_run"] == 4
    assert model.meta["steps_run"] == 4 * batches_per_epoch


def test_default_protocol_constants():
    cfg = TrainConfig()
    assert (cfg.epochs, cfg.batch_size, cfg.patience) == (200, 32, 5)


def test_semantic_alpha_zero_matches_baseline_trajectory(tiny_model, tiny_net_spec, split):
    train_data, val_data = split
    base = train(train_data, val_data, StrategyConfig("baseline"), tiny_net_spec,
                 seed=3, cfg=FAST)
    sem = train(train_data, val_data,
                StrategyConfig("semantic_loss", LossConfig("All", 0.0)), tiny_net_spec,
                seed=3, knowledge=tiny_model, cfg=FAST)
    assert base.params.keys() == sem.params.keys()
    for name in base.params:
        np.testing.assert_array_equal(base.params[name], sem.params[name])


def test_semantic_loss_training_runs(tiny_model, tiny_net_spec, split):
    train_data, val_data = split
    model = train(train_data, val_data,
                  StrategyConfig("semantic_loss", LossConfig("-P1", 3.0)), tiny_net_spec,
                  seed=3, knowledge=tiny_model, cfg=FAST)
    assert model.kind == "semantic_loss"
    assert not model.spec.infusion


def test_symbolic_features_spec_widened(tiny_model, tiny_net_spec, split):
    train_data, val_data = split
    model = train(train_data, val_data, StrategyConfig("symbolic_features"), tiny_net_spec,
                  seed=3, knowledge=tiny_model, cfg=FAST)
    assert model.spec.infusion
    extra = parameter_count(model.spec) - parameter_count(tiny_net_spec)
    assert extra == tiny_net_spec.classes * tiny_net_spec.trunk_dense


def test_training_needs_knowledge_for_nesy_strategies(tiny_net_spec, split):
    train_data, val_data = split
    with pytest.raises(ValueError, match="knowledge"):
        train(train_data, val_data, StrategyConfig("symbolic_features"), tiny_net_spec, seed=0)


def test_empty_class_warning(tiny_model, tiny_net_spec, split):
    train_data, val_data = split
    narrowed = train_data.subset(np.flatnonzero(train_data.labels != 2))
    with pytest.warns(UserWarning, match="a_ride"):
        train(narrowed, val_data, StrategyConfig("baseline"), tiny_net_spec,
              seed=0, cfg=TrainConfig(epochs=1, batch_size=8))


# ---------------------------------------------------------------------------
# Prediction semantics
# ---------------------------------------------------------------------------

def trained(kind, tiny_model, tiny_net_spec, split, loss=None):
    train_data, val_data = split
    strategy = StrategyConfig(kind, loss or LossConfig())
    return train(train_data, val_data, strategy, tiny_net_spec, seed=5,
                 knowledge=tiny_model if kind != "baseline" else None, cfg=FAST)


def test_predict_distributions_sum_to_one(tiny_model, tiny_net_spec, split):
    model = trained("baseline", tiny_model, tiny_net_spec, split)
    _, probs, diags = predict_many(model, split[1])
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-9)
    assert all(d == {} for d in diags)


def test_context_refinement_flips_to_consistent_runner_up(tiny_model, tiny_net_spec, split):
    model = trained("context_refinement", tiny_model, tiny_net_spec, split)
    data = split[1]
    preds_raw, probs_raw, _ = predict_many(
        TrainedModel("baseline", model.spec, model.params, model.activities,
                     model.vocabulary, model.loss), data)
    preds, probs, diags = predict_many(model, data, tiny_model)
    for i in range(len(data)):
        mask = diags[i]["consistent"].astype(bool)
        if diags[i]["fallback"]:
            assert preds[i] == preds_raw[i]
        else:
            assert mask[preds[i]]
            if not mask[preds_raw[i]]:
                consistent_best = max(np.flatnonzero(mask),
                                      key=lambda j: (probs_raw[i][j], -j))
                assert preds[i] == consistent_best


def test_context_refinement_hand_constructed_flip(tiny_model, tiny_net_spec, split):
    # runner-up is the only consistent activity: refinement must pick it
    probs = np.array([0.6, 0.3, 0.07, 0.03])
    out, fallback = refine(probs, [False, True, False, True])
    assert not fallback
    assert out.argmax() == 1


def test_predict_requires_knowledge_for_refinement(tiny_model, tiny_net_spec, split):
    model = trained("context_refinement", tiny_model, tiny_net_spec, split)
    with pytest.raises(ValueError, match="knowledge"):
        predict_many(model, split[1])


def test_semantic_loss_prediction_invokes_no_reasoning(tiny_model, tiny_net_spec,
                                                       split, monkeypatch):
    model = trained("semantic_loss", tiny_model, tiny_net_spec, split,
                    loss=LossConfig("All", 2.0))
    calls = {"n": 0}
    original = KnowledgeModel.consistent_activities

    def counting(self, state):
        calls["n"] += 1
        return original(self, state)

    monkeypatch.setattr(KnowledgeModel, "consistent_activities", counting)
    _, probs, diags = predict_many(model, split[1], knowledge=tiny_model)
    assert calls["n"] == 0
    assert all(d == {} for d in diags)
    predict(model, split[1].sample(0), knowledge=tiny_model)
    assert calls["n"] == 0


def test_symbolic_features_prediction_uses_consistency_input(tiny_model, tiny_net_spec, split):
    model = trained("symbolic_features", tiny_model, tiny_net_spec, split)
    preds, probs, diags = predict_many(model, split[1], tiny_model)
    assert all("consistent" in d for d in diags)
    masks = consistency_masks(tiny_model, split[1])
    from nesyhar.nn import forward
    direct, _ = forward(model.params, model.spec, split[1].phone, split[1].watch,
                        split[1].context, infusion=masks, mode="infer")
    np.testing.assert_array_equal(probs, direct)


def test_single_sample_predict_matches_batch(tiny_model, tiny_net_spec, split):
    model = trained("baseline", tiny_model, tiny_net_spec, split)
    preds, probs, _ = predict_many(model, split[1])
    idx, p, diag = predict(model, split[1].sample(4))
    assert idx == preds[4]
    np.testing.assert_allclose(p, probs[4], atol=1e-15)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def test_checkpoint_round_trip_value_exact(tiny_model, tiny_net_spec, split, tmp_path):
    from nesyhar.context import DiscretizationConfig
    train_data, val_data = split
    model = train(train_data, val_data, StrategyConfig("semantic_loss", LossConfig("0P", 4.0)),
                  tiny_net_spec, seed=9, knowledge=tiny_model, cfg=FAST,
                  window_seconds=4.0, discretization=DiscretizationConfig())
    path = save_model(model, tmp_path / "model.npz")
    loaded = load_model(path)
    assert loaded.kind == model.kind
    assert loaded.spec == model.spec
    assert loaded.activities == model.activities
    assert loaded.vocabulary == model.vocabulary
    assert loaded.loss == model.loss
    assert loaded.window_seconds == 4.0
    assert loaded.discretization == model.discretization
    for name in model.params:
        np.testing.assert_array_equal(loaded.params[name], model.params[name])
    _, probs_a, _ = predict_many(model, val_data)
    _, probs_b, _ = predict_many(loaded, val_data)
    np.testing.assert_array_equal(probs_a, probs_b)


def test_trained_model_invariant():
    import dataclasses
    from nesyhar.nn import BranchSpec, NetworkSpec
    spec = NetworkSpec(phone=BranchSpec(1, 8, (2,), (3,), 2, 3),
                       watch=BranchSpec(1, 8, (2,), (3,), 2, 3),
                       context_size=2, classes=2, infusion=True)
    with pytest.raises(ValueError, match="infusion"):
        TrainedModel("baseline", spec, {}, ("x", "y"), None, LossConfig())
