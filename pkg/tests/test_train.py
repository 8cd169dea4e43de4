import csv

import numpy as np
import pytest

from lf4d.errors import EmptyTestSet, UnknownPreset
from lf4d.lflayers import ARCHITECTURES
from lf4d.synth import PatchSample, extract_patches, synth_dataset
from lf4d.train import (
    ExperimentConfig, benchmark_config, build_for, confusion_matrix, evaluate, prepare_batch, preset_variants, run_experiment,
    sample_variance, train,
)


def small_config(**kw):
    base = dict(trunk_widths=(4, 4, 8), trunk_fc=16, angular_channels=4, batch_size=4, epochs=1,
                base_lr=0.001, momentum=0.9, new_layer_lr_mult=1.0, precision="f64")
    base.update(kw)
    return ExperimentConfig(**base)


@pytest.fixture(scope="module")
def tiny_patches():
    scenes = synth_dataset(8, 0, 32, 32, 5, 5)  # 5x5 is the smallest grid the EPI trunk accepts
    return [p for s in scenes for p in extract_patches(s, 32)]


@pytest.mark.parametrize("arch", ARCHITECTURES)
def test_memorize_one_sample(arch, tiny_patches):
    cfg = small_config(architecture=arch, epochs=200, batch_size=1, base_lr=0.01, n_classes=4)
    res = train(cfg, tiny_patches[1:2])
    assert res.final_loss < 0.01 < res.initial_loss


def test_zero_lr_leaves_params(tiny_patches):
    cfg = small_config(base_lr=0.0, epochs=2)
    before = build_for(cfg, 4, 5, 5)
    after = train(cfg, tiny_patches).network
    for a, b in zip(before.layers, after.layers):
        for k in a.params:
            assert np.array_equal(a.params[k], b.params[k])


def test_training_deterministic(tiny_patches):
    a = train(small_config(epochs=2), tiny_patches)
    b = train(small_config(epochs=2), tiny_patches)
    assert a.history == b.history
    for la, lb in zip(a.network.layers, b.network.layers):
        for k in la.params:
            assert np.array_equal(la.params[k], lb.params[k])


def test_new_layer_multiplier_applied():
    net = train(small_config(architecture="angular", new_layer_lr_mult=10.0),
                [p for s in synth_dataset(4, 0, 32, 32, 3, 3) for p in extract_patches(s, 32)]).network
    assert net.layer("angular").lr_multiplier == 10.0
    assert net.layer("fc2").lr_multiplier == 10.0
    assert net.layer("conv2").lr_multiplier == 1.0


def test_config_validation():
    with pytest.raises(ValueError):
        ExperimentConfig(patch_size=48)
    with pytest.raises(ValueError):
        ExperimentConfig(architecture="vgg")
    with pytest.raises(ValueError):
        ExperimentConfig.from_dict({"nope": 1})
    assert ExperimentConfig.from_dict(benchmark_config().to_dict()) == benchmark_config()


# --------------------------------------------------------------------------
# evaluation


def test_confusion_hand_count():
    true = [0, 0, 1, 1, 1, 2, 2, 0]
    pred = [0, 1, 1, 1, 2, 2, 0, 0]
    cm = confusion_matrix(true, pred, 3)
    np.testing.assert_array_equal(cm.counts, [[2, 1, 0], [0, 2, 1], [1, 0, 1]])
    assert cm.accuracy == 5 / 8
    np.testing.assert_allclose(cm.per_class, [2 / 3, 2 / 3, 1 / 2])
    np.testing.assert_array_equal(cm.counts.sum(axis=1), np.bincount(true))


def test_perfect_and_constant_predictors():
    t = np.repeat(np.arange(4), 5)
    cm = confusion_matrix(t, t, 4)
    np.testing.assert_array_equal(cm.counts, 5 * np.eye(4))
    assert cm.accuracy == 1.0
    assert confusion_matrix(t, np.zeros_like(t), 4).accuracy == 0.25


def test_evaluate_rows_match_class_counts(tiny_patches):
    net = train(small_config(), tiny_patches).network
    ev = evaluate(net, tiny_patches)
    np.testing.assert_array_equal(ev.confusion.counts.sum(axis=1), np.bincount([p.label for p in tiny_patches]))
    np.testing.assert_allclose(ev.probabilities.sum(axis=1), 1, atol=1e-12)


def test_empty_test_set(tiny_patches):
    net = train(small_config(), tiny_patches).network
    with pytest.raises(EmptyTestSet):
        evaluate(net, [])


# --------------------------------------------------------------------------
# presets


def test_unknown_preset():
    with pytest.raises(UnknownPreset):
        preset_variants("nope")


def test_channel_sweep_values():
    assert [v.overrides["angular_channels"] for v in preset_variants("channel_sweep")] == [3, 16, 32, 64, 128, 147]


def test_equal_pixel_counts():
    two_d, lf = preset_variants("equal_pixel")
    cfg2 = replace_cfg(two_d.overrides)
    cfgl = replace_cfg(lf.overrides)
    scene = synth_dataset(1, 0, 32, 32, 7, 7)[0]
    patch = extract_patches(scene, 32)[:1]
    a = prepare_batch(patch, cfg2.spatial_factor, cfg2.angular_step)[0][..., 3, 3]  # central view only
    b = prepare_batch(patch, cfgl.spatial_factor, cfgl.angular_step)[0]
    assert b.shape == (3, 8, 8, 4, 4)
    assert a.size == b.size == 3 * 32 * 32


def replace_cfg(overrides):
    return benchmark_config(**overrides)


def test_sample_variance():
    assert sample_variance([1.0, 2.0, 3.0, 4.0]) == pytest.approx(5 / 3)
    assert sample_variance([0.5]) == 0.0


def test_run_experiment_reports(tmp_path):
    scenes = synth_dataset(8, 0, 32, 32, 3, 3)
    cfg = small_config()
    records = run_experiment("arch_comparison", scenes, tmp_path, cfg, seeds=[1, 2], arches=["central2d", "angular"],
                             figures=False)
    assert len(records) == 4
    rows = list(csv.DictReader((tmp_path / "results.csv").open()))
    assert list(rows[0]) == ["preset", "variant", "seed", "accuracy"]
    summary = list(csv.DictReader((tmp_path / "summary.csv").open()))
    assert {r["variant"] for r in summary} == {"central2d", "angular"}
    for s in summary:
        accs = [float(r["accuracy"]) for r in rows if r["variant"] == s["variant"]]
        assert float(s["mean"]) == pytest.approx(np.mean(accs))
        assert s["variance_kind"] == "sample"
    assert all(r.result.confusion.counts.sum() > 0 for r in records)
    first = (tmp_path / "results.csv").read_bytes()
    run_experiment("arch_comparison", scenes, tmp_path, cfg, seeds=[1, 2], arches=["central2d", "angular"],
                   figures=False)
    assert (tmp_path / "results.csv").read_bytes() == first


def test_flip_reverses_x_and_u():
    from lf4d.train import flip_batch

    arr = np.random.default_rng(0).random((1, 3, 2, 4, 3, 5))
    f = flip_batch(arr)
    assert f[0, 1, 1, 0, 2, 0] == arr[0, 1, 1, 3, 2, 4]
    assert np.array_equal(flip_batch(f), arr)


def test_patch_sample_labels_in_range(tiny_patches):
    assert all(isinstance(p, PatchSample) and 0 <= p.label < 4 for p in tiny_patches)
