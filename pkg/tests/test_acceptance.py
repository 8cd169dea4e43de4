"""Acceptance criteria 1-11, each at its stated tolerance.

Every test records a verdict that is printed as one PASS/FAIL line per
criterion at the end of the run.  Criteria 6-8 train real models on the
200-scene synthetic benchmark and take a long time on one CPU core.
"""

import time

import numpy as np
import pytest

from conftest import VERDICTS
from lf4d.gradsuite import KINDS, run_suite
from lf4d.lflayers import (
    AngularFilter, TrunkSpec, adapt, angular_filter_forward, build_network, copy_trunk, spatial_on_remap,
    spatial_on_remap_forward,
)
from lf4d.lightfield import (
    LightField, angular_crop, extract_epis, from_remap, remap_array, spatial_downsample, to_remap,
)
from lf4d.nn import Conv2D, softmax, softmax_loss
from lf4d.segment import (
    box_mean, convolutionalize, dense_scores, fcn_stride, guided_filter, segmentation_task, _transform,
)
from lf4d.synth import synth_dataset
from lf4d.train import benchmark_config, build_for, preset_variants, prepare_batch, run_experiment

from oracles import epis_loop, guided_filter_bruteforce, remap_loop

SEEDS = [1, 2, 3, 4, 5]


def verdict(num, ok, detail):
    VERDICTS[num] = (bool(ok), detail)
    print(f"criterion {num}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, f"criterion {num}: {detail}"


def means(records):
    out = {}
    for r in records:
        out.setdefault(r.variant, []).append(r)
    return out


# --------------------------------------------------------------------------
# 1. gradient suite


def test_c1_gradient_suite():
    t = time.time()
    rows = run_suite(seed=0)
    elapsed = time.time() - t
    per_kind = {k: sum(1 for r in rows if r[0] == k) for k in KINDS}
    worst = max(r[2] for r in rows)
    ok = all(r[3] and r[2] < 1e-4 for r in rows) and min(per_kind.values()) >= 3 and elapsed < 120
    verdict(1, ok, f"{len(rows)} checks over {len(KINDS)} kinds, max rel err {worst:.2e}, {elapsed:.1f}s")


# --------------------------------------------------------------------------
# 2. transform oracles


def _dyadic_lf(rng, shape):
    # multiples of 1/256: sums of a few of them are exact in float64, so
    # block means agree bit for bit whatever the summation order
    return LightField(rng.integers(0, 257, size=shape) / 256.0)


def test_c2_transform_oracles():
    rng = np.random.default_rng(2)
    worst_angular = 0.0
    for shape in [(3, 4, 6, 3, 3), (3, 8, 4, 5, 7), (3, 1, 1, 7, 7), (3, 8, 8, 1, 1)]:
        lf = _dyadic_lf(rng, shape)
        r = to_remap(lf)
        assert np.array_equal(r.data, remap_loop(np.asarray(lf.data)))
        assert from_remap(r, lf.h_a, lf.w_a) == lf
        e = extract_epis(lf)
        hor, ver = epis_loop(np.asarray(lf.data))
        assert np.array_equal(e.horizontal, hor) and np.array_equal(e.vertical, ver)
        for k in range(1, min(lf.h_a, lf.w_a) + 1, 2):
            vo, uo = (lf.h_a - k) // 2, (lf.w_a - k) // 2
            assert np.array_equal(angular_crop(lf, k, k).data, lf.data[..., vo : vo + k, uo : uo + k])
        for f in (2, 4):
            if lf.h_s % f or lf.w_s % f:
                continue
            d = np.asarray(lf.data)
            ref = np.zeros((3, lf.h_s // f, lf.w_s // f, lf.h_a, lf.w_a))
            for y in range(lf.h_s // f):
                for x in range(lf.w_s // f):
                    ref[:, y, x] = d[:, y * f : (y + 1) * f, x * f : (x + 1) * f].sum(axis=(1, 2)) / (f * f)
            assert np.array_equal(spatial_downsample(lf, f).data, ref)
        layer = AngularFilter(3, 5, (lf.h_a, lf.w_a), activation=None, rng=rng)
        layer.params["bias"][:] = rng.standard_normal(5)
        conv = Conv2D(3, 5, (lf.h_a, lf.w_a), stride=(lf.h_a, lf.w_a))
        conv.params = {k: v.copy() for k, v in layer.params.items()}
        x = remap_array(np.asarray(lf.data))[None]
        worst_angular = max(worst_angular, float(np.abs(angular_filter_forward(x, layer) - conv.forward(x)[0]).max()))
    verdict(2, worst_angular <= 1e-12,
            f"remap/EPI/crop/downsample exact; angular filter vs strided conv max diff {worst_angular:.1e}")


# --------------------------------------------------------------------------
# 3. degenerate collapse


def test_c3_degenerate_collapse():
    trunk = TrunkSpec((8, 16, 32), 64)
    ref = build_network("central2d", 4, 32, 1, 1, trunk, seed=5)
    x = np.random.default_rng(3).random((4, 3, 32, 32, 1, 1))
    base = ref.predict(adapt("central2d", x))
    diffs = {}
    for arch in ("stack", "viewpool", "angular", "decomposed4d"):
        net = build_network(arch, 4, 32, 1, 1, trunk, seed=5, angular_channels=3, angular_noise=0.0)
        if arch == "angular":
            # identity angular filter; its bias cancels the input centring so the
            # ReLU passes everything, and conv1's bias takes the shift back
            w = net.layer("angular").params["weight"]
            w[:] = 0
            for i in range(3):
                w[i, i, 0, 0] = 1.0
            net.layer("angular").params["bias"][:] = 0.5
            copy_trunk(ref, net)
            c1 = net.layer("conv1").params
            c1["bias"] -= 0.5 * c1["weight"].sum(axis=(1, 2, 3))
        diffs[arch] = float(np.abs(net.predict(adapt(net.input_adapter, x)) - base).max())
    worst = max(diffs.values())
    verdict(3, worst <= 1e-10, "max |diff| " + ", ".join(f"{a} {d:.1e}" for a, d in diffs.items()))


# --------------------------------------------------------------------------
# 4. per-view decomposition


def test_c4_per_view_decomposition():
    rng = np.random.default_rng(4)
    exact = True
    for trial in range(10):
        lf = LightField(rng.random((3, int(rng.integers(3, 9)), int(rng.integers(3, 9)), 3, 3)))
        layer = spatial_on_remap(3, 4, 3, (3, 3), pad=int(trial % 2), rng=rng)
        got = spatial_on_remap_forward(remap_array(np.asarray(lf.data))[None], layer)
        views = []
        for v in range(3):
            row = []
            for u in range(3):
                row.append(layer.inner.forward(np.ascontiguousarray(lf.data[None, ..., v, u]))[0][0])
            views.append(row)
        per_view = np.stack([np.stack(r, axis=-1) for r in views], axis=-2)  # c, h, w, v, u
        exact &= np.array_equal(got, remap_array(per_view)[None])
    verdict(4, exact, "spatial_on_remap(remap(lf)) == remap(per-view conv) on 10 random 3x3-block inputs")


# --------------------------------------------------------------------------
# 5. softmax loss


def _complex_step_grad(scores, labels):
    """Independent oracle: d/ds of mean(log sum exp(s) - s_t) by complex-step differentiation."""
    n, k = scores.shape
    h = 1e-30
    g = np.zeros_like(scores)
    for i in range(n):
        for j in range(k):
            s = scores.astype(np.complex128)
            s[i, j] += 1j * h
            m = scores.max(axis=1, keepdims=True)
            f = np.mean(np.log(np.exp(s - m).sum(axis=1)) + m[:, 0] - s[np.arange(n), labels])
            g[i, j] = f.imag / h
    return g


def test_c5_softmax_loss():
    loss, _ = softmax_loss(np.zeros((5, 12, 1, 1)), [0, 3, 7, 11, 4])
    err_ln = abs(loss - 2.484906649788000310)  # ln 12
    rng = np.random.default_rng(5)
    worst = 0.0
    for n, k in ((1, 12), (4, 3), (6, 7)):
        s = rng.standard_normal((n, k)) * 3
        t = rng.integers(0, k, n)
        _, grad = softmax_loss(s.reshape(n, k, 1, 1), t)
        onehot = np.eye(k)[t]
        worst = max(worst, float(np.abs(grad.reshape(n, k) - _complex_step_grad(s, t)).max()))
        worst = max(worst, float(np.abs(grad.reshape(n, k) - (softmax(s) - onehot) / n).max()))
    verdict(5, err_ln <= 1e-10 and worst <= 1e-10, f"|loss - ln 12| {err_ln:.1e}, gradient max diff {worst:.1e}")


# --------------------------------------------------------------------------
# 6-8. synthetic benchmark


@pytest.fixture(scope="module")
def bench():
    t = time.time()
    scenes = synth_dataset(200, 0)
    records = run_experiment("arch_comparison", scenes, None, benchmark_config(), seeds=SEEDS,
                             arches=["central2d", "angular"], figures=False)
    return scenes, records, time.time() - t


@pytest.mark.slow
def test_c6_synthetic_gain(bench):
    _, records, elapsed = bench
    by = means(records)
    lines, ok = [], elapsed < 900
    for c, a in zip(by["central2d"], by["angular"]):
        c_pair = c.result.confusion.subset_accuracy([0, 1])
        a_pair = a.result.confusion.subset_accuracy([0, 1])
        ok &= a.accuracy >= c.accuracy + 0.15 and c_pair <= 0.60 and a_pair >= 0.90
        lines.append(f"s{c.seed} 2D {c.accuracy:.3f}/{c_pair:.2f} LF {a.accuracy:.3f}/{a_pair:.2f}")
    verdict(6, ok, f"{elapsed:.0f}s; acc/pair: " + "; ".join(lines))


@pytest.mark.slow
def test_c7_ordering(bench):
    scenes, records, _ = bench
    more = run_experiment("arch_comparison", scenes, None, benchmark_config(), seeds=SEEDS,
                          arches=["stack", "decomposed4d"], figures=False)
    m = {v: float(np.mean([r.accuracy for r in rs])) for v, rs in means(records + more).items()}
    ok = m["angular"] >= m["stack"] >= m["central2d"] - 0.01 and abs(m["decomposed4d"] - m["angular"]) <= 0.03
    verdict(7, ok, "means " + ", ".join(f"{v} {a:.3f}" for v, a in m.items()))


@pytest.mark.slow
def test_c8_equal_pixel(bench):
    scenes, _, _ = bench
    two_d, lf_variant = preset_variants("equal_pixel")
    c2, cl = benchmark_config(**two_d.overrides), benchmark_config(**lf_variant.overrides)
    probe = [type("P", (), {"patch": scenes[0].lf})]  # full scene: pixel counts scale the same way
    n2 = prepare_batch(probe, c2.spatial_factor, c2.angular_step)[0][..., 3, 3].size
    nl = prepare_batch(probe, cl.spatial_factor, cl.angular_step)[0].size
    records = run_experiment("equal_pixel", scenes, None, benchmark_config(), seeds=SEEDS, figures=False)
    m = {v: float(np.mean([r.accuracy for r in rs])) for v, rs in means(records).items()}
    gain = m[lf_variant.name] - m[two_d.name]
    ok = n2 == nl and gain >= 0.08
    verdict(8, ok, f"pixels 2D {n2} vs LF {nl}; means " + ", ".join(f"{v} {a:.3f}" for v, a in m.items())
            + f"; gain {gain * 100:.1f} points")


# --------------------------------------------------------------------------
# 9. FCN equivalence


def test_c9_fcn_equivalence():
    scene = synth_dataset(1, 9, 96, 96, 7, 7, layout="voronoi")[0]  # three 32-pixel patches wide
    worst = {}
    for arch in ("central2d", "angular", "stack", "viewpool", "decomposed4d", "average2d"):
        net = build_for(benchmark_config(architecture=arch), 4, 7, 7)
        fcn = convolutionalize(net)
        dense = dense_scores(fcn, scene.lf)
        s = int(fcn_stride(fcn))
        arr = _transform(net, scene.lf)
        p = net.meta["patch_size"]
        tag = "viewpool" if arch == "average2d" else arch
        d = 0.0
        for i in range(dense.shape[2]):
            windows = np.concatenate([arr[:, :, i * s : i * s + p, j * s : j * s + p] for j in range(dense.shape[3])])
            ref = net.predict(adapt(tag, windows, net.dtype))[:, :, 0, 0]
            ref = ref.reshape(dense.shape[3], -1, ref.shape[1])  # (columns, views, K)
            d = max(d, float(np.abs(dense[:, :, i, :].transpose(2, 0, 1) - ref).max()))
        worst[arch] = d
    verdict(9, max(worst.values()) < 1e-5,
            f"{dense.shape[2]}x{dense.shape[3]} centres; max |diff| " + ", ".join(f"{a} {d:.1e}" for a, d in worst.items()))


# --------------------------------------------------------------------------
# 10. guided filter


@pytest.mark.slow
def test_c10_guided_filter():
    rng = np.random.default_rng(10)
    guide = rng.random((40, 40))
    const_err = float(np.abs(guided_filter(np.full((40, 40), 0.7), guide, 8, 1e-3) - 0.7).max())
    p = rng.random((40, 40))
    box_err = float(np.abs(guided_filter(p, guide, 4, 1e6) - box_mean(box_mean(p, 4), 4)).max())
    p8, g8 = rng.random((8, 8)), rng.random((8, 8))
    brute_err = max(float(np.abs(guided_filter(p8, g8, r, eps) - guided_filter_bruteforce(p8, g8, r, eps)).max())
                    for r, eps in ((1, 1e-3), (2, 1e-2), (3, 1e-4)))
    report = segmentation_task(benchmark_config(architecture="angular"))
    ok = (const_err <= 1e-12 and box_err < 1e-3 and brute_err < 1e-8
          and report.post_filter_acc >= report.pre_filter_acc - 0.01)
    verdict(10, ok, f"constant {const_err:.1e}, box limit {box_err:.1e}, brute force {brute_err:.1e}; "
                    f"segmentation {report.pre_filter_acc:.3f} -> {report.post_filter_acc:.3f}")


# --------------------------------------------------------------------------
# 11. determinism


def test_c11_cli_determinism(tmp_path):
    import json

    from test_cli import TINY, run, tree_bytes

    def everything(out):
        synth = out / "synth"
        cfg = out / "tiny.json"
        out.mkdir(parents=True)
        cfg.write_text(json.dumps(TINY))
        steps = [
            ("synth", "--scenes", 6, "--size", 32, "--h-a", 3, "--w-a", 3, "--seed", 7, "--out", synth),
            ("convert", synth / "scene_0000", "--to", "remap", "--out", out / "remap.png"),
            ("convert", out / "remap.png", "--to", "views", "--h-a", 3, "--w-a", 3, "--out", out / "views"),
            ("convert", synth / "scene_0000", "--to", "epi", "--out", out / "epi"),
            ("extract-patches", "--data", synth, "--max-per-image", 3, "--out", out / "patches"),
            ("split", "--patches", out / "patches" / "patches.csv", "--seed", 2, "--out", out / "split"),
            ("train", "--arch", "angular", "--config", cfg, "--data", synth, "--split", out / "split",
             "--seed", 3, "--out", out / "model"),
            ("eval", "--model", out / "model" / "model.lf4d", "--data", synth, "--split", out / "split",
             "--out", out / "eval"),
            ("segment", "--model", out / "model" / "model.lf4d", "--scene", synth / "scene_0001", "--out", out / "seg"),
            ("experiment", "--preset", "arch_comparison", "--config", cfg, "--data", synth, "--seeds", "1,2",
             "--arches", "central2d,angular", "--out", out / "exp"),
            ("gradcheck", "--all", "--out", out / "grad"),
        ]
        for argv in steps:
            assert run(*argv) == 0, argv
        return tree_bytes(out)

    a = everything(tmp_path / "a")
    b = everything(tmp_path / "b")
    differing = sorted(k for k in a if a[k] != b.get(k)) + sorted(set(b) - set(a))
    verdict(11, not differing and len(a) > 0,
            f"{len(a)} artifacts from 10 subcommands byte-identical" if not differing
            else f"differing: {differing[:5]}")
