"""Training loop, evaluation metrics and preset experiments."""

import csv
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .errors import DivergedLoss, EmptyTestSet, UnknownPreset
from .fileio import atomic_write_text
from .lflayers import ANGULAR_CHANNEL_CHOICES, ARCHITECTURES, TrunkSpec, adapt, build_network, predict_proba
from .lightfield import downsample_array
from .nn.network import SGD, softmax_loss

log = logging.getLogger(__name__)

PATCH_SIZES = (32, 64, 128, 256)
PRECISIONS = {"f32": np.float32, "f64": np.float64}
PRESETS = ("arch_comparison", "channel_sweep", "patch_sweep", "equal_pixel")
DEFAULT_SEEDS = (1, 2, 3, 4, 5)


@dataclass
class ExperimentConfig:
    architecture: str = "angular"
    patch_size: int = 32
    angular_channels: int = 64
    angular_placement: int = 0
    interleave_depth: int = 1
    base_lr: float = 1e-4
    new_layer_lr_mult: float = 10.0
    momentum: float = 0.0
    epochs: int = 10
    batch_size: int = 32
    seed: int = 1
    precision: str = "f32"
    trunk_widths: tuple = (32, 32, 64)
    trunk_fc: int = 128
    nominal_input: int = 32
    spatial_factor: int = 1
    angular_step: int = 1
    flip: bool = False
    n_classes: int = 0  # 0: infer from the training labels
    train_fraction: float = 0.7
    min_spacing: int = 0  # 0: half the patch size
    max_patches_per_image: int = 0  # 0: keep all

    def __post_init__(self):
        self.trunk_widths = tuple(int(w) for w in self.trunk_widths)
        self.validate()

    def validate(self):
        if self.architecture not in ARCHITECTURES:
            raise ValueError(f"architecture must be one of {ARCHITECTURES}, got {self.architecture!r}")
        if self.patch_size not in PATCH_SIZES:
            raise ValueError(f"patch_size must be one of {PATCH_SIZES}, got {self.patch_size}")
        if self.precision not in PRECISIONS:
            raise ValueError(f"precision must be f32 or f64, got {self.precision!r}")
        if self.angular_placement not in (0, 1, 2):
            raise ValueError("angular_placement must be 0, 1 or 2")
        if self.interleave_depth not in (1, 2):
            raise ValueError("interleave_depth must be 1 or 2")
        if len(self.trunk_widths) != 3:
            raise ValueError("trunk_widths needs three entries")
        for name in ("angular_channels", "epochs", "batch_size", "trunk_fc", "nominal_input", "spatial_factor",
                     "angular_step"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.base_lr < 0 or self.new_layer_lr_mult <= 0 or not 0 <= self.momentum < 1:
            raise ValueError("learning-rate settings out of range")
        if self.patch_size % self.spatial_factor:
            raise ValueError("spatial_factor must divide patch_size")
        if not 0 < self.train_fraction < 1:
            raise ValueError("train_fraction must lie in (0, 1)")

    @property
    def input_size(self):
        return self.patch_size // self.spatial_factor

    @property
    def upsample(self):
        return self.input_size < self.nominal_input

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path):
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"config file not found: {path}")
        return cls.from_dict(json.loads(path.read_text()))

    def to_dict(self):
        d = asdict(self)
        d["trunk_widths"] = list(self.trunk_widths)
        return d


def benchmark_config(**overrides):
    """Settings used by the desk-scale synthetic benchmark."""
    base = dict(patch_size=32, angular_channels=16, base_lr=0.001, new_layer_lr_mult=1.0, momentum=0.9,
                epochs=10, batch_size=16, trunk_widths=(8, 16, 32), trunk_fc=64, nominal_input=32,
                max_patches_per_image=4)
    base.update(overrides)
    return ExperimentConfig(**base)


# --------------------------------------------------------------------------
# batches


def prepare_batch(patches, spatial_factor=1, angular_step=1, dtype=np.float32):
    """Stack patch light fields into ``(n, 3, h_s, w_s, h_a, w_a)`` after the resolution transforms."""
    arr = np.stack([np.asarray(p.patch.data) for p in patches]).astype(dtype, copy=False)
    if angular_step > 1:
        arr = arr[..., ::angular_step, ::angular_step]
    if spatial_factor > 1:
        arr = downsample_array(arr, spatial_factor)
    return arr


def flip_batch(arr):
    """Mirror spatial x and angular u together, as a real light-field flip does."""
    return arr[:, :, :, ::-1, :, ::-1]


def build_for(config, n_classes, h_a, w_a):
    dtype = PRECISIONS[config.precision]
    net = build_network(
        config.architecture, n_classes, config.input_size, h_a, w_a,
        trunk=TrunkSpec(config.trunk_widths, config.trunk_fc, 1 if config.architecture == "epi" else 0),
        angular_channels=config.angular_channels, angular_placement=config.angular_placement,
        interleave_depth=config.interleave_depth, upsample=config.upsample,
        new_layer_lr_mult=config.new_layer_lr_mult, seed=config.seed, dtype=dtype,
    )
    net.meta.update(spatial_factor=config.spatial_factor, angular_step=config.angular_step,
                    source_patch_size=config.patch_size)
    return net


def thin_patches(samples, max_per_image, seed):
    """Keep at most ``max_per_image`` patches per image, chosen deterministically."""
    if not max_per_image:
        return list(samples)
    by_image = {}
    for s in samples:
        by_image.setdefault(s.image_id, []).append(s)
    out = []
    for image_id in sorted(by_image):
        group = by_image[image_id]
        if len(group) > max_per_image:
            rng = np.random.default_rng([int(seed), int(image_id), 3])
            keep = sorted(rng.choice(len(group), size=max_per_image, replace=False))
            group = [group[i] for i in keep]
        out.extend(group)
    return out


# --------------------------------------------------------------------------
# training / evaluation


@dataclass
class TrainResult:
    network: object
    history: list  # (epoch, iteration, loss)

    @property
    def initial_loss(self):
        return self.history[0][2]

    @property
    def final_loss(self):
        return self.history[-1][2]


def train(config, train_set, progress=None):
    """SGD on patch samples; deterministic given ``config.seed``."""
    if not train_set:
        raise ValueError("training set is empty")
    labels = np.array([p.label for p in train_set])
    n_classes = config.n_classes or int(labels.max()) + 1
    h_a, w_a = train_set[0].patch.h_a, train_set[0].patch.w_a
    if config.angular_step > 1:
        h_a, w_a = len(range(0, h_a, config.angular_step)), len(range(0, w_a, config.angular_step))
    net = build_for(config, n_classes, h_a, w_a)
    opt = SGD(config.base_lr, config.momentum)
    rng = np.random.default_rng([config.seed, 2])
    dtype = PRECISIONS[config.precision]
    history = []
    it = 0
    for epoch in range(config.epochs):
        order = rng.permutation(len(train_set))
        for start in range(0, len(order), config.batch_size):
            idx = order[start : start + config.batch_size]
            arr = prepare_batch([train_set[i] for i in idx], config.spatial_factor, config.angular_step, dtype)
            if config.flip:
                flips = rng.random(len(idx)) < 0.5
                arr[flips] = flip_batch(arr[flips])
            x = adapt(config.architecture, arr, dtype)
            y = labels[idx]
            scores, cache = net.forward(x)
            loss, dscores = softmax_loss(scores, y)
            if not math.isfinite(loss):
                raise DivergedLoss(it, loss)
            grads, _ = net.backward(cache, dscores)
            opt.step(net, grads)
            history.append((epoch, it, loss))
            it += 1
        if progress:
            progress(epoch, float(np.mean([h[2] for h in history if h[0] == epoch])))
    return TrainResult(net, history)


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # rows: true class, columns: predicted

    @property
    def n_classes(self):
        return self.counts.shape[0]

    @property
    def accuracy(self):
        total = self.counts.sum()
        return float(np.trace(self.counts) / total) if total else float("nan")

    @property
    def per_class(self):
        rows = self.counts.sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(rows > 0, np.diag(self.counts) / np.maximum(rows, 1), np.nan)

    def subset_accuracy(self, classes):
        """Accuracy over samples whose true class is in ``classes`` (predictions unrestricted)."""
        classes = list(classes)
        sub = self.counts[classes]
        total = sub.sum()
        return float(sum(self.counts[c, c] for c in classes) / total) if total else float("nan")


def confusion_matrix(true, pred, n_classes):
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(counts, (np.asarray(true), np.asarray(pred)), 1)
    return ConfusionMatrix(counts)


@dataclass
class EvalResult:
    accuracy: float
    per_class: np.ndarray
    confusion: ConfusionMatrix
    probabilities: np.ndarray = field(repr=False)


def evaluate(net, test_set, batch_size=64):
    if not test_set:
        raise EmptyTestSet("test set is empty")
    sf, step = net.meta.get("spatial_factor", 1), net.meta.get("angular_step", 1)
    probs = []
    for s in range(0, len(test_set), batch_size):
        arr = prepare_batch(test_set[s : s + batch_size], sf, step, net.dtype)
        probs.append(predict_proba(net, arr, batch_size))
    probs = np.concatenate(probs)
    true = np.array([p.label for p in test_set])
    n_classes = max(probs.shape[1], int(true.max()) + 1)
    cm = confusion_matrix(true, probs.argmax(axis=1), n_classes)
    return EvalResult(cm.accuracy, cm.per_class, cm, probs)


# --------------------------------------------------------------------------
# presets


@dataclass
class Variant:
    name: str
    overrides: dict


def preset_variants(preset, arches=None):
    if preset == "arch_comparison":
        return [Variant(a, {"architecture": a}) for a in (arches or ARCHITECTURES)]
    if preset == "channel_sweep":
        return [Variant(f"angular_c{c}", {"architecture": "angular", "angular_channels": c})
                for c in ANGULAR_CHANNEL_CHOICES]
    if preset == "patch_sweep":
        return [Variant(f"{a}_p{p}", {"architecture": a, "patch_size": p})
                for p in PATCH_SIZES for a in (arches or ("central2d", "angular"))]
    if preset == "equal_pixel":
        return [
            Variant("central2d", {"architecture": "central2d"}),
            Variant("angular_4x4_ds4", {"architecture": "angular", "spatial_factor": 4, "angular_step": 2}),
        ]
    raise UnknownPreset(f"unknown preset {preset!r}; choose from {', '.join(PRESETS)}")


@dataclass
class RunRecord:
    preset: str
    variant: str
    seed: int
    accuracy: float
    result: EvalResult = field(repr=False)
    config: ExperimentConfig = field(repr=False)
    final_loss: float = float("nan")


def sample_variance(values):
    values = np.asarray(values, dtype=np.float64)
    return float(values.var(ddof=1)) if values.size > 1 else 0.0


def summarize(records):
    rows = []
    variants = []
    for r in records:
        if r.variant not in variants:
            variants.append(r.variant)
    for v in variants:
        accs = [r.accuracy for r in records if r.variant == v]
        rows.append(dict(preset=records[0].preset, variant=v, n=len(accs), mean=float(np.mean(accs)),
                         variance=sample_variance(accs)))
    return rows


def _csv(rows, columns):
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: row[k] for k in columns})
    return buf.getvalue()


def run_experiment(preset, scenes, out_dir=None, base_config=None, seeds=DEFAULT_SEEDS, arches=None,
                   figures=True, progress=None):
    """Train and evaluate every variant of ``preset`` on per-seed image splits.

    ``scenes`` is a list of :class:`~lf4d.synth.SceneSample`.  For every seed
    the images are split once and all variants share that split.  Writes
    ``results.csv`` and ``summary.csv`` (plus figures) when ``out_dir`` is set.
    """
    from .synth import extract_patches, split_by_image

    variants = preset_variants(preset, arches)
    base = base_config or benchmark_config()
    patch_cache = {}
    records = []
    min_side = min(min(s.lf.h_s, s.lf.w_s) for s in scenes)
    for seed in seeds:
        for var in variants:
            cfg = replace(base, seed=int(seed), **var.overrides)
            if cfg.patch_size > min_side:
                log.warning("skipping %s: patch %d exceeds scene size %d", var.name, cfg.patch_size, min_side)
                continue
            key = (cfg.patch_size, cfg.min_spacing)
            if key not in patch_cache:
                patches = []
                for s in scenes:
                    patches.extend(extract_patches(s, cfg.patch_size, cfg.min_spacing or None))
                patch_cache[key] = patches
            patches = thin_patches(patch_cache[key], cfg.max_patches_per_image, 0)
            train_set, test_set = split_by_image(patches, cfg.train_fraction, seed)
            tr = train(cfg, train_set)
            ev = evaluate(tr.network, test_set)
            rec = RunRecord(preset, var.name, int(seed), ev.accuracy, ev, cfg, tr.final_loss)
            records.append(rec)
            if progress:
                progress(rec)
    if out_dir is not None:
        write_reports(records, out_dir, figures)
    return records


def write_reports(records, out_dir, figures=True):
    out = Path(out_dir)
    rows = [dict(preset=r.preset, variant=r.variant, seed=r.seed, accuracy=repr(float(r.accuracy))) for r in records]
    atomic_write_text(out / "results.csv", _csv(rows, ["preset", "variant", "seed", "accuracy"]))
    summary = summarize(records)
    for s in summary:
        s["mean"], s["variance"] = repr(s["mean"]), repr(s["variance"])
        s["variance_kind"] = "sample"
    atomic_write_text(out / "summary.csv", _csv(summary, ["preset", "variant", "n", "mean", "variance", "variance_kind"]))
    if figures and records:
        from .plotting import plot_confusion, plot_summary

        plot_summary(summarize(records), out / "summary.png")
        first_seed = records[0].seed
        for r in records:
            if r.seed == first_seed:
                plot_confusion(r.result.confusion, out / f"confusion_{r.variant}.png", title=r.variant)
