"""Desk-scale experimental harness.

Synthetic overlapping-cluster datasets are engineered so a trained classifier
leaves a tunable fraction of samples with a small top-1/top-2 probability
gap; the harness then measures what the refinement step does on exactly that
uncertain subset: accuracy before and after, the gain delta_acc, per-sample
outcomes, top-k curves, learning-rate sweeps (one backward per sample, the
update replayed incrementally per rate), the exact one-sided binomial sign
test, and the single-step vs multi-step comparison.

Accuracy is always computed on the uncertain subset only.  Every stochastic
stage takes an explicit seed, and reports merge per-sample results by sample
index, so parallel and serial runs agree.
"""

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from fractions import Fraction

import numpy as np

from . import gradcore
from .backends import kernels as K
from .focus import (FocusOutcome, build_loss, focus_predict, select_focus,
                    uncertainty_gap)
from .network import (argmax_class, clip_gradient, forward_batch,
                      softmax_stable, train_base)

# how far confusion-pair means move toward each other (fraction of their gap)
CONFUSION_PULL = 0.8

# evaluation cap on the number of uncertain samples per configuration
DEFAULT_MAX_UNCERTAIN = 20000


@dataclass(frozen=True)
class DatasetSpec:
    """Generative knobs for synthetic overlapping-cluster classification data."""

    num_classes: int = 5
    samples_per_class: int = 2000
    feature_dim: int = 8
    class_separation: float = 4.0
    confusion_pairs: tuple = ((0, 1), (2, 3))
    noise_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(
            self, "confusion_pairs",
            tuple(tuple(int(c) for c in pair) for pair in self.confusion_pairs),
        )
        if self.num_classes < 3:
            raise ValueError("need at least 3 classes")
        if self.feature_dim < self.num_classes:
            raise ValueError("feature_dim must be >= num_classes")
        if self.noise_scale <= 0:
            raise ValueError("noise_scale must be positive")
        if self.samples_per_class < 1:
            raise ValueError("samples_per_class must be positive")
        for a, b in self.confusion_pairs:
            if a == b or not (0 <= a < self.num_classes) or not (0 <= b < self.num_classes):
                raise ValueError(f"bad confusion pair ({a}, {b})")


@dataclass(frozen=True)
class LabeledSample:
    features: np.ndarray
    label: int


@dataclass
class Dataset:
    """Columnar sample store; indices track positions in the parent dataset."""

    features: np.ndarray
    labels: np.ndarray
    indices: np.ndarray = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.indices is None:
            self.indices = np.arange(len(self.labels))

    def __len__(self):
        return len(self.labels)

    def sample(self, i):
        return LabeledSample(self.features[i], int(self.labels[i]))

    def take(self, idx):
        return Dataset(self.features[idx], self.labels[idx], self.indices[idx])


def gen_synthetic(spec):
    """Gaussian clusters with confusion-pair means pulled together.

    Class means start as orthogonal directions scaled by class_separation;
    each confusion pair is then interpolated toward its midpoint so the two
    clusters overlap and produce genuine top-2 uncertainty.  Balanced labels,
    deterministic per seed, sample order shuffled once.
    """
    rng = np.random.default_rng(spec.seed)
    d, k = spec.feature_dim, spec.num_classes
    basis, _ = np.linalg.qr(rng.standard_normal((d, d)))
    means = basis[:k] * spec.class_separation
    for a, b in spec.confusion_pairs:
        ma, mb = means[a].copy(), means[b].copy()
        means[a] = ma + 0.5 * CONFUSION_PULL * (mb - ma)
        means[b] = mb + 0.5 * CONFUSION_PULL * (ma - mb)
    labels = np.repeat(np.arange(k), spec.samples_per_class)
    features = means[labels] + spec.noise_scale * rng.standard_normal(
        (len(labels), d))
    order = rng.permutation(len(labels))
    return Dataset(features[order], labels[order])


def _uncertainty_gaps(params, dataset):
    logits = forward_batch(params, dataset.features)
    m = logits.max(axis=1, keepdims=True)
    e = np.exp(logits - m)
    probs = e / e.sum(axis=1, keepdims=True)
    top2 = np.partition(probs, probs.shape[1] - 2, axis=1)[:, -2:]
    return top2[:, 1] - top2[:, 0]


def partition_uncertain(params, dataset, d12):
    """Split by the strict gap test: gap < d12 is uncertain."""
    gaps = _uncertainty_gaps(params, dataset)
    mask = gaps < d12
    return dataset.take(np.flatnonzero(mask)), dataset.take(np.flatnonzero(~mask))


def topk_accuracy(params, dataset, k):
    """Fraction of samples whose label is among the k highest logits."""
    num_classes = params.spec.num_classes
    if not 1 <= k <= num_classes:
        raise ValueError(f"k must be in [1, {num_classes}]")
    logits = forward_batch(params, dataset.features)
    order = np.argsort(-logits, axis=1, kind="stable")[:, :k]
    return float(np.mean(np.any(order == dataset.labels[:, None], axis=1)))


@dataclass
class SampleRecord:
    """One refined sample: what happened and how it scored."""

    index: int
    label: int
    original: int
    refined: int
    delta12: float
    outcome: str          # gated | unchanged | fixed | broken | rewrong
    diverged: bool


def _classify_outcome(rec_label, outcome: FocusOutcome):
    if outcome.gated:
        return "gated"
    if outcome.refined_prediction == outcome.original_prediction:
        return "unchanged"
    if outcome.refined_prediction == rec_label:
        return "fixed"
    if outcome.original_prediction == rec_label:
        return "broken"
    return "rewrong"


@dataclass
class EvalReport:
    """Aggregate metrics over the uncertain subset plus per-sample records."""

    n_total: int
    n_uncertain: int
    n_evaluated: int
    fraction_uncertain: float
    acc_base: float
    acc_opt: float
    delta_acc: float
    n_gated: int
    n_changed: int
    n_unchanged: int
    n_fixed: int
    n_broken: int
    n_diverged: int
    empty: bool
    config: object
    samples: list = field(default_factory=list)

    def to_record(self, **extra):
        cfg = self.config
        rec = {
            "format_version": 1,
            "n_total": self.n_total,
            "n_uncertain": self.n_uncertain,
            "n_evaluated": self.n_evaluated,
            "fraction_uncertain": self.fraction_uncertain,
            "acc_base": self.acc_base,
            "acc_opt": self.acc_opt,
            "delta_acc": self.delta_acc,
            "n_gated": self.n_gated,
            "n_changed": self.n_changed,
            "n_unchanged": self.n_unchanged,
            "n_fixed": self.n_fixed,
            "n_broken": self.n_broken,
            "n_diverged": self.n_diverged,
            "empty": self.empty,
            "eta": cfg.eta,
            "T": cfg.T,
            "n_f": cfg.n_f,
            "d12": cfg.d12,
            "loss_kind": cfg.loss_kind,
            "weighted": cfg.weighted,
            "clip_norm": cfg.clip_norm,
        }
        rec.update(extra)
        return rec


def _aggregate(n_total, n_uncertain, config, records):
    n_eval = len(records)
    counts = {"gated": 0, "unchanged": 0, "fixed": 0, "broken": 0, "rewrong": 0}
    base_hits = opt_hits = diverged = 0
    for r in records:
        counts[r.outcome] += 1
        base_hits += r.original == r.label
        opt_hits += r.refined == r.label
        diverged += r.diverged
    empty = n_eval == 0
    acc_base = base_hits / n_eval if n_eval else float("nan")
    acc_opt = opt_hits / n_eval if n_eval else float("nan")
    delta = acc_opt - acc_base if n_eval else 0.0
    changed = counts["fixed"] + counts["broken"] + counts["rewrong"]
    return EvalReport(
        n_total=n_total,
        n_uncertain=n_uncertain,
        n_evaluated=n_eval,
        fraction_uncertain=n_uncertain / n_total if n_total else 0.0,
        acc_base=acc_base,
        acc_opt=acc_opt,
        delta_acc=delta,
        n_gated=counts["gated"],
        n_changed=changed,
        n_unchanged=counts["unchanged"],
        n_fixed=counts["fixed"],
        n_broken=counts["broken"],
        n_diverged=diverged,
        empty=empty,
        config=config,
        samples=list(records),
    )


def _eval_chunk(args):
    params, subset, config = args
    records = []
    for i in range(len(subset)):
        s = subset.sample(i)
        out = focus_predict(params, s.features, config)
        records.append(SampleRecord(
            int(subset.indices[i]), s.label, out.original_prediction,
            out.refined_prediction, out.delta12,
            _classify_outcome(s.label, out), out.diverged))
    return records


def _run_samples(params, subset, config, jobs):
    if jobs <= 1 or len(subset) == 0:
        return _eval_chunk((params, subset, config))
    bounds = np.linspace(0, len(subset), jobs + 1).astype(int)
    tasks = [(params, subset.take(np.arange(a, b)), config)
             for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
    records = []
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        for chunk in pool.map(_eval_chunk, tasks):
            records.extend(chunk)
    return records


def evaluate_config(params, dataset, config, max_uncertain=DEFAULT_MAX_UNCERTAIN,
                    jobs=1):
    """Refine every uncertain sample and aggregate the outcome counts.

    The base parameters are shared read-only; every refinement works on its
    own clone, so the caller's model is untouched afterwards.
    """
    uncertain, _ = partition_uncertain(params, dataset, config.d12)
    n_uncertain = len(uncertain)
    subset = uncertain.take(np.arange(min(n_uncertain, max_uncertain)))
    records = _run_samples(params, subset, config, jobs)
    return _aggregate(len(dataset), n_uncertain, config, records)


def _replay_chunk(args):
    params, subset, config, lrs = args
    widths = params.spec.layer_widths
    n = len(subset)
    preds = np.empty((n, len(lrs)), dtype=np.int64)
    diverged = np.zeros((n, len(lrs)), dtype=bool)
    deltas = np.empty(n)
    originals = np.empty(n, dtype=np.int64)
    gated = np.zeros(n, dtype=bool)
    for i in range(n):
        x = np.ascontiguousarray(subset.features[i])
        logits_node, tape = gradcore.forward_mlp(params, x)
        probs = softmax_stable(logits_node.value)
        delta = uncertainty_gap(probs)
        original = argmax_class(logits_node.value)
        deltas[i] = delta
        originals[i] = original
        if delta >= config.d12:
            gated[i] = True
            preds[i, :] = original
            continue
        focus = select_focus(probs, config.n_f)
        loss_node = build_loss(logits_node, config, focus, probs)
        g = clip_gradient(gradcore.backward(tape, loss_node), config.clip_norm)
        work = params.vector.copy()
        prev = 0.0
        for j, lr in enumerate(lrs):
            K.axpy(work, -(lr - prev), g)
            prev = lr
            z = K.mlp_forward(widths, work, x)
            if np.all(np.isfinite(z)):
                preds[i, j] = argmax_class(z)
            else:
                preds[i, j] = original
                diverged[i, j] = True
    return preds, diverged, deltas, originals, gated


def lr_sweep(params, dataset, base_config, base_lr, factor, count,
             max_uncertain=DEFAULT_MAX_UNCERTAIN, jobs=1):
    """EvalReports for learning rates base_lr * factor**j, j in [0, count).

    The gradient is computed once per sample and the parameter update is
    replayed incrementally for each rate, with a fresh forward per rate.
    Valid only for single-step configs (T = 1): reusing one gradient across
    rates is exact only when no second step depends on the first.
    """
    if base_config.T != 1:
        raise ValueError("lr_sweep requires T = 1 (gradient reuse)")
    if count < 1 or factor <= 0 or base_lr < 0:
        raise ValueError("need count >= 1, factor > 0, base_lr >= 0")
    lrs = [base_lr * factor ** j for j in range(count)]

    uncertain, _ = partition_uncertain(params, dataset, base_config.d12)
    n_uncertain = len(uncertain)
    subset = uncertain.take(np.arange(min(n_uncertain, max_uncertain)))

    if jobs <= 1 or len(subset) == 0:
        parts = [_replay_chunk((params, subset, base_config, lrs))]
    else:
        bounds = np.linspace(0, len(subset), jobs + 1).astype(int)
        tasks = [(params, subset.take(np.arange(a, b)), base_config, lrs)
                 for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(_replay_chunk, tasks))

    preds = np.concatenate([p[0] for p in parts]) if parts else np.empty((0, count), dtype=np.int64)
    diverged = np.concatenate([p[1] for p in parts]) if parts else np.empty((0, count), dtype=bool)
    deltas = np.concatenate([p[2] for p in parts]) if parts else np.empty(0)
    originals = np.concatenate([p[3] for p in parts]) if parts else np.empty(0, dtype=np.int64)
    gated = np.concatenate([p[4] for p in parts]) if parts else np.empty(0, dtype=bool)

    reports = []
    for j, lr in enumerate(lrs):
        config_j = replace(base_config, eta=lr)
        records = []
        for i in range(len(subset)):
            out = FocusOutcome(bool(gated[i]), int(originals[i]),
                               int(preds[i, j]), float(deltas[i]),
                               diverged=bool(diverged[i, j]))
            records.append(SampleRecord(
                int(subset.indices[i]), int(subset.labels[i]),
                out.original_prediction, out.refined_prediction, out.delta12,
                _classify_outcome(int(subset.labels[i]), out), out.diverged))
        reports.append(_aggregate(len(dataset), n_uncertain, config_j, records))
    return lrs, reports


def sign_test(successes, failures):
    """Exact one-sided binomial tail P(X >= successes | n = s + f, p = 1/2)."""
    s, f = int(successes), int(failures)
    if s < 0 or f < 0 or s + f < 1:
        raise ValueError("need nonnegative counts with at least one trial")
    n = s + f
    num = sum(math.comb(n, k) for k in range(s, n + 1))
    return float(Fraction(num, 2 ** n))


@dataclass
class SingleVsMulti:
    """Gain of T-step refinement at eta vs single steps at boosted rates."""

    multi_report: EvalReport
    single_reports: list      # (power, EvalReport) pairs


def single_vs_multi(params, dataset, eta, T_multi, power_grid, base_config,
                    max_uncertain=DEFAULT_MAX_UNCERTAIN, jobs=1):
    """Compare T_multi steps at eta against one step at eta * 2**power."""
    if T_multi < 1:
        raise ValueError("T_multi must be >= 1")
    multi = evaluate_config(
        params, dataset, replace(base_config, eta=eta, T=T_multi),
        max_uncertain, jobs)
    singles = []
    for power in power_grid:
        cfg = replace(base_config, eta=eta * 2.0 ** power, T=1)
        singles.append((int(power), evaluate_config(params, dataset, cfg,
                                                    max_uncertain, jobs)))
    return SingleVsMulti(multi, singles)


def train_benchmark_model(dataset_spec, mlp_spec, epochs, lr, batch_size, seed):
    """Dataset plus base model for one benchmark configuration."""
    data = gen_synthetic(dataset_spec)
    result = train_base(mlp_spec, data.features, data.labels, epochs, lr,
                        batch_size, seed)
    return data, result
