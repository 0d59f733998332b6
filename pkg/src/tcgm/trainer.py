"""Alternating cross-entropy / total-correlation-gain training.

Each epoch first runs cross-entropy sweeps over the labeled training records,
one modality at a time, and then TCg sweeps over all training records
(labeled and unlabeled) that update every modality's network jointly.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import time
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .datagen import MultiModalDataset
from .losses import PenaltySamplingPlan, aggregator, cross_entropy, tcg_batch
from .metrics import accuracy, align_permutation, roc_auc
from .neuralnet import ClassifierNet, make_optimizer, save_checkpoint
from .seeding import derive_seed, rng_for

METHODS = ("tcgm", "ce", "tc")
PRIOR_MODES = ("uniform", "given", "estimated")
PRIOR_FLOOR = 1e-3


@dataclass
class TrainConfig:
    """Hyperparameters of one run.

    ``method`` picks the phases: ``tcgm`` runs both, ``ce`` only the
    cross-entropy phase and ``tc`` only the TCg phase (unsupervised; labels
    are then used only to align class indices when ``align`` is set).
    The first ``warmup_epochs`` epochs skip the TCg phase, which keeps the TCg
    phase from settling on a class-permuted solution before the few labeled
    records have fixed the class indices.
    """

    epochs: int = 30
    batch_size: int = 32
    lr_labeled: float = 0.01
    lr_unlabeled: float = 0.0001
    method: str = "tcgm"
    prior_mode: str = "estimated"
    prior: Optional[List[float]] = None
    reestimate_prior: bool = False
    penalty_mode: str = "full"
    penalty_samples: Optional[int] = None
    optimizer: str = "adam"
    label_rate: Optional[float] = None
    align: bool = False
    warmup_epochs: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.warmup_epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.lr_labeled < 0 or self.lr_unlabeled < 0:
            raise ValueError("learning rates must be >= 0")
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        if self.prior_mode not in PRIOR_MODES:
            raise ValueError(f"prior_mode must be one of {PRIOR_MODES}")
        if self.prior_mode == "given" and self.prior is None:
            raise ValueError("prior_mode 'given' needs a prior")
        if self.label_rate is not None and not 0 < self.label_rate <= 1:
            raise ValueError("label_rate must be in (0, 1]")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError("optimizer must be 'adam' or 'sgd'")
        PenaltySamplingPlan(self.penalty_mode, self.penalty_samples)

    def plan(self) -> PenaltySamplingPlan:
        return PenaltySamplingPlan(self.penalty_mode, self.penalty_samples,
                                   derive_seed(self.seed, "penalty"))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EpochRecord:
    epoch: int
    ce_loss: Optional[List[float]]
    tcg_train: Optional[float]
    tcg_value: Optional[float]
    acc_modalities: List[float]
    acc_agg: float
    auc: Optional[float]
    permutation: List[int]
    prior: List[float]
    phases: List[str] = field(default_factory=list)


@dataclass
class RunReport:
    method: str
    seed: int
    label_rate: Optional[float]
    n_modalities: int
    config: dict
    prior: List[float]
    epochs: List[EpochRecord] = field(default_factory=list)
    final: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def csv_columns(self) -> List[str]:
        accs = [f"acc_m{m + 1}" for m in range(self.n_modalities)]
        return ["epoch", "method", "modality", "ce_loss", "tcg_value", *accs,
                "acc_agg", "auc", "seed", "label_rate"]

    def to_csv(self) -> str:
        """One row per epoch. ``modality`` is the modality count and ``ce_loss`` the
        mean cross entropy over modalities (per-modality values are in the JSON)."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.csv_columns())
        for rec in self.epochs:
            ce = None if rec.ce_loss is None else float(np.mean(rec.ce_loss))
            writer.writerow([rec.epoch, self.method, self.n_modalities, _fmt(ce), _fmt(rec.tcg_value),
                             *[_fmt(a) for a in rec.acc_modalities], _fmt(rec.acc_agg),
                             _fmt(rec.auc), self.seed, _fmt(self.label_rate)])
        return buf.getvalue()


def _fmt(v):
    return "" if v is None else repr(float(v))


def estimate_prior(labels, n_classes: int, floor: float = PRIOR_FLOOR) -> np.ndarray:
    """Empirical class frequencies, floored at ``floor`` and renormalized."""
    y = np.asarray(labels, dtype=np.int64)
    y = y[y >= 0]
    if y.size == 0:
        raise ValueError("cannot estimate a prior from an empty labeled set")
    freq = np.bincount(y, minlength=n_classes).astype(np.float64) / y.size
    freq = np.maximum(freq, floor)
    return freq / freq.sum()


def build_nets(dims: Sequence[int], n_classes: int, hidden: Sequence[int] = (32,),
               activation: str = "relu", seed: int = 0) -> List[ClassifierNet]:
    return [ClassifierNet([d, *hidden, n_classes], activation, derive_seed(seed, "init", m))
            for m, d in enumerate(dims)]


def predict(nets: Sequence[ClassifierNet], prior, x_modalities):
    """Aggregated class probabilities and argmax classes (ties -> lowest id).

    ``x_modalities`` is one feature array (N, d_m) per modality, or one vector
    per modality for a single sample.
    """
    single = np.asarray(x_modalities[0]).ndim == 1
    xs = [np.atleast_2d(np.asarray(x, dtype=np.float64)) for x in x_modalities]
    probs = aggregator([net.predict_proba(x) for net, x in zip(nets, xs)], prior)
    classes = np.argmax(probs, axis=1)
    if single:
        return probs[0], int(classes[0])
    return probs, classes


def _batches(order: np.ndarray, batch_size: int, min_size: int = 1):
    """Consecutive slices; a tail smaller than ``min_size`` joins the previous batch."""
    out = [order[i:i + batch_size] for i in range(0, order.size, batch_size)]
    if len(out) > 1 and out[-1].size < min_size:
        tail = out.pop()
        out[-1] = np.concatenate([out[-1], tail])
    return out


def ce_epoch(nets, optimizers, features, labels, batch_size: int, seed: int, epoch: int) -> List[float]:
    """Cross-entropy sweeps, one modality after another; returns mean loss per modality."""
    losses = []
    n = labels.shape[0]
    for m, (net, opt) in enumerate(zip(nets, optimizers)):
        if n == 0:
            losses.append(float("nan"))
            continue
        order = rng_for(seed, "ce", m, epoch).permutation(n)
        total = 0.0
        for idx in _batches(order, batch_size):
            probs, cache = net.forward(features[m][idx])
            loss = cross_entropy(probs, labels[idx])
            if opt is not None:
                opt.step(net, net.backward(cache, loss.grads))
            total += loss.value * idx.size
        losses.append(total / n)
    return losses


def tc_epoch(nets, optimizers, features, prior, plan: PenaltySamplingPlan, batch_size: int,
             seed: int, epoch: int) -> float:
    """TCg sweeps over all given records, updating every net per batch.

    Returns the sample-weighted mean batch TCg. A full-enumeration plan that is
    infeasible for a batch falls back to sampling one tuple per record.
    """
    m = len(nets)
    n = features[0].shape[0]
    if n < max(2, m):
        raise ValueError(f"TCg phase needs at least {max(2, m)} records")
    order = rng_for(seed, "tc", epoch).permutation(n)
    total = 0.0
    for b, idx in enumerate(_batches(order, batch_size, max(2, m))):
        batch_plan = plan.split(epoch, b)
        if not batch_plan.feasible(idx.size, m):
            batch_plan = PenaltySamplingPlan.sampled(idx.size, batch_plan.rng_seed)
        outs = [net.forward(f[idx]) for net, f in zip(nets, features)]
        res = tcg_batch([o[0] for o in outs], prior, batch_plan)
        for net, opt, (probs, cache), g in zip(nets, optimizers, outs, res.grads):
            if opt is not None:
                opt.step(net, net.backward(cache, -g))
        total += res.value * idx.size
    return total / n


def _score(nets, prior, part: MultiModalDataset, perm=None):
    per = [net.predict_proba(f) for net, f in zip(nets, part.features)]
    agg = aggregator(per, prior)
    pred = np.argmax(agg, axis=1)
    per_pred = [np.argmax(h, axis=1) for h in per]
    if perm is not None:
        pred = perm[pred]
        per_pred = [perm[p] for p in per_pred]
        inv = np.argsort(perm)
        agg = agg[:, inv]
    return per, agg, pred, per_pred


def evaluate(nets, prior, part: MultiModalDataset, perm=None, tcg_seed: Optional[int] = None) -> dict:
    """Accuracy per modality and for the aggregator, AUC for binary tasks, and TCg."""
    lab = part.labeled()
    out = {"n": len(lab), "acc_modalities": [], "acc_agg": None, "auc": None,
           "permutation": None, "tcg_value": None}
    if len(lab) == 0:
        return out
    per, agg, pred, per_pred = _score(nets, prior, lab, perm)
    out["acc_modalities"] = [accuracy(p, lab.labels) for p in per_pred]
    out["acc_agg"] = accuracy(pred, lab.labels)
    if lab.n_classes == 2 and len(set(lab.labels.tolist())) == 2:
        out["auc"] = roc_auc(agg[:, 1], lab.labels)
    raw_pred = np.argmax(aggregator(per, prior), axis=1)
    out["permutation"] = align_permutation(raw_pred, lab.labels, lab.n_classes).tolist()
    m = len(nets)
    if tcg_seed is not None and len(part) >= max(2, m):
        outs = [net.predict_proba(f) for net, f in zip(nets, part.features)]
        plan = PenaltySamplingPlan.sampled(10 * len(part), tcg_seed)
        out["tcg_value"] = tcg_batch(outs, prior, plan).value
    return out


def _initial_prior(config: TrainConfig, train: MultiModalDataset) -> np.ndarray:
    k = train.n_classes
    if config.prior_mode == "uniform":
        return np.full(k, 1.0 / k)
    if config.prior_mode == "given":
        p = np.asarray(config.prior, dtype=np.float64)
        if p.shape != (k,) or np.any(p <= 0):
            raise ValueError("given prior must be strictly positive with one entry per class")
        return p / p.sum()
    return estimate_prior(train.labels, k)


def _alignment(nets, prior, train: MultiModalDataset, config: TrainConfig):
    if not config.align:
        return None
    lab = train.labeled()
    if len(lab) == 0:
        raise ValueError("alignment needs labeled training records")
    pred = predict(nets, prior, lab.features)[1]
    return align_permutation(pred, lab.labels, lab.n_classes)


def train(dataset: MultiModalDataset, nets: Sequence[ClassifierNet], config: TrainConfig,
          checkpoint_dir: Optional[str] = None) -> RunReport:
    """Run the alternating schedule for ``config.epochs`` epochs, updating ``nets`` in place.

    Epoch metrics are computed on the validation split and final metrics on
    the test split. The run is fully determined by (dataset, initial nets,
    config).
    """
    m = dataset.n_modalities
    if len(nets) != m:
        raise ValueError(f"need one net per modality ({m})")
    for net, d in zip(nets, dataset.dims):
        if net.layer_dims[0] != d or net.n_classes != dataset.n_classes:
            raise ValueError("net dimensions do not match the dataset")
    train_part = dataset.split("train")
    labeled = train_part.labeled()
    val = dataset.split("val")
    test = dataset.split("test")
    prior = _initial_prior(config, train_part)

    use_ce = config.method in ("tcgm", "ce") and config.lr_labeled > 0
    use_tc = config.method in ("tcgm", "tc") and config.lr_unlabeled > 0
    ce_opts = [make_optimizer(config.optimizer, config.lr_labeled) if use_ce else None for _ in nets]
    tc_opts = [make_optimizer(config.optimizer, config.lr_unlabeled) if use_tc else None for _ in nets]
    plan = config.plan()

    report = RunReport(config.method, config.seed, config.label_rate, m, config.to_dict(), prior.tolist())
    for epoch in range(1, config.epochs + 1):
        phases = []
        ce_losses = None
        if config.method in ("tcgm", "ce"):
            ce_losses = ce_epoch(nets, ce_opts, labeled.features, labeled.labels,
                                 config.batch_size, config.seed, epoch)
            phases.append("ce")
        tcg_train = None
        if use_tc and epoch > config.warmup_epochs:
            tcg_train = tc_epoch(nets, tc_opts, train_part.features, prior, plan,
                                 config.batch_size, config.seed, epoch)
            phases.append("tc")
        if config.reestimate_prior:
            agg = predict(nets, prior, train_part.features)[0]
            prior = np.maximum(agg.mean(axis=0), PRIOR_FLOOR)
            prior = prior / prior.sum()
        perm = _alignment(nets, prior, train_part, config)
        ev = evaluate(nets, prior, val, perm, derive_seed(config.seed, "eval-tcg", epoch))
        report.epochs.append(EpochRecord(
            epoch=epoch, ce_loss=ce_losses, tcg_train=tcg_train, tcg_value=ev["tcg_value"],
            acc_modalities=ev["acc_modalities"], acc_agg=ev["acc_agg"], auc=ev["auc"],
            permutation=ev["permutation"], prior=prior.tolist(), phases=phases))

    perm = _alignment(nets, prior, train_part, config)
    final = evaluate(nets, prior, test, perm, derive_seed(config.seed, "eval-tcg", "final"))
    final["prior"] = prior.tolist()
    final["alignment"] = None if perm is None else perm.tolist()
    report.final = final
    if checkpoint_dir is not None:
        write_checkpoints(checkpoint_dir, nets, prior, ce_opts, tc_opts)
    return report


def write_checkpoints(directory, nets, prior, ce_opts=None, tc_opts=None):
    """One JSON file per modality (net + CE optimizer state) plus a manifest."""
    os.makedirs(directory, exist_ok=True)
    files = []
    for m, net in enumerate(nets):
        name = f"modality_{m + 1}.json"
        save_checkpoint(os.path.join(directory, name), net, ce_opts[m] if ce_opts else None)
        files.append(name)
    manifest = {
        "n_modalities": len(nets),
        "files": files,
        "prior": [float(p) for p in prior],
        "tc_optimizers": [None if o is None else o.state_dict() for o in (tc_opts or [])],
    }
    with open(os.path.join(directory, "manifest.json"), "w") as fh:
        json.dump(manifest, fh)


def load_checkpoints(directory):
    from .neuralnet import load_checkpoint

    with open(os.path.join(directory, "manifest.json")) as fh:
        manifest = json.load(fh)
    nets = [load_checkpoint(os.path.join(directory, f))[0] for f in manifest["files"]]
    return nets, np.asarray(manifest["prior"])


def time_tc_epoch(nets, features, prior, plan: PenaltySamplingPlan, batch_size: int,
                  lr: float = 1e-3, seed: int = 0, repeats: int = 3) -> float:
    """Best-of-``repeats`` wall time of one TCg-phase epoch (seconds)."""
    best = math.inf
    for r in range(repeats):
        opts = [make_optimizer("adam", lr) for _ in nets]
        t0 = time.perf_counter()
        tc_epoch(nets, opts, features, prior, plan, batch_size, seed, r)
        best = min(best, time.perf_counter() - t0)
    return best
