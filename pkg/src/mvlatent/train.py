"""Mini-batch training for the multi-view model and its baselines."""
from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .core import DTYPE, MVLatentError, ViewPair, make_rng
from .losses import (LossConfig, infonce_loss_grad, single_rec_loss_grad, total_loss_grad)
from .model import (EncoderConfig, MultiViewModel, autoencode_backward, autoencode_batch,
                    backward_batch, classify_backward, classify_batch, forward_batch)

METHODS = ("multiview", "singleview_ae", "contrastive", "supervised_source",
           "supervised_sensor")
BASELINES = ("pretrained", "singleview_ae", "contrastive", "supervised_source",
             "supervised_sensor")


class DivergenceError(MVLatentError):
    def __init__(self, epoch: int, step: int, components: dict):
        super().__init__(f"non-finite loss at epoch {epoch}, step {step}: {components}")
        self.epoch, self.step = epoch, step


class TrainConfigError(MVLatentError, ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 16
    learning_rate: float = 1e-3
    weight_decay: float = 0.01
    loss: LossConfig = field(default_factory=LossConfig)
    seed: int = 0
    method: str = "multiview"
    betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.method not in METHODS:
            raise TrainConfigError(f"unknown method {self.method!r}")
        if self.batch_size < 1:
            raise TrainConfigError("batch_size must be >= 1")
        if not self.learning_rate >= 0:
            raise TrainConfigError("learning_rate must be non-negative")
        if self.epochs < 1:
            raise TrainConfigError("epochs must be >= 1")


@dataclass
class TrainRecord:
    train_losses: list[dict[str, float]] = field(default_factory=list)
    val_losses: list[dict[str, float]] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)
    selected_epoch: int = -1

    def lines(self, with_time: bool = False) -> list[dict]:
        rows = []
        for e, (tr, va) in enumerate(zip(self.train_losses, self.val_losses)):
            row = {"epoch": e, "train": tr, "val": va, "selected": e == self.selected_epoch}
            if with_time:
                row["seconds"] = self.seconds[e]
            rows.append(row)
        return rows

    def write(self, path, with_time: bool = False) -> None:
        """Line-delimited epoch records. Timing is off by default to keep files reproducible."""
        with open(path, "w") as fh:
            for row in self.lines(with_time):
                fh.write(json.dumps(row, sort_keys=True) + "\n")


class AdamW:
    """Adam with decoupled weight decay, operating in place on a parameter dict."""

    def __init__(self, params: dict[str, np.ndarray], lr: float, weight_decay: float = 0.01,
                 betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr, self.wd, self.eps = lr, weight_decay, eps
        self.b1, self.b2 = betas
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: Mapping[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for k, g in grads.items():
            p = self.params[k]
            g = g.astype(p.dtype)
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            update = (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)
            p *= DTYPE(1 - self.lr * self.wd)
            p -= DTYPE(self.lr) * update.astype(p.dtype)


# -- per-method objectives -----------------------------------------------------

@dataclass
class PairArrays:
    """Stacked view arrays for a pair list, plus optional per-view targets."""
    x1: np.ndarray
    x2: np.ndarray
    ids1: list[str]
    ids2: list[str]

    @classmethod
    def from_pairs(cls, pairs: Sequence[ViewPair]) -> "PairArrays":
        if not pairs:
            raise TrainConfigError("pair list is empty")
        return cls(np.stack([p.view1.values for p in pairs]).astype(DTYPE),
                   np.stack([p.view2.values for p in pairs]).astype(DTYPE),
                   [p.view1.clip_id for p in pairs], [p.view2.clip_id for p in pairs])

    def __len__(self):
        return len(self.x1)


def _softmax_ce(logits, targets):
    z = logits.astype(np.float64)
    z = z - z.max(axis=1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=1, keepdims=True)
    n = len(z)
    loss = float(-np.mean(np.log(p[np.arange(n), targets] + 1e-300)))
    g = p.copy()
    g[np.arange(n), targets] -= 1
    return loss, g / n


def _sigmoid_bce(logits, targets):
    z = logits.astype(np.float64)
    loss = float(np.mean(np.logaddexp(0, z) - targets * z))
    g = (1 / (1 + np.exp(-z)) - targets) / z.size
    return loss, g


def batch_objective(model: MultiViewModel, cfg: TrainConfig, x1, x2, ids1, ids2,
                    labels=None, training: bool = True, step: int = 0):
    """Loss components and parameter gradients for one batch of pairs."""
    method = cfg.method
    if method == "multiview":
        mask = cfg.loss.mask if training else None
        fwd = forward_batch(model, x1, x2, mask, step)
        total, comps, g = total_loss_grad(cfg.loss, fwd)
        return total, comps, (backward_batch(model, fwd, g) if training else None)
    if method == "singleview_ae":
        x = np.concatenate([x1, x2])
        xh, caches = autoencode_batch(model, x)
        val, g = single_rec_loss_grad(x, xh)
        return val, {"rec": val}, (autoencode_backward(model, caches, g) if training else None)
    if method == "contrastive":
        fwd = forward_batch(model, x1, x2, decode_views=False)
        z1 = np.concatenate([fwd.zp1, fwd.zs1], axis=-1)
        z2 = np.concatenate([fwd.zp2, fwd.zs2], axis=-1)
        val, g1, g2 = infonce_loss_grad(z1, z2)
        if not training:
            return val, {"infonce": val}, None
        h = model.d // 2
        g = {"zp1": g1[..., :h], "zs1": g1[..., h:], "zp2": g2[..., :h], "zs2": g2[..., h:]}
        return val, {"infonce": val}, backward_batch(model, fwd, g)
    # supervised baselines: both views are independent labelled samples
    if labels is None:
        raise TrainConfigError(f"{method} needs labels")
    x = np.concatenate([x1, x2])
    ids = list(ids1) + list(ids2)
    logits, caches = classify_batch(model, x)
    if method == "supervised_sensor":
        val, g = _softmax_ce(logits, np.array([labels[i] for i in ids]))
        name = "ce"
    else:
        val, g = _sigmoid_bce(logits, np.stack([labels[i] for i in ids]))
        name = "bce"
    return val, {name: val}, (classify_backward(model, caches, g) if training else None)


def _batches(n: int, batch_size: int, order: np.ndarray):
    if n < batch_size:
        yield order
        return
    for start in range(0, n - batch_size + 1, batch_size):
        yield order[start:start + batch_size]


def _mean_components(rows: list[dict[str, float]]) -> dict[str, float]:
    out = {k: float(np.mean([r[k] for r in rows])) for k in rows[0]}
    out["total"] = float(sum(v for k, v in out.items()))
    return out


def evaluate_loss(model, data: PairArrays, cfg: TrainConfig, labels=None) -> dict[str, float]:
    """Unmasked objective over ``data`` in fixed order."""
    rows = []
    for idx in _batches(len(data), cfg.batch_size, np.arange(len(data))):
        _, comps, _ = batch_objective(model, cfg, data.x1[idx], data.x2[idx],
                                      [data.ids1[i] for i in idx], [data.ids2[i] for i in idx],
                                      labels, training=False)
        rows.append(comps)
    return _mean_components(rows)


def train(model: MultiViewModel, pairs_train: Sequence[ViewPair], pairs_val: Sequence[ViewPair],
          cfg: TrainConfig, labels: Mapping | None = None, log=None):
    """Train ``model`` in place; returns ``(best_model, record)``.

    Each epoch visits the training pairs in a seed-determined order, dropping
    the final incomplete batch. The returned model holds the parameters of the
    epoch with the lowest validation total (earliest on ties).
    """
    if cfg.method.startswith("supervised") and labels is None:
        raise TrainConfigError(f"{cfg.method} needs labels")
    tr = pairs_train if isinstance(pairs_train, PairArrays) else PairArrays.from_pairs(pairs_train)
    va = pairs_val if isinstance(pairs_val, PairArrays) else PairArrays.from_pairs(pairs_val)
    opt = AdamW(model.params, cfg.learning_rate, cfg.weight_decay, cfg.betas, cfg.adam_eps)
    record = TrainRecord()
    best, best_val = model.copy(), np.inf
    step = 0
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        order = make_rng(cfg.seed, 40, epoch).permutation(len(tr))
        rows = []
        for b, idx in enumerate(_batches(len(tr), cfg.batch_size, order)):
            total, comps, grads = batch_objective(
                model, cfg, tr.x1[idx], tr.x2[idx], [tr.ids1[i] for i in idx],
                [tr.ids2[i] for i in idx], labels, training=True, step=step)
            if not np.isfinite(total):
                raise DivergenceError(epoch, b, comps)
            opt.step(grads)
            rows.append(comps)
            step += 1
        record.train_losses.append(_mean_components(rows))
        val = evaluate_loss(model, va, cfg, labels)
        if not np.isfinite(val["total"]):
            raise DivergenceError(epoch, -1, val)
        record.val_losses.append(val)
        record.seconds.append(time.perf_counter() - t0)
        if val["total"] < best_val:
            best_val, best = val["total"], model.copy()
            record.selected_epoch = epoch
        if log is not None:
            log(f"epoch {epoch}: train {record.train_losses[-1]['total']:.5f} "
                f"val {val['total']:.5f}")
    return best, record


# -- baselines ----------------------------------------------------------------

def build_model(method: str, d: int, hidden_sizes=None, activation: str = "gelu", seed: int = 0,
                n_classes: int = 0) -> MultiViewModel:
    """Model with matched encoder capacity for any method, or the identity extractor."""
    if method == "pretrained":
        enc = EncoderConfig(d, (), "identity", seed, "identity")
        return MultiViewModel.build(enc)
    enc = EncoderConfig(d, hidden_sizes, activation, seed)
    if method in ("multiview", "singleview_ae"):
        return MultiViewModel.build(enc, enc)
    if method == "contrastive":
        return MultiViewModel.build(enc)
    if method.startswith("supervised"):
        if n_classes < 1:
            raise TrainConfigError(f"{method} needs n_classes >= 1")
        return MultiViewModel.build(enc, head_classes=n_classes)
    raise TrainConfigError(f"unknown method {method!r}")


def supervised_labels(records, method: str):
    """Targets keyed by clip id, plus the class count, for a supervised baseline."""
    if method == "supervised_sensor":
        classes = sorted({r.sensor_id for r in records})
        index = {s: i for i, s in enumerate(classes)}
        return {r.clip_id: index[r.sensor_id] for r in records}, len(classes)
    classes = sorted({l for r in records for l in (r.source_labels or ())})
    index = {s: i for i, s in enumerate(classes)}
    out = {}
    for r in records:
        v = np.zeros(len(classes))
        v[[index[l] for l in r.source_labels or ()]] = 1
        out[r.clip_id] = v
    return out, len(classes)


def run_baseline_suite(pairs_train, pairs_val, records, cfg_suite: Mapping[str, TrainConfig],
                       d: int, hidden_sizes=None, activation: str = "gelu"):
    """Train every baseline in ``cfg_suite`` (method name -> TrainConfig).

    ``pretrained`` needs no config entry and yields the identity extractor.
    Returns ``{method: (model, record_or_None)}``.
    """
    out = {"pretrained": (build_model("pretrained", d), None)}
    for method, cfg in cfg_suite.items():
        if method == "pretrained":
            continue
        labels, n_classes = (supervised_labels(records, method)
                             if method.startswith("supervised") else (None, 0))
        model = build_model(method, d, hidden_sizes, activation, cfg.seed, n_classes)
        out[method] = train(model, pairs_train, pairs_val, cfg, labels)
    return out
