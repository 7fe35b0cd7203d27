"""Downstream probes, metrics and strategy-comparison reports.

Frozen encoders turn each clip into frame-averaged private, shared and joint
vectors. Small two-layer MLP heads are fit per (task, feature) cell: softmax
cross-entropy for sensor identity, per-class sigmoid BCE for multi-label
source tags.
"""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .core import DTYPE, EmbeddingMatrix, MVLatentError, make_rng
from .model import MultiViewModel, _encode_rows
from .nn import init_mlp, mlp_backward, mlp_forward

TASKS = ("source", "sensor")
FEATURES = ("private", "shared", "joint")
SIGMOID_THRESHOLD = 0.5


class MissingClassError(MVLatentError):
    pass


class MissingScoreError(MVLatentError, KeyError):
    pass


class UnknownLabelError(MVLatentError, ValueError):
    pass


# -- features ------------------------------------------------------------------

def extract_features(model: MultiViewModel, records, latents: Mapping[str, EmbeddingMatrix],
                     chunk: int = 512) -> dict[str, tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """Single-view encoding of every record, frame-averaged per subspace."""
    ids = [r.clip_id if hasattr(r, "clip_id") else r for r in records]
    missing = [i for i in ids if i not in latents]
    if missing:
        raise MVLatentError(f"no latent for clip(s) {missing[:5]}")
    out = {}
    half = model.d // 2
    for start in range(0, len(ids), chunk):
        part = ids[start:start + chunk]
        x = np.stack([latents[i].values for i in part])
        h, _ = _encode_rows(model, x)
        pooled = h.mean(axis=1)
        for i, v in zip(part, pooled):
            out[i] = (v[:half].copy(), v[half:].copy(), v.copy())
    return out


def feature_matrix(features, ids: Sequence[str], which: str) -> np.ndarray:
    k = FEATURES.index(which)
    return np.stack([features[i][k] for i in ids])


# -- metrics ---------------------------------------------------------------------

def sensor_accuracy(predictions: Sequence, truths: Sequence) -> float:
    if len(predictions) != len(truths):
        raise ValueError(f"length mismatch: {len(predictions)} vs {len(truths)}")
    if not len(truths):
        raise ValueError("no samples")
    return float(np.mean([p == t for p, t in zip(predictions, truths)]))


def jaccard_multilabel(pred_sets: Sequence[Iterable], true_sets: Sequence[Iterable],
                       classes: Iterable | None = None) -> float:
    """Mean per-sample |pred & true| / |pred | true|; empty vs empty scores 1."""
    if len(pred_sets) != len(true_sets):
        raise ValueError(f"length mismatch: {len(pred_sets)} vs {len(true_sets)}")
    if not len(true_sets):
        raise ValueError("no samples")
    known = None if classes is None else set(classes)
    scores = []
    for p, t in zip(pred_sets, true_sets):
        p, t = set(p), set(t)
        if known is not None and not (p | t) <= known:
            raise UnknownLabelError(f"labels outside the class set: {sorted((p | t) - known)}")
        union = p | t
        scores.append(1.0 if not union else len(p & t) / len(union))
    return float(np.mean(scores))


def dsc_delta(scores: Mapping[tuple[str, str], float]) -> tuple[float, float]:
    """Directional subspace differences from ``{(task, feature): score}``.

    Returns ``(private-minus-shared on source, shared-minus-private on sensor)``;
    positive values mean each factor landed in its intended subspace.
    """
    need = [(t, f) for t in TASKS for f in ("private", "shared")]
    missing = [k for k in need if k not in scores]
    if missing:
        raise MissingScoreError(f"missing subspace scores {missing}")
    dsc_priv = scores["source", "private"] - scores["source", "shared"]
    dsc_shared = scores["sensor", "shared"] - scores["sensor", "private"]
    return float(dsc_priv), float(dsc_shared)


# -- probes ----------------------------------------------------------------------

@dataclass(frozen=True)
class ProbeConfig:
    task: str = "sensor"
    feature: str = "joint"
    hidden_width: int = 128
    epochs: int = 50
    learning_rate: float = 1e-3
    batch_size: int = 32
    weight_decay: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.task not in TASKS or self.feature not in FEATURES:
            raise ValueError(f"invalid probe cell ({self.task}, {self.feature})")


@dataclass
class Probe:
    cfg: ProbeConfig
    params: dict[str, np.ndarray]
    mean: np.ndarray
    scale: np.ndarray
    n_classes: int
    selected_epoch: int = -1

    def logits(self, x: np.ndarray) -> np.ndarray:
        z = ((x - self.mean) / self.scale).astype(DTYPE)
        return mlp_forward(self.params, "probe", z, "relu")[0]

    def predict(self, x: np.ndarray) -> np.ndarray:
        """Class indices (sensor) or a boolean multi-hot matrix (source)."""
        out = self.logits(x)
        if self.cfg.task == "sensor":
            return out.argmax(axis=1)
        return out > np.log(SIGMOID_THRESHOLD / (1 - SIGMOID_THRESHOLD))


def _probe_loss(task, logits, y):
    z = logits.astype(np.float64)
    if task == "sensor":
        z = z - z.max(axis=1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        n = len(z)
        g = np.exp(logp)
        g[np.arange(n), y] -= 1
        return float(-logp[np.arange(n), y].mean()), g / n
    loss = float(np.mean(np.logaddexp(0, z) - y * z))
    return loss, (1 / (1 + np.exp(-z)) - y) / z.size


def _check_classes(task, y, n_classes):
    if task == "sensor":
        present = np.unique(y)
        if len(present) < n_classes:
            raise MissingClassError(
                f"classes {sorted(set(range(n_classes)) - set(present.tolist()))} absent from probe train set")
    elif np.any(y.sum(axis=0) == 0):
        raise MissingClassError(f"source classes {np.flatnonzero(y.sum(axis=0) == 0).tolist()} "
                                "absent from probe train set")


def train_probe(x_train: np.ndarray, y_train: np.ndarray, x_val: np.ndarray, y_val: np.ndarray,
                cfg: ProbeConfig, n_classes: int | None = None) -> Probe:
    """Fit a two-layer head; keeps the epoch with the lowest validation loss.

    ``y`` holds class indices for the sensor task and a multi-hot matrix for
    the source task. Features are standardised with training statistics.
    """
    from .train import AdamW

    if n_classes is None:
        n_classes = int(y_train.max()) + 1 if cfg.task == "sensor" else y_train.shape[1]
    _check_classes(cfg.task, y_train, n_classes)
    x_train = np.asarray(x_train, dtype=np.float64)
    mean = x_train.mean(axis=0)
    scale = x_train.std(axis=0) + 1e-8
    params = init_mlp([x_train.shape[1], cfg.hidden_width, n_classes],
                      make_rng(cfg.seed, 50), "probe")
    probe = Probe(cfg, params, mean, scale, n_classes)
    xs = ((x_train - mean) / scale).astype(DTYPE)
    opt = AdamW(params, cfg.learning_rate, cfg.weight_decay)
    best_loss, best_params = np.inf, None
    n = len(xs)
    bs = min(cfg.batch_size, n)
    for epoch in range(cfg.epochs):
        order = make_rng(cfg.seed, 51, epoch).permutation(n)
        for start in range(0, n - bs + 1, bs):
            idx = order[start:start + bs]
            logits, cache = mlp_forward(params, "probe", xs[idx], "relu")
            _, g = _probe_loss(cfg.task, logits, y_train[idx])
            _, grads = mlp_backward(params, "probe", cache, g.astype(DTYPE))
            opt.step(grads)
        val_loss, _ = _probe_loss(cfg.task, probe.logits(np.asarray(x_val)), y_val)
        if val_loss < best_loss:
            best_loss = val_loss
            best_params = {k: v.copy() for k, v in params.items()}
            probe.selected_epoch = epoch
    probe.params = best_params
    return probe


def score_probe(probe: Probe, x: np.ndarray, y: np.ndarray) -> float:
    pred = probe.predict(np.asarray(x))
    if probe.cfg.task == "sensor":
        return sensor_accuracy(pred.tolist(), np.asarray(y).tolist())
    to_sets = lambda m: [np.flatnonzero(row).tolist() for row in m]
    return jaccard_multilabel(to_sets(pred), to_sets(np.asarray(y) > 0.5))


# -- full evaluation -------------------------------------------------------------

@dataclass
class EvalReport:
    scores: dict[tuple[str, str], float]
    dsc_priv: float
    dsc_shared: float
    config_digest: str = ""
    method: str = ""
    objective: str = ""

    @classmethod
    def from_scores(cls, scores, **kw) -> "EvalReport":
        priv, shared = dsc_delta(scores)
        return cls(dict(scores), priv, shared, **kw)

    def overall(self, task: str) -> float:
        return self.scores[task, "joint"]

    def to_json(self) -> dict:
        return {"method": self.method, "objective": self.objective,
                "config_digest": self.config_digest,
                "scores": {t: {f: self.scores[t, f] for f in FEATURES if (t, f) in self.scores}
                           for t in TASKS},
                "dsc_priv": self.dsc_priv, "dsc_shared": self.dsc_shared}

    @classmethod
    def from_json(cls, obj: dict) -> "EvalReport":
        scores = {(t, f): v for t, row in obj["scores"].items() for f, v in row.items()}
        return cls(scores, obj["dsc_priv"], obj["dsc_shared"], obj.get("config_digest", ""),
                   obj.get("method", ""), obj.get("objective", ""))

    def write(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n")


def probe_targets(records, task: str, classes: Sequence[str]) -> np.ndarray:
    index = {c: i for i, c in enumerate(classes)}
    if task == "sensor":
        return np.array([index[r.sensor_id] for r in records])
    y = np.zeros((len(records), len(classes)))
    for i, r in enumerate(records):
        for lab in r.source_labels:
            if lab not in index:
                raise UnknownLabelError(f"clip {r.clip_id!r}: unknown source label {lab!r}")
            y[i, index[lab]] = 1
    return y


def evaluate_model(model: MultiViewModel, splits, latents, probe_defaults: ProbeConfig | None = None,
                   source_classes: Sequence[str] | None = None, **report_kw) -> EvalReport:
    """Run all six (task x feature) probes on a downstream ``(train, val, test)`` split."""
    base = probe_defaults or ProbeConfig()
    train_r, val_r, test_r = splits
    all_r = [*train_r, *val_r, *test_r]
    feats = extract_features(model, all_r, latents)
    classes = {"sensor": sorted({r.sensor_id for r in all_r}),
               "source": list(source_classes) if source_classes is not None
               else sorted({l for r in all_r for l in r.source_labels})}
    scores = {}
    for task in TASKS:
        ys = [probe_targets(part, task, classes[task]) for part in (train_r, val_r, test_r)]
        for feature in FEATURES:
            xs = [feature_matrix(feats, [r.clip_id for r in part], feature)
                  for part in (train_r, val_r, test_r)]
            cfg = ProbeConfig(task, feature, base.hidden_width, base.epochs, base.learning_rate,
                              base.batch_size, base.weight_decay, base.seed)
            probe = train_probe(xs[0], ys[0], xs[1], ys[1], cfg, len(classes[task]))
            scores[task, feature] = score_probe(probe, xs[2], ys[2])
    return EvalReport.from_scores(scores, **report_kw)


# -- strategy comparison ---------------------------------------------------------

@dataclass
class StrategyEntry:
    name: str
    objective: str
    group: str
    report: EvalReport
    train_seconds: float | None = None


@dataclass
class StrategyReport:
    table: list[dict] = field(default_factory=list)
    scatter: list[dict] = field(default_factory=list)
    reference: dict[str, float] = field(default_factory=dict)

    def write(self, out_dir) -> dict[str, Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = {"table": out_dir / "comparison.csv", "scatter": out_dir / "scatter.csv",
                 "summary": out_dir / "comparison.json", "markdown": out_dir / "comparison.md"}
        _write_csv(paths["table"], ["method", "objective", "source", "sensor", "avg"], self.table)
        _write_csv(paths["scatter"], ["strategy", "task", "overall", "dsc_delta"], self.scatter)
        paths["summary"].write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")
        lines = ["| Method | Objective | Source | Sensor | Avg. |", "|---|---|---|---|---|"]
        for row in self.table:
            lines.append(f"| {row['method']} | {row['objective']} | {row['source']:.3f} | "
                         f"{row['sensor']:.3f} | {row['avg']:.3f} |")
        if self.reference:
            lines.append("")
            lines.append("Reference (pretrained latents): "
                         + ", ".join(f"{k} {v:.3f}" for k, v in sorted(self.reference.items())))
        paths["markdown"].write_text("\n".join(lines) + "\n")
        return paths


def _write_csv(path, columns, rows):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


def strategy_report(entries: Sequence[StrategyEntry],
                    baselines: Sequence[StrategyEntry] = ()) -> StrategyReport:
    """Comparison table (joint-latent scores plus their mean) and scatter rows.

    The reference values are the overall scores of the ``pretrained`` baseline,
    when one is supplied.
    """
    rep = StrategyReport()
    for e in [*entries, *baselines]:
        src, sen = e.report.overall("source"), e.report.overall("sensor")
        rep.table.append({"method": e.name, "objective": e.objective, "group": e.group,
                          "source": src, "sensor": sen, "avg": (src + sen) / 2,
                          "train_seconds": e.train_seconds})
        rep.scatter.append({"strategy": e.group, "method": e.name, "task": "source",
                            "overall": src, "dsc_delta": e.report.dsc_priv})
        rep.scatter.append({"strategy": e.group, "method": e.name, "task": "sensor",
                            "overall": sen, "dsc_delta": e.report.dsc_shared})
    for e in baselines:
        if e.name == "pretrained":
            rep.reference = {t: e.report.overall(t) for t in TASKS}
    return rep
