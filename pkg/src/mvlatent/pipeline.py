"""End-to-end runs: data preparation, training, evaluation and suites.

Output layout under ``out_dir``::

    config.snapshot          resolved config (YAML, digest in the first line)
    data/                    synthetic dataset, when the config asks for one
    checkpoints/model.ckpt
    records/train.jsonl
    reports/eval.json, reports/scatter.csv, reports/digests.json
    members/<name>/...       per-member runs of a suite
"""
from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import ingest
from .config import ConfigError, ExperimentConfig, LossSection
from .core import MVLatentError
from .evaluation import (EvalReport, StrategyEntry, _write_csv, evaluate_model, strategy_report)
from .model import load_checkpoint, read_checkpoint_header, save_checkpoint
from .synthdata import generate, write_dataset
from .train import TrainRecord, build_model, supervised_labels, train

log = logging.getLogger(__name__)

CHECKPOINT = Path("checkpoints/model.ckpt")
RECORD = Path("records/train.jsonl")
EVAL_REPORT = Path("reports/eval.json")
SCATTER = Path("reports/scatter.csv")


@dataclass
class PreparedData:
    records: list
    latents: dict
    plan: ingest.SplitPlan
    pairs_train: list
    pairs_val: list
    downstream: tuple
    source_classes: list


def write_snapshot(cfg: ExperimentConfig, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.snapshot").write_text(f"# digest: {cfg.digest()}\n{cfg.dump()}")


def synth(cfg: ExperimentConfig, out_dir) -> tuple[Path, str]:
    """Generate and write the configured synthetic dataset; returns (manifest, digest)."""
    if cfg.dataset.synthetic is None:
        raise ConfigError("config has no synthetic dataset section")
    out_dir = Path(out_dir)
    spec = cfg.synth_spec()
    ds = generate(spec)
    data_dir = out_dir / "data"
    manifest = write_dataset(ds, data_dir)
    ds_digest = ds.digest()
    (data_dir / "dataset.json").write_text(
        json.dumps({"spec": asdict(spec), "digest": ds_digest}, indent=2, sort_keys=True) + "\n")
    return manifest, ds_digest


def _manifest_path(cfg: ExperimentConfig, out_dir: Path) -> Path:
    if cfg.dataset.manifest is not None:
        path = Path(cfg.dataset.manifest)
        if not path.exists():
            raise ConfigError(f"manifest {path} does not exist")
        return path
    meta = out_dir / "data" / "dataset.json"
    spec = asdict(cfg.synth_spec())
    if not meta.exists() or json.loads(meta.read_text())["spec"] != spec:
        log.info("materialising synthetic dataset under %s", out_dir / "data")
        synth(cfg, out_dir)
    return out_dir / "data" / "manifest.jsonl"


def prepare_data(cfg: ExperimentConfig, out_dir) -> PreparedData:
    out_dir = Path(out_dir)
    records = ingest.load_manifest(_manifest_path(cfg, out_dir))
    latents = ingest.load_latents(records)
    plan = ingest.split_sensors(records, cfg.split.ratios, cfg.seed)
    pairs_train = ingest.make_pairs(records, plan.train_sensors, cfg.split.train_pairs, cfg.seed, latents)
    pairs_val = ingest.make_pairs(records, plan.val_sensors, cfg.split.val_pairs, cfg.seed, latents)
    plan = ingest.SplitPlan(plan.train_sensors, plan.val_sensors, plan.test_sensors,
                            {"train": len(pairs_train), "val": len(pairs_val)})
    test_records = [r for r in records if r.sensor_id in plan.test_sensors]
    downstream = ingest.stratified_downstream_split(test_records, cfg.seed)
    source_classes = sorted({l for r in records for l in (r.source_labels or ())})
    return PreparedData(records, latents, plan, pairs_train, pairs_val, downstream, source_classes)


def objective_label(method: str, loss) -> tuple[str, str]:
    """(objective text, strategy group) for tables and scatter rows."""
    if method == "multiview":
        parts = ["L_rec"] if loss.use_rec else []
        group = "rec"
        if loss.cos_mode != "none":
            parts.append(f"L_cos{'+' if loss.cos_mode == 'plus' else '-'} ({loss.cos_level})")
            group = "cos"
        if loss.mask:
            m = loss.mask
            target = "z_p" if m.get("target", "private") == "private" else "z_s"
            parts.append(f"mask {target} (r={m['ratio']})")
            group = "mask"
        return " + ".join(parts), group
    return {"pretrained": "N/A", "singleview_ae": "L_rec", "contrastive": "InfoNCE",
            "supervised_source": "BCE", "supervised_sensor": "CE"}[method], method


def run_train(cfg: ExperimentConfig, out_dir, data: PreparedData | None = None):
    """Train the configured method; writes checkpoint, record and snapshot."""
    out_dir = Path(out_dir)
    data = data or prepare_data(cfg, out_dir)
    write_snapshot(cfg, out_dir)
    method = cfg.train.method
    d = next(iter(data.latents.values())).d
    digest = cfg.model_digest()
    t0 = time.perf_counter()
    if method == "pretrained":
        model, record = build_model("pretrained", d), TrainRecord()
    else:
        labels, n_classes = None, 0
        if method.startswith("supervised"):
            train_records = [r for r in data.records if r.sensor_id in data.plan.train_sensors
                             or r.sensor_id in data.plan.val_sensors]
            if method == "supervised_sensor":
                # head covers train and val sensors so validation loss is defined
                labels, n_classes = supervised_labels(train_records, method)
            else:
                labels, n_classes = supervised_labels(data.records, method)
        tcfg = cfg.train_config()
        model = build_model(method, d, cfg.model.hidden_sizes, cfg.model.activation,
                            tcfg.seed, n_classes)
        model, record = train(model, data.pairs_train, data.pairs_val, tcfg, labels,
                              log=log.debug)
    seconds = time.perf_counter() - t0
    meta = {"method": method, "cos_mode": cfg.loss.cos_mode, "cos_level": cfg.loss.cos_level,
            "selected_epoch": record.selected_epoch, "config": cfg.to_dict()}
    (out_dir / CHECKPOINT).parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out_dir / CHECKPOINT, model, digest, meta)
    (out_dir / RECORD).parent.mkdir(parents=True, exist_ok=True)
    record.write(out_dir / RECORD)
    _embed_digest_lines(out_dir / RECORD, digest)
    return model, record, seconds


def _embed_digest_lines(path: Path, digest: str) -> None:
    rows = [json.loads(l) for l in path.read_text().splitlines()]
    with open(path, "w") as fh:
        for row in rows:
            row["config_digest"] = digest
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def run_eval(cfg: ExperimentConfig, out_dir, checkpoint=None,
             data: PreparedData | None = None) -> EvalReport:
    """Probe all six (task x feature) cells for a checkpoint and write the reports."""
    out_dir = Path(out_dir)
    checkpoint = Path(checkpoint) if checkpoint else out_dir / CHECKPOINT
    if not checkpoint.exists():
        raise ConfigError(f"checkpoint {checkpoint} does not exist")
    header = read_checkpoint_header(checkpoint)
    if header["config_digest"] != cfg.model_digest():
        raise ConfigError(f"checkpoint {checkpoint} was trained under a different config "
                          f"({header['config_digest'][:12]} != {cfg.model_digest()[:12]})")
    model, _ = load_checkpoint(checkpoint)
    data = data or prepare_data(cfg, out_dir)
    objective, group = objective_label(cfg.train.method, cfg.loss)
    report = evaluate_model(model, data.downstream, data.latents, cfg.probe_config(),
                            data.source_classes, config_digest=cfg.model_digest(),
                            method=cfg.train.method, objective=objective)
    (out_dir / EVAL_REPORT).parent.mkdir(parents=True, exist_ok=True)
    report.write(out_dir / EVAL_REPORT)
    rows = strategy_report([StrategyEntry(cfg.train.method, objective, group, report)]).scatter
    _write_csv(out_dir / SCATTER, ["strategy", "task", "overall", "dsc_delta"], rows)
    write_digests(out_dir / "reports", cfg.model_digest(), [EVAL_REPORT.name, SCATTER.name])
    return report


def write_digests(report_dir: Path, digest: str, names) -> None:
    """Sidecar naming the config digest for files whose format has no room for it."""
    path = report_dir / "digests.json"
    known = json.loads(path.read_text()) if path.exists() else {}
    known.update({n: digest for n in names})
    path.write_text(json.dumps(known, indent=2, sort_keys=True) + "\n")


# -- suites --------------------------------------------------------------------

def member_seed(master: int, index: int) -> int:
    return int(np.random.SeedSequence([master, 1000 + index]).generate_state(1)[0])


def suite_members(cfg: ExperimentConfig) -> list[tuple[str, ExperimentConfig]]:
    members = []
    for i, v in enumerate(cfg.suite.variants):
        members.append((v.name, cfg.with_member("multiview", v.loss, member_seed(cfg.seed, i))))
    offset = len(cfg.suite.variants)
    for j, b in enumerate(cfg.suite.baselines):
        members.append((b, cfg.with_member(b, LossSection(), member_seed(cfg.seed, offset + j))))
    return members


def _run_member(name: str, mcfg: ExperimentConfig, out_dir: str, data=None):
    member_dir = Path(out_dir) / "members" / name
    data = data or prepare_data(mcfg, out_dir)
    _, _, seconds = run_train(mcfg, member_dir, data)
    report = run_eval(mcfg, member_dir, data=data)
    return name, report.to_json(), (None if mcfg.train.method == "pretrained" else seconds)


def run_suite(cfg: ExperimentConfig, out_dir, parallel: int = 1):
    """Train and evaluate every suite member, then write the comparison reports.

    Returns ``(StrategyReport, failures)`` where failures maps member name to
    the error message.
    """
    out_dir = Path(out_dir)
    write_snapshot(cfg, out_dir)
    data = prepare_data(cfg, out_dir)
    members = suite_members(cfg)
    results, failures = {}, {}
    if parallel > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            futures = {name: pool.submit(_run_member, name, mcfg, str(out_dir))
                       for name, mcfg in members}
            for name, fut in futures.items():
                try:
                    results[name] = fut.result()
                except Exception as exc:  # noqa: BLE001 - reported per member
                    failures[name] = f"{type(exc).__name__}: {exc}"
    else:
        for name, mcfg in members:
            try:
                results[name] = _run_member(name, mcfg, str(out_dir), data)
            except Exception as exc:  # noqa: BLE001 - reported per member
                log.error("suite member %s failed: %s", name, exc)
                failures[name] = f"{type(exc).__name__}: {exc}"
    entries, baselines = [], []
    for name, mcfg in members:
        if name not in results:
            continue
        _, rep_json, seconds = results[name]
        objective, group = objective_label(mcfg.train.method, mcfg.loss)
        entry = StrategyEntry(name, objective, group, EvalReport.from_json(rep_json), seconds)
        (baselines if mcfg.train.method != "multiview" else entries).append(entry)
    report = strategy_report(entries, baselines)
    paths = report.write(out_dir / "reports")
    summary = json.loads(paths["summary"].read_text())
    summary.update({"config_digest": cfg.digest(), "failed": failures})
    paths["summary"].write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    write_digests(out_dir / "reports", cfg.digest(),
                  [p.name for k, p in paths.items() if k != "summary"])
    return report, failures
