"""Acceptance criteria, one test per criterion.

Each test prints a ``criterion N: PASS|FAIL (...)`` line; the lines are also
collected into an "acceptance criteria" section of the pytest summary.
"""
import csv
import json
import math
import time

import numpy as np
import pytest
import yaml

import oracles
from mvlatent import cli, pipeline
from mvlatent import losses as L
from mvlatent.config import LossSection, from_dict
from mvlatent.core import EmbeddingMatrix
from mvlatent.losses import EPS, MaskSpec
from mvlatent.model import EncoderConfig, MultiViewModel, encode, forward_batch
from mvlatent.synthdata import generate, recoverability_check

NEG_LOG_EPS = -math.log(EPS)

# (name, implementation, oracle, takes epsilon)
COSINE = [
    ("cos_plus_sample", L.cos_plus_sample, oracles.cos_plus_sample_oracle, True),
    ("cos_minus_sample", L.cos_minus_sample, oracles.cos_minus_sample_oracle, True),
    ("cos_plus_batch", L.cos_plus_batch, oracles.cos_plus_batch_oracle, False),
    ("cos_minus_batch", L.cos_minus_batch, oracles.cos_minus_batch_oracle, True),
    ("infonce", L.infonce_loss, oracles.infonce_oracle, False),
]


def test_criterion_1_oracle_equivalence(verdict):
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    worst = {name: 0.0 for name, *_ in COSINE}
    worst["rec"] = 0.0
    for _ in range(100):
        b = int(rng.choice([1, 2, 4, 8]))
        x1, x2, xh1, xh2 = (rng.standard_normal((b, 6)) for _ in range(4))
        worst["rec"] = max(worst["rec"], abs(L.rec_loss(x1, x2, xh1, xh2)
                                             - oracles.rec_oracle(x1, x2, xh1, xh2)))
        for name, impl, oracle, with_eps in COSINE:
            args = (x1, x2, EPS) if with_eps else (x1, x2)
            worst[name] = max(worst[name], abs(impl(*args) - oracle(*args)))
    seconds = time.perf_counter() - t0
    ok = max(worst.values()) <= 1e-6 and seconds < 10
    verdict(1, ok, f"max abs diff {max(worst.values()):.2e} over 100 batches, {seconds:.2f}s")
    assert ok, worst


def test_criterion_2_gradient_checks(verdict):
    rng = np.random.default_rng(202)
    grads = [
        ("rec", L.rec_loss_grad, 4),
        ("cos_plus_sample", L.cos_plus_sample_grad, 2),
        ("cos_minus_sample", L.cos_minus_sample_grad, 2),
        ("cos_plus_batch", L.cos_plus_batch_grad, 2),
        ("cos_minus_batch", L.cos_minus_batch_grad, 2),
        ("infonce", L.infonce_loss_grad, 2),
    ]
    t0 = time.perf_counter()
    worst = {}
    for name, fn, n_in in grads:
        errs = []
        for _ in range(20):
            inputs = [rng.standard_normal((4, 6)) for _ in range(n_in)]
            _, *analytic = fn(*inputs)
            numeric = oracles.central_diff(lambda *xs: fn(*xs)[0], inputs, step=1e-4)
            if name == "rec":
                numeric = numeric[2:]  # gradient is taken w.r.t. the reconstructions
            errs += [oracles.rel_err(a, n) for a, n in zip(analytic, numeric)]
        worst[name] = max(errs)
    seconds = time.perf_counter() - t0
    ok = max(worst.values()) < 1e-3 and seconds < 30
    verdict(2, ok, f"max rel err {max(worst.values()):.2e} over 20 instances per loss, {seconds:.2f}s")
    assert ok, worst


def _closed_form_cases():
    e1, e2 = np.eye(6)[0], np.eye(6)[1]
    same = np.stack([e1, e1, e1])
    orth, anti = np.stack([e2, e2, e2]), -same
    two, two_neg = np.stack([e1, e2]), -np.stack([e1, e2])
    z = np.zeros((1, 2, 2))
    half = -math.log(0.5)
    # (label, computed, expected, tolerance); upper bounds encoded as expected=0, tol=bound
    return [
        ("sim parallel", L.remapped_sim(e1, 3 * e1), 1 - EPS, 1e-4),
        ("sim orthogonal", L.remapped_sim(e1, e2), 0.5, 1e-4),
        ("sim antiparallel", L.remapped_sim(e1, -e1), EPS, 1e-4),
        ("rec perfect", L.rec_loss(same, orth, same, orth), 0.0, 1e-4),
        ("rec one entry", L.rec_loss(np.array([[[1.0, 2], [3, 4]]]), z,
                                     np.array([[[1.0, 2], [3, 2]]]), z), 1.0, 1e-4),
        ("rec zeros vs ones", L.rec_loss(z, z, z + 1, z + 1), 2.0, 1e-4),
        ("cos+ sample parallel", L.cos_plus_sample(same, same), 0.0, 2e-7),
        ("cos+ sample orthogonal", L.cos_plus_sample(same, orth), half, 1e-4),
        ("cos+ sample antiparallel", L.cos_plus_sample(same, anti), NEG_LOG_EPS, 1e-4),
        ("cos- sample antiparallel", L.cos_minus_sample(same, anti), 0.0, 2e-7),
        ("cos- sample orthogonal", L.cos_minus_sample(same, orth), half, 1e-4),
        ("cos- sample identical", L.cos_minus_sample(same, same), NEG_LOG_EPS, 1e-4),
        ("cos+ batch B=1", L.cos_plus_batch(e1[None], e2[None]), 0.0, 1e-4),
        ("cos+ batch uniform", L.cos_plus_batch(same, orth), math.log(3), 1e-4),
        ("cos+ batch B=2", L.cos_plus_batch(two, two), -math.log(math.e / (math.e + 1)), 1e-4),
        ("cos- batch antiparallel", L.cos_minus_batch(same, anti), 0.0, 1e-4),
        ("cos- batch orthogonal", L.cos_minus_batch(same, orth), half, 1e-4),
        ("cos- batch mixed", L.cos_minus_batch(two, two_neg), half / 2, 1e-4),
        ("infonce B=1", L.infonce_loss(e1[None], e2[None]), 0.0, 1e-4),
        ("infonce B=2", L.infonce_loss(two, two), 0.3133, 1e-4),
    ]


def test_criterion_3_closed_forms(verdict):
    cases = _closed_form_cases()
    bad = [(n, got, want) for n, got, want, tol in cases if not abs(got - want) <= tol]
    x1, x2 = np.random.default_rng(3).standard_normal((2, 5, 6))
    bit_equal = L.infonce_loss(x1, x2) == L.cos_plus_batch(x1, x2)
    ok = not bad and bit_equal and abs(-math.log(0.5) - 0.6931) < 1e-4 and abs(NEG_LOG_EPS - 16.118) < 1e-3
    verdict(3, ok, f"{len(cases) - len(bad)}/{len(cases)} closed forms, infonce bit-equal={bit_equal}")
    assert ok, bad


def test_criterion_4_structural_invariants(verdict):
    rng = np.random.default_rng(404)
    n_cases = 200
    failures = {k: 0 for k in ("view_swap", "batch_order", "frame_perm", "scale", "single_vs_pair")}
    sample_level = [L.cos_plus_sample, L.cos_minus_sample]
    all_cos = sample_level + [L.cos_plus_batch, L.cos_minus_batch, L.infonce_loss]
    batch_level = [L.cos_plus_batch, L.cos_minus_batch, L.infonce_loss]
    model = MultiViewModel.build(EncoderConfig(8, seed=7), EncoderConfig(8, seed=8))

    for _ in range(n_cases):
        b, n = int(rng.integers(1, 9)), int(rng.integers(1, 6))
        a, c = rng.standard_normal((2, b, n, 3))

        # view swap: bit-level, cosine is symmetric
        if any(f(a, c) != f(c, a) for f in sample_level):
            failures["view_swap"] += 1

        perm = rng.permutation(b)
        if any(abs(f(a, c) - f(a[perm], c[perm])) > 1e-6 for f in batch_level):
            failures["batch_order"] += 1

        fperm = rng.permutation(n)
        if any(abs(f(a, c) - f(a[:, fperm], c[:, fperm])) > 1e-6 for f in all_cos):
            failures["frame_perm"] += 1

        k = float(np.exp(rng.uniform(np.log(1e-2), np.log(1e2))))
        if any(abs(f(a, c) - f(k * a, k * c)) > 1e-6 for f in all_cos):
            failures["scale"] += 1

        x1, x2 = rng.standard_normal((2, b, 4, 8)).astype(np.float32)
        fwd = forward_batch(model, x1, x2)
        for j in range(b):
            single = [encode(model, EmbeddingMatrix(x[j], f"c{j}")) for x in (x1, x2)]
            paired = [(fwd.zp1[j], fwd.zs1[j]), (fwd.zp2[j], fwd.zs2[j])]
            if any(np.max(np.abs(s.z_p - p)) > 1e-6 or np.max(np.abs(s.z_s - q)) > 1e-6
                   for s, (p, q) in zip(single, paired)):
                failures["single_vs_pair"] += 1
                break

    ok = not any(failures.values())
    verdict(4, ok, f"{n_cases} cases per invariant, failures {failures}")
    assert ok, failures


def test_criterion_5_masking_statistics(verdict):
    rng = np.random.default_rng(505)
    x = rng.standard_normal((100, 100)) + 5.0  # keep entries away from zero
    identity = np.array_equal(L.apply_mask(x, MaskSpec("private", 0.0, 1)), x)
    zeros = not np.any(L.apply_mask(x, MaskSpec("private", 1.0, 1)))
    fractions = [float(np.mean(L.apply_mask(x, MaskSpec("private", 0.4, s)) == 0)) for s in range(5)]
    within = all(abs(f - 0.4) <= 0.02 for f in fractions)
    ok = identity and zeros and within
    verdict(5, ok, f"r=0 identity={identity}, r=1 zeros={zeros}, "
                   f"r=0.4 fractions {[round(f, 4) for f in fractions]}")
    assert ok


DETERMINISM_CFG = {
    "schema_version": 1,
    "seed": 11,
    "split": {"train_pairs": 400, "val_pairs": 100},
    "train": {"epochs": 4},
    "loss": {"cos_mode": "minus", "mask": {"target": "private", "ratio": 0.2}},
    "probe": {"epochs": 10},
}


def test_criterion_6_pipeline_determinism(tmp_path, verdict):
    cfg_path = tmp_path / "cfg.yaml"
    cfg_path.write_text(yaml.safe_dump(DETERMINISM_CFG))
    codes = []
    for run in ("a", "b"):
        out = str(tmp_path / run)
        codes.append(cli.main(["train", "--config", str(cfg_path), "--out", out]))
        codes.append(cli.main(["eval", "--config", str(cfg_path), "--out", out]))
    files = [pipeline.EVAL_REPORT, pipeline.SCATTER, pipeline.RECORD, pipeline.CHECKPOINT]
    same = {str(f): (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
            for f in files}
    ok = codes == [0, 0, 0, 0] and all(same.values())
    verdict(6, ok, f"exit codes {codes}, bit-identical {same}")
    assert ok


# -- criterion 7 ---------------------------------------------------------------

E2E_SEEDS = (0, 1, 2)
E2E_VARIANTS = {
    "rec": LossSection(),
    "rec_cos_minus_sample": LossSection(cos_mode="minus", cos_level="sample"),
    "rec_mask_zp_0.4": LossSection(mask={"target": "private", "ratio": 0.4}),
}


@pytest.mark.slow
def test_criterion_7_synthetic_end_to_end(tmp_path, verdict):
    t0 = time.perf_counter()
    results, recover = {}, []
    for seed in E2E_SEEDS:
        cfg = from_dict({"schema_version": 1, "seed": seed})
        assert cfg.synth_spec().noise_sigma == 0.1 and cfg.synth_spec().d == 32
        assert cfg.split.train_pairs == 2000 and cfg.train.epochs == 50
        recover.append(recoverability_check(generate(cfg.synth_spec())))
        base = tmp_path / f"seed{seed}"
        data = pipeline.prepare_data(cfg, base)
        for name, loss in E2E_VARIANTS.items():
            mcfg = cfg.with_member("multiview", loss)
            out = base / name
            _, record, _ = pipeline.run_train(mcfg, out, data)
            report = pipeline.run_eval(mcfg, out, data=data)
            results[seed, name] = (record, report)
    minutes = (time.perf_counter() - t0) / 60

    ratios = [results[s, "rec"][0].train_losses[-1]["rec"] / results[s, "rec"][0].train_losses[0]["rec"]
              for s in E2E_SEEDS]
    ok_a = all(r <= 0.10 for r in ratios)

    joint = [(results[s, "rec"][1].scores["sensor", "joint"], results[s, "rec"][1].scores["source", "joint"])
             for s in E2E_SEEDS]
    ok_recover = all(a >= 0.98 and j >= 0.98 for a, j in recover)
    ok_b = ok_recover and all(a >= 0.90 and j >= 0.85 for a, j in joint)

    def dsc(name):
        return [results[s, name][1].dsc_priv for s in E2E_SEEDS]

    rec_d, cos_d, mask_d = dsc("rec"), dsc("rec_cos_minus_sample"), dsc("rec_mask_zp_0.4")
    ok_c = float(np.mean(cos_d)) > 0
    ok_d = float(np.mean(mask_d)) < float(np.mean(rec_d))
    ok_time = minutes < 20

    fmt = lambda xs: "[" + ", ".join(f"{x:.3f}" for x in xs) + "]"
    print(f"  7a rec loss final/epoch1 per seed {fmt(ratios)}")
    print(f"  7b recoverability {recover}; joint (sensor, source) {joint}")
    print(f"  7c DSC_priv rec+cos- sample {fmt(cos_d)} mean {np.mean(cos_d):.4f}")
    print(f"  7d DSC_priv mask z_p r=0.4 {fmt(mask_d)} mean {np.mean(mask_d):.4f} "
          f"vs rec-only {fmt(rec_d)} mean {np.mean(rec_d):.4f}")
    ok = ok_a and ok_b and ok_c and ok_d and ok_time
    verdict(7, ok, f"a={ok_a} b={ok_b} c={ok_c} d={ok_d}, {minutes:.1f} min")
    assert ok


# -- criterion 8 ---------------------------------------------------------------

REPORT_CFG = {
    "schema_version": 1,
    "seed": 21,
    "dataset": {"synthetic": {"n_sensors": 8, "clips_per_sensor": 30, "d": 16, "n_frames": 4}},
    "split": {"ratios": [4, 1, 3], "train_pairs": 128, "val_pairs": 32},
    "train": {"epochs": 2},
    "probe": {"epochs": 5},
    "suite": {"variants": [
        {"name": "rec"},
        {"name": "rec_cos_plus_sample", "loss": {"cos_mode": "plus", "cos_level": "sample"}},
        {"name": "rec_cos_plus_batch", "loss": {"cos_mode": "plus", "cos_level": "batch"}},
        {"name": "rec_cos_minus_sample", "loss": {"cos_mode": "minus", "cos_level": "sample"}},
        {"name": "rec_cos_minus_batch", "loss": {"cos_mode": "minus", "cos_level": "batch"}},
    ] + [{"name": f"rec_mask_zp_{r}", "loss": {"mask": {"target": "private", "ratio": r}}}
         for r in (0.2, 0.4, 0.6, 0.8)]},
}


def test_criterion_8_report_formats(tmp_path, verdict):
    cfg_path = tmp_path / "cfg.yaml"
    cfg_path.write_text(yaml.safe_dump(REPORT_CFG))
    code = cli.main(["suite", "--config", str(cfg_path), "--out", str(tmp_path / "s")])
    reports = tmp_path / "s" / "reports"
    with open(reports / "comparison.csv") as fh:
        reader = csv.DictReader(fh)
        columns, table = reader.fieldnames, list(reader)
    with open(reports / "scatter.csv") as fh:
        reader = csv.DictReader(fh)
        scatter_cols, scatter = reader.fieldnames, list(reader)
    summary = json.loads((reports / "comparison.json").read_text())

    expected_rows = [v["name"] for v in REPORT_CFG["suite"]["variants"]] + [
        "pretrained", "singleview_ae", "contrastive", "supervised_source", "supervised_sensor"]
    ok_cols = columns == ["method", "objective", "source", "sensor", "avg"]
    ok_rows = [r["method"] for r in table] == expected_rows
    avg_err = max(abs(float(r["avg"]) - (float(r["source"]) + float(r["sensor"])) / 2) for r in table)
    ok_scatter = (scatter_cols == ["strategy", "task", "overall", "dsc_delta"]
                  and len(scatter) == 2 * len(table)
                  and {r["task"] for r in scatter} == {"source", "sensor"})
    ok_ref = {"source", "sensor"} <= set(summary["reference"])
    ok = code == 0 and ok_cols and ok_rows and avg_err <= 1e-9 and ok_scatter and ok_ref
    verdict(8, ok, f"{len(table)} rows, columns {columns}, scatter columns {scatter_cols}, "
                   f"max avg error {avg_err:.1e}")
    assert ok
