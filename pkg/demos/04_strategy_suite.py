"""
Comparing strategies with the CLI
=================================

A suite trains every configured variant plus the baselines on the same
splits and writes a comparison table and a scatter file of overall score
against DSC delta.
"""

import subprocess
import sys
import tempfile
from pathlib import Path

import yaml

config = {
    "schema_version": 1,
    "seed": 0,
    "dataset": {"synthetic": {"clips_per_sensor": 60}},
    "split": {"train_pairs": 500, "val_pairs": 100},
    "train": {"epochs": 10},
    "probe": {"epochs": 20},
    "suite": {"variants": [
        {"name": "rec"},
        {"name": "rec_cos_minus", "loss": {"cos_mode": "minus"}},
        {"name": "rec_mask_zp_0.4", "loss": {"mask": {"target": "private", "ratio": 0.4}}},
    ]},
}

out = Path(tempfile.mkdtemp(prefix="mvlatent_suite_"))
cfg_path = out / "suite.yaml"
cfg_path.write_text(yaml.safe_dump(config))

cmd = [sys.executable, "-m", "mvlatent", "suite", "--config", str(cfg_path),
       "--out", str(out / "run"), "--parallel", "2"]
print("$", " ".join(cmd))
subprocess.run(cmd, check=True)

print((out / "run/reports/comparison.md").read_text())
print((out / "run/reports/scatter.csv").read_text())
