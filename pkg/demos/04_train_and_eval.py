"""
Short training run through the command line
===========================================

Synthesize a dataset, train both branches briefly, then evaluate the
transformer branch alone. Pass a larger --max-steps via the config for
meaningful accuracy; the default here finishes in about a minute on a CPU.
"""
import json
import sys
from pathlib import Path

from crossdepth.cli import main

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 200
root = Path("demo_out/train")
data, run = root / "data", root / "run"

assert main(["synth-data", "--out", str(data), "--train", "16", "--val", "8", "--seed", "0"]) == 0

config = root / "config.json"
config.write_text(json.dumps({"max_steps": steps, "val_every": 10, "seed": 0}))
assert main(["train", "--config", str(config), "--data", str(data), "--out", str(run)]) == 0

assert main(["eval", "--checkpoint", str(run / "best.ckpt"), "--data", str(data),
             "--split", "val", "--report", str(root / "val_report.json")]) == 0
report = json.loads((root / "val_report.json").read_text())
print("val abs_rel %.4f  delta1 %.4f" % (report["abs_rel"], report["delta1"]))
