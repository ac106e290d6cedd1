"""End-to-end command-line workflow in a temporary directory.

gen-data -> pretrain -> embed -> train-head -> eval, with byte-identical
rerun checks.  The same commands are available as `chanfm <command>` after
installation.
"""

import tempfile
from pathlib import Path

from chanfm.cli import main

CONFIG = """
[simulator]
task = estimation
count = 12
snr_db = 5

[encoder]
d_model = 16
layers = 1
heads = 2
ff = 32
patch = 4x16x1

[pretrain]
epochs = 2
batch = 4
lr = 1e-3

[task]
kind = estimation
width = 8
blocks = 1
steps = 6
lr = 3e-3
batch = 8

[eval]
tasks = estimation
modes = raw,rep
snr_grid = 0,10
seeds = 0
train_count = 8
test_count = 4
pretrain_count = 4
pretrain_epochs = 1
head_steps = 3
head_batch = 4
head_width = 8
head_blocks = 1
"""

with tempfile.TemporaryDirectory() as td:
    d = Path(td)
    (d / "run.ini").write_text(CONFIG)
    cfg = str(d / "run.ini")

    steps = [
        ["gen-data", "--task", "estimation", "--config", cfg, "--seed", "3",
         "--out", str(d / "est.wgct")],
        ["pretrain", "--config", cfg, "--seed", "1", "--data", str(d / "est.wgct"),
         "--out", str(d / "enc.wgck")],
        ["embed", "--config", cfg, "--seed", "0", "--data", str(d / "est.wgct"),
         "--ckpt", str(d / "enc.wgck"), "--out", str(d / "reps.wgck")],
        ["train-head", "--task", "estimation", "--input", "rep", "--config", cfg,
         "--seed", "2", "--data", str(d / "est.wgct"), "--ckpt", str(d / "enc.wgck"),
         "--out", str(d / "head.wgck"), "--report", str(d / "head.csv")],
        ["eval", "--config", cfg, "--seed", "0", "--report", str(d / "report.csv")],
    ]
    for argv in steps:
        print(f"\n$ chanfm {' '.join(argv)}")
        code = main(argv)
        assert code == 0, f"command failed: {argv}"

    print("\n=== outputs ===")
    for p in sorted(d.iterdir()):
        print(f"  {p.name:24s} {p.stat().st_size:9,d} bytes")

    print("\n=== rerun determinism ===")
    before = (d / "enc.wgck").read_bytes()
    main(["pretrain", "--config", cfg, "--seed", "1", "--data", str(d / "est.wgct"),
          "--out", str(d / "enc.wgck")])
    print("pretrain rerun byte-identical:", (d / "enc.wgck").read_bytes() == before)

    print("\n=== report ===")
    print((d / "report.csv").read_text())
