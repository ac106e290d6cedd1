"""Command-line entry points: gen-data, pretrain, embed, train-head, finetune, eval.

Every command is a pure function of its inputs and seeds; rerunning with the
same arguments produces byte-identical outputs.  Errors exit nonzero with a
single machine-readable JSON line on stderr.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import chansim, fileio, pipeline
from .encoder import EncoderConfig, FoundationModel, pretrain, represent_matrix
from .fileio import RunConfig, float_list, int_list, shape_of, str_list
from .heads import HeadConfig, build_head
from .optim import Adam
from .tokenizer import PatchSpec


class CliError(ValueError):
    pass


def _config(args) -> RunConfig:
    if args.config:
        return RunConfig.from_file(args.config)
    return RunConfig.from_text("")


def _encoder_config(cfg: RunConfig) -> EncoderConfig:
    d = cfg.get("encoder", "d_model", 128)
    patch = shape_of(cfg.get("encoder", "patch", "4x16x1"))
    return EncoderConfig(
        d_model=d,
        n_layers=cfg.get("encoder", "layers", 3),
        n_heads=cfg.get("encoder", "heads", 4),
        d_ff=cfg.get("encoder", "ff", 4 * d),
        patch=PatchSpec(*patch, d),
        mask_ratio=cfg.get("encoder", "mask_ratio", 0.4),
        dropout=cfg.get("encoder", "dropout", 0.0),
    )


def _sim_config(cfg: RunConfig, task: str) -> chansim.ChannelConfig:
    base = {
        "estimation": chansim.estimation_config(),
        "prediction": chansim.prediction_config(velocity_mps=cfg.get(
            "simulator", "velocity_kmh", 60.0) / 3.6),
        "reconstruction": chansim.reconstruction_config(),
    }[task]
    overrides = {}
    if cfg.get("simulator", "subcarriers") is not None:
        overrides["n_subcarriers"] = cfg.get("simulator", "subcarriers")
    if cfg.get("simulator", "slots") is not None and task != "prediction":
        overrides["n_slots"] = cfg.get("simulator", "slots")
    if cfg.get("simulator", "carrier_hz") is not None:
        overrides["carrier_hz"] = cfg.get("simulator", "carrier_hz")
    if cfg.get("simulator", "scs_hz") is not None:
        overrides["scs_hz"] = cfg.get("simulator", "scs_hz")
    if cfg.get("simulator", "tx") is not None or cfg.get("simulator", "rx") is not None:
        arr = base.array
        tx = shape_of(cfg.get("simulator", "tx")) if cfg.get("simulator", "tx") else arr.tx_shape
        rx = shape_of(cfg.get("simulator", "rx")) if cfg.get("simulator", "rx") else arr.rx_shape
        overrides["array"] = chansim.ArrayGeometry(
            tx, rx, arr.spacing_wl, cfg.get("simulator", "dual_pol", arr.dual_pol))
    return replace(base, **overrides)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    cfg = _config(args)
    task = args.task or cfg.get("simulator", "task", "estimation")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    count = cfg.get("simulator", "count", 64)
    meta = {"task": task, "seed": args.seed, "config_hash": cfg.hash()}

    if task == "estimation":
        sim = _sim_config(cfg, task)
        snr = cfg.get("simulator", "snr_db", 10.0)
        pilot_len = cfg.get("simulator", "pilot_len", 64)
        pairs = chansim.make_estimation_samples(args.seed, count, snr, sim,
                                                pilot_len=pilot_len)
        truth = np.stack([p[1].values for p in pairs])
        ls = np.stack([p[0].values for p in pairs])
        meta.update({"snr_db": snr, "pilot_len": pilot_len})
        fileio.save_dataset(out, truth, meta)
        fileio.save_dataset(_sibling(out, "_ls"), ls, meta)
    elif task == "prediction":
        sim = _sim_config(cfg, task)
        pairs = chansim.generate_prediction_sequences(args.seed, count, sim)
        hist = np.stack([p[0].values for p in pairs])
        fut = np.stack([p[1].values for p in pairs])
        meta.update({"velocity_kmh": sim.velocity_mps * 3.6})
        fileio.save_dataset(out, hist, meta)
        fileio.save_dataset(_sibling(out, "_future"), fut, meta)
    elif task == "har":
        per_class = cfg.get("simulator", "per_class", 4)
        samples = chansim.generate_activity_dataset(args.seed, per_class)
        amps = np.stack([s.amplitude for s in samples]).astype(np.float32)
        meta["labels"] = ",".join(str(s.label) for s in samples)
        fileio.save_dataset(out, amps, meta)
    elif task == "reconstruction":
        sim = _sim_config(cfg, task)
        scatterers = cfg.get("simulator", "scatterers", 250)
        pairs = chansim.make_reconstruction_samples(args.seed, count, scatterers, sim)
        channels = np.stack([p[0].values for p in pairs])
        clouds = np.stack([p[1] for p in pairs]).astype(np.float32)[..., None]
        meta["scatterers"] = scatterers
        fileio.save_dataset(out, channels, meta)
        fileio.save_dataset(_sibling(out, "_clouds"), clouds,
                            {**meta, "layout": "points-xyz-1"})
    else:
        raise CliError(f"unknown task {task!r}")
    print(f"wrote {out}")
    return 0


def _sibling(path: Path, suffix: str) -> Path:
    return path.with_name(path.stem + suffix + path.suffix)


def _load_channel_values(path) -> np.ndarray:
    samples, _ = fileio.load_dataset(path)
    return samples


def cmd_pretrain(args) -> int:
    cfg = _config(args)
    enc = _encoder_config(cfg)
    values = _load_channel_values(args.data).astype(np.complex128)
    lo = cfg.get("pretrain", "noise_snr_lo")
    hi = cfg.get("pretrain", "noise_snr_hi")
    if lo is not None and hi is not None:
        rng = np.random.default_rng(args.seed ^ 0x1234)
        noisy = []
        for i, v in enumerate(values):
            ct = chansim.ChannelTensor(v, _loose_meta(v))
            noisy.append(chansim.add_noise_at_snr(ct, rng.uniform(lo, hi),
                                                  seed=args.seed + 31 * i).values)
        values = np.stack(noisy)
    model = FoundationModel(enc, seed=args.seed)
    result = pretrain(
        model, values,
        epochs=cfg.get("pretrain", "epochs", 8),
        opt=Adam(lr=cfg.get("pretrain", "lr", 1e-3)),
        seed=args.seed,
        batch_size=cfg.get("pretrain", "batch", 16),
    )
    records = model.to_records()
    records["meta/config_hash"] = _text_record(cfg.hash())
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    fileio.save_checkpoint(args.out, records)
    print(f"wrote {args.out} after {result.steps} steps; "
          f"loss {result.loss_trace[0]:.4f} -> {result.loss_trace[-1]:.4f}")
    return 0


def _loose_meta(values: np.ndarray) -> chansim.ChannelConfig:
    """Metadata wrapper for external tensors of unknown geometry."""
    return chansim.ChannelConfig(
        n_slots=values.shape[0], n_subcarriers=values.shape[2],
        array=chansim.ArrayGeometry(tx_shape=(values.shape[1],), rx_shape=(1,)))


def _text_record(text: str) -> np.ndarray:
    return np.frombuffer(text.encode("utf-8"), dtype=np.uint8).astype(np.float32)


def cmd_embed(args) -> int:
    records = fileio.load_checkpoint(args.ckpt)
    model = FoundationModel.from_records(records)
    samples, meta = fileio.load_dataset(args.data)
    values = samples.astype(np.complex128)
    if meta.get("task") == "har":
        # amplitude tensors [links, subcarriers, time] -> (T, S, F)
        values = np.transpose(samples.astype(np.float32), (0, 3, 1, 2)).astype(np.complex128)
    out_records = {}
    for i in range(0, len(values), 32):
        reps = represent_matrix(model, values[i:i + 32])
        for j, rep in enumerate(reps):
            out_records[f"rep/{i + j:06d}"] = rep.astype(np.float32)
    out_records["meta/checkpoint_id"] = _text_record(model.fingerprint())
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    fileio.save_checkpoint(args.out, out_records)
    n, shape = len(values), next(iter(out_records.values())).shape
    print(f"wrote {args.out}: {n} representations shaped {shape[0]}x{shape[1]}")
    return 0


def _task_data(args, cfg: RunConfig, task: str):
    """Load (train, test) sample lists from generated dataset files."""
    if task == "estimation":
        truth, meta = fileio.load_dataset(args.data)
        ls, _ = fileio.load_dataset(_sibling(Path(args.data), "_ls"))
        sim = _sim_config(cfg, task)
        pairs = [(chansim.ChannelTensor(l.astype(np.complex128), sim),
                  chansim.ChannelTensor(t.astype(np.complex128), sim))
                 for l, t in zip(ls, truth)]
    elif task == "prediction":
        hist, meta = fileio.load_dataset(args.data)
        fut, _ = fileio.load_dataset(_sibling(Path(args.data), "_future"))
        sim = _sim_config(cfg, task)
        pairs = [(chansim.ChannelTensor(h.astype(np.complex128), replace(sim, n_slots=h.shape[0])),
                  chansim.ChannelTensor(f.astype(np.complex128), replace(sim, n_slots=f.shape[0])))
                 for h, f in zip(hist, fut)]
    elif task == "har":
        amps, meta = fileio.load_dataset(args.data)
        labels = [int(x) for x in meta["labels"].split(",")]
        pairs = [chansim.ActivitySample(a.astype(np.float64), l)
                 for a, l in zip(amps, labels)]
    elif task == "reconstruction":
        channels, meta = fileio.load_dataset(args.data)
        clouds, _ = fileio.load_dataset(_sibling(Path(args.data), "_clouds"))
        sim = _sim_config(cfg, task)
        pairs = [(chansim.ChannelTensor(c.astype(np.complex128), sim),
                  cl[..., 0].astype(np.float64))
                 for c, cl in zip(channels, clouds)]
    else:
        raise CliError(f"unknown task {task!r}")
    n_test = max(1, len(pairs) // 4)
    return pairs[:-n_test], pairs[-n_test:]


def _head_config(cfg: RunConfig, task: str, mode: str, train_samples,
                 enc: EncoderConfig | None) -> HeadConfig:
    width = cfg.get("task", "width", 64)
    blocks = cfg.get("task", "blocks", 2)
    heads = cfg.get("task", "heads", 4)
    ff = cfg.get("task", "ff", 2 * width)
    kind = cfg.get("task", "head", {"estimation": "rescnn1d", "prediction": "lstm",
                                    "har": "rescnn2d", "reconstruction": "pointcloud-decoder"}[task])
    if task == "estimation":
        shape = train_samples[0][0].values.shape
        if mode == "raw":
            in_ch, in_len = 2 * shape[0] * shape[1], shape[2]
        else:
            in_ch, in_len = enc.d_model, enc.patch.num_tokens(shape)
        return HeadConfig(kind, width=width, blocks=blocks, heads=heads, ff=ff,
                          out_shape=shape, in_channels=in_ch, in_length=in_len)
    if task == "prediction":
        shape = train_samples[0][0].values.shape
        fut = train_samples[0][1].values.shape[0]
        if mode == "raw":
            feat, steps = shape[1] * shape[2] * 2, shape[0]
        else:
            feat, steps = enc.d_model, math.ceil(shape[0] / enc.patch.t)
        return HeadConfig(kind, width=width, blocks=blocks, heads=heads, ff=ff,
                          out_shape=(fut, shape[1], shape[2]),
                          in_features=feat, steps=steps)
    if task == "har":
        if mode == "raw":
            in_ch = train_samples[0].amplitude.shape[0]
            in_len = train_samples[0].amplitude.shape[1]
        else:
            in_ch, in_len = 1, 72
        return HeadConfig(kind, width=width, blocks=blocks, out_shape=(6,),
                          in_channels=in_ch, in_length=in_len)
    # reconstruction
    n_points = len(train_samples[0][1])
    return HeadConfig(kind, width=width, blocks=blocks, out_shape=(n_points,),
                      in_features=enc.d_model)


def cmd_train_head(args) -> int:
    cfg = _config(args)
    task = args.task or cfg.get("task", "kind", "estimation")
    mode = args.input or cfg.get("task", "input", "raw")
    foundation = None
    if mode == "rep" or task == "reconstruction":
        if not args.ckpt:
            raise CliError("representation mode requires --ckpt")
        foundation = FoundationModel.from_records(fileio.load_checkpoint(args.ckpt))
    data = _task_data(args, cfg, task)
    head_cfg = _head_config(cfg, task, mode, data[0],
                            foundation.config if foundation else None)
    spec = pipeline.TaskSpec(task, mode, head_cfg,
                             lr=cfg.get("task", "lr", 0.0),
                             batch=cfg.get("task", "batch", 0),
                             steps=cfg.get("task", "steps", 200))
    head, report = pipeline.train_head(spec, data, seed=args.seed,
                                       foundation=foundation, config_hash=cfg.hash())
    records = head.to_records()
    records["meta/config_hash"] = _text_record(cfg.hash())
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    fileio.save_checkpoint(args.out, records)
    if args.report:
        rows = [{**{c: "" for c in pipeline.CSV_COLUMNS},
                 "task": task, "input_mode": mode, "head": head_cfg.kind,
                 "seed": args.seed, "metric_name": next(iter(report.metrics)),
                 "metric_value": next(iter(report.metrics.values())),
                 "params": report.params,
                 "train_ms_per_batch": report.train_ms_per_batch,
                 "infer_ms_per_batch": report.infer_ms_per_batch}]
        Path(args.report).write_text(pipeline.rows_to_csv(rows, cfg.hash()))
    print(f"wrote {args.out}; metrics={report.metrics}")
    return 0


def cmd_finetune(args) -> int:
    cfg = _config(args)
    task = args.task or cfg.get("task", "kind", "estimation")
    if task == "har":
        raise CliError("fine-tuning applies to regression losses only; "
                       "the classification task refuses it")
    if not args.ckpt or not args.head:
        raise CliError("fine-tuning requires --ckpt and --head")
    foundation = FoundationModel.from_records(fileio.load_checkpoint(args.ckpt))
    data = _task_data(args, cfg, task)
    head_cfg = _head_config(cfg, task, "rep", data[0], foundation.config)
    spec = pipeline.TaskSpec(task, "rep", head_cfg,
                             lr=cfg.get("task", "lr", 0.0),
                             batch=cfg.get("task", "batch", 0),
                             steps=cfg.get("task", "steps", 200),
                             finetune_enabled=True)
    head = build_head(head_cfg, seed=args.seed)
    head.load_records(fileio.load_checkpoint(args.head))
    foundation, head, history = pipeline.finetune(
        spec, foundation, head, data, seed=args.seed,
        rounds=cfg.get("task", "finetune_rounds", 1),
        steps_per_round=cfg.get("task", "finetune_steps", 20))
    enc_rec = foundation.to_records()
    enc_rec["meta/config_hash"] = _text_record(cfg.hash())
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    fileio.save_checkpoint(args.out, enc_rec)
    head_rec = head.to_records()
    head_rec["meta/config_hash"] = _text_record(cfg.hash())
    fileio.save_checkpoint(_sibling(Path(args.out), "_head"), head_rec)
    print(f"wrote {args.out}; validation trace {['%.5f' % h for h in history]}")
    return 0


def cmd_eval(args) -> int:
    cfg = _config(args)
    enc = _encoder_config(cfg)
    plan = pipeline.ExperimentPlan(
        tasks=tuple(str_list(cfg.get("eval", "tasks", "estimation"))),
        input_modes=tuple(str_list(cfg.get("eval", "modes", "raw,rep"))),
        snr_grid=tuple(float_list(cfg.get("eval", "snr_grid", "-5,0,5,10"))),
        velocity_grid_kmh=tuple(float_list(cfg.get("eval", "velocity_grid", "40,90"))),
        seeds=tuple(int_list(cfg.get("eval", "seeds", str(args.seed)))),
        train_count=cfg.get("eval", "train_count", 96),
        test_count=cfg.get("eval", "test_count", 32),
        pretrain_count=cfg.get("eval", "pretrain_count", 128),
        pretrain_epochs=cfg.get("eval", "pretrain_epochs", 16),
        head_steps=cfg.get("eval", "head_steps", 120),
        head_batch=cfg.get("eval", "head_batch", 32),
        head_lr=cfg.get("eval", "head_lr", 3e-3),
        head_width=cfg.get("eval", "head_width", 48),
        head_blocks=cfg.get("eval", "head_blocks", 2),
        encoder=enc,
        measure_timing=cfg.get("eval", "timing", False),
    )
    _, rows = pipeline.run_experiment(plan)
    csv_text = pipeline.rows_to_csv(rows, cfg.hash())
    report = Path(args.report or "report.csv")
    report.parent.mkdir(parents=True, exist_ok=True)
    report.write_text(csv_text)
    print(f"wrote {report} with {len(rows)} rows")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="chanfm",
        description="Masked-reconstruction channel foundation model toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, data=False, ckpt=False, out=True):
        p.add_argument("--config", default=None, help="run configuration file")
        p.add_argument("--seed", type=int, default=0)
        if data:
            p.add_argument("--data", required=True, help="dataset file (WGCT)")
        if ckpt:
            p.add_argument("--ckpt", default=None, help="foundation checkpoint (WGCK)")
        if out:
            p.add_argument("--out", required=True, help="output path")

    p = sub.add_parser("gen-data", help="generate a synthetic task dataset")
    common(p)
    p.add_argument("--task", default=None,
                   choices=["estimation", "prediction", "har", "reconstruction"])
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("pretrain", help="pretrain the foundation encoder")
    common(p, data=True)
    p.set_defaults(fn=cmd_pretrain)

    p = sub.add_parser("embed", help="emit universal representations for a dataset")
    common(p, data=True, ckpt=True)
    p.set_defaults(fn=cmd_embed)

    p = sub.add_parser("train-head", help="train a downstream head")
    common(p, data=True, ckpt=True)
    p.add_argument("--task", default=None,
                   choices=["estimation", "prediction", "har", "reconstruction"])
    p.add_argument("--input", default=None, choices=["raw", "rep"])
    p.add_argument("--report", default=None, help="CSV metrics path")
    p.set_defaults(fn=cmd_train_head)

    p = sub.add_parser("finetune", help="jointly adapt encoder and head (regression only)")
    common(p, data=True, ckpt=True)
    p.add_argument("--task", default=None,
                   choices=["estimation", "prediction", "har", "reconstruction"])
    p.add_argument("--head", default=None, help="trained head checkpoint")
    p.set_defaults(fn=cmd_finetune)

    p = sub.add_parser("eval", help="run a sweep and write the metrics CSV")
    common(p, out=False)
    p.add_argument("--report", default=None, help="CSV output path")
    p.set_defaults(fn=cmd_eval)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (CliError, fileio.FileFormatError, fileio.ConfigError,
            pipeline.TaskError, chansim.SimulationError, ValueError, OSError) as e:
        kind = type(e).__name__
        print(json.dumps({"error": kind, "message": str(e)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
