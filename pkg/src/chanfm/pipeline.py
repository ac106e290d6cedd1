"""Task training/evaluation loops, fine-tuning, timing, and experiment sweeps.

The utilization flow is: pretrain an encoder, emit universal representations
for task data, train a small head on either raw inputs or representations,
and optionally fine-tune encoder and head jointly.  Fine-tuning exists only
for regression-loss tasks (NMSE or chamfer); classification refuses it.
"""

from __future__ import annotations

import hashlib
import math
import os
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import chansim
from .autodiff import ContractError, Node, Tape
from .chansim import ChannelTensor
from .encoder import EncoderConfig, FoundationModel, pilot_default, pretrain, represent_matrix
from .heads import (
    HeadConfig,
    build_head,
    estimation_raw_input,
    estimation_rep_input,
    har_rep_image,
    prediction_raw_steps,
    prediction_rep_steps,
)
from .metrics import accuracy, chamfer_distance, nmse
from .optim import Adam, count_parameters
from .tokenizer import patch_positions

TASKS = ("estimation", "prediction", "har", "reconstruction")
LOSSES = {"estimation": "nmse", "prediction": "nmse", "har": "cross_entropy",
          "reconstruction": "chamfer"}
# reference training hyperparameters per task: (learning rate, batch size)
TABLE_HYPERS = {"estimation": (1e-4, 512), "prediction": (1e-4, 512), "har": (1e-3, 16),
                "reconstruction": (1e-3, 16)}


class TaskError(ValueError):
    pass


@dataclass(frozen=True)
class TaskSpec:
    task: str
    input_mode: str            # raw | rep
    head: HeadConfig
    loss_kind: str = ""
    lr: float = 0.0            # 0 -> task default
    batch: int = 0
    steps: int = 200
    finetune_enabled: bool = False

    def __post_init__(self):
        if self.task not in TASKS:
            raise TaskError(f"unknown task {self.task!r}")
        if self.input_mode not in ("raw", "rep"):
            raise TaskError(f"input mode must be raw or rep, got {self.input_mode!r}")
        loss = self.loss_kind or LOSSES[self.task]
        if loss != LOSSES[self.task]:
            raise TaskError(f"{self.task} uses {LOSSES[self.task]} loss, not {loss}")
        object.__setattr__(self, "loss_kind", loss)
        if self.finetune_enabled and loss == "cross_entropy":
            raise TaskError("fine-tuning applies to regression losses only")
        lr, batch = TABLE_HYPERS[self.task]
        if self.lr == 0.0:
            object.__setattr__(self, "lr", lr)
        if self.batch == 0:
            object.__setattr__(self, "batch", batch)
        if self.task == "reconstruction" and self.input_mode != "rep":
            raise TaskError("the point-cloud decoder consumes representations only")


@dataclass
class TimingStats:
    median_ms: float
    iqr_ms: float
    samples: int


@dataclass
class EvalReport:
    task: str
    input_mode: str
    head_kind: str
    metrics: dict
    conditions: dict = field(default_factory=dict)
    params: int = 0
    train_ms_per_batch: float | None = None
    infer_ms_per_batch: float | None = None
    seeds: dict = field(default_factory=dict)
    config_hash: str = ""

    def __post_init__(self):
        for k, v in self.metrics.items():
            if not math.isfinite(v):
                raise TaskError(f"non-finite metric {k}={v}")


def timing_probe(fn, warmup: int = 3, iters: int = 10) -> TimingStats:
    """Median and interquartile range of fn()'s wall time, after warmup."""
    if iters < 1:
        raise TaskError("iters must be >= 1")
    for _ in range(warmup):
        fn()
    times = []
    for _ in range(iters):
        t0 = time.perf_counter()
        fn()
        times.append((time.perf_counter() - t0) * 1e3)
    q25, q50, q75 = np.percentile(times, [25, 50, 75])
    return TimingStats(float(q50), float(q75 - q25), iters)


# ---------------------------------------------------------------------------
# Input/target assembly per task
# ---------------------------------------------------------------------------


def _rep_batch(foundation: FoundationModel, values: np.ndarray, chunk: int = 64) -> np.ndarray:
    reps = [represent_matrix(foundation, values[i:i + chunk])
            for i in range(0, len(values), chunk)]
    return np.concatenate(reps)




def _pair(values: np.ndarray) -> np.ndarray:
    return np.stack([values.real, values.imag], axis=-1).astype(np.float32)


class FeatureScaler:
    """Per-feature affine standardization fit on the training inputs.

    Positional-encoding offsets are deliberately retained: they tell
    weight-sharing heads which token position they are looking at.  Only the
    global per-feature location/scale is normalized so small heads optimize
    well on unnormalized encoder outputs.
    """

    def __init__(self):
        self.mean = None
        self.std = None

    def fit(self, x: np.ndarray) -> np.ndarray:
        flat = x.reshape(-1, x.shape[-1])
        self.mean = flat.mean(axis=0).astype(np.float32)
        self.std = np.maximum(flat.std(axis=0), 1e-6).astype(np.float32)
        return self(x)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return ((x - self.mean) / self.std).astype(np.float32)


def assemble_task_arrays(spec: TaskSpec, samples, foundation: FoundationModel | None,
                         scaler: FeatureScaler | None = None):
    """(inputs, targets) arrays for a sample list of one task.

    In representation mode a `scaler` standardizes features; pass a freshly
    constructed one for training data (it fits) and the same instance for
    evaluation data (it reuses the training statistics).
    """
    if spec.input_mode == "rep" and foundation is None:
        raise TaskError("representation mode requires a foundation checkpoint")

    def maybe_scale(rep):
        if scaler is None:
            return rep
        return scaler(rep) if scaler.mean is not None else scaler.fit(rep)

    if spec.task == "estimation":
        ls = np.stack([s[0].values for s in samples])
        truth = np.stack([s[1].values for s in samples])
        if spec.input_mode == "raw":
            x = estimation_raw_input(ls)
        else:
            x = estimation_rep_input(maybe_scale(_rep_batch(foundation, ls)))
        return x, _pair(truth)
    if spec.task == "prediction":
        hist = np.stack([s[0].values for s in samples])
        fut = np.stack([s[1].values for s in samples])
        if spec.input_mode == "raw":
            x = prediction_raw_steps(hist)
        else:
            reps = maybe_scale(_rep_batch(foundation, hist))
            t_index = patch_positions(hist.shape[-3:], foundation.config.patch)[:, 0]
            x = prediction_rep_steps(reps, t_index)
        return x, _pair(fut)
    if spec.task == "har":
        labels = np.array([s.label for s in samples], dtype=np.int64)
        amps = np.stack([s.amplitude for s in samples])
        if spec.input_mode == "raw":
            return amps.astype(np.float32), labels
        tsf = np.transpose(amps, (0, 3, 1, 2)).astype(complex)
        return har_rep_image(maybe_scale(_rep_batch(foundation, tsf))), labels
    # reconstruction
    cts = np.stack([s[0].values for s in samples])
    clouds = [np.asarray(s[1], dtype=np.float64) for s in samples]
    return maybe_scale(_rep_batch(foundation, cts)), clouds


def _loss_node(spec: TaskSpec, tape: Tape, pred: Node, targets) -> Node:
    if spec.loss_kind == "nmse":
        t = np.asarray(targets, dtype=np.float32)
        b = len(t)
        diff = tape.subtract(pred, tape.constant(t))
        sq = tape.multiply(diff, diff)
        per = tape.reduce_sum(tape.reshape(sq, (b, -1)), axis=1)
        w = 1.0 / np.maximum((t.reshape(b, -1) ** 2).sum(axis=1), 1e-30)
        return tape.scale(tape.reduce_sum(tape.multiply(per, tape.constant(w))), 1.0 / b)
    if spec.loss_kind == "cross_entropy":
        return tape.cross_entropy(pred, targets)
    # chamfer over the batch
    b = pred.shape[0]
    total = None
    for i in range(b):
        one = tape.chamfer(tape.reshape(tape.slice(pred, (i,)), pred.shape[1:]), targets[i])
        total = one if total is None else tape.add(total, one)
    return tape.scale(total, 1.0 / b)


def evaluate_head(spec: TaskSpec, head, inputs, targets) -> float:
    tape = Tape(head.dtype)
    pred = head.forward(tape, tape.constant(inputs))
    if spec.loss_kind == "nmse":
        est = pred.value[..., 0] + 1j * pred.value[..., 1]
        truth = np.asarray(targets)[..., 0] + 1j * np.asarray(targets)[..., 1]
        return nmse(est, truth, batch_axis=0)
    if spec.loss_kind == "cross_entropy":
        return accuracy(pred.value, targets)
    return float(np.mean([chamfer_distance(pred.value[i], targets[i])
                          for i in range(len(targets))]))


def _metric_name(spec: TaskSpec) -> str:
    return {"nmse": "nmse", "cross_entropy": "accuracy", "chamfer": "chamfer"}[spec.loss_kind]


def train_head(spec: TaskSpec, data, seed: int, foundation: FoundationModel | None = None,
               measure_timing: bool = False, config_hash: str = ""):
    """Train one head on (train, test) sample lists; returns (head, EvalReport).

    Representations are computed once up front and reused for every batch.
    """
    train_samples, test_samples = data
    if len(train_samples) == 0 or len(test_samples) == 0:
        raise TaskError("empty split")
    scaler = FeatureScaler() if spec.input_mode == "rep" else None
    x_train, y_train = assemble_task_arrays(spec, train_samples, foundation, scaler)
    x_test, y_test = assemble_task_arrays(spec, test_samples, foundation, scaler)

    head = build_head(spec.head, seed=seed)
    opt = Adam(lr=spec.lr)
    rng = np.random.default_rng([seed, 77])
    n = len(x_train)
    batch = min(spec.batch, n)

    def one_step(idx):
        tape = Tape(head.dtype)
        pred = head.forward(tape, tape.constant(x_train[idx]))
        tgt = [y_train[i] for i in idx] if isinstance(y_train, list) else y_train[idx]
        loss = _loss_node(spec, tape, pred, tgt)
        grads = tape.backward(loss)
        head.params = opt.step(head.params, grads)
        return float(loss.value)

    for _ in range(spec.steps):
        one_step(rng.choice(n, size=batch, replace=False))

    metric = evaluate_head(spec, head, x_test, y_test)
    train_ms = infer_ms = None
    if measure_timing:
        fixed = np.arange(min(batch, n))
        train_ms = timing_probe(lambda: one_step(fixed)).median_ms

        def infer_once():
            tape = Tape(head.dtype)
            head.forward(tape, tape.constant(x_test[:batch]))

        infer_ms = timing_probe(infer_once).median_ms
    report = EvalReport(
        task=spec.task, input_mode=spec.input_mode, head_kind=spec.head.kind,
        metrics={_metric_name(spec): metric}, params=count_parameters(head),
        train_ms_per_batch=train_ms, infer_ms_per_batch=infer_ms,
        seeds={"train": seed}, config_hash=config_hash,
    )
    return head, report


# ---------------------------------------------------------------------------
# Fine-tuning (regression tasks only)
# ---------------------------------------------------------------------------


def _joint_forward(spec: TaskSpec, tape: Tape, foundation: FoundationModel, head,
                   raw_values: np.ndarray):
    """Encoder and head on one tape, so gradients reach both parameter sets."""
    from .tokenizer import partition_patches, positional_terms

    cfg = foundation.config
    raw = partition_patches(raw_values, cfg.patch).astype(foundation.dtype)
    pos = patch_positions(raw_values.shape[-3:], cfg.patch)
    pe = positional_terms(pos, cfg.d_model).astype(foundation.dtype)
    tokens = tape.add(
        tape.matmul(tape.constant(raw),
                    tape.parameter("encoder/embed/w", foundation.params["encoder/embed/w"])),
        tape.constant(pe))
    hidden = foundation.forward_hidden(tape, tokens, pos[:, 0])
    if spec.task == "estimation":
        return head.forward(tape, tape.transpose(hidden, (0, 2, 1)))
    if spec.task == "prediction":
        t_index = pos[:, 0]
        groups = np.unique(t_index)
        pools = []
        for g in groups:
            idx = np.flatnonzero(t_index == g)
            pools.append(tape.reduce_mean(
                tape.gather_tokens(hidden, np.tile(idx, (hidden.shape[0], 1))), axis=1,
                keepdims=True))
        return head.forward(tape, tape.concat(pools, axis=1))
    if spec.task == "reconstruction":
        return head.forward(tape, hidden)
    raise TaskError(f"fine-tuning is not defined for task {spec.task!r}")


def finetune(spec: TaskSpec, foundation: FoundationModel, head, data, seed: int,
             rounds: int = 1, steps_per_round: int = 20):
    """Joint encoder+head updates at 0.1x the head learning rate.

    After each round the validation metric is re-evaluated; a round that
    makes it worse is rolled back and fine-tuning stops.
    """
    if spec.loss_kind == "cross_entropy":
        raise TaskError("fine-tuning applies to regression losses only")
    if not spec.finetune_enabled:
        raise TaskError("task spec does not enable fine-tuning")
    train_samples, val_samples = data

    def raw_of(samples):
        if spec.task == "estimation":
            return np.stack([s[0].values for s in samples])
        if spec.task == "prediction":
            return np.stack([s[0].values for s in samples])
        return np.stack([s[0].values for s in samples])

    def targets_of(samples):
        if spec.task == "estimation":
            return _pair(np.stack([s[1].values for s in samples]))
        if spec.task == "prediction":
            return _pair(np.stack([s[1].values for s in samples]))
        return [np.asarray(s[1], dtype=np.float64) for s in samples]

    def val_metric():
        x_val, y_val = assemble_task_arrays(spec, val_samples, foundation)
        return evaluate_head(spec, head, x_val, y_val)

    raw_train = raw_of(train_samples)
    tg_train = targets_of(train_samples)
    head_opt = Adam(lr=spec.lr)
    enc_opt = Adam(lr=0.1 * spec.lr)
    rng = np.random.default_rng([seed, 13])
    history = [val_metric()]
    batch = min(spec.batch, len(raw_train))

    for _ in range(rounds):
        saved_enc = {k: v.copy() for k, v in foundation.params.items()}
        saved_head = {k: v.copy() for k, v in head.params.items()}
        for _ in range(steps_per_round):
            idx = rng.choice(len(raw_train), size=batch, replace=False)
            tape = Tape(foundation.dtype)
            pred = _joint_forward(spec, tape, foundation, head, raw_train[idx])
            tgt = [tg_train[i] for i in idx] if isinstance(tg_train, list) else tg_train[idx]
            loss = _loss_node(spec, tape, pred, tgt)
            grads = tape.backward(loss)
            head.params = head_opt.step(
                head.params, {k: g for k, g in grads.items() if k.startswith("head/")})
            foundation.params = enc_opt.step(
                foundation.params, {k: g for k, g in grads.items() if k.startswith("encoder/")})
        after = val_metric()
        if after > history[-1]:
            foundation.params = saved_enc
            head.params = saved_head
            break
        history.append(after)
    return foundation, head, history


# ---------------------------------------------------------------------------
# Experiment sweeps
# ---------------------------------------------------------------------------

CSV_COLUMNS = ("task", "input_mode", "head", "snr_db", "velocity_kmh", "seed",
               "metric_name", "metric_value", "params", "train_ms_per_batch",
               "infer_ms_per_batch")


@dataclass(frozen=True)
class ExperimentPlan:
    tasks: tuple = ("estimation",)
    input_modes: tuple = ("raw", "rep")
    snr_grid: tuple = (-5.0, 0.0, 5.0, 10.0)
    velocity_grid_kmh: tuple = (40.0, 90.0)
    seeds: tuple = (0, 1, 2)
    train_count: int = 192
    test_count: int = 64
    pretrain_count: int = 512
    pretrain_epochs: int = 63
    pretrain_batch: int = 16
    pretrain_lr: float = 1e-3
    pretrain_seed: int = 7
    pretrain_snr_range: tuple = (-5.0, 30.0)   # noise augmentation; None for clean
    head_steps: int = 400
    head_batch: int = 32
    head_lr: float = 3e-3
    encoder: EncoderConfig = field(default_factory=pilot_default)
    head_width: int = 64
    head_blocks: int = 2
    measure_timing: bool = False

    def hash(self) -> str:
        return hashlib.sha256(repr(self).encode()).hexdigest()[:16]


def max_workers() -> int:
    """Worker-parallelism cap from the WGPT_THREADS environment variable."""
    try:
        return max(1, int(os.environ.get("WGPT_THREADS", "1")))
    except ValueError:
        return 1


def pretrain_for_plan(plan: ExperimentPlan, task: str) -> FoundationModel:
    """One fixed-seed pretrained encoder shared by every condition of a task."""
    cfg = plan.encoder
    if task == "estimation":
        sim = chansim.estimation_config()
        seeds = np.random.SeedSequence(plan.pretrain_seed).generate_state(plan.pretrain_count)
        tensors = [chansim.synthesize_channel(chansim.generate_scene(int(s), 12), sim)
                   for s in seeds]
    elif task == "prediction":
        pairs = chansim.generate_prediction_sequences(
            plan.pretrain_seed, plan.pretrain_count,
            chansim.prediction_config(velocity_mps=60 / 3.6))
        tensors = [p[0] for p in pairs]
    else:
        raise TaskError(f"no pretraining corpus for task {task!r}")
    if plan.pretrain_snr_range is not None:
        lo, hi = plan.pretrain_snr_range
        rng = np.random.default_rng(plan.pretrain_seed ^ 0x7A11)
        tensors = [chansim.add_noise_at_snr(ct, rng.uniform(lo, hi),
                                            seed=plan.pretrain_seed + 31 * i)
                   for i, ct in enumerate(tensors)]
    data = np.stack([ct.values for ct in tensors])
    model = FoundationModel(cfg, seed=plan.pretrain_seed)
    pretrain(model, data, epochs=plan.pretrain_epochs, opt=Adam(lr=plan.pretrain_lr),
             seed=plan.pretrain_seed, batch_size=plan.pretrain_batch)
    return model


def _estimation_spec(plan: ExperimentPlan, mode: str, sample_shape) -> TaskSpec:
    T, S, F = sample_shape
    if mode == "raw":
        in_ch, in_len = 2 * T * S, F
    else:
        in_ch = plan.encoder.d_model
        in_len = plan.encoder.patch.num_tokens(sample_shape)
    head = HeadConfig("rescnn1d", width=plan.head_width, blocks=plan.head_blocks,
                      out_shape=sample_shape, in_channels=in_ch, in_length=in_len)
    return TaskSpec("estimation", mode, head, lr=plan.head_lr, batch=plan.head_batch,
                    steps=plan.head_steps)


def _prediction_spec(plan: ExperimentPlan, mode: str, hist_shape, future: int) -> TaskSpec:
    T, S, F = hist_shape
    if mode == "raw":
        feat, steps = S * F * 2, T
    else:
        feat = plan.encoder.d_model
        steps = math.ceil(T / plan.encoder.patch.t)
    head = HeadConfig("lstm", width=max(plan.head_width, 16), blocks=2,
                      out_shape=(future, S, F), in_features=feat, steps=steps)
    return TaskSpec("prediction", mode, head, lr=plan.head_lr, batch=plan.head_batch,
                    steps=plan.head_steps)


def run_experiment(plan: ExperimentPlan):
    """Sweep (task, mode, condition, seed) cells; returns (reports, csv rows)."""
    for t in plan.tasks:
        if t not in ("estimation", "prediction"):
            raise TaskError(f"run_experiment covers estimation/prediction, got {t!r}")
    rows = []
    reports = []
    cfg_hash = plan.hash()
    for task in plan.tasks:
        foundation = pretrain_for_plan(plan, task) if "rep" in plan.input_modes else None
        if task == "estimation":
            conditions = [("snr_db", snr) for snr in plan.snr_grid]
        else:
            conditions = [("velocity_kmh", v) for v in plan.velocity_grid_kmh]
        for cond_name, cond_value in conditions:
            for seed in plan.seeds:
                if task == "estimation":
                    samples = chansim.make_estimation_samples(
                        seed * 1_000 + 17, plan.train_count + plan.test_count,
                        snr_db=cond_value)
                    shape = samples[0][0].values.shape
                else:
                    cfgp = chansim.prediction_config(velocity_mps=cond_value / 3.6)
                    samples = chansim.generate_prediction_sequences(
                        seed * 1_000 + 29, plan.train_count + plan.test_count, cfgp)
                    shape = samples[0][0].values.shape
                split = (samples[:plan.train_count], samples[plan.train_count:])
                for mode in plan.input_modes:
                    spec = (_estimation_spec(plan, mode, shape) if task == "estimation"
                            else _prediction_spec(plan, mode, shape, 4))
                    _, report = train_head(spec, split, seed=seed, foundation=foundation,
                                           measure_timing=plan.measure_timing,
                                           config_hash=cfg_hash)
                    report.conditions = {cond_name: cond_value}
                    reports.append(report)
                    mname, mval = next(iter(report.metrics.items()))
                    rows.append({
                        "task": task, "input_mode": mode, "head": spec.head.kind,
                        "snr_db": cond_value if cond_name == "snr_db" else "",
                        "velocity_kmh": cond_value if cond_name == "velocity_kmh" else "",
                        "seed": seed, "metric_name": mname, "metric_value": mval,
                        "params": report.params,
                        "train_ms_per_batch": report.train_ms_per_batch,
                        "infer_ms_per_batch": report.infer_ms_per_batch,
                    })
    return reports, rows


def rows_to_csv(rows, config_hash: str = "") -> str:
    """Deterministic CSV text; timing cells are blank unless measured."""
    def fmt(v):
        if v is None or v == "":
            return ""
        if isinstance(v, float):
            return format(v, ".12g")
        return str(v)

    lines = []
    if config_hash:
        lines.append(f"# config_hash={config_hash}")
    lines.append(",".join(CSV_COLUMNS))
    for row in rows:
        lines.append(",".join(fmt(row[c]) for c in CSV_COLUMNS))
    return "\n".join(lines) + "\n"
