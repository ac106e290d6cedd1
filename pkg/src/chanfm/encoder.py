"""Foundation model: a multi-domain transformer encoder over patch tokens.

Attention is full across space/frequency token positions and causal across
the temporal patch index: token i may attend to token j only when
t-index(j) <= t-index(i).  Pretraining randomly masks tokens and trains a
linear head to reconstruct the raw patch content at the masked positions,
with a per-patch power normalization so the loss is an NMSE.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import ContractError, Node, Tape
from .optim import Adam, count_parameters
from .tokenizer import (
    MaskPlan,
    PatchSpec,
    TokenSequence,
    partition_patches,
    patch_positions,
    patch_validity,
    plan_mask,
    positional_terms,
)

NEG_ATTENTION = -1e9


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class EncoderConfig:
    d_model: int = 128
    n_layers: int = 4
    n_heads: int = 4
    d_ff: int = 512
    patch: PatchSpec = field(default_factory=lambda: PatchSpec(4, 2, 4, 128))
    mask_ratio: float = 0.4
    dropout: float = 0.0

    def __post_init__(self):
        if self.n_layers < 1:
            raise ContractError("need at least one layer")
        if self.d_model % self.n_heads:
            raise ContractError(f"d_model {self.d_model} not divisible by {self.n_heads} heads")
        if self.patch.d_model != self.d_model:
            raise ContractError("patch spec embedding width must equal d_model")
        if not 0.0 <= self.mask_ratio <= 1.0:
            raise ContractError("mask ratio must lie in [0, 1]")


def comm_default() -> EncoderConfig:
    """Desk-scale default for communication-task tensors."""
    return EncoderConfig(128, 4, 4, 512, PatchSpec(4, 2, 4, 128))


def pilot_default() -> EncoderConfig:
    """Desk config for the pilot-estimation experiments.

    One token per subcarrier (the patch spans the full slot and antenna
    extent), so token positions line up with the frequency axis the
    downstream heads emit.
    """
    return EncoderConfig(128, 3, 4, 512, PatchSpec(4, 16, 1, 128))


def har_default() -> EncoderConfig:
    """Activity-recognition config: 3x114x2000 amplitudes -> 72 x 64 tokens."""
    return EncoderConfig(64, 2, 4, 256, PatchSpec(500, 1, 19, 64))


def scale_ladder() -> dict:
    """Config family from ~0.6M to ~80M parameters; only `small` is exercised in tests."""
    return {
        "small": comm_default(),
        "medium": EncoderConfig(320, 6, 8, 1280, PatchSpec(4, 2, 4, 320)),
        "large": EncoderConfig(800, 10, 16, 3200, PatchSpec(4, 2, 4, 800)),
    }


@dataclass
class UniversalRepresentation:
    matrix: np.ndarray          # [N, d_model]
    provenance: dict            # checkpoint id, patch spec, source shape

    def __post_init__(self):
        if not np.all(np.isfinite(self.matrix)):
            raise ContractError("representation contains non-finite values")


def _xavier(rng, fan_in, fan_out, dtype):
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, (fan_in, fan_out)).astype(dtype)


class FoundationModel:
    """Encoder parameters plus patch/embedding configuration."""

    def __init__(self, config: EncoderConfig, seed: int = 0, dtype=np.float32):
        self.config = config
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        d, ff, w = config.d_model, config.d_ff, config.patch.raw_width
        p: dict[str, np.ndarray] = {}
        p["encoder/embed/w"] = _xavier(rng, w, d, self.dtype)
        p["encoder/mask_token"] = (0.02 * rng.standard_normal(d)).astype(self.dtype)
        for i in range(config.n_layers):
            pre = f"encoder/layers/{i}"
            for nm in ("ln1", "ln2"):
                p[f"{pre}/{nm}/g"] = np.ones(d, self.dtype)
                p[f"{pre}/{nm}/b"] = np.zeros(d, self.dtype)
            for nm in ("wq", "wk", "wv", "wo"):
                p[f"{pre}/attn/{nm}"] = _xavier(rng, d, d, self.dtype)
                p[f"{pre}/attn/{nm}_b"] = np.zeros(d, self.dtype)
            p[f"{pre}/ffn/w1"] = _xavier(rng, d, ff, self.dtype)
            p[f"{pre}/ffn/b1"] = np.zeros(ff, self.dtype)
            p[f"{pre}/ffn/w2"] = _xavier(rng, ff, d, self.dtype)
            p[f"{pre}/ffn/b2"] = np.zeros(d, self.dtype)
        p["encoder/recon/w"] = _xavier(rng, d, w, self.dtype)
        p["encoder/recon/b"] = np.zeros(w, self.dtype)
        self.params = p

    def parameters(self) -> dict[str, np.ndarray]:
        return self.params

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for name in sorted(self.params):
            h.update(name.encode())
            h.update(np.ascontiguousarray(self.params[name]).tobytes())
        return h.hexdigest()[:16]

    # -- graph construction --------------------------------------------------

    def _p(self, tape: Tape, name: str) -> Node:
        return tape.parameter(name, self.params[name])

    def causal_bias(self, t_index: np.ndarray) -> np.ndarray:
        """Additive attention bias: 0 where t[j] <= t[i], a large negative otherwise."""
        allowed = t_index[None, :] <= t_index[:, None]
        return np.where(allowed, 0.0, NEG_ATTENTION)

    def forward_hidden(self, tape: Tape, tokens: Node, t_index: np.ndarray,
                       dropout_rng: np.random.Generator | None = None) -> Node:
        cfg = self.config
        d, nh = cfg.d_model, cfg.n_heads
        dh = d // nh
        B, N, _ = tokens.shape
        bias = tape.constant(self.causal_bias(t_index))
        x = tokens
        for i in range(cfg.n_layers):
            pre = f"encoder/layers/{i}"
            h = tape.layer_norm(x, self._p(tape, f"{pre}/ln1/g"), self._p(tape, f"{pre}/ln1/b"))
            heads = []
            for nm in ("wq", "wk", "wv"):
                z = tape.add(tape.matmul(h, self._p(tape, f"{pre}/attn/{nm}")),
                             self._p(tape, f"{pre}/attn/{nm}_b"))
                z = tape.transpose(tape.reshape(z, (B, N, nh, dh)), (0, 2, 1, 3))
                heads.append(z)
            q, k, v = heads
            scores = tape.scale(tape.matmul(q, tape.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dh))
            attn = tape.softmax(tape.add(scores, bias))
            if dropout_rng is not None and cfg.dropout > 0.0:
                keep = (dropout_rng.random(attn.shape) >= cfg.dropout) / (1.0 - cfg.dropout)
                attn = tape.multiply(attn, tape.constant(keep))
            ctx = tape.reshape(tape.transpose(tape.matmul(attn, v), (0, 2, 1, 3)), (B, N, d))
            out = tape.add(tape.matmul(ctx, self._p(tape, f"{pre}/attn/wo")),
                           self._p(tape, f"{pre}/attn/wo_b"))
            x = tape.add(x, out)
            h2 = tape.layer_norm(x, self._p(tape, f"{pre}/ln2/g"), self._p(tape, f"{pre}/ln2/b"))
            f1 = tape.gelu(tape.add(tape.matmul(h2, self._p(tape, f"{pre}/ffn/w1")),
                                    self._p(tape, f"{pre}/ffn/b1")))
            f2 = tape.add(tape.matmul(f1, self._p(tape, f"{pre}/ffn/w2")),
                          self._p(tape, f"{pre}/ffn/b2"))
            x = tape.add(x, f2)
        # no output normalization: token scale carries signal amplitude, which
        # downstream regression heads need to recover
        return x

    def reconstruct(self, tape: Tape, hidden: Node) -> Node:
        return tape.add(tape.matmul(hidden, self._p(tape, "encoder/recon/w")),
                        self._p(tape, "encoder/recon/b"))

    # -- serialization --------------------------------------------------------

    def to_records(self) -> dict[str, np.ndarray]:
        cfg = self.config
        rec = {k: v.astype(np.float32) for k, v in self.params.items()}
        rec["config/encoder"] = np.array(
            [cfg.d_model, cfg.n_layers, cfg.n_heads, cfg.d_ff,
             cfg.patch.t, cfg.patch.s, cfg.patch.f,
             cfg.mask_ratio, cfg.dropout], dtype=np.float32)
        return rec

    @classmethod
    def from_records(cls, records: dict[str, np.ndarray]) -> "FoundationModel":
        c = records["config/encoder"].astype(np.float64)
        patch = PatchSpec(int(c[4]), int(c[5]), int(c[6]), int(c[0]))
        cfg = EncoderConfig(int(c[0]), int(c[1]), int(c[2]), int(c[3]), patch,
                            float(c[7]), float(c[8]))
        model = cls(cfg, seed=0)
        for name in model.params:
            model.params[name] = records[name].astype(np.float32)
        return model


# ---------------------------------------------------------------------------
# Representation emission
# ---------------------------------------------------------------------------


def encode(model: FoundationModel, seq: TokenSequence) -> UniversalRepresentation:
    """Run the encoder stack over an embedded token sequence."""
    if seq.tokens.shape[1] != model.config.d_model:
        raise ContractError(
            f"token width {seq.tokens.shape[1]} != d_model {model.config.d_model}")
    tape = Tape(model.dtype)
    tokens = tape.constant(seq.tokens[None, :, :])
    hidden = model.forward_hidden(tape, tokens, seq.positions[:, 0])
    return UniversalRepresentation(
        hidden.value[0].copy(),
        {
            "checkpoint_id": model.fingerprint(),
            "patch": (model.config.patch.t, model.config.patch.s, model.config.patch.f),
            "source_shape": seq.source_shape,
        },
    )


def represent_matrix(model: FoundationModel, values: np.ndarray) -> np.ndarray:
    """Batched partition -> embed -> encode; returns [B, N, d_model] float32."""
    spec = model.config.patch
    batched = values if values.ndim == 4 else values[None]
    shape = batched.shape[-3:]
    raw = partition_patches(batched, spec).astype(model.dtype)
    pos = patch_positions(shape, spec)
    pe = positional_terms(pos, spec.d_model).astype(model.dtype)
    tape = Tape(model.dtype)
    tokens = tape.add(tape.matmul(tape.constant(raw),
                                  tape.parameter("encoder/embed/w", model.params["encoder/embed/w"])),
                      tape.constant(pe))
    hidden = model.forward_hidden(tape, tokens, pos[:, 0])
    return hidden.value


def represent(model: FoundationModel, ct) -> UniversalRepresentation:
    """Universal representation of one channel tensor (no masking; deterministic)."""
    values = ct.values if hasattr(ct, "values") else np.asarray(ct)
    mat = represent_matrix(model, values)[0]
    return UniversalRepresentation(
        mat.copy(),
        {
            "checkpoint_id": model.fingerprint(),
            "patch": (model.config.patch.t, model.config.patch.s, model.config.patch.f),
            "source_shape": tuple(values.shape),
        },
    )


def reconstruct_masked(model: FoundationModel, rep: UniversalRepresentation) -> np.ndarray:
    """Map hidden states back to raw patch width through the linear head."""
    tape = Tape(model.dtype)
    hidden = tape.constant(rep.matrix[None])
    return model.reconstruct(tape, hidden).value[0]


# ---------------------------------------------------------------------------
# Pretraining
# ---------------------------------------------------------------------------


def _mask_plans(n_tokens: int, ratio: float, count: int, seed: int) -> list[MaskPlan]:
    seeds = np.random.SeedSequence(seed).generate_state(count)
    return [plan_mask(n_tokens, ratio, int(s)) for s in seeds]


def masked_forward(model: FoundationModel, tape: Tape, values: np.ndarray,
                   plans: list[MaskPlan],
                   dropout_rng: np.random.Generator | None = None):
    """Embed, replace masked rows by the mask token, and encode.

    Returns (hidden node, predicted patches node, aux dict with the raw
    patches, mask indices and positions).
    """
    spec = model.config.patch
    shape = values.shape[-3:]
    raw = partition_patches(values, spec).astype(model.dtype)      # [B, N, w]
    B, N, w = raw.shape
    pos = patch_positions(shape, spec)
    pe = positional_terms(pos, spec.d_model).astype(model.dtype)

    idx = np.stack([p.indices for p in plans])                     # [B, M]
    mask = np.zeros((B, N, 1), model.dtype)
    np.put_along_axis(mask, idx[:, :, None], 1.0, axis=1)

    embed_w = tape.parameter("encoder/embed/w", model.params["encoder/embed/w"])
    mask_token = tape.parameter("encoder/mask_token", model.params["encoder/mask_token"])
    tokens = tape.add(tape.matmul(tape.constant(raw), embed_w), tape.constant(pe))
    filler = tape.add(mask_token, tape.constant(pe))               # [N, d]
    masked = tape.add(tape.multiply(tokens, tape.constant(1.0 - mask)),
                      tape.multiply(filler, tape.constant(mask)))

    hidden = model.forward_hidden(tape, masked, pos[:, 0], dropout_rng)
    pred = model.reconstruct(tape, hidden)                         # [B, N, w]
    return hidden, pred, {"raw": raw, "idx": idx, "positions": pos, "shape": shape}


def masked_reconstruction_loss(model: FoundationModel, tape: Tape, values: np.ndarray,
                               plans: list[MaskPlan],
                               dropout_rng: np.random.Generator | None = None,
                               target_values: np.ndarray | None = None):
    """Build the pretraining graph; returns (loss node, diagnostics dict).

    Loss: mean over masked, unpadded tokens of ||pred - true||^2 / ||true||^2
    (per-patch power normalization).  Padded scalar positions are excluded,
    and target content at unmasked positions never enters the loss.
    """
    _, pred, aux = masked_forward(model, tape, values, plans, dropout_rng)
    raw, idx = aux["raw"], aux["idx"]
    if target_values is not None:
        raw = partition_patches(target_values, model.config.patch).astype(model.dtype)
    valid = patch_validity(aux["shape"], model.config.patch).astype(model.dtype)

    pred_m = tape.gather_tokens(pred, idx)
    true_m = np.take_along_axis(raw, idx[:, :, None], axis=1)      # [B, M, w]
    valid_m = np.broadcast_to(valid[None], raw.shape)
    valid_m = np.take_along_axis(valid_m, idx[:, :, None], axis=1)

    power = (valid_m * true_m ** 2).sum(axis=2)                    # [B, M]
    weights = np.where(power > 0, 1.0 / np.maximum(power, 1e-30), 0.0).astype(model.dtype)
    n_live = int((power > 0).sum())

    diff = tape.subtract(pred_m, tape.constant(true_m))
    sq = tape.multiply(tape.multiply(diff, diff), tape.constant(valid_m))
    per_token = tape.reduce_sum(sq, axis=2)
    loss = tape.scale(tape.reduce_sum(tape.multiply(per_token, tape.constant(weights))),
                      1.0 / max(n_live, 1))
    return loss, {"masked_per_sample": idx.shape[1], "live_tokens": n_live}


def pretrain_step(model: FoundationModel, batch_values: np.ndarray, opt: Adam,
                  seed: int) -> float:
    """One masked-reconstruction step with an Adam update; returns the loss."""
    if len(batch_values) == 0:
        raise ContractError("empty pretraining batch")
    spec = model.config.patch
    n_tokens = spec.num_tokens(batch_values.shape[-3:])
    plans = _mask_plans(n_tokens, model.config.mask_ratio, len(batch_values), seed)
    if plans[0].indices.size == 0:
        return 0.0
    dropout_rng = np.random.default_rng(seed ^ 0xD509) if model.config.dropout > 0 else None
    tape = Tape(model.dtype)
    loss, _ = masked_reconstruction_loss(model, tape, batch_values, plans, dropout_rng)
    grads = tape.backward(loss)
    model.params = opt.step(model.params, grads)
    return float(loss.value)


@dataclass
class PretrainResult:
    loss_trace: list[float]
    steps: int
    checkpoints: list[str]


def pretrain(model: FoundationModel, dataset, epochs: int, opt: Adam, seed: int,
             batch_size: int = 16, checkpoint_dir: str | None = None) -> PretrainResult:
    """Deterministic multi-epoch pretraining with a per-step loss trace.

    `dataset` is an array [M, T, S, F] or a list of channel tensors of one
    shape.  A checkpoint is written per epoch when a directory is given.
    """
    values = _stack_dataset(dataset)
    if len(values) == 0:
        raise ContractError("empty pretraining dataset")
    trace: list[float] = []
    ckpts: list[str] = []
    step = 0
    for epoch in range(epochs):
        order = np.random.default_rng([seed, epoch]).permutation(len(values))
        for start in range(0, len(values), batch_size):
            batch = values[order[start:start + batch_size]]
            loss = pretrain_step(model, batch, opt, seed=int(seed + 1_000_003 * step))
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite loss at step {step}")
            trace.append(loss)
            step += 1
        if checkpoint_dir is not None:
            from . import fileio

            path = f"{checkpoint_dir}/epoch_{epoch:03d}.wgck"
            fileio.save_checkpoint(path, model.to_records())
            ckpts.append(path)
    return PretrainResult(trace, step, ckpts)


def _stack_dataset(dataset) -> np.ndarray:
    if isinstance(dataset, np.ndarray):
        return dataset
    vals = [ct.values if hasattr(ct, "values") else np.asarray(ct) for ct in dataset]
    return np.stack(vals) if vals else np.empty((0, 1, 1, 1))
