"""Downstream task heads over raw tensors or universal representations.

Each head is a small parameterized model with a `forward(tape, x)` graph
builder and a `parameters()` dict (keys prefixed "head/"), so heads train
through the same tape engine as the encoder and can share a tape with it
for fine-tuning.  Raw-mode and representation-mode variants expose the same
output contract; only the input adapters differ.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import ContractError, Node, Tape
from .cpx import to_pair

NEG_ATTENTION = -1e9

HEAD_KINDS = (
    "rescnn1d", "rescnn2d", "lstm",
    "transformer-enc", "transformer-encdec", "pointcloud-decoder",
)


@dataclass(frozen=True)
class HeadConfig:
    kind: str
    width: int = 32            # conv channels / lstm hidden / transformer d_model
    blocks: int = 2            # residual blocks or layer count (per stack)
    heads: int = 4             # attention heads where applicable
    ff: int = 64               # transformer feed-forward width
    out_shape: tuple = ()      # task output shape
    in_channels: int = 0       # conv-layout input channels
    in_length: int = 0         # conv-layout input length (tokens or subcarriers)
    in_features: int = 0       # per-step features (lstm / enc-dec)
    steps: int = 0             # history steps (lstm / enc-dec)

    def __post_init__(self):
        if self.kind not in HEAD_KINDS:
            raise ContractError(f"unknown head kind {self.kind!r}")
        if self.width < 1 or self.blocks < 1:
            raise ContractError("head widths and block counts must be >= 1")


def table2_configs() -> dict[str, HeadConfig]:
    """Reference head sizes used for parameter-count calibration logging."""
    return {
        "estimation_rescnn": HeadConfig("rescnn1d", width=256, blocks=4,
                                        out_shape=(4, 16, 32), in_channels=128, in_length=32),
        "estimation_transformer": HeadConfig("transformer-enc", width=256, blocks=2, heads=4,
                                             ff=512, out_shape=(4, 16, 32),
                                             in_channels=128, in_length=32),
        "har_rescnn": HeadConfig("rescnn2d", width=32, blocks=3, out_shape=(6,),
                                 in_channels=1, in_length=72),
        "prediction_lstm": HeadConfig("lstm", width=256, blocks=2, out_shape=(4, 32, 32),
                                      in_features=2048, steps=16),
        "prediction_transformer": HeadConfig("transformer-encdec", width=256, blocks=2,
                                             heads=4, ff=512, out_shape=(4, 32, 32),
                                             in_features=2048, steps=16),
    }


def _xavier(rng, fan_in, fan_out, dtype):
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, (fan_in, fan_out)).astype(dtype)


def _conv_init(rng, out_ch, in_ch, *kernel, dtype):
    fan_in = in_ch * int(np.prod(kernel))
    bound = math.sqrt(6.0 / (fan_in + out_ch))
    return rng.uniform(-bound, bound, (out_ch, in_ch) + kernel).astype(dtype)


class _Head:
    """Common parameter bookkeeping for all heads."""

    def __init__(self, cfg: HeadConfig, dtype):
        self.config = cfg
        self.dtype = np.dtype(dtype)
        self.params: dict[str, np.ndarray] = {}

    def parameters(self) -> dict[str, np.ndarray]:
        return self.params

    def _p(self, tape: Tape, name: str) -> Node:
        return tape.parameter(name, self.params[name])

    def to_records(self) -> dict[str, np.ndarray]:
        return {k: v.astype(np.float32) for k, v in self.params.items()}

    def load_records(self, records: dict[str, np.ndarray]):
        for name in self.params:
            self.params[name] = records[name].astype(self.dtype)


def _channel_estimate_output(tape: Tape, y: Node, out_shape) -> Node:
    """[B, 2*T*S, F] conv layout -> [B, T, S, F, 2]."""
    T, S, F = out_shape
    B = y.shape[0]
    y = tape.reshape(y, (B, T, S, 2, F))
    return tape.transpose(y, (0, 1, 2, 4, 3))


class ResCNN1D(_Head):
    """Residual 1-D conv stack: stem -> blocks (conv-relu-conv + skip) -> linear head.

    The output head is linear per position: estimation targets vary
    systematically along the length axis (subcarriers or token positions),
    so each position gets its own readout matrix.
    """

    def __init__(self, cfg: HeadConfig, seed: int = 0, dtype=np.float32):
        super().__init__(cfg, dtype)
        rng = np.random.default_rng(seed)
        T, S, F = cfg.out_shape
        w = cfg.width
        p = self.params
        p["head/stem/w"] = _conv_init(rng, w, cfg.in_channels, 1, dtype=self.dtype)
        p["head/stem/b"] = np.zeros(w, self.dtype)
        for i in range(cfg.blocks):
            p[f"head/block{i}/w1"] = _conv_init(rng, w, w, 3, dtype=self.dtype)
            p[f"head/block{i}/b1"] = np.zeros(w, self.dtype)
            p[f"head/block{i}/w2"] = _conv_init(rng, w, w, 3, dtype=self.dtype)
            p[f"head/block{i}/b2"] = np.zeros(w, self.dtype)
        bound = math.sqrt(6.0 / (w + 2 * T * S))
        p["head/readout/w"] = rng.uniform(
            -bound, bound, (cfg.in_length, w, 2 * T * S)).astype(self.dtype)
        p["head/readout/b"] = np.zeros((2 * T * S, cfg.in_length), self.dtype)
        if cfg.in_length != F:
            p["head/lenmap"] = _xavier(rng, cfg.in_length, F, self.dtype)

    def forward(self, tape: Tape, x: Node) -> Node:
        cfg = self.config
        if x.shape[1:] != (cfg.in_channels, cfg.in_length):
            raise ContractError(f"rescnn1d expects [B,{cfg.in_channels},{cfg.in_length}], got {x.shape}")
        B = x.shape[0]
        h = tape.relu(tape.conv1d(x, self._p(tape, "head/stem/w"), self._p(tape, "head/stem/b")))
        for i in range(cfg.blocks):
            inner = tape.relu(tape.conv1d(h, self._p(tape, f"head/block{i}/w1"),
                                          self._p(tape, f"head/block{i}/b1")))
            h = tape.add(h, tape.conv1d(inner, self._p(tape, f"head/block{i}/w2"),
                                        self._p(tape, f"head/block{i}/b2")))
        ht = tape.reshape(tape.transpose(h, (0, 2, 1)), (B, cfg.in_length, 1, cfg.width))
        y = tape.matmul(ht, self._p(tape, "head/readout/w"))   # [B, L, 1, 2TS]
        y = tape.transpose(tape.reshape(y, (B, cfg.in_length, -1)), (0, 2, 1))
        y = tape.add(y, self._p(tape, "head/readout/b"))
        if "head/lenmap" in self.params:
            y = tape.matmul(y, self._p(tape, "head/lenmap"))
        return _channel_estimate_output(tape, y, cfg.out_shape)


class ResCNN2D(_Head):
    """Residual 2-D conv classifier with global average pooling."""

    def __init__(self, cfg: HeadConfig, seed: int = 0, dtype=np.float32):
        super().__init__(cfg, dtype)
        rng = np.random.default_rng(seed)
        w = cfg.width
        n_classes = cfg.out_shape[0]
        p = self.params
        p["head/stem/w"] = _conv_init(rng, w, cfg.in_channels, 3, 3, dtype=self.dtype)
        p["head/stem/b"] = np.zeros(w, self.dtype)
        for i in range(cfg.blocks):
            p[f"head/block{i}/w1"] = _conv_init(rng, w, w, 3, 3, dtype=self.dtype)
            p[f"head/block{i}/b1"] = np.zeros(w, self.dtype)
            p[f"head/block{i}/w2"] = _conv_init(rng, w, w, 3, 3, dtype=self.dtype)
            p[f"head/block{i}/b2"] = np.zeros(w, self.dtype)
        p["head/cls/w"] = _xavier(rng, w, n_classes, self.dtype)
        p["head/cls/b"] = np.zeros(n_classes, self.dtype)

    def forward(self, tape: Tape, x: Node) -> Node:
        cfg = self.config
        if x.shape[1] != cfg.in_channels:
            raise ContractError(f"rescnn2d expects {cfg.in_channels} channels, got {x.shape}")
        h = tape.relu(tape.conv2d(x, self._p(tape, "head/stem/w"), self._p(tape, "head/stem/b")))
        for i in range(cfg.blocks):
            inner = tape.relu(tape.conv2d(h, self._p(tape, f"head/block{i}/w1"),
                                          self._p(tape, f"head/block{i}/b1")))
            h = tape.add(h, tape.conv2d(inner, self._p(tape, f"head/block{i}/w2"),
                                        self._p(tape, f"head/block{i}/b2")))
        pooled = tape.reduce_mean(h, axis=(2, 3))
        return tape.add(tape.matmul(pooled, self._p(tape, "head/cls/w")),
                        self._p(tape, "head/cls/b"))


class LSTMPredictor(_Head):
    """Stacked LSTM over history steps, linear readout of all future slots."""

    def __init__(self, cfg: HeadConfig, seed: int = 0, dtype=np.float32):
        super().__init__(cfg, dtype)
        rng = np.random.default_rng(seed)
        hid = cfg.width
        fut, S, F = cfg.out_shape
        p = self.params
        p["head/in/w"] = _xavier(rng, cfg.in_features, hid, self.dtype)
        p["head/in/b"] = np.zeros(hid, self.dtype)
        for l in range(cfg.blocks):
            p[f"head/lstm{l}/wx"] = _xavier(rng, hid, 4 * hid, self.dtype)
            p[f"head/lstm{l}/wh"] = _xavier(rng, hid, 4 * hid, self.dtype)
            p[f"head/lstm{l}/b"] = np.zeros(4 * hid, self.dtype)
        p["head/readout/w"] = _xavier(rng, hid, fut * S * F * 2, self.dtype)
        p["head/readout/b"] = np.zeros(fut * S * F * 2, self.dtype)

    def forward(self, tape: Tape, x: Node) -> Node:
        cfg = self.config
        B, steps, feat = x.shape
        if steps != cfg.steps or feat != cfg.in_features:
            raise ContractError(
                f"lstm expects history [B,{cfg.steps},{cfg.in_features}], got {x.shape}")
        hid = cfg.width
        seq = [tape.add(tape.matmul(tape.slice(x, (slice(None), t)), self._p(tape, "head/in/w")),
                        self._p(tape, "head/in/b"))
               for t in range(steps)]
        for l in range(cfg.blocks):
            wx = self._p(tape, f"head/lstm{l}/wx")
            wh = self._p(tape, f"head/lstm{l}/wh")
            b = self._p(tape, f"head/lstm{l}/b")
            h = tape.constant(np.zeros((B, hid), self.dtype))
            c = tape.constant(np.zeros((B, hid), self.dtype))
            outs = []
            for t in range(steps):
                z = tape.add(tape.add(tape.matmul(seq[t], wx), tape.matmul(h, wh)), b)
                gi = tape.sigmoid(tape.slice(z, (slice(None), slice(0, hid))))
                gf = tape.sigmoid(tape.slice(z, (slice(None), slice(hid, 2 * hid))))
                gg = tape.tanh(tape.slice(z, (slice(None), slice(2 * hid, 3 * hid))))
                go = tape.sigmoid(tape.slice(z, (slice(None), slice(3 * hid, 4 * hid))))
                c = tape.add(tape.multiply(gf, c), tape.multiply(gi, gg))
                h = tape.multiply(go, tape.tanh(c))
                outs.append(h)
            seq = outs
        y = tape.add(tape.matmul(seq[-1], self._p(tape, "head/readout/w")),
                     self._p(tape, "head/readout/b"))
        fut, S, F = cfg.out_shape
        return tape.reshape(y, (B, fut, S, F, 2))


def _mha(tape: Tape, head: _Head, prefix: str, q_in: Node, kv_in: Node,
         n_heads: int, bias: Node | None = None) -> Node:
    d = q_in.shape[-1]
    dh = d // n_heads
    B, Nq = q_in.shape[0], q_in.shape[1]
    Nk = kv_in.shape[1]

    def proj(nm, src, n):
        z = tape.add(tape.matmul(src, head._p(tape, f"{prefix}/{nm}")),
                     head._p(tape, f"{prefix}/{nm}_b"))
        return tape.transpose(tape.reshape(z, (B, n, n_heads, dh)), (0, 2, 1, 3))

    q = proj("wq", q_in, Nq)
    k = proj("wk", kv_in, Nk)
    v = proj("wv", kv_in, Nk)
    scores = tape.scale(tape.matmul(q, tape.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dh))
    if bias is not None:
        scores = tape.add(scores, bias)
    ctx = tape.reshape(tape.transpose(tape.matmul(tape.softmax(scores), v), (0, 2, 1, 3)),
                       (B, Nq, d))
    return tape.add(tape.matmul(ctx, head._p(tape, f"{prefix}/wo")),
                    head._p(tape, f"{prefix}/wo_b"))


def _attn_params(rng, p, prefix, d, dtype):
    for nm in ("wq", "wk", "wv", "wo"):
        p[f"{prefix}/{nm}"] = _xavier(rng, d, d, dtype)
        p[f"{prefix}/{nm}_b"] = np.zeros(d, dtype)


def _ln_params(p, prefix, d, dtype):
    p[f"{prefix}/g"] = np.ones(d, dtype)
    p[f"{prefix}/b"] = np.zeros(d, dtype)


def _ffn_params(rng, p, prefix, d, ff, dtype):
    p[f"{prefix}/w1"] = _xavier(rng, d, ff, dtype)
    p[f"{prefix}/b1"] = np.zeros(ff, dtype)
    p[f"{prefix}/w2"] = _xavier(rng, ff, d, dtype)
    p[f"{prefix}/b2"] = np.zeros(d, dtype)


def _block(tape, head, prefix, x, n_heads, bias=None, cross=None):
    h = tape.layer_norm(x, head._p(tape, f"{prefix}/ln1/g"), head._p(tape, f"{prefix}/ln1/b"))
    x = tape.add(x, _mha(tape, head, f"{prefix}/attn", h, h, n_heads, bias))
    if cross is not None:
        h = tape.layer_norm(x, head._p(tape, f"{prefix}/lnx/g"), head._p(tape, f"{prefix}/lnx/b"))
        x = tape.add(x, _mha(tape, head, f"{prefix}/cross", h, cross, n_heads))
    h = tape.layer_norm(x, head._p(tape, f"{prefix}/ln2/g"), head._p(tape, f"{prefix}/ln2/b"))
    f = tape.add(tape.matmul(tape.gelu(tape.add(tape.matmul(h, head._p(tape, f"{prefix}/ffn/w1")),
                                                head._p(tape, f"{prefix}/ffn/b1"))),
                             head._p(tape, f"{prefix}/ffn/w2")),
                 head._p(tape, f"{prefix}/ffn/b2"))
    return tape.add(x, f)


def _sin_table(n, d):
    pos = np.arange(n, dtype=np.float64)[:, None]
    k = np.arange(d // 2, dtype=np.float64)
    rate = 10000.0 ** (-2.0 * k / d)
    out = np.empty((n, d))
    out[:, 0::2] = np.sin(pos * rate)
    out[:, 1::2] = np.cos(pos * rate)
    return out


class TransformerEncHead(_Head):
    """Encoder-only refinement head over the conv layout [B, C, L]."""

    def __init__(self, cfg: HeadConfig, seed: int = 0, dtype=np.float32):
        super().__init__(cfg, dtype)
        rng = np.random.default_rng(seed)
        d = cfg.width
        T, S, F = cfg.out_shape
        p = self.params
        p["head/in/w"] = _xavier(rng, cfg.in_channels, d, self.dtype)
        p["head/in/b"] = np.zeros(d, self.dtype)
        for i in range(cfg.blocks):
            _ln_params(p, f"head/enc{i}/ln1", d, self.dtype)
            _ln_params(p, f"head/enc{i}/ln2", d, self.dtype)
            _attn_params(rng, p, f"head/enc{i}/attn", d, self.dtype)
            _ffn_params(rng, p, f"head/enc{i}/ffn", d, cfg.ff, self.dtype)
        p["head/readout/w"] = _xavier(rng, d, 2 * T * S, self.dtype)
        p["head/readout/b"] = np.zeros(2 * T * S, self.dtype)
        if cfg.in_length != F:
            p["head/lenmap"] = _xavier(rng, cfg.in_length, F, self.dtype)

    def forward(self, tape: Tape, x: Node) -> Node:
        cfg = self.config
        if x.shape[1:] != (cfg.in_channels, cfg.in_length):
            raise ContractError(
                f"transformer-enc expects [B,{cfg.in_channels},{cfg.in_length}], got {x.shape}")
        seq = tape.transpose(x, (0, 2, 1))
        seq = tape.add(tape.matmul(seq, self._p(tape, "head/in/w")), self._p(tape, "head/in/b"))
        seq = tape.add(seq, tape.constant(_sin_table(cfg.in_length, cfg.width).astype(self.dtype)))
        for i in range(cfg.blocks):
            seq = _block(tape, self, f"head/enc{i}", seq, cfg.heads)
        y = tape.add(tape.matmul(seq, self._p(tape, "head/readout/w")),
                     self._p(tape, "head/readout/b"))
        y = tape.transpose(y, (0, 2, 1))
        if "head/lenmap" in self.params:
            y = tape.matmul(y, self._p(tape, "head/lenmap"))
        return _channel_estimate_output(tape, y, cfg.out_shape)


class TransformerEncDecHead(_Head):
    """Encoder over history steps; decoder with learned future-slot queries.

    Decoding is one-shot: the four slot queries attend causally among
    themselves and cross-attend to the encoded history.
    """

    def __init__(self, cfg: HeadConfig, seed: int = 0, dtype=np.float32):
        super().__init__(cfg, dtype)
        rng = np.random.default_rng(seed)
        d = cfg.width
        fut, S, F = cfg.out_shape
        p = self.params
        p["head/in/w"] = _xavier(rng, cfg.in_features, d, self.dtype)
        p["head/in/b"] = np.zeros(d, self.dtype)
        for i in range(cfg.blocks):
            _ln_params(p, f"head/enc{i}/ln1", d, self.dtype)
            _ln_params(p, f"head/enc{i}/ln2", d, self.dtype)
            _attn_params(rng, p, f"head/enc{i}/attn", d, self.dtype)
            _ffn_params(rng, p, f"head/enc{i}/ffn", d, cfg.ff, self.dtype)
        p["head/queries"] = (0.1 * rng.standard_normal((fut, d))).astype(self.dtype)
        for i in range(cfg.blocks):
            _ln_params(p, f"head/dec{i}/ln1", d, self.dtype)
            _ln_params(p, f"head/dec{i}/lnx", d, self.dtype)
            _ln_params(p, f"head/dec{i}/ln2", d, self.dtype)
            _attn_params(rng, p, f"head/dec{i}/attn", d, self.dtype)
            _attn_params(rng, p, f"head/dec{i}/cross", d, self.dtype)
            _ffn_params(rng, p, f"head/dec{i}/ffn", d, cfg.ff, self.dtype)
        p["head/readout/w"] = _xavier(rng, d, S * F * 2, self.dtype)
        p["head/readout/b"] = np.zeros(S * F * 2, self.dtype)

    def forward(self, tape: Tape, x: Node) -> Node:
        cfg = self.config
        B, steps, feat = x.shape
        if steps != cfg.steps or feat != cfg.in_features:
            raise ContractError(
                f"transformer-encdec expects [B,{cfg.steps},{cfg.in_features}], got {x.shape}")
        fut = cfg.out_shape[0]
        seq = tape.add(tape.matmul(x, self._p(tape, "head/in/w")), self._p(tape, "head/in/b"))
        seq = tape.add(seq, tape.constant(_sin_table(steps, cfg.width).astype(self.dtype)))
        for i in range(cfg.blocks):
            seq = _block(tape, self, f"head/enc{i}", seq, cfg.heads)

        causal = np.where(np.tril(np.ones((fut, fut), bool)), 0.0, NEG_ATTENTION)
        bias = tape.constant(causal)
        dec = tape.add(tape.constant(np.zeros((B, fut, cfg.width), self.dtype)),
                       self._p(tape, "head/queries"))
        for i in range(cfg.blocks):
            dec = _block(tape, self, f"head/dec{i}", dec, cfg.heads, bias=bias, cross=seq)
        y = tape.add(tape.matmul(dec, self._p(tape, "head/readout/w")),
                     self._p(tape, "head/readout/b"))
        _, S, F = cfg.out_shape[0], cfg.out_shape[1], cfg.out_shape[2]
        return tape.reshape(y, (B, fut, cfg.out_shape[1], cfg.out_shape[2], 2))


class PointCloudDecoder(_Head):
    """Pooled representation -> MLP -> fixed-size scatterer cloud."""

    def __init__(self, cfg: HeadConfig, seed: int = 0, dtype=np.float32):
        super().__init__(cfg, dtype)
        rng = np.random.default_rng(seed)
        n_points = cfg.out_shape[0]
        d, h = cfg.in_features, cfg.width
        p = self.params
        p["head/w1"] = _xavier(rng, d, h, self.dtype)
        p["head/b1"] = np.zeros(h, self.dtype)
        p["head/w2"] = _xavier(rng, h, h, self.dtype)
        p["head/b2"] = np.zeros(h, self.dtype)
        p["head/w3"] = _xavier(rng, h, n_points * 3, self.dtype)
        p["head/b3"] = np.zeros(n_points * 3, self.dtype)

    def forward(self, tape: Tape, rep: Node) -> Node:
        cfg = self.config
        if rep.shape[-1] != cfg.in_features:
            raise ContractError(f"pointcloud decoder expects width {cfg.in_features}, got {rep.shape}")
        pooled = tape.reduce_mean(rep, axis=1)
        h = tape.relu(tape.add(tape.matmul(pooled, self._p(tape, "head/w1")), self._p(tape, "head/b1")))
        h = tape.relu(tape.add(tape.matmul(h, self._p(tape, "head/w2")), self._p(tape, "head/b2")))
        y = tape.add(tape.matmul(h, self._p(tape, "head/w3")), self._p(tape, "head/b3"))
        return tape.reshape(y, (rep.shape[0], cfg.out_shape[0], 3))


def build_head(cfg: HeadConfig, seed: int = 0, dtype=np.float32) -> _Head:
    cls = {
        "rescnn1d": ResCNN1D,
        "rescnn2d": ResCNN2D,
        "lstm": LSTMPredictor,
        "transformer-enc": TransformerEncHead,
        "transformer-encdec": TransformerEncDecHead,
        "pointcloud-decoder": PointCloudDecoder,
    }[cfg.kind]
    return cls(cfg, seed=seed, dtype=dtype)


# ---------------------------------------------------------------------------
# Input adapters.  Raw and representation modes produce the layouts the
# heads consume; both are batched along axis 0.
# ---------------------------------------------------------------------------


def estimation_raw_input(values: np.ndarray) -> np.ndarray:
    """Channel tensor(s) [.., T, S, F] complex -> conv layout [.., 2*T*S, F]."""
    pair = to_pair(values)                                # [..., T, S, F, 2]
    moved = np.moveaxis(pair, -1, -2)                     # [..., T, S, 2, F]
    lead = moved.shape[:-4]
    return moved.reshape(lead + (-1, moved.shape[-1])).astype(np.float32)


def estimation_rep_input(rep: np.ndarray) -> np.ndarray:
    """Representation(s) [.., N, d] -> conv layout [.., d, N]."""
    return np.swapaxes(rep, -1, -2).astype(np.float32)


def prediction_raw_steps(values: np.ndarray) -> np.ndarray:
    """History tensor(s) [.., T, S, F] complex -> per-step features [.., T, S*F*2]."""
    pair = to_pair(values)
    lead = pair.shape[:-3]
    return pair.reshape(lead + (-1,)).astype(np.float32)


def prediction_rep_steps(rep: np.ndarray, t_index: np.ndarray) -> np.ndarray:
    """Mean-pool representation tokens per temporal patch group -> [.., groups, d]."""
    groups = np.unique(t_index)
    pooled = [rep[..., t_index == g, :].mean(axis=-2) for g in groups]
    return np.stack(pooled, axis=-2).astype(np.float32)


def har_raw_image(amplitude: np.ndarray) -> np.ndarray:
    """[.., links, subcarriers, time] -> conv image [.., links, subcarriers, time]."""
    return amplitude.astype(np.float32)


def har_rep_image(rep: np.ndarray) -> np.ndarray:
    """[.., N, d] -> single-channel image [.., 1, N, d]."""
    return rep[..., None, :, :].astype(np.float32)
