"""Reverse-mode automatic differentiation on an explicit operation tape.

Every value is a dense numpy array of one floating dtype (float32 for
training, float64 for verification).  Complex quantities enter as real
arrays with a trailing real/imag axis of length 2, so a single engine
differentiates everything.

A ``Tape`` records leaves (named parameters and constants) followed by a
topologically ordered list of primitive operations.  Replaying the tape
with the recorded leaf values reproduces every intermediate bit-exactly,
which is what the finite-difference checker relies on.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf, expit

_INV_SQRT2 = float(1.0 / np.sqrt(2.0))
_INV_SQRT2PI = float(1.0 / np.sqrt(2.0 * np.pi))


class ContractError(ValueError):
    """An operation's shape/precondition contract was violated."""


class NonFiniteError(FloatingPointError):
    """A value that must be finite contains NaN or Inf."""


# ---------------------------------------------------------------------------
# Forward primitives.  Each takes input arrays plus static (non-differentiable)
# keyword arguments and returns the output array.  They must be pure so that
# replaying a tape is deterministic.
# ---------------------------------------------------------------------------


def _f_matmul(a, b):
    if a.ndim < 2 or b.ndim < 2:
        raise ContractError(f"matmul needs rank >= 2 operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ContractError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    return np.matmul(a, b)


def _f_add(a, b):
    return a + b


def _f_subtract(a, b):
    return a - b


def _f_multiply(a, b):
    return a * b


def _f_scale(a, factor=1.0):
    return a * a.dtype.type(factor)


def _f_reshape(a, shape=None):
    return np.reshape(a, shape)


def _f_transpose(a, axes=None):
    return np.transpose(a, axes)


def _f_slice(a, key=None):
    return a[key]


def _f_concat(*arrays, axis=0):
    return np.concatenate(arrays, axis=axis)


def _f_reduce_sum(a, axis=None, keepdims=False):
    return a.sum(axis=axis, keepdims=keepdims)


def _f_reduce_mean(a, axis=None, keepdims=False):
    return a.mean(axis=axis, keepdims=keepdims)


def _f_softmax(a):
    m = a.max(axis=-1, keepdims=True)
    e = np.exp(a - m)
    return e / e.sum(axis=-1, keepdims=True)


def _f_layer_norm(a, gamma, beta, eps=1e-5):
    if gamma.shape != a.shape[-1:] or beta.shape != a.shape[-1:]:
        raise ContractError(
            f"layer_norm scale/shift must match last axis {a.shape[-1:]}, "
            f"got {gamma.shape} / {beta.shape}"
        )
    mu = a.mean(axis=-1, keepdims=True)
    var = a.var(axis=-1, keepdims=True)
    xhat = (a - mu) / np.sqrt(var + a.dtype.type(eps))
    return xhat * gamma + beta


def _f_relu(a):
    return np.maximum(a, 0)


def _f_gelu(a):
    return 0.5 * a * (1.0 + erf(a * a.dtype.type(_INV_SQRT2))).astype(a.dtype)


def _f_sigmoid(a):
    return expit(a)


def _f_tanh(a):
    return np.tanh(a)


def _conv1d_check(x, w, b):
    if x.ndim != 3 or w.ndim != 3:
        raise ContractError(f"conv1d expects x[B,C,L], w[O,C,K]; got {x.shape}, {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise ContractError(f"conv1d channel mismatch: x has {x.shape[1]}, w has {w.shape[1]}")
    if w.shape[2] % 2 != 1:
        raise ContractError("conv1d kernel length must be odd (same padding)")
    if b is not None and b.shape != (w.shape[0],):
        raise ContractError(f"conv1d bias shape {b.shape} != ({w.shape[0]},)")


def _f_conv1d(x, w, b):
    # Stride 1, zero "same" padding; out[b,o,l] = sum_{c,k} w[o,c,k] x[b,c,l+k-p].
    _conv1d_check(x, w, b)
    B, C, L = x.shape
    O, _, K = w.shape
    p = (K - 1) // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p)))
    out = np.zeros((B, O, L), dtype=x.dtype)
    for k in range(K):
        out += np.matmul(w[:, :, k], xp[:, :, k:k + L])
    if b is not None:
        out += b[:, None]
    return out


def _conv2d_check(x, w, b):
    if x.ndim != 4 or w.ndim != 4:
        raise ContractError(f"conv2d expects x[B,C,H,W], w[O,C,Kh,Kw]; got {x.shape}, {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise ContractError(f"conv2d channel mismatch: x has {x.shape[1]}, w has {w.shape[1]}")
    if w.shape[2] % 2 != 1 or w.shape[3] % 2 != 1:
        raise ContractError("conv2d kernel sides must be odd (same padding)")
    if b is not None and b.shape != (w.shape[0],):
        raise ContractError(f"conv2d bias shape {b.shape} != ({w.shape[0]},)")


def _f_conv2d(x, w, b):
    _conv2d_check(x, w, b)
    B, C, H, W = x.shape
    O, _, Kh, Kw = w.shape
    ph, pw = (Kh - 1) // 2, (Kw - 1) // 2
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    out = np.zeros((B, O, H * W), dtype=x.dtype)
    for u in range(Kh):
        for v in range(Kw):
            win = xp[:, :, u:u + H, v:v + W].reshape(B, C, H * W)
            out += np.matmul(w[:, :, u, v], win)
    out = out.reshape(B, O, H, W)
    if b is not None:
        out += b[:, None, None]
    return out


def _f_gather_tokens(a, idx=None):
    if a.ndim != 3:
        raise ContractError(f"gather_tokens expects a[B,N,D], got {a.shape}")
    B, N, _ = a.shape
    if idx.shape[0] != B or idx.min() < 0 or idx.max() >= N:
        raise ContractError(f"gather index out of range for {a.shape}: {idx.shape}")
    return np.take_along_axis(a, idx[:, :, None], axis=1)


def _f_cross_entropy(logits, labels=None):
    if logits.ndim != 2:
        raise ContractError(f"cross_entropy expects logits[B,K], got {logits.shape}")
    m = logits.max(axis=-1, keepdims=True)
    z = logits - m
    logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    return np.asarray(-logp[np.arange(len(labels)), labels].mean(), dtype=logits.dtype)


def _pairwise_sq_dists(a, b):
    # [N,3] x [M,3] -> [N,M] squared euclidean distances
    diff = a[:, None, :] - b[None, :, :]
    return (diff * diff).sum(axis=-1)


def _f_chamfer(pred, target=None):
    if pred.ndim != 2 or pred.shape[1] != 3:
        raise ContractError(f"chamfer expects pred[N,3], got {pred.shape}")
    d2 = _pairwise_sq_dists(pred, target.astype(pred.dtype))
    return np.asarray(d2.min(axis=1).mean() + d2.min(axis=0).mean(), dtype=pred.dtype)


# ---------------------------------------------------------------------------
# Backward primitives: bwd(grad_out, out_value, input_values, static) ->
# tuple of gradients aligned with the inputs (None for non-differentiable).
# ---------------------------------------------------------------------------


def _unbroadcast(g, shape):
    """Sum-reduce a broadcast gradient back to `shape`."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gd, sd) in enumerate(zip(g.shape, shape)) if sd == 1 and gd != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _b_matmul(g, out, ins, static):
    a, b = ins
    ga = np.matmul(g, np.swapaxes(b, -1, -2))
    gb = np.matmul(np.swapaxes(a, -1, -2), g)
    return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)


def _b_add(g, out, ins, static):
    a, b = ins
    return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)


def _b_subtract(g, out, ins, static):
    a, b = ins
    return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)


def _b_multiply(g, out, ins, static):
    a, b = ins
    return _unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)


def _b_scale(g, out, ins, static):
    return (g * g.dtype.type(static["factor"]),)


def _b_reshape(g, out, ins, static):
    return (g.reshape(ins[0].shape),)


def _b_transpose(g, out, ins, static):
    axes = static["axes"]
    if axes is None:
        return (np.transpose(g),)
    return (np.transpose(g, np.argsort(axes)),)


def _b_slice(g, out, ins, static):
    z = np.zeros_like(ins[0])
    z[static["key"]] = g
    return (z,)


def _b_concat(g, out, ins, static):
    axis = static["axis"]
    sizes = [a.shape[axis] for a in ins]
    return tuple(np.split(g, np.cumsum(sizes)[:-1], axis=axis))


def _b_reduce_sum(g, out, ins, static):
    a = ins[0]
    axis, keepdims = static["axis"], static["keepdims"]
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return (np.broadcast_to(g, a.shape),)


def _b_reduce_mean(g, out, ins, static):
    a = ins[0]
    axis, keepdims = static["axis"], static["keepdims"]
    count = a.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return (np.broadcast_to(g, a.shape) / a.dtype.type(count),)


def _b_softmax(g, out, ins, static):
    dot = (g * out).sum(axis=-1, keepdims=True)
    return (out * (g - dot),)


def _b_layer_norm(g, out, ins, static):
    a, gamma, beta = ins
    eps = a.dtype.type(static["eps"])
    mu = a.mean(axis=-1, keepdims=True)
    var = a.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (a - mu) * inv
    dxhat = g * gamma
    da = inv * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )
    d = a.shape[-1]
    dgamma = (g * xhat).reshape(-1, d).sum(axis=0)
    dbeta = g.reshape(-1, d).sum(axis=0)
    return da, dgamma, dbeta


def _b_relu(g, out, ins, static):
    return (g * (ins[0] > 0),)


def _b_gelu(g, out, ins, static):
    a = ins[0]
    cdf = 0.5 * (1.0 + erf(a * a.dtype.type(_INV_SQRT2)))
    pdf = np.exp(-0.5 * a * a) * a.dtype.type(_INV_SQRT2PI)
    return ((g * (cdf + a * pdf)).astype(a.dtype),)


def _b_sigmoid(g, out, ins, static):
    return (g * out * (1.0 - out),)


def _b_tanh(g, out, ins, static):
    return (g * (1.0 - out * out),)


def _b_conv1d(g, out, ins, static):
    x, w, b = ins
    B, C, L = x.shape
    O, _, K = w.shape
    p = (K - 1) // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p)))
    gw = np.zeros_like(w)
    gxp = np.zeros_like(xp)
    for k in range(K):
        win = xp[:, :, k:k + L]
        gw[:, :, k] = np.einsum("bol,bcl->oc", g, win)
        gxp[:, :, k:k + L] += np.matmul(w[:, :, k].T, g)
    gx = gxp[:, :, p:p + L] if p else gxp
    gb = None if b is None else g.sum(axis=(0, 2))
    return gx, gw, gb


def _b_conv2d(g, out, ins, static):
    x, w, b = ins
    B, C, H, W = x.shape
    O, _, Kh, Kw = w.shape
    ph, pw = (Kh - 1) // 2, (Kw - 1) // 2
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    gw = np.zeros_like(w)
    gxp = np.zeros_like(xp)
    gf = g.reshape(B, O, H * W)
    for u in range(Kh):
        for v in range(Kw):
            win = xp[:, :, u:u + H, v:v + W].reshape(B, C, H * W)
            gw[:, :, u, v] = np.matmul(gf, np.swapaxes(win, -1, -2)).sum(axis=0)
            gxp[:, :, u:u + H, v:v + W] += np.matmul(w[:, :, u, v].T, gf).reshape(B, C, H, W)
    gx = gxp[:, :, ph:ph + H, pw:pw + W] if (ph or pw) else gxp
    gb = None if b is None else g.sum(axis=(0, 2, 3))
    return gx, gw, gb


def _b_gather_tokens(g, out, ins, static):
    a = ins[0]
    idx = static["idx"]
    z = np.zeros_like(a)
    np.add.at(z, (np.arange(a.shape[0])[:, None], idx), g)
    return (z,)


def _b_cross_entropy(g, out, ins, static):
    logits = ins[0]
    labels = static["labels"]
    p = _f_softmax(logits)
    p[np.arange(len(labels)), labels] -= 1.0
    return (p * (g / logits.dtype.type(len(labels))),)


def _b_chamfer(g, out, ins, static):
    pred = ins[0]
    target = static["target"].astype(pred.dtype)
    n, m = len(pred), len(target)
    d2 = _pairwise_sq_dists(pred, target)
    nn_pt = d2.argmin(axis=1)      # nearest target for each pred point
    nn_tp = d2.argmin(axis=0)      # nearest pred point for each target
    grad = (2.0 / n) * (pred - target[nn_pt])
    np.add.at(grad, nn_tp, (2.0 / m) * (pred[nn_tp] - target))
    return ((grad * g).astype(pred.dtype),)


_FORWARD = {
    "matmul": _f_matmul, "add": _f_add, "subtract": _f_subtract,
    "multiply": _f_multiply, "scale": _f_scale, "reshape": _f_reshape,
    "transpose": _f_transpose, "slice": _f_slice, "concat": _f_concat,
    "reduce_sum": _f_reduce_sum, "reduce_mean": _f_reduce_mean,
    "softmax": _f_softmax, "layer_norm": _f_layer_norm, "relu": _f_relu,
    "gelu": _f_gelu, "sigmoid": _f_sigmoid, "tanh": _f_tanh,
    "conv1d": _f_conv1d, "conv2d": _f_conv2d, "gather_tokens": _f_gather_tokens,
    "cross_entropy": _f_cross_entropy, "chamfer": _f_chamfer,
}

_BACKWARD = {
    "matmul": _b_matmul, "add": _b_add, "subtract": _b_subtract,
    "multiply": _b_multiply, "scale": _b_scale, "reshape": _b_reshape,
    "transpose": _b_transpose, "slice": _b_slice, "concat": _b_concat,
    "reduce_sum": _b_reduce_sum, "reduce_mean": _b_reduce_mean,
    "softmax": _b_softmax, "layer_norm": _b_layer_norm, "relu": _b_relu,
    "gelu": _b_gelu, "sigmoid": _b_sigmoid, "tanh": _b_tanh,
    "conv1d": _b_conv1d, "conv2d": _b_conv2d, "gather_tokens": _b_gather_tokens,
    "cross_entropy": _b_cross_entropy, "chamfer": _b_chamfer,
}

PRIMITIVES = tuple(sorted(_FORWARD))


@dataclass(frozen=True)
class Node:
    """Handle to one recorded value."""

    tape: "Tape"
    index: int

    @property
    def value(self) -> np.ndarray:
        return self.tape.values[self.index]

    @property
    def shape(self) -> tuple:
        return self.tape.values[self.index].shape

    def __add__(self, other):
        return self.tape.add(self, other)

    def __sub__(self, other):
        return self.tape.subtract(self, other)

    def __mul__(self, other):
        return self.tape.multiply(self, other)

    def __matmul__(self, other):
        return self.tape.matmul(self, other)


@dataclass(frozen=True)
class _Entry:
    op: str                 # "param", "const", or a primitive name
    inputs: tuple           # input node indices
    static: dict = field(default_factory=dict)
    name: str = ""          # parameter name for "param" entries


class Tape:
    """Recorded computation: leaves plus a topologically ordered op list.

    Static arguments of the chamfer and cross-entropy losses carry their
    (non-differentiable) reference data; everything differentiable goes in
    as a parameter or constant node.
    """

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self.values: list[np.ndarray] = []
        self.entries: list[_Entry] = []
        self.param_index: dict[str, int] = {}
        self._requires: list[bool] = []

    # -- leaves -------------------------------------------------------------

    def parameter(self, name: str, value: np.ndarray) -> Node:
        """Register a named trainable leaf; idempotent per name."""
        if name in self.param_index:
            i = self.param_index[name]
            if self.values[i] is not value:
                raise ContractError(f"parameter {name!r} re-registered with a different array")
            return Node(self, i)
        arr = np.asarray(value, dtype=self.dtype)
        self.param_index[name] = len(self.values)
        return self._push(arr, _Entry("param", (), name=name), requires=True)

    def constant(self, value) -> Node:
        arr = np.asarray(value, dtype=self.dtype)
        return self._push(arr, _Entry("const", ()), requires=False)

    def _push(self, value, entry, requires) -> Node:
        self.values.append(value)
        self.entries.append(entry)
        self._requires.append(requires)
        return Node(self, len(self.values) - 1)

    # -- op application -----------------------------------------------------

    def _apply(self, op: str, nodes: tuple, static: dict | None = None) -> Node:
        static = static or {}
        vals = [self.values[n.index] if n is not None else None for n in nodes]
        try:
            out = _FORWARD[op](*vals, **static)
        except ContractError as e:
            raise ContractError(f"entry {len(self.entries)} ({op}): {e}") from None
        except (ValueError, IndexError) as e:
            raise ContractError(f"entry {len(self.entries)} ({op}): {e}") from None
        requires = any(
            self._requires[n.index] for n in nodes if n is not None
        )
        idx = tuple(n.index if n is not None else -1 for n in nodes)
        return self._push(np.asarray(out), _Entry(op, idx, static), requires)

    def matmul(self, a, b):
        return self._apply("matmul", (a, b))

    def add(self, a, b):
        return self._apply("add", (a, b))

    def subtract(self, a, b):
        return self._apply("subtract", (a, b))

    def multiply(self, a, b):
        return self._apply("multiply", (a, b))

    def scale(self, a, factor):
        return self._apply("scale", (a,), {"factor": float(factor)})

    def reshape(self, a, shape):
        return self._apply("reshape", (a,), {"shape": tuple(shape)})

    def transpose(self, a, axes=None):
        return self._apply("transpose", (a,), {"axes": tuple(axes) if axes is not None else None})

    def slice(self, a, key):
        return self._apply("slice", (a,), {"key": key})

    def concat(self, nodes, axis=0):
        return self._apply("concat", tuple(nodes), {"axis": int(axis)})

    def reduce_sum(self, a, axis=None, keepdims=False):
        return self._apply("reduce_sum", (a,), {"axis": axis, "keepdims": keepdims})

    def reduce_mean(self, a, axis=None, keepdims=False):
        return self._apply("reduce_mean", (a,), {"axis": axis, "keepdims": keepdims})

    def softmax(self, a):
        return self._apply("softmax", (a,))

    def layer_norm(self, a, gamma, beta, eps=1e-5):
        return self._apply("layer_norm", (a, gamma, beta), {"eps": float(eps)})

    def relu(self, a):
        return self._apply("relu", (a,))

    def gelu(self, a):
        return self._apply("gelu", (a,))

    def sigmoid(self, a):
        return self._apply("sigmoid", (a,))

    def tanh(self, a):
        return self._apply("tanh", (a,))

    def conv1d(self, x, w, b=None):
        return self._apply("conv1d", (x, w, b))

    def conv2d(self, x, w, b=None):
        return self._apply("conv2d", (x, w, b))

    def gather_tokens(self, a, idx):
        idx = np.asarray(idx, dtype=np.int64)
        return self._apply("gather_tokens", (a,), {"idx": idx})

    def cross_entropy(self, logits, labels):
        labels = np.asarray(labels, dtype=np.int64)
        return self._apply("cross_entropy", (logits,), {"labels": labels})

    def chamfer(self, pred, target):
        target = np.asarray(target, dtype=np.float64)
        return self._apply("chamfer", (pred,), {"target": target})

    # -- execution ----------------------------------------------------------

    def backward(self, output: Node, seed_gradient: np.ndarray | None = None) -> dict[str, np.ndarray]:
        """Gradients of `output` w.r.t. every registered parameter.

        Parameters the output does not depend on get zero gradients.
        """
        out_val = self.values[output.index]
        if seed_gradient is None:
            seed = np.ones_like(out_val)
        else:
            seed = np.asarray(seed_gradient, dtype=self.dtype)
            if seed.shape != out_val.shape:
                raise ContractError(
                    f"seed gradient shape {seed.shape} != output shape {out_val.shape}"
                )
        grads: dict[int, np.ndarray] = {output.index: seed}
        for i in range(output.index, -1, -1):
            entry = self.entries[i]
            if entry.op in ("param", "const") or i not in grads:
                continue
            if not self._requires[i]:
                continue
            g = grads.pop(i)
            in_vals = [self.values[j] if j >= 0 else None for j in entry.inputs]
            gins = _BACKWARD[entry.op](g, self.values[i], in_vals, entry.static)
            for j, gin in zip(entry.inputs, gins):
                if j < 0 or gin is None or not self._requires[j]:
                    continue
                if j in grads:
                    grads[j] = grads[j] + gin
                else:
                    grads[j] = gin
        result = {}
        for name, idx in self.param_index.items():
            g = grads.get(idx)
            result[name] = np.zeros_like(self.values[idx]) if g is None else np.asarray(g)
        return result

    def replay(self, overrides: dict[int, np.ndarray] | None = None) -> list[np.ndarray]:
        """Re-execute the tape from its leaves; bit-exact without overrides."""
        overrides = overrides or {}
        vals: list[np.ndarray] = []
        for i, entry in enumerate(self.entries):
            if entry.op in ("param", "const"):
                vals.append(overrides.get(i, self.values[i]))
            else:
                ins = [vals[j] if j >= 0 else None for j in entry.inputs]
                vals.append(np.asarray(_FORWARD[entry.op](*ins, **entry.static)))
        return vals


def backpropagate(tape: Tape, output: Node, seed_gradient: np.ndarray | None = None):
    """Functional alias for Tape.backward."""
    return tape.backward(output, seed_gradient)


# ---------------------------------------------------------------------------
# Finite-difference verification
# ---------------------------------------------------------------------------


@dataclass
class GradCheckEntry:
    name: str
    max_rel_err: float
    passed: bool


@dataclass
class GradCheckReport:
    entries: list[GradCheckEntry]
    tolerance: float

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries)

    def worst(self) -> float:
        return max((e.max_rel_err for e in self.entries), default=0.0)


def finite_difference_check(
    tape: Tape,
    output: Node,
    tolerance: float = 1e-4,
    step: float = 1e-4,
) -> GradCheckReport:
    """Compare analytic gradients against central differences per parameter.

    The recorded output must be scalar.  Use a float64 tape; float32 has
    too little headroom for the difference quotient.
    """
    if tape.values[output.index].size != 1:
        raise ContractError("finite_difference_check needs a scalar output")
    analytic = tape.backward(output)
    entries = []
    for name, idx in tape.param_index.items():
        base = tape.values[idx]
        numeric = np.zeros_like(base)
        flat = base.reshape(-1)
        num_flat = numeric.reshape(-1)
        for j in range(flat.size):
            for sign in (+1.0, -1.0):
                pert = base.copy().reshape(-1)
                pert[j] += sign * step
                vals = tape.replay({idx: pert.reshape(base.shape)})
                num_flat[j] += sign * float(vals[output.index])
            num_flat[j] /= 2.0 * step
        a = analytic[name]
        # floor keeps truncation noise on analytically-zero gradients from
        # registering as relative error
        denom = np.maximum(np.maximum(np.abs(a), np.abs(numeric)), 1e-5)
        err = float(np.max(np.abs(a - numeric) / denom)) if a.size else 0.0
        entries.append(GradCheckEntry(name, err, err < tolerance))
    return GradCheckReport(entries, tolerance)
