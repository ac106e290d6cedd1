"""Shared test utilities: miniature graphs for gradient checks."""

import numpy as np

from chanfm.autodiff import Tape, finite_difference_check


def check_graph(build, tolerance=1e-4, step=1e-4, seed=0):
    """Build a scalar graph on a float64 tape and finite-difference check it."""
    tape = Tape(np.float64)
    rng = np.random.default_rng(seed)
    out = build(tape, rng)
    report = finite_difference_check(tape, out, tolerance=tolerance, step=step)
    assert report.passed, {e.name: e.max_rel_err for e in report.entries if not e.passed}
    return report


def primitive_graphs():
    """One scalar-output builder per differentiable primitive."""

    def weighted_sum(tape, node, rng):
        r = tape.constant(rng.standard_normal(node.shape))
        return tape.reduce_sum(tape.multiply(node, r))

    def g_matmul(t, rng):
        a = t.parameter("a", rng.standard_normal((2, 3)))
        b = t.parameter("b", rng.standard_normal((3, 4)))
        return weighted_sum(t, t.matmul(a, b), rng)

    def g_matmul_batched(t, rng):
        a = t.parameter("a", rng.standard_normal((2, 2, 3, 4)))
        b = t.parameter("b", rng.standard_normal((4, 3)))
        return weighted_sum(t, t.matmul(a, b), rng)

    def g_add(t, rng):
        a = t.parameter("a", rng.standard_normal((2, 3)))
        b = t.parameter("b", rng.standard_normal(3))
        return weighted_sum(t, t.add(a, b), rng)

    def g_subtract(t, rng):
        a = t.parameter("a", rng.standard_normal((2, 3)))
        b = t.parameter("b", rng.standard_normal((2, 3)))
        return weighted_sum(t, t.subtract(a, b), rng)

    def g_multiply(t, rng):
        a = t.parameter("a", rng.standard_normal((2, 3)))
        b = t.parameter("b", rng.standard_normal((1, 3)))
        return weighted_sum(t, t.multiply(a, b), rng)

    def g_scale(t, rng):
        a = t.parameter("a", rng.standard_normal((3, 2)))
        return weighted_sum(t, t.scale(a, -1.7), rng)

    def g_reshape(t, rng):
        a = t.parameter("a", rng.standard_normal((2, 6)))
        return weighted_sum(t, t.reshape(a, (3, 4)), rng)

    def g_transpose(t, rng):
        a = t.parameter("a", rng.standard_normal((2, 3, 4)))
        return weighted_sum(t, t.transpose(a, (2, 0, 1)), rng)

    def g_slice(t, rng):
        a = t.parameter("a", rng.standard_normal((4, 5)))
        return weighted_sum(t, t.slice(a, (slice(1, 3), slice(None, None, 2))), rng)

    def g_concat(t, rng):
        a = t.parameter("a", rng.standard_normal((2, 3)))
        b = t.parameter("b", rng.standard_normal((2, 2)))
        return weighted_sum(t, t.concat([a, b], axis=1), rng)

    def g_reduce_sum(t, rng):
        a = t.parameter("a", rng.standard_normal((3, 4, 2)))
        return weighted_sum(t, t.reduce_sum(a, axis=1), rng)

    def g_reduce_mean(t, rng):
        a = t.parameter("a", rng.standard_normal((3, 4, 2)))
        return weighted_sum(t, t.reduce_mean(a, axis=(0, 2)), rng)

    def g_softmax(t, rng):
        a = t.parameter("a", rng.standard_normal((3, 5)))
        return weighted_sum(t, t.softmax(a), rng)

    def g_layer_norm(t, rng):
        a = t.parameter("a", rng.standard_normal((4, 6)))
        g = t.parameter("g", 1.0 + 0.1 * rng.standard_normal(6))
        b = t.parameter("b", 0.1 * rng.standard_normal(6))
        return weighted_sum(t, t.layer_norm(a, g, b), rng)

    def g_relu(t, rng):
        # keep inputs away from the kink so central differences are valid
        x = rng.standard_normal((3, 4))
        x = np.where(np.abs(x) < 0.2, x + 0.5, x)
        a = t.parameter("a", x)
        return weighted_sum(t, t.relu(a), rng)

    def g_gelu(t, rng):
        a = t.parameter("a", rng.standard_normal((3, 4)))
        return weighted_sum(t, t.gelu(a), rng)

    def g_sigmoid(t, rng):
        a = t.parameter("a", rng.standard_normal((3, 4)))
        return weighted_sum(t, t.sigmoid(a), rng)

    def g_tanh(t, rng):
        a = t.parameter("a", rng.standard_normal((3, 4)))
        return weighted_sum(t, t.tanh(a), rng)

    def g_conv1d(t, rng):
        x = t.parameter("x", rng.standard_normal((2, 3, 7)))
        w = t.parameter("w", rng.standard_normal((4, 3, 3)) * 0.5)
        b = t.parameter("b", rng.standard_normal(4) * 0.1)
        return weighted_sum(t, t.conv1d(x, w, b), rng)

    def g_conv2d(t, rng):
        x = t.parameter("x", rng.standard_normal((2, 2, 5, 6)))
        w = t.parameter("w", rng.standard_normal((3, 2, 3, 3)) * 0.5)
        b = t.parameter("b", rng.standard_normal(3) * 0.1)
        return weighted_sum(t, t.conv2d(x, w, b), rng)

    def g_gather(t, rng):
        a = t.parameter("a", rng.standard_normal((2, 5, 3)))
        idx = np.array([[0, 2, 4], [1, 1, 3]])
        return weighted_sum(t, t.gather_tokens(a, idx), rng)

    def g_cross_entropy(t, rng):
        logits = t.parameter("logits", rng.standard_normal((4, 6)))
        return t.cross_entropy(logits, np.array([0, 2, 5, 1]))

    def g_chamfer(t, rng):
        pred = t.parameter("pred", rng.standard_normal((6, 3)))
        target = rng.standard_normal((5, 3)) + 4.0   # well separated: stable assignments
        return t.chamfer(pred, target)

    return {
        "matmul": g_matmul, "matmul_batched": g_matmul_batched, "add": g_add,
        "subtract": g_subtract, "multiply": g_multiply, "scale": g_scale,
        "reshape": g_reshape, "transpose": g_transpose, "slice": g_slice,
        "concat": g_concat, "reduce_sum": g_reduce_sum, "reduce_mean": g_reduce_mean,
        "softmax": g_softmax, "layer_norm": g_layer_norm, "relu": g_relu,
        "gelu": g_gelu, "sigmoid": g_sigmoid, "tanh": g_tanh,
        "conv1d": g_conv1d, "conv2d": g_conv2d, "gather_tokens": g_gather,
        "cross_entropy": g_cross_entropy, "chamfer": g_chamfer,
    }
