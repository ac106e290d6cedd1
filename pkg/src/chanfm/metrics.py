"""Evaluation metrics: normalized MSE, symmetric Chamfer distance, accuracy."""

from __future__ import annotations

import numpy as np


class MetricError(ValueError):
    pass


def nmse(estimate: np.ndarray, truth: np.ndarray, batch_axis: int | None = None) -> float:
    """||estimate - truth||^2 / ||truth||^2.

    With `batch_axis` set, the ratio is formed per sample along that axis
    and the ratios are averaged.  Accepts real or complex arrays.
    """
    estimate = np.asarray(estimate)
    truth = np.asarray(truth)
    if estimate.shape != truth.shape:
        raise MetricError(f"shape mismatch: {estimate.shape} vs {truth.shape}")
    err = np.abs(estimate - truth) ** 2
    pwr = np.abs(truth) ** 2
    if batch_axis is None:
        denom = pwr.sum()
        if denom == 0.0:
            raise MetricError("truth has zero power; NMSE undefined")
        return float(err.sum() / denom)
    axes = tuple(i for i in range(truth.ndim) if i != batch_axis % truth.ndim)
    denom = pwr.sum(axis=axes)
    if np.any(denom == 0.0):
        raise MetricError("a sample of truth has zero power; NMSE undefined")
    return float((err.sum(axis=axes) / denom).mean())


def chamfer_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Symmetric Chamfer distance with squared euclidean terms and per-direction means."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise MetricError(f"point clouds must be [N,D] with equal D: {a.shape}, {b.shape}")
    if len(a) == 0 or len(b) == 0:
        raise MetricError("chamfer distance of an empty point cloud is undefined")
    diff = a[:, None, :] - b[None, :, :]
    d2 = (diff * diff).sum(axis=-1)
    return float(d2.min(axis=1).mean() + d2.min(axis=0).mean())


def accuracy(logits: np.ndarray, labels: np.ndarray) -> float:
    """Argmax match rate; ties resolve to the lowest class index."""
    logits = np.asarray(logits)
    labels = np.asarray(labels)
    if logits.ndim != 2 or len(logits) != len(labels):
        raise MetricError(f"need logits[B,K] and labels[B]: {logits.shape}, {labels.shape}")
    if len(labels) == 0:
        raise MetricError("empty batch")
    return float((logits.argmax(axis=1) == labels).mean())
