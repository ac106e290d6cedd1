"""Complex values as real arrays with a trailing real/imag axis of length 2."""

import numpy as np


def to_pair(z: np.ndarray) -> np.ndarray:
    """complex [...]-array -> real [..., 2]."""
    z = np.asarray(z)
    return np.stack([z.real, z.imag], axis=-1)


def from_pair(x: np.ndarray) -> np.ndarray:
    """real [..., 2] -> complex [...]."""
    x = np.asarray(x)
    if x.shape[-1] != 2:
        raise ValueError(f"trailing axis must have length 2, got shape {x.shape}")
    return x[..., 0] + 1j * x[..., 1]


def pair_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    re = a[..., 0] * b[..., 0] - a[..., 1] * b[..., 1]
    im = a[..., 0] * b[..., 1] + a[..., 1] * b[..., 0]
    return np.stack([re, im], axis=-1)


def pair_conjugate(a: np.ndarray) -> np.ndarray:
    return np.stack([a[..., 0], -a[..., 1]], axis=-1)


def pair_abs2(a: np.ndarray) -> np.ndarray:
    return a[..., 0] ** 2 + a[..., 1] ** 2


def pair_magnitude(a: np.ndarray) -> np.ndarray:
    return np.sqrt(pair_abs2(a))
