"""Patch tokenization of channel tensors, positional encoding, and masking.

A channel tensor [T, S, F] is cut into uniform 3-D patches of extent
(t, s, f); each patch flattens to 2*t*s*f reals (real/imag interleaved on
the last axis) and becomes one token row.  Rows are ordered t-major, then
s, then f.  Non-divisible axes are zero-padded unless the spec demands
strict division; padded scalar positions are tracked so losses can skip
them.

Positional information is additive and sinusoidal in the spatial and
frequency domains only; temporal order is left to causal attention.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .cpx import from_pair, to_pair

SPATIAL_PE_TEMPERATURE = 10000.0
FREQUENCY_PE_TEMPERATURE = 311.0


class TokenizerError(ValueError):
    pass


@dataclass(frozen=True)
class PatchSpec:
    t: int
    s: int
    f: int
    d_model: int
    pad: str = "zero"        # "zero" | "strict"

    def __post_init__(self):
        if min(self.t, self.s, self.f) < 1:
            raise TokenizerError(f"patch extents must be >= 1: {(self.t, self.s, self.f)}")
        if self.d_model < 8 or self.d_model % 2:
            raise TokenizerError(f"d_model must be even and >= 8, got {self.d_model}")
        if self.pad not in ("zero", "strict"):
            raise TokenizerError(f"unknown padding policy {self.pad!r}")

    @property
    def raw_width(self) -> int:
        return 2 * self.t * self.s * self.f

    def grid(self, shape) -> tuple:
        T, S, F = shape
        if self.pad == "strict" and (T % self.t or S % self.s or F % self.f):
            raise TokenizerError(f"shape {shape} not divisible by patch {(self.t, self.s, self.f)}")
        return (math.ceil(T / self.t), math.ceil(S / self.s), math.ceil(F / self.f))

    def num_tokens(self, shape) -> int:
        nt, ns, nf = self.grid(shape)
        return nt * ns * nf


def patch_positions(shape, spec: PatchSpec) -> np.ndarray:
    """(t, s, f) patch-grid index triplet per token row, t-major order."""
    nt, ns, nf = spec.grid(shape)
    ti, si, fi = np.meshgrid(np.arange(nt), np.arange(ns), np.arange(nf), indexing="ij")
    return np.stack([ti.ravel(), si.ravel(), fi.ravel()], axis=1).astype(np.int64)


def patch_validity(shape, spec: PatchSpec) -> np.ndarray:
    """1.0 where a patch scalar maps inside the original tensor, 0.0 on padding."""
    T, S, F = shape
    nt, ns, nf = spec.grid(shape)
    inside = np.zeros((nt * spec.t, ns * spec.s, nf * spec.f, 2), dtype=np.float64)
    inside[:T, :S, :F, :] = 1.0
    return _fold(inside, spec, (nt, ns, nf))


def _fold(padded: np.ndarray, spec: PatchSpec, grid) -> np.ndarray:
    nt, ns, nf = grid
    lead = padded.shape[:-4]
    x = padded.reshape(lead + (nt, spec.t, ns, spec.s, nf, spec.f, 2))
    order = tuple(range(len(lead)))
    x = x.transpose(order + tuple(len(lead) + k for k in (0, 2, 4, 1, 3, 5, 6)))
    return x.reshape(lead + (nt * ns * nf, spec.raw_width))


def partition_patches(values: np.ndarray, spec: PatchSpec) -> np.ndarray:
    """Channel tensor(s) -> raw patch matrix [..., N, 2*t*s*f]; lossless with padding."""
    values = np.asarray(values)
    if values.ndim < 3:
        raise TokenizerError(f"expected [..., T, S, F], got shape {values.shape}")
    shape = values.shape[-3:]
    nt, ns, nf = spec.grid(shape)
    pair = to_pair(values) if np.iscomplexobj(values) else np.stack(
        [values, np.zeros_like(values)], axis=-1)
    pad = [(0, 0)] * (pair.ndim - 4) + [
        (0, nt * spec.t - shape[0]),
        (0, ns * spec.s - shape[1]),
        (0, nf * spec.f - shape[2]),
        (0, 0),
    ]
    return _fold(np.pad(pair, pad), spec, (nt, ns, nf))


def reassemble_patches(patches: np.ndarray, spec: PatchSpec, shape,
                       positions: np.ndarray | None = None) -> np.ndarray:
    """Exact inverse of partition_patches; returns the complex tensor, padding removed.

    Rows are assumed in canonical t-major order unless `positions` gives the
    (t, s, f) triplet of each row, in which case any row order is accepted.
    """
    patches = np.asarray(patches)
    nt, ns, nf = spec.grid(shape)
    n = nt * ns * nf
    if patches.shape != (n, spec.raw_width):
        raise TokenizerError(
            f"patch matrix {patches.shape} inconsistent with shape {tuple(shape)} "
            f"and patch {(spec.t, spec.s, spec.f)} (want {(n, spec.raw_width)})"
        )
    if positions is not None:
        flat = (positions[:, 0] * ns + positions[:, 1]) * nf + positions[:, 2]
        if len(np.unique(flat)) != n:
            raise TokenizerError("position triplets must cover every patch exactly once")
        order = np.argsort(flat, kind="stable")
        patches = patches[order]
    x = patches.reshape(nt, ns, nf, spec.t, spec.s, spec.f, 2)
    x = x.transpose(0, 3, 1, 4, 2, 5, 6)
    full = x.reshape(nt * spec.t, ns * spec.s, nf * spec.f, 2)
    T, S, F = shape
    return from_pair(full[:T, :S, :F])


# ---------------------------------------------------------------------------
# Positional encoding and embedding
# ---------------------------------------------------------------------------


def sinusoidal_encoding(positions: np.ndarray, d_model: int, temperature: float) -> np.ndarray:
    pos = np.asarray(positions, dtype=np.float64)[:, None]
    k = np.arange(d_model // 2, dtype=np.float64)
    rate = temperature ** (-2.0 * k / d_model)
    out = np.empty((len(pos), d_model))
    out[:, 0::2] = np.sin(pos * rate)
    out[:, 1::2] = np.cos(pos * rate)
    return out


def positional_terms(positions: np.ndarray, d_model: int) -> np.ndarray:
    """Additive spatial + frequency encodings; no temporal term."""
    pe_s = sinusoidal_encoding(positions[:, 1], d_model, SPATIAL_PE_TEMPERATURE)
    pe_f = sinusoidal_encoding(positions[:, 2], d_model, FREQUENCY_PE_TEMPERATURE)
    return pe_s + pe_f


@dataclass
class TokenSequence:
    tokens: np.ndarray        # [N, d_model]
    positions: np.ndarray     # [N, 3] (t, s, f) patch indices
    source_shape: tuple       # originating (T, S, F)

    def __post_init__(self):
        if len(self.tokens) != len(self.positions):
            raise TokenizerError("token and position counts differ")


def embed_patches(patches: np.ndarray, spec: PatchSpec, weights: np.ndarray,
                  source_shape, include_positions: bool = True) -> TokenSequence:
    """token = patch @ W plus spatial/frequency positional terms."""
    if weights.shape != (spec.raw_width, spec.d_model):
        raise TokenizerError(
            f"embedding weights {weights.shape} != ({spec.raw_width}, {spec.d_model})"
        )
    if patches.shape[-1] != spec.raw_width:
        raise TokenizerError(f"patch width {patches.shape[-1]} != {spec.raw_width}")
    pos = patch_positions(source_shape, spec)
    tokens = patches.astype(weights.dtype) @ weights
    if include_positions:
        tokens = tokens + positional_terms(pos, spec.d_model).astype(weights.dtype)
    return TokenSequence(tokens, pos, tuple(source_shape))


# ---------------------------------------------------------------------------
# Masking
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MaskPlan:
    indices: np.ndarray       # sorted unique token indices
    ratio: float
    seed: int

    def __post_init__(self):
        idx = self.indices
        if len(np.unique(idx)) != len(idx):
            raise TokenizerError("mask indices must be unique")


def plan_mask(n_tokens: int, ratio: float, seed: int) -> MaskPlan:
    """Uniform sample without replacement of round(ratio * N) token indices."""
    if not 0.0 <= ratio <= 1.0:
        raise TokenizerError(f"mask ratio must lie in [0, 1], got {ratio}")
    count = int(round(ratio * n_tokens))
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(n_tokens, size=count, replace=False)).astype(np.int64)
    return MaskPlan(idx, ratio, seed)


def apply_mask(seq: TokenSequence, plan: MaskPlan, mask_token: np.ndarray) -> TokenSequence:
    """Replace masked rows with the mask token plus their positional terms."""
    n, d = seq.tokens.shape
    if len(plan.indices) and plan.indices.max() >= n:
        raise TokenizerError(f"mask index {plan.indices.max()} out of range for {n} tokens")
    if mask_token.shape != (d,):
        raise TokenizerError(f"mask token shape {mask_token.shape} != ({d},)")
    tokens = seq.tokens.copy()
    if len(plan.indices):
        pe = positional_terms(seq.positions[plan.indices], d).astype(tokens.dtype)
        tokens[plan.indices] = mask_token[None, :] + pe
    return TokenSequence(tokens, seq.positions, seq.source_shape)
