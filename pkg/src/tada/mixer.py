"""Hierarchical MLP mixer over the anchor grid.

The (L, C) grid splits into L/p patches of p tokens.  Each layer mixes
channels, then patch positions, then channels again around a residual, and
finally shrinks every patch by the merge factor m before regrouping m
adjacent patches into one, halving (for m=2) the token count per layer.
Every layer's pre-merge activations feed the fusion block, which pools each
scale to a common token length, combines them, and maps through an MLP.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError
from .tensor import Tensor, add, concat, matmul, mul, relu, reshape, transpose

_POOL_CACHE: dict[tuple[int, int], np.ndarray] = {}


def adaptive_pool_matrix(n_in: int, n_out: int) -> np.ndarray:
    """(n_out, n_in) row-stochastic matrix averaging input bins per output slot."""
    key = (n_in, n_out)
    mat = _POOL_CACHE.get(key)
    if mat is None:
        mat = np.zeros((n_out, n_in))
        for i in range(n_out):
            lo = (i * n_in) // n_out
            hi = -(-((i + 1) * n_in) // n_out)  # ceil
            mat[i, lo:hi] = 1.0 / (hi - lo)
        _POOL_CACHE[key] = mat
    return mat


def patchify(grid: Tensor, patch_size: int) -> Tensor:
    """(L, C) -> (L / patch_size, patch_size, C), consecutive rows per patch."""
    L, C = grid.shape
    if L % patch_size != 0:
        raise DimensionError(f"patchify: {L} rows not divisible by patch size {patch_size}")
    return reshape(grid, (L // patch_size, patch_size, C))


def mixer_block(x: Tensor, w_in: Tensor, w_across: Tensor, w_out: Tensor) -> Tensor:
    """relu(x + mix(x)): channel mix, patch-axis mix, channel mix, residual.

    With all three weights zero this is the identity on non-negative input.
    """
    P, p, C = x.shape
    t = matmul(x, w_in)                                   # channels
    t = reshape(matmul(w_across, reshape(t, (P, p * C))), (P, p, C))  # across patches
    t = matmul(t, w_out)                                  # channels
    return relu(add(x, t))


def patch_merge(x: Tensor, w_pool: Tensor, merge_factor: int) -> Tensor:
    """Shrink each patch p -> p/m, then regroup m adjacent patches into one.

    (P, p, C) -> (P/m, p, C); token count drops by the merge factor.
    """
    P, p, C = x.shape
    if P % merge_factor != 0:
        raise DimensionError(
            f"patch_merge: {P} patches not divisible by merge factor {merge_factor}")
    t = matmul(transpose(x, (0, 2, 1)), w_pool)           # (P, C, p/m)
    t = transpose(t, (0, 2, 1))                           # (P, p/m, C)
    return reshape(t, (P // merge_factor, p, C))


def run_mixer(grid: Tensor, params: dict, cfg) -> list[Tensor]:
    """Apply the layer stack; returns each layer's pre-merge activations."""
    x = patchify(grid, cfg.patch_size)
    outs = []
    for layer in range(cfg.n_layers):
        x_out = mixer_block(x, params[f"mixer.l{layer}.mix_in.w"],
                            params[f"mixer.l{layer}.across.w"],
                            params[f"mixer.l{layer}.mix_out.w"])
        outs.append(x_out)
        x = patch_merge(x_out, params[f"mixer.l{layer}.pool.w"], cfg.merge_factor)
    return outs


def fuse(outs: list[Tensor], params: dict, cfg) -> Tensor:
    """Pool every scale to a shared token length and combine; (l_c, C) out."""
    flats = []
    for x in outs:
        if x.ndim == 3:
            P, p, C = x.shape
            flats.append(reshape(x, (P * p, C)))
        else:
            flats.append(x)
    l_c = cfg.fusion_tokens or flats[-1].shape[0]
    pooled = [matmul(Tensor(adaptive_pool_matrix(f.shape[0], l_c)), f) for f in flats]
    if cfg.fusion_mode == "concat":
        combined = concat(pooled, axis=1)
    else:
        combined = pooled[0]
        for q in pooled[1:]:
            combined = mul(combined, q) if cfg.fusion_mode == "multiply" else add(combined, q)
    h = relu(add(matmul(combined, params["fusion.w1"]), params["fusion.b1"]))
    return add(matmul(h, params["fusion.w2"]), params["fusion.b2"])


def classify(fused: Tensor, params: dict, out_len: int) -> Tensor:
    """Pool fused tokens to out_len rows and apply the linear head."""
    pooled = matmul(Tensor(adaptive_pool_matrix(fused.shape[0], out_len)), fused)
    return add(matmul(pooled, params["head.w"]), params["head.b"])
