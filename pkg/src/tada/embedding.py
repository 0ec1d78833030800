"""Per-timestep feature attention.

Each timestep's observed (value, feature) pairs are encoded, summarized by
a mean-pooled MLP, and aggregated by attention into one vector per step.
The step's time is prepended unchanged, so row k of the output is
``[t_k, attended features]``.  The result is permutation invariant in the
order of a step's observations.
"""

from __future__ import annotations

import math

import numpy as np

from .tensor import (Tensor, broadcast_to, concat, gather, masked_softmax,
                     matmul, mul, relu, reshape)


def encode_observations(params: dict, prep, cfg) -> Tensor:
    """(N, enc) encoded observation matrix for all observations of a sample."""
    if cfg.te_mode == "embedding":
        emb = gather(params["te.embed"], prep.feat_idx)
        return concat([Tensor(prep.values_col), emb], axis=1)
    return Tensor(prep.enc_literal)


def te_forward(params: dict, prep, cfg, with_time: bool = True) -> Tensor:
    """Embed one sample's steps; returns (T, embed_dim + 1).

    with_time=False skips the time column and returns the bare attended
    feature embeddings (T, embed_dim); the time concat belongs to the
    key construction of the local-attention stage.
    """
    x_enc = encode_observations(params, prep, cfg)
    h = relu(matmul(x_enc, params["te.fit.w1"]) + params["te.fit.b1"])
    h = matmul(h, params["te.fit.w2"]) + params["te.fit.b2"]
    step_summary = matmul(Tensor(prep.seg_mean), h)            # (T, summary_dim)
    per_obs_summary = matmul(Tensor(prep.seg_pick), step_summary)
    keys = matmul(concat([per_obs_summary, x_enc], axis=1), params["te.key.w"])
    scores = mul(matmul(keys, params["te.query"]), 1.0 / math.sqrt(cfg.embed_dim))
    n_obs = prep.values_col.shape[0]
    tiled = broadcast_to(reshape(scores, (1, n_obs)), (len(prep.times), n_obs))
    weights = masked_softmax(tiled, prep.seg_mask)             # rows sum to 1
    attended = matmul(weights, matmul(x_enc, params["te.value.w"]))
    if not with_time:
        return attended
    return concat([Tensor(prep.t_col), attended], axis=1)
