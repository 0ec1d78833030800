"""Shared builders for model-level tests."""

import numpy as np

from tada.config import RunConfig
from tada.data import IrregularSeries, Observation, TimeStep
from tada.model import TadaModel


def build_series(steps_spec, sid="s", label=0):
    """steps_spec: [(time, [(feature, value), ...]), ...]."""
    steps = tuple(
        TimeStep(time=float(t), observations=tuple(
            Observation(int(f), float(v)) for f, v in obs))
        for t, obs in steps_spec)
    return IrregularSeries(sample_id=sid, steps=steps, label=label)


def random_series(rng, n_steps, n_features, sid="s", label=0):
    """Strictly increasing times in (0, 1), 1..n_features observations per step."""
    times = (np.arange(n_steps) + rng.uniform(0.2, 0.8, size=n_steps)) / n_steps
    spec = []
    for t in times:
        feats = rng.choice(n_features, size=rng.integers(1, n_features + 1),
                           replace=False)
        spec.append((t, [(int(f), float(rng.normal())) for f in sorted(feats)]))
    return build_series(spec, sid=sid, label=label)


def tiny_config(**overrides):
    base = dict(te_feature_dim=3, summary_dim=6, embed_dim=5,
                n_queries=4, n_heads=2, attn_dim=4,
                patch_channels=6, patch_size=2, merge_factor=2, n_layers=1,
                seed=0)
    base.update(overrides)
    return RunConfig(**base).validate()


def tiny_model(n_features=3, n_classes=2, task="sequence", **overrides):
    return TadaModel(tiny_config(**overrides), n_features, n_classes, task)


def redraw_params(model, seed=0, keep=("dla.range_raw",)):
    """Move weights to a generic O(1) point for finite-difference checks.

    Fresh models start with zero biases and near-zero queries, leaving some
    analytic gradients below the difference-quotient noise floor.
    """
    rng = np.random.default_rng(seed)
    for name, p in model.params.items():
        if name in keep:
            continue
        p.data = rng.uniform(-0.5, 0.5, size=p.data.shape)
