"""Model assembly: parameters, per-sample caches, forward pass, file format.

Weight init (seeded, recorded in run manifests): weight matrices draw from
Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) with fan_in the input width;
attention query parameters draw from Normal(0, 0.02^2); biases start at 0;
window radii start at one anchor spacing, t_total / n_queries.

Model files: magic ``TADA1``, little-endian uint32 header length, UTF-8
JSON header (config, dataset dims, parameter names and shapes in
declaration order), then each parameter's float64 values, little-endian,
row-major, in that same order.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass

import numpy as np

from .config import RunConfig
from .data import IrregularSeries, build_value_mask, normalize_times
from .dla import RegularizedGrid, anchor_times, dla_forward
from .embedding import te_forward
from .errors import ConfigError, DataError
from .mixer import adaptive_pool_matrix, classify, fuse, run_mixer
from .tensor import Tensor, concat, cross_entropy_with_logits, matmul, reshape, tmean

MAGIC = b"TADA1"


@dataclass
class SamplePrep:
    """Constant per-sample arrays reused across epochs."""
    sample_id: str
    times: np.ndarray          # (T,) normalized step times
    t_col: np.ndarray          # (T, 1)
    values_col: np.ndarray     # (N, 1) observation values, flattened step order
    feat_idx: np.ndarray       # (N,) feature index per observation
    enc_literal: np.ndarray    # (N, 2) [value, feature index] encoding
    seg_mask: np.ndarray       # (T, N) bool, observation j belongs to step k
    seg_mean: np.ndarray       # (T, N) row-normalized seg_mask
    seg_pick: np.ndarray       # (N, T) transpose selector
    values: np.ndarray         # (T, D) zeros where unobserved
    mask: np.ndarray           # (T, D) bool
    mask3: np.ndarray          # (1, D, T) float
    dt3: np.ndarray            # (L, 1, T) |t_j - anchor_i|
    inbounds3: np.ndarray      # (1, 1, T) float, t_j within [0, t_total]
    anchors: np.ndarray        # (L,)
    t_total: float
    labels: np.ndarray         # (1,) sequence label or (T,) step labels
    out_len: int               # classifier rows: 1 or T


def _inverse_softplus(y: float) -> float:
    return math.log(math.expm1(y))


class TadaModel:
    def __init__(self, cfg: RunConfig, n_features: int, n_classes: int, task: str,
                 rng: np.random.Generator | None = None):
        cfg.validate()
        if task not in ("sequence", "step"):
            raise ConfigError(f"model: task {task!r} unknown")
        if n_features < 1 or n_classes < 2:
            raise ConfigError(
                f"model: need n_features >= 1 and n_classes >= 2, "
                f"got {n_features}/{n_classes}")
        self.cfg = cfg
        self.n_features = n_features
        self.n_classes = n_classes
        self.task = task
        self.t_total = 1.0
        self.anchors = anchor_times(cfg.n_queries, self.t_total)
        self.params: dict[str, Tensor] = {}
        self._build_params(rng or np.random.default_rng(cfg.seed))

    # parameter construction -------------------------------------------------

    def _add(self, name: str, data: np.ndarray) -> None:
        self.params[name] = Tensor(data, requires_grad=True, name=name)

    def _uniform(self, rng, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
        bound = 1.0 / math.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    def _query_init(self, rng, shape: tuple[int, ...]) -> np.ndarray:
        return rng.normal(0.0, 0.02, size=shape)

    def _enc_dim(self) -> int:
        return 1 + self.cfg.te_feature_dim if self.cfg.te_mode == "embedding" else 2

    def _value_channels(self) -> int:
        return self.cfg.embed_dim + 1 if self.cfg.keyvalue_variant == "setting2" \
            else self.n_features

    def _key_dim(self) -> int:
        return self.n_features if self.cfg.keyvalue_variant == "setting1" \
            else self.cfg.embed_dim + 1

    def _mixer_out_tokens(self) -> list[int]:
        cfg = self.cfg
        if cfg.no_mixer:
            return [cfg.n_queries]
        return [cfg.n_queries // cfg.merge_factor ** layer for layer in range(cfg.n_layers)]

    def _build_params(self, rng) -> None:
        cfg = self.cfg
        enc = self._enc_dim()
        d_e = cfg.embed_dim
        if cfg.te_mode == "embedding":
            self._add("te.embed", self._uniform(rng, (self.n_features, cfg.te_feature_dim),
                                                cfg.te_feature_dim))
        self._add("te.fit.w1", self._uniform(rng, (enc, cfg.summary_dim), enc))
        self._add("te.fit.b1", np.zeros(cfg.summary_dim))
        self._add("te.fit.w2", self._uniform(rng, (cfg.summary_dim, cfg.summary_dim),
                                             cfg.summary_dim))
        self._add("te.fit.b2", np.zeros(cfg.summary_dim))
        self._add("te.key.w", self._uniform(rng, (cfg.summary_dim + enc, d_e),
                                            cfg.summary_dim + enc))
        self._add("te.value.w", self._uniform(rng, (enc, d_e), enc))
        self._add("te.query", self._query_init(rng, (d_e,)))

        if cfg.no_dla:
            self._add("grid.proj.w", self._uniform(rng, (d_e, cfg.patch_channels), d_e))
            self._add("grid.proj.b", np.zeros(cfg.patch_channels))
        else:
            d_eff = self._value_channels()
            key_dim = self._key_dim()
            self._add("dla.queries", self._query_init(rng, (cfg.n_queries, d_e + 1)))
            self._add("dla.range_raw",
                      np.full(d_eff, _inverse_softplus(self.t_total / cfg.n_queries)))
            for h in range(cfg.n_heads):
                self._add(f"dla.h{h}.q.w", self._uniform(rng, (d_e + 1, cfg.attn_dim),
                                                         d_e + 1))
                self._add(f"dla.h{h}.k.w", self._uniform(rng, (key_dim, cfg.attn_dim),
                                                         key_dim))
            self._add("dla.out.w", self._uniform(rng, (cfg.n_heads * d_eff, cfg.patch_channels),
                                                 cfg.n_heads * d_eff))
            self._add("dla.out.b", np.zeros(cfg.patch_channels))

        if not cfg.no_mixer:
            patches = cfg.n_queries // cfg.patch_size
            C = cfg.patch_channels
            for layer in range(cfg.n_layers):
                self._add(f"mixer.l{layer}.mix_in.w", self._uniform(rng, (C, C), C))
                self._add(f"mixer.l{layer}.across.w",
                          self._uniform(rng, (patches, patches), patches))
                self._add(f"mixer.l{layer}.mix_out.w", self._uniform(rng, (C, C), C))
                self._add(f"mixer.l{layer}.pool.w",
                          self._uniform(rng, (cfg.patch_size,
                                              cfg.patch_size // cfg.merge_factor),
                                        cfg.patch_size))
                patches //= cfg.merge_factor

        n_scales = 1 if cfg.no_mixer else cfg.n_layers
        fuse_in = cfg.patch_channels * (n_scales if cfg.fusion_mode == "concat" else 1)
        self._add("fusion.w1", self._uniform(rng, (fuse_in, cfg.patch_channels), fuse_in))
        self._add("fusion.b1", np.zeros(cfg.patch_channels))
        self._add("fusion.w2", self._uniform(rng, (cfg.patch_channels, cfg.patch_channels),
                                             cfg.patch_channels))
        self._add("fusion.b2", np.zeros(cfg.patch_channels))
        self._add("head.w", self._uniform(rng, (cfg.patch_channels, self.n_classes),
                                          cfg.patch_channels))
        self._add("head.b", np.zeros(self.n_classes))

    def trainable(self) -> dict[str, Tensor]:
        """Parameters the optimizer may update (radii drop out when frozen)."""
        skip = {"dla.range_raw"} if self.cfg.no_learnable_range else set()
        return {k: v for k, v in self.params.items() if k not in skip}

    def radii(self) -> np.ndarray | None:
        raw = self.params.get("dla.range_raw")
        return None if raw is None else np.logaddexp(0.0, raw.data)

    # per-sample preparation ---------------------------------------------------

    def prepare(self, series: IrregularSeries) -> SamplePrep:
        """Normalize times and precompute every constant the forward pass needs."""
        series = normalize_times(series)
        times = series.times
        T = len(series)
        obs = [(k, o.feature, o.value) for k, step in enumerate(series.steps)
               for o in step.observations]
        N = len(obs)
        step_of = np.array([k for k, _, _ in obs], dtype=np.int64)
        feat_idx = np.array([f for _, f, _ in obs], dtype=np.int64)
        vals = np.array([v for _, _, v in obs])
        seg_mask = np.zeros((T, N), dtype=bool)
        seg_mask[step_of, np.arange(N)] = True
        counts = seg_mask.sum(axis=1, keepdims=True)
        seg_mean = seg_mask / counts
        values, mask = build_value_mask(series, self.n_features)
        dt3 = np.abs(times[None, :] - self.anchors[:, None])[:, None, :]
        if self.task == "step":
            if not isinstance(series.label, tuple):
                raise DataError(f"sample {series.sample_id}: step task needs step labels")
            labels = np.array(series.label, dtype=np.int64)
            out_len = T
        else:
            if isinstance(series.label, tuple):
                raise DataError(f"sample {series.sample_id}: sequence task got step labels")
            labels = np.array([series.label], dtype=np.int64)
            out_len = 1
        if labels.min() < 0 or labels.max() >= self.n_classes:
            raise DataError(
                f"sample {series.sample_id}: label outside [0, {self.n_classes})")
        return SamplePrep(
            sample_id=series.sample_id,
            times=times,
            t_col=times[:, None].copy(),
            values_col=vals[:, None].copy(),
            feat_idx=feat_idx,
            enc_literal=np.stack([vals, feat_idx.astype(np.float64)], axis=1),
            seg_mask=seg_mask,
            seg_mean=seg_mean,
            seg_pick=seg_mask.T.astype(np.float64),
            values=values,
            mask=mask,
            mask3=mask.T[None, :, :].astype(np.float64),
            dt3=dt3,
            inbounds3=((times >= 0.0) & (times <= self.t_total))
            .astype(np.float64)[None, None, :],
            anchors=self.anchors,
            t_total=self.t_total,
            labels=labels,
            out_len=out_len,
        )

    # forward ------------------------------------------------------------------

    def forward(self, prep: SamplePrep, keep_attention: bool = False
                ) -> tuple[Tensor, RegularizedGrid | None]:
        cfg = self.cfg
        if cfg.no_dla:
            # Mixer directly over the per-step feature embeddings, pooled to a
            # fixed token count.  The time concat is part of the local-attention
            # key construction and goes away with that stage.
            embeds = te_forward(self.params, prep, cfg, with_time=False)
            pool = adaptive_pool_matrix(len(prep.times), cfg.n_queries)
            grid_tensor = matmul(Tensor(pool), embeds)
            grid_tensor = matmul(grid_tensor, self.params["grid.proj.w"]) \
                + self.params["grid.proj.b"]
            grid = None
        else:
            x_hat = None
            if cfg.keyvalue_variant != "setting1":
                x_hat = te_forward(self.params, prep, cfg)
            grid = dla_forward(self.params, prep, cfg, x_hat, keep_attention)
            grid_tensor = grid.grid
        outs = [grid_tensor] if cfg.no_mixer else run_mixer(grid_tensor, self.params, cfg)
        fused = fuse(outs, self.params, cfg)
        logits = classify(fused, self.params, prep.out_len)
        return logits, grid

    def sample_loss(self, prep: SamplePrep) -> Tensor:
        logits, _ = self.forward(prep)
        return cross_entropy_with_logits(logits, prep.labels)

    def batch_loss(self, preps: list[SamplePrep]) -> Tensor:
        losses = [reshape(self.sample_loss(p), (1,)) for p in preps]
        return tmean(concat(losses, axis=0))

    def logits(self, prep: SamplePrep) -> np.ndarray:
        out, _ = self.forward(prep)
        return out.data

    # serialization --------------------------------------------------------------

    def save(self, path: str) -> None:
        header = {
            "format": 1,
            "config": self.cfg.to_dict(),
            "n_features": self.n_features,
            "n_classes": self.n_classes,
            "task": self.task,
            "params": [[name, list(t.data.shape)] for name, t in self.params.items()],
        }
        blob = json.dumps(header, sort_keys=True).encode("utf-8")
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<I", len(blob)))
            fh.write(blob)
            for t in self.params.values():
                fh.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path: str) -> "TadaModel":
        try:
            with open(path, "rb") as fh:
                raw = fh.read()
        except OSError as e:
            raise DataError(f"cannot read model file {path}: {e}") from None
        if len(raw) < len(MAGIC) + 4 or raw[:len(MAGIC)] != MAGIC:
            raise DataError(f"{path}: not a model file (bad magic)")
        off = len(MAGIC)
        (hlen,) = struct.unpack_from("<I", raw, off)
        off += 4
        try:
            header = json.loads(raw[off:off + hlen].decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError):
            raise DataError(f"{path}: corrupt model header") from None
        off += hlen
        cfg = RunConfig(**header["config"])
        model = cls(cfg, header["n_features"], header["n_classes"], header["task"])
        for name, shape in header["params"]:
            if name not in model.params or list(model.params[name].data.shape) != shape:
                raise DataError(f"{path}: unexpected parameter {name} {shape}")
            size = int(np.prod(shape)) * 8
            if off + size > len(raw):
                raise DataError(f"{path}: truncated parameter data")
            model.params[name].data = np.frombuffer(
                raw[off:off + size], dtype="<f8").reshape(shape).copy()
            off += size
        if off != len(raw):
            raise DataError(f"{path}: trailing bytes after parameters")
        return model
