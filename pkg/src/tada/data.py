"""Event-stream data model for irregularly sampled multivariate series.

On-disk sample format is JSON Lines, one object per sample:
``{"id": str, "label": int | [int, ...], "events": [[time, feature, value], ...]}``
A dataset directory holds ``train.jsonl`` / ``val.jsonl`` / ``test.jsonl``
plus ``manifest.json`` with ``{"D": int, "task": "sequence"|"step",
"n_classes": int}``.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError, DataError


@dataclass(frozen=True)
class Observation:
    feature: int
    value: float


@dataclass(frozen=True)
class TimeStep:
    time: float
    observations: tuple[Observation, ...]


@dataclass(frozen=True)
class IrregularSeries:
    sample_id: str
    steps: tuple[TimeStep, ...]
    # int for a sequence-level label, tuple[int, ...] (one per step) for a
    # step-level task
    label: int | tuple[int, ...]

    @property
    def times(self) -> np.ndarray:
        return np.array([s.time for s in self.steps], dtype=np.float64)

    def __len__(self) -> int:
        return len(self.steps)


@dataclass
class ParseStats:
    duplicates: int = 0
    lines: int = 0


def parse_events(line: str, n_features: int, line_no: int = 0,
                 stats: ParseStats | None = None) -> IrregularSeries:
    """Parse one JSON line into an IrregularSeries.

    Duplicate (time, feature) pairs resolve last-wins and bump
    ``stats.duplicates``.  Events sharing an identical time value are
    grouped into one step.
    """
    where = f"line {line_no}" if line_no else "line"
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as e:
        raise DataError(f"{where}: invalid JSON ({e.msg})") from None
    if not isinstance(obj, dict) or set(obj) != {"id", "label", "events"}:
        raise DataError(f"{where}: expected keys id/label/events")
    sid = obj["id"]
    if not isinstance(sid, str) or not sid:
        raise DataError(f"{where}: id must be a non-empty string")
    events = obj["events"]
    if not isinstance(events, list) or not events:
        raise DataError(f"{where}: events must be a non-empty list")

    merged: dict[tuple[float, int], float] = {}
    for k, ev in enumerate(events):
        if (not isinstance(ev, (list, tuple))) or len(ev) != 3:
            raise DataError(f"{where}: event {k} must be [time, feature, value]")
        t, f, v = ev
        if isinstance(t, bool) or not isinstance(t, (int, float)) or not math.isfinite(t):
            raise DataError(f"{where}: event {k} has non-finite time")
        if isinstance(f, bool) or not isinstance(f, int) or not (0 <= f < n_features):
            raise DataError(
                f"{where}: event {k} feature index {f!r} outside [0, {n_features})")
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            raise DataError(f"{where}: event {k} has non-finite value")
        key = (float(t), f)
        if key in merged and stats is not None:
            stats.duplicates += 1
        merged[key] = float(v)

    by_time: dict[float, dict[int, float]] = {}
    for (t, f), v in merged.items():
        by_time.setdefault(t, {})[f] = v
    steps = tuple(
        TimeStep(time=t, observations=tuple(
            Observation(feature=f, value=v) for f, v in sorted(by_time[t].items())))
        for t in sorted(by_time)
    )

    label = obj["label"]
    if isinstance(label, bool):
        raise DataError(f"{where}: label must be an integer or list of integers")
    if isinstance(label, int):
        parsed_label: int | tuple[int, ...] = label
    elif isinstance(label, list) and label and all(
            isinstance(x, int) and not isinstance(x, bool) for x in label):
        if len(label) != len(steps):
            raise DataError(
                f"{where}: {len(label)} step labels for {len(steps)} grouped steps")
        parsed_label = tuple(label)
    else:
        raise DataError(f"{where}: label must be an integer or list of integers")
    if stats is not None:
        stats.lines += 1
    return IrregularSeries(sample_id=sid, steps=steps, label=parsed_label)


def serialize_events(series: IrregularSeries) -> str:
    """Inverse of parse_events for well-formed series (no duplicates)."""
    events = [[s.time, o.feature, o.value] for s in series.steps for o in s.observations]
    label = list(series.label) if isinstance(series.label, tuple) else series.label
    return json.dumps({"id": series.sample_id, "label": label, "events": events},
                      sort_keys=True)


def load_dataset(path: str, n_features: int,
                 stats: ParseStats | None = None) -> list[IrregularSeries]:
    """Read a JSONL file; result is sorted by sample_id for determinism."""
    samples = []
    with open(path, "r", encoding="utf-8") as fh:
        for i, line in enumerate(fh, start=1):
            if line.strip():
                samples.append(parse_events(line, n_features, line_no=i, stats=stats))
    samples.sort(key=lambda s: s.sample_id)
    return samples


def write_dataset(path: str, samples: Sequence[IrregularSeries]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in samples:
            fh.write(serialize_events(s) + "\n")


def read_data_manifest(data_dir: str) -> dict:
    path = os.path.join(data_dir, "manifest.json")
    try:
        with open(path, "r", encoding="utf-8") as fh:
            man = json.load(fh)
    except (OSError, json.JSONDecodeError) as e:
        raise DataError(f"cannot read dataset manifest {path}: {e}") from None
    for key in ("D", "task", "n_classes"):
        if key not in man:
            raise DataError(f"dataset manifest missing key '{key}'")
    if man["task"] not in ("sequence", "step"):
        raise DataError(f"dataset manifest task must be sequence or step, got {man['task']!r}")
    return man


def write_data_manifest(data_dir: str, n_features: int, task: str, n_classes: int) -> None:
    with open(os.path.join(data_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump({"D": n_features, "task": task, "n_classes": n_classes},
                  fh, sort_keys=True)
        fh.write("\n")


def normalize_times(series: IrregularSeries) -> IrregularSeries:
    """Affinely map the step times of one sample onto [0, 1].

    A single-step series maps to time 0.  Ordering is preserved.
    """
    if len(series.steps) == 1:
        steps = (TimeStep(time=0.0, observations=series.steps[0].observations),)
        return IrregularSeries(series.sample_id, steps, series.label)
    t0 = series.steps[0].time
    span = series.steps[-1].time - t0
    steps = tuple(TimeStep(time=(s.time - t0) / span, observations=s.observations)
                  for s in series.steps)
    return IrregularSeries(series.sample_id, steps, series.label)


def build_value_mask(series: IrregularSeries, n_features: int) -> tuple[np.ndarray, np.ndarray]:
    """Dense (T, D) value matrix with zeros at unobserved slots, plus bool mask."""
    T = len(series.steps)
    values = np.zeros((T, n_features))
    mask = np.zeros((T, n_features), dtype=bool)
    for k, step in enumerate(series.steps):
        for obs in step.observations:
            values[k, obs.feature] = obs.value
            mask[k, obs.feature] = True
    return values, mask


# splitting -------------------------------------------------------------------

def _largest_remainder(n: int, ratios: Sequence[float]) -> list[int]:
    exact = [n * r for r in ratios]
    sizes = [int(math.floor(x)) for x in exact]
    rem = n - sum(sizes)
    order = sorted(range(len(ratios)), key=lambda i: (-(exact[i] - sizes[i]), i))
    for i in order[:rem]:
        sizes[i] += 1
    return sizes


def split_dataset(samples: Sequence[IrregularSeries], ratios: Sequence[float],
                  seed: int, stratify: bool = True) -> tuple[list, list, list]:
    """Deterministic train/val/test split.

    Stratified mode keeps per-class proportions (largest-remainder per
    class), which holds the positive fraction of each split within rounding
    of the pool's.  Requires sequence-level integer labels.
    """
    if len(ratios) != 3:
        raise ConfigError(f"split requires 3 ratios, got {len(ratios)}")
    if any(r < 0 for r in ratios):
        raise ConfigError(f"split ratios must be non-negative: {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must sum to 1, got {sum(ratios)!r}")
    rng = np.random.default_rng(seed)
    n_parts = sum(1 for r in ratios if r > 0)
    splits: tuple[list, list, list] = ([], [], [])

    if stratify:
        if any(not isinstance(s.label, int) for s in samples):
            raise DataError("stratified split requires sequence-level integer labels")
        by_class: dict[int, list[int]] = {}
        for i, s in enumerate(samples):
            by_class.setdefault(s.label, []).append(i)
        for label in sorted(by_class):
            idx = by_class[label]
            if len(idx) < n_parts:
                raise DataError(
                    f"class {label} has {len(idx)} samples, fewer than {n_parts} splits")
            order = rng.permutation(len(idx))
            sizes = _largest_remainder(len(idx), ratios)
            pos = 0
            for part, size in enumerate(sizes):
                for j in order[pos:pos + size]:
                    splits[part].append(samples[idx[j]])
                pos += size
    else:
        order = rng.permutation(len(samples))
        sizes = _largest_remainder(len(samples), ratios)
        pos = 0
        for part, size in enumerate(sizes):
            for j in order[pos:pos + size]:
                splits[part].append(samples[j])
            pos += size

    out = []
    for part in splits:
        shuffled = [part[j] for j in rng.permutation(len(part))]
        out.append(shuffled)
    return out[0], out[1], out[2]


# synthetic frequency task ----------------------------------------------------

@dataclass
class SynthConfig:
    """Sinusoid frequency discrimination with per-feature Poisson sampling.

    Class c emits sin(2*pi*freq_c*t); feature d observes it at Poisson
    arrival times with its own rate, shifted by a per-feature offset and
    corrupted by Gaussian noise.  Recovering the class therefore needs the
    per-feature value streams, not just pooled summary statistics.
    """
    n_samples: int = 700
    n_features: int = 4
    rates: tuple[float, ...] = (2.0, 4.0, 8.0, 16.0)
    n_classes: int = 2
    noise: float = 0.1
    seed: int = 0
    freqs: tuple[float, ...] | None = None  # default: 3 + 2c per class c
    offset_scale: float = 2.0

    def resolved_freqs(self) -> tuple[float, ...]:
        if self.freqs is not None:
            if len(self.freqs) != self.n_classes:
                raise ConfigError(
                    f"synth: {len(self.freqs)} freqs for {self.n_classes} classes")
            return tuple(float(f) for f in self.freqs)
        # Fast enough that pooled step order carries no usable phase, slow
        # enough that per-feature local windows still resolve the sinusoid.
        return tuple(3.0 + 2.0 * c for c in range(self.n_classes))


def synth_generate(cfg: SynthConfig) -> tuple[list[IrregularSeries], dict]:
    """Generate the synthetic task; bit-identical for a fixed seed."""
    if len(cfg.rates) != cfg.n_features:
        raise ConfigError(
            f"synth: {len(cfg.rates)} rates for {cfg.n_features} features")
    if cfg.n_classes < 2:
        raise ConfigError("synth: need at least 2 classes")
    freqs = cfg.resolved_freqs()
    rng = np.random.default_rng(cfg.seed)
    samples: list[IrregularSeries] = []
    meta: dict = {"freqs": list(freqs), "config": dataclasses.asdict(cfg),
                  "per_sample": {}}
    for i in range(cfg.n_samples):
        label = i % cfg.n_classes
        f = freqs[label]
        events: list[tuple[float, int, float]] = []
        while not events:
            for d in range(cfg.n_features):
                t = rng.exponential(1.0 / cfg.rates[d])
                while t < 1.0:
                    v = math.sin(2.0 * math.pi * f * t) + cfg.offset_scale * d
                    if cfg.noise > 0:
                        v += rng.normal(0.0, cfg.noise)
                    events.append((t, d, v))
                    t += rng.exponential(1.0 / cfg.rates[d])
        events.sort(key=lambda e: e[0])
        by_time: dict[float, list[Observation]] = {}
        for t, d, v in events:
            by_time.setdefault(t, []).append(Observation(feature=d, value=v))
        steps = tuple(TimeStep(time=t, observations=tuple(by_time[t]))
                      for t in sorted(by_time))
        sid = f"synth-{i:05d}"
        samples.append(IrregularSeries(sample_id=sid, steps=steps, label=label))
        meta["per_sample"][sid] = {"label": label, "freq": f}
    return samples, meta
