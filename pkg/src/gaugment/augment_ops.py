"""The 17 spectrogram augmentation operators and their strength mappings.

Feature matrices are ``(time_frames, freq_channels)`` arrays whose trailing
frames past ``valid_length`` are zero padding.  Every operator works on the
valid region only, so padding stays zero.  Sizes derived from real-valued
parameters are rounded half away from zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy import ndimage, signal

from .policy_graph import AUG_TYPES, AugPath, AugSpec, PolicyGraph, canonical_type, sample_path


@dataclass(frozen=True)
class FeatureMatrix:
    data: np.ndarray
    valid_length: int

    def __post_init__(self):
        if self.data.ndim != 2:
            raise ValueError(f"feature matrix must be 2-D, got shape {self.data.shape}")
        if self.data.shape[1] < 1:
            raise ValueError("feature matrix needs at least one frequency channel")
        if not 1 <= self.valid_length <= self.data.shape[0]:
            raise ValueError(
                f"valid_length {self.valid_length} outside [1, {self.data.shape[0]}]"
            )

    @classmethod
    def from_valid(cls, valid: np.ndarray, time_frames: int | None = None) -> "FeatureMatrix":
        """Wrap ``valid`` rows, zero-padding up to ``time_frames``."""
        valid = np.asarray(valid)
        frames = valid.shape[0] if time_frames is None else time_frames
        data = np.zeros((frames, valid.shape[1]), dtype=valid.dtype)
        data[: valid.shape[0]] = valid
        return cls(data, valid.shape[0])

    @property
    def time_frames(self) -> int:
        return self.data.shape[0]

    @property
    def freq_channels(self) -> int:
        return self.data.shape[1]

    @property
    def valid(self) -> np.ndarray:
        return self.data[: self.valid_length]

    def padding_is_zero(self) -> bool:
        return not np.any(self.data[self.valid_length :])


@dataclass(frozen=True)
class FeatureBatch:
    items: tuple[FeatureMatrix, ...]

    def __post_init__(self):
        object.__setattr__(self, "items", tuple(self.items))
        if not self.items:
            raise ValueError("feature batch must hold at least one item")
        channels = {m.freq_channels for m in self.items}
        if len(channels) != 1:
            raise ValueError(f"batch items disagree on freq_channels: {sorted(channels)}")

    def __len__(self) -> int:
        return len(self.items)

    def __getitem__(self, i: int) -> FeatureMatrix:
        return self.items[i]

    def __iter__(self):
        return iter(self.items)

    @property
    def freq_channels(self) -> int:
        return self.items[0].freq_channels


# -- strength to parameter mapping -- #


@dataclass(frozen=True)
class MagnitudeRange:
    name: str
    lo: float
    hi: float
    scale: str = "linear"

    def value(self, x: int) -> float:
        if not 0 <= x <= 10:
            raise ValueError(f"strength {x} outside [0, 10]")
        if x == 0:
            return self.lo
        if x == 10:
            return self.hi
        if self.scale == "log":
            return self.lo * (self.hi / self.lo) ** (x / 10)
        return self.lo + (x / 10) * (self.hi - self.lo)


_R = MagnitudeRange

MAGNITUDES: dict[str, tuple[MagnitudeRange | None, MagnitudeRange | None]] = {
    "CO": (_R("mask size", 0, 30), _R("density ratio", 0, 0.5)),
    "FM": (_R("multiplicity", 0, 8), _R("masking ratio", 0, 1.0)),
    "FS": (_R("multiplicity", 0, 8), _R("filter coverage", 0, 1.0)),
    "FN": (_R("max stddev", 0, 0.5), None),
    "FW-L": (_R("warp ratio", 0.0, 1.0), None),
    "FW-LG": (_R("warp ratio", 0.0125, 0.79, "log"), None),
    "GN": (_R("noise ratio", 0, 1.0), None),
    "Id": (None, None),
    "RC": (_R("filter freq size", 0, 50), _R("filter time size", 0, 50)),
    "TP": (_R("max utterance ratio", 0, 0.6), None),
    "TM-AM": (_R("multiplicity ratio", 0.001, 0.1, "log"), None),
    "TM-AS": (_R("size ratio", 0.001, 0.316, "log"), None),
    "TM-FA": (
        _R("multiplicity ratio", 0.001, 0.1, "log"),
        _R("size ratio", 0.001, 0.316, "log"),
    ),
    "TW-A": (_R("utterance length ratio", 0.005, 0.5, "log"), None),
    "TW": (_R("size ratio", 5, 500, "log"), None),
    "M-A": (_R("background blend ratio", 0, 0.6), _R("max background shift", 0, 30)),
    "M-B": (_R("background blend ratio", 0, 0.6), _R("background multiplicity", 0, 5)),
}
assert set(MAGNITUDES) == set(AUG_TYPES)


def _slot_index(slot) -> int:
    if slot in ("x1", 1):
        return 0
    if slot in ("x2", 2):
        return 1
    raise ValueError(f"slot must be 'x1' or 'x2', got {slot!r}")


def magnitude_range(aug_type: str, slot) -> MagnitudeRange | None:
    try:
        ranges = MAGNITUDES[canonical_type(aug_type)]
    except KeyError:
        raise ValueError(f"unknown augmentation type {aug_type!r}") from None
    return ranges[_slot_index(slot)]


def map_magnitude(aug_type: str, slot, x: int) -> float | None:
    """Parameter value for strength ``x``; ``None`` marks an unused slot."""
    rng_ = magnitude_range(aug_type, slot)
    return None if rng_ is None else rng_.value(x)


def _mag(aug_type: str, slot, x: int) -> float:
    value = map_magnitude(aug_type, slot, x)
    if value is None:
        raise ValueError(f"{aug_type} has no {slot} parameter")
    return value


def round_half_away(x: float) -> int:
    return int(math.floor(abs(x) + 0.5)) * (1 if x >= 0 else -1)


# -- operator machinery -- #


@dataclass(frozen=True)
class AugmentConfig:
    """Constants the operators need but the strength table leaves open."""

    default_time_mask_size: int = 10
    tm_as_multiplicity: int = 2
    fs_max_offset: float = 1.0
    mask_fill: str = "zero"  # or "mean"
    rc_stddev: float = 0.1

    def __post_init__(self):
        if self.mask_fill not in ("zero", "mean"):
            raise ValueError(f"mask_fill must be 'zero' or 'mean', got {self.mask_fill!r}")


DEFAULT_CONFIG = AugmentConfig()


@dataclass
class EffectLog:
    """Running totals of the distortion an augmentation actually induced."""

    masked_fraction: float = 0.0
    noise_energy: float = 0.0
    length_change: float = 0.0
    mix_blend: float = 0.0
    applications: int = 0

    def as_vector(self) -> np.ndarray:
        return np.array(
            [self.masked_fraction, self.noise_energy, self.length_change, self.mix_blend]
        )


@dataclass
class _Ctx:
    x1: int
    x2: int
    rng: np.random.Generator
    cfg: AugmentConfig
    sources: Sequence[FeatureMatrix]
    index: int
    log: EffectLog | None


def _apply_mask(v: np.ndarray, mask: np.ndarray, ctx: _Ctx) -> np.ndarray | None:
    if not mask.any():
        return None
    fill = float(v.mean()) if ctx.cfg.mask_fill == "mean" else 0.0
    out = v.copy()
    out[mask] = fill
    if ctx.log is not None:
        ctx.log.masked_fraction += np.count_nonzero(mask) / mask.size
    return out


def _time_masks(v: np.ndarray, count: int, max_width: int, ctx: _Ctx) -> np.ndarray | None:
    length = v.shape[0]
    mask = np.zeros(v.shape, dtype=bool)
    max_width = min(max(max_width, 0), length)
    for _ in range(count):
        w = int(ctx.rng.integers(0, max_width + 1))
        t0 = int(ctx.rng.integers(0, length - w + 1))
        mask[t0 : t0 + w] = True
    return _apply_mask(v, mask, ctx)


def _draw_dtype(v: np.ndarray):
    return np.float32 if v.dtype == np.float32 else np.float64


def _energy(v: np.ndarray) -> float:
    """Mean square, via a BLAS dot product."""
    flat = v.reshape(-1)
    return float(np.dot(flat, flat)) / flat.size


def _record_noise(before: np.ndarray, after: np.ndarray, ctx: _Ctx) -> None:
    if ctx.log is None:
        return
    power = _energy(before)
    if power > 0:
        ctx.log.noise_energy += _energy(after - before) / power


def _op_id(v, ctx):
    return None


def _op_fm(v, ctx):
    m = round_half_away(_mag("FM", 1, ctx.x1))
    budget = _mag("FM", 2, ctx.x2) * v.shape[1]
    if m == 0 or budget <= 0:
        return None
    max_width = int(math.floor(budget / m))
    channels = v.shape[1]
    mask = np.zeros(v.shape, dtype=bool)
    for _ in range(m):
        w = min(int(ctx.rng.integers(0, max_width + 1)), channels)
        f0 = int(ctx.rng.integers(0, channels - w + 1))
        mask[:, f0 : f0 + w] = True
    return _apply_mask(v, mask, ctx)


def _op_tm_am(v, ctx):
    count = round_half_away(_mag("TM-AM", 1, ctx.x1) * v.shape[0])
    return _time_masks(v, count, ctx.cfg.default_time_mask_size, ctx)


def _op_tm_as(v, ctx):
    width = round_half_away(_mag("TM-AS", 1, ctx.x1) * v.shape[0])
    return _time_masks(v, ctx.cfg.tm_as_multiplicity, width, ctx)


def _op_tm_fa(v, ctx):
    count = round_half_away(_mag("TM-FA", 1, ctx.x1) * v.shape[0])
    width = round_half_away(_mag("TM-FA", 2, ctx.x2) * v.shape[0])
    return _time_masks(v, count, width, ctx)


def _op_fs(v, ctx):
    channels = v.shape[1]
    m = round_half_away(_mag("FS", 1, ctx.x1))
    budget = int(math.floor(_mag("FS", 2, ctx.x2) * channels))
    if m == 0 or budget == 0:
        return None
    m = min(m, budget)
    width = budget // m
    free = channels - m * width
    starts = np.sort(ctx.rng.integers(0, free + 1, size=m)) + np.arange(m) * width
    offsets = ctx.rng.uniform(-ctx.cfg.fs_max_offset, ctx.cfg.fs_max_offset, size=m)
    out = v.copy()
    for s, off in zip(starts, offsets):
        out[:, s : s + width] += off
    _record_noise(v, out, ctx)
    return out


def _op_fn(v, ctx):
    max_std = _mag("FN", 1, ctx.x1)
    if max_std == 0:
        return None
    std = ctx.rng.uniform(0, max_std)
    gain = ctx.rng.normal(1.0, std, size=v.shape[1]).astype(v.dtype)
    out = v * gain
    _record_noise(v, out, ctx)
    return out


def _warp_axis(v: np.ndarray, axis: int, center: float, moved: float) -> np.ndarray:
    """Piecewise-linear warp sending ``center`` to ``moved`` with fixed ends."""
    n = v.shape[axis]
    pos = np.arange(n, dtype=np.float64)
    src = np.where(
        pos <= moved,
        pos * center / moved,
        center + (pos - moved) * (n - 1 - center) / (n - 1 - moved),
    )
    src = np.clip(src, 0, n - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n - 1)
    frac = src - lo
    a = np.take(v, lo, axis=axis)
    b = np.take(v, hi, axis=axis)
    shape = [1, 1]
    shape[axis] = n
    frac = frac.reshape(shape).astype(v.dtype)
    return a * (1 - frac) + b * frac


def _warp(v: np.ndarray, axis: int, displacement: float, rng: np.random.Generator) -> np.ndarray | None:
    n = v.shape[axis]
    if displacement == 0 or n < 3:
        return None
    center = rng.uniform(1, n - 2)
    moved = float(np.clip(center + displacement, 1, n - 2))
    if moved == center:
        return None
    return _warp_axis(v, axis, center, moved)


def _op_fw(code):
    def op(v, ctx):
        distance = _mag(code, 1, ctx.x1) * v.shape[1]
        if distance == 0:
            return None
        sign = 1 if ctx.rng.random() < 0.5 else -1
        return _warp(v, 1, sign * distance, ctx.rng)

    return op


def _time_warp(v, ctx, max_distance: int):
    max_distance = min(max_distance, v.shape[0] - 1)
    if max_distance <= 0:
        return None
    displacement = int(ctx.rng.integers(-max_distance, max_distance + 1))
    return _warp(v, 0, displacement, ctx.rng)


def _op_tw_a(v, ctx):
    return _time_warp(v, ctx, round_half_away(_mag("TW-A", 1, ctx.x1) * v.shape[0]))


def _op_tw(v, ctx):
    return _time_warp(v, ctx, round_half_away(_mag("TW", 1, ctx.x1)))


def _op_gn(v, ctx):
    ratio = _mag("GN", 1, ctx.x1)
    rms = math.sqrt(_energy(v))
    if ratio == 0 or rms == 0:
        return None
    noise = ctx.rng.standard_normal(size=v.shape, dtype=_draw_dtype(v))
    out = v + (ratio * rms) * noise
    _record_noise(v, out, ctx)
    return out


def _op_co(v, ctx):
    side = round_half_away(_mag("CO", 1, ctx.x1))
    density = _mag("CO", 2, ctx.x2)
    if side == 0:
        return None
    length, channels = v.shape
    count = int(math.floor(density * length * channels / side**2))
    if count == 0:
        return None
    ts, fs = min(side, length), min(side, channels)
    t0 = ctx.rng.integers(0, length - ts + 1, size=count)
    f0 = ctx.rng.integers(0, channels - fs + 1, size=count)
    mask = np.zeros(v.shape, dtype=bool)
    for t, f in zip(t0, f0):
        mask[t : t + ts, f : f + fs] = True
    return _apply_mask(v, mask, ctx)


def rc_kernel_shape(x1: int, x2: int) -> tuple[int, int]:
    """(time, freq) extent of the random-convolution filter; always odd."""
    t = _mag("RC", 2, x2)
    f = _mag("RC", 1, x1)
    return 2 * round_half_away(t / 2) + 1, 2 * round_half_away(f / 2) + 1


def _op_rc(v, ctx):
    kt, kf = rc_kernel_shape(ctx.x1, ctx.x2)
    kernel = ctx.rng.normal(0.0, ctx.cfg.rc_stddev, size=(kt, kf)).astype(v.dtype)
    kernel[kt // 2, kf // 2] += 1.0
    if kt * kf <= 25:
        out = ndimage.correlate(v, kernel, mode="nearest")
    else:
        padded = np.pad(v, ((kt // 2, kt // 2), (kf // 2, kf // 2)), mode="edge")
        out = signal.fftconvolve(padded, kernel[::-1, ::-1], mode="valid")
    _record_noise(v, out, ctx)
    return out


def _resample_time(v: np.ndarray, frames: int) -> np.ndarray:
    length = v.shape[0]
    if frames == length:
        return v
    if frames == 1 or length == 1:
        src = np.zeros(frames)
    else:
        src = np.arange(frames) * (length - 1) / (frames - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, length - 1)
    frac = (src - lo)[:, None].astype(v.dtype)
    return v[lo] * (1 - frac) + v[hi] * frac


def _op_tp(v, ctx, time_frames: int):
    r = _mag("TP", 1, ctx.x1)
    if r == 0:
        return None
    stretch = ctx.rng.uniform(1 - r, 1 + r)
    length = v.shape[0]
    frames = max(1, min(time_frames, round_half_away(length * stretch)))
    if ctx.log is not None:
        ctx.log.length_change += abs(frames - length) / length
    if frames == length:
        return None
    return _resample_time(v, frames)


def _background(src: FeatureMatrix, length: int, shift: int = 0) -> np.ndarray:
    bg = src.valid
    if shift:
        bg = np.roll(bg, shift, axis=0)
    return bg[np.arange(length) % bg.shape[0]]


def _others(ctx: _Ctx) -> list[int]:
    return [j for j in range(len(ctx.sources)) if j != ctx.index]


def _op_ma(v, ctx):
    others = _others(ctx)
    top = _mag("M-A", 1, ctx.x1)
    if not others or top == 0:
        return None
    r = ctx.rng.uniform(0, top)
    j = others[int(ctx.rng.integers(len(others)))]
    shift = int(ctx.rng.integers(0, round_half_away(_mag("M-A", 2, ctx.x2)) + 1))
    bg = _background(ctx.sources[j], v.shape[0], shift)
    if ctx.log is not None:
        ctx.log.mix_blend += r
    return (1 - r) * v + r * bg


def _op_mb(v, ctx):
    others = _others(ctx)
    top = _mag("M-B", 1, ctx.x1)
    if not others or top == 0:
        return None
    k = int(ctx.rng.integers(0, round_half_away(_mag("M-B", 2, ctx.x2)) + 1))
    k = min(k, len(others))
    if k == 0:
        return None
    picks = ctx.rng.choice(others, size=k, replace=False)
    bg = np.mean([_background(ctx.sources[j], v.shape[0]) for j in picks], axis=0)
    r = ctx.rng.uniform(0, top)
    if ctx.log is not None:
        ctx.log.mix_blend += r
    return (1 - r) * v + r * bg


OPERATORS = {
    "Id": _op_id,
    "FM": _op_fm,
    "TM-AM": _op_tm_am,
    "TM-AS": _op_tm_as,
    "TM-FA": _op_tm_fa,
    "FS": _op_fs,
    "FN": _op_fn,
    "FW-L": _op_fw("FW-L"),
    "FW-LG": _op_fw("FW-LG"),
    "GN": _op_gn,
    "CO": _op_co,
    "RC": _op_rc,
    "TW-A": _op_tw_a,
    "TW": _op_tw,
    "M-A": _op_ma,
    "M-B": _op_mb,
}


def _run(spec, v, time_frames, rng, config, sources, index, log):
    """One augmentation on a valid-region array; returns ``v`` itself if skipped."""
    if not rng.random() < spec.q:
        return v
    code = canonical_type(spec.aug_type)
    ctx = _Ctx(spec.x1, spec.x2, rng, config, sources, index, log)
    if log is not None:
        log.applications += 1
    if code == "TP":
        out = _op_tp(v, ctx, time_frames)
    else:
        out = OPERATORS[code](v, ctx)
    return v if out is None else out


def _work_array(item: FeatureMatrix) -> np.ndarray:
    if item.data.dtype in (np.float32, np.float64):
        return item.valid
    return item.valid.astype(np.float64)


def _wrap(item: FeatureMatrix, v: np.ndarray) -> FeatureMatrix:
    data = np.zeros_like(item.data)
    data[: v.shape[0]] = v
    return FeatureMatrix(data, v.shape[0])


def augment_item(
    spec: AugSpec,
    item: FeatureMatrix,
    rng: np.random.Generator,
    *,
    config: AugmentConfig = DEFAULT_CONFIG,
    sources: Sequence[FeatureMatrix] = (),
    index: int = -1,
    log: EffectLog | None = None,
) -> FeatureMatrix:
    """Apply one augmentation to one matrix, honouring its probability ``q``.

    ``sources`` supplies the utterances mixing operators may draw
    backgrounds from; ``index`` is this item's position there.
    """
    v = _work_array(item)
    out = _run(spec, v, item.time_frames, rng, config, sources, index, log)
    return item if out is v else _wrap(item, out)


def apply_augmentation(
    spec: AugSpec,
    batch: FeatureBatch,
    example_mask: Iterable[int] | None,
    rng: np.random.Generator,
    config: AugmentConfig = DEFAULT_CONFIG,
) -> FeatureBatch:
    """Apply ``spec`` independently to each selected example.

    ``example_mask`` lists batch indices (``None`` selects all).  Mixing
    operators draw backgrounds from the unaugmented input batch.
    """
    selected = range(len(batch)) if example_mask is None else sorted(set(example_mask))
    items = list(batch.items)
    for i in selected:
        items[i] = augment_item(
            spec, batch.items[i], rng, config=config, sources=batch.items, index=i
        )
    return FeatureBatch(tuple(items))


def example_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream for example ``index`` of a batch seeded by ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(seed % 2**64, spawn_key=(index,)))


def apply_path(
    path: AugPath,
    item: FeatureMatrix,
    rng: np.random.Generator,
    *,
    config: AugmentConfig = DEFAULT_CONFIG,
    sources: Sequence[FeatureMatrix] = (),
    index: int = -1,
    log: EffectLog | None = None,
) -> FeatureMatrix:
    """Compose the path's augmentations on ``item``, input side first."""
    start = v = _work_array(item)
    for spec in path.edges:
        v = _run(spec, v, item.time_frames, rng, config, sources, index, log)
    return item if v is start else _wrap(item, v)


def apply_policy(
    policy: PolicyGraph,
    batch: FeatureBatch,
    seed: int,
    config: AugmentConfig = DEFAULT_CONFIG,
) -> tuple[FeatureBatch, list[AugPath]]:
    """Sample one path per example and compose its augmentations.

    Example ``i`` uses its own stream derived from ``(seed, i)``, so any
    partition of the batch across workers yields the same output.
    """
    out = []
    paths = []
    for i, item in enumerate(batch.items):
        rng = example_rng(seed, i)
        path = sample_path(policy, rng, check=(i == 0))
        paths.append(path)
        out.append(apply_path(path, item, rng, config=config, sources=batch.items, index=i))
    return FeatureBatch(tuple(out)), paths
