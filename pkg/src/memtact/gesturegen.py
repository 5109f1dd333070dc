"""Synthetic tactile gesture generator.

Renders the ten gesture classes as moving Gaussian pressure blobs on the 9x9
grid: taps are stationary bursts, swipes translate the blob, circles move it
along a closed loop, two-finger swipes render two parallel blobs. Speed picks
the frame count band. Everything is reproducible from (seed, gesture index).
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from .data import derive_rng, stratified_split_indices
from .tactile import GRID, GestureSeries, merge_labels_10_to_5

SPEED_BANDS = {"fast": (20, 40), "regular": (40, 60), "slow": (60, 90)}
SPEED_ORDER = ("slow", "regular", "fast")
DEFAULT_NOISE_STD = 0.02
FORMAT_VERSION = 1

_ROWS = np.arange(GRID, dtype=np.float64)[:, np.newaxis]
_COLS = np.arange(GRID, dtype=np.float64)[np.newaxis, :]


@dataclass(frozen=True)
class GenSpec:
    """Dataset recipe: class count, per-class size, speed mix, noise, seed."""

    samples_per_label: int = 306
    label_set: int = 10
    speed_mix: tuple = (1 / 3, 1 / 3, 1 / 3)
    noise_std: float = DEFAULT_NOISE_STD
    seed: int = 0

    def __post_init__(self):
        if self.label_set not in (5, 10):
            raise ValueError("label_set must be 5 or 10")
        if self.samples_per_label < 1:
            raise ValueError("samples_per_label must be positive")
        mix = tuple(float(f) for f in self.speed_mix)
        if len(mix) != 3 or any(f < 0 for f in mix):
            raise ValueError("speed_mix needs 3 non-negative fractions")
        if abs(sum(mix) - 1.0) > 1e-9:
            raise ValueError("speed_mix fractions must sum to 1")
        if self.noise_std < 0:
            raise ValueError("noise_std must be non-negative")
        object.__setattr__(self, "speed_mix", mix)


def _render(path_r, path_c, amp_t, sigma) -> np.ndarray:
    """Frames of one Gaussian blob following (path_r, path_c) with envelope amp_t."""
    pr = np.asarray(path_r)[:, np.newaxis, np.newaxis]
    pc = np.asarray(path_c)[:, np.newaxis, np.newaxis]
    amp = np.asarray(amp_t)[:, np.newaxis, np.newaxis]
    d2 = (_ROWS - pr) ** 2 + (_COLS - pc) ** 2
    return amp * np.exp(-d2 / (2.0 * sigma ** 2))


def _plateau_envelope(n, amp, rng=None) -> np.ndarray:
    """Soft-ramped constant envelope so contact builds up and releases."""
    t = np.arange(n, dtype=np.float64)
    if rng is None:
        ramp_in = ramp_out = max(2.0, 0.12 * n)
    else:
        ramp_in = max(2.0, rng.uniform(0.08, 0.22) * n)
        ramp_out = max(2.0, rng.uniform(0.08, 0.22) * n)
    return amp * np.minimum(1.0, np.minimum(t / ramp_in, (n - 1 - t) / ramp_out))


def _pressure_jitter(n, rng) -> np.ndarray:
    """Slow multiplicative wavering of contact force along a stroke."""
    t = np.arange(n, dtype=np.float64) / max(n - 1, 1)
    depth = rng.uniform(0.015, 0.06)
    cycles = rng.uniform(0.8, 2.5)
    phase = rng.uniform(0.0, 2.0 * np.pi)
    return 1.0 + depth * np.sin(2.0 * np.pi * cycles * t + phase)


def _wobble(n, rng, scale) -> np.ndarray:
    """Smoothed zero-mean random drift, models an unsteady fingertip."""
    steps = rng.normal(0.0, 1.0, n)
    walk = np.cumsum(steps)
    k = max(3, n // 6)
    kernel = np.ones(k) / k
    smooth = np.convolve(walk, kernel, mode="same")
    smooth -= smooth.mean()
    peak = np.abs(smooth).max()
    if peak < 1e-12:
        return np.zeros(n)
    return scale * smooth / peak


def _tap_frames(n, rng, bursts: int) -> np.ndarray:
    cr = 4.0 + rng.uniform(-1.4, 1.4)
    cc = 4.0 + rng.uniform(-1.4, 1.4)
    sigma = rng.uniform(0.95, 1.4)
    amp = rng.uniform(0.65, 0.95)
    t = np.arange(n, dtype=np.float64)
    if bursts == 1:
        t0 = (n - 1) * (0.5 + rng.uniform(-0.1, 0.1))
        width = n * rng.uniform(0.08, 0.13)
        env = amp * np.exp(-((t - t0) ** 2) / (2.0 * width ** 2))
        return _render(np.full(n, cr), np.full(n, cc), env, sigma)
    width = n * rng.uniform(0.055, 0.075)
    t1 = (n - 1) * (0.28 + rng.uniform(-0.05, 0.05))
    t2 = (n - 1) * (0.72 + rng.uniform(-0.05, 0.05))
    amp2 = amp * rng.uniform(0.8, 1.1)
    env1 = amp * np.exp(-((t - t1) ** 2) / (2.0 * width ** 2))
    env2 = amp2 * np.exp(-((t - t2) ** 2) / (2.0 * width ** 2))
    # the finger lands slightly elsewhere the second time
    dr = rng.uniform(-0.5, 0.5)
    dc = rng.uniform(-0.5, 0.5)
    a = _render(np.full(n, cr), np.full(n, cc), env1, sigma)
    b = _render(np.full(n, cr + dr), np.full(n, cc + dc), env2, sigma)
    return np.clip(a + b, 0.0, 1.0)


def _swipe_frames(n, rng, axis: str, direction: int, fingers: int) -> np.ndarray:
    """Straight-line motion; axis 'row' moves vertically, 'col' horizontally."""
    lo = 0.8 + rng.uniform(-0.6, 0.6)
    hi = 8.0 - 0.8 + rng.uniform(-0.6, 0.6)
    start, end = (lo, hi) if direction > 0 else (hi, lo)
    moving = np.linspace(start, end, n)
    fixed = 4.0 + rng.uniform(-1.1, 1.1) + _wobble(n, rng, rng.uniform(0.02, 0.12))
    sigma = rng.uniform(0.9, 1.15)
    env = _plateau_envelope(n, rng.uniform(0.55, 0.95), rng) * _pressure_jitter(n, rng)
    if axis == "row":
        pr, pc = moving, fixed
    else:
        pr, pc = fixed, moving
    if fingers == 1:
        return _render(pr, pc, env, sigma)
    gap = rng.uniform(1.5, 2.0)
    w1 = rng.uniform(0.88, 1.0)
    w2 = rng.uniform(0.88, 1.0)
    if axis == "row":
        a = _render(pr, pc - gap, env * w1, sigma)
        b = _render(pr, pc + gap, env * w2, sigma)
    else:
        a = _render(pr - gap, pc, env * w1, sigma)
        b = _render(pr + gap, pc, env * w2, sigma)
    return np.clip(a + b, 0.0, 1.0)


def _circle_frames(n, rng, direction: int) -> np.ndarray:
    """Closed circular stroke; direction +1 runs clockwise on the grid
    (rows grow downward), -1 counter-clockwise."""
    cr = 4.0 + rng.uniform(-0.8, 0.8)
    cc = 4.0 + rng.uniform(-0.8, 0.8)
    radius = 2.4 + rng.uniform(-0.35, 0.35)
    squash = rng.uniform(0.9, 1.12)
    span = rng.uniform(1.75, 2.25) * np.pi
    phi0 = -0.5 * np.pi + rng.uniform(-0.6, 0.6)
    phi = phi0 + direction * span * np.arange(n) / (n - 1)
    pr = cr + radius * squash * np.sin(phi) + _wobble(n, rng, 0.11)
    pc = cc + radius / squash * np.cos(phi) + _wobble(n, rng, 0.11)
    env = _plateau_envelope(n, rng.uniform(0.5, 0.95), rng) * _pressure_jitter(n, rng)
    return _render(pr, pc, env, rng.uniform(0.9, 1.25))


def generate_gesture(label: int, speed: str, rng: np.random.Generator, *,
                     noise_std: float = DEFAULT_NOISE_STD) -> GestureSeries:
    """Render one gesture of the given 10-class label and speed band."""
    if speed not in SPEED_BANDS:
        raise ValueError(f"speed must be one of {tuple(SPEED_BANDS)}")
    if not 1 <= int(label) <= 10:
        raise ValueError("label must lie in 1..10")
    lo, hi = SPEED_BANDS[speed]
    n = int(rng.integers(lo, hi + 1))
    label = int(label)
    if label == 1:
        frames = _tap_frames(n, rng, bursts=1)
    elif label == 2:
        frames = _tap_frames(n, rng, bursts=2)
    elif label == 3:
        frames = _swipe_frames(n, rng, "row", +1, fingers=1)
    elif label == 4:
        frames = _swipe_frames(n, rng, "row", -1, fingers=1)
    elif label == 5:
        frames = _swipe_frames(n, rng, "col", +1, fingers=1)
    elif label == 6:
        frames = _swipe_frames(n, rng, "col", -1, fingers=1)
    elif label == 7:
        frames = _circle_frames(n, rng, +1)
    elif label == 8:
        frames = _circle_frames(n, rng, -1)
    elif label == 9:
        frames = _swipe_frames(n, rng, "row", -1, fingers=2)
    else:
        frames = _swipe_frames(n, rng, "row", +1, fingers=2)
    if noise_std > 0:
        frames = frames + rng.normal(0.0, noise_std, frames.shape)
    frames = np.clip(frames, 0.0, 1.0)
    return GestureSeries(frames=frames, label=label, speed=speed)


def apply_augment(series: GestureSeries, *, amplitude: float = 1.0,
                  shift: tuple[int, int] = (0, 0), time_factor: float = 1.0,
                  noise_std: float = 0.0, rng=None) -> GestureSeries:
    """Deterministic augmentation core; identity parameters return the input.

    Order: temporal resample, spatial shift (zero padded), amplitude scale,
    additive noise clipped at zero. The resampled length is clamped to
    [ceil(0.85 n), floor(1.15 n)] so duration never moves more than 15%.
    """
    frames = series.frames
    n = frames.shape[0]
    if time_factor != 1.0:
        n_new = int(round(n * time_factor))
        n_new = int(np.clip(n_new, max(1, int(np.ceil(0.85 * n))),
                            max(1, int(np.floor(1.15 * n)))))
        t_old = np.arange(n, dtype=np.float64)
        t_new = np.linspace(0.0, n - 1.0, n_new)
        flat = frames.reshape(n, -1)
        frames = np.stack([np.interp(t_new, t_old, flat[:, k])
                           for k in range(flat.shape[1])], axis=1
                          ).reshape(n_new, GRID, GRID)
    dr, dc = int(shift[0]), int(shift[1])
    if dr or dc:
        shifted = np.zeros_like(frames)
        src_r = slice(max(0, -dr), GRID - max(0, dr))
        dst_r = slice(max(0, dr), GRID - max(0, -dr))
        src_c = slice(max(0, -dc), GRID - max(0, dc))
        dst_c = slice(max(0, dc), GRID - max(0, -dc))
        shifted[:, dst_r, dst_c] = frames[:, src_r, src_c]
        frames = shifted
    if amplitude != 1.0:
        frames = frames * amplitude
    if noise_std > 0:
        if rng is None:
            raise ValueError("noise_std > 0 requires an rng")
        frames = np.maximum(frames + rng.normal(0.0, noise_std, frames.shape),
                            0.0)
    return GestureSeries(frames=frames, label=series.label, speed=series.speed)


def augment(series: GestureSeries, rng: np.random.Generator, *,
            noise_std: float = 0.01) -> GestureSeries:
    """Random augmentation: amplitude, +-1 taxel shift, time warp, noise."""
    return apply_augment(
        series,
        amplitude=float(rng.uniform(0.8, 1.2)),
        shift=(int(rng.integers(-1, 2)), int(rng.integers(-1, 2))),
        time_factor=float(rng.uniform(0.85, 1.15)),
        noise_std=noise_std, rng=rng)


def _speed_allocation(count: int, mix) -> list[str]:
    """Deterministic largest-remainder split of count over the speed bands."""
    raw = [count * f for f in mix]
    base = [int(np.floor(v)) for v in raw]
    short = count - sum(base)
    order = np.argsort([base[i] - raw[i] for i in range(3)])
    for i in range(short):
        base[order[i]] += 1
    out = []
    for speed, k in zip(SPEED_ORDER, base):
        out.extend([speed] * k)
    return out


def generate_dataset(spec: GenSpec) -> tuple[list[GestureSeries], dict]:
    """Render the full dataset for a recipe, plus its manifest.

    For the 5-class set each coarse class draws evenly from its two source
    templates. Every gesture gets its own rng stream derived from
    (seed, gesture index), so generation order never matters.
    """
    jobs = []  # (template label in 1..10, final label, speed)
    if spec.label_set == 10:
        for label in range(1, 11):
            speeds = _speed_allocation(spec.samples_per_label, spec.speed_mix)
            jobs.extend((label, label, s) for s in speeds)
    else:
        for coarse in range(1, 6):
            speeds = _speed_allocation(spec.samples_per_label, spec.speed_mix)
            pair = (2 * coarse - 1, 2 * coarse)
            for k, s in enumerate(speeds):
                template = pair[k % 2]
                jobs.append((template, merge_labels_10_to_5(template), s))
    gestures = []
    for gid, (template, final_label, speed) in enumerate(jobs):
        rng = derive_rng(spec.seed, gid)
        g = generate_gesture(template, speed, rng, noise_std=spec.noise_std)
        if final_label != template:
            g = GestureSeries(frames=g.frames, label=final_label, speed=g.speed)
        gestures.append(g)
    counts = {}
    for g in gestures:
        counts[g.label] = counts.get(g.label, 0) + 1
    manifest = {
        "spec": asdict(spec),
        "seed": spec.seed,
        "total": len(gestures),
        "counts_per_label": {str(k): v for k, v in sorted(counts.items())},
        "format_version": FORMAT_VERSION,
    }
    return gestures, manifest


def split(dataset, test_fraction: float, rng: np.random.Generator
          ) -> tuple[list, list]:
    """Stratified train/test split of a list of gestures."""
    dataset = list(dataset)
    labels = np.array([g.label for g in dataset])
    train_idx, test_idx = stratified_split_indices(labels, test_fraction, rng)
    return [dataset[i] for i in train_idx], [dataset[i] for i in test_idx]
