"""Tactile gesture preprocessing and hand-crafted feature extraction.

Gestures are time series of 9x9 pressure frames. The 38-entry feature vector
summarizes intensity, temporal structure, spatial mass distribution, contact
area, and the pressure-weighted centroid trajectory.

All reductions go through exactly-rounded summation, so features are
invariant bit for bit under reorderings of the data such as temporal
reversal and frame transposition.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

GRID = 9
FEATURE_LENGTH = 38
AREA_THRESHOLD = 0.1
TRAJECTORY_POINTS = 6
_EMPTY_FRAME_PRESSURE = 1e-9
_GRID_CENTER = 4.0

SPEEDS = ("slow", "regular", "fast")

LABELS_10 = {
    1: "single_tap", 2: "double_tap",
    3: "swipe_down", 4: "swipe_up",
    5: "swipe_right", 6: "swipe_left",
    7: "circle_cw", 8: "circle_ccw",
    9: "two_finger_swipe_up", 10: "two_finger_swipe_down",
}

LABELS_5 = {
    1: "tap", 2: "vertical_swipe", 3: "horizontal_swipe",
    4: "circular", 5: "two_finger_swipe",
}

FEATURE_NAMES = (
    ["mean_p", "max_p", "variability", "peak_count", "duration"]
    + [f"row_mean_{r}" for r in range(GRID)]
    + [f"col_mean_{c}" for c in range(GRID)]
    + ["area_max", "area_mean"]
    + [f"traj_x_{k}" for k in range(TRAJECTORY_POINTS)]
    + [f"traj_y_{k}" for k in range(TRAJECTORY_POINTS)]
    + ["path_length"]
)


@dataclass
class GestureSeries:
    """One gesture: (frames, 9, 9) pressures with a label and speed tag."""

    frames: np.ndarray
    label: int
    speed: str

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float64)
        if frames.ndim != 3 or frames.shape[1:] != (GRID, GRID):
            raise ValueError(f"frames must be (n, {GRID}, {GRID})")
        if frames.shape[0] < 1:
            raise ValueError("a gesture needs at least one frame")
        if not np.all(np.isfinite(frames)):
            raise ValueError("pressures must be finite")
        if frames.min() < 0:
            raise ValueError("pressures must be non-negative")
        if self.speed not in SPEEDS:
            raise ValueError(f"speed must be one of {SPEEDS}")
        if not 1 <= int(self.label) <= 10:
            raise ValueError("label must lie in 1..10")
        self.frames = frames
        self.label = int(self.label)

    def __len__(self) -> int:
        return int(self.frames.shape[0])


def merge_labels_10_to_5(label: int) -> int:
    """Collapse the 10 raw gesture classes onto 5 coarse categories."""
    if not 1 <= int(label) <= 10:
        raise ValueError(f"label {label} outside 1..10")
    return (int(label) + 1) // 2


def _fsum(values) -> float:
    """Exactly rounded sum, independent of summation order."""
    return math.fsum(np.asarray(values, dtype=np.float64).ravel().tolist())


def preprocess(series: GestureSeries, window: int = 3) -> GestureSeries:
    """Smooth each taxel with a centered running average, then rescale to [0, 1].

    The window is truncated at the edges. Normalization is min-max over the
    whole gesture; a constant gesture comes back all zero.
    """
    if window < 1:
        raise ValueError("window must be at least 1")
    frames = series.frames
    n = frames.shape[0]
    left = (window - 1) // 2
    right = window // 2
    smoothed = np.empty_like(frames)
    for t in range(n):
        lo = max(0, t - left)
        hi = min(n, t + right + 1)
        smoothed[t] = frames[lo:hi].mean(axis=0)
    lo_v = smoothed.min()
    hi_v = smoothed.max()
    if hi_v > lo_v:
        smoothed = (smoothed - lo_v) / (hi_v - lo_v)
    else:
        smoothed = np.zeros_like(smoothed)
    return GestureSeries(frames=smoothed, label=series.label, speed=series.speed)


def peak_count(series: GestureSeries) -> int:
    """Number of strict interior local maxima of the frame-average pressure."""
    sums = [_fsum(f) for f in series.frames]
    count = 0
    for t in range(1, len(sums) - 1):
        if sums[t] > sums[t - 1] and sums[t] > sums[t + 1]:
            count += 1
    return count


def contact_area(series: GestureSeries, theta: float = AREA_THRESHOLD
                 ) -> tuple[float, float]:
    """(max, mean) number of taxels above the pressure threshold per frame."""
    counts = (series.frames > theta).sum(axis=(1, 2))
    return float(counts.max()), _fsum(counts) / len(counts)


def _raw_centroids(frames: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-frame pressure-weighted centroid (x = column, y = row).

    Frames with essentially no pressure inherit the previous centroid; a
    leading empty frame sits at the grid center.
    """
    n = frames.shape[0]
    cols = np.arange(GRID, dtype=np.float64)
    cx = np.empty(n)
    cy = np.empty(n)
    px, py = _GRID_CENTER, _GRID_CENTER
    for t in range(n):
        frame = frames[t]
        total = _fsum(frame)
        if total < _EMPTY_FRAME_PRESSURE:
            cx[t], cy[t] = px, py
            continue
        px = _fsum(frame * cols[np.newaxis, :]) / total
        py = _fsum(frame * cols[:, np.newaxis]) / total
        cx[t], cy[t] = px, py
    return cx, cy


def _resample_curve(values: np.ndarray) -> np.ndarray:
    """Linear resample onto TRAJECTORY_POINTS equidistant time points.

    Interpolation weights are computed for the first half of the grid only;
    each mirrored point reuses the same weight pair with the roles swapped
    on the complementary segment n - 2 - j. The paired sums then consist of
    identical products, so reversing the input reverses the output bit for
    bit.
    """
    n = values.shape[0]
    if n == 1:
        return np.full(TRAJECTORY_POINTS, values[0])
    last = float(n - 1)
    out = np.empty(TRAJECTORY_POINTS)
    for k in range(TRAJECTORY_POINTS // 2):
        t = k * last / (TRAJECTORY_POINTS - 1)
        j = min(int(t), n - 2)
        f = t - j
        c = 1.0 - f
        j_m = n - 2 - j
        out[k] = c * values[j] + f * values[j + 1]
        out[TRAJECTORY_POINTS - 1 - k] = f * values[j_m] + c * values[j_m + 1]
    if TRAJECTORY_POINTS % 2 == 1:
        t = 0.5 * last
        j = min(int(t), n - 2)
        f = t - j
        out[TRAJECTORY_POINTS // 2] = (1.0 - f) * values[j] + f * values[j + 1]
    return out


def centroid_trajectory(series: GestureSeries
                        ) -> tuple[np.ndarray, np.ndarray, float]:
    """Resampled centroid trajectory (traj_x, traj_y) and raw path length.

    traj_x follows the column (horizontal) coordinate, traj_y the row
    (vertical) coordinate. Path length is the polyline length of the raw
    per-frame centroids, before resampling.
    """
    cx, cy = _raw_centroids(series.frames)
    dx = np.diff(cx)
    dy = np.diff(cy)
    path = math.fsum(np.sqrt(dx * dx + dy * dy).tolist())
    return _resample_curve(cx), _resample_curve(cy), path


def extract_features(series: GestureSeries) -> np.ndarray:
    """Compute the 38-entry feature vector (layout in FEATURE_NAMES)."""
    frames = series.frames
    n = frames.shape[0]
    taxels = GRID * GRID

    mean_p = _fsum(frames) / (n * taxels)
    max_p = _fsum(frames.max(axis=0)) / taxels
    if n > 1:
        variability = _fsum(np.abs(np.diff(frames, axis=0))) / ((n - 1) * taxels)
    else:
        variability = 0.0
    peaks = float(peak_count(series))
    duration = float(n)

    row_means = np.array([_fsum(frames[:, r, :]) / (n * GRID)
                          for r in range(GRID)])
    col_means = np.array([_fsum(frames[:, :, c]) / (n * GRID)
                          for c in range(GRID)])

    area_max, area_mean = contact_area(series)
    traj_x, traj_y, path = centroid_trajectory(series)

    # trajectory features measure displacement from the grid center, so a
    # contact-free series yields an all-zero vector apart from duration
    out = np.concatenate([
        [mean_p, max_p, variability, peaks, duration],
        row_means, col_means,
        [area_max, area_mean],
        traj_x - _GRID_CENTER, traj_y - _GRID_CENTER,
        [path],
    ])
    assert out.shape == (FEATURE_LENGTH,)
    return out


# ---------------------------------------------------------------------------
# file formats


def write_gestures_jsonl(gestures, path, decimals: int = 5) -> None:
    """One JSON record per gesture: {id, label, speed, frames}.

    Pressures are rounded to `decimals` places to keep files manageable.
    """
    with open(path, "w") as fh:
        for i, g in enumerate(gestures):
            rec = {
                "id": i,
                "label": g.label,
                "speed": g.speed,
                "frames": np.round(g.frames, decimals).tolist(),
            }
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")


def read_gestures_jsonl(path) -> list[GestureSeries]:
    gestures = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            gestures.append(GestureSeries(
                frames=np.asarray(rec["frames"], dtype=np.float64),
                label=int(rec["label"]), speed=rec["speed"]))
    if not gestures:
        raise ValueError(f"{path}: no gesture records")
    return gestures


def write_features_csv(features: np.ndarray, labels, path,
                       header_lines=()) -> None:
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    if features.ndim != 2 or features.shape[1] != FEATURE_LENGTH:
        raise ValueError(f"features must be (n, {FEATURE_LENGTH})")
    if labels.shape != (features.shape[0],):
        raise ValueError("one label per feature row required")
    with open(path, "w") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        fh.write(",".join(FEATURE_NAMES + ["label"]) + "\n")
        for row, lab in zip(features, labels):
            fh.write(",".join(repr(float(v)) for v in row)
                     + f",{int(lab)}\n")


def read_features_csv(path) -> tuple[np.ndarray, np.ndarray]:
    rows = []
    labels = []
    header = None
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if header is None:
                header = line.split(",")
                if header != FEATURE_NAMES + ["label"]:
                    raise ValueError(f"{path}: unexpected feature header")
                continue
            parts = line.split(",")
            rows.append([float(v) for v in parts[:-1]])
            labels.append(int(parts[-1]))
    if header is None or not rows:
        raise ValueError(f"{path}: no feature rows")
    return np.asarray(rows, dtype=np.float64), np.asarray(labels, dtype=np.int64)
