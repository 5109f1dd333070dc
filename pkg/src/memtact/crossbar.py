"""Analog crossbar tile: MAC reads, stochastic pulsed updates, programming.

A tile is a rows x cols grid of soft-bounds devices (see device.py), one per
weight. Reads are noise-free matrix products of the stored states; writes go
through pulses only, either coincidence-gated stochastic updates or the
closed-loop program-and-verify routine.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .device import (
    DEFAULT_SIGMA_C2C,
    DeviceDistribution,
    DeviceParams,
    gammas_from_stats,
    params_from_dict,
    params_to_dict,
    sample_stats_grid,
)


@dataclass(frozen=True)
class UpdateStats:
    """Pulse counts and scale factors of one stochastic update call."""

    pulses_up: int
    pulses_down: int
    scale_x: float
    scale_d: float


class AnalogTile:
    """Grid of soft-bounds devices holding one weight matrix.

    The tile owns a private noise stream identified by (seed, stream_id);
    update and programming calls use it unless an explicit generator is
    passed, so a fixed seed and call sequence reproduce the state bit for
    bit.
    """

    def __init__(self, gamma_up, gamma_down, b_min, b_max, sigma_c2c, *,
                 seed: int = 0, stream_id: int = 0, rng=None):
        arrays = [np.array(a, dtype=np.float64) for a in
                  (gamma_up, gamma_down, b_min, b_max, sigma_c2c)]
        shape = arrays[0].shape
        if len(shape) != 2 or any(a.shape != shape for a in arrays):
            raise ValueError("device parameter arrays must share a 2-D shape")
        self._gu, self._gd, self._b_lo, self._b_hi, self._sig = arrays
        if not (np.all(self._b_lo < 0) and np.all(self._b_hi > 0)):
            raise ValueError("every device needs b_min < 0 < b_max")
        if not (np.all(self._gu > 0) and np.all(self._gd > 0)):
            raise ValueError("every device needs positive step coefficients")
        if np.any(self._sig < 0):
            raise ValueError("sigma_c2c must be non-negative")
        self._w = np.zeros(shape)
        self._scale_x = 0.0
        self._scale_d = 0.0
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        self._rng = rng if rng is not None else np.random.default_rng(
            [self.seed, self.stream_id])
        # nominal state range used for weight mapping and tolerance floors
        self.nominal_b_min = float(np.median(self._b_lo))
        self.nominal_b_max = float(np.median(self._b_hi))

    @property
    def rows(self) -> int:
        return self._w.shape[0]

    @property
    def cols(self) -> int:
        return self._w.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self._w.shape

    @classmethod
    def uniform(cls, rows: int, cols: int, params: DeviceParams, *,
                seed: int = 0, stream_id: int = 0) -> "AnalogTile":
        """Tile of identical devices, mainly for idealized experiments."""
        full = lambda v: np.full((rows, cols), v)
        return cls(full(params.gamma_up), full(params.gamma_down),
                   full(params.b_min), full(params.b_max),
                   full(params.sigma_c2c), seed=seed, stream_id=stream_id)

    @classmethod
    def from_distribution(cls, rows: int, cols: int, dist: DeviceDistribution,
                          *, seed: int = 0, stream_id: int = 0,
                          sigma_c2c: float = DEFAULT_SIGMA_C2C) -> "AnalogTile":
        """Tile with every device drawn independently from the population."""
        rng = np.random.default_rng([int(seed), int(stream_id)])
        n, a = sample_stats_grid(dist, rows * cols, rng)
        gu, gd = gammas_from_stats(n, a)
        shape = (rows, cols)
        tile = cls(gu.reshape(shape), gd.reshape(shape),
                   np.full(shape, -1.0), np.full(shape, 1.0),
                   np.full(shape, sigma_c2c),
                   seed=seed, stream_id=stream_id, rng=rng)
        return tile

    # -- reads ------------------------------------------------------------

    def forward_mac(self, x: np.ndarray) -> np.ndarray:
        """y[j] = sum_i w[i, j] * x[i]; noise-free, state untouched."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.rows,):
            raise ValueError(f"x must have shape ({self.rows},)")
        return x @ self._w

    def backward_mac(self, d: np.ndarray) -> np.ndarray:
        """Transpose read: out[i] = sum_j w[i, j] * d[j]."""
        d = np.asarray(d, dtype=np.float64)
        if d.shape != (self.cols,):
            raise ValueError(f"d must have shape ({self.cols},)")
        return self._w @ d

    def read_weights(self) -> np.ndarray:
        return self._w.copy()

    def set_weights(self, w: np.ndarray) -> None:
        """Directly load a state matrix, clamped to per-device bounds.

        Simulation-only plumbing for initial conditions; hardware writes go
        through pulses.
        """
        w = np.asarray(w, dtype=np.float64)
        if w.shape != self.shape:
            raise ValueError("weight matrix shape must match the tile")
        self._w = np.clip(w, self._b_lo, self._b_hi)

    def midpoint_step(self) -> np.ndarray:
        """Per-device mean noise-free step magnitude at w = 0."""
        return 0.5 * (self._gu * self._b_hi - self._gd * self._b_lo)

    def symmetry_point(self) -> np.ndarray:
        """State where one up and one down pulse cancel on average.

        Alternating-polarity pulsing settles every device here; gradient
        accumulators treat it as their calibrated zero reference.
        """
        return (self._gu * self._b_hi + self._gd * self._b_lo) \
            / (self._gu + self._gd)

    # -- writes -----------------------------------------------------------

    def apply_pulses(self, up_mask: np.ndarray, down_mask: np.ndarray,
                     rng=None) -> None:
        """Pulse the masked devices once, up and down masks disjoint."""
        rng = self._rng if rng is None else rng
        n_up = int(np.count_nonzero(up_mask))
        n_down = int(np.count_nonzero(down_mask))
        if n_up:
            xi = rng.standard_normal(n_up)
            m = up_mask
            step = self._gu[m] * (1.0 + self._sig[m] * xi)
            self._w[m] = np.clip(self._w[m] + step * (self._b_hi[m] - self._w[m]),
                                 self._b_lo[m], self._b_hi[m])
        if n_down:
            xi = rng.standard_normal(n_down)
            m = down_mask
            step = self._gd[m] * (1.0 + self._sig[m] * xi)
            self._w[m] = np.clip(self._w[m] + step * (self._b_lo[m] - self._w[m]),
                                 self._b_lo[m], self._b_hi[m])

    def stochastic_update(self, x: np.ndarray, d: np.ndarray, lr: float,
                          rng=None) -> UpdateStats:
        """Rank-one pulsed update approximating w -= lr * outer(x, d).

        Row i fires with probability min(1, sqrt(lr)|x_i|/s_x) and column j
        with min(1, sqrt(lr)|d_j|/s_d); a device pulses only on coincidence,
        at most once, with polarity -sign(x_i d_j). s_x and s_d are running
        maxima of the input magnitudes, kept on the tile.
        """
        x = np.asarray(x, dtype=np.float64)
        d = np.asarray(d, dtype=np.float64)
        if x.shape != (self.rows,) or d.shape != (self.cols,):
            raise ValueError("x and d must match the tile dimensions")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(d))):
            raise ValueError("update vectors must be finite")
        if lr < 0:
            raise ValueError("lr must be non-negative")
        self._scale_x = max(self._scale_x, float(np.abs(x).max(initial=0.0)))
        self._scale_d = max(self._scale_d, float(np.abs(d).max(initial=0.0)))
        if lr == 0.0 or self._scale_x == 0.0 or self._scale_d == 0.0:
            return UpdateStats(0, 0, self._scale_x, self._scale_d)
        rng = self._rng if rng is None else rng
        root = np.sqrt(lr)
        p = np.minimum(1.0, root * np.abs(x) / self._scale_x)
        q = np.minimum(1.0, root * np.abs(d) / self._scale_d)
        fired = np.outer(rng.random(self.rows) < p, rng.random(self.cols) < q)
        grad_sign = np.outer(np.sign(x), np.sign(d))
        up_mask = fired & (grad_sign < 0)
        down_mask = fired & (grad_sign > 0)
        self.apply_pulses(up_mask, down_mask, rng)
        return UpdateStats(int(up_mask.sum()), int(down_mask.sum()),
                           self._scale_x, self._scale_d)

    def program_and_verify(self, targets: np.ndarray, epsilon: float = 0.02,
                           max_iter: int = 200, rng=None) -> "ProgramReport":
        """Iteratively pulse every device toward its target and verify.

        A device counts as converged once |w - target| <= max(epsilon *
        |target|, floor) where floor is 0.5% of the nominal state range.
        Unconverged devices after max_iter pulses are flagged, including
        targets outside the physical bounds, which can never converge.
        """
        targets = np.asarray(targets, dtype=np.float64)
        if targets.shape != self.shape:
            raise ValueError("target matrix shape must match the tile")
        if not np.all(np.isfinite(targets)):
            raise ValueError("targets must be finite")
        if epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        rng = self._rng if rng is None else rng
        floor = 0.005 * (self.nominal_b_max - self.nominal_b_min)
        tol = np.maximum(epsilon * np.abs(targets), floor)
        attainable = (targets >= self._b_lo) & (targets <= self._b_hi)
        iterations = np.zeros(self.shape, dtype=np.int64)
        active = np.abs(self._w - targets) > tol
        for _ in range(max_iter):
            if not active.any():
                break
            up_mask = active & (self._w < targets)
            down_mask = active & (self._w > targets)
            self.apply_pulses(up_mask, down_mask, rng)
            iterations[active] += 1
            active &= np.abs(self._w - targets) > tol
        return ProgramReport(targets=targets.copy(), achieved=self._w.copy(),
                             iterations=iterations, converged=~active,
                             attainable=attainable)


@dataclass(frozen=True)
class ProgramReport:
    """Per-device programming outcome plus aggregate views."""

    targets: np.ndarray
    achieved: np.ndarray
    iterations: np.ndarray
    converged: np.ndarray
    attainable: np.ndarray

    @property
    def converged_fraction(self) -> float:
        return float(self.converged.mean())

    @property
    def mean_iterations(self) -> float:
        return float(self.iterations.mean())

    def max_abs_rel_error(self, floor: float = 0.01) -> float:
        """Largest |achieved - target| relative to max(|target|, floor)."""
        err = np.abs(self.achieved - self.targets)
        return float((err / np.maximum(np.abs(self.targets), floor)).max())

    def aggregates(self) -> dict:
        return {
            "devices": int(self.targets.size),
            "converged_fraction": self.converged_fraction,
            "mean_iterations": self.mean_iterations,
            "max_abs_rel_error": self.max_abs_rel_error(),
            "unattainable": int((~self.attainable).sum()),
        }


def map_weights_to_targets(weights: np.ndarray, tile: AnalogTile, *,
                           margin: float = 0.9) -> np.ndarray:
    """Min-max map a weight matrix onto the central band of the tile range.

    The extremes of `weights` land on +-margin of the nominal half-range
    (so [-0.9, +0.9] for unit bounds). A constant matrix maps to zeros.
    """
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != tile.shape:
        raise ValueError("weight matrix shape must match the tile")
    if not np.all(np.isfinite(weights)):
        raise ValueError("weights must be finite")
    scale, offset = weight_map_affine(weights, tile, margin=margin)
    if scale == 0.0:
        return np.zeros(tile.shape)
    return scale * weights + offset


def weight_map_affine(weights: np.ndarray, tile: AnalogTile, *,
                      margin: float = 0.9) -> tuple[float, float]:
    """Coefficients (scale, offset) of the min-max map used for programming.

    targets = scale * weights + offset. A constant matrix yields (0, 0);
    inference code must then fall back to the constant weight value.
    """
    weights = np.asarray(weights, dtype=np.float64)
    w_lo, w_hi = float(weights.min()), float(weights.max())
    span = w_hi - w_lo
    if span == 0.0:
        return 0.0, 0.0
    center = 0.5 * (tile.nominal_b_max + tile.nominal_b_min)
    half = 0.5 * (tile.nominal_b_max - tile.nominal_b_min)
    t_lo = center - margin * half
    t_hi = center + margin * half
    scale = (t_hi - t_lo) / span
    return scale, t_lo - w_lo * scale


# ---------------------------------------------------------------------------
# file formats


def tile_to_snapshot(tile: AnalogTile) -> dict:
    devices = []
    for i in range(tile.rows):
        for j in range(tile.cols):
            devices.append(params_to_dict(DeviceParams(
                gamma_up=float(tile._gu[i, j]), gamma_down=float(tile._gd[i, j]),
                b_min=float(tile._b_lo[i, j]), b_max=float(tile._b_hi[i, j]),
                sigma_c2c=float(tile._sig[i, j]))))
    return {
        "rows": tile.rows,
        "cols": tile.cols,
        "seed": tile.seed,
        "stream_id": tile.stream_id,
        "devices": devices,
        "state": tile._w.ravel().tolist(),
    }


def tile_from_snapshot(snap: dict) -> AnalogTile:
    rows, cols = int(snap["rows"]), int(snap["cols"])
    if len(snap["devices"]) != rows * cols or len(snap["state"]) != rows * cols:
        raise ValueError("snapshot arrays do not match rows * cols")
    fields = ("gamma_up", "gamma_down", "b_min", "b_max", "sigma_c2c")
    cols_of = {f: np.array([d[f] for d in snap["devices"]]).reshape(rows, cols)
               for f in fields}
    # validate every record through the scalar type
    for d in snap["devices"]:
        params_from_dict(d)
    tile = AnalogTile(cols_of["gamma_up"], cols_of["gamma_down"],
                      cols_of["b_min"], cols_of["b_max"], cols_of["sigma_c2c"],
                      seed=int(snap.get("seed", 0)),
                      stream_id=int(snap.get("stream_id", 0)))
    tile.set_weights(np.asarray(snap["state"], float).reshape(rows, cols))
    return tile


def save_tile(tile: AnalogTile, path) -> None:
    Path(path).write_text(json.dumps(tile_to_snapshot(tile)) + "\n")


def load_tile(path) -> AnalogTile:
    return tile_from_snapshot(json.loads(Path(path).read_text()))


def write_program_report_csv(report: ProgramReport, path,
                             header_lines=()) -> None:
    rows, cols = report.targets.shape
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh)
        writer.writerow(["row", "col", "target", "achieved", "iterations",
                         "converged"])
        for i in range(rows):
            for j in range(cols):
                writer.writerow([
                    i, j, repr(float(report.targets[i, j])),
                    repr(float(report.achieved[i, j])),
                    int(report.iterations[i, j]),
                    int(report.converged[i, j]),
                ])


def write_program_summary(report: ProgramReport, path,
                          extra: dict | None = None) -> None:
    payload = report.aggregates()
    if extra:
        payload.update(extra)
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")
