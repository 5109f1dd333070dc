"""Soft-bounds synaptic device model.

A device holds one analog weight w confined to [b_min, b_max]. Identical
voltage pulses move it by state-dependent increments that shrink toward the
bounds:

    up:   w <- w + gamma_up   * (b_max - w) * (1 + sigma_c2c * xi)
    down: w <- w - gamma_down * (w - b_min) * (1 + sigma_c2c * xi)

with xi a fresh standard normal per pulse. The module covers single-pulse
dynamics, pulse-train simulation, parameter fitting from measured traces, and
device-to-device population sampling.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np
from scipy import optimize

DEFAULT_B_MIN = -1.0
DEFAULT_B_MAX = 1.0
DEFAULT_SIGMA_C2C = 0.05

# Population defaults used when no measured traces are available: state count
# centered on 22 with spread 5, mild positive update asymmetry.
DEFAULT_N_STATES_MEAN = 22.0
DEFAULT_N_STATES_STD = 5.0
DEFAULT_ASYMMETRY_MEAN = 0.1
DEFAULT_ASYMMETRY_STD = 0.05


@dataclass(frozen=True)
class DeviceParams:
    """Soft-bounds parameters of one device, in normalized conductance units.

    gamma_up / gamma_down are the fractional step sizes toward b_max / b_min.
    sigma_c2c is the relative cycle-to-cycle spread of every pulse.
    """

    gamma_up: float
    gamma_down: float
    b_min: float = DEFAULT_B_MIN
    b_max: float = DEFAULT_B_MAX
    sigma_c2c: float = DEFAULT_SIGMA_C2C

    def __post_init__(self):
        if not (self.b_min < 0.0 < self.b_max):
            raise ValueError("bounds must satisfy b_min < 0 < b_max")
        if self.gamma_up <= 0.0 or self.gamma_down <= 0.0:
            raise ValueError("step coefficients must be positive")
        if self.sigma_c2c < 0.0:
            raise ValueError("sigma_c2c must be non-negative")
        if n_states(self) < 2.0:
            raise ValueError("device resolves fewer than 2 states")


@dataclass(frozen=True)
class DeviceState:
    """Current analog weight of a device."""

    w: float


def midpoint_step_sizes(params: DeviceParams) -> tuple[float, float]:
    """Noise-free (up, down) step magnitudes evaluated at w = 0."""
    return params.gamma_up * params.b_max, -params.gamma_down * params.b_min


def n_states(params: DeviceParams) -> float:
    """Effective number of resolvable states: range over mean midpoint step."""
    du, dd = midpoint_step_sizes(params)
    return (params.b_max - params.b_min) / (0.5 * (du + dd))


def asymmetry(params: DeviceParams) -> float:
    """Normalized up/down imbalance of the midpoint steps, in (-1, 1)."""
    du, dd = midpoint_step_sizes(params)
    return (du - dd) / (du + dd)


def apply_pulse(params: DeviceParams, state: DeviceState, polarity: str,
                rng: np.random.Generator) -> DeviceState:
    """Apply one pulse of the given polarity ("up" or "down") to a device."""
    if polarity == "up":
        gamma, bound = params.gamma_up, params.b_max
    elif polarity == "down":
        gamma, bound = params.gamma_down, params.b_min
    else:
        raise ValueError(f"polarity must be 'up' or 'down', got {polarity!r}")
    xi = rng.standard_normal()
    w = state.w + gamma * (1.0 + params.sigma_c2c * xi) * (bound - state.w)
    return DeviceState(w=float(np.clip(w, params.b_min, params.b_max)))


@dataclass(frozen=True)
class PulseScheme:
    """Pulse-train layout used for characterization traces.

    Each batch applies up_per_batch up pulses, then down_per_batch down
    pulses, then alternating_per_batch pulses of alternating polarity
    starting with up.
    """

    batches: int = 10
    up_per_batch: int = 200
    down_per_batch: int = 200
    alternating_per_batch: int = 1000

    def __post_init__(self):
        for name in ("batches", "up_per_batch", "down_per_batch",
                     "alternating_per_batch"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    def total_pulses(self) -> int:
        per_batch = (self.up_per_batch + self.down_per_batch
                     + self.alternating_per_batch)
        return self.batches * per_batch

    def polarity_sequence(self) -> np.ndarray:
        """+1 for up, -1 for down, one entry per pulse."""
        batch = np.concatenate([
            np.ones(self.up_per_batch, dtype=np.int8),
            -np.ones(self.down_per_batch, dtype=np.int8),
            np.where(np.arange(self.alternating_per_batch) % 2 == 0, 1, -1
                     ).astype(np.int8),
        ])
        return np.tile(batch, self.batches)


@dataclass(frozen=True)
class Trace:
    """Conductance samples of one device, one sample per pulse plus the start."""

    samples: np.ndarray

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1 or samples.size < 1:
            raise ValueError("trace needs at least the initial sample")
        if not np.all(np.isfinite(samples)):
            raise ValueError("trace samples must be finite")
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return int(self.samples.size)


def simulate_trace(params: DeviceParams, scheme: PulseScheme, w0: float,
                   rng: np.random.Generator) -> Trace:
    """Drive a device through the scheme's pulse train, recording every state."""
    if not params.b_min <= w0 <= params.b_max:
        raise ValueError("initial state w0 lies outside the device bounds")
    polarity = scheme.polarity_sequence()
    total = polarity.size
    xi = rng.standard_normal(total)
    out = np.empty(total + 1)
    out[0] = w0
    w = float(w0)
    gu, gd = params.gamma_up, params.gamma_down
    b_lo, b_hi, sig = params.b_min, params.b_max, params.sigma_c2c
    for i in range(total):
        if polarity[i] > 0:
            w = w + gu * (1.0 + sig * xi[i]) * (b_hi - w)
        else:
            w = w + gd * (1.0 + sig * xi[i]) * (b_lo - w)
        if w > b_hi:
            w = b_hi
        elif w < b_lo:
            w = b_lo
        out[i + 1] = w
    return Trace(samples=out)


def _noise_free_samples(gu: float, gd: float, b_lo: float, b_hi: float,
                        scheme: PulseScheme, w0: float) -> np.ndarray:
    """Closed-form noise-free trace; requires 0 < gu, gd < 1.

    Constant-polarity runs follow a geometric approach to the bound. For the
    alternating run, one up-down pair is the affine map w -> r*w + c with
    r = (1-gu)(1-gd), which is iterated in closed form as well.
    """
    au, ad = 1.0 - gu, 1.0 - gd
    cu, cd = gu * b_hi, gd * b_lo
    chunks = [np.array([w0])]
    w = w0
    for _ in range(scheme.batches):
        k = scheme.up_per_batch
        if k:
            seg = b_hi - (b_hi - w) * au ** np.arange(1, k + 1)
            w = seg[-1]
            chunks.append(seg)
        k = scheme.down_per_batch
        if k:
            seg = b_lo - (b_lo - w) * ad ** np.arange(1, k + 1)
            w = seg[-1]
            chunks.append(seg)
        n_alt = scheme.alternating_per_batch
        if n_alt:
            pairs, rem = divmod(n_alt, 2)
            r = au * ad
            one_minus_r = gu + gd - gu * gd  # 1 - r without cancellation
            c = ad * cu + cd
            rn = r ** np.arange(pairs + 1)
            wn = rn * w + c * (1.0 - rn) / one_minus_r
            seg = np.empty(2 * pairs)
            seg[0::2] = au * wn[:pairs] + cu
            seg[1::2] = wn[1:]
            w = wn[-1]
            chunks.append(seg)
            if rem:
                w = au * w + cu
                chunks.append(np.array([w]))
    return np.concatenate(chunks)


@dataclass(frozen=True)
class FitReport:
    """Outcome of a trace fit: residual and search effort."""

    mad: float
    evaluations: int
    restarts: int


def fit_softbounds(trace: Trace, scheme: PulseScheme, *, restarts: int = 8,
                   seed: int = 0, f_tol: float = 1e-6
                   ) -> tuple[DeviceParams, FitReport]:
    """Recover soft-bounds parameters from a measured trace.

    Runs a derivative-free simplex search from one heuristic start plus
    random restarts, minimizing the mean absolute deviation between the
    noise-free model response and the trace. Restarts stop early once the
    residual drops below f_tol, which noise-free traces normally reach on
    the first start.
    """
    samples = np.asarray(trace.samples, dtype=np.float64)
    expected = scheme.total_pulses() + 1
    if samples.size != expected:
        raise ValueError(
            f"trace length {samples.size} does not match scheme ({expected})")
    lo, hi = float(samples.min()), float(samples.max())
    span = hi - lo
    if span <= 1e-12 * max(1.0, abs(lo), abs(hi)):
        raise ValueError("trace has no dynamic range, nothing to fit")
    w0 = float(samples[0])
    big = 1e30

    def objective(p):
        gu, gd, b_lo, b_hi = p
        if not (1e-5 < gu < 0.999 and 1e-5 < gd < 0.999):
            return big
        if b_lo >= -1e-9 or b_hi <= 1e-9 or not b_lo <= w0 <= b_hi:
            return big
        # keep at least two resolvable states
        if (b_hi - b_lo) < (gu * b_hi - gd * b_lo):
            return big
        model = _noise_free_samples(gu, gd, b_lo, b_hi, scheme, w0)
        return float(np.mean(np.abs(model - samples)))

    rng = np.random.default_rng(seed)
    b_hi0 = hi + 0.05 * span if hi > 0 else 0.05 * span
    b_lo0 = lo - 0.05 * span if lo < 0 else -0.05 * span
    # slope of the first few samples against the estimated headroom
    d0 = float(np.mean(np.abs(np.diff(samples[:min(6, samples.size)]))))
    g0 = float(np.clip(d0 / max(b_hi0 - w0, 1e-3), 1e-3, 0.5))
    starts = []
    if scheme.batches and scheme.up_per_batch and scheme.down_per_batch:
        # after a long constant-polarity run the device parks essentially at
        # its bound, so the run-end samples pin b_max / b_min, and the first
        # pulse of each run exposes gamma via delta = gamma * headroom
        k_up = scheme.up_per_batch
        p_hi = float(samples[k_up])
        p_lo = float(samples[k_up + scheme.down_per_batch])
        if p_lo < -1e-6 < 1e-6 < p_hi:
            gsu = float(np.clip((samples[1] - samples[0])
                                / max(p_hi - w0, 1e-3), 1e-3, 0.5))
            gsd = float(np.clip((samples[k_up] - samples[k_up + 1])
                                / max(p_hi - p_lo, 1e-3), 1e-3, 0.5))
            starts.append(np.array([gsu, gsd, p_lo, p_hi]))
    starts.append(np.array([g0, g0, b_lo0, b_hi0]))
    for _ in range(max(restarts - 1, 0)):
        starts.append(np.array([
            10.0 ** rng.uniform(-3.0, -0.4),
            10.0 ** rng.uniform(-3.0, -0.4),
            lo - span * rng.uniform(0.01, 0.5),
            hi + span * rng.uniform(0.01, 0.5),
        ]))

    best = None
    evals = 0
    used = 0
    opts = dict(xatol=1e-8, fatol=f_tol, maxiter=4000, maxfev=6000)
    for x0 in starts:
        res = optimize.minimize(objective, x0, method="Nelder-Mead",
                                options=opts)
        evals += res.nfev
        if f_tol <= res.fun < big:
            # re-expand the simplex where it stalled; a fresh simplex often
            # escapes the narrow valley that collapsed the first one
            again = optimize.minimize(objective, res.x, method="Nelder-Mead",
                                      options=opts)
            evals += again.nfev
            if again.fun < res.fun:
                res = again
        used += 1
        if best is None or res.fun < best.fun:
            best = res
        if best.fun < f_tol:
            break
    gu, gd, b_lo, b_hi = best.x
    params = DeviceParams(gamma_up=float(gu), gamma_down=float(gd),
                          b_min=float(b_lo), b_max=float(b_hi), sigma_c2c=0.0)
    return params, FitReport(mad=float(best.fun), evaluations=evals,
                             restarts=used)


@dataclass(frozen=True)
class DeviceDistribution:
    """Gaussian device-to-device distribution over (n_states, asymmetry)."""

    mean: np.ndarray
    covariance: np.ndarray
    clamp_n_min: float = 2.0
    clamp_asym: float = 1.0 - 1e-6

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        cov = np.asarray(self.covariance, dtype=np.float64)
        if mean.shape != (2,):
            raise ValueError("mean must be (n_states, asymmetry)")
        if cov.shape != (2, 2):
            raise ValueError("covariance must be 2x2")
        if not np.allclose(cov, cov.T, rtol=1e-9, atol=1e-12):
            raise ValueError("covariance must be symmetric")
        cov = 0.5 * (cov + cov.T)
        scale = max(float(np.abs(cov).max()), 1e-30)
        if np.linalg.eigvalsh(cov).min() < -1e-9 * scale:
            raise ValueError("covariance must be positive semi-definite")
        if not 0.0 < self.clamp_asym < 1.0:
            raise ValueError("clamp_asym must lie in (0, 1)")
        if self.clamp_n_min < 2.0:
            raise ValueError("clamp_n_min must be at least 2")
        mean.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)


def default_distribution() -> DeviceDistribution:
    """Fallback population used when no measured devices are supplied."""
    return DeviceDistribution(
        mean=np.array([DEFAULT_N_STATES_MEAN, DEFAULT_ASYMMETRY_MEAN]),
        covariance=np.diag([DEFAULT_N_STATES_STD ** 2,
                            DEFAULT_ASYMMETRY_STD ** 2]))


def build_distribution(population, *, clamp_n_min: float = 2.0
                       ) -> DeviceDistribution:
    """Estimate the (n_states, asymmetry) Gaussian from fitted devices."""
    population = list(population)
    if len(population) < 2:
        raise ValueError("need at least 2 devices to estimate a distribution")
    pts = np.array([[n_states(p), asymmetry(p)] for p in population])
    cov = np.cov(pts, rowvar=False, ddof=1)
    return DeviceDistribution(mean=pts.mean(axis=0), covariance=cov,
                              clamp_n_min=clamp_n_min)


def gammas_from_stats(n, a, b_min=DEFAULT_B_MIN, b_max=DEFAULT_B_MAX):
    """Invert (n_states, asymmetry) to (gamma_up, gamma_down).

    Works on scalars or arrays. The mean midpoint step is (b_max - b_min)/n,
    split between polarities by the asymmetry.
    """
    m = (b_max - b_min) / n
    return m * (1.0 + a) / b_max, m * (1.0 - a) / (-b_min)


def sample_device(dist: DeviceDistribution, rng: np.random.Generator, *,
                  sigma_c2c: float = DEFAULT_SIGMA_C2C) -> DeviceParams:
    """Draw one device from the population, with fixed bounds at -1 and +1."""
    n, a = rng.multivariate_normal(dist.mean, dist.covariance,
                                   check_valid="ignore")
    n = max(float(n), dist.clamp_n_min)
    a = float(np.clip(a, -dist.clamp_asym, dist.clamp_asym))
    gu, gd = gammas_from_stats(n, a)
    return DeviceParams(gamma_up=float(gu), gamma_down=float(gd),
                        b_min=DEFAULT_B_MIN, b_max=DEFAULT_B_MAX,
                        sigma_c2c=sigma_c2c)


def sample_stats_grid(dist: DeviceDistribution, count: int,
                      rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Draw count (n_states, asymmetry) pairs, clamped to admissible ranges."""
    draws = rng.multivariate_normal(dist.mean, dist.covariance, size=count,
                                    check_valid="ignore")
    n = np.maximum(draws[:, 0], dist.clamp_n_min)
    a = np.clip(draws[:, 1], -dist.clamp_asym, dist.clamp_asym)
    return n, a


# ---------------------------------------------------------------------------
# file formats


def write_trace_csv(trace: Trace, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["pulse_index", "conductance"])
        for i, v in enumerate(trace.samples):
            writer.writerow([i, repr(float(v))])


def read_trace_csv(path) -> Trace:
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    if not rows or rows[0][:2] != ["pulse_index", "conductance"]:
        raise ValueError(f"{path}: not a trace file")
    return Trace(samples=np.array([float(r[1]) for r in rows[1:]]))


def params_to_dict(params: DeviceParams) -> dict:
    return asdict(params)


def params_from_dict(d: dict) -> DeviceParams:
    return DeviceParams(
        gamma_up=float(d["gamma_up"]), gamma_down=float(d["gamma_down"]),
        b_min=float(d["b_min"]), b_max=float(d["b_max"]),
        sigma_c2c=float(d["sigma_c2c"]))


def write_device_params(params, path) -> None:
    """Write one DeviceParams record or a list of them as JSON."""
    if isinstance(params, DeviceParams):
        payload = params_to_dict(params)
    else:
        payload = [params_to_dict(p) for p in params]
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")


def read_device_params(path):
    payload = json.loads(Path(path).read_text())
    if isinstance(payload, dict):
        return params_from_dict(payload)
    return [params_from_dict(d) for d in payload]


def write_distribution(dist: DeviceDistribution, path, extra: dict | None = None
                       ) -> None:
    payload = {
        "mean": dist.mean.tolist(),
        "covariance": dist.covariance.tolist(),
        "clamp_n_min": dist.clamp_n_min,
        "clamp_asym": dist.clamp_asym,
    }
    if extra:
        payload.update(extra)
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")


def read_distribution(path) -> DeviceDistribution:
    d = json.loads(Path(path).read_text())
    return DeviceDistribution(
        mean=np.asarray(d["mean"], float),
        covariance=np.asarray(d["covariance"], float),
        clamp_n_min=float(d.get("clamp_n_min", 2.0)),
        clamp_asym=float(d.get("clamp_asym", 1.0 - 1e-6)))
