"""Fully connected classifiers, digital and analog.

The digital path is plain per-sample SGD with ReLU hidden layers and a
softmax cross-entropy head, plus a noise-injection finetune that makes
weights robust to multiplicative perturbations. The analog path keeps each
weight matrix on crossbar tiles and trains with a two-tile scheme: gradients
accumulate on an A tile through stochastic pulse-coincidence updates, and a
digital accumulator H periodically transfers one column at a time onto the
weight tile W as granularity-sized pulses. Biases stay digital throughout.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .crossbar import AnalogTile, ProgramReport, map_weights_to_targets, \
    weight_map_affine
from .data import Dataset, FeatureScaler, derive_rng
from .device import DeviceDistribution, default_distribution


@dataclass(frozen=True)
class NetworkSpec:
    """Layer widths from input to output, e.g. (38, 128, 10)."""

    layer_dims: tuple

    def __post_init__(self):
        dims = tuple(int(d) for d in self.layer_dims)
        if len(dims) < 2 or any(d < 1 for d in dims):
            raise ValueError("need at least input and output dims, all >= 1")
        object.__setattr__(self, "layer_dims", dims)

    @property
    def n_layers(self) -> int:
        return len(self.layer_dims) - 1


@dataclass
class TrainConfig:
    """Hyperparameters shared by the digital and analog training loops."""

    mode: str = "fp_sgd"
    lr: float = 0.05
    fast_lr: float = 0.5
    transfer_every: int = 5
    epochs: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("fp_sgd", "ttv2"):
            raise ValueError("mode must be 'fp_sgd' or 'ttv2'")
        if self.lr < 0 or self.fast_lr < 0:
            raise ValueError("learning rates must be non-negative")
        if self.transfer_every < 1:
            raise ValueError("transfer_every must be at least 1")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_acc: float
    test_acc: float
    loss: float


@dataclass
class TrainHistory:
    """Per-epoch training curve."""

    records: list = field(default_factory=list)

    def append(self, epoch, train_acc, test_acc, loss):
        self.records.append(EpochRecord(int(epoch), float(train_acc),
                                        float(test_acc), float(loss)))

    def losses(self) -> np.ndarray:
        return np.array([r.loss for r in self.records])

    def __len__(self) -> int:
        return len(self.records)


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def relu(z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0.0)


class Network:
    """Digital FC network; weights[l] has shape (fan_in, fan_out)."""

    def __init__(self, spec: NetworkSpec, *, seed: int = 0):
        self.spec = spec
        rng = derive_rng(seed, 0)
        dims = spec.layer_dims
        self.weights = []
        self.biases = []
        for l in range(spec.n_layers):
            fan_in, fan_out = dims[l], dims[l + 1]
            gain = math.sqrt(2.0 / fan_in) if l < spec.n_layers - 1 \
                else math.sqrt(1.0 / fan_in)
            self.weights.append(rng.normal(0.0, gain, size=(fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))

    def forward(self, x: np.ndarray, weights=None) -> np.ndarray:
        """Class scores (logits) for one sample."""
        weights = self.weights if weights is None else weights
        h = np.asarray(x, dtype=np.float64)
        last = len(weights) - 1
        for l, (w, b) in enumerate(zip(weights, self.biases)):
            h = h @ w + b
            if l < last:
                h = relu(h)
        return h

    def forward_batch(self, x: np.ndarray) -> np.ndarray:
        h = np.asarray(x, dtype=np.float64)
        last = len(self.weights) - 1
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if l < last:
                h = relu(h)
        return h

    def backprop(self, x: np.ndarray, y: int, weights=None):
        """Cross-entropy loss and gradients for one sample.

        When `weights` is given the forward and backward passes run through
        those matrices instead of the stored ones (used for noise-injected
        training), while shapes and biases stay shared.
        """
        weights = self.weights if weights is None else weights
        last = len(weights) - 1
        acts = [np.asarray(x, dtype=np.float64)]
        pre = []
        h = acts[0]
        for l, (w, b) in enumerate(zip(weights, self.biases)):
            z = h @ w + b
            pre.append(z)
            h = relu(z) if l < last else z
            acts.append(h)
        p = softmax(pre[-1])
        loss = -math.log(max(p[y], 1e-300))
        delta = p.copy()
        delta[y] -= 1.0
        grads_w = [None] * len(weights)
        grads_b = [None] * len(weights)
        for l in range(last, -1, -1):
            grads_w[l] = np.outer(acts[l], delta)
            grads_b[l] = delta
            if l > 0:
                delta = (weights[l] @ delta) * (pre[l - 1] > 0)
        return loss, grads_w, grads_b


def forward(net, x: np.ndarray) -> np.ndarray:
    """Class scores of a digital or analog network for one sample."""
    return net.forward(x)


def evaluate(net, dataset: Dataset) -> float:
    """Fraction of samples whose argmax score matches the label."""
    if len(dataset) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    scores = net.forward_batch(dataset.x)
    return float((scores.argmax(axis=1) == dataset.y).mean())


def train_sgd_fp(net: Network, train: Dataset, cfg: TrainConfig,
                 test: Dataset | None = None) -> TrainHistory:
    """Per-sample SGD with cross-entropy loss; deterministic under cfg.seed."""
    if len(train) == 0:
        raise ValueError("training set is empty")
    rng = derive_rng(cfg.seed, 1)
    history = TrainHistory()
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(train))
        total = 0.0
        for i in order:
            loss, gw, gb = net.backprop(train.x[i], int(train.y[i]))
            total += loss
            if cfg.lr:
                for l in range(len(net.weights)):
                    net.weights[l] -= cfg.lr * gw[l]
                    net.biases[l] -= cfg.lr * gb[l]
        test_acc = evaluate(net, test) if test is not None else float("nan")
        history.append(epoch, evaluate(net, train), test_acc,
                       total / len(train))
    return history


def hardware_aware_finetune(net: Network, train: Dataset, noise_std: float,
                            epochs: int, rng: np.random.Generator, *,
                            lr: float = 0.05) -> Network:
    """Continue training under multiplicative Gaussian weight noise.

    Each sample sees weights w * (1 + noise_std * xi) during forward and
    backward; the resulting gradients are applied to the clean weights.
    With noise_std = 0 this is plain continued SGD.
    """
    if noise_std < 0:
        raise ValueError("noise_std must be non-negative")
    if len(train) == 0:
        raise ValueError("training set is empty")
    for _ in range(epochs):
        order = rng.permutation(len(train))
        for i in order:
            if noise_std > 0:
                noisy = [w * (1.0 + noise_std * rng.standard_normal(w.shape))
                         for w in net.weights]
            else:
                noisy = None
            _, gw, gb = net.backprop(train.x[i], int(train.y[i]),
                                     weights=noisy)
            for l in range(len(net.weights)):
                net.weights[l] -= lr * gw[l]
                net.biases[l] -= lr * gb[l]
    return net


class AnalogNetwork:
    """FC network whose weight matrices live on analog tiles.

    Forward MACs run on the tiles; per-layer affine coefficients undo the
    weight-to-conductance mapping of programmed networks (scale 1, offset 0
    for tiles trained in place). Biases are digital.
    """

    def __init__(self, spec: NetworkSpec, tiles, biases, scales=None,
                 offsets=None):
        if len(tiles) != spec.n_layers:
            raise ValueError("one tile per layer required")
        self.spec = spec
        self.tiles = list(tiles)
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]
        self.scales = list(scales) if scales is not None \
            else [1.0] * spec.n_layers
        self.offsets = list(offsets) if offsets is not None \
            else [0.0] * spec.n_layers

    def _undo_map(self, l: int, mac: np.ndarray, x_sum: float) -> np.ndarray:
        scale, offset = self.scales[l], self.offsets[l]
        if scale == 1.0 and offset == 0.0:
            return mac
        return (mac - offset * x_sum) / scale

    def forward(self, x: np.ndarray) -> np.ndarray:
        h = np.asarray(x, dtype=np.float64)
        last = self.spec.n_layers - 1
        for l, tile in enumerate(self.tiles):
            h = self._undo_map(l, tile.forward_mac(h), float(h.sum())) \
                + self.biases[l]
            if l < last:
                h = relu(h)
        return h

    def forward_batch(self, x: np.ndarray) -> np.ndarray:
        h = np.asarray(x, dtype=np.float64)
        last = self.spec.n_layers - 1
        for l, tile in enumerate(self.tiles):
            mac = h @ tile.read_weights()
            scale, offset = self.scales[l], self.offsets[l]
            if not (scale == 1.0 and offset == 0.0):
                mac = (mac - offset * h.sum(axis=1, keepdims=True)) / scale
            h = mac + self.biases[l]
            if l < last:
                h = relu(h)
        return h

    def read_weight_matrices(self):
        """Effective weight matrices after undoing the programming map."""
        out = []
        for l, tile in enumerate(self.tiles):
            w = tile.read_weights()
            scale, offset = self.scales[l], self.offsets[l]
            out.append(w if scale == 1.0 and offset == 0.0
                       else (w - offset) / scale)
        return out


@dataclass
class TTv2State:
    """Mutable state of the two-tile training scheme for one network.

    Per layer: the weight tile, the gradient-accumulation tile A, the digital
    transfer accumulator H, a round-robin column cursor and a step counter.
    """

    net: AnalogNetwork
    a_tiles: list
    hidden: list
    cursors: list
    counters: list


TTV2_OUTPUT_SCALE = 0.8


def init_ttv2(spec: NetworkSpec, dist: DeviceDistribution, cfg: TrainConfig,
              *, sigma_c2c=None) -> TTv2State:
    """Build tiles for every layer and load small random initial weights.

    Each weight tile carries a fixed digital output gain so the bounded
    device range spans a useful logical weight range; the gain is undone
    after every MAC, the same peripheral arithmetic used for programmed
    inference tiles. Gradient-accumulation tiles start parked at their
    per-device symmetry point, which also serves as the zero reference
    for transfer reads.
    """
    from .device import DEFAULT_SIGMA_C2C
    if sigma_c2c is None:
        sigma_c2c = DEFAULT_SIGMA_C2C
    init_rng = derive_rng(cfg.seed, 2)
    tiles, a_tiles, hidden, biases, scales = [], [], [], [], []
    dims = spec.layer_dims
    for l in range(spec.n_layers):
        rows, cols = dims[l], dims[l + 1]
        w_tile = AnalogTile.from_distribution(
            rows, cols, dist, seed=cfg.seed, stream_id=10 + 2 * l,
            sigma_c2c=sigma_c2c)
        a_tile = AnalogTile.from_distribution(
            rows, cols, dist, seed=cfg.seed, stream_id=11 + 2 * l,
            sigma_c2c=sigma_c2c)
        gain = math.sqrt(2.0 / rows) if l < spec.n_layers - 1 \
            else math.sqrt(1.0 / rows)
        w_tile.set_weights(init_rng.normal(0.0, gain, size=(rows, cols))
                           / TTV2_OUTPUT_SCALE)
        a_tile.set_weights(a_tile.symmetry_point())
        tiles.append(w_tile)
        a_tiles.append(a_tile)
        hidden.append(np.zeros((rows, cols)))
        biases.append(np.zeros(cols))
        scales.append(1.0 / TTV2_OUTPUT_SCALE)
    net = AnalogNetwork(spec, tiles, biases, scales=scales)
    return TTv2State(net=net, a_tiles=a_tiles, hidden=hidden,
                     cursors=[0] * spec.n_layers,
                     counters=[0] * spec.n_layers)


def _transfer_column(state: TTv2State, l: int, cfg: TrainConfig,
                     rng: np.random.Generator) -> None:
    """Move one A-tile column into W through the digital accumulator.

    The column is read with a one-hot MAC relative to the tile's calibrated
    symmetry reference, scaled by lr into H; every H entry is granted the
    whole number of granularity units it holds (one unit is the receiving
    device's midpoint step), fires that many matching-sign pulses on W and
    is debited by the granted amount. H therefore carries pending weight
    motion and lr sets the rate at which A drains into W.
    """
    k = state.cursors[l]
    a_tile = state.a_tiles[l]
    w_tile = state.net.tiles[l]
    one_hot = np.zeros(a_tile.cols)
    one_hot[k] = 1.0
    read = a_tile.backward_mac(one_hot) - a_tile.symmetry_point()[:, k]
    state.hidden[l][:, k] += cfg.lr * read
    unit = w_tile.midpoint_step()[:, k]
    h_col = state.hidden[l][:, k]
    valid = unit > 0
    grants = np.zeros(h_col.shape, dtype=np.int64)
    grants[valid] = (np.abs(h_col[valid]) // unit[valid]).astype(np.int64)
    if grants.any():
        sign = np.sign(h_col)
        h_col -= sign * grants * unit
        up = np.zeros(w_tile.shape, dtype=bool)
        down = np.zeros(w_tile.shape, dtype=bool)
        remaining = grants.copy()
        # pulse trains run in lockstep, each round fires devices still owed
        while remaining.any():
            owed = remaining > 0
            up[:, k] = owed & (sign > 0)
            down[:, k] = owed & (sign < 0)
            w_tile.apply_pulses(up, down, rng)
            remaining[owed] -= 1
    state.cursors[l] = (k + 1) % a_tile.cols


def ttv2_step(state: TTv2State, x: np.ndarray, y: int, cfg: TrainConfig,
              rng: np.random.Generator) -> float:
    """One sample of two-tile training; returns the cross-entropy loss."""
    net = state.net
    last = net.spec.n_layers - 1
    acts = [np.asarray(x, dtype=np.float64)]
    pre = []
    h = acts[0]
    for l, tile in enumerate(net.tiles):
        z = net._undo_map(l, tile.forward_mac(h), float(h.sum())) \
            + net.biases[l]
        pre.append(z)
        h = relu(z) if l < last else z
        acts.append(h)
    p = softmax(pre[-1])
    loss = -math.log(max(p[int(y)], 1e-300))
    delta = p.copy()
    delta[int(y)] -= 1.0
    for l in range(last, -1, -1):
        if cfg.fast_lr:
            state.a_tiles[l].stochastic_update(acts[l], delta, cfg.fast_lr,
                                               rng)
        if cfg.lr:
            net.biases[l] -= cfg.lr * delta
        if l > 0:
            back = net._undo_map(l, net.tiles[l].backward_mac(delta),
                                 float(delta.sum()))
            delta = back * (pre[l - 1] > 0)
        state.counters[l] += 1
        if cfg.lr and state.counters[l] % cfg.transfer_every == 0:
            _transfer_column(state, l, cfg, rng)
    return loss


def train_ttv2(spec: NetworkSpec, train: Dataset, dist: DeviceDistribution,
               cfg: TrainConfig, test: Dataset | None = None,
               *, sigma_c2c=None) -> tuple[AnalogNetwork, TrainHistory]:
    """Full two-tile training run; deterministic under cfg.seed."""
    if len(train) == 0:
        raise ValueError("training set is empty")
    state = init_ttv2(spec, dist, cfg, sigma_c2c=sigma_c2c)
    shuffle_rng = derive_rng(cfg.seed, 1)
    update_rng = derive_rng(cfg.seed, 3)
    history = TrainHistory()
    for epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(len(train))
        total = 0.0
        for i in order:
            total += ttv2_step(state, train.x[i], int(train.y[i]), cfg,
                               update_rng)
        test_acc = evaluate(state.net, test) if test is not None \
            else float("nan")
        history.append(epoch, evaluate(state.net, train), test_acc,
                       total / len(train))
    return state.net, history


def program_network(net: Network, dist: DeviceDistribution | None = None, *,
                    seed: int = 0, epsilon: float = 0.02, max_iter: int = 200,
                    margin: float = 0.9, sigma_c2c=None
                    ) -> tuple[AnalogNetwork, list[ProgramReport]]:
    """Map a digital network onto tiles via program-and-verify.

    Each weight matrix is min-max mapped onto the central band of the tile
    range and written with closed-loop pulses; the inverse affine map is
    stored so analog scores track the digital ones up to programming error.
    """
    from .device import DEFAULT_SIGMA_C2C
    if dist is None:
        dist = default_distribution()
    if sigma_c2c is None:
        sigma_c2c = DEFAULT_SIGMA_C2C
    tiles, scales, offsets, reports = [], [], [], []
    for l, w in enumerate(net.weights):
        tile = AnalogTile.from_distribution(
            w.shape[0], w.shape[1], dist, seed=seed, stream_id=20 + l,
            sigma_c2c=sigma_c2c)
        targets = map_weights_to_targets(w, tile, margin=margin)
        reports.append(tile.program_and_verify(targets, epsilon=epsilon,
                                               max_iter=max_iter))
        scale, offset = weight_map_affine(w, tile, margin=margin)
        if scale == 0.0:
            # constant matrix: drop the map and keep the constant digitally
            scale, offset = 1.0, 0.0
            tile.set_weights(np.full(w.shape, float(w.ravel()[0])))
        tiles.append(tile)
        scales.append(scale)
        offsets.append(offset)
    analog = AnalogNetwork(net.spec, tiles, [b.copy() for b in net.biases],
                           scales, offsets)
    return analog, reports


# ---------------------------------------------------------------------------
# file formats


def save_model(net, path, *, scaler: FeatureScaler | None = None,
               classes=None, extra: dict | None = None) -> None:
    """Serialize a digital or analog network to JSON.

    Analog networks are stored through their effective weight matrices, which
    is exactly what their noise-free forward computes.
    """
    if isinstance(net, AnalogNetwork):
        weights = net.read_weight_matrices()
        biases = net.biases
    else:
        weights = net.weights
        biases = net.biases
    payload = {
        "spec": {"layer_dims": list(net.spec.layer_dims)},
        "weights": [w.ravel().tolist() for w in weights],
        "biases": [b.tolist() for b in biases],
        "scaler": scaler.to_dict() if scaler is not None else None,
        "classes": list(int(c) for c in classes) if classes is not None
                   else None,
    }
    if extra:
        payload.update(extra)
    Path(path).write_text(json.dumps(payload) + "\n")


def load_model(path):
    """Rebuild a digital network plus its scaler and class list."""
    d = json.loads(Path(path).read_text())
    spec = NetworkSpec(tuple(d["spec"]["layer_dims"]))
    net = Network(spec, seed=0)
    dims = spec.layer_dims
    for l in range(spec.n_layers):
        w = np.asarray(d["weights"][l], dtype=np.float64)
        net.weights[l] = w.reshape(dims[l], dims[l + 1])
        net.biases[l] = np.asarray(d["biases"][l], dtype=np.float64)
    scaler = FeatureScaler.from_dict(d["scaler"]) if d.get("scaler") else None
    classes = d.get("classes")
    return net, scaler, classes


def write_history_csv(history: TrainHistory, path, header_lines=()) -> None:
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_acc", "test_acc", "loss"])
        for r in history.records:
            writer.writerow([r.epoch, repr(r.train_acc), repr(r.test_acc),
                             repr(r.loss)])


def read_history_csv(path) -> TrainHistory:
    history = TrainHistory()
    with open(path) as fh:
        rows = [r for r in csv.reader(fh)
                if r and not r[0].startswith("#")]
    if not rows or rows[0] != ["epoch", "train_acc", "test_acc", "loss"]:
        raise ValueError(f"{path}: not a history file")
    for r in rows[1:]:
        history.append(int(r[0]), float(r[1]), float(r[2]), float(r[3]))
    return history
