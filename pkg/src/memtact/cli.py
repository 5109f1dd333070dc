"""Command line front end for the full pipeline.

Subcommands: gen-data, extract-features, fit-device, simulate-trace, train,
program, infer. Every command resolves its settings as flags over config-file
values over defaults, logs to stderr, and stamps outputs with a hash of the
resolved configuration so results can be traced back to their settings.
"""

from __future__ import annotations

import argparse
import glob as globlib
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import crossbar, device, gesturegen, nn, tactile
from .data import Dataset, FeatureScaler, derive_rng, stratified_split_indices

log = logging.getLogger("memtact")


def _resolve(args: argparse.Namespace, defaults: dict) -> dict:
    """Merge defaults, config-file values, and explicit flags, in that order."""
    cfg = dict(defaults)
    if getattr(args, "config", None):
        try:
            file_cfg = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise SystemExit(f"error: cannot read config {args.config}: {e}")
        unknown = set(file_cfg) - set(defaults)
        if unknown:
            raise SystemExit(f"error: unknown config keys {sorted(unknown)}")
        cfg.update(file_cfg)
    for key in defaults:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    return cfg


def _config_hash(cfg: dict) -> str:
    canon = json.dumps(cfg, sort_keys=True, default=str)
    return hashlib.sha256(canon.encode()).hexdigest()[:12]


def _parse_scheme(text: str) -> device.PulseScheme:
    parts = [int(v) for v in text.split(",")]
    if len(parts) != 4:
        raise SystemExit("error: scheme must be batches,up,down,alternating")
    return device.PulseScheme(*parts)


def _load_features(path) -> tuple[np.ndarray, np.ndarray]:
    try:
        return tactile.read_features_csv(path)
    except (OSError, ValueError) as e:
        raise SystemExit(f"error: {e}")


def _encode_labels(y: np.ndarray) -> tuple[np.ndarray, list]:
    classes = sorted(int(c) for c in np.unique(y))
    index = {c: i for i, c in enumerate(classes)}
    return np.array([index[int(v)] for v in y]), classes


# ---------------------------------------------------------------------------
# commands


def cmd_gen_data(args) -> int:
    defaults = dict(labels=10, per_label=306, speed_mix="1/3,1/3,1/3",
                    noise=gesturegen.DEFAULT_NOISE_STD, seed=0)
    cfg = _resolve(args, defaults)
    mix = []
    for part in str(cfg["speed_mix"]).split(","):
        num, _, den = part.partition("/")
        mix.append(float(num) / float(den) if den else float(num))
    spec = gesturegen.GenSpec(
        samples_per_label=int(cfg["per_label"]), label_set=int(cfg["labels"]),
        speed_mix=tuple(mix), noise_std=float(cfg["noise"]),
        seed=int(cfg["seed"]))
    gestures, manifest = gesturegen.generate_dataset(spec)
    manifest["config_hash"] = _config_hash(cfg)
    tactile.write_gestures_jsonl(gestures, args.out)
    manifest_path = str(args.out) + ".manifest.json"
    Path(manifest_path).write_text(json.dumps(manifest, indent=2) + "\n")
    log.info("wrote %d gestures to %s (manifest %s)", len(gestures), args.out,
             manifest_path)
    return 0


def cmd_extract(args) -> int:
    defaults = dict(window=3)
    cfg = _resolve(args, defaults)
    try:
        gestures = tactile.read_gestures_jsonl(args.data)
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as e:
        raise SystemExit(f"error: {e}")
    feats = np.empty((len(gestures), tactile.FEATURE_LENGTH))
    labels = np.empty(len(gestures), dtype=np.int64)
    for i, g in enumerate(gestures):
        feats[i] = tactile.extract_features(
            tactile.preprocess(g, window=int(cfg["window"])))
        labels[i] = g.label
    tactile.write_features_csv(feats, labels, args.out,
                               header_lines=[f"config_hash={_config_hash(cfg)}"])
    log.info("wrote %d feature rows to %s", len(gestures), args.out)
    return 0


def cmd_simulate_trace(args) -> int:
    defaults = dict(scheme="10,200,200,1000", w0=0.0, seed=0, index=0)
    cfg = _resolve(args, defaults)
    try:
        params = device.read_device_params(args.params)
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as e:
        raise SystemExit(f"error: {e}")
    if isinstance(params, list):
        try:
            params = params[int(cfg["index"])]
        except IndexError:
            raise SystemExit(f"error: params index {cfg['index']} out of range")
    scheme = _parse_scheme(str(cfg["scheme"]))
    try:
        trace = device.simulate_trace(params, scheme, float(cfg["w0"]),
                                      derive_rng(int(cfg["seed"]), 0))
    except ValueError as e:
        raise SystemExit(f"error: {e}")
    with open(args.out, "w") as fh:
        fh.write(f"# config_hash={_config_hash(cfg)}\n")
    with open(args.out, "a", newline="") as fh:
        import csv as _csv
        writer = _csv.writer(fh)
        writer.writerow(["pulse_index", "conductance"])
        for i, v in enumerate(trace.samples):
            writer.writerow([i, repr(float(v))])
    log.info("wrote %d trace samples to %s", len(trace), args.out)
    return 0


def cmd_fit_device(args) -> int:
    defaults = dict(scheme="10,200,200,1000", restarts=8, seed=0)
    cfg = _resolve(args, defaults)
    paths = []
    for pattern in args.traces:
        hits = sorted(globlib.glob(pattern))
        paths.extend(hits if hits else [pattern])
    if not paths:
        raise SystemExit("error: no trace files given")
    scheme = _parse_scheme(str(cfg["scheme"]))
    fitted = []
    for path in paths:
        try:
            trace = device.read_trace_csv(path)
            params, report = device.fit_softbounds(
                trace, scheme, restarts=int(cfg["restarts"]),
                seed=int(cfg["seed"]))
        except (OSError, ValueError) as e:
            raise SystemExit(f"error: {path}: {e}")
        log.info("fit %s: residual %.3g after %d evals", path, report.mad,
                 report.evaluations)
        fitted.append(params)
    device.write_device_params(fitted if len(fitted) > 1 else fitted[0],
                               args.out)
    log.info("wrote %d fitted device records to %s", len(fitted), args.out)
    if args.dist_out:
        if len(fitted) < 2:
            raise SystemExit(
                "error: need at least 2 traces to build a distribution")
        dist = device.build_distribution(fitted)
        device.write_distribution(dist, args.dist_out,
                                  extra={"config_hash": _config_hash(cfg)})
        log.info("wrote distribution to %s", args.dist_out)
    return 0


def _split_features(x, y, test_fraction, seed):
    y_enc, classes = _encode_labels(y)
    train_idx, test_idx = stratified_split_indices(
        y_enc, test_fraction, derive_rng(seed, 7))
    scaler = FeatureScaler.fit(x[train_idx])
    train = Dataset(scaler.transform(x[train_idx]), y_enc[train_idx])
    test = Dataset(scaler.transform(x[test_idx]), y_enc[test_idx])
    return train, test, scaler, classes


def cmd_train(args) -> int:
    defaults = dict(mode="fp_sgd", hidden=0, lr=None, fast_lr=0.5,
                    transfer_every=5, epochs=100, seed=0, test_fraction=0.25)
    cfg = _resolve(args, defaults)
    x, y = _load_features(args.features)
    try:
        train, test, scaler, classes = _split_features(
            x, y, float(cfg["test_fraction"]), int(cfg["seed"]))
    except ValueError as e:
        raise SystemExit(f"error: {e}")
    dims = [x.shape[1]]
    if int(cfg["hidden"]) > 0:
        dims.append(int(cfg["hidden"]))
    dims.append(len(classes))
    spec = nn.NetworkSpec(tuple(dims))
    mode = str(cfg["mode"])
    if cfg["lr"] is None:
        cfg["lr"] = 0.05 if mode == "fp_sgd" else 0.1
    lr = float(cfg["lr"])
    tcfg = nn.TrainConfig(mode=mode, lr=lr, fast_lr=float(cfg["fast_lr"]),
                          transfer_every=int(cfg["transfer_every"]),
                          epochs=int(cfg["epochs"]), seed=int(cfg["seed"]))
    chash = _config_hash(cfg)
    if mode == "fp_sgd":
        net = nn.Network(spec, seed=int(cfg["seed"]))
        history = nn.train_sgd_fp(net, train, tcfg, test)
        model = net
    else:
        dist = _load_distribution(getattr(args, "dist", None))
        model, history = nn.train_ttv2(spec, train, dist, tcfg, test)
    nn.save_model(model, args.model_out, scaler=scaler, classes=classes,
                  extra={"config_hash": chash, "mode": mode})
    if args.history_out:
        nn.write_history_csv(history, args.history_out,
                             header_lines=[f"config_hash={chash}"])
    if len(history):
        last = history.records[-1]
        log.info("final accuracy: train %.4f test %.4f", last.train_acc,
                 last.test_acc)
    log.info("wrote model to %s", args.model_out)
    return 0


def _load_distribution(path) -> device.DeviceDistribution:
    if not path:
        return device.default_distribution()
    try:
        return device.read_distribution(path)
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as e:
        raise SystemExit(f"error: {e}")


def cmd_program(args) -> int:
    defaults = dict(epsilon=0.02, max_iter=200, seed=0)
    cfg = _resolve(args, defaults)
    try:
        net, scaler, classes = nn.load_model(args.model)
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as e:
        raise SystemExit(f"error: {e}")
    dist = _load_distribution(getattr(args, "dist", None))
    analog, reports = nn.program_network(
        net, dist, seed=int(cfg["seed"]), epsilon=float(cfg["epsilon"]),
        max_iter=int(cfg["max_iter"]))
    chash = _config_hash(cfg)
    nn.save_model(analog, args.out, scaler=scaler, classes=classes,
                  extra={"config_hash": chash, "mode": "programmed"})
    agg = {"layers": [r.aggregates() for r in reports],
           "config_hash": chash}
    for l, r in enumerate(reports):
        log.info("layer %d: %.2f%% converged, %.1f mean iterations", l,
                 100 * r.converged_fraction, r.mean_iterations)
    if args.report_out:
        import csv as _csv
        with open(args.report_out, "w", newline="") as fh:
            fh.write(f"# config_hash={chash}\n")
            writer = _csv.writer(fh)
            writer.writerow(["layer", "row", "col", "target", "achieved",
                             "iterations", "converged"])
            for l, rep in enumerate(reports):
                rows, cols = rep.targets.shape
                for i in range(rows):
                    for j in range(cols):
                        writer.writerow([
                            l, i, j, repr(float(rep.targets[i, j])),
                            repr(float(rep.achieved[i, j])),
                            int(rep.iterations[i, j]),
                            int(rep.converged[i, j])])
    if args.summary_out:
        Path(args.summary_out).write_text(json.dumps(agg, indent=2) + "\n")
    log.info("wrote programmed model to %s", args.out)
    return 0


def _model_accuracy(model_path, x, y) -> float:
    net, scaler, classes = nn.load_model(model_path)
    if classes is None:
        raise SystemExit(f"error: {model_path} lacks a class list")
    index = {int(c): i for i, c in enumerate(classes)}
    try:
        y_enc = np.array([index[int(v)] for v in y])
    except KeyError as e:
        raise SystemExit(f"error: label {e} not known to the model")
    xt = scaler.transform(x) if scaler is not None else x
    return nn.evaluate(net, Dataset(xt, y_enc))


def cmd_infer(args) -> int:
    defaults = dict(seed=0)
    cfg = _resolve(args, defaults)
    x, y = _load_features(args.features)
    acc = _model_accuracy(args.model, x, y)
    report = {"model": str(args.model), "accuracy": acc, "samples": len(y),
              "config_hash": _config_hash(cfg)}
    if args.baseline:
        base = _model_accuracy(args.baseline, x, y)
        report["baseline_accuracy"] = base
        report["accuracy_gap"] = base - acc
    text = json.dumps(report, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    log.info("accuracy %.4f on %d samples", acc, len(y))
    return 0


# ---------------------------------------------------------------------------
# wiring


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="memtact",
        description="Analog crossbar gesture-recognition pipeline")
    parser.add_argument("-v", "--verbose", action="store_true",
                        help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON config file")
        p.set_defaults(fn=fn)
        return p

    p = add("gen-data", cmd_gen_data, "render a synthetic gesture dataset")
    p.add_argument("--labels", type=int, choices=(5, 10))
    p.add_argument("--per-label", dest="per_label", type=int)
    p.add_argument("--speed-mix", dest="speed_mix")
    p.add_argument("--noise", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="output JSONL path")

    p = add("extract-features", cmd_extract,
            "turn gesture series into feature rows")
    p.add_argument("--data", required=True, help="gesture JSONL path")
    p.add_argument("--window", type=int)
    p.add_argument("--out", required=True, help="output CSV path")

    p = add("simulate-trace", cmd_simulate_trace,
            "simulate a characterization pulse train")
    p.add_argument("--params", required=True, help="device params JSON")
    p.add_argument("--index", type=int, help="record index when params is a list")
    p.add_argument("--scheme", help="batches,up,down,alternating")
    p.add_argument("--w0", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="output CSV path")

    p = add("fit-device", cmd_fit_device,
            "fit soft-bounds parameters from traces")
    p.add_argument("--traces", nargs="+", required=True,
                   help="trace CSV paths or globs")
    p.add_argument("--scheme", help="batches,up,down,alternating")
    p.add_argument("--restarts", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="fitted params JSON path")
    p.add_argument("--dist-out", dest="dist_out",
                   help="optional distribution JSON path")

    p = add("train", cmd_train, "train a classifier on feature rows")
    p.add_argument("--features", required=True, help="feature CSV path")
    p.add_argument("--mode", choices=("fp_sgd", "ttv2"))
    p.add_argument("--hidden", type=int, help="hidden width, 0 for none")
    p.add_argument("--lr", type=float)
    p.add_argument("--fast-lr", dest="fast_lr", type=float)
    p.add_argument("--transfer-every", dest="transfer_every", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--test-fraction", dest="test_fraction", type=float)
    p.add_argument("--dist", help="device distribution JSON (ttv2 mode)")
    p.add_argument("--model-out", dest="model_out", required=True)
    p.add_argument("--history-out", dest="history_out")

    p = add("program", cmd_program,
            "write a trained model onto analog tiles")
    p.add_argument("--model", required=True, help="digital model JSON")
    p.add_argument("--dist", help="device distribution JSON")
    p.add_argument("--epsilon", type=float)
    p.add_argument("--max-iter", dest="max_iter", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="programmed model JSON")
    p.add_argument("--report-out", dest="report_out",
                   help="per-device programming CSV")
    p.add_argument("--summary-out", dest="summary_out",
                   help="aggregate programming JSON")

    p = add("infer", cmd_infer, "evaluate a model on feature rows")
    p.add_argument("--model", required=True, help="model JSON")
    p.add_argument("--features", required=True, help="feature CSV path")
    p.add_argument("--baseline", help="baseline model JSON for gap reporting")
    p.add_argument("--out", help="accuracy report JSON path")
    p.add_argument("--seed", type=int)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except SystemExit:
        raise
    except (OSError, ValueError) as e:
        log.error("%s", e)
        return 1


if __name__ == "__main__":
    sys.exit(main())
