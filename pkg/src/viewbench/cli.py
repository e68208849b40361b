"""Command-line surface: generate, train, predict, eval, gradcheck, codec.

Commands read one YAML run config (unknown keys are rejected, and the
effective config is echoed into every artifact for provenance), write
through atomic renames, and exit 0 on success, 2 on input or config
errors, 3 on numerical failures (training divergence, gradient check
over tolerance).  Equal inputs and seeds give byte-identical outputs.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np
import yaml

from .angles import bin_center, canonicalize, decode, encode
from .errors import ConfigError, DivergenceError, ViewbenchError
from .experiments import compose_detections
from .gradcheck import loss_gradient_suite, net_gradient_suite
from .losses import LossSpec
from .metrics import evaluate
from .net import NetConfig, TrainConfig, predict as net_predict, train
from .records import (
    atomic_write_text,
    format_detections,
    format_eval_report,
    format_train_log,
    load_checkpoint,
    loss_spec_to_dict,
    parse_detections,
    parse_ground_truths,
    read_benchmark,
    save_checkpoint,
    train_config_to_dict,
    write_benchmark,
)
from .synthetic import ClassSpec, default_class_specs, generate

_LEAF = object()

_CLASS_KEYS = {"class_id", "seed", "feature_dim", "n_harmonics", "symmetry_order", "noise_sigma"}

_SCHEMA = {
    "seed": _LEAF,
    "out_dir": _LEAF,
    "data": _LEAF,
    "dataset": {
        "feature_dim": _LEAF,
        "noise_sigma": _LEAF,
        "n_train_scenes": _LEAF,
        "n_test_scenes": _LEAF,
        "objects_per_scene": _LEAF,
        "proposals_per_gt": _LEAF,
        "backgrounds_per_scene": _LEAF,
        "jitter": _LEAF,
        "gt_size_range": _LEAF,
        "features_binary": _LEAF,
        "classes": _LEAF,
    },
    "net": {
        "trunk_widths": _LEAF,
        "head": _LEAF,
        "n_bins": _LEAF,
        "n_dims": _LEAF,
        "split_depth": _LEAF,
        "seed": _LEAF,
    },
    "train": {
        "lr": _LEAF,
        "momentum": _LEAF,
        "weight_decay": _LEAF,
        "batch_size": _LEAF,
        "positive_fraction": _LEAF,
        "total_iters": _LEAF,
        "decay_at": _LEAF,
        "lr_decay_factor": _LEAF,
        "flip_augment": _LEAF,
        "log_every": _LEAF,
        "seed": _LEAF,
        "checkpoint_every": _LEAF,
    },
    "loss": {"kind": _LEAF, "sigma": _LEAF, "lam": _LEAF, "delta": _LEAF},
    "predict": {"score_floor": _LEAF, "split": _LEAF},
    "eval": {"bins": _LEAF, "iou": _LEAF, "rule": _LEAF},
}

_DEFAULTS = {
    "seed": 0,
    "out_dir": None,
    "data": None,
    "dataset": {
        "feature_dim": 32,
        "noise_sigma": 0.25,
        "n_train_scenes": 200,
        "n_test_scenes": 100,
        "objects_per_scene": [1, 3],
        "proposals_per_gt": 1,
        "backgrounds_per_scene": 8,
        "jitter": 0.15,
        "gt_size_range": [0.15, 0.4],
        "features_binary": False,
        "classes": None,
    },
    "net": {
        "trunk_widths": [64],
        "head": "cls",
        "n_bins": 24,
        "n_dims": 3,
        "split_depth": 1,
        "seed": None,
    },
    "train": {
        "lr": 0.001,
        "momentum": 0.9,
        "weight_decay": 0.0005,
        "batch_size": 128,
        "positive_fraction": 0.25,
        "total_iters": 3000,
        "decay_at": [2000],
        "lr_decay_factor": 10.0,
        "flip_augment": True,
        "log_every": 100,
        "seed": None,
        "checkpoint_every": 0,
    },
    "loss": {"kind": "classification", "sigma": None, "lam": 1.0, "delta": 1.0},
    "predict": {"score_floor": 0.0, "split": "test"},
    "eval": {"bins": [4, 8, 16, 24], "iou": 0.5, "rule": "allpoints"},
}


def _check_keys(doc: dict, schema: dict, prefix: str = "") -> None:
    for key, value in doc.items():
        if key not in schema:
            raise ConfigError(f"unknown config key: {prefix}{key}")
        sub = schema[key]
        if isinstance(sub, dict):
            if value is None:
                continue
            if not isinstance(value, dict):
                raise ConfigError(f"config key {prefix}{key} must be a mapping")
            _check_keys(value, sub, prefix + key + ".")


def _merge(defaults: dict, user: dict) -> dict:
    out = {}
    for key, base in defaults.items():
        if isinstance(base, dict):
            sub = user.get(key) or {}
            out[key] = _merge(base, sub)
        else:
            out[key] = user.get(key, base)
    return out


def load_run_config(path: str | None, seed_override: int | None = None) -> dict:
    """Effective run config: YAML document over defaults, unknown keys
    rejected.  ``--seed`` overrides the top-level seed, which in turn
    fills any net/train seeds left null."""
    user: dict = {}
    if path is not None:
        try:
            user = yaml.safe_load(Path(path).read_text())
        except yaml.YAMLError as e:
            raise ConfigError(f"{path}: invalid YAML: {e}") from None
        if user is None:
            user = {}
        if not isinstance(user, dict):
            raise ConfigError(f"{path}: config must be a mapping at the top level")
        _check_keys(user, _SCHEMA)
        for entry in (user.get("dataset") or {}).get("classes") or []:
            if not isinstance(entry, dict):
                raise ConfigError("dataset.classes entries must be mappings")
            unknown = set(entry) - _CLASS_KEYS
            if unknown:
                raise ConfigError(f"unknown class spec key: {sorted(unknown)[0]}")
    cfg = _merge(_DEFAULTS, user)
    if seed_override is not None:
        cfg["seed"] = seed_override
    if cfg["net"]["seed"] is None:
        cfg["net"]["seed"] = cfg["seed"]
    if cfg["train"]["seed"] is None:
        cfg["train"]["seed"] = cfg["seed"]
    return cfg


def _class_specs(cfg: dict) -> tuple[ClassSpec, ...]:
    ds = cfg["dataset"]
    if ds["classes"] is None:
        return default_class_specs(cfg["seed"], ds["feature_dim"], ds["noise_sigma"])
    specs = []
    for entry in ds["classes"]:
        entry = dict(entry)
        entry.setdefault("seed", cfg["seed"])
        entry.setdefault("feature_dim", ds["feature_dim"])
        entry.setdefault("noise_sigma", ds["noise_sigma"])
        specs.append(ClassSpec(**entry))
    return tuple(specs)


def _out_dir(args, cfg: dict) -> Path:
    out = args.out or cfg.get("out_dir")
    if not out:
        raise ConfigError("no output location: pass --out or set out_dir in the config")
    return Path(out)


def cmd_generate(args) -> int:
    cfg = load_run_config(args.config, args.seed)
    out = _out_dir(args, cfg)
    ds = cfg["dataset"]
    specs = _class_specs(cfg)
    state = np.random.SeedSequence(cfg["seed"]).generate_state(2, np.uint64)
    common = dict(
        objects_per_scene=tuple(ds["objects_per_scene"]),
        proposals_per_gt=ds["proposals_per_gt"],
        backgrounds_per_scene=ds["backgrounds_per_scene"],
        jitter=ds["jitter"],
        gt_size_range=tuple(ds["gt_size_range"]),
    )
    train_ds = generate(int(state[0]), ds["n_train_scenes"], specs, split="train", **common)
    test_ds = generate(int(state[1]), ds["n_test_scenes"], specs, split="test", **common)
    manifest = write_benchmark(
        out, train_ds, test_ds, config_echo=cfg, features_binary=ds["features_binary"]
    )
    for name, d in (("train", train_ds), ("test", test_ds)):
        print(
            f"{name}: {len(d.scenes)} scenes, {len(d.ground_truths())} ground truths, "
            f"{d.n_samples} proposals"
        )
    print(f"manifest: {manifest}")
    return 0


def _require_data(cfg: dict) -> Path:
    if not cfg["data"]:
        raise ConfigError("config needs 'data': path to a benchmark manifest")
    return Path(cfg["data"])


def cmd_train(args) -> int:
    cfg = load_run_config(args.config, args.seed)
    out = _out_dir(args, cfg)
    train_ds, _, _ = read_benchmark(_require_data(cfg))
    net_cfg = NetConfig(
        input_dim=train_ds.feature_dim,
        trunk_widths=tuple(cfg["net"]["trunk_widths"]),
        head=cfg["net"]["head"],
        n_classes=train_ds.n_classes,
        n_bins=cfg["net"]["n_bins"],
        n_dims=cfg["net"]["n_dims"],
        split_depth=cfg["net"]["split_depth"],
        seed=cfg["net"]["seed"],
    )
    tdict = dict(cfg["train"])
    every = tdict.pop("checkpoint_every")
    tdict["decay_at"] = tuple(tdict["decay_at"])
    tcfg = TrainConfig(**tdict)
    loss = LossSpec(**cfg["loss"])
    extra = {
        "config": cfg,
        "loss": loss_spec_to_dict(loss),
        "train": train_config_to_dict(tcfg),
    }
    out.mkdir(parents=True, exist_ok=True)

    def checkpoint_cb(t, params, value):
        if every and (t + 1) % every == 0 and (t + 1) < tcfg.total_iters:
            save_checkpoint(
                out / f"checkpoint_{t + 1:06d}.txt", params, net_cfg, t + 1, extra
            )

    result = train(train_ds, net_cfg, tcfg, loss, callback=checkpoint_cb if every else None)
    save_checkpoint(out / "checkpoint.txt", result.params, net_cfg, tcfg.total_iters, extra)
    atomic_write_text(out / "train_log.txt", format_train_log(result.log))
    last = result.log[-1]
    print(
        f"trained {cfg['net']['head']} head for {tcfg.total_iters} iterations; "
        f"final probe loss/sample {last.loss_per_sample:.6g}"
    )
    print(f"checkpoint: {out / 'checkpoint.txt'}")
    return 0


def cmd_predict(args) -> int:
    cfg = load_run_config(args.config, args.seed)
    ckpt = load_checkpoint(args.checkpoint)
    train_ds, test_ds, _ = read_benchmark(Path(args.data))
    ds = {"train": train_ds, "test": test_ds}[cfg["predict"]["split"]]
    if ckpt.net.input_dim != ds.feature_dim:
        raise ConfigError(
            f"checkpoint expects {ckpt.net.input_dim}-dim features, "
            f"dataset has {ds.feature_dim}"
        )
    if ckpt.net.n_classes != ds.n_classes:
        raise ConfigError(
            f"checkpoint covers {ckpt.net.n_classes} classes, dataset has {ds.n_classes}"
        )
    feats = np.array([p.feature for s in ds.scenes for p in s.proposals]).reshape(
        -1, ds.feature_dim
    )
    net_cfg = ckpt.net
    pred = net_predict(ckpt.params, net_cfg, feats)
    n = feats.shape[0]
    if net_cfg.head == "reg":
        scores = np.ones((n, net_cfg.n_classes))
        angles = pred.angles
    elif net_cfg.head == "cls":
        scores = np.ones((n, net_cfg.n_classes))
        angles = np.vectorize(lambda v: bin_center(int(v), net_cfg.n_bins))(pred.bins)
    elif net_cfg.head == "joint_reg":
        scores = pred.det_probs[:, 1:]
        angles = pred.angles
    else:
        scores = pred.scores
        angles = np.vectorize(lambda v: bin_center(int(v), net_cfg.n_bins))(pred.bins)
    floor = cfg["predict"]["score_floor"]
    dets = compose_detections(ds, scores, angles, floor=floor)
    atomic_write_text(args.out, format_detections(dets))
    print(f"{len(dets)} detections ({net_cfg.head} head, floor {floor}) -> {args.out}")
    return 0


def _print_report(report, bins) -> None:
    header = f"{'class':>8} {'n_gt':>6} {'AP':>8}" + "".join(f"{'AVP' + str(k):>8}" for k in bins)
    print(header)
    for c, m in sorted(report.per_class.items()):
        if m.n_gt == 0:
            row = f"{c:>8} {m.n_gt:>6} {'-':>8}" + "".join(f"{'-':>8}" for _ in bins)
        else:
            row = f"{c:>8} {m.n_gt:>6} {m.ap:>8.4f}" + "".join(
                f"{m.avp[k]:>8.4f}" for k in bins
            )
        print(row)
    print(
        f"{'mean':>8} {'':>6} {report.mean_ap:>8.4f}"
        + "".join(f"{report.mean_avp[k]:>8.4f}" for k in bins)
    )


def cmd_eval(args) -> int:
    bins = tuple(int(b) for b in args.bins.split(","))
    gts = parse_ground_truths(Path(args.gt).read_text(), path=args.gt)
    dets = parse_detections(Path(args.det).read_text(), path=args.det)
    report = evaluate(gts, dets, bins=bins, iou_threshold=args.iou, rule=args.ap_rule)
    _print_report(report, bins)
    if args.out:
        echo = {
            "gt": str(args.gt),
            "det": str(args.det),
            "bins": list(bins),
            "iou": args.iou,
            "rule": args.ap_rule,
        }
        atomic_write_text(args.out, format_eval_report(report, echo))
        print(f"report: {args.out}")
    return 0


def cmd_gradcheck(args) -> int:
    results = loss_gradient_suite(args.seed, corrupt=args.corrupt)
    results += net_gradient_suite(args.seed, corrupt=args.corrupt)
    failed = 0
    for r in results:
        status = "ok" if r.passed else "FAIL"
        print(f"{r.name:<55} slots={r.n_slots:<5} max_rel_err={r.max_rel_err:.3e} "
              f"tol={r.tolerance:.0e} {status}")
        failed += not r.passed
    print(f"{len(results) - failed}/{len(results)} gradient checks passed")
    return 3 if failed else 0


def cmd_codec(args) -> int:
    dim = {"2d": 2, "3d": 3}[args.kind]
    theta = canonicalize(math.radians(args.angle_deg))
    emb = encode(theta, dim)
    round_trip = math.degrees(decode(emb))
    print(f"encode({args.angle_deg:g} deg, {args.kind}) = ["
          + ", ".join(format(v, ".12g") for v in emb) + "]")
    print(f"decode round trip = {round_trip:.12g} deg")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="viewbench",
        description="Synthetic detection+viewpoint benchmark: data generation, "
        "training, prediction, evaluation, and gradient verification.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="YAML run config")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")

    p = sub.add_parser("generate", help="generate a seeded benchmark dataset")
    common(p)
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train a network on a generated dataset")
    common(p)
    p.add_argument("--out", help="output directory for checkpoint and log")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="write detections for a dataset split")
    p.add_argument("checkpoint", help="checkpoint file")
    p.add_argument("data", help="benchmark manifest")
    common(p)
    p.add_argument("--out", required=True, help="output detection file")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="score detections against ground truth")
    p.add_argument("gt", help="ground-truth record file")
    p.add_argument("det", help="detection record file")
    p.add_argument("--bins", default="4,8,16,24", help="comma-separated AVP bin counts")
    p.add_argument("--iou", type=float, default=0.5, help="IoU match threshold")
    p.add_argument("--ap-rule", choices=("allpoints", "elevenpoint"), default="allpoints")
    p.add_argument("--out", help="write a JSON report here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--corrupt", action="store_true",
                   help="test hook: corrupt one slot so the suite must fail")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("codec", help="print an angle embedding and its round trip")
    p.add_argument("angle_deg", type=float)
    p.add_argument("kind", choices=("2d", "3d"))
    p.set_defaults(func=cmd_codec)
    return parser


def entry(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except DivergenceError as e:
        where = f" at iteration {e.iteration}" if e.iteration is not None else ""
        print(f"error: training diverged{where}: {e}", file=sys.stderr)
        return 3
    except (ViewbenchError, OSError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(entry())
