"""Small fully-connected network trained from scratch on proposal features.

The trunk is a chain of affine+ReLU layers; heads are affine.  Four head
kinds cover the loss formulations:

- ``reg``: per-class pose embeddings, (B, n_classes, n_dims)
- ``cls``: per-class bin logits, (B, n_classes, n_bins)
- ``joint_reg``: two branches off a shared trunk prefix, a detection head
  over n_classes+1 logits (background first) and a pose head as in ``reg``
- ``joint_cls``: one head of n_classes*n_bins + 1 logits, class-bin slots
  first and the background slot last

Training is plain SGD with momentum, weight decay on weights only, and a
step learning-rate schedule.  Batches mix foreground and background
proposals with replacement; foreground samples are mirrored with
probability 1/2 by regenerating the feature at the flipped azimuth.  All
randomness comes from seeded generators, so runs are bitwise
reproducible.  The training log measures loss on a fixed probe batch, so
it reflects parameter movement rather than batch sampling noise.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .angles import decode, flip_azimuth
from .errors import (
    AmbiguousDecode,
    ConfigError,
    DivergenceError,
    EmptyClassError,
    InvalidConfig,
    LayoutError,
)
from .losses import (
    JointClsOutputs,
    JointRegOutputs,
    LossResult,
    LossSpec,
    Target,
    classification_loss,
    geometric_classification_loss,
    joint_classification_loss,
    joint_detection_scores,
    joint_regression_loss,
    regression_loss,
    softmax,
)
from .synthetic import ClassSpec, Dataset, appearance

HEAD_KINDS = ("reg", "cls", "joint_reg", "joint_cls")

# loss kind -> head kind it trains
LOSS_HEADS = {
    "regression": "reg",
    "classification": "cls",
    "geometric": "cls",
    "joint_regression": "joint_reg",
    "joint_classification": "joint_cls",
}

POSE_ONLY_LOSSES = ("regression", "classification", "geometric")


@dataclass(frozen=True)
class NetConfig:
    input_dim: int
    trunk_widths: tuple[int, ...]
    head: str
    n_classes: int
    n_bins: int = 24
    n_dims: int = 3
    split_depth: int = 1
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "trunk_widths", tuple(self.trunk_widths))
        if self.input_dim < 1:
            raise InvalidConfig(f"input_dim must be >= 1, got {self.input_dim}")
        if any(w < 1 for w in self.trunk_widths):
            raise InvalidConfig(f"trunk widths must be >= 1, got {self.trunk_widths}")
        if self.head not in HEAD_KINDS:
            raise InvalidConfig(f"head must be one of {HEAD_KINDS}, got {self.head!r}")
        if self.n_classes < 1:
            raise InvalidConfig(f"n_classes must be >= 1, got {self.n_classes}")
        if self.n_bins < 2:
            raise InvalidConfig(f"n_bins must be >= 2, got {self.n_bins}")
        if self.n_dims not in (2, 3):
            raise InvalidConfig(f"n_dims must be 2 or 3, got {self.n_dims}")
        if self.head == "joint_reg" and not 0 <= self.split_depth <= len(self.trunk_widths):
            raise InvalidConfig(
                f"split_depth must be in [0, {len(self.trunk_widths)}], got {self.split_depth}"
            )


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.001
    momentum: float = 0.9
    weight_decay: float = 0.0005
    batch_size: int = 128
    positive_fraction: float = 0.25
    total_iters: int = 3000
    decay_at: tuple[int, ...] = (2000,)
    lr_decay_factor: float = 10.0
    flip_augment: bool = True
    log_every: int = 100
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "decay_at", tuple(self.decay_at))
        if not (np.isfinite(self.lr) and self.lr >= 0.0):
            raise InvalidConfig(f"lr must be >= 0, got {self.lr}")
        if not 0.0 <= self.momentum < 1.0:
            raise InvalidConfig(f"momentum must be in [0, 1), got {self.momentum}")
        if self.weight_decay < 0.0:
            raise InvalidConfig(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.batch_size < 1:
            raise InvalidConfig(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0.0 <= self.positive_fraction <= 1.0:
            raise InvalidConfig(
                f"positive_fraction must be in [0, 1], got {self.positive_fraction}"
            )
        if self.total_iters < 1:
            raise InvalidConfig(f"total_iters must be >= 1, got {self.total_iters}")
        if self.lr_decay_factor <= 0.0:
            raise InvalidConfig(f"lr_decay_factor must be > 0, got {self.lr_decay_factor}")
        if self.log_every < 1:
            raise InvalidConfig(f"log_every must be >= 1, got {self.log_every}")
        if any(m < 0 for m in self.decay_at):
            raise InvalidConfig(f"decay milestones must be >= 0, got {self.decay_at}")


@dataclass
class Dense:
    w: np.ndarray
    b: np.ndarray
    vw: np.ndarray
    vb: np.ndarray


@dataclass
class ModelParams:
    """Ordered mapping of layer name to parameters, plus momentum state."""

    layers: dict[str, Dense]

    @property
    def n_params(self) -> int:
        return sum(layer.w.size + layer.b.size for layer in self.layers.values())

    def copy(self) -> "ModelParams":
        return ModelParams(
            {
                name: Dense(l.w.copy(), l.b.copy(), l.vw.copy(), l.vb.copy())
                for name, l in self.layers.items()
            }
        )

    def all_finite(self) -> bool:
        return all(
            np.all(np.isfinite(l.w)) and np.all(np.isfinite(l.b))
            for l in self.layers.values()
        )


def head_width(cfg: NetConfig) -> int:
    if cfg.head == "reg":
        return cfg.n_classes * cfg.n_dims
    if cfg.head == "cls":
        return cfg.n_classes * cfg.n_bins
    return cfg.n_classes * cfg.n_bins + 1  # joint_cls


def layer_plan(cfg: NetConfig) -> list[tuple[str, int, int]]:
    """(name, fan_in, fan_out) in definition order, which is also the
    parameter initialization draw order."""
    widths = cfg.trunk_widths
    plan = []
    if cfg.head == "joint_reg":
        s = cfg.split_depth
        d = cfg.input_dim
        for i in range(s):
            plan.append((f"trunk{i}", d, widths[i]))
            d = widths[i]
        split_dim = d
        for i in range(s, len(widths)):
            plan.append((f"det{i - s}", d, widths[i]))
            d = widths[i]
        plan.append(("det_head", d, cfg.n_classes + 1))
        d = split_dim
        for i in range(s, len(widths)):
            plan.append((f"pose{i - s}", d, widths[i]))
            d = widths[i]
        plan.append(("pose_head", d, cfg.n_classes * cfg.n_dims))
        return plan
    d = cfg.input_dim
    for i, w in enumerate(widths):
        plan.append((f"trunk{i}", d, w))
        d = w
    plan.append(("head", d, head_width(cfg)))
    return plan


def init_params(cfg: NetConfig) -> ModelParams:
    """Weights N(0, 1/sqrt(fan_in)), biases zero, momentum zero."""
    rng = np.random.default_rng(cfg.seed)
    layers = {}
    for name, fan_in, fan_out in layer_plan(cfg):
        w = rng.normal(0.0, 1.0 / math.sqrt(fan_in), (fan_in, fan_out))
        layers[name] = Dense(w, np.zeros(fan_out), np.zeros_like(w), np.zeros(fan_out))
    return ModelParams(layers)


def _affine(params: ModelParams, name: str, x: np.ndarray) -> np.ndarray:
    layer = params.layers[name]
    return x @ layer.w + layer.b


def _chain(
    params: ModelParams,
    names: Sequence[str],
    x: np.ndarray,
    cache: dict | None,
) -> np.ndarray:
    """Affine+ReLU chain; records (input, preactivation) per layer."""
    a = x
    for name in names:
        pre = _affine(params, name, a)
        if cache is not None:
            cache[name] = (a, pre)
        a = np.maximum(pre, 0.0)
    return a


def _branch_names(cfg: NetConfig) -> tuple[list[str], list[str], list[str]]:
    s = cfg.split_depth
    n = len(cfg.trunk_widths)
    shared = [f"trunk{i}" for i in range(s)]
    det = [f"det{i}" for i in range(n - s)]
    pose = [f"pose{i}" for i in range(n - s)]
    return shared, det, pose


def forward(
    params: ModelParams,
    cfg: NetConfig,
    x: np.ndarray,
    want_cache: bool = False,
):
    """Head outputs for a batch of feature rows.

    Returns the outputs alone, or (outputs, cache) with ``want_cache``;
    the cache feeds backward() without recomputing activations.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[1] != cfg.input_dim:
        raise LayoutError(f"expected (B, {cfg.input_dim}) input, got {x.shape}")
    cache: dict | None = {} if want_cache else None
    if cfg.head == "joint_reg":
        shared, det_names, pose_names = _branch_names(cfg)
        a = _chain(params, shared, x, cache)
        ad = _chain(params, det_names, a, cache)
        det = _affine(params, "det_head", ad)
        if cache is not None:
            cache["det_head"] = (ad, None)
        ap = _chain(params, pose_names, a, cache)
        pose = _affine(params, "pose_head", ap)
        if cache is not None:
            cache["pose_head"] = (ap, None)
        out = JointRegOutputs(det, pose.reshape(x.shape[0], cfg.n_classes, cfg.n_dims))
    else:
        names = [f"trunk{i}" for i in range(len(cfg.trunk_widths))]
        a = _chain(params, names, x, cache)
        raw = _affine(params, "head", a)
        if cache is not None:
            cache["head"] = (a, None)
        b = x.shape[0]
        if cfg.head == "reg":
            out = raw.reshape(b, cfg.n_classes, cfg.n_dims)
        elif cfg.head == "cls":
            out = raw.reshape(b, cfg.n_classes, cfg.n_bins)
        else:  # joint_cls: class-bin slots first, background logit last
            out = JointClsOutputs(
                raw[:, :-1].reshape(b, cfg.n_classes, cfg.n_bins), raw[:, -1]
            )
    if want_cache:
        return out, cache
    return out


def _back_chain(
    params: ModelParams,
    names: Sequence[str],
    delta: np.ndarray,
    cache: dict,
    grads: dict,
) -> np.ndarray:
    """Backprop through an affine+ReLU chain; returns delta at its input.
    Accumulates into grads so shared layers can sum branch contributions."""
    for name in reversed(names):
        a_in, pre = cache[name]
        if pre is not None:
            delta = delta * (pre > 0.0)
        dw = a_in.T @ delta
        db = delta.sum(axis=0)
        if name in grads:
            grads[name] = (grads[name][0] + dw, grads[name][1] + db)
        else:
            grads[name] = (dw, db)
        delta = delta @ params.layers[name].w.T
    return delta


def backward(
    params: ModelParams,
    cfg: NetConfig,
    x: np.ndarray,
    out_grad,
    cache: dict | None = None,
) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """Parameter gradients given the loss gradient at the head outputs.

    ``out_grad`` mirrors the forward output structure.  Without a cache
    the forward pass is recomputed.
    """
    if cache is None:
        _, cache = forward(params, cfg, x, want_cache=True)
    grads: dict[str, tuple[np.ndarray, np.ndarray]] = {}
    b = np.asarray(x).shape[0]
    if cfg.head == "joint_reg":
        shared, det_names, pose_names = _branch_names(cfg)
        d_det = _back_chain(params, det_names + ["det_head"], out_grad.det, cache, grads)
        d_pose = _back_chain(
            params,
            pose_names + ["pose_head"],
            out_grad.pose.reshape(b, -1),
            cache,
            grads,
        )
        _back_chain(params, shared, d_det + d_pose, cache, grads)
        return grads
    if cfg.head == "joint_cls":
        flat = np.concatenate(
            [out_grad.obj.reshape(b, -1), out_grad.back[:, None]], axis=1
        )
    else:
        flat = out_grad.reshape(b, -1)
    names = [f"trunk{i}" for i in range(len(cfg.trunk_widths))]
    _back_chain(params, names + ["head"], flat, cache, grads)
    return grads


def effective_lr(tcfg: TrainConfig, iteration: int) -> float:
    """Step schedule: the base rate divided by the decay factor once per
    milestone already reached (iterations are 0-based)."""
    k = sum(1 for m in tcfg.decay_at if iteration >= m)
    return tcfg.lr / tcfg.lr_decay_factor**k


def sgd_step(
    params: ModelParams,
    grads: dict[str, tuple[np.ndarray, np.ndarray]],
    tcfg: TrainConfig,
    iteration: int,
) -> None:
    """In-place momentum SGD update.  Weight decay applies to weights
    only, never biases, and enters through the velocity:
    v <- momentum*v + g + wd*w;  w <- w - lr_t*v."""
    lr = effective_lr(tcfg, iteration)
    for name, (dw, db) in grads.items():
        layer = params.layers[name]
        layer.vw = tcfg.momentum * layer.vw + dw + tcfg.weight_decay * layer.w
        layer.vb = tcfg.momentum * layer.vb + db
        layer.w = layer.w - lr * layer.vw
        layer.b = layer.b - lr * layer.vb


@dataclass(frozen=True)
class Pool:
    """Flattened view of a dataset's proposals for batch sampling."""

    fg_features: np.ndarray
    fg_class: np.ndarray
    fg_azimuth: np.ndarray
    bg_features: np.ndarray
    specs: dict[int, ClassSpec]


def build_pool(dataset: Dataset) -> Pool:
    fg_feat, fg_cls, fg_az, bg_feat = [], [], [], []
    for scene in dataset.scenes:
        for prop in scene.proposals:
            if prop.is_background:
                bg_feat.append(prop.feature)
            else:
                g = scene.gts[prop.matched_gt]
                fg_feat.append(prop.feature)
                fg_cls.append(g.class_id)
                fg_az.append(g.azimuth)
    d = dataset.feature_dim
    return Pool(
        fg_features=np.array(fg_feat).reshape(-1, d),
        fg_class=np.array(fg_cls, dtype=int),
        fg_azimuth=np.array(fg_az, dtype=float),
        bg_features=np.array(bg_feat).reshape(-1, d),
        specs={s.class_id: s for s in dataset.class_specs},
    )


def make_batch(
    source: Dataset | Pool,
    tcfg: TrainConfig,
    rng: np.random.Generator,
) -> tuple[np.ndarray, list[Target]]:
    """Sample one training batch: ceil(positive_fraction * batch_size)
    foreground rows then background rows, both with replacement.

    With flip_augment each foreground draw is mirrored with probability
    1/2: the target azimuth is reflected and the feature is regenerated
    from the class appearance model at the mirrored azimuth with fresh
    noise.  Backgrounds are rotation-free, so flipping leaves them alone.
    """
    pool = source if isinstance(source, Pool) else build_pool(source)
    n_fg = math.ceil(tcfg.positive_fraction * tcfg.batch_size)
    n_bg = tcfg.batch_size - n_fg
    if n_fg > 0 and pool.fg_features.shape[0] == 0:
        raise EmptyClassError("batch needs foreground samples but the pool has none")
    if n_bg > 0 and pool.bg_features.shape[0] == 0:
        raise EmptyClassError("batch needs background samples but the pool has none")
    feats = []
    targets: list[Target] = []
    if n_fg > 0:
        idx = rng.integers(0, pool.fg_features.shape[0], n_fg)
        flips = rng.random(n_fg) < 0.5 if tcfg.flip_augment else np.zeros(n_fg, bool)
        for i, do_flip in zip(idx, flips):
            cid = int(pool.fg_class[i])
            theta = float(pool.fg_azimuth[i])
            if do_flip:
                theta = flip_azimuth(theta)
                feats.append(appearance(pool.specs[cid], theta, rng))
            else:
                feats.append(pool.fg_features[i])
            targets.append(Target(cid, theta))
    if n_bg > 0:
        idx = rng.integers(0, pool.bg_features.shape[0], n_bg)
        for i in idx:
            feats.append(pool.bg_features[i])
            targets.append(Target(0))
    return np.array(feats), targets


def _loss_fn(spec: LossSpec, cfg: NetConfig) -> Callable[[object, list[Target]], LossResult]:
    kind = spec.kind
    if kind == "regression":
        return lambda o, t: regression_loss(o, t, dim=cfg.n_dims, delta=spec.delta)
    if kind == "classification":
        return classification_loss
    if kind == "geometric":
        return lambda o, t: geometric_classification_loss(o, t, sigma=spec.sigma)
    if kind == "joint_regression":
        return lambda o, t: joint_regression_loss(
            o, t, lam=spec.lam, dim=cfg.n_dims, delta=spec.delta
        )
    return joint_classification_loss


@dataclass(frozen=True)
class LogEntry:
    iteration: int
    lr: float
    loss: float
    loss_per_sample: float


@dataclass
class TrainResult:
    params: ModelParams
    log: list[LogEntry]


def train(
    dataset: Dataset | Pool,
    cfg: NetConfig,
    tcfg: TrainConfig,
    loss: LossSpec | str,
    callback: Callable[[int, ModelParams, float], None] | None = None,
) -> TrainResult:
    """Seeded SGD training of a fresh network on a dataset's proposals.

    The loss must match the head kind.  Pose-only losses cannot digest
    background rows, so they require positive_fraction == 1.  The log
    holds probe-batch loss every log_every iterations (and at the last);
    identical seeds give bitwise identical parameters and logs.  A
    non-finite batch loss aborts with DivergenceError carrying the
    iteration.
    """
    if isinstance(loss, str):
        loss = LossSpec(loss)
    if loss.kind not in LOSS_HEADS:
        raise ConfigError(f"unknown loss kind {loss.kind!r}")
    if LOSS_HEADS[loss.kind] != cfg.head:
        raise ConfigError(
            f"loss {loss.kind!r} trains a {LOSS_HEADS[loss.kind]!r} head, "
            f"but the net has {cfg.head!r}"
        )
    if loss.kind in POSE_ONLY_LOSSES and tcfg.positive_fraction < 1.0:
        raise ConfigError(
            f"loss {loss.kind!r} has no background term; "
            f"set positive_fraction=1, got {tcfg.positive_fraction}"
        )
    pool = dataset if isinstance(dataset, Pool) else build_pool(dataset)
    fn = _loss_fn(loss, cfg)
    params = init_params(cfg)
    batch_rng = np.random.default_rng([tcfg.seed, 0])
    probe_rng = np.random.default_rng([tcfg.seed, 1])
    probe_x, probe_t = make_batch(
        pool, dataclasses.replace(tcfg, flip_augment=False), probe_rng
    )
    log: list[LogEntry] = []
    for t in range(tcfg.total_iters):
        if t % tcfg.log_every == 0 or t == tcfg.total_iters - 1:
            probe = fn(forward(params, cfg, probe_x), probe_t)
            log.append(
                LogEntry(t, effective_lr(tcfg, t), probe.value, probe.value / len(probe_t))
            )
        x, targets = make_batch(pool, tcfg, batch_rng)
        out, cache = forward(params, cfg, x, want_cache=True)
        res = fn(out, targets)
        if not np.isfinite(res.value):
            raise DivergenceError(f"non-finite loss {res.value}", iteration=t)
        grads = backward(params, cfg, x, res.grad, cache)
        sgd_step(params, grads, tcfg, t)
        if callback is not None:
            callback(t, params, res.value)
    if not params.all_finite():
        raise DivergenceError("non-finite parameters after final step")
    return TrainResult(params, log)


@dataclass(frozen=True)
class RegPrediction:
    """Decoded azimuth per (sample, class); degenerate embeddings whose
    circle projection vanishes decode to azimuth 0."""

    angles: np.ndarray  # (B, n_classes)
    embeddings: np.ndarray  # (B, n_classes, n_dims)


@dataclass(frozen=True)
class ClsPrediction:
    bins: np.ndarray  # (B, n_classes), 1-based argmax bin
    probs: np.ndarray  # (B, n_classes, n_bins) per-class softmax


@dataclass(frozen=True)
class JointRegPrediction:
    det_probs: np.ndarray  # (B, n_classes + 1), background column first
    angles: np.ndarray  # (B, n_classes)
    embeddings: np.ndarray


@dataclass(frozen=True)
class JointClsPrediction:
    scores: np.ndarray  # (B, n_classes) marginal detection scores
    bins: np.ndarray  # (B, n_classes)
    probs: np.ndarray  # (B, n_classes, n_bins) pose posterior given class


def _decode_grid(emb: np.ndarray) -> np.ndarray:
    b, n_c, _ = emb.shape
    angles = np.zeros((b, n_c))
    for i in range(b):
        for c in range(n_c):
            try:
                angles[i, c] = decode(emb[i, c])
            except AmbiguousDecode:
                angles[i, c] = 0.0
    return angles


def predict(params: ModelParams, cfg: NetConfig, x: np.ndarray):
    """Head-appropriate predictions for a batch of feature rows."""
    out = forward(params, cfg, x)
    if cfg.head == "reg":
        return RegPrediction(_decode_grid(out), out)
    if cfg.head == "cls":
        probs = softmax(out.reshape(-1, cfg.n_bins)).reshape(out.shape)
        return ClsPrediction(np.argmax(out, axis=2) + 1, probs)
    if cfg.head == "joint_reg":
        return JointRegPrediction(softmax(out.det), _decode_grid(out.pose), out.pose)
    scores = joint_detection_scores(out)
    probs = softmax(out.obj.reshape(-1, cfg.n_bins)).reshape(out.obj.shape)
    return JointClsPrediction(scores, np.argmax(out.obj, axis=2) + 1, probs)
