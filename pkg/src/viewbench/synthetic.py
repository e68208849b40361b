"""Desk-scale synthetic benchmark for joint detection and viewpoint.

Each class has a deterministic appearance curve in feature space: a
truncated Fourier series in the azimuth, with per-class harmonic
coefficients drawn once from the class seed.  A class with symmetry order
m > 1 repeats its appearance every 2*pi/m of azimuth, so views that far
apart are indistinguishable by construction; no estimator can beat
1/m azimuth accuracy on such a class at fine binnings.

Scenes are unit squares holding a few ground-truth objects, jittered
foreground proposals (IoU >= 0.5 with their source object), and
background proposals (IoU < 0.3 against every ground truth) whose
features are pure standard normal noise.  All randomness is derived from
(seed, scene_index) streams so generation is bitwise reproducible, and
every proposal records the seed of its own noise draw so features can be
regenerated and audited exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from .angles import TWO_PI, canonicalize
from .errors import GenerationError, InvalidParameter
from .metrics import Box, Detection, EvalReport, GroundTruth, evaluate, iou

_MAX_TRIES = 200


@dataclass(frozen=True)
class ClassSpec:
    """Appearance model of one class.

    The curve is g(theta) = sum_h a_h cos(h*m*theta) + b_h sin(h*m*theta)
    with coefficient rows drawn N(0, 1/n_harmonics) from the class seed,
    so each feature coordinate has unit variance across coefficient draws
    at every azimuth.  Observed features add N(0, noise_sigma^2) noise.
    """

    class_id: int
    seed: int
    feature_dim: int = 32
    n_harmonics: int = 3
    symmetry_order: int = 1
    noise_sigma: float = 0.25

    def __post_init__(self):
        if self.class_id < 1:
            raise InvalidParameter(f"class_id must be >= 1, got {self.class_id}")
        if self.feature_dim < 1:
            raise InvalidParameter(f"feature_dim must be >= 1, got {self.feature_dim}")
        if self.n_harmonics < 1:
            raise InvalidParameter(f"n_harmonics must be >= 1, got {self.n_harmonics}")
        if self.symmetry_order < 1:
            raise InvalidParameter(
                f"symmetry_order must be >= 1, got {self.symmetry_order}"
            )
        if not (np.isfinite(self.noise_sigma) and self.noise_sigma >= 0.0):
            raise InvalidParameter(f"noise_sigma must be >= 0, got {self.noise_sigma}")


@lru_cache(maxsize=256)
def harmonic_coefficients(spec: ClassSpec) -> tuple[np.ndarray, np.ndarray]:
    """Cosine and sine coefficient matrices, (n_harmonics, feature_dim)."""
    rng = np.random.default_rng([spec.seed, spec.class_id])
    scale = 1.0 / np.sqrt(spec.n_harmonics)
    a = rng.normal(0.0, scale, (spec.n_harmonics, spec.feature_dim))
    b = rng.normal(0.0, scale, (spec.n_harmonics, spec.feature_dim))
    return a, b


def appearance_clean(spec: ClassSpec, theta: float) -> np.ndarray:
    """Noiseless feature vector of the class at azimuth theta."""
    theta = canonicalize(theta)
    a, b = harmonic_coefficients(spec)
    h = np.arange(1, spec.n_harmonics + 1) * spec.symmetry_order
    phases = h * theta
    return np.cos(phases) @ a + np.sin(phases) @ b


def appearance(spec: ClassSpec, theta: float, rng: np.random.Generator) -> np.ndarray:
    """Observed feature vector: clean curve plus N(0, noise_sigma^2) noise."""
    feat = appearance_clean(spec, theta)
    if spec.noise_sigma > 0.0:
        feat = feat + spec.noise_sigma * rng.standard_normal(spec.feature_dim)
    return feat


@dataclass(frozen=True)
class Proposal:
    """One candidate box with its observed feature vector.

    ``matched_gt`` is the index into the scene's ground-truth list for
    foreground proposals and -1 for background.  ``noise_seed`` is the
    seed of the generator that drew this proposal's noise (foreground) or
    its whole feature (background), kept so the feature can be
    regenerated bit for bit.
    """

    box: Box
    feature: np.ndarray
    matched_gt: int
    iou: float
    noise_seed: int

    @property
    def is_background(self) -> bool:
        return self.matched_gt < 0


@dataclass(frozen=True)
class Scene:
    image_id: str
    gts: tuple[GroundTruth, ...]
    proposals: tuple[Proposal, ...]


@dataclass(frozen=True)
class Dataset:
    scenes: tuple[Scene, ...]
    class_specs: tuple[ClassSpec, ...]
    feature_dim: int
    split: str
    seed: int

    @property
    def n_samples(self) -> int:
        return sum(len(s.proposals) for s in self.scenes)

    @property
    def n_classes(self) -> int:
        return len(self.class_specs)

    def spec_of(self, class_id: int) -> ClassSpec:
        for spec in self.class_specs:
            if spec.class_id == class_id:
                return spec
        raise InvalidParameter(f"no class spec with class_id {class_id}")

    def ground_truths(self) -> list[GroundTruth]:
        return [g for scene in self.scenes for g in scene.gts]


def _random_box(rng: np.random.Generator, size_range: tuple[float, float]) -> Box:
    w = float(rng.uniform(*size_range))
    h = float(rng.uniform(*size_range))
    x0 = float(rng.uniform(0.0, 1.0 - w))
    y0 = float(rng.uniform(0.0, 1.0 - h))
    return Box(x0, y0, x0 + w, y0 + h)


def _jittered_box(rng: np.random.Generator, src: Box, jitter: float) -> Box:
    if jitter == 0.0:
        return src  # rebuilding from center/size would drift by an ulp
    w = src.x_max - src.x_min
    h = src.y_max - src.y_min
    cx = 0.5 * (src.x_min + src.x_max) + float(rng.normal(0.0, jitter)) * w
    cy = 0.5 * (src.y_min + src.y_max) + float(rng.normal(0.0, jitter)) * h
    nw = w * max(1e-3, 1.0 + float(rng.normal(0.0, jitter)))
    nh = h * max(1e-3, 1.0 + float(rng.normal(0.0, jitter)))
    return Box(cx - nw / 2, cy - nh / 2, cx + nw / 2, cy + nh / 2)


def generate(
    seed: int,
    n_scenes: int,
    class_specs: Sequence[ClassSpec],
    objects_per_scene: tuple[int, int] = (1, 3),
    proposals_per_gt: int = 1,
    backgrounds_per_scene: int = 8,
    jitter: float = 0.15,
    gt_size_range: tuple[float, float] = (0.15, 0.4),
    split: str = "train",
) -> Dataset:
    """Generate a dataset of scenes with labeled proposals.

    Scene i draws everything from default_rng([seed, i]), so any scene can
    be regenerated independently of the rest.  Foreground proposals are
    rejection-sampled to IoU >= 0.5 with their source object, backgrounds
    to IoU < 0.3 against every ground truth; a box that cannot satisfy its
    constraint within a bounded number of tries raises GenerationError.

    proposals_per_gt defaults to 1, modelling candidates that already went
    through duplicate removal; raise it to study the duplicate penalty
    (extra same-object detections count as false positives).
    """
    class_specs = tuple(class_specs)
    if not class_specs:
        raise InvalidParameter("need at least one class spec")
    ids = [s.class_id for s in class_specs]
    if len(set(ids)) != len(ids):
        raise InvalidParameter(f"duplicate class ids: {ids}")
    dims = {s.feature_dim for s in class_specs}
    if len(dims) != 1:
        raise InvalidParameter(f"class specs disagree on feature_dim: {sorted(dims)}")
    feature_dim = dims.pop()
    if n_scenes < 0:
        raise InvalidParameter(f"n_scenes must be >= 0, got {n_scenes}")
    lo, hi = objects_per_scene
    if not 1 <= lo <= hi:
        raise InvalidParameter(f"bad objects_per_scene range ({lo}, {hi})")
    if proposals_per_gt < 0 or backgrounds_per_scene < 0:
        raise InvalidParameter("proposal counts must be >= 0")
    if jitter < 0.0:
        raise InvalidParameter(f"jitter must be >= 0, got {jitter}")
    if not (0.0 < gt_size_range[0] <= gt_size_range[1] < 1.0):
        raise InvalidParameter(f"bad gt_size_range {gt_size_range}")
    if split not in ("train", "test"):
        raise InvalidParameter(f"split must be 'train' or 'test', got {split!r}")

    spec_by_id = {s.class_id: s for s in class_specs}
    scenes = []
    for i in range(n_scenes):
        rng = np.random.default_rng([seed, i])
        image_id = f"{split}_{i:05d}"
        n_obj = int(rng.integers(lo, hi + 1))
        gts = []
        for _ in range(n_obj):
            cid = int(ids[rng.integers(len(ids))])
            theta = canonicalize(float(rng.uniform(0.0, TWO_PI)))
            gts.append(GroundTruth(image_id, cid, _random_box(rng, gt_size_range), theta))

        proposals = []
        for j, g in enumerate(gts):
            spec = spec_by_id[g.class_id]
            for _ in range(proposals_per_gt):
                for attempt in range(_MAX_TRIES):
                    box = _jittered_box(rng, g.box, jitter)
                    ov = iou(box, g.box)
                    if ov >= 0.5:
                        break
                else:
                    raise GenerationError(
                        f"scene {i}: no jittered box reached IoU 0.5 in {_MAX_TRIES} tries"
                    )
                noise_seed = int(rng.integers(0, 2**63))
                feat = appearance(spec, g.azimuth, np.random.default_rng(noise_seed))
                proposals.append(Proposal(box, feat, j, ov, noise_seed))
        for _ in range(backgrounds_per_scene):
            for attempt in range(_MAX_TRIES):
                box = _random_box(rng, gt_size_range)
                worst = max((iou(box, g.box) for g in gts), default=0.0)
                if worst < 0.3:
                    break
            else:
                raise GenerationError(
                    f"scene {i}: no background box got IoU < 0.3 in {_MAX_TRIES} tries"
                )
            noise_seed = int(rng.integers(0, 2**63))
            feat = np.random.default_rng(noise_seed).standard_normal(feature_dim)
            proposals.append(Proposal(box, feat, -1, worst, noise_seed))
        scenes.append(Scene(image_id, tuple(gts), tuple(proposals)))
    return Dataset(tuple(scenes), class_specs, feature_dim, split, seed)


def regenerate_feature(dataset: Dataset, scene: Scene, prop: Proposal) -> np.ndarray:
    """Rebuild a proposal's feature from its recorded noise seed."""
    rng = np.random.default_rng(prop.noise_seed)
    if prop.is_background:
        return rng.standard_normal(dataset.feature_dim)
    g = scene.gts[prop.matched_gt]
    return appearance(dataset.spec_of(g.class_id), g.azimuth, rng)


def oracle_eval(dataset: Dataset, bins: Sequence[int] = (4, 8, 16, 24)) -> EvalReport:
    """Evaluate perfect detections: every ground truth echoed back with
    score 1 and its true azimuth.  All AP and AVP values must be 1."""
    gts = dataset.ground_truths()
    dets = [Detection(g.image_id, g.class_id, g.box, 1.0, g.azimuth) for g in gts]
    return evaluate(gts, dets, bins=bins)


def default_class_specs(
    seed: int = 0,
    feature_dim: int = 32,
    noise_sigma: float = 0.25,
) -> tuple[ClassSpec, ...]:
    """The standard four-class roster: two asymmetric classes, one with
    two-fold and one with four-fold symmetry."""
    orders = (1, 1, 2, 4)
    return tuple(
        ClassSpec(
            class_id=c,
            seed=seed,
            feature_dim=feature_dim,
            symmetry_order=m,
            noise_sigma=noise_sigma,
        )
        for c, m in zip((1, 2, 3, 4), orders)
    )


def default_benchmark(
    seed: int = 0,
    n_train_scenes: int = 200,
    n_test_scenes: int = 100,
    feature_dim: int = 32,
    noise_sigma: float = 0.25,
) -> tuple[Dataset, Dataset]:
    """Standard train/test pair sharing one class roster."""
    specs = default_class_specs(seed, feature_dim, noise_sigma)
    state = np.random.SeedSequence(seed).generate_state(2, np.uint64)
    train = generate(int(state[0]), n_train_scenes, specs, split="train")
    test = generate(int(state[1]), n_test_scenes, specs, split="test")
    return train, test
