"""Azimuth arithmetic, viewpoint binning, and trigonometric pose codecs.

Angles are radians in [0, 2*pi) everywhere inside the library; degrees only
appear at file/CLI boundaries.  Viewpoint bins are 1-based: bin ``v`` of
``n_bins`` is centered at ``2*pi*(v-1)/n_bins`` with half-width
``pi/n_bins``, so bin 1 is symmetric about the canonical front view.

Two regression codecs are provided:

* 2-d: ``[cos t, sin t]`` -- the unit circle.
* 3-d: ``[cos(t - pi/3), cos t, cos(t + pi/3)]`` -- a planar circle of
  radius sqrt(3/2) embedded in R^3, which gives the estimator one redundant
  dimension.

Decoding returns the angle of the closest point on the codec curve.  For
the 3-d codec this is exact: the curve is ``cos(t)*u + sin(t)*v`` with
``u = (1/2, 1, 1/2)`` and ``v = (sqrt(3)/2, 0, -sqrt(3)/2)``, which are
orthogonal and of equal norm sqrt(3/2), so the image is a circle and the
nearest point is the atan2 of the two projection coordinates.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import (
    AmbiguousDecode,
    BinningMismatch,
    InvalidAngle,
    InvalidBinning,
    InvalidParameter,
)

TWO_PI = 2.0 * math.pi

# Orthogonal in-plane basis of the 3-d codec circle, |u| = |v| = sqrt(3/2).
_U3 = np.array([0.5, 1.0, 0.5])
_V3 = np.array([math.sqrt(3.0) / 2.0, 0.0, -math.sqrt(3.0) / 2.0])

# Below this projected norm no direction is meaningful.
DEGENERATE_NORM = 1e-12


def canonicalize(raw: float) -> float:
    """Reduce a finite angle in radians into [0, 2*pi)."""
    if not math.isfinite(raw):
        raise InvalidAngle(f"angle must be finite, got {raw!r}")
    value = math.fmod(raw, TWO_PI)
    if value < 0.0:
        value += TWO_PI
    # fmod of a tiny negative can round up to exactly 2*pi
    if value >= TWO_PI:
        value = 0.0
    return value


def azimuth_to_bin(theta: float, n_bins: int) -> int:
    """Index (1-based) of the centered viewpoint bin containing ``theta``.

    Bin ``v`` is centered at ``2*pi*(v-1)/n_bins``; edges fall on odd
    multiples of ``pi/n_bins``.  An angle exactly on an edge belongs to the
    bin above it.
    """
    if n_bins < 2:
        raise InvalidBinning(f"need at least 2 bins, got {n_bins}")
    width = TWO_PI / n_bins
    v = int(math.floor((canonicalize(theta) + 0.5 * width) / width)) % n_bins
    return v + 1


def bin_center(index: int, n_bins: int) -> float:
    """Azimuth at the center of bin ``index``."""
    if n_bins < 2:
        raise InvalidBinning(f"need at least 2 bins, got {n_bins}")
    if not 1 <= index <= n_bins:
        raise InvalidBinning(f"bin index {index} outside 1..{n_bins}")
    return canonicalize(TWO_PI * (index - 1) / n_bins)


def bin_distance(a: int, b: int, n_bins: int, n_bins_b: int | None = None) -> int:
    """Circular step distance between two bin indices of the same binning.

    Returns an integer in [0, n_bins // 2].
    """
    if n_bins_b is not None and n_bins_b != n_bins:
        raise BinningMismatch(f"cannot compare {n_bins}-bin and {n_bins_b}-bin indices")
    if n_bins < 2:
        raise InvalidBinning(f"need at least 2 bins, got {n_bins}")
    for idx in (a, b):
        if not 1 <= idx <= n_bins:
            raise InvalidBinning(f"bin index {idx} outside 1..{n_bins}")
    d = abs(a - b)
    return min(d, n_bins - d)


def flip_azimuth(theta: float) -> float:
    """Azimuth of the horizontally mirrored object: 2*pi - theta, canonical."""
    return canonicalize(-canonicalize(theta))


def mirror_bin(index: int, n_bins: int) -> int:
    """Bin index that ``flip_azimuth`` maps bin ``index`` onto (edges aside)."""
    if not 1 <= index <= n_bins:
        raise InvalidBinning(f"bin index {index} outside 1..{n_bins}")
    return 1 if index == 1 else n_bins - index + 2


def encode(theta: float, dim: int) -> np.ndarray:
    """Trigonometric pose embedding of an azimuth.

    ``dim=2`` gives ``[cos t, sin t]``; ``dim=3`` gives
    ``[cos(t - pi/3), cos t, cos(t + pi/3)]``.
    """
    if dim == 2:
        return np.array([math.cos(theta), math.sin(theta)])
    if dim == 3:
        return np.array(
            [
                math.cos(theta - math.pi / 3.0),
                math.cos(theta),
                math.cos(theta + math.pi / 3.0),
            ]
        )
    raise InvalidParameter(f"embedding dim must be 2 or 3, got {dim}")


def decode(emb: np.ndarray) -> float:
    """Azimuth of the closest point on the codec curve to ``emb``.

    Exact for both codecs: the 2-d curve is the unit circle, and the 3-d
    curve is a circle in the plane spanned by the orthogonal equal-norm
    vectors ``u`` and ``v`` above, so minimizing the Euclidean distance to
    ``cos(t)*u + sin(t)*v`` reduces to ``atan2(<emb, v>, <emb, u>)``.
    Components of ``emb`` orthogonal to the plane do not move the minimum.
    """
    emb = np.asarray(emb, dtype=float)
    if emb.shape == (2,):
        c, s = float(emb[0]), float(emb[1])
        if math.hypot(c, s) < DEGENERATE_NORM:
            raise AmbiguousDecode("2-d embedding norm below 1e-12")
        return canonicalize(math.atan2(s, c))
    if emb.shape == (3,):
        # Projection coordinates in the orthonormal in-plane basis.
        pu = float(emb @ _U3) / math.sqrt(1.5)
        pv = float(emb @ _V3) / math.sqrt(1.5)
        if math.hypot(pu, pv) < DEGENERATE_NORM:
            raise AmbiguousDecode("3-d embedding projects to ~zero in the codec plane")
        return canonicalize(math.atan2(pv, pu))
    raise InvalidParameter(f"embedding must have shape (2,) or (3,), got {emb.shape}")


def circular_difference(a: float, b: float) -> float:
    """Absolute angular difference on the circle, in [0, pi]."""
    d = math.fmod(abs(canonicalize(a) - canonicalize(b)), TWO_PI)
    return min(d, TWO_PI - d)
