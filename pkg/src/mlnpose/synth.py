"""Synthetic scene generation and desk-scale verification oracles.

Scenes are articulated stick figures placed on a jittered grid, so the
pairwise spacing guarantee holds by construction. The assignment oracle
is an exhaustive permutation search: small, but unarguably optimal.
"""

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .skeleton import Keypoint, Person, Visibility


def splitmix64(x):
    """One splitmix64 step; used to derive independent per-scene seeds."""
    x = (x + 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    return z ^ (z >> 31)


def derive_seed(master_seed, index):
    return splitmix64((master_seed & 0xFFFFFFFFFFFFFFFF) + index)


@dataclass(frozen=True)
class SceneConfig:
    image_dims: tuple = (800, 1200)       # (height, width) px
    person_count: tuple = (1, 10)         # inclusive range
    limb_length_range: tuple = (12.0, 26.0)
    min_spacing: float = 170.0            # pairwise person-center spacing, px
    seed: int = 0

    def __post_init__(self):
        h, w = self.image_dims
        if h <= 0 or w <= 0:
            raise ValueError("image dims must be positive")
        if self.min_spacing < 0:
            raise ValueError("min_spacing must be >= 0")
        lo, hi = self.limb_length_range
        if not (0 < lo <= hi):
            raise ValueError("limb_length_range must satisfy 0 < lo <= hi")


@dataclass(frozen=True)
class NoiseSpec:
    map_sigma: float = 0.0        # additive Gaussian noise on map values
    false_peak_count: int = 0
    false_peak_amplitude: float = 0.5

    def __post_init__(self):
        if self.map_sigma < 0:
            raise ValueError("map_sigma must be >= 0")


class InfeasibleSceneError(RuntimeError):
    """Requested person count cannot satisfy the spacing constraint."""


# Placement tree for the default 18-joint skeleton: (parent, child,
# nominal angle deg; x right, y down; figure faces the viewer so its
# right side sits at negative x).
_PLACEMENT_TREE = (
    (1, 0, -90.0),    # neck -> nose
    (0, 14, -135.0), (14, 16, 180.0),   # right eye, ear
    (0, 15, -45.0), (15, 17, 0.0),      # left eye, ear
    (1, 2, 180.0), (2, 3, 120.0), (3, 4, 100.0),   # right arm
    (1, 5, 0.0), (5, 6, 60.0), (6, 7, 80.0),       # left arm
    (1, 8, 100.0), (8, 9, 90.0), (9, 10, 90.0),    # right leg
    (1, 11, 80.0), (11, 12, 90.0), (12, 13, 90.0), # left leg
)

_ANGLE_JITTER_DEG = 18.0
_NUM_JOINTS = 18


def _place_person(rng, center, cfg):
    lo, hi = cfg.limb_length_range
    pos = {1: np.array(center, dtype=np.float64)}
    for parent, child, angle in _PLACEMENT_TREE:
        theta = math.radians(angle + rng.uniform(-_ANGLE_JITTER_DEG, _ANGLE_JITTER_DEG))
        length = rng.uniform(lo, hi)
        pos[child] = pos[parent] + length * np.array([math.cos(theta), math.sin(theta)])
    return pos


def sample_scene(cfg):
    """Deterministic multi-person scene; returns a list of Persons.

    Person centers go on a jittered grid whose pitch exceeds
    min_spacing plus twice the jitter, so the spacing invariant holds
    for every pair. Raises InfeasibleSceneError when the image cannot
    host the requested count at the requested spacing.
    """
    rng = np.random.default_rng(cfg.seed)
    h, w = cfg.image_dims
    count = int(rng.integers(cfg.person_count[0], cfg.person_count[1] + 1))
    jitter = 0.1 * cfg.min_spacing
    pitch = cfg.min_spacing + 2.0 * jitter + 1.0
    margin = 3.5 * cfg.limb_length_range[1] + jitter
    cols = int((w - 2 * margin) // pitch) + 1 if w - 2 * margin >= 0 else 0
    rows = int((h - 2 * margin) // pitch) + 1 if h - 2 * margin >= 0 else 0
    slots = [(margin + r * pitch, margin + c * pitch)
             for r in range(rows) for c in range(cols)]
    if count > len(slots):
        raise InfeasibleSceneError(
            f"cannot place {count} people with spacing {cfg.min_spacing} "
            f"in a {w}x{h} image ({len(slots)} slots)")
    chosen = rng.permutation(len(slots))[:count]
    people = []
    for slot in chosen:
        sy, sx = slots[slot]
        for _ in range(100):
            cx = sx + rng.uniform(-jitter, jitter)
            cy = sy + rng.uniform(-jitter, jitter)
            pos = _place_person(rng, (cx, cy), cfg)
            if all(0.0 <= p[0] <= w and 0.0 <= p[1] <= h for p in pos.values()):
                break
        else:
            raise InfeasibleSceneError("could not keep a person inside image bounds")
        keypoints = [None] * _NUM_JOINTS
        for j, p in pos.items():
            keypoints[j] = Keypoint(float(p[0]), float(p[1]), Visibility.VISIBLE, 1.0)
        people.append(Person(keypoints))
    return people


def corrupt_maps(maps, spec, seed, clamp=(0.0, 1.0)):
    """Seeded corruption: additive Gaussian noise plus localized false
    bumps; clamp (default [0,1], for joint maps) applies last. Pass
    clamp=None for vector fields."""
    maps = np.asarray(maps, dtype=np.float32)
    out = maps.copy()
    rng = np.random.default_rng(seed)
    if spec.map_sigma > 0:
        out = out + rng.normal(0.0, spec.map_sigma, size=out.shape).astype(np.float32)
    if spec.false_peak_count > 0:
        c, h, w = out.shape[-3:]
        ys, xs = np.mgrid[0:h, 0:w]
        for _ in range(spec.false_peak_count):
            ch = int(rng.integers(c))
            py, px = rng.uniform(0, h), rng.uniform(0, w)
            bump = spec.false_peak_amplitude * np.exp(
                -((ys - py) ** 2 + (xs - px) ** 2) / 4.0)
            out[..., ch, :, :] += bump.astype(np.float32)
    if clamp is not None:
        out = np.clip(out, clamp[0], clamp[1])
    return out.astype(np.float32)


MAX_ORACLE_SIZE = 8


def optimal_assignment(score_matrix):
    """Maximum-total-score one-to-one assignment by exhaustive search.

    Returns (pairs, total) where pairs is a list of (row, col). Limited
    to 8x8; this oracle exists to check greedy matching, not to scale.
    """
    s = np.asarray(score_matrix, dtype=np.float64)
    if s.ndim != 2:
        raise ValueError("score matrix must be 2-D")
    if not np.all(np.isfinite(s)):
        raise ValueError("score matrix must be finite")
    n, m = s.shape
    if n > MAX_ORACLE_SIZE or m > MAX_ORACLE_SIZE:
        raise ValueError(f"matrix {n}x{m} exceeds the {MAX_ORACLE_SIZE}x"
                         f"{MAX_ORACLE_SIZE} oracle limit")
    if n == 0 or m == 0:
        return [], 0.0
    transposed = n > m
    if transposed:
        s = s.T
        n, m = m, n
    best_total = -np.inf
    best_perm = None
    for perm in itertools.permutations(range(m), n):
        total = sum(s[i, perm[i]] for i in range(n))
        if total > best_total:
            best_total = total
            best_perm = perm
    pairs = [(i, best_perm[i]) for i in range(n)]
    if transposed:
        pairs = [(c, r) for r, c in pairs]
    return pairs, float(best_total)
