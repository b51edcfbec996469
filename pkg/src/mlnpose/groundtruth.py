"""Ground-truth rendering and losses.

Joint confidence maps are Gaussian bumps exp(-||p - p*||^2 / sigma^2)
taken as a max over annotated visible joints; limb maps hold the unit
vector along each limb at cells within limb_half_width of the segment,
averaged where several people's limbs overlap. Map cells sample input
coordinates at ((c + 0.5) * stride, (r + 0.5) * stride).
"""

from dataclasses import dataclass

import numpy as np

from .skeleton import Visibility
from .tensor_ops import ShapeError


@dataclass(frozen=True)
class GtConfig:
    sigma: float = 7.0            # Gaussian spread, input px
    limb_half_width: float = 8.0  # perpendicular on-limb threshold, input px
    output_stride: int = 8        # input px per map cell

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be > 0")
        if self.limb_half_width <= 0:
            raise ValueError("limb_half_width must be > 0")
        if self.output_stride < 1:
            raise ValueError("output_stride must be >= 1")

    def to_config(self):
        return {"sigma": self.sigma, "limb_half_width": self.limb_half_width,
                "output_stride": self.output_stride}

    @classmethod
    def from_config(cls, cfg):
        return cls(sigma=float(cfg.get("sigma", 7.0)),
                   limb_half_width=float(cfg.get("limb_half_width", 8.0)),
                   output_stride=int(cfg.get("output_stride", 8)))


def cell_centers(map_dims, stride):
    """Input-px coordinates of cell centers; returns (xs[W], ys[H])."""
    h, w = map_dims
    xs = (np.arange(w, dtype=np.float64) + 0.5) * stride
    ys = (np.arange(h, dtype=np.float64) + 0.5) * stride
    return xs, ys


def render_joint_map(people, joint_type, cfg, map_dims):
    """Confidence map for one joint type: max-over-people Gaussian bumps."""
    xs, ys = cell_centers(map_dims, cfg.output_stride)
    out = np.zeros(map_dims, dtype=np.float64)
    inv = 1.0 / (cfg.sigma * cfg.sigma)
    for person in people:
        kp = person.keypoints[joint_type]
        if kp is None or kp.visibility != Visibility.VISIBLE:
            continue
        d2 = (ys[:, None] - kp.y) ** 2 + (xs[None, :] - kp.x) ** 2
        np.maximum(out, np.exp(-d2 * inv), out=out)
    return out.astype(np.float32)


def render_background_map(joint_maps):
    """1 - channelwise max; completes the joint-map stack."""
    joint_maps = np.asarray(joint_maps)
    return (1.0 - joint_maps.max(axis=0)).astype(np.float32)


def render_joint_maps(people, skeleton, cfg, map_dims):
    """(m [+1], H, W) stack of joint maps, background last when enabled."""
    maps = np.stack([render_joint_map(people, i, cfg, map_dims)
                     for i in range(skeleton.num_joints)])
    if skeleton.background_channel:
        maps = np.concatenate([maps, render_background_map(maps)[None]])
    return maps


def render_paf(people, limb_type, skeleton, cfg, map_dims):
    """(2, H, W) limb vector field for one limb type.

    Cells on several people's limbs hold the average of the contributing
    unit vectors; degenerate (zero-length) limbs contribute nothing.
    """
    a_idx, b_idx = skeleton.limbs[limb_type]
    xs, ys = cell_centers(map_dims, cfg.output_stride)
    px = np.broadcast_to(xs[None, :], map_dims)
    py = np.broadcast_to(ys[:, None], map_dims)
    acc = np.zeros((2,) + tuple(map_dims), dtype=np.float64)
    count = np.zeros(map_dims, dtype=np.int64)
    for person in people:
        ka = person.keypoints[a_idx]
        kb = person.keypoints[b_idx]
        if ka is None or kb is None:
            continue
        if ka.visibility != Visibility.VISIBLE or kb.visibility != Visibility.VISIBLE:
            continue
        dx, dy = kb.x - ka.x, kb.y - ka.y
        length = np.hypot(dx, dy)
        if length == 0.0:
            continue
        ux, uy = dx / length, dy / length
        along = (px - ka.x) * ux + (py - ka.y) * uy
        perp = (px - ka.x) * uy - (py - ka.y) * ux
        on_limb = (along >= 0.0) & (along <= length) & (np.abs(perp) <= cfg.limb_half_width)
        acc[0][on_limb] += ux
        acc[1][on_limb] += uy
        count[on_limb] += 1
    nonzero = count > 0
    acc[0][nonzero] /= count[nonzero]
    acc[1][nonzero] /= count[nonzero]
    return acc.astype(np.float32)


def render_pafs(people, skeleton, cfg, map_dims):
    """(2n, H, W) stack of limb fields in limb order."""
    return np.concatenate([render_paf(people, j, skeleton, cfg, map_dims)
                           for j in range(skeleton.num_limbs)])


def _masked_sq_residual(pred, gt, mask):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ShapeError(f"pred shape {pred.shape} != gt shape {gt.shape}")
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != pred.shape[-2:]:
        raise ShapeError(f"mask shape {mask.shape} does not match map dims {pred.shape[-2:]}")
    return (pred - gt) ** 2 * mask


def joint_loss(pred, gt, mask):
    """Masked sum of squared residuals over all joint channels and cells."""
    return float(_masked_sq_residual(pred, gt, mask).sum())


def limb_loss(pred, gt, mask):
    """Masked sum of squared residuals over all limb-field channels."""
    return float(_masked_sq_residual(pred, gt, mask).sum())


def loss_gradient(pred, gt, mask):
    """Analytic gradient of the masked L2 loss: 2 * W * (pred - gt)."""
    pred64 = np.asarray(pred, dtype=np.float64)
    gt64 = np.asarray(gt, dtype=np.float64)
    if pred64.shape != gt64.shape:
        raise ShapeError(f"pred shape {pred64.shape} != gt shape {gt64.shape}")
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != pred64.shape[-2:]:
        raise ShapeError(f"mask shape {mask.shape} does not match map dims {pred64.shape[-2:]}")
    grad = 2.0 * (pred64 - gt64) * mask
    return grad.astype(np.asarray(pred).dtype)


def full_mask(map_dims):
    """Default mask: include every cell."""
    return np.ones(map_dims, dtype=np.float32)


def crowd_mask(map_dims, stride, crowd_boxes):
    """Mask that zeroes map cells whose centers fall in crowd bboxes.

    crowd_boxes: iterable of (x, y, w, h) in input px.
    """
    mask = np.ones(map_dims, dtype=np.float32)
    xs, ys = cell_centers(map_dims, stride)
    for x, y, w, h in crowd_boxes:
        cols = (xs >= x) & (xs <= x + w)
        rows = (ys >= y) & (ys <= y + h)
        mask[np.ix_(rows, cols)] = 0.0
    return mask
