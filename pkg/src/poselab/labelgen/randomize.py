"""Domain-randomized compositing of segmented foregrounds onto backgrounds.

Each output sample picks a background, a patch, an in-plane rotation, a
scale, and brightness/saturation multipliers, then pastes the transformed
patch fully inside the background. Keypoint and bounding-box labels ride
the exact same 2D similarity, which is recorded on the sample. Every sample
derives its random stream from (seed, sample index), so results are
bit-identical across reruns and across worker counts.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..errors import PatchTooLarge, ValidationError
from ..manifest import BBox, DRConfig, KeypointLabel


@dataclass
class LabeledPatch:
    """Foreground RGBA crop with labels in its own pixel coordinates."""

    rgba: np.ndarray  # (h, w, 4) uint8
    keypoints: list[KeypointLabel]
    hull: np.ndarray  # (M, 2) outline used to recompute the bounding box


@dataclass
class SimilarityParams:
    """Patch-to-composite map: p_out = matrix[:, :2] @ p + matrix[:, 2]."""

    rotation_deg: float
    scale: float
    matrix: np.ndarray  # (2, 3)

    def apply(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=float).reshape(-1, 2)
        return pts @ self.matrix[:, :2].T + self.matrix[:, 2]


@dataclass
class DRSample:
    index: int
    image: np.ndarray  # (H, W, 3) uint8
    keypoints: list[KeypointLabel]
    bbox: BBox
    similarity: SimilarityParams
    background_index: int
    patch_index: int
    brightness: float
    saturation: float


_LUMA = np.array([0.299, 0.587, 0.114])


def _color_jitter(rgb: np.ndarray, brightness: float, saturation: float) -> np.ndarray:
    gray = rgb @ _LUMA
    out = (gray[:, :, None] + saturation * (rgb - gray[:, :, None])) * brightness
    return np.clip(out, 0.0, 255.0)


def _warp_rgba(
    rgba: np.ndarray, matrix: np.ndarray, out_w: int, out_h: int, shift: np.ndarray
) -> np.ndarray:
    """Inverse-mapped bilinear warp into a local (out_h, out_w) RGBA float image.

    `matrix` maps patch coords to composite coords; `shift` is the composite
    coordinate of the local origin. Alpha is premultiplied during sampling so
    transparent texels never bleed color.
    """
    a = matrix[:, :2]
    b = matrix[:, 2] - shift  # local = A p + b
    a_inv = np.linalg.inv(a)

    gx, gy = np.meshgrid(np.arange(out_w), np.arange(out_h))
    q = np.stack([gx, gy], axis=-1).astype(float).reshape(-1, 2)
    p = (q - b) @ a_inv.T

    h, w = rgba.shape[:2]
    x = p[:, 0]
    y = p[:, 1]
    x0 = np.floor(x).astype(int)
    y0 = np.floor(y).astype(int)
    fx = x - x0
    fy = y - y0

    premul = rgba.astype(float)
    alpha = premul[:, :, 3:4] / 255.0
    premul = np.concatenate([premul[:, :, :3] * alpha, premul[:, :, 3:4]], axis=2)

    def sample(ix, iy):
        valid = (ix >= 0) & (ix < w) & (iy >= 0) & (iy < h)
        out = np.zeros((len(ix), 4))
        out[valid] = premul[iy[valid], ix[valid]]
        return out

    c00 = sample(x0, y0)
    c10 = sample(x0 + 1, y0)
    c01 = sample(x0, y0 + 1)
    c11 = sample(x0 + 1, y0 + 1)
    fx = fx[:, None]
    fy = fy[:, None]
    mixed = (
        c00 * (1 - fx) * (1 - fy)
        + c10 * fx * (1 - fy)
        + c01 * (1 - fx) * fy
        + c11 * fx * fy
    )
    return mixed.reshape(out_h, out_w, 4)


def _compose_sample(
    index: int,
    patches: Sequence[LabeledPatch],
    backgrounds: Sequence[np.ndarray],
    cfg: DRConfig,
) -> DRSample:
    rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, index)))
    background_index = int(rng.integers(len(backgrounds)))
    patch_index = int(rng.integers(len(patches)))
    rotation = float(rng.uniform(*cfg.rotation_deg))
    scale = float(rng.uniform(*cfg.scale))
    brightness = float(rng.uniform(*cfg.brightness))
    saturation = float(rng.uniform(*cfg.saturation))

    patch = patches[patch_index]
    background = backgrounds[background_index]
    bg_h, bg_w = background.shape[:2]
    h, w = patch.rgba.shape[:2]

    theta = np.radians(rotation)
    rot = np.array(
        [[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]]
    )
    a = scale * rot
    center = np.array([(w - 1) / 2.0, (h - 1) / 2.0])

    corners = np.array(
        [[-0.5, -0.5], [w - 0.5, -0.5], [w - 0.5, h - 0.5], [-0.5, h - 0.5]]
    )
    moved = (corners - center) @ a.T
    lo = moved.min(axis=0)
    hi = moved.max(axis=0)
    out_w = int(np.ceil(hi[0] - lo[0]))
    out_h = int(np.ceil(hi[1] - lo[1]))
    if out_w > bg_w or out_h > bg_h:
        raise PatchTooLarge(
            f"sample {index}: transformed patch {out_w}x{out_h} exceeds "
            f"background {bg_w}x{bg_h}"
        )
    offset = np.array(
        [
            float(rng.integers(0, bg_w - out_w + 1)),
            float(rng.integers(0, bg_h - out_h + 1)),
        ]
    )
    # p_composite = a (p - center) - lo - 0.5 + offset
    translate = -a @ center - lo - 0.5 + offset
    matrix = np.column_stack([a, translate])
    similarity = SimilarityParams(rotation, scale, matrix)

    jittered = patch.rgba.astype(float).copy()
    jittered[:, :, :3] = _color_jitter(jittered[:, :, :3], brightness, saturation)
    jittered = np.clip(np.rint(jittered), 0, 255).astype(np.uint8)

    local = _warp_rgba(jittered, matrix, out_w, out_h, offset)
    alpha = local[:, :, 3:4] / 255.0
    image = background.astype(float).copy()
    ox, oy = int(offset[0]), int(offset[1])
    region = image[oy : oy + out_h, ox : ox + out_w]
    region *= 1.0 - alpha
    region += local[:, :, :3]
    out_image = np.clip(np.rint(image), 0, 255).astype(np.uint8)

    kp_in = np.array([[k.u, k.v] for k in patch.keypoints]) if patch.keypoints else np.zeros((0, 2))
    kp_out = similarity.apply(kp_in)
    keypoints = [
        KeypointLabel(k.keypoint_id, float(uv[0]), float(uv[1]), k.visible)
        for k, uv in zip(patch.keypoints, kp_out)
    ]
    hull_out = similarity.apply(patch.hull)
    bbox = BBox(
        float(hull_out[:, 0].min()),
        float(hull_out[:, 1].min()),
        float(hull_out[:, 0].max()),
        float(hull_out[:, 1].max()),
    )
    return DRSample(
        index=index,
        image=out_image,
        keypoints=keypoints,
        bbox=bbox,
        similarity=similarity,
        background_index=background_index,
        patch_index=patch_index,
        brightness=brightness,
        saturation=saturation,
    )


def domain_randomize(
    patches: Sequence[LabeledPatch],
    backgrounds: Sequence[np.ndarray],
    cfg: DRConfig,
    workers: int = 1,
) -> list[DRSample]:
    """Produce cfg.n_samples composites; bit-identical for a fixed seed.

    Each sample's stream depends only on (seed, index), so any worker count
    yields the same bytes.
    """
    if not patches:
        raise ValidationError("no foreground patches to composite")
    if not backgrounds:
        raise ValidationError("no background images available")
    indices = range(cfg.n_samples)
    if workers <= 1:
        return [_compose_sample(i, patches, backgrounds, cfg) for i in indices]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(
            pool.map(lambda i: _compose_sample(i, patches, backgrounds, cfg), indices)
        )
