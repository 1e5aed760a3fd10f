"""Differentiable volume rendering: rays, emission-absorption compositing,
expected depth, masked-point classification and depth reprojection.

A "field" is any callable mapping a Tensor of points (N, 3) to a pair
(colors (N, 3) in [0,1], densities (N,) >= 0) of Tensors.  Rendering a field
built from trainable parameters stays differentiable end to end; rendering a
constant field records nothing and runs at plain numpy speed.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


# ---------------------------------------------------------------------------
# Camera
# ---------------------------------------------------------------------------

@dataclass
class CameraPose:
    """Orbit camera: position on a sphere around `look_at`, pinhole model."""

    yaw: float = 0.0
    pitch: float = 0.0
    radius: float = 2.5
    look_at: tuple = (0.0, 0.0, 0.0)
    fov: float = 0.4          # vertical field of view, radians

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("camera radius must be positive")

    def basis(self):
        """Returns (origin, right, up, forward) as float64 arrays."""
        cy, sy = np.cos(self.yaw), np.sin(self.yaw)
        cp, sp = np.cos(self.pitch), np.sin(self.pitch)
        look = np.asarray(self.look_at, dtype=np.float64)
        pos = look + self.radius * np.array([cp * sy, sp, cp * cy])
        forward = look - pos
        forward = forward / np.linalg.norm(forward)
        world_up = np.array([0.0, 1.0, 0.0])
        right = np.cross(forward, world_up)
        right = right / np.linalg.norm(right)
        up = np.cross(right, forward)
        return pos, right, up, forward


def _res_hw(resolution):
    if isinstance(resolution, (tuple, list)):
        h, w = resolution
    else:
        h = w = int(resolution)
    if h < 2 or w < 2:
        raise ValueError("resolution must be at least 2x2")
    return h, w


def gen_rays(pose: CameraPose, resolution):
    """Pinhole rays through pixel centers, row-major.

    Returns (origins (H*W, 3), directions (H*W, 3)); directions unit-norm.
    """
    h, w = _res_hw(resolution)
    pos, right, up, forward = pose.basis()
    tan_half = np.tan(pose.fov / 2.0)
    i = np.arange(w) + 0.5 - w / 2.0
    j = np.arange(h) + 0.5 - h / 2.0
    ii, jj = np.meshgrid(i, j)                     # (H, W)
    scale = tan_half / (h / 2.0)
    dirs = (ii[..., None] * scale * right
            - jj[..., None] * scale * up
            + forward)
    dirs = dirs / np.linalg.norm(dirs, axis=-1, keepdims=True)
    origins = np.broadcast_to(pos, dirs.shape)
    return origins.reshape(-1, 3).copy(), dirs.reshape(-1, 3)


# ---------------------------------------------------------------------------
# Data types
# ---------------------------------------------------------------------------

@dataclass
class RenderedImage:
    """rgb (H,W,3) in [0,1], expected depth (H,W), alpha (H,W) in [0,1].

    Fields are Tensors; call `.numpy()` views for metric/IO work.
    """

    rgb: Tensor
    depth: Tensor
    alpha: Tensor

    def rgb_np(self):
        return self.rgb.numpy()

    def depth_np(self):
        return self.depth.numpy()

    def alpha_np(self):
        return self.alpha.numpy()

    def foreground_mask(self, threshold=0.5):
        return self.alpha.numpy() > threshold


@dataclass
class AttributedPointCloud:
    """One 3-D point per foreground pixel with attached field attributes."""

    points: Tensor        # (N, 3)
    densities: Tensor     # (N,)
    colors: Tensor        # (N, 3)
    pixel_index: np.ndarray = dc_field(default_factory=lambda: np.zeros(0, int))

    def __len__(self):
        return self.points.shape[0]


@dataclass
class MaskedRegion:
    """Input-view mask used for foreground/background point classification."""

    pose: CameraPose
    mask: np.ndarray      # (H, W) bool, True = foreground


@dataclass
class RenderOptions:
    samples_per_ray: int = 64
    near: float | None = None        # default: pose.radius - 1
    far: float | None = None         # default: pose.radius + 1
    jitter_seed: int | None = None   # None -> bin midpoints (deterministic)
    masked: MaskedRegion | None = None

    def bounds(self, pose: CameraPose):
        near = self.near if self.near is not None else pose.radius - 1.0
        far = self.far if self.far is not None else pose.radius + 1.0
        if not near < far:
            raise ValueError(f"invalid near/far: {near} >= {far}")
        return near, far


# ---------------------------------------------------------------------------
# Compositing (emission-absorption)
# ---------------------------------------------------------------------------

def composite(colors, sigmas, deltas, t_mid, far):
    """Alpha-composite ordered near-to-far samples along each ray.

    colors (R,S,3), sigmas (R,S) Tensors; deltas (R,S) and t_mid (R,S) are
    constant sample spacings / positions.  With tau_i = sigma_i * delta_i:

        T_i   = exp(-sum_{j<i} tau_j)
        w_i   = T_i * (1 - exp(-tau_i))
        rgb   = sum_i w_i c_i            (black background)
        alpha = sum_i w_i
        depth = sum_i w_i t_i + T_end * far

    The residual transmittance T_end carries the background at `far`, so an
    empty ray reports depth = far and weights plus T_end total exactly 1.
    """
    deltas = np.asarray(deltas)
    if np.any(deltas <= 0):
        raise ValueError("segment lengths must be positive")
    sigmas = ad.as_tensor(sigmas)
    colors = ad.as_tensor(colors)
    tau = sigmas * Tensor(deltas)
    cs = ad.cumsum(tau, axis=1)
    trans = ad.exp(tau - cs)                    # T_i, via exclusive cumsum
    absorb = 1.0 - ad.exp(-tau)
    weights = trans * absorb                    # (R, S)
    rgb = (weights.reshape(weights.shape[0], weights.shape[1], 1) * colors).sum(axis=1)
    alpha = weights.sum(axis=1)
    t_end = ad.exp(-tau.sum(axis=1))
    depth = (weights * Tensor(np.asarray(t_mid))).sum(axis=1) + t_end * far
    return rgb, depth, alpha


def sample_depths(n_rays, options: RenderOptions, near, far):
    """Stratified sample positions (R,S) plus the uniform bin width."""
    s = options.samples_per_ray
    delta = (far - near) / s
    bins = near + delta * np.arange(s)
    if options.jitter_seed is None:
        offsets = np.full((n_rays, s), 0.5)
    else:
        rng = np.random.default_rng(options.jitter_seed)
        offsets = rng.random((n_rays, s))
    return bins + offsets * delta, delta


def render(field, pose: CameraPose, resolution, options: RenderOptions | None = None):
    """Volume-render `field` from `pose`; returns a RenderedImage.

    With `options.masked` set, sample points classified as background in the
    given input view contribute zero density (rays stay rectangular), so
    only foreground-classified points shape the output.
    """
    options = options or RenderOptions()
    h, w = _res_hw(resolution)
    near, far = options.bounds(pose)
    origins, dirs = gen_rays(pose, (h, w))
    n_rays = h * w
    t, delta = sample_depths(n_rays, options, near, far)
    pts = origins[:, None, :] + t[..., None] * dirs[:, None, :]
    pts_flat = pts.reshape(-1, 3)

    colors, sigmas = field(Tensor(pts_flat))
    s = options.samples_per_ray
    colors = colors.reshape(n_rays, s, 3)
    sigmas = sigmas.reshape(n_rays, s)

    if options.masked is not None:
        codes = classify_point(pts_flat, options.masked.pose, options.masked.mask)
        keep = (codes != BACKGROUND).astype(pts_flat.dtype).reshape(n_rays, s)
        sigmas = sigmas * Tensor(keep)

    deltas = np.full((n_rays, s), delta)
    rgb, depth, alpha = composite(colors, sigmas, deltas, t, far)
    return RenderedImage(
        rgb=rgb.reshape(h, w, 3),
        depth=depth.reshape(h, w),
        alpha=alpha.reshape(h, w),
    )


# ---------------------------------------------------------------------------
# Masked-point classification and depth reprojection
# ---------------------------------------------------------------------------

FOREGROUND, BACKGROUND, UNKNOWN = 1, 0, 2


def classify_point(points, input_pose: CameraPose, input_mask):
    """Classify 3-D points against an input view's foreground mask.

    Projects each point into the input camera: inside the frustum it takes
    the mask value of the pixel it lands on (FOREGROUND/BACKGROUND); points
    behind the camera or projecting off-image are UNKNOWN.  Masked
    operations treat UNKNOWN as foreground to preserve content that the
    input view cannot vouch for either way.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    mask = np.asarray(input_mask)
    h, w = mask.shape
    pos, right, up, forward = input_pose.basis()
    tan_half = np.tan(input_pose.fov / 2.0)
    v = pts - pos
    zf = v @ forward
    codes = np.full(pts.shape[0], UNKNOWN, dtype=np.int8)
    front = zf > 1e-9
    scale = (h / 2.0) / tan_half
    with np.errstate(divide="ignore", invalid="ignore"):
        px = (v @ right) / zf * scale + w / 2.0 - 0.5
        py = -(v @ up) / zf * scale + h / 2.0 - 0.5
    ix = np.round(px).astype(np.int64)
    iy = np.round(py).astype(np.int64)
    inside = front & (ix >= 0) & (ix < w) & (iy >= 0) & (iy < h)
    fg = np.zeros(pts.shape[0], dtype=bool)
    fg[inside] = mask[iy[inside], ix[inside]]
    codes[inside & fg] = FOREGROUND
    codes[inside & ~fg] = BACKGROUND
    return codes


def reproject(field, img: RenderedImage, pose: CameraPose, mask):
    """Lift masked pixels to 3-D points at their expected depth.

    Each True pixel of `mask` becomes origin + depth * direction, carrying
    the field's density and color evaluated at that point.  Differentiable
    through both the depth map and the attribute evaluation.
    """
    mask = np.asarray(mask)
    h, w = mask.shape
    origins, dirs = gen_rays(pose, (h, w))
    flat_idx = np.flatnonzero(mask.reshape(-1))
    if flat_idx.size == 0:
        z = Tensor(np.zeros((0,)))
        return AttributedPointCloud(Tensor(np.zeros((0, 3))), z,
                                    Tensor(np.zeros((0, 3))), flat_idx)
    depth_flat = img.depth.reshape(-1)
    d_sel = ad.take(depth_flat, flat_idx)                     # (M,)
    o_sel = Tensor(origins[flat_idx])
    dir_sel = Tensor(dirs[flat_idx])
    points = o_sel + d_sel.reshape(-1, 1) * dir_sel           # (M, 3)
    colors, densities = field(points)
    return AttributedPointCloud(points, densities, colors, flat_idx)
