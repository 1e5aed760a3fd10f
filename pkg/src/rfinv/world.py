"""Procedural ground-truth world: identity-parameterized soft-ellipsoid
heads with angular texture, eye-like blobs, and a smooth expression warp.

Density has a closed form, so geometry metrics downstream can compare a
trained field against exact ground truth.  Background is pure black (zero
radiance); foreground masks fall out of the composited alpha.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from .autodiff import Tensor
from .render import CameraPose, RenderOptions, render

SIGMA_MAX = 50.0          # peak density, inverse world units
K_SHARP = 20.0            # shell sharpness of the sigmoid falloff
WARP_BLEND = 8.0          # lower-half blend steepness of the expression warp
WARP_GAIN = 0.3           # expression warp amplitude per unit |e|

# Seed-namespace tags so train/held-out/pose/render streams never collide.
_DOM_TRAIN, _DOM_HELDOUT, _DOM_POSE, _DOM_RENDER = 1, 2, 3, 4


@dataclass
class IdentityParams:
    axes: np.ndarray          # ellipsoid semi-axes, each in [0.15, 0.35]
    center: np.ndarray        # ||center|| <= 0.05
    texture: np.ndarray       # 8 angular-basis color coefficients
    eye_dirs: np.ndarray      # (2, 3) unit directions on the front hemisphere
    eye_radii: np.ndarray     # (2,) angular radii (chord units)
    eye_color: np.ndarray     # (3,)
    expr_gain: float          # expression sensitivity in [0.5, 1.5]

    @classmethod
    def sample(cls, seed) -> "IdentityParams":
        rng = np.random.default_rng(seed)
        axes = rng.uniform(0.15, 0.35, size=3)
        mu_dir = rng.normal(size=3)
        mu_dir /= np.linalg.norm(mu_dir)
        center = mu_dir * 0.05 * rng.random() ** (1 / 3)
        texture = rng.uniform(-1.0, 1.0, size=8)
        az = rng.uniform(0.25, 0.55, size=2) * np.array([-1.0, 1.0])
        el = rng.uniform(0.10, 0.35, size=2)
        eye_dirs = np.stack([
            np.sin(az) * np.cos(el), np.sin(el), np.cos(az) * np.cos(el)
        ], axis=1)
        eye_radii = rng.uniform(0.15, 0.30, size=2)
        eye_color = np.array([0.06, 0.05, 0.08]) + rng.uniform(0, 0.05, size=3)
        expr_gain = rng.uniform(0.5, 1.5)
        return cls(axes, center, texture, eye_dirs, eye_radii, eye_color,
                   float(expr_gain))


@dataclass
class ExpressionParams:
    """e in [-1,1]^2: e1 stretches the lower half, e2 shears it sideways."""

    e: np.ndarray = dc_field(default_factory=lambda: np.zeros(2))

    def __post_init__(self):
        self.e = np.asarray(self.e, dtype=np.float64).reshape(2)

    @classmethod
    def neutral(cls):
        return cls(np.zeros(2))


def expression_warp(identity: IdentityParams, expr: ExpressionParams, x):
    """Smooth warp into the neutral frame; exact identity at e = 0.

    g(y) = sigmoid(-WARP_BLEND * y) selects the lower half smoothly:
        y' = y / (1 + WARP_GAIN * s * e1 * g)    (jaw stretch)
        x' = x + WARP_GAIN * s * e2 * y * g      (smile shear)
    """
    e1, e2 = expr.e
    if e1 == 0.0 and e2 == 0.0:
        return x
    s = identity.expr_gain
    y = x[:, 1]
    g = 1.0 / (1.0 + np.exp(WARP_BLEND * y))
    out = x.copy()
    out[:, 1] = y / (1.0 + WARP_GAIN * s * e1 * g)
    out[:, 0] = x[:, 0] + WARP_GAIN * s * e2 * y * g
    return out


def _angular_basis(u):
    """Low-order direction basis, (N, 8)."""
    ux, uy, uz = u[:, 0], u[:, 1], u[:, 2]
    return np.stack([
        np.ones_like(ux), ux, uy, uz,
        ux * uy, uy * uz, uz * ux, ux * ux - uy * uy,
    ], axis=1)


def gt_field(identity: IdentityParams, expr: ExpressionParams, x):
    """Analytic radiance at points x (N, 3): returns (rgb (N,3), sigma (N,)).

    sigma = SIGMA_MAX * sigmoid(K_SHARP * (1 - ||(W_e(x) - mu) / a||)); color
    comes from the angular texture basis at the shell direction, with the
    two eye blobs blended in locally.
    """
    x = np.asarray(x, dtype=np.float64).reshape(-1, 3)
    xc = expression_warp(identity, expr, x) - identity.center
    r = np.linalg.norm(xc / identity.axes, axis=1)
    arg = K_SHARP * (1.0 - r)
    sigma = SIGMA_MAX / (1.0 + np.exp(-arg))

    u = xc / (np.linalg.norm(xc, axis=1, keepdims=True) + 1e-12)
    basis = _angular_basis(u)
    rgb = np.empty((x.shape[0], 3))
    for ch in range(3):
        coeff = np.roll(identity.texture, 3 * ch)
        rgb[:, ch] = 1.0 / (1.0 + np.exp(-(0.5 + 1.5 * basis @ coeff)))
    for k in range(2):
        d2 = np.sum((u - identity.eye_dirs[k]) ** 2, axis=1)
        wgt = np.exp(-2.0 * d2 / identity.eye_radii[k] ** 2)[:, None]
        rgb = (1.0 - wgt) * rgb + wgt * identity.eye_color
    return rgb, sigma


class GroundTruthField:
    """Adapter exposing gt_field through the renderer's field protocol."""

    def __init__(self, identity: IdentityParams, expr: ExpressionParams):
        self.identity = identity
        self.expr = expr

    def __call__(self, x: Tensor):
        rgb, sigma = gt_field(self.identity, self.expr, x.numpy())
        return Tensor(rgb), Tensor(sigma)


# ---------------------------------------------------------------------------
# Dataset generation
# ---------------------------------------------------------------------------

def _seed_from(*words) -> int:
    state = np.random.SeedSequence(list(words)).generate_state(2)
    return int(state[0]) << 32 | int(state[1])


@dataclass
class WorldConfig:
    resolution: int = 32
    samples_per_ray: int = 64
    radius: float = 2.5
    fov: float = 0.4
    yaw_range: float = 0.6
    pitch_range: float = 0.3


@dataclass
class DatasetRecord:
    identity_id: int
    identity_seed: int
    split: str                 # "train" | "heldout"
    e: np.ndarray              # (2,)
    pose: CameraPose
    image: np.ndarray          # (H, W, 3) float in [0,1]
    depth: np.ndarray          # (H, W) world units
    mask: np.ndarray           # (H, W) bool
    render_seed: int = 0

    def identity(self) -> IdentityParams:
        return IdentityParams.sample(self.identity_seed)

    def expression(self) -> ExpressionParams:
        return ExpressionParams(self.e)


@dataclass
class Dataset:
    records: list
    seed: int
    config: WorldConfig
    train_seeds: list
    heldout_seeds: list

    def train_records(self):
        return [r for r in self.records if r.split == "train"]

    def heldout_records(self):
        return [r for r in self.records if r.split == "heldout"]

    def records_for_identity(self, identity_id):
        return [r for r in self.records if r.identity_id == identity_id]


def render_record(identity, expr, pose, cfg: WorldConfig, render_seed):
    opts = RenderOptions(samples_per_ray=cfg.samples_per_ray,
                         jitter_seed=render_seed)
    img = render(GroundTruthField(identity, expr), pose, cfg.resolution, opts)
    return img.rgb_np(), img.depth_np(), img.alpha_np() > 0.5


def make_dataset(n_ids, views_per_id, expr_per_view, resolution, seed, *,
                 n_heldout_ids=0, heldout_views_per_id=None,
                 samples_per_ray=64, radius=2.5, fov=0.4,
                 yaw_range=0.6, pitch_range=0.3) -> Dataset:
    """Sample identities, poses and expressions; render every record.

    Held-out identity seeds come from a disjoint seed namespace and never
    appear in the training split.  Every record regenerates bit-exactly
    from (seed, identity, e, pose) because each render derives its jitter
    stream from the dataset seed and record index.
    """
    if n_ids < 1:
        raise ValueError("empty dataset: n_ids must be >= 1")
    if views_per_id < 1:
        raise ValueError("views_per_id must be >= 1")
    cfg = WorldConfig(resolution, samples_per_ray, radius, fov,
                      yaw_range, pitch_range)
    train_seeds = [_seed_from(seed, _DOM_TRAIN, i) for i in range(n_ids)]
    heldout_seeds = [_seed_from(seed, _DOM_HELDOUT, i)
                     for i in range(n_heldout_ids)]
    records = []
    rec_idx = 0
    plans = [("train", train_seeds, views_per_id),
             ("heldout", heldout_seeds, heldout_views_per_id or views_per_id)]
    for split, seeds, n_views in plans:
        for ident_idx, ident_seed in enumerate(seeds):
            identity = IdentityParams.sample(ident_seed)
            pose_rng = np.random.default_rng(
                _seed_from(seed, _DOM_POSE, ident_seed))
            for _ in range(n_views):
                yaw = pose_rng.uniform(-yaw_range, yaw_range)
                pitch = pose_rng.uniform(-pitch_range, pitch_range)
                pose = CameraPose(yaw, pitch, radius, fov=fov)
                for _ in range(expr_per_view):
                    e = pose_rng.uniform(-1.0, 1.0, size=2)
                    expr = ExpressionParams(e)
                    render_seed = _seed_from(seed, _DOM_RENDER, rec_idx)
                    image, depth, mask = render_record(
                        identity, expr, pose, cfg, render_seed)
                    ident_id = (ident_idx if split == "train"
                                else n_ids + ident_idx)
                    records.append(DatasetRecord(
                        ident_id, ident_seed, split, e, pose,
                        image, depth, mask, render_seed))
                    rec_idx += 1
    return Dataset(records, seed, cfg, train_seeds, heldout_seeds)


# ---------------------------------------------------------------------------
# Persistence: meta.json + per-record PNGs + records.csv
# ---------------------------------------------------------------------------

def quantize_image(rgb):
    return np.clip(np.round(rgb * 255.0), 0, 255).astype(np.uint8)


def quantize_depth(depth):
    # Fixed-point millidepth in a 16-bit channel.
    return np.clip(np.round(depth * 1000.0), 0, 65535).astype(np.uint16)


def save_dataset(ds: Dataset, out_dir):
    from PIL import Image

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    meta = {
        "seed": ds.seed,
        "config": {
            "resolution": ds.config.resolution,
            "samples_per_ray": ds.config.samples_per_ray,
            "radius": ds.config.radius,
            "fov": ds.config.fov,
            "yaw_range": ds.config.yaw_range,
            "pitch_range": ds.config.pitch_range,
        },
        "n_records": len(ds.records),
        "train_seeds": [str(s) for s in ds.train_seeds],
        "heldout_seeds": [str(s) for s in ds.heldout_seeds],
        "records": [
            {
                "id": r.identity_id,
                "seed": str(r.identity_seed),
                "split": r.split,
                "render_seed": str(r.render_seed),
            }
            for r in ds.records
        ],
    }
    (out / "meta.json").write_text(json.dumps(meta, indent=1, sort_keys=True))
    with open(out / "records.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["id", "seed", "e1", "e2", "yaw", "pitch"])
        for r in ds.records:
            writer.writerow([r.identity_id, r.identity_seed,
                             repr(float(r.e[0])), repr(float(r.e[1])),
                             repr(float(r.pose.yaw)), repr(float(r.pose.pitch))])
    for i, r in enumerate(ds.records):
        Image.fromarray(quantize_image(r.image)).save(out / f"rec_{i:05d}_img.png")
        depth16 = quantize_depth(r.depth)
        Image.fromarray(depth16, mode="I;16").save(out / f"rec_{i:05d}_depth.png")
        Image.fromarray((r.mask * np.uint8(255))).save(out / f"rec_{i:05d}_mask.png")


def load_dataset(in_dir) -> Dataset:
    from PIL import Image

    src = Path(in_dir)
    meta = json.loads((src / "meta.json").read_text())
    cfg = WorldConfig(**meta["config"])
    rows = list(csv.DictReader(open(src / "records.csv")))
    records = []
    for i, (row, rec_meta) in enumerate(zip(rows, meta["records"])):
        image = np.asarray(Image.open(src / f"rec_{i:05d}_img.png"),
                           dtype=np.float64) / 255.0
        depth = np.asarray(Image.open(src / f"rec_{i:05d}_depth.png"),
                           dtype=np.float64) / 1000.0
        mask = np.asarray(Image.open(src / f"rec_{i:05d}_mask.png")) > 127
        pose = CameraPose(float(row["yaw"]), float(row["pitch"]),
                          cfg.radius, fov=cfg.fov)
        records.append(DatasetRecord(
            int(row["id"]), int(row["seed"]), rec_meta["split"],
            np.array([float(row["e1"]), float(row["e2"])]),
            pose, image, depth, mask, int(rec_meta["render_seed"])))
    return Dataset(records, meta["seed"], cfg,
                   [int(s) for s in meta["train_seeds"]],
                   [int(s) for s in meta["heldout_seeds"]])
