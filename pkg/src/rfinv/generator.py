"""Latent-conditioned radiance-field generator.

A coordinate MLP over positionally-encoded 3-D points, with each hidden
layer modulated (FiLM scale/shift) from the latent code concatenated with
the expression vector.  A single shared latent drives every layer in W
mode; W+ mode gives each modulated layer its own latent, which is what
makes the two inversion spaces behave differently downstream.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import checkpoint
from .autodiff import Tensor


@dataclass
class GeneratorConfig:
    d_latent: int = 16
    width: int = 64
    depth: int = 4            # modulated hidden layers
    octaves: int = 6          # positional-encoding frequency octaves
    expr_dim: int = 2

    @property
    def enc_dim(self):
        return 3 + 6 * self.octaves

    @property
    def cond_dim(self):
        return self.d_latent + self.expr_dim

    def to_json(self):
        return {"d_latent": self.d_latent, "width": self.width,
                "depth": self.depth, "octaves": self.octaves,
                "expr_dim": self.expr_dim}

    @classmethod
    def from_json(cls, d):
        return cls(**d)


@dataclass
class LatentCode:
    """mode 'w': one vector (d,); mode 'w_plus': one vector per layer (L, d)."""

    mode: str
    value: object             # np.ndarray or Tensor

    def __post_init__(self):
        if self.mode not in ("w", "w_plus"):
            raise ValueError(f"unknown latent mode {self.mode!r}")

    def data(self) -> np.ndarray:
        return self.value.numpy() if isinstance(self.value, Tensor) else np.asarray(self.value)

    def layer_vectors(self, n_layers):
        """Per-layer latent rows; a shared W latent is reused verbatim."""
        v = self.value if isinstance(self.value, Tensor) else Tensor(self.value)
        if self.mode == "w":
            if v.ndim != 1:
                raise ValueError("W latent must be a single vector")
            return [v] * n_layers
        if v.ndim != 2 or v.shape[0] != n_layers:
            raise ValueError(
                f"W+ latent must have {n_layers} rows, got shape {v.shape}")
        return [v[i] for i in range(n_layers)]


def broadcast_latent(w: LatentCode, n_layers=4) -> LatentCode:
    """Per-layer copies of a W latent (the canonical W -> W+ embedding)."""
    if w.mode != "w":
        raise ValueError("broadcast_latent expects a W-mode latent")
    return LatentCode("w_plus", np.tile(w.data(), (n_layers, 1)))


@dataclass
class GeneratorParams:
    config: GeneratorConfig
    tensors: dict = dc_field(default_factory=dict)
    trainable: bool = True

    def tensor_list(self):
        return [self.tensors[k] for k in sorted(self.tensors)]

    def named_arrays(self):
        return {k: self.tensors[k].numpy() for k in sorted(self.tensors)}


def init_generator(config: GeneratorConfig, seed) -> GeneratorParams:
    rng = np.random.default_rng(seed)
    t = {}

    def mat(name, shape, scale):
        t[name] = Tensor(rng.normal(0.0, scale, size=shape), requires_grad=True)

    def zeros(name, shape):
        t[name] = Tensor(np.zeros(shape), requires_grad=True)

    in_dim = config.enc_dim
    for layer in range(config.depth):
        mat(f"mlp{layer}.w", (in_dim, config.width), np.sqrt(2.0 / in_dim))
        zeros(f"mlp{layer}.b", (config.width,))
        mat(f"film{layer}.ws", (config.cond_dim, config.width),
            0.2 / np.sqrt(config.cond_dim))
        mat(f"film{layer}.wb", (config.cond_dim, config.width),
            0.2 / np.sqrt(config.cond_dim))
        in_dim = config.width
    mat("rgb.w", (config.width, 3), 1.0 / np.sqrt(config.width))
    zeros("rgb.b", (3,))
    mat("sig.w", (config.width, 1), 1.0 / np.sqrt(config.width))
    zeros("sig.b", (1,))
    return GeneratorParams(config, t, trainable=True)


def positional_encoding(x, octaves):
    """[x, sin(2^k pi x), cos(2^k pi x)]_k -> (N, 3 + 6*octaves)."""
    n = x.shape[0]
    freqs = np.pi * (2.0 ** np.arange(octaves))
    xs = x.reshape(n, 3, 1) * Tensor(freqs.reshape(1, 1, -1))
    enc = ad.concat([x.reshape(n, 3, 1), ad.sin(xs), ad.cos(xs)], axis=2)
    return enc.reshape(n, 3 * (1 + 2 * octaves))


def radiance(params: GeneratorParams, z: LatentCode, e, x):
    """Evaluate the generator at points x (N, 3).

    Returns (rgb (N,3) in [0,1] via sigmoid, sigma (N,) >= 0 via softplus),
    differentiable w.r.t. parameters, latent, and points.
    """
    cfg = params.config
    x = ad.as_tensor(x)
    n = x.shape[0]
    layers = z.layer_vectors(cfg.depth)
    e_t = ad.as_tensor(np.asarray(e, dtype=np.float64).reshape(cfg.expr_dim))
    t = params.tensors
    h = positional_encoding(x, cfg.octaves)
    for layer, w_l in enumerate(layers):
        cond = ad.concat([w_l, e_t]).reshape(1, cfg.cond_dim)
        gain = 1.0 + cond @ t[f"film{layer}.ws"]       # (1, width)
        shift = cond @ t[f"film{layer}.wb"]
        # (h @ W) * gain + b * gain + shift == h @ (W * gain) + ...: folding
        # the per-render FiLM affine into the weights keeps every big (N, width)
        # intermediate out of the modulation arithmetic.
        w_eff = t[f"mlp{layer}.w"] * gain
        b_eff = t[f"mlp{layer}.b"] * gain.reshape(cfg.width) + shift.reshape(cfg.width)
        h = ad.silu(h @ w_eff + b_eff)
    rgb = ad.sigmoid(h @ t["rgb.w"] + t["rgb.b"])
    sigma = ad.softplus(h @ t["sig.w"] + t["sig.b"]).reshape(n)
    return rgb, sigma


class GeneratorField:
    """Field-protocol adapter: fixes (params, latent, expression)."""

    def __init__(self, params: GeneratorParams, z: LatentCode, e):
        self.params = params
        self.z = z
        self.e = np.asarray(e, dtype=np.float64).reshape(-1)

    def __call__(self, x: Tensor):
        return radiance(self.params, self.z, self.e, x)


def clone_frozen(params: GeneratorParams) -> GeneratorParams:
    """Deep copy with gradients and training disabled; never mutated again."""
    tensors = {k: Tensor(v.numpy().copy()) for k, v in params.tensors.items()}
    return GeneratorParams(copy.deepcopy(params.config), tensors, trainable=False)


def clone_trainable(params: GeneratorParams) -> GeneratorParams:
    tensors = {k: Tensor(v.numpy().copy(), requires_grad=True)
               for k, v in params.tensors.items()}
    return GeneratorParams(copy.deepcopy(params.config), tensors, trainable=True)


def save_generator(params: GeneratorParams, ckpt_path, sidecar_path=None,
                   extra: dict | None = None):
    tensors = {f"gen.{k}": v for k, v in params.named_arrays().items()}
    if extra:
        tensors.update(extra)
    checkpoint.save(ckpt_path, tensors)
    if sidecar_path is not None:
        Path(sidecar_path).write_text(
            json.dumps(params.config.to_json(), indent=1, sort_keys=True))


def load_generator(ckpt_path, sidecar_path, trainable=False):
    cfg = GeneratorConfig.from_json(json.loads(Path(sidecar_path).read_text()))
    raw = checkpoint.load(ckpt_path)
    tensors = {}
    extra = {}
    for k, v in raw.items():
        if k.startswith("gen."):
            tensors[k[4:]] = Tensor(v, requires_grad=trainable)
        else:
            extra[k] = v
    return GeneratorParams(cfg, tensors, trainable=trainable), extra
