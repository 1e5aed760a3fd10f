"""Single-image inversion lab for latent-conditioned radiance fields."""

__version__ = "0.1.0"
