"""Volume-weighted latent sampling for piecewise-affine generator networks."""

__version__ = "0.1.0"
