"""Deformable 3D registration: differentiable losses, trilinear warping, a
direct multi-level optimiser and a small encoder-decoder network."""

__version__ = "0.1.0"
