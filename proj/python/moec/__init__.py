"""Mixture-of-experts neural compression for 3D volumes."""

from ._moec import (
    __version__,
    compress,
    decompress,
    psnr,
    selftest,
    spectrum_concentration,
    ssim,
    synthetic,
)

__all__ = [
    "__version__",
    "compress",
    "decompress",
    "psnr",
    "selftest",
    "spectrum_concentration",
    "ssim",
    "synthetic",
]
