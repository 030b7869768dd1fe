"""Hyperspectral / multispectral image fusion.

Cubes are float64 numpy arrays shaped [bands, height, width].
"""

from ._core import (
    ConfigError,
    FormatError,
    Model,
    NonFiniteError,
    ShapeError,
    anisotropy_map,
    degrade_spatial,
    degrade_spectral,
    ergas,
    evaluate,
    gen_scene,
    generate_dataset,
    gradcheck,
    psnr,
    qnr,
    read_cube,
    sam,
    ssim,
    train,
    uiqi,
    write_cube,
)

__version__ = "0.1.0"
