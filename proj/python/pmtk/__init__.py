from ._pmtk import (
    ConfigError,
    DataError,
    DimensionError,
    FormatError,
    Model,
    PmtkError,
    binary_metrics,
    diffuse_dwt,
    diffuse_fd,
    diffusivity,
    dwt2,
    gaussian_blur,
    gradcheck,
    idwt2,
    load_image,
    pmd_step_fd,
    save_image,
    selective_scan,
    selective_scan_reference,
    synth,
)

__all__ = [
    "ConfigError",
    "DataError",
    "DimensionError",
    "FormatError",
    "Model",
    "PmtkError",
    "binary_metrics",
    "diffuse_dwt",
    "diffuse_fd",
    "diffusivity",
    "dwt2",
    "gaussian_blur",
    "gradcheck",
    "idwt2",
    "load_image",
    "pmd_step_fd",
    "save_image",
    "selective_scan",
    "selective_scan_reference",
    "synth",
]
