"""FGMamba medical-image super-resolution: python bindings over the C++ core."""

from ._core import (
    avg_pool2d,
    bicubic_downsample,
    conv2d,
    fft2,
    highfreq_extract,
    ifft2,
    infer_checkpoint,
    layer_norm,
    linear,
    model_forward,
    param_count,
    pixel_shuffle,
    preset_param_count,
    psnr,
    selective_scan,
    sigmoid,
    ssim,
    upsample_nearest,
)

__all__ = [
    "avg_pool2d",
    "bicubic_downsample",
    "conv2d",
    "fft2",
    "highfreq_extract",
    "ifft2",
    "infer_checkpoint",
    "layer_norm",
    "linear",
    "model_forward",
    "param_count",
    "pixel_shuffle",
    "preset_param_count",
    "psnr",
    "selective_scan",
    "sigmoid",
    "ssim",
    "upsample_nearest",
]
