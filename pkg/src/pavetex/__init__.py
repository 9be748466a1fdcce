"""Image-based friction indicators for asphalt pavement surfaces.

The pipeline turns a surface photograph into the protruding-aggregate Area
indicator (mm^2), plus three comparison indicators (aggregate ratio, wavelet
macrotexture index, box-counting fractal dimension), and relates them to
DFT40 friction through per-mixture linear models.
"""

from pavetex.raster import (
    ColorRaster,
    GrayRaster,
    RoiSpec,
    crop_resize,
    load_image,
    to_grayscale,
)
from pavetex.enhance import ClaheParams, GaussianParams, clahe, gaussian_kernel, gaussian_smooth
from pavetex.segment import (
    BinaryMask,
    Histogram256,
    ThresholdResult,
    area_mm2,
    binarize,
    histogram,
    isodata_threshold,
    max_entropy_threshold,
    otsu_threshold,
)
from pavetex.indicators import (
    BoxCountCurve,
    WaveletPyramid,
    aggregate_ratio,
    box_count,
    fractal_dimension,
    haar_dwt2,
    haar_idwt2,
    level_energies,
    smi,
)
from pavetex.stats import (
    ObservationSet,
    RegressionModel,
    adjusted_r_squared,
    builtin_models,
    ols_fit,
    pearson_r,
    predict,
    r_squared,
)

__version__ = "0.1.0"

__all__ = [
    "BinaryMask",
    "BoxCountCurve",
    "ClaheParams",
    "ColorRaster",
    "GaussianParams",
    "GrayRaster",
    "Histogram256",
    "ObservationSet",
    "RegressionModel",
    "RoiSpec",
    "ThresholdResult",
    "WaveletPyramid",
    "adjusted_r_squared",
    "aggregate_ratio",
    "area_mm2",
    "binarize",
    "box_count",
    "builtin_models",
    "clahe",
    "crop_resize",
    "fractal_dimension",
    "gaussian_kernel",
    "gaussian_smooth",
    "haar_dwt2",
    "haar_idwt2",
    "histogram",
    "isodata_threshold",
    "level_energies",
    "load_image",
    "max_entropy_threshold",
    "ols_fit",
    "otsu_threshold",
    "pearson_r",
    "predict",
    "r_squared",
    "smi",
    "to_grayscale",
]
