"""Material recognition from 4D light fields: data model, layers, training and segmentation."""

from .errors import LF4DError
from .lightfield import (
    EPIVolume, Image, LightField, RemapImage, angular_crop, angular_subsample, central_view, crop_patch,
    extract_epis, from_remap, load_lightfield, save_lightfield, spatial_downsample, to_remap,
)

__version__ = "0.1.0"

__all__ = [
    "EPIVolume", "Image", "LF4DError", "LightField", "RemapImage", "angular_crop", "angular_subsample",
    "central_view", "crop_patch", "extract_epis", "from_remap", "load_lightfield", "save_lightfield",
    "spatial_downsample", "to_remap",
]
