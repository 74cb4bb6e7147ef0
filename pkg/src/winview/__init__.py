"""Window view indices from a four-color 3D city scene.

Typical flow: load or build a labeled city mesh and a labeled DSM layer,
wrap them in a :class:`ColoredScene`, then call :func:`assess_batch` with a
window manifest.
"""

from .distant import NdviThresholds, dsm_to_labeled_mesh, register_labels, segment_ndvi
from .errors import (DimensionMismatchError, EmptyCloudError, EmptyMeshError, IdMismatchError,
                     ParseError, UnknownColorError, UnknownFixtureError, ValidationError,
                     WindowError, WinviewError)
from .ingest import (GeoRaster, LabeledPointCloud, Mesh, WindowSpec, load_mesh,
                     load_point_cloud, load_raster, load_windows)
from .labels import Rgb8, SemanticLabel, WviRecord, color_to_label, label_to_color
from .render import (CameraParams, CameraPose, ColoredScene, ViewImage, place_camera,
                     prepare_scene, render_view, save_image)
from .transfer import LabeledMesh, derive_triangle_labels, sample_surface, transfer_labels
from .wvi import assess_batch, compute_wvi, rmse_compare, write_csv

__version__ = "0.1.0"

__all__ = [
    "NdviThresholds", "dsm_to_labeled_mesh", "register_labels", "segment_ndvi",
    "DimensionMismatchError", "EmptyCloudError", "EmptyMeshError", "IdMismatchError",
    "ParseError", "UnknownColorError", "UnknownFixtureError", "ValidationError",
    "WindowError", "WinviewError",
    "GeoRaster", "LabeledPointCloud", "Mesh", "WindowSpec", "load_mesh",
    "load_point_cloud", "load_raster", "load_windows",
    "Rgb8", "SemanticLabel", "WviRecord", "color_to_label", "label_to_color",
    "CameraParams", "CameraPose", "ColoredScene", "ViewImage", "place_camera",
    "prepare_scene", "render_view", "save_image",
    "LabeledMesh", "derive_triangle_labels", "sample_surface", "transfer_labels",
    "assess_batch", "compute_wvi", "rmse_compare", "write_csv",
]
