"""Weakly supervised 3D PET tumor localization from two MIP views.

A classifier trained on coronal and sagittal maximum intensity projections
produces class activation maps, corrected during training by a distance loss
against a single annotated tumor-centre voxel; the thresholded maps are
back-projected into a 3D detection mask.
"""

__version__ = "0.1.0"

from .errors import (ConfigError, DatasetWriteError, DegenerateCamWarning, GenerationError,
                     MipcamError, NumericError, ShapeError, StratificationError, ValidationError)
from .localization import BinaryMask2D, BinaryMask3D, backproject, cam_to_mask, dice, refine_mask
from .losses import LossBreakdown, classification_loss, combined_loss, distance_loss
from .model import (ARCH_TABLE, CamMap, MipClassifier, build_classifier, compute_cam,
                    load_checkpoint, save_checkpoint, upsample_cam)
from .phantom import (ClassSpec, GroundTruth, PhantomCase, PhantomConfig, benchmark_config,
                      generate_case, generate_dataset)
from .volumes import (MipImage, PetVolume, Point2D, Point3D, View, mip_project, normalize_suv,
                      project_center, resample_volume)

__all__ = [
    "__version__",
    "MipcamError", "ValidationError", "ConfigError", "ShapeError", "GenerationError",
    "StratificationError", "NumericError", "DatasetWriteError", "DegenerateCamWarning",
    "PetVolume", "MipImage", "Point2D", "Point3D", "View",
    "mip_project", "normalize_suv", "project_center", "resample_volume",
    "PhantomConfig", "ClassSpec", "GroundTruth", "PhantomCase",
    "benchmark_config", "generate_case", "generate_dataset",
    "ARCH_TABLE", "MipClassifier", "CamMap", "build_classifier", "compute_cam", "upsample_cam",
    "save_checkpoint", "load_checkpoint",
    "LossBreakdown", "classification_loss", "combined_loss", "distance_loss",
    "BinaryMask2D", "BinaryMask3D", "backproject", "cam_to_mask", "dice", "refine_mask",
]
