"""Geometry-first single-image 3D scene shape recovery toolkit."""

__version__ = "0.1.0"

from .camera import (CameraIntrinsics, DepthMap, NormalMap, PlaneSegment, PointCloud,
                     compute_normals, fit_plane, project, unproject)
from .completion import (SparseDepth, SparsityPattern, complete_depth, gen_sparsity,
                         inject_outliers, robust_align_sparse)
from .errors import (ConfigError, DataError, NumericalError, SceneShapeError)
from .metrics import MetricsReport, absrel_delta, dbe, evaluate, lsiv, pe, si_rmse, whdr
from .recovery import (RecoveryResult, normalize_unit, reconstruct_scene, recover_focal,
                       recover_shift)
from .synth import SceneConfig, apply_distortion, generate_scene, render_depth

__all__ = [
    "CameraIntrinsics", "DepthMap", "NormalMap", "PlaneSegment", "PointCloud",
    "compute_normals", "fit_plane", "project", "unproject",
    "SparseDepth", "SparsityPattern", "complete_depth", "gen_sparsity", "inject_outliers",
    "robust_align_sparse",
    "ConfigError", "DataError", "NumericalError", "SceneShapeError",
    "MetricsReport", "absrel_delta", "dbe", "evaluate", "lsiv", "pe", "si_rmse", "whdr",
    "RecoveryResult", "normalize_unit", "reconstruct_scene", "recover_focal", "recover_shift",
    "SceneConfig", "apply_distortion", "generate_scene", "render_depth",
]
