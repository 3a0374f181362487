"""Scene-graph-conditioned 3D layout synthesis.

A graph-convolutional conditional VAE maps 3D scene graphs (objects +
spatial-relation edges) to diverse room layouts, with a differentiable
box rasterizer for analysis-by-synthesis refinement against depth and
semantic targets.
"""

from .core import (ATTRIBUTES, CLASSES, NUM_ROTATION_BINS, PREDICATES,
                   ObjectLayout, ObjectNode, RelationTriplet, RoomSpec, Scene,
                   SceneGraph, SceneLayout, SceneValidationError,
                   angle_to_bin, bin_to_angle, footprint_iou, iou_3d,
                   scene_from_json, scene_to_json)
from .estimator import LayoutGenerator
from .metrics import diversity_std, l1_box_loss, scene_graph_accuracy
from .model import ModelConfig, SlnModel
from .refine import RefineConfig, evaluate_refinement, refine
from .relations import (ExtractorConfig, PercentileTable, classify_pair,
                        extract_scene_graph, full_relation_set,
                        predicate_holds)
from .render import (Camera, RenderTarget, default_camera, rasterize,
                     rasterize_hard, soft_rotation)
from .train import TrainConfig, Trainer, evaluate

__version__ = "0.1.0"

__all__ = [
    "ATTRIBUTES", "CLASSES", "NUM_ROTATION_BINS", "PREDICATES",
    "ObjectLayout", "ObjectNode", "RelationTriplet", "RoomSpec", "Scene",
    "SceneGraph", "SceneLayout", "SceneValidationError",
    "angle_to_bin", "bin_to_angle", "footprint_iou", "iou_3d",
    "scene_from_json", "scene_to_json",
    "LayoutGenerator",
    "diversity_std", "l1_box_loss", "scene_graph_accuracy",
    "ModelConfig", "SlnModel",
    "RefineConfig", "evaluate_refinement", "refine",
    "ExtractorConfig", "PercentileTable", "classify_pair",
    "extract_scene_graph", "full_relation_set", "predicate_holds",
    "Camera", "RenderTarget", "default_camera", "rasterize",
    "rasterize_hard", "soft_rotation",
    "TrainConfig", "Trainer", "evaluate",
]
