"""Desk-scale simulator for semantic, region-aware video streaming.

A small on-camera student network decides which parts of each frame the
server's detector actually needs, frames are filtered in feature space,
regions are sent at mixed quality, and the student is retrained from the
server when its hit rate drifts. Baseline pipelines and an oracle bound
are included for comparison.
"""

from .errors import (ConfigError, FormatError, ResyncError, ShapeError,
                     StateError, TrainingError)
from .scene import (BoundingBox, DriftEvent, Frame, ObjectSpec, SceneConfig,
                    SceneGenerator, TextureSpec, generate_batch, grid_join,
                    grid_split, iou, teacher_detect, write_ppm)
from .student import StudentNet
from .labeling import distill_loss, label_regions
from .training import TrainConfig, evaluate_student, pretrain, train_student
from .temporal import (FeatureMap, Partition, feature_compare,
                       frame_difference, frame_features, partition_batch,
                       representative)
from .spatial import (CompressedFrame, byte_cost, classify_regions, compress,
                      decode_frame, degrade, encode_frame, reconstruct,
                      upsample)
from .metrics import (CONSTRAINED_NETWORK, RICH_NETWORK, NetworkConfig,
                      RunMetrics, f1_score, normalized_bandwidth,
                      response_delay, transmit_time)
from .messages import (BatchMessage, UpdateMessage, decode_message,
                       decode_update, encode_message, encode_update)
from .pipeline import PipelineConfig, ServerNode, run_ltc, source_process_batch
from .baselines import (calibrate_threshold, run_dds_baseline, run_oracle,
                        run_reducto_baseline, run_uniform_baseline)
from .config import Scenario, load_scenario, parse_scenario

__version__ = "0.1.0"

__all__ = [
    "BatchMessage", "BoundingBox", "CONSTRAINED_NETWORK", "CompressedFrame",
    "ConfigError", "DriftEvent", "FeatureMap", "FormatError", "Frame",
    "NetworkConfig", "ObjectSpec", "Partition", "PipelineConfig",
    "RICH_NETWORK", "ResyncError", "RunMetrics", "Scenario", "SceneConfig",
    "SceneGenerator", "ServerNode", "ShapeError", "StateError", "StudentNet",
    "TextureSpec", "TrainConfig", "TrainingError", "UpdateMessage",
    "byte_cost", "calibrate_threshold", "classify_regions", "compress",
    "decode_frame", "decode_message", "decode_update", "degrade",
    "distill_loss", "encode_frame", "encode_message", "encode_update",
    "evaluate_student", "f1_score", "feature_compare", "frame_difference",
    "frame_features", "generate_batch", "grid_join", "grid_split", "iou",
    "label_regions", "load_scenario", "normalized_bandwidth",
    "parse_scenario", "partition_batch", "pretrain", "reconstruct",
    "representative", "response_delay", "run_dds_baseline", "run_ltc",
    "run_oracle", "run_reducto_baseline", "run_uniform_baseline",
    "source_process_batch", "teacher_detect", "train_student",
    "transmit_time", "upsample", "write_ppm",
]
