"""resincam: segment the retained resin region of a wood cross-section
image, score the segmentation against ground truth, and compile the
removal map into verified CNC G-code."""

from .imaging import (BackgroundModel, BinaryMask, DatasetManifest, RasterImage,
                      load_image, load_manifest, mask_from_image, remove_background,
                      save_image, to_grayscale)
from .prompts import (PromptGridConfig, PromptPoint, PromptSet, compute_descriptor,
                      dedup_prompts, generate_grid, make_prompt, merge_custom_prompts)
from .segmentation import (BackendConfig, RegionProposal, SegmentationResult,
                           binarize, run_backend, segment_external,
                           segment_region_grow, segment_threshold, select_final_mask)
from .evaluation import (EvalReport, Grade, IoUScore, QualityClass, SummaryStats,
                         classify_quality, grade_region, iou, run_evaluation, summarize)
from .gcode import (GcodeProgram, MachineConfig, RemovalMap, Toolpath,
                    emit_gcode, optimize_travel, parse_gcode, plan_toolpath,
                    simulate_toolpath)
from .config import PipelineConfig, default_pipeline_config, pipeline_config_from_dict

__version__ = "0.1.0"

__all__ = [
    "BackgroundModel", "BinaryMask", "DatasetManifest", "RasterImage",
    "load_image", "load_manifest", "mask_from_image", "remove_background",
    "save_image", "to_grayscale",
    "PromptGridConfig", "PromptPoint", "PromptSet", "compute_descriptor",
    "dedup_prompts", "generate_grid", "make_prompt", "merge_custom_prompts",
    "BackendConfig", "RegionProposal", "SegmentationResult", "binarize",
    "run_backend", "segment_external", "segment_region_grow", "segment_threshold",
    "select_final_mask",
    "EvalReport", "Grade", "IoUScore", "QualityClass", "SummaryStats",
    "classify_quality", "grade_region", "iou", "run_evaluation", "summarize",
    "GcodeProgram", "MachineConfig", "RemovalMap", "Toolpath", "emit_gcode",
    "optimize_travel", "parse_gcode", "plan_toolpath", "simulate_toolpath",
    "PipelineConfig", "default_pipeline_config", "pipeline_config_from_dict",
]
