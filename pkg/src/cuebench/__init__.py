"""Cue-augmented binary descriptors with interchangeable Hamming backends.

The package turns per-feature side information ("cues") into bit blocks
appended to binary descriptors, so that plain Hamming comparisons realize a
weighted distance between appearance and cues.  Around that core it ships
four search backends with one interface, a synthetic place-recognition
dataset generator with on-disk formats, an evaluation harness
(AP/mAP/precision-recall/timing), and a sweep driver with a CLI.
"""

from .bitvec import (
    BinaryDescriptor,
    DescriptorArray,
    concat,
    hamming,
    hamming_rows,
    pairwise_hamming,
    repeat,
)
from .dataset import (
    GroundTruth,
    ImageRecord,
    SyntheticConfig,
    generate_synthetic,
    load_dataset,
    read_descriptor_file,
    save_dataset,
    write_descriptor_file,
)
from .encoders import (
    ContinuousCue,
    CoordinateLUT,
    CueSchema,
    SelectorCue,
    keypoint_schema,
)
from .evaluation import (
    EvalReport,
    PRCurve,
    average_precision,
    build_report,
    mean_average_precision,
    mean_processing_time,
    pr_curve,
)
from .runner import RunConfig, run_cell, run_sweep
from .search import (
    BofIndex,
    BruteForceIndex,
    BstIndex,
    LshIndex,
    MatchResult,
    QueryResult,
    SearchIndex,
    Vocabulary,
    create_index,
)

__version__ = "0.1.0"

__all__ = [
    "BinaryDescriptor",
    "BofIndex",
    "BruteForceIndex",
    "BstIndex",
    "ContinuousCue",
    "CoordinateLUT",
    "CueSchema",
    "DescriptorArray",
    "EvalReport",
    "GroundTruth",
    "ImageRecord",
    "LshIndex",
    "MatchResult",
    "PRCurve",
    "QueryResult",
    "RunConfig",
    "SearchIndex",
    "SelectorCue",
    "SyntheticConfig",
    "Vocabulary",
    "average_precision",
    "build_report",
    "concat",
    "create_index",
    "generate_synthetic",
    "hamming",
    "hamming_rows",
    "keypoint_schema",
    "load_dataset",
    "mean_average_precision",
    "mean_processing_time",
    "pairwise_hamming",
    "pr_curve",
    "read_descriptor_file",
    "run_cell",
    "run_sweep",
    "save_dataset",
    "write_descriptor_file",
]
