"""Online malware detection on simulated cloud VM process metrics."""

from .domain import DEFAULT_SCHEMA, ExperimentTimeline, FeatureSchema, Label, ProcessRecord, VmSnapshot, label_for_time
from .features import build_dataset, build_matrix, split_dataset
from .simulator import MalwareProfile, SimConfig, run_experiment

__version__ = "0.1.0"

__all__ = [
    "DEFAULT_SCHEMA", "ExperimentTimeline", "FeatureSchema", "Label", "MalwareProfile", "ProcessRecord", "SimConfig",
    "VmSnapshot", "build_dataset", "build_matrix", "label_for_time", "run_experiment", "split_dataset",
]
