"""Dataset model, storage, fold planning, and the synthetic ERP generator."""

from .folds import fold_seed, plan_loso_folds, reject_artifacts
from .model import (
    DEFAULT_CHANNELS,
    DEFAULT_SYMPTOM,
    DatasetError,
    ErpEpoch,
    FoldPlan,
    SubjectSet,
    check_geometry,
    relabel,
)
from .store import FormatError, import_csv, load_dataset, save_dataset
from .synth import SynthSpec, generate_synthetic

__all__ = [
    "DEFAULT_CHANNELS", "DEFAULT_SYMPTOM", "DatasetError", "ErpEpoch",
    "FoldPlan", "FormatError", "SubjectSet", "SynthSpec", "check_geometry",
    "fold_seed", "generate_synthetic", "import_csv", "load_dataset",
    "plan_loso_folds", "reject_artifacts", "relabel", "save_dataset",
]
