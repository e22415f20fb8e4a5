from .config import TrainConfig, load_config_file, phantom_config_from_file, train_config_from_file
from .crossval import RunReport, cross_validate
from .data import (FoldSplit, LoadedCase, PreparedCase, load_dataset, make_folds,
                   make_training_example, prepare_case)
from .evaluate import CasePrediction, CaseRecord, evaluate, localize, predict_case
from .gradcheck import GradcheckReport, gradcheck
from .report import render_report
from .train import StepRecord, train

__all__ = [
    "TrainConfig", "load_config_file", "phantom_config_from_file", "train_config_from_file",
    "RunReport", "cross_validate",
    "FoldSplit", "LoadedCase", "PreparedCase", "load_dataset", "make_folds",
    "make_training_example", "prepare_case",
    "CasePrediction", "CaseRecord", "evaluate", "localize", "predict_case",
    "GradcheckReport", "gradcheck",
    "render_report",
    "StepRecord", "train",
]
