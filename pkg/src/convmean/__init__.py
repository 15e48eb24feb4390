"""Convolutional Mean illuminant estimation."""
from .data import Dataset, LabeledImage, MondrianSpec, load_dataset, save_dataset, synth_generate
from .estimators import (
    ConvMeanEstimator, GrayEdge, GrayWorld, ShadesOfGray, WhitePatch, make_estimator)
from .evaluation import ErrorStats, angular_error, error_stats
from .exceptions import DataError, FormatError, NumericError, ShapeError
from .model import CmParams, Variant, init_kaiming, load, param_count, save
from .training import TrainConfig, cross_validate, train_fold

__version__ = "0.1.0"

__all__ = [
    "CmParams", "ConvMeanEstimator", "DataError", "Dataset", "ErrorStats", "FormatError",
    "GrayEdge", "GrayWorld", "LabeledImage", "MondrianSpec", "NumericError", "ShadesOfGray",
    "ShapeError", "TrainConfig", "Variant", "WhitePatch", "angular_error", "cross_validate",
    "error_stats", "init_kaiming", "load", "load_dataset", "make_estimator", "param_count",
    "save", "save_dataset", "synth_generate", "train_fold",
]
