"""Lightweight CNN for 3D-printer fault detection, built on numpy."""
from .augment import AugmentPolicy, Image
from .dataset import LabeledSample, LabelMap, Split, decode_image, decode_ppm, scan_dataset, stratified_split
from .errors import (CorruptionError, DataError, EdmError, FormatError, ModelStateError,
                     NumericDivergenceError, ShapeError, UnsupportedError)
from .model import Model, ModelConfig, init_model
from .modelio import load_model, save_model
from .tensor import Rng
from .training import Metrics, SearchReport, TrainConfig, depth_search, evaluate, train

__version__ = "0.1.0"
