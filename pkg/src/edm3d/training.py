"""SGD training, evaluation metrics and the depth-pruning search."""
from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import augment, layers
from .augment import AugmentPolicy
from .dataset import Split, decode_image
from .errors import DataError, NumericDivergenceError, ShapeError
from .model import CLASS_NAMES, DEFAULT_DEPTH, DEFAULT_INPUT_SIZE, MAX_DEPTH, Model, ModelConfig, init_model
from .tensor import Rng

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    task: str
    epochs: int
    learning_rate: float = 0.01
    momentum: float = 0.9
    batch_size: int = 32
    seed: int = 42
    threshold: float = 0.90
    input_size: int = DEFAULT_INPUT_SIZE
    depth: int = DEFAULT_DEPTH
    hflip_prob: float = 0.5
    vflip_prob: float = 0.5

    def __post_init__(self):
        if self.task not in CLASS_NAMES:
            raise ValueError(f"unknown task {self.task!r}")
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not 0 <= self.momentum < 1:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        # thresholds of 0 and above 1 are legal: they force "all pass" and "fallback"
        if not self.threshold >= 0:
            raise ValueError(f"threshold must be >= 0, got {self.threshold}")

    @property
    def policy(self) -> AugmentPolicy:
        return AugmentPolicy(self.input_size, self.hflip_prob, self.vflip_prob)


@dataclass
class Metrics:
    accuracy: float
    confusion: np.ndarray  # rows = true class, cols = predicted
    mean_loss: float
    history: list = field(default_factory=list)  # (train_loss, test_accuracy) per epoch


@dataclass(frozen=True)
class DepthRecord:
    depth: int
    params: int
    test_accuracy: float  # nan when training diverged
    passed: bool


@dataclass
class SearchReport:
    records: list  # ascending depth
    selected_depth: int
    fallback_used: bool
    threshold: float

    def to_csv(self) -> str:
        lines = ["depth,params,test_accuracy,passed"]
        for r in self.records:
            acc = "nan" if math.isnan(r.test_accuracy) else f"{r.test_accuracy:.6f}"
            lines.append(f"{r.depth},{r.params},{acc},{str(r.passed).lower()}")
        lines.append(f"selected={self.selected_depth},fallback={str(self.fallback_used).lower()}")
        return "\n".join(lines) + "\n"


def sgd_step(model: Model, grads: dict, velocity: dict, lr: float, momentum: float):
    """v <- momentum*v - lr*g ; theta <- theta + v, in place."""
    params = model.parameters()
    for name, p in params.items():
        g, v = grads[name], velocity[name]
        if g.shape != p.shape or v.shape != p.shape:
            raise ShapeError(f"{name}: param {p.shape}, grad {g.shape}, velocity {v.shape}")
        v *= momentum
        v -= lr * g
        p += v
    return model, velocity


def zero_velocity(model: Model) -> dict:
    return {name: np.zeros_like(p) for name, p in model.parameters().items()}


class ImageCache:
    """Decoded, resized and center-cropped images keyed by path."""

    def __init__(self, size: int):
        self.size = size
        self._images = {}

    def get(self, path) -> augment.Image:
        img = self._images.get(path)
        if img is None:
            img = augment.prepare(decode_image(path), self.size)
            self._images[path] = img
        return img


def evaluate(model: Model, samples, batch_size: int = 32, cache: ImageCache | None = None) -> Metrics:
    if not samples:
        raise DataError("cannot evaluate on an empty sample list")
    cfg = model.config
    cache = cache or ImageCache(cfg.input_size)
    n_classes = cfg.n_classes
    confusion = np.zeros((n_classes, n_classes), dtype=np.int64)
    total_loss = 0.0
    for start in range(0, len(samples), batch_size):
        chunk = samples[start:start + batch_size]
        x = np.stack([augment.to_input_tensor(cache.get(s.path), model.dtype) for s in chunk])
        labels = np.array([s.class_id for s in chunk])
        logits = model.forward(x)
        loss, _ = layers.softmax_cross_entropy(logits, labels)
        total_loss += loss * len(chunk)
        # argmax returns the first maximum, so ties go to the lowest class id
        np.add.at(confusion, (labels, logits.argmax(axis=1)), 1)
    accuracy = float(np.trace(confusion)) / float(confusion.sum())
    return Metrics(accuracy=accuracy, confusion=confusion, mean_loss=total_loss / len(samples))


def train(config: TrainConfig, split: Split, on_epoch=None) -> tuple[Model, Metrics]:
    """Train a fresh model and return it with test metrics and per-epoch history.

    ``on_epoch(epoch, train_loss, test_accuracy)`` is called after every epoch.
    """
    if not split.train or not split.test:
        raise DataError("train and test splits must both be non-empty")
    model_cfg = ModelConfig.for_depth(config.task, config.depth, config.input_size)
    model = init_model(model_cfg, Rng(config.seed))
    velocity = zero_velocity(model)
    cache = ImageCache(config.input_size)
    policy = config.policy
    history = []
    for epoch in range(1, config.epochs + 1):
        rng = Rng(config.seed ^ epoch)
        order = rng.shuffle(split.train)
        total = 0.0
        for b, start in enumerate(range(0, len(order), config.batch_size), 1):
            batch = order[start:start + config.batch_size]
            x = np.stack([
                augment.to_input_tensor(augment.random_flips(cache.get(s.path), policy, rng), model.dtype)
                for s in batch
            ])
            labels = np.array([s.class_id for s in batch])
            logits = model.forward(x, train=True)
            loss, grad = layers.softmax_cross_entropy(logits, labels)
            if not math.isfinite(loss):
                raise NumericDivergenceError.at(epoch, b, loss)
            grads = model.backward(grad)
            sgd_step(model, grads, velocity, config.learning_rate, config.momentum)
            total += loss * len(batch)
        model._cache = None
        train_loss = total / len(order)
        test_acc = evaluate(model, split.test, config.batch_size, cache).accuracy
        history.append((train_loss, test_acc))
        log.debug("epoch %d loss %.6f test_acc %.6f", epoch, train_loss, test_acc)
        if on_epoch is not None:
            on_epoch(epoch, train_loss, test_acc)
    metrics = evaluate(model, split.test, config.batch_size, cache)
    metrics.history = history
    return model, metrics


def _train_depth(config: TrainConfig, split: Split, depth: int):
    cfg = replace(config, depth=depth, seed=config.seed ^ depth)
    try:
        model, metrics = train(cfg, split)
    except NumericDivergenceError as e:
        log.warning("depth %d diverged: %s", depth, e)
        return depth, ModelConfig.for_depth(cfg.task, depth, cfg.input_size).param_count, None, math.nan
    return depth, model.param_count(), model, metrics.accuracy


def select_depth(records, threshold: float) -> tuple[int, bool]:
    """Smallest passing depth, else the most accurate one (ties -> smaller depth)."""
    passing = [r.depth for r in records if r.passed]
    if passing:
        return min(passing), False
    finite = [r for r in records if not math.isnan(r.test_accuracy)]
    if not finite:
        raise NumericDivergenceError("training diverged at every depth")
    best = max(finite, key=lambda r: (r.test_accuracy, -r.depth))
    return best.depth, True


def depth_search(config: TrainConfig, split: Split, max_depth: int = MAX_DEPTH, workers: int = 1,
                 on_depth=None) -> tuple[Model, SearchReport]:
    """Train depths ``max_depth`` down to 1 and keep the lightest model clearing the threshold.

    Each depth starts from a fresh initialization seeded with ``seed ^ depth``.
    """
    if not 1 <= max_depth <= MAX_DEPTH:
        raise ValueError(f"max_depth must be in 1..{MAX_DEPTH}, got {max_depth}")
    depths = list(range(max_depth, 0, -1))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_train_depth, [config] * len(depths), [split] * len(depths), depths))
    else:
        results = []
        for d in depths:
            results.append(_train_depth(config, split, d))
            if on_depth is not None:
                on_depth(*results[-1][:2], results[-1][3])
    models = {}
    records = []
    for depth, params, model, acc in sorted(results, key=lambda r: r[0]):
        models[depth] = model
        records.append(DepthRecord(depth, params, acc, (not math.isnan(acc)) and acc >= config.threshold))
    selected, fallback = select_depth(records, config.threshold)
    return models[selected], SearchReport(records, selected, fallback, config.threshold)
