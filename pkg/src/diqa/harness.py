"""Training loop, evaluation, activation export and label auditing."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dataset, metrics, pgm, seeding
from .nn import functional as F
from .nn.checkpoint import load_checkpoint, save_checkpoint
from .nn.network import CONVNET4, Network, backprop, build_network, forward
from .nn.optim import AdamState, adam_step

log = logging.getLogger(__name__)

CURVE_FIELDS = ("step", "train_acc", "eval_acc", "train_loss", "eval_loss")
EVAL_CHUNK = 64


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 10000
    batch_size: int = 32
    lr: float = 1e-3
    seed: int = 0
    arch: str = CONVNET4
    task: str = "binary"
    input_size: int = 64
    eval_interval: int = 100
    channel_plan: tuple[int, ...] | None = None
    label_policy: str = "rater_a"

    def __post_init__(self):
        for name in ("steps", "batch_size", "eval_interval"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if not self.lr > 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if self.task not in ("binary", "three"):
            raise ValueError(f"task must be 'binary' or 'three', got {self.task!r}")
        if self.label_policy not in dataset.POLICIES:
            raise ValueError(f"label_policy must be one of {dataset.POLICIES}, got {self.label_policy!r}")


@dataclass(frozen=True)
class CurvePoint:
    step: int
    train_acc: float
    eval_acc: float
    train_loss: float
    eval_loss: float


@dataclass
class TrainingCurve:
    points: list[CurvePoint] = field(default_factory=list)

    def append(self, point: CurvePoint):
        if self.points and point.step <= self.points[-1].step:
            raise ValueError(f"curve steps must increase: {point.step} after {self.points[-1].step}")
        self.points.append(point)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CURVE_FIELDS)
        for p in self.points:
            w.writerow([p.step] + [repr(float(getattr(p, f))) for f in CURVE_FIELDS[1:]])
        return buf.getvalue()

    def write(self, path) -> Path:
        path = Path(path)
        path.write_text(self.to_csv(), encoding="utf-8")
        return path


@dataclass
class TrainResult:
    network: Network
    curve: TrainingCurve


# ---------------------------------------------------------------------------
# inference helpers
# ---------------------------------------------------------------------------


def predict_proba(net: Network, images: np.ndarray) -> np.ndarray:
    """Inference-mode softmax probabilities, computed in fixed-size chunks."""
    out = [F.softmax(forward(net, images[i:i + EVAL_CHUNK])) for i in range(0, len(images), EVAL_CHUNK)]
    if not out:
        return np.zeros((0, net.num_classes))
    return np.concatenate(out).astype(np.float64)


def _score(net, images, labels):
    probs = predict_proba(net, images)
    rows = np.arange(len(labels))
    loss = float(-np.log(np.maximum(probs[rows, labels], np.finfo(np.float64).tiny)).mean())
    return metrics.accuracy(probs.argmax(axis=1), labels), loss


def _load_split(manifest, split, task, policy):
    records = manifest.split(split)
    if not records:
        raise ValueError(f"split {split!r} of the manifest is empty")
    return records, dataset.load_images(manifest, records), dataset.task_labels(records, task, policy)


class _BatchCycler:
    """Consecutive chunks of an endless sequence of seeded permutations."""

    def __init__(self, n, batch_size, rng):
        self.n, self.batch_size, self.rng = n, batch_size, rng
        self.order = rng.permutation(n)
        self.pos = 0

    def next(self) -> np.ndarray:
        idx = []
        while len(idx) < self.batch_size:
            if self.pos == self.n:
                self.order = self.rng.permutation(self.n)
                self.pos = 0
            take = min(self.batch_size - len(idx), self.n - self.pos)
            idx.extend(self.order[self.pos:self.pos + take])
            self.pos += take
        return np.asarray(idx)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


def train(config: TrainConfig, manifest: dataset.Manifest, progress=None) -> TrainResult:
    """Train a fresh network; curve points at step 0, every ``eval_interval`` and the last step.

    Curve accuracies and losses use inference mode over the whole train and
    eval splits. ``progress`` is an optional callable receiving each point.
    """
    _, x_train, y_train = _load_split(manifest, "train", config.task, config.label_policy)
    _, x_eval, y_eval = _load_split(manifest, "eval", config.task, config.label_policy)
    if x_train.shape[2:] != (config.input_size, config.input_size):
        raise ValueError(f"images are {x_train.shape[2]}x{x_train.shape[3]}, config.input_size is {config.input_size}")

    k = dataset.num_classes(config.task)
    net = build_network(config.arch, k, config.input_size, config.channel_plan, config.seed)
    state = AdamState(lr=config.lr)
    cycler = _BatchCycler(len(x_train), config.batch_size, seeding.stream(config.seed, "shuffle"))
    curve = TrainingCurve()

    def record(step):
        tr_acc, tr_loss = _score(net, x_train, y_train)
        ev_acc, ev_loss = _score(net, x_eval, y_eval)
        point = CurvePoint(step, tr_acc, ev_acc, tr_loss, ev_loss)
        curve.append(point)
        log.info("step %d: train acc %.4f loss %.4f | eval acc %.4f loss %.4f", step, tr_acc, tr_loss, ev_acc, ev_loss)
        if progress is not None:
            progress(point)

    record(0)
    for step in range(1, config.steps + 1):
        idx = cycler.next()
        result = backprop(net, x_train[idx], y_train[idx])
        if not math.isfinite(result.loss):
            raise FloatingPointError(f"non-finite training loss at step {step}")
        net.params, state = adam_step(net.params, result.grads, state)
        net.buffers = result.buffers
        net.step = step
        if step % config.eval_interval == 0 or step == config.steps:
            record(step)
    return TrainResult(net, curve)


def evaluate(net: Network, manifest: dataset.Manifest, split: str, task: str,
             policy: str = "rater_a") -> metrics.MetricsBundle:
    if dataset.num_classes(task) != net.num_classes:
        raise ValueError(f"task {task!r} needs {dataset.num_classes(task)} classes, network has {net.num_classes}")
    _, images, labels = _load_split(manifest, split, task, policy)
    return metrics.classification_metrics(predict_proba(net, images), labels)


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------


def _as_input(net: Network, image) -> np.ndarray:
    image = np.asarray(image)
    if image.dtype == np.uint8:
        image = dataset.normalize_image(image)
    if image.shape != (net.input_size, net.input_size):
        raise ValueError(f"image is {image.shape}, network expects {net.input_size}x{net.input_size}")
    return image[None, None]


def activations(net: Network, image) -> list[np.ndarray]:
    """Every post-ReLU activation of a single image, each (C, H, W)."""
    _, acts = forward(net, _as_input(net, image), capture=True)
    return [a[0] for a in acts]


def _to_gray(m: np.ndarray) -> np.ndarray:
    lo, hi = float(m.min()), float(m.max())
    if hi <= lo:
        return np.zeros(m.shape, dtype=np.uint8)
    return pgm.quantize((m - lo) / (hi - lo))


def export_activations(net: Network, image, out_dir) -> list[Path]:
    """Write each post-ReLU layer's channel-mean map, min-max scaled, as ``layer<k>.pgm`` (k from 1)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for k, act in enumerate(activations(net, image), start=1):
        paths.append(pgm.write_pgm(out_dir / f"layer{k}.pgm", _to_gray(act.mean(axis=0))))
    return paths


def layer_discriminability(net: Network, clean, corrupted) -> list[float]:
    """Per layer, 1 - cosine similarity of the flattened activations.

    Scores are exactly 0 when either activation is all zero or both are identical.
    """
    scores = []
    for a, b in zip(activations(net, clean), activations(net, corrupted)):
        a = a.ravel().astype(np.float64)
        b = b.ravel().astype(np.float64)
        na, nb = np.linalg.norm(a), np.linalg.norm(b)
        if na == 0 or nb == 0 or np.array_equal(a, b):
            scores.append(0.0)
        else:
            cos = float(np.clip(a @ b / (na * nb), -1.0, 1.0))
            scores.append(1.0 - cos)
    return scores


# ---------------------------------------------------------------------------
# label audit
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Suspect:
    id: str
    given: int
    predicted: int
    confidence: float


def flag_from_probabilities(ids, probs, labels, tau: float = 0.9) -> list[Suspect]:
    if not 0.5 < tau < 1:
        raise ValueError(f"tau must lie in (0.5, 1), got {tau}")
    probs = np.asarray(probs)
    pred = probs.argmax(axis=1)
    conf = probs[np.arange(len(pred)), pred]
    out = [
        Suspect(rid, int(y), int(p), float(c))
        for rid, y, p, c in zip(ids, labels, pred, conf)
        if p != y and c >= tau
    ]
    return sorted(out, key=lambda s: (-s.confidence, s.id))


def flag_suspect_labels(net: Network, manifest: dataset.Manifest, split: str = "train", tau: float = 0.9,
                        task: str | None = None, policy: str = "rater_a") -> list[Suspect]:
    """Samples the model confidently assigns to a class other than their label."""
    if not 0.5 < tau < 1:
        raise ValueError(f"tau must lie in (0.5, 1), got {tau}")
    task = task or ("binary" if net.num_classes == 2 else "three")
    records, images, labels = _load_split(manifest, split, task, policy)
    return flag_from_probabilities([r.id for r in records], predict_proba(net, images), labels, tau)


def suspects_to_csv(suspects) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("id", "given_label", "predicted_label", "confidence"))
    for s in suspects:
        w.writerow((s.id, s.given, s.predicted, repr(s.confidence)))
    return buf.getvalue()


__all__ = [
    "CurvePoint", "Suspect", "TrainConfig", "TrainResult", "TrainingCurve", "activations", "evaluate",
    "export_activations", "flag_from_probabilities", "flag_suspect_labels", "layer_discriminability",
    "load_checkpoint", "predict_proba", "save_checkpoint", "suspects_to_csv", "train",
]
