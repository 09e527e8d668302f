"""Manifest handling, splitting, label mapping and synthetic corpus assembly."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import kspace, pgm, seeding

log = logging.getLogger(__name__)

MANIFEST_FIELDS = ("id", "path", "rater_a", "rater_b", "severity", "split", "volume")
SPLITS = ("train", "eval", "test", "unassigned")
REFERENCE_PROPORTIONS = (518, 1220, 372)
POLICIES = ("rater_a", "rater_b", "mean-round")


@dataclass(frozen=True)
class ManifestRecord:
    id: str
    path: str
    rater_a: int
    rater_b: int
    severity: float | None = None
    split: str = "unassigned"
    volume: str = ""

    def __post_init__(self):
        for name in ("rater_a", "rater_b"):
            if getattr(self, name) not in (0, 1, 2):
                raise ValueError(f"record {self.id!r}: {name} must be 0, 1 or 2, got {getattr(self, name)!r}")
        if self.split not in SPLITS:
            raise ValueError(f"record {self.id!r}: unknown split {self.split!r}")


@dataclass
class Manifest:
    records: list[ManifestRecord]
    root: Path = field(default_factory=Path)

    def __post_init__(self):
        seen = set()
        for r in self.records:
            if r.id in seen:
                raise ValueError(f"duplicate record id {r.id!r}")
            seen.add(r.id)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def split(self, name: str) -> list[ManifestRecord]:
        if name == "all":
            return list(self.records)
        return [r for r in self.records if r.split == name]

    def image_path(self, record: ManifestRecord) -> Path:
        return self.root / record.path


@dataclass(frozen=True)
class SplitConfig:
    ratios: tuple[float, float, float] = (0.7, 0.1, 0.2)
    seed: int = 0
    grouping: str = "per-image"

    def __post_init__(self):
        if len(self.ratios) != 3 or any(not 0 <= r <= 1 for r in self.ratios):
            raise ValueError(f"ratios must be three values in [0, 1], got {self.ratios}")
        if abs(sum(self.ratios) - 1) > 1e-9:
            raise ValueError(f"ratios must sum to 1, got {self.ratios} (sum {sum(self.ratios)})")
        if self.grouping not in ("per-image", "per-volume"):
            raise ValueError(f"grouping must be 'per-image' or 'per-volume', got {self.grouping!r}")


# ---------------------------------------------------------------------------
# manifest CSV
# ---------------------------------------------------------------------------


def _fmt_severity(s):
    return "" if s is None else repr(float(s))


def manifest_to_csv(manifest: Manifest) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(MANIFEST_FIELDS)
    for r in manifest.records:
        w.writerow([r.id, r.path, r.rater_a, r.rater_b, _fmt_severity(r.severity), r.split, r.volume])
    return buf.getvalue()


def write_manifest(manifest: Manifest, path) -> Path:
    path = Path(path)
    path.write_text(manifest_to_csv(manifest), encoding="utf-8", newline="")
    return path


def read_manifest(path) -> Manifest:
    path = Path(path)
    with path.open(encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != MANIFEST_FIELDS:
            raise ValueError(f"{path}: manifest header must be {','.join(MANIFEST_FIELDS)}, got {header}")
        records = []
        for line, row in enumerate(reader, start=2):
            if len(row) != len(MANIFEST_FIELDS):
                raise ValueError(f"{path}:{line}: expected {len(MANIFEST_FIELDS)} fields, got {len(row)}")
            rid, rpath, a, b, sev, split, volume = row
            try:
                records.append(ManifestRecord(
                    rid, rpath, int(a), int(b), float(sev) if sev else None, split or "unassigned", volume,
                ))
            except ValueError as exc:
                raise ValueError(f"{path}:{line}: {exc}") from None
    return Manifest(records, path.parent)


# ---------------------------------------------------------------------------
# splitting and labels
# ---------------------------------------------------------------------------


def split_counts(n: int, ratios) -> tuple[int, int, int]:
    """floor(n * ratio) for eval and test; train takes the remainder."""
    # the epsilon absorbs representation error such as 10 * 0.7 = 7.000000000000001
    n_eval = math.floor(n * ratios[1] + 1e-9)
    n_test = math.floor(n * ratios[2] + 1e-9)
    return n - n_eval - n_test, n_eval, n_test


def split_dataset(manifest: Manifest, config: SplitConfig = SplitConfig()) -> Manifest:
    """Assign train/eval/test deterministically from ``config.seed``.

    In per-volume mode whole volumes are dealt out (eval first, then test,
    rest to train) so no volume straddles two splits; records without a
    volume id are their own volume.
    """
    n = len(manifest)
    if n == 0:
        raise ValueError("cannot split an empty manifest")
    n_train, n_eval, n_test = split_counts(n, config.ratios)
    rng = np.random.default_rng(config.seed)
    assignment: dict[str, str] = {}
    if config.grouping == "per-image":
        order = rng.permutation(n)
        for pos, idx in enumerate(order):
            split = "train" if pos < n_train else "eval" if pos < n_train + n_eval else "test"
            assignment[manifest.records[idx].id] = split
    else:
        groups: dict[str, list[str]] = {}
        for r in manifest.records:
            groups.setdefault(r.volume or f"\0{r.id}", []).append(r.id)
        keys = list(groups)
        counts = {"eval": 0, "test": 0}
        for gi in rng.permutation(len(keys)):
            ids = groups[keys[gi]]
            if counts["eval"] < n_eval:
                split = "eval"
            elif counts["test"] < n_test:
                split = "test"
            else:
                split = "train"
            if split != "train":
                counts[split] += len(ids)
            for rid in ids:
                assignment[rid] = split
    records = [replace(r, split=assignment[r.id]) for r in manifest.records]
    return Manifest(records, manifest.root)


def binarize_labels(labels, ids=None) -> list[int]:
    """Merge diagnostic (1) and excellent (2) into one diagnostic class."""
    out = []
    for i, y in enumerate(labels):
        if y not in (0, 1, 2):
            who = ids[i] if ids is not None else f"index {i}"
            raise ValueError(f"label {y!r} of {who} is not 0, 1 or 2")
        out.append(0 if y == 0 else 1)
    return out


def normalize_image(raw) -> np.ndarray:
    return np.asarray(raw, dtype=np.float32) / np.float32(255.0)


def aggregate_raters(rater_a, rater_b, policy: str = "mean-round") -> list[int]:
    """Fuse two raters; ``mean-round`` rounds (a + b) / 2 with ties going up."""
    rater_a, rater_b = list(rater_a), list(rater_b)
    if len(rater_a) != len(rater_b):
        raise ValueError(f"rater lists differ in length: {len(rater_a)} vs {len(rater_b)}")
    if policy == "rater_a":
        return rater_a
    if policy == "rater_b":
        return rater_b
    if policy == "mean-round":
        # (a + b + 1) // 2 == floor((a + b) / 2 + 1/2) for non-negative integers
        return [(a + b + 1) // 2 for a, b in zip(rater_a, rater_b)]
    raise ValueError(f"unknown label policy {policy!r}; expected one of {POLICIES}")


def task_labels(records, task: str, policy: str = "rater_a") -> np.ndarray:
    labels = aggregate_raters([r.rater_a for r in records], [r.rater_b for r in records], policy)
    if task == "binary":
        labels = binarize_labels(labels, [r.id for r in records])
    elif task != "three":
        raise ValueError(f"task must be 'binary' or 'three', got {task!r}")
    return np.asarray(labels, dtype=np.int64)


def num_classes(task: str) -> int:
    return {"binary": 2, "three": 3}[task]


def class_distribution(records, task: str = "three", policy: str = "rater_a") -> list[int]:
    records = list(records)
    k = num_classes(task)
    if not records:
        return [0] * k
    labels = task_labels(records, task, policy)
    return np.bincount(labels, minlength=k).tolist()


def binary_counts(three_class_counts) -> tuple[int, int]:
    c0, c1, c2 = three_class_counts
    return c0, c1 + c2


# ---------------------------------------------------------------------------
# synthetic corpus
# ---------------------------------------------------------------------------


def largest_remainder(n: int, weights) -> list[int]:
    """Integer apportionment of ``n`` proportional to ``weights`` (Hamilton's method)."""
    w = np.asarray(weights, dtype=np.float64)
    if (w < 0).any() or w.sum() <= 0:
        raise ValueError(f"weights must be non-negative with a positive sum, got {weights}")
    quotas = n * w / w.sum()
    counts = np.floor(quotas).astype(int)
    short = n - counts.sum()
    # ties in the remainder go to the lower class index
    order = sorted(range(len(w)), key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in order[:short]:
        counts[i] += 1
    return counts.tolist()


@dataclass(frozen=True)
class CorpusConfig:
    n: int = 1000
    proportions: tuple[float, ...] = REFERENCE_PROPORTIONS
    thresholds: tuple[float, float] = kspace.DEFAULT_THRESHOLDS
    rater_noise: float = 0.15
    seed: int = 0
    size: int = 64
    # class-0 severities are drawn up to this multiple of the upper threshold
    max_severity_factor: float = 3.0
    # severities keep this relative distance from each threshold
    margin: float = 0.1
    # movements happen while the centre of k-space is acquired
    event_band: tuple[float, float] = (0.45, 0.55)
    boundary_band: float = 0.25


def _class_interval(cls, thresholds, factor, margin):
    t1, t2 = thresholds
    return {
        2: (0.0, t1 * (1 - margin)),
        1: (t1 * (1 + margin), t2 * (1 - margin)),
        0: (t2 * (1 + margin), factor * t2),
    }[cls]


def _second_rater(label, severity, thresholds, band, flip):
    """Move the label one class across the nearest threshold when the image is near it."""
    if not flip:
        return label
    for t, upper, lower in ((thresholds[0], 2, 1), (thresholds[1], 1, 0)):
        if abs(severity - t) <= band * t:
            return lower if label == upper else upper
    return label


def synthesize_corpus(out_dir, config: CorpusConfig = CorpusConfig()) -> Manifest:
    """Render ``config.n`` motion-corrupted phantoms to PGM and write ``manifest.csv``.

    Class counts follow ``config.proportions`` exactly (largest remainder).
    Each image gets a severity drawn uniformly inside its class interval,
    which keeps ``margin`` relative distance from the thresholds, and a
    random motion trace rescaled to that severity; rater A reports the class
    implied by the severity, rater B occasionally disagrees near thresholds.
    """
    if config.n < 10:
        raise ValueError(f"corpus needs n >= 10, got {config.n}")
    props = np.asarray(config.proportions, dtype=np.float64)
    if len(props) != 3:
        raise ValueError(f"need three class proportions, got {config.proportions}")
    if props.sum() > 1 + 1e-9 or props.sum() < 1 - 1e-9:
        props = props / props.sum()
    if not 0 <= config.margin < 1 or config.thresholds[1] * (1 + config.margin) >= config.max_severity_factor * config.thresholds[1]:
        raise ValueError(f"margin {config.margin} leaves an empty severity interval")
    if not 0 <= config.rater_noise <= 1:
        raise ValueError(f"rater_noise must be in [0, 1], got {config.rater_noise}")

    out_dir = Path(out_dir)
    img_dir = out_dir / "images"
    try:
        img_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create corpus directory {img_dir}: {exc}") from exc

    counts = largest_remainder(config.n, props)
    rng = seeding.stream(config.seed, "corpus")
    classes = np.repeat(np.arange(3), counts)
    rng.shuffle(classes)
    u_sev = rng.random(config.n)
    flips = rng.random(config.n) < config.rater_noise

    width = len(str(config.n - 1))
    records = []
    for i, cls in enumerate(classes):
        lo, hi = _class_interval(int(cls), config.thresholds, config.max_severity_factor, config.margin)
        # open at the bottom, closed at the top, inset so rounding cannot cross a threshold
        margin = 1e-6 * (hi - lo)
        target = hi - margin - u_sev[i] * (hi - lo - 2 * margin)
        phantom = kspace.generate_phantom(kspace.PhantomSpec(config.size, seed=int(rng.integers(2**63))))
        trace = kspace.random_trace(int(rng.integers(2**63)), config.size, target, config.event_band).scaled_to(target)
        image = kspace.simulate_motion(phantom, trace)
        severity = trace.severity
        label = kspace.severity_to_class(severity, config.thresholds)
        assert label == cls, (severity, cls)
        rid = f"img_{i:0{width}d}"
        rel = f"images/{rid}.pgm"
        pgm.write_pgm(out_dir / rel, image)
        rb = _second_rater(label, severity, config.thresholds, config.boundary_band, flips[i])
        records.append(ManifestRecord(rid, rel, label, rb, severity))
        if (i + 1) % 200 == 0:
            log.info("synthesized %d/%d images", i + 1, config.n)

    manifest = Manifest(records, out_dir)
    write_manifest(manifest, out_dir / "manifest.csv")
    return manifest


def load_images(manifest: Manifest, records) -> np.ndarray:
    """Read and normalize the images of ``records`` into an (N, 1, H, W) float32 batch."""
    images = []
    for r in records:
        path = manifest.image_path(r)
        try:
            raw = pgm.read_pgm(path)
        except (OSError, pgm.PGMError) as exc:
            raise OSError(f"cannot read image for record {r.id!r} at {path}: {exc}") from exc
        images.append(normalize_image(raw))
    if not images:
        return np.zeros((0, 1, 0, 0), dtype=np.float32)
    shapes = {im.shape for im in images}
    if len(shapes) > 1:
        raise ValueError(f"images have mixed sizes: {sorted(shapes)}")
    return np.stack(images)[:, None]
