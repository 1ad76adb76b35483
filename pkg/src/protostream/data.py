"""Synthetic stream generation, embedding dataset file I/O, and stream
ordering.

Datasets are stored columnar: ids (n,), views (n, v, d) and optional labels
(n,). The binary "OCDE" format is little-endian with float32 payload; a
JSON-lines fallback is accepted on read for hand-authored fixtures. Byte
layouts are documented in docs/formats.md.
"""

from __future__ import annotations

import json
import struct
import warnings
from dataclasses import dataclass

import numpy as np

from .core import EngineError, normalize

MAGIC = b"OCDE"
VERSION = 1
REJECTION_RETRY_CAP = 10_000


class CorruptHeader(EngineError):
    pass


class TruncatedPayload(EngineError):
    pass


class VersionUnsupported(EngineError):
    pass


class AngleRejectionExhausted(EngineError):
    pass


@dataclass
class EmbeddingDataset:
    ids: np.ndarray  # (n,) int64
    views: np.ndarray  # (n, views_per_sample, d) float64 in memory
    labels: np.ndarray | None  # (n,) int32 or None

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64)
        self.views = np.asarray(self.views, dtype=np.float64)
        if self.views.ndim == 2:
            self.views = self.views[:, None, :]
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int32)
        if not np.all(np.isfinite(self.views)):
            raise ValueError("dataset contains non-finite values")

    def __len__(self) -> int:
        return self.ids.size

    @property
    def dim(self) -> int:
        return self.views.shape[2]

    @property
    def views_per_sample(self) -> int:
        return self.views.shape[1]

    @property
    def primary(self) -> np.ndarray:
        """First view of every sample, shape (n, d)."""
        return self.views[:, 0, :]

    def subset(self, index) -> "EmbeddingDataset":
        labels = None if self.labels is None else self.labels[index]
        return EmbeddingDataset(self.ids[index], self.views[index], labels)


@dataclass
class SynthConfig:
    d: int = 64
    n_known: int = 10
    n_novel: int = 5
    samples_per_class: int = 100
    noise_sigma: float = 0.15  # per-coordinate stddev before renormalization
    min_class_angle: float = 0.5  # radians, rejection threshold between directions
    labeled_fraction: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.n_known < 1 or self.n_novel < 0 or self.samples_per_class < 1:
            raise ValueError("class and sample counts must be positive")
        if self.min_class_angle <= 0:
            raise ValueError("min_class_angle must be > 0")
        if not 0 < self.labeled_fraction <= 1:
            raise ValueError("labeled_fraction must be in (0, 1]")
        if self.d < self.n_known + self.n_novel:
            warnings.warn(
                f"embedding dimension {self.d} below total class count "
                f"{self.n_known + self.n_novel}; directions may crowd",
                stacklevel=2)


def _sample_directions(cfg: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    """Uniform sphere directions with pairwise angle >= min_class_angle."""
    max_cos = np.cos(cfg.min_class_angle)
    dirs: list[np.ndarray] = []
    for c in range(cfg.n_known + cfg.n_novel):
        for _ in range(REJECTION_RETRY_CAP):
            v = normalize(rng.normal(size=cfg.d))
            if all(float(v @ u) <= max_cos for u in dirs):
                dirs.append(v)
                break
        else:
            raise AngleRejectionExhausted(
                f"no direction for class {c} after {REJECTION_RETRY_CAP} tries")
    return np.stack(dirs)


def generate_synthetic(cfg: SynthConfig) -> tuple[EmbeddingDataset, EmbeddingDataset]:
    """Labeled known-class set plus an unlabeled-at-heart stream.

    Samples are normalize(direction + noise_sigma * N(0, I)). The labeled
    set takes labeled_fraction of every known class; the remainder and all
    novel-class samples form the stream, whose labels are carried for
    evaluation only. Deterministic given the config.
    """
    rng = np.random.default_rng(cfg.seed)
    dirs = _sample_directions(cfg, rng)
    n_classes = cfg.n_known + cfg.n_novel
    total = n_classes * cfg.samples_per_class

    samples = np.empty((total, cfg.d))
    labels = np.empty(total, dtype=np.int32)
    for c in range(n_classes):
        block = slice(c * cfg.samples_per_class, (c + 1) * cfg.samples_per_class)
        noisy = dirs[c] + cfg.noise_sigma * rng.normal(size=(cfg.samples_per_class, cfg.d))
        samples[block] = noisy / np.linalg.norm(noisy, axis=1, keepdims=True)
        labels[block] = c

    ids = np.arange(total, dtype=np.int64)
    labeled_mask = np.zeros(total, dtype=bool)
    for c in range(cfg.n_known):
        idx = np.flatnonzero(labels == c)
        n_lab = int(round(cfg.labeled_fraction * idx.size))
        labeled_mask[idx[:n_lab]] = True

    labeled = EmbeddingDataset(ids[labeled_mask], samples[labeled_mask], labels[labeled_mask])
    stream = EmbeddingDataset(ids[~labeled_mask], samples[~labeled_mask], labels[~labeled_mask])
    return labeled, stream


def order_stream(stream: EmbeddingDataset, policy: str, seed: int | None = None,
                 known_classes=None) -> EmbeddingDataset:
    """Permute a stream: 'shuffled' (seeded), 'class_contiguous', or
    'novelty_front' (novel-class samples precede known-class ones)."""
    n = len(stream)
    if policy == "shuffled":
        if seed is None:
            raise ValueError("shuffled ordering needs a seed")
        perm = np.random.default_rng(seed).permutation(n)
    elif policy == "class_contiguous":
        if stream.labels is None:
            raise ValueError("class_contiguous ordering needs labels")
        perm = np.argsort(stream.labels, kind="stable")
    elif policy == "novelty_front":
        if stream.labels is None or known_classes is None:
            raise ValueError("novelty_front ordering needs labels and the known-class set")
        known = np.isin(stream.labels, list(known_classes))
        perm = np.concatenate([np.flatnonzero(~known), np.flatnonzero(known)])
    else:
        raise ValueError(f"unknown ordering policy {policy!r}")
    return stream.subset(perm)


# ---------------------------------------------------------------------------
# OCDE binary format
# ---------------------------------------------------------------------------

_HEADER = struct.Struct("<4sIIIIB3x")  # magic, version, d, n, views, has_labels, pad


def _record_dtype(d: int, views: int, has_labels: bool) -> np.dtype:
    fields = [("id", "<i8")]
    if has_labels:
        fields.append(("label", "<i4"))
    fields.append(("views", "<f4", (views, d)))
    return np.dtype(fields)


def write_dataset(path, dataset: EmbeddingDataset) -> None:
    """Serialize to OCDE v1; vectors are stored in float32."""
    has_labels = dataset.labels is not None
    rec = np.zeros(len(dataset), dtype=_record_dtype(dataset.dim, dataset.views_per_sample, has_labels))
    rec["id"] = dataset.ids
    if has_labels:
        rec["label"] = dataset.labels
    rec["views"] = dataset.views.astype("<f4")
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, VERSION, dataset.dim, len(dataset),
                             dataset.views_per_sample, int(has_labels)))
        f.write(rec.tobytes())


def read_dataset(path) -> EmbeddingDataset:
    """Read OCDE binary, falling back to JSON-lines for text fixtures."""
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != MAGIC:
        return _read_jsonl(path, raw)
    if len(raw) < _HEADER.size:
        raise CorruptHeader(f"{path}: header truncated")
    magic, version, d, n, views, has_labels = _HEADER.unpack_from(raw)
    if version != VERSION:
        raise VersionUnsupported(f"{path}: unsupported OCDE version {version}")
    if d == 0 or views == 0:
        raise CorruptHeader(f"{path}: zero dimension or view count")
    dtype = _record_dtype(d, views, bool(has_labels))
    expected = _HEADER.size + n * dtype.itemsize
    if len(raw) != expected:
        raise TruncatedPayload(f"{path}: expected {expected} bytes, got {len(raw)}")
    rec = np.frombuffer(raw, dtype=dtype, count=n, offset=_HEADER.size)
    labels = rec["label"].astype(np.int32) if has_labels else None
    return EmbeddingDataset(rec["id"].astype(np.int64),
                            rec["views"].astype(np.float64), labels)


def _read_jsonl(path, raw: bytes) -> EmbeddingDataset:
    try:
        lines = raw.decode("utf-8").strip().splitlines()
        records = [json.loads(line) for line in lines if line.strip()]
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptHeader(f"{path}: neither OCDE binary nor JSON lines ({exc})") from None
    if not records:
        raise CorruptHeader(f"{path}: empty dataset file")
    ids, views, labels = [], [], []
    has_labels = "label" in records[0]
    for i, r in enumerate(records):
        ids.append(int(r.get("id", i)))
        v = r["views"] if "views" in r else [r["vector"]]
        views.append(np.asarray(v, dtype=np.float64))
        if has_labels != ("label" in r):
            raise CorruptHeader(f"{path}: inconsistent label presence at record {i}")
        if has_labels:
            labels.append(int(r["label"]))
    shapes = {v.shape for v in views}
    if len(shapes) != 1:
        raise CorruptHeader(f"{path}: inconsistent view shapes {shapes}")
    return EmbeddingDataset(np.array(ids), np.stack(views),
                            np.array(labels) if has_labels else None)
