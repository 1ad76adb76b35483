"""Prototype memory: labeled initialization, nearest queries, novelty
creation, and confidence-controlled exponential-moving-average refinement.

Prototypes live on the unit hypersphere and are renormalized after every
update. Known prototypes are the normalized class means of the labeled
support features; novel prototypes are created online from the single
feature that triggered them. Prototypes are never deleted or merged:
spurious ones are absorbed by top-k cluster retention at evaluation time.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .core import EngineError, ZeroNorm, normalize

KNOWN = "known"
NOVEL = "novel"


class EmptyMemory(EngineError):
    pass


class EmptyAssignment(EngineError):
    pass


class MissingClass(EngineError):
    pass


@dataclass
class Prototype:
    id: int
    origin: str  # KNOWN or NOVEL
    origin_index: int  # class index for known, creation sequence for novel
    vector: np.ndarray  # unit norm


@dataclass
class AssignmentSet:
    """Features assigned to one prototype during the current period."""

    prototype_id: int
    features: list = field(default_factory=list)


@dataclass
class UpdateParams:
    """Per-origin EMA constants: base rate eta, smoothing constant kappa."""

    eta_known: float = 0.06
    kappa_known: float = 32.0
    eta_novel: float = 0.3
    kappa_novel: float = 8.0

    def __post_init__(self):
        for name in ("eta_known", "eta_novel"):
            v = getattr(self, name)
            if not 0 < v <= 1:
                raise ValueError(f"{name} must be in (0, 1], got {v}")
        for name in ("kappa_known", "kappa_novel"):
            v = getattr(self, name)
            if v <= 0:
                raise ValueError(f"{name} must be > 0, got {v}")

    def for_origin(self, origin: str) -> tuple[float, float]:
        if origin == KNOWN:
            return self.eta_known, self.kappa_known
        return self.eta_novel, self.kappa_novel


class PrototypeMemory:
    """Ordered collection of unit-norm prototypes with unique ids.

    Ids double as cluster labels in prediction logs: known prototypes take
    their class index, novel ones continue from the next free integer in
    creation order.
    """

    def __init__(self, dim: int):
        self.dim = dim
        self.prototypes: list[Prototype] = []
        self.next_novel_seq = 0
        self._next_id = 0

    def __len__(self) -> int:
        return len(self.prototypes)

    @property
    def ids(self) -> list[int]:
        return [p.id for p in self.prototypes]

    def matrix(self) -> np.ndarray:
        """Stacked prototype vectors in insertion order, shape (n, dim)."""
        if not self.prototypes:
            return np.zeros((0, self.dim))
        return np.stack([p.vector for p in self.prototypes])

    def get(self, prototype_id: int) -> Prototype:
        for p in self.prototypes:
            if p.id == prototype_id:
                return p
        raise KeyError(f"no prototype with id {prototype_id}")

    def ndc(self) -> int:
        """Number of newly discovered categories (novel-origin prototypes)."""
        return sum(1 for p in self.prototypes if p.origin == NOVEL)

    def add_known(self, class_index: int, vector: np.ndarray) -> int:
        if any(p.origin == KNOWN and p.origin_index == class_index for p in self.prototypes):
            raise ValueError(f"known prototype for class {class_index} already present")
        pid = self._next_id
        self.prototypes.append(Prototype(pid, KNOWN, class_index, normalize(vector)))
        self._next_id += 1
        return pid

    def add_novel(self, z: np.ndarray) -> int:
        """Create a prototype initialized at z; returns its id (the on-the-fly label)."""
        pid = self._next_id
        self.prototypes.append(Prototype(pid, NOVEL, self.next_novel_seq, np.array(z, dtype=np.float64)))
        self._next_id += 1
        self.next_novel_seq += 1
        return pid


def init_from_labeled(features: np.ndarray, labels: np.ndarray, n_classes: int | None = None) -> PrototypeMemory:
    """Build the initial memory: one prototype per class, the normalized class mean."""
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    if n_classes is None:
        n_classes = int(labels.max()) + 1
    mem = PrototypeMemory(features.shape[1])
    for c in range(n_classes):
        idx = np.flatnonzero(labels == c)
        if idx.size == 0:
            raise MissingClass(f"no labeled samples for class {c}")
        mem.add_known(c, normalize(features[idx].mean(axis=0)))
    return mem


def nearest(z: np.ndarray, memory: PrototypeMemory) -> tuple[int, float]:
    """Maximizing prototype id and its (clamped) cosine; ties to the earliest insertion."""
    if len(memory) == 0:
        raise EmptyMemory("nearest() on empty prototype memory")
    scores = memory.matrix() @ np.asarray(z, dtype=np.float64)
    j = int(np.argmax(scores))
    return memory.prototypes[j].id, float(np.clip(scores[j], -1.0, 1.0))


def confidence(features, mu: np.ndarray) -> float:
    """Mean cosine of assigned features to their prototype, clamped to [0, 1].

    Raw cosines can be negative; the clamp keeps the adaptive step size
    nonnegative.
    """
    feats = np.asarray(features, dtype=np.float64)
    if feats.ndim == 1:
        feats = feats[None, :]
    if feats.shape[0] == 0:
        raise EmptyAssignment("confidence over an empty assignment set")
    return float(np.clip((feats @ mu).mean(), 0.0, 1.0))


def step_size(conf: float, n: int, eta: float, kappa: float) -> float:
    """Adaptive EMA step: eta * conf * n / (n + kappa), zero when unsupported."""
    return eta * conf * n / (n + kappa)


def update_prototypes(memory: PrototypeMemory, assignments, params: UpdateParams):
    """Refine every prototype that received assignments this period.

    ``assignments`` maps prototype id to the list of unit features assigned
    to it (or is an iterable of AssignmentSet). For each nonempty set:
    mu <- normalize((1 - alpha) * mu + alpha * zbar) with zbar the normalized
    mean of the set and alpha from step_size under the prototype's origin
    constants. Prototypes with empty sets are untouched. Degenerate updates
    (vanishing blend) are skipped and reported rather than raised.

    Returns (updated_count, skipped) where skipped is a list of
    (prototype_id, reason) pairs.
    """
    if not isinstance(assignments, dict):
        assignments = {a.prototype_id: a.features for a in assignments}
    by_id = {p.id: p for p in memory.prototypes}
    unknown = [pid for pid in assignments if pid not in by_id]
    if unknown:
        raise KeyError(f"assignment set references missing prototype id {unknown[0]}")
    updated = 0
    skipped: list[tuple[int, str]] = []
    for pid, feats in assignments.items():
        n = len(feats)
        if n == 0:
            continue
        proto = by_id[pid]
        try:
            zbar = normalize(np.mean(np.asarray(feats, dtype=np.float64), axis=0))
        except ZeroNorm:
            skipped.append((pid, "assignment mean has zero norm"))
            continue
        conf = confidence(feats, proto.vector)
        eta, kappa = params.for_origin(proto.origin)
        alpha = step_size(conf, n, eta, kappa)
        blended = (1.0 - alpha) * proto.vector + alpha * zbar
        try:
            proto.vector = normalize(blended)
        except ZeroNorm:
            skipped.append((pid, "EMA blend has zero norm"))
            continue
        updated += 1
    return updated, skipped


# ---------------------------------------------------------------------------
# Snapshot file ("OCDM"): header then per-prototype records, little-endian,
# vectors stored in float32. Layout documented in docs/formats.md.
# ---------------------------------------------------------------------------

_SNAPSHOT_MAGIC = b"OCDM"
_SNAPSHOT_VERSION = 1


def write_memory_snapshot(path, memory: PrototypeMemory) -> None:
    with open(path, "wb") as f:
        f.write(_SNAPSHOT_MAGIC)
        f.write(struct.pack("<III", _SNAPSHOT_VERSION, memory.dim, len(memory)))
        f.write(struct.pack("<I", memory.next_novel_seq))
        for p in memory.prototypes:
            f.write(struct.pack("<qBi", p.id, 0 if p.origin == KNOWN else 1, p.origin_index))
            f.write(np.asarray(p.vector, dtype="<f4").tobytes())


def read_memory_snapshot(path) -> PrototypeMemory:
    from .data import CorruptHeader, TruncatedPayload, VersionUnsupported

    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 20 or raw[:4] != _SNAPSHOT_MAGIC:
        raise CorruptHeader(f"{path}: not a memory snapshot")
    version, dim, count = struct.unpack("<III", raw[4:16])
    if version != _SNAPSHOT_VERSION:
        raise VersionUnsupported(f"{path}: snapshot version {version}")
    (next_seq,) = struct.unpack("<I", raw[16:20])
    mem = PrototypeMemory(dim)
    offset = 20
    rec = 13 + 4 * dim
    if len(raw) != offset + count * rec:
        raise TruncatedPayload(f"{path}: expected {offset + count * rec} bytes, got {len(raw)}")
    for _ in range(count):
        pid, origin_tag, origin_index = struct.unpack("<qBi", raw[offset : offset + 13])
        vec = np.frombuffer(raw, dtype="<f4", count=dim, offset=offset + 13).astype(np.float64)
        origin = KNOWN if origin_tag == 0 else NOVEL
        mem.prototypes.append(Prototype(int(pid), origin, int(origin_index), vec))
        mem._next_id = max(mem._next_id, int(pid) + 1)
        offset += rec
    mem.next_novel_seq = int(next_seq)
    return mem
