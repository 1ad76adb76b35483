"""Streaming engine: per-instance decisions with instant feedback, per-batch
prototype refinement, and stabilized test-time encoder adaptation.

Each batch runs in a fixed order: embed, sequential decide (novelties grow
the memory immediately and are final for the instance that created them),
EMA refinement of assigned prototypes, then an entropy/alignment/separation
gradient step on the adapter using the refreshed prototypes. The engine is
a single sequential state machine per stream; clones may run in parallel.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .memory import (
    EmptyMemory,
    PrototypeMemory,
    UpdateParams,
    update_prototypes,
)
from .offline import AdapterState

log = logging.getLogger(__name__)

# Entropy on tiny batches is noise-dominated: partial batches below this
# size still refine prototypes but skip the encoder step.
MIN_ENCODER_BATCH = 8


@dataclass
class DecisionConfig:
    tau_sim: float = 0.7  # cosine threshold separating known from novel

    def __post_init__(self):
        if not 0 < self.tau_sim < 1:
            raise ValueError(f"tau_sim must be in (0, 1), got {self.tau_sim}")


@dataclass
class TtaConfig:
    temperature: float = 0.1  # softmax sharpness over prototype similarities
    beta1: float = 1.0  # alignment weight
    beta2: float = 1.0  # separation weight
    gamma: float = 1e-4  # encoder step size; 0 disables the step
    steps_per_batch: int = 1

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError(f"temperature must be > 0, got {self.temperature}")
        if self.gamma < 0 or self.beta1 < 0 or self.beta2 < 0:
            raise ValueError("gamma, beta1, beta2 must be >= 0")
        if self.steps_per_batch < 1:
            raise ValueError("steps_per_batch must be >= 1")


@dataclass
class Prediction:
    sample_id: int
    assigned_id: int
    s_max: float
    is_novel_creation: bool


@dataclass
class BatchOutcome:
    predictions: list[Prediction]
    loss_ent: float = 0.0
    loss_align: float = 0.0
    loss_sep: float = 0.0
    loss_total: float = 0.0
    prototypes_updated: int = 0
    novel_created: int = 0


def decide(z: np.ndarray, memory: PrototypeMemory, cfg: DecisionConfig,
           assignments: dict | None = None, sample_id: int = -1) -> Prediction:
    """Single-instance decision rule with immediate side effects.

    Assigns to the nearest prototype when its cosine clears the threshold,
    appending the feature to that prototype's assignment set; otherwise
    creates a novel prototype initialized at the feature. A creating sample
    joins no assignment set this period: its influence begins next period.
    """
    from .memory import nearest

    if len(memory) == 0:
        raise EmptyMemory("decide() on empty prototype memory")
    pid, s_max = nearest(z, memory)
    if s_max >= cfg.tau_sim:
        if assignments is not None:
            assignments.setdefault(pid, []).append(np.asarray(z, dtype=np.float64))
        return Prediction(sample_id, pid, s_max, False)
    new_id = memory.add_novel(z)
    return Prediction(sample_id, new_id, s_max, True)


def tta_loss(features: np.ndarray, protos: np.ndarray, assignments: dict[int, list[int]],
             cfg: TtaConfig):
    """Adaptation objective and its gradient with respect to the features.

    features: (n, d) unit rows for the whole batch. protos: (P, d) fixed
    prototype matrix (gradients do not flow into it). assignments maps a
    prototype row index to the batch indices assigned to it; only those
    classes enter the alignment and separation terms (class means are
    undefined otherwise). Separation sums ordered pairs, so two orthogonal
    class means contribute 2.

    Returns (loss_total, components, grad_features) with components a dict
    holding 'ent', 'align', 'sep'.
    """
    z = np.asarray(features, dtype=np.float64)
    n = z.shape[0]
    if n == 0 or protos.shape[0] == 0:
        raise ValueError("tta_loss needs a nonempty batch and memory")

    # mean predictive entropy over softmax(prototype similarities / T)
    s = (z @ protos.T) / cfg.temperature
    shifted = s - s.max(axis=1, keepdims=True)
    logq = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    q = np.exp(logq)
    ent_rows = -np.sum(np.where(q > 0, q * logq, 0.0), axis=1)
    loss_ent = float(ent_rows.mean())
    # dH/ds_c = (1/T) q_c (-log q_c - H)
    dent_ds = np.where(q > 0, q * (-logq - ent_rows[:, None]), 0.0) / cfg.temperature
    grad = (dent_ds @ protos) / n

    occupied = sorted(k for k, idx in assignments.items() if len(idx) > 0)
    loss_align = 0.0
    loss_sep = 0.0
    if occupied:
        means = np.stack([z[assignments[k]].mean(axis=0) for k in occupied])
        norms = np.linalg.norm(means, axis=1)
        zbar = means / norms[:, None]
        mu = protos[occupied]

        a = np.sum(zbar * mu, axis=1)
        loss_align = float(-a.mean())
        # d(-mean zbar.mu)/d mean_l, chained through the normalization
        dzbar_align = -(mu - a[:, None] * zbar) / (len(occupied) * norms[:, None])

        m = len(occupied)
        gram = zbar @ zbar.T
        loss_sep = float(m * (m - 1) - (gram.sum() - np.trace(gram)))
        dsep_dzbar = -2.0 * (zbar.sum(axis=0)[None, :] - zbar)
        dzbar_sep = (dsep_dzbar - np.sum(dsep_dzbar * zbar, axis=1, keepdims=True) * zbar) / norms[:, None]

        for row, k in enumerate(occupied):
            idx = assignments[k]
            contrib = (cfg.beta1 * dzbar_align[row] + cfg.beta2 * dzbar_sep[row]) / len(idx)
            grad[idx] += contrib

    total = loss_ent + cfg.beta1 * loss_align + cfg.beta2 * loss_sep
    return total, {"ent": loss_ent, "align": loss_align, "sep": loss_sep}, grad


def adapt_encoder(adapter: AdapterState, raw: np.ndarray, protos: np.ndarray,
                  assignments: dict[int, list[int]], cfg: TtaConfig) -> bool:
    """Gradient-descent steps on the adapter under the adaptation objective.

    Features are re-embedded through the adapter inside every step so the
    chain rule reaches the encoder parameters; the prototype matrix stays
    fixed. The head is untouched at test time. A non-finite gradient
    rejects the step, leaves the adapter unchanged and logs a warning.
    Returns True when at least one step was applied.
    """
    if cfg.gamma == 0.0:
        return False
    stepped = False
    for _ in range(cfg.steps_per_batch):
        z, norms = adapter.embed_full(raw)
        _, _, grad_z = tta_loss(z, protos, assignments, cfg)
        grad_a, grad_bias = adapter.backprop(raw, z, norms, grad_z)
        if not np.all(np.isfinite(grad_a)) or (
            grad_bias is not None and not np.all(np.isfinite(grad_bias))
        ):
            log.warning("non-finite adaptation gradient: step rejected")
            break
        adapter.adapter_matrix -= cfg.gamma * grad_a
        if grad_bias is not None:
            adapter.adapter_bias -= cfg.gamma * grad_bias
        stepped = True
    return stepped


@dataclass
class StreamResult:
    predictions: list[Prediction]
    batch_outcomes: list[BatchOutcome]
    diagnostics: list[dict]
    memory: PrototypeMemory
    adapter: AdapterState


class StreamEngine:
    """Sequential Alg.-style processor over an embedding stream.

    Owns the adapter, the prototype memory and the per-batch assignment
    sets. ``enable_tta_p`` gates prototype refinement, ``enable_tta_m``
    gates the encoder update; with both off the engine degrades to static
    nearest-prototype inference.
    """

    def __init__(self, adapter: AdapterState, memory: PrototypeMemory,
                 decision: DecisionConfig, tta: TtaConfig,
                 update_params: UpdateParams | None = None,
                 enable_tta_p: bool = True, enable_tta_m: bool = True):
        self.adapter = adapter
        self.memory = memory
        self.decision = decision
        self.tta = tta
        self.update_params = update_params or UpdateParams()
        self.enable_tta_p = enable_tta_p
        self.enable_tta_m = enable_tta_m
        log.info("stream engine: tau_sim=%g, TTA temperature T=%g, gamma=%g, "
                 "tta_p=%s, tta_m=%s", decision.tau_sim, tta.temperature,
                 tta.gamma, enable_tta_p, enable_tta_m)

    def process_batch(self, ids, raw) -> BatchOutcome:
        """One full pass of the per-batch body: decide, refine, adapt."""
        ids = np.asarray(ids)
        raw = np.atleast_2d(np.asarray(raw, dtype=np.float64))
        if ids.size == 0:
            return BatchOutcome(predictions=[])
        if len(self.memory) == 0:
            raise EmptyMemory("stream engine requires an initialized memory")

        z, _ = self.adapter.embed_full(raw)
        n = z.shape[0]

        n_protos = len(self.memory)
        buf = np.empty((n_protos + n, z.shape[1]))
        buf[:n_protos] = self.memory.matrix()
        assigned_slot, s_max, created, _ = _kernels.decide_batch(
            z, buf, n_protos, self.decision.tau_sim)

        predictions: list[Prediction] = []
        slot_members: dict[int, list[int]] = {}
        for i in range(n):
            if created[i]:
                pid = self.memory.add_novel(z[i])
            else:
                slot = int(assigned_slot[i])
                pid = self.memory.prototypes[slot].id
                slot_members.setdefault(slot, []).append(i)
            predictions.append(Prediction(int(ids[i]), pid, float(s_max[i]), bool(created[i])))

        updated = 0
        if self.enable_tta_p and slot_members:
            by_pid = {self.memory.prototypes[slot].id: [z[i] for i in idx]
                      for slot, idx in slot_members.items()}
            updated, skipped = update_prototypes(self.memory, by_pid, self.update_params)
            for pid, reason in skipped:
                log.warning("prototype %d update skipped: %s", pid, reason)

        protos_now = self.memory.matrix()
        total, comps, _ = tta_loss(z, protos_now, slot_members, self.tta)
        if self.enable_tta_m:
            if n >= MIN_ENCODER_BATCH:
                adapt_encoder(self.adapter, raw, protos_now, slot_members, self.tta)
            else:
                log.info("batch of %d < %d samples: encoder step skipped", n, MIN_ENCODER_BATCH)

        return BatchOutcome(
            predictions=predictions,
            loss_ent=comps["ent"],
            loss_align=comps["align"],
            loss_sep=comps["sep"],
            loss_total=total,
            prototypes_updated=updated,
            novel_created=int(created.sum()),
        )

    def run_stream(self, ids, raw, batch_size: int = 64) -> StreamResult:
        """Process the whole stream in order, batch by batch.

        The final partial batch is processed normally (the encoder step is
        skipped below MIN_ENCODER_BATCH samples). The prediction log
        preserves stream order.
        """
        ids = np.asarray(ids)
        raw = np.atleast_2d(np.asarray(raw, dtype=np.float64))
        if batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        predictions: list[Prediction] = []
        outcomes: list[BatchOutcome] = []
        diagnostics: list[dict] = []
        for b, start in enumerate(range(0, ids.size, batch_size)):
            outcome = self.process_batch(ids[start : start + batch_size],
                                         raw[start : start + batch_size])
            outcomes.append(outcome)
            predictions.extend(outcome.predictions)
            diagnostics.append({
                "batch_index": b,
                "loss_ent": outcome.loss_ent,
                "loss_align": outcome.loss_align,
                "loss_sep": outcome.loss_sep,
                "loss_total": outcome.loss_total,
                "prototypes_updated": outcome.prototypes_updated,
                "novel_created": outcome.novel_created,
                "ndc_so_far": self.memory.ndc(),
                "memory_size": len(self.memory),
            })
        return StreamResult(predictions, outcomes, diagnostics, self.memory, self.adapter)
