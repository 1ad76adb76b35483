"""Offline representation learning on labeled embeddings.

A linear adapter (near-identity at init) over fixed input embeddings stands
in for a fine-tuned backbone block; adapted features are l2-normalized and
fed to a supervised contrastive loss plus a (margin-calibrated)
cross-entropy head. All gradients are analytic and double precision so they
can be validated against central finite differences.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .core import ARCCOS_CLAMP, EngineError, ZeroNorm, normalize_rows

log = logging.getLogger(__name__)


class InvalidClass(EngineError):
    pass


class InsufficientClassSamples(EngineError):
    pass


class EmptyPositiveSet(EngineError):
    pass


@dataclass
class AdapterState:
    """Trainable linear encoder plus linear projection head.

    ``adapter_matrix`` maps raw inputs to the working embedding space;
    adapted vectors are l2-normalized before any loss sees them.
    ``head_weights`` rows are the per-class weight vectors; ``head_bias``
    participates only in the plain (unnormalized-logit) cross entropy.
    """

    adapter_matrix: np.ndarray  # (d, d_in)
    adapter_bias: np.ndarray | None
    head_weights: np.ndarray  # (n_classes, d)
    head_bias: np.ndarray  # (n_classes,)

    @classmethod
    def init(cls, d_in: int, n_classes: int, seed: int, d: int | None = None,
             init_noise: float = 1e-3, use_bias: bool = False) -> "AdapterState":
        """Near-identity adapter (identity + Gaussian noise) and a small random head."""
        d = d_in if d is None else d
        rng = np.random.default_rng(seed)
        A = np.eye(d, d_in) + init_noise * rng.normal(size=(d, d_in))
        W = rng.normal(size=(n_classes, d)) / np.sqrt(d)
        b = np.zeros(n_classes)
        bias = np.zeros(d) if use_bias else None
        return cls(A, bias, W, b)

    @property
    def dim(self) -> int:
        return self.adapter_matrix.shape[0]

    @property
    def n_classes(self) -> int:
        return self.head_weights.shape[0]

    def copy(self) -> "AdapterState":
        return AdapterState(
            self.adapter_matrix.copy(),
            None if self.adapter_bias is None else self.adapter_bias.copy(),
            self.head_weights.copy(),
            self.head_bias.copy(),
        )

    def embed_full(self, raw: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Adapt and normalize raw rows; also return pre-normalization norms."""
        raw = np.atleast_2d(np.asarray(raw, dtype=np.float64))
        u = raw @ self.adapter_matrix.T
        if self.adapter_bias is not None:
            u = u + self.adapter_bias
        norms = np.linalg.norm(u, axis=1)
        if np.any(norms <= 1e-12):
            raise ZeroNorm("adapted feature has zero norm")
        return u / norms[:, None], norms

    def embed(self, raw: np.ndarray) -> np.ndarray:
        return self.embed_full(raw)[0]

    def backprop(self, raw: np.ndarray, z: np.ndarray, norms: np.ndarray,
                 grad_z: np.ndarray) -> tuple[np.ndarray, np.ndarray | None]:
        """Chain per-feature gradients through normalization into adapter parameters.

        With u = A x + a and z = u/|u|: dL/du = (g - (g.z) z)/|u|, then
        dL/dA = sum_i outer(dL/du_i, x_i), dL/da = sum_i dL/du_i.
        """
        raw = np.atleast_2d(np.asarray(raw, dtype=np.float64))
        gu = (grad_z - (np.sum(grad_z * z, axis=1, keepdims=True)) * z) / norms[:, None]
        grad_A = gu.T @ raw
        grad_bias = gu.sum(axis=0) if self.adapter_bias is not None else None
        return grad_A, grad_bias


@dataclass
class OfflineConfig:
    lam: float = 1.0  # cross-entropy mix weight
    tau_con: float = 0.07  # contrastive temperature
    scale: float = 30.0  # logit scale s
    margin: float = 0.2  # additive angular margin, radians
    learning_rate: float = 0.05
    epochs: int = 30
    batch_size: int = 128
    margin_enabled: bool = True
    seed: int = 0
    view_noise_sigma: float = 0.05  # second-view synthesis noise

    def __post_init__(self):
        if not 0 <= self.margin < np.pi / 2:
            raise ValueError(f"margin must be in [0, pi/2), got {self.margin}")
        if self.scale <= 0:
            raise ValueError(f"scale must be > 0, got {self.scale}")
        if self.lam < 0:
            raise ValueError(f"lam must be >= 0, got {self.lam}")
        if self.tau_con <= 0:
            raise ValueError(f"tau_con must be > 0, got {self.tau_con}")
        if self.learning_rate <= 0 or self.epochs < 1 or self.batch_size < 1:
            raise ValueError("learning_rate, epochs and batch_size must be positive")


@dataclass
class LabeledBatch:
    """Two adapted, unit-norm views per sample and the shared labels."""

    views: np.ndarray  # (B, 2, d)
    labels: np.ndarray  # (B,)

    def flat(self) -> tuple[np.ndarray, np.ndarray]:
        """Flatten to (2B, d) anchors with per-view labels; views of one
        sample stay adjacent."""
        b, v, d = self.views.shape
        return self.views.reshape(b * v, d), np.repeat(self.labels, v)


def supcon_loss(views: np.ndarray, labels: np.ndarray, tau_con: float):
    """Supervised contrastive loss over a multiview batch, plus per-view gradients.

    Every row is an anchor. The positive set of anchor i is all other rows
    with the same label (which always includes the sample's second view);
    the denominator runs over all rows n != i. Loss is the mean over
    anchors. Gradients are with respect to the view coordinates as free
    variables.
    """
    z = np.asarray(views, dtype=np.float64)
    y = np.asarray(labels)
    n = z.shape[0]
    if n < 2:
        raise ValueError("contrastive batch needs at least two views")
    if tau_con <= 0:
        raise ValueError("tau_con must be > 0")

    sims = (z @ z.T) / tau_con
    off = ~np.eye(n, dtype=bool)
    pos = (y[:, None] == y[None, :]) & off
    n_pos = pos.sum(axis=1)
    if np.any(n_pos == 0):
        raise EmptyPositiveSet("an anchor has no same-label partner in the batch")

    # log-sum-exp over n != i, shifted per row for stability
    shifted = sims - sims.max(axis=1, where=off, initial=-np.inf, keepdims=True)
    exp = np.where(off, np.exp(shifted), 0.0)
    lse = np.log(exp.sum(axis=1)) + sims.max(axis=1, where=off, initial=-np.inf)
    loss = float(np.mean((n_pos * lse - np.where(pos, sims, 0.0).sum(axis=1)) / n_pos))

    # d loss / d z: anchor term (w - p) Z plus symmetric contrast term
    w = exp / exp.sum(axis=1, keepdims=True)
    p = pos / n_pos[:, None]
    m = w - p
    grads = (m + m.T) @ z / (n * tau_con)
    return loss, grads


def _margin_target(cos_y: np.ndarray, s: float, m: float):
    """Margin-adjusted target logit s*cos(theta + m) via the angle-addition
    identity, and its derivative w.r.t. cos(theta).

    Forward uses the raw (only range-clipped) cosine so that m = 0 reduces
    to the plain scaled logit exactly; the derivative clamps the cosine away
    from +-1 to keep 1/sin(theta) finite.
    """
    c = np.clip(cos_y, -1.0, 1.0)
    sin_y = np.sqrt(np.maximum(0.0, 1.0 - c * c))
    target = s * (c * np.cos(m) - sin_y * np.sin(m))
    c_safe = np.clip(c, -1.0 + ARCCOS_CLAMP, 1.0 - ARCCOS_CLAMP)
    dtarget_dcos = s * (np.cos(m) + c_safe * np.sin(m) / np.sqrt(1.0 - c_safe * c_safe))
    return target, dtarget_dcos


def margin_logits(z: np.ndarray, head: AdapterState, y: int, s: float, m: float) -> np.ndarray:
    """Angular logits with an additive margin on the target class.

    l_c = s*cos(theta_c) for c != y and s*cos(theta_y + m) for c = y, with
    cos(theta_c) the cosine between the unit feature and the l2-normalized
    class weight. The head bias is excluded: these logits are pure angles.
    """
    k = head.head_weights.shape[0]
    if not 0 <= y < k:
        raise InvalidClass(f"class {y} not in [0, {k})")
    wn = normalize_rows(head.head_weights)
    cos = np.clip(wn @ np.asarray(z, dtype=np.float64), -1.0, 1.0)
    logits = s * cos
    logits[y] = _margin_target(cos[y], s, m)[0]
    return logits


def margin_ce_loss(views: np.ndarray, labels: np.ndarray, head: AdapterState,
                   s: float, m: float):
    """Cross entropy over margin-adjusted angular logits, batch-averaged.

    Returns (loss, grad_views, grad_head_weights). The gradient chains
    through the weight normalization; the head bias takes no part.
    """
    z = np.asarray(views, dtype=np.float64)
    y = np.asarray(labels, dtype=np.intp)
    n, k = z.shape[0], head.head_weights.shape[0]
    if np.any((y < 0) | (y >= k)):
        raise InvalidClass("label outside [0, n_classes)")
    w_norms = np.linalg.norm(head.head_weights, axis=1)
    if np.any(w_norms <= 1e-12):
        raise ZeroNorm("degenerate class weight in margin head")
    wn = head.head_weights / w_norms[:, None]

    cos = np.clip(z @ wn.T, -1.0, 1.0)  # (n, k)
    rows = np.arange(n)
    cos_y = cos[rows, y]
    target, dtarget = _margin_target(cos_y, s, m)
    logits = s * cos
    logits[rows, y] = target

    shifted = logits - logits.max(axis=1, keepdims=True)
    q = np.exp(shifted)
    q /= q.sum(axis=1, keepdims=True)
    loss = float(np.mean(-shifted[rows, y] + np.log(np.exp(shifted).sum(axis=1))))

    dlogits = q.copy()
    dlogits[rows, y] -= 1.0
    dlogits /= n
    dcos = dlogits * s
    dcos[rows, y] = dlogits[rows, y] * dtarget

    grad_z = dcos @ wn
    # rows of W: d cos_ic / d w_c = (z_i - cos_ic wn_c) / |w_c|
    grad_w = (dcos.T @ z - (dcos * cos).sum(axis=0)[:, None] * wn) / w_norms[:, None]
    return loss, grad_z, grad_w


def plain_ce_loss(views: np.ndarray, labels: np.ndarray, head: AdapterState):
    """Softmax cross entropy over the unnormalized linear head W z + b."""
    z = np.asarray(views, dtype=np.float64)
    y = np.asarray(labels, dtype=np.intp)
    n, k = z.shape[0], head.head_weights.shape[0]
    if np.any((y < 0) | (y >= k)):
        raise InvalidClass("label outside [0, n_classes)")
    logits = z @ head.head_weights.T + head.head_bias
    shifted = logits - logits.max(axis=1, keepdims=True)
    q = np.exp(shifted)
    q /= q.sum(axis=1, keepdims=True)
    rows = np.arange(n)
    loss = float(np.mean(-shifted[rows, y] + np.log(np.exp(shifted).sum(axis=1))))
    dlogits = q.copy()
    dlogits[rows, y] -= 1.0
    dlogits /= n
    grad_z = dlogits @ head.head_weights
    grad_w = dlogits.T @ z
    grad_b = dlogits.sum(axis=0)
    return loss, grad_z, grad_w, grad_b


@dataclass
class EpochStats:
    epoch: int
    loss_sup: float
    loss_ce: float
    loss_total: float


def synthesize_second_views(raw: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """Second augmented view: raw plus isotropic Gaussian noise, renormalized."""
    noisy = raw + sigma * rng.normal(size=raw.shape)
    return normalize_rows(noisy)


def train_offline(features: np.ndarray, labels: np.ndarray, config: OfflineConfig,
                  second_views: np.ndarray | None = None,
                  adapter: AdapterState | None = None) -> tuple[AdapterState, list[EpochStats]]:
    """Mini-batch gradient descent on L_sup + lam * L_ce over labeled embeddings.

    When the dataset carries a single view per sample, second views are
    resampled each epoch from the configured Gaussian. The cross-entropy
    component is the margin calibration when ``margin_enabled``, otherwise
    the plain linear-head cross entropy. Deterministic given (data, config).
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.intp)
    if features.shape[0] == 0:
        raise ValueError("empty training set")
    n_classes = int(labels.max()) + 1
    counts = np.bincount(labels, minlength=n_classes)
    if np.any(counts < 2):
        short = int(np.argmin(counts))
        raise InsufficientClassSamples(
            f"class {short} has {counts[short]} sample(s); need >= 2 for contrastive positives")

    rng = np.random.default_rng(config.seed)
    if adapter is None:
        adapter = AdapterState.init(features.shape[1], n_classes, seed=config.seed)
    else:
        adapter = adapter.copy()

    n = features.shape[0]
    history: list[EpochStats] = []
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        if second_views is None:
            views2 = synthesize_second_views(features, config.view_noise_sigma, rng)
        else:
            views2 = second_views
        sup_sum = ce_sum = 0.0
        n_batches = 0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            raw_pair = np.stack([features[idx], views2[idx]], axis=1)  # (b, 2, d_in)
            b = idx.size
            raw_flat = raw_pair.reshape(b * 2, -1)
            y_flat = np.repeat(labels[idx], 2)

            z, norms = adapter.embed_full(raw_flat)
            loss_sup, g_sup = supcon_loss(z, y_flat, config.tau_con)
            if config.margin_enabled:
                loss_ce, g_ce, g_w = margin_ce_loss(z, y_flat, adapter, config.scale, config.margin)
                g_b = None
            else:
                loss_ce, g_ce, g_w, g_b = plain_ce_loss(z, y_flat, adapter)

            grad_z = g_sup + config.lam * g_ce
            grad_A, grad_bias = adapter.backprop(raw_flat, z, norms, grad_z)
            adapter.adapter_matrix -= config.learning_rate * grad_A
            if grad_bias is not None:
                adapter.adapter_bias -= config.learning_rate * grad_bias
            adapter.head_weights -= config.learning_rate * config.lam * g_w
            if g_b is not None:
                adapter.head_bias -= config.learning_rate * config.lam * g_b

            sup_sum += loss_sup
            ce_sum += loss_ce
            n_batches += 1
        stats = EpochStats(epoch, sup_sum / n_batches, ce_sum / n_batches,
                           (sup_sum + config.lam * ce_sum) / n_batches)
        history.append(stats)
        log.debug("epoch %d: sup=%.6f ce=%.6f total=%.6f", epoch, stats.loss_sup,
                  stats.loss_ce, stats.loss_total)
    return adapter, history


def head_accuracy(adapter: AdapterState, features: np.ndarray, labels: np.ndarray) -> float:
    """Fraction of samples whose plain-head argmax matches the label."""
    z = adapter.embed(features)
    pred = np.argmax(z @ adapter.head_weights.T + adapter.head_bias, axis=1)
    return float(np.mean(pred == np.asarray(labels)))


@dataclass
class AngleStats:
    intra: np.ndarray  # per-sample angle to its class prototype, radians
    inter: np.ndarray  # per unordered prototype pair (l < m), radians

    @property
    def mean_intra_deg(self) -> float:
        return float(np.degrees(self.intra.mean()))

    @property
    def mean_inter_deg(self) -> float:
        return float(np.degrees(self.inter.mean()))


def angle_stats(features: np.ndarray, labels: np.ndarray, adapter: AdapterState) -> AngleStats:
    """Intra-class sample-to-prototype and inter-prototype angle distributions.

    Prototypes are the normalized class means of the adapted features, the
    same construction the online memory starts from.
    """
    from .memory import init_from_labeled

    z = adapter.embed(features)
    labels = np.asarray(labels, dtype=np.intp)
    memory = init_from_labeled(z, labels)
    protos = memory.matrix()
    intra = np.arccos(np.clip(np.sum(z * protos[labels], axis=1), -1.0, 1.0))
    k = protos.shape[0]
    iu = np.triu_indices(k, 1)
    inter = np.arccos(np.clip((protos @ protos.T)[iu], -1.0, 1.0))
    return AngleStats(intra, inter)


# ---------------------------------------------------------------------------
# Adapter file ("OCDA"): versioned header, dimensions, then row-major
# matrices in little-endian float32. Layout documented in docs/formats.md.
# ---------------------------------------------------------------------------

_ADAPTER_MAGIC = b"OCDA"
_ADAPTER_VERSION = 1


def write_adapter(path, adapter: AdapterState) -> None:
    import struct

    d, d_in = adapter.adapter_matrix.shape
    k = adapter.head_weights.shape[0]
    with open(path, "wb") as f:
        f.write(_ADAPTER_MAGIC)
        f.write(struct.pack("<IIIIB3x", _ADAPTER_VERSION, d, d_in, k,
                            int(adapter.adapter_bias is not None)))
        f.write(adapter.adapter_matrix.astype("<f4").tobytes())
        if adapter.adapter_bias is not None:
            f.write(adapter.adapter_bias.astype("<f4").tobytes())
        f.write(adapter.head_weights.astype("<f4").tobytes())
        f.write(adapter.head_bias.astype("<f4").tobytes())


def read_adapter(path) -> AdapterState:
    import struct

    from .data import CorruptHeader, TruncatedPayload, VersionUnsupported

    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 24 or raw[:4] != _ADAPTER_MAGIC:
        raise CorruptHeader(f"{path}: not an adapter file")
    version, d, d_in, k, has_bias = struct.unpack("<IIIIB3x", raw[4:24])
    if version != _ADAPTER_VERSION:
        raise VersionUnsupported(f"{path}: adapter version {version}")
    expected = 24 + 4 * (d * d_in + (d if has_bias else 0) + k * d + k)
    if len(raw) != expected:
        raise TruncatedPayload(f"{path}: expected {expected} bytes, got {len(raw)}")
    offset = 24

    def take(count, shape):
        nonlocal offset
        arr = np.frombuffer(raw, dtype="<f4", count=count, offset=offset)
        offset += 4 * count
        return arr.astype(np.float64).reshape(shape)

    matrix = take(d * d_in, (d, d_in))
    bias = take(d, (d,)) if has_bias else None
    weights = take(k * d, (k, d))
    head_bias = take(k, (k,))
    return AdapterState(matrix, bias, weights, head_bias)
