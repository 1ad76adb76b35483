"""Central finite-difference validation of every analytic gradient.

Each suite builds a random adapter/head/batch, evaluates a loss through the
full chain (raw input -> adapter -> normalization -> loss) and compares the
analytic parameter gradient against central differences. The finite
differences are the independent oracle: they never call the analytic
backward path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .offline import AdapterState, margin_ce_loss, plain_ce_loss, supcon_loss
from .online import TtaConfig, tta_loss


@dataclass
class CheckResult:
    name: str
    max_rel_err: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= self.tol


def central_difference(loss_fn, params: list[np.ndarray], step: float = 1e-5) -> np.ndarray:
    """Gradient of loss_fn() w.r.t. the concatenation of params.

    params are live arrays read by loss_fn; entries are perturbed in place
    and restored. Central differences with the given step.
    """
    chunks = []
    for arr in params:
        flat = arr.reshape(-1)
        g = np.empty(flat.size)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + step
            f_plus = loss_fn()
            flat[j] = orig - step
            f_minus = loss_fn()
            flat[j] = orig
            g[j] = (f_plus - f_minus) / (2 * step)
        chunks.append(g)
    return np.concatenate(chunks)


def rel_error(analytic: np.ndarray, fd: np.ndarray) -> float:
    denom = max(float(np.linalg.norm(analytic)), float(np.linalg.norm(fd)), 1e-12)
    return float(np.linalg.norm(analytic - fd)) / denom


def _random_state(rng: np.random.Generator, d_in=8, d=8, k=5, batch=6):
    adapter = AdapterState.init(d_in, k, seed=int(rng.integers(2**31)))
    # move the adapter off the identity so the chain rule is exercised
    adapter.adapter_matrix += 0.1 * rng.normal(size=adapter.adapter_matrix.shape)
    adapter.head_weights = rng.normal(size=(k, d))
    adapter.head_bias = rng.normal(size=k)
    raw = rng.normal(size=(batch * 2, d_in))
    labels = np.repeat(rng.integers(0, k, size=batch), 2)
    return adapter, raw, labels


def _check_offline(name, rng, step, tol) -> CheckResult:
    adapter, raw, labels = _random_state(rng)

    def forward():
        z, norms = adapter.embed_full(raw)
        if name == "supcon":
            loss, g = supcon_loss(z, labels, tau_con=0.5)
            return loss, g, None, None
        if name == "plain_ce":
            loss, g, gw, gb = plain_ce_loss(z, labels, adapter)
            return loss, g, gw, gb
        loss, g, gw = margin_ce_loss(z, labels, adapter, s=10.0, m=0.2)
        return loss, g, gw, None

    def loss_only():
        return forward()[0]

    _, g_z, g_w, g_b = forward()
    z, norms = adapter.embed_full(raw)
    g_a, _ = adapter.backprop(raw, z, norms, g_z)
    params = [adapter.adapter_matrix]
    analytic = [g_a]
    if g_w is not None:
        params.append(adapter.head_weights)
        analytic.append(g_w)
    if g_b is not None:
        params.append(adapter.head_bias)
        analytic.append(g_b)
    fd = central_difference(loss_only, params, step)
    return CheckResult(name, rel_error(np.concatenate([a.ravel() for a in analytic]), fd), tol)


def _check_tta(term, rng, step, tol) -> CheckResult:
    adapter, raw, _ = _random_state(rng)
    n = raw.shape[0]
    protos = rng.normal(size=(4, adapter.dim))
    protos /= np.linalg.norm(protos, axis=1, keepdims=True)
    # deterministic spread of samples over prototype slots, two left unassigned
    assignments = {0: [0, 1, 2], 1: [3, 4], 2: [5, 6, 7], 3: list(range(8, n - 2))}
    base = TtaConfig(temperature=0.3, beta1=0.0, beta2=0.0, gamma=1e-3)
    cfg = {
        "tta_ent": base,
        "tta_align": TtaConfig(temperature=0.3, beta1=1.0, beta2=0.0, gamma=1e-3),
        "tta_sep": TtaConfig(temperature=0.3, beta1=0.0, beta2=1.0, gamma=1e-3),
    }[term]
    component = {"tta_ent": "ent", "tta_align": "align", "tta_sep": "sep"}[term]

    def loss_component():
        z, _ = adapter.embed_full(raw)
        return tta_loss(z, protos, assignments, cfg)[1][component]

    def grad_component():
        # per-term analytic gradient by linearity: subtract the pure-entropy part
        z, norms = adapter.embed_full(raw)
        _, _, g_full = tta_loss(z, protos, assignments, cfg)
        if component == "ent":
            return adapter.backprop(raw, z, norms, g_full)[0]
        _, _, g_ent = tta_loss(z, protos, assignments, base)
        return adapter.backprop(raw, z, norms, g_full - g_ent)[0]

    analytic = grad_component()
    fd = central_difference(loss_component, [adapter.adapter_matrix], step)
    return CheckResult(term, rel_error(analytic.ravel(), fd), tol)


SUITES = ("supcon", "plain_ce", "margin_ce", "tta_ent", "tta_align", "tta_sep")


def run_all(n_states: int = 20, tol: float = 1e-4, step: float = 1e-5,
            seed: int = 0) -> list[CheckResult]:
    """Run every suite at n_states random parameter points; returns the worst
    result per suite."""
    results = []
    for suite_index, name in enumerate(SUITES):
        rng = np.random.default_rng(seed * len(SUITES) + suite_index)
        worst = 0.0
        for _ in range(n_states):
            if name.startswith("tta"):
                r = _check_tta(name, rng, step, tol)
            else:
                r = _check_offline(name, rng, step, tol)
            worst = max(worst, r.max_rel_err)
        results.append(CheckResult(name, worst, tol))
    return results
