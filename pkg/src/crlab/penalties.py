"""Pair-consistency penalties and the combined training objective.

Each penalty scores how differently a model treats the two members of a
semantic-sharing pair, at one of three depths: output probabilities (kl, js,
tpm), logits (lm, tlm, groupvar_lm), or feature activations (fm, lam,
groupvar_fm).  The labeled kinds (tpm, tlm, lam) read only the target class;
the unlabeled kinds compare whole vectors.

Values are in nats.  A 1e-12 floor is applied inside logarithms of raw
probability vectors; the training path computes divergences from logits in
log space, which needs no floor.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import xlogy

from .network import (
    ModelParams,
    ParamGradients,
    add_gradients,
    backward,
    forward,
    log_softmax,
)
from .validation import PROB_FLOOR

VALID_KINDS = ("kl", "js", "lm", "fm", "tpm", "tlm", "lam", "groupvar_lm", "groupvar_fm")

_LABELED_KINDS = frozenset({"tpm", "tlm", "lam"})


def _as_pair(a, b, name: str) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"{name}: shape mismatch {a.shape} vs {b.shape}")
    return a, b


def _scalarize(value: np.ndarray):
    return float(value) if value.ndim == 0 else value


def kl_divergence(p, p_aug):
    """KL(p || p_aug), original first; zero iff the vectors match (up to floor)."""
    p, q = _as_pair(p, p_aug, "kl_divergence")
    ratio = np.maximum(p, PROB_FLOOR) / np.maximum(q, PROB_FLOOR)
    return _scalarize(xlogy(p, ratio).sum(axis=-1))


def js_divergence(p, p_aug):
    """Jensen-Shannon divergence; symmetric and bounded by ln 2."""
    p, q = _as_pair(p, p_aug, "js_divergence")
    m = np.maximum(0.5 * (p + q), PROB_FLOOR)
    left = xlogy(p, np.maximum(p, PROB_FLOOR) / m).sum(axis=-1)
    right = xlogy(q, np.maximum(q, PROB_FLOOR) / m).sum(axis=-1)
    return _scalarize(0.5 * (left + right))


def logit_matching(z, z_aug):
    """Sum of squared logit differences over all classes."""
    z, za = _as_pair(z, z_aug, "logit_matching")
    return _scalarize(((z - za) ** 2).sum(axis=-1))


def feature_matching(f, f_aug):
    """Sum of squared feature differences over all feature units."""
    f, fa = _as_pair(f, f_aug, "feature_matching")
    return _scalarize(((f - fa) ** 2).sum(axis=-1))


def _check_class(y: int, width: int) -> int:
    y = int(y)
    if not 0 <= y < width:
        raise ValueError(f"class index {y} out of range [0, {width})")
    return y


def target_probability_matching(p, p_aug, y: int):
    """Squared difference of the target class's probabilities only."""
    p, q = _as_pair(p, p_aug, "target_probability_matching")
    y = _check_class(y, p.shape[-1])
    return _scalarize((p[..., y] - q[..., y]) ** 2)


def target_logit_matching(z, z_aug, y: int):
    """Squared difference of the target class's logits only."""
    z, za = _as_pair(z, z_aug, "target_logit_matching")
    y = _check_class(y, z.shape[-1])
    return _scalarize((z[..., y] - za[..., y]) ** 2)


def logit_attribution_matching(f, f_aug, head_column):
    """Squared differences of per-unit contributions to the target logit.

    Equals ``sum_u (f_u - f_aug_u)^2 * w_u^2`` where ``w`` is the head column
    of the target class, and is bounded below by target_logit_matching / m.
    """
    f, fa = _as_pair(f, f_aug, "logit_attribution_matching")
    w = np.asarray(head_column, dtype=np.float64)
    if w.shape[-1] != f.shape[-1]:
        raise ValueError(f"head_column length {w.shape[-1]} != feature width {f.shape[-1]}")
    return _scalarize((((f - fa) * w) ** 2).sum(axis=-1))


def group_variance(group):
    """Per-coordinate squared deviations from the group mean, summed over
    members and coordinates.

    For a group of exactly two this equals half the pairwise sum of squared
    differences, so it generalizes logit/feature matching to larger groups.
    """
    g = np.asarray(group, dtype=np.float64)
    if g.ndim != 2:
        raise ValueError(f"group must be a list of equal-length vectors, got shape {g.shape}")
    if g.shape[0] < 2:
        raise ValueError(f"group needs at least 2 members, got {g.shape[0]}")
    return float(((g - g.mean(axis=0)) ** 2).sum())


@dataclass(frozen=True)
class PairPenalty:
    """One penalty term of the training objective: kind, weight, reduction.

    The reduction over a batch of pairs is always the arithmetic mean, and
    ``lam`` multiplies that mean.  With ``detach_augmented`` the augmented
    side is treated as a constant (no gradient flows through it); by default
    both sides receive gradient.
    """

    kind: str
    lam: float
    detach_augmented: bool = False

    def __post_init__(self):
        if self.kind not in VALID_KINDS:
            raise ValueError(f"unknown penalty kind {self.kind!r}; valid: {', '.join(VALID_KINDS)}")
        if self.lam < 0:
            raise ValueError(f"lam must be >= 0, got {self.lam!r}")

    @property
    def needs_labels(self) -> bool:
        return self.kind in _LABELED_KINDS


class ObjectiveValue(NamedTuple):
    loss: float
    cross_entropy: float
    penalty: float  # mean pair penalty before multiplying by lam
    gradients: ParamGradients


def _pair_signals(kind: str, trace_a, trace_b, y_pair, head: np.ndarray):
    """Per-pair penalty values plus upstream gradients for both sides.

    Returns (values[k], upstream_a, upstream_b, d_head) where upstreams are
    dicts with optional 'logits' / 'features' arrays and d_head is the direct
    head-matrix gradient (lam only).
    """
    k = np.atleast_2d(trace_a.logits).shape[0]
    idx = np.arange(k)

    if kind == "kl":
        log_a, log_b = log_softmax(trace_a.logits), log_softmax(trace_b.logits)
        pa, pb = trace_a.probabilities, trace_b.probabilities
        diff = log_a - log_b
        values = (pa * diff).sum(axis=-1)
        return values, {"logits": pa * (diff - values[:, None])}, {"logits": pb - pa}, None

    if kind == "js":
        log_a, log_b = log_softmax(trace_a.logits), log_softmax(trace_b.logits)
        pa, pb = trace_a.probabilities, trace_b.probabilities
        log_m = np.logaddexp(log_a, log_b) - np.log(2.0)
        da, db = log_a - log_m, log_b - log_m
        kl_a = (pa * da).sum(axis=-1)
        kl_b = (pb * db).sum(axis=-1)
        values = 0.5 * (kl_a + kl_b)
        up_a = 0.5 * pa * (da - kl_a[:, None])
        up_b = 0.5 * pb * (db - kl_b[:, None])
        return values, {"logits": up_a}, {"logits": up_b}, None

    if kind == "lm":
        d = trace_a.logits - trace_b.logits
        return (d**2).sum(axis=-1), {"logits": 2.0 * d}, {"logits": -2.0 * d}, None

    if kind == "fm":
        d = trace_a.features - trace_b.features
        return (d**2).sum(axis=-1), {"features": 2.0 * d}, {"features": -2.0 * d}, None

    if kind == "groupvar_lm":
        d = trace_a.logits - trace_b.logits
        return 0.5 * (d**2).sum(axis=-1), {"logits": d}, {"logits": -d}, None

    if kind == "groupvar_fm":
        d = trace_a.features - trace_b.features
        return 0.5 * (d**2).sum(axis=-1), {"features": d}, {"features": -d}, None

    if kind == "tpm":
        pa, pb = trace_a.probabilities, trace_b.probabilities
        pay, pby = pa[idx, y_pair], pb[idx, y_pair]
        delta = pay - pby
        # closed-form softmax pullback of the gradient 2*delta on entry y
        onehot = np.zeros_like(pa)
        onehot[idx, y_pair] = 1.0
        up_a = (2.0 * delta * pay)[:, None] * (onehot - pa)
        up_b = (-2.0 * delta * pby)[:, None] * (onehot - pb)
        return delta**2, {"logits": up_a}, {"logits": up_b}, None

    if kind == "tlm":
        za, zb = trace_a.logits, trace_b.logits
        delta = za[idx, y_pair] - zb[idx, y_pair]
        up_a = np.zeros_like(za)
        up_a[idx, y_pair] = 2.0 * delta
        up_b = np.zeros_like(zb)
        up_b[idx, y_pair] = -2.0 * delta
        return delta**2, {"logits": up_a}, {"logits": up_b}, None

    if kind == "lam":
        fa, fb = trace_a.features, trace_b.features
        w = head[:, y_pair].T  # [k, m]
        d = fa - fb
        values = ((d * w) ** 2).sum(axis=-1)
        up_a = 2.0 * d * w**2
        # direct head gradient: d/dw_uy sum_u d_u^2 w_uy^2 = 2 w_uy d_u^2
        per_class = np.zeros((head.shape[1], head.shape[0]))
        np.add.at(per_class, y_pair, 2.0 * w * d**2)
        return values, {"features": up_a}, {"features": -up_a}, per_class.T

    raise ValueError(f"unknown penalty kind {kind!r}")


def _scaled(upstream: dict, scale: float) -> dict:
    return {key: scale * value for key, value in upstream.items()}


def combined_objective(
    params: ModelParams,
    labeled_batch: tuple[np.ndarray, np.ndarray],
    pair_batch: tuple[np.ndarray, np.ndarray, np.ndarray] | None,
    term: PairPenalty | None,
) -> ObjectiveValue:
    """Mean cross-entropy plus ``lam`` times the mean pair penalty.

    Gradients flow through both members of every pair (unless the term
    detaches the augmented side) and, for the ``lam`` kind, directly into the
    head matrix as well.  When ``term`` is None or its weight is zero the
    result is exactly the cross-entropy objective and the pair batch is not
    touched.
    """
    x, y = labeled_batch
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("labeled batch must be a non-empty [n, obs_dim] array")
    if y.shape != (x.shape[0],):
        raise ValueError(f"labels shape {y.shape} does not match batch size {x.shape[0]}")

    n = x.shape[0]
    trace = forward(params, x)
    probs = trace.probabilities
    ce = float(-np.log(np.maximum(probs[np.arange(n), y], PROB_FLOOR)).mean())
    d_logits = probs.copy()
    d_logits[np.arange(n), y] -= 1.0
    grads = backward(params, trace, d_logits=d_logits / n)

    active = term is not None and term.lam > 0.0
    if not active:
        return ObjectiveValue(ce, ce, 0.0, grads)

    if pair_batch is None:
        raise ValueError("a pair batch is required when the penalty weight is positive")
    x_orig, x_aug, y_pair = pair_batch
    x_orig = np.asarray(x_orig, dtype=np.float64)
    x_aug = np.asarray(x_aug, dtype=np.float64)
    if x_orig.ndim != 2 or x_orig.shape[0] == 0:
        raise ValueError("pair batch must be non-empty when the penalty weight is positive")
    if x_orig.shape != x_aug.shape:
        raise ValueError(f"pair sides differ in shape: {x_orig.shape} vs {x_aug.shape}")
    k = x_orig.shape[0]
    if term.needs_labels:
        y_pair = np.asarray(y_pair)
        if y_pair.shape != (k,):
            raise ValueError(f"pair labels shape {y_pair.shape} does not match pair count {k}")

    trace_a = forward(params, x_orig)
    trace_b = forward(params, x_aug)
    values, up_a, up_b, d_head = _pair_signals(term.kind, trace_a, trace_b, y_pair, params.head)
    penalty = float(values.mean())
    scale = term.lam / k

    up_a = _scaled(up_a, scale)
    grads = add_gradients(
        grads,
        backward(params, trace_a, d_logits=up_a.get("logits"), d_features=up_a.get("features")),
    )
    if not term.detach_augmented:
        up_b = _scaled(up_b, scale)
        grads = add_gradients(
            grads,
            backward(params, trace_b, d_logits=up_b.get("logits"), d_features=up_b.get("features")),
        )
    if d_head is not None:
        grads = ParamGradients(layers=grads.layers, head=grads.head + scale * d_head)

    return ObjectiveValue(ce + term.lam * penalty, ce, penalty, grads)


__all__ = [
    "ObjectiveValue",
    "PairPenalty",
    "VALID_KINDS",
    "combined_objective",
    "feature_matching",
    "group_variance",
    "js_divergence",
    "kl_divergence",
    "logit_attribution_matching",
    "logit_matching",
    "target_logit_matching",
    "target_probability_matching",
]
