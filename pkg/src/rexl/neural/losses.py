"""Loss functions shared by training and the public loss contract.

Probabilities are clamped into (1e-12, 1 - 1e-12) before any log so that
hard 0/1 inputs stay finite.  The joint loss always reports all three
components; for instances without a relation the rationale and relation
terms are exactly zero.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

CLAMP_EPS = 1e-12


def _clamp(p: np.ndarray | float) -> np.ndarray | float:
    return np.clip(p, CLAMP_EPS, 1.0 - CLAMP_EPS)


def binary_cross_entropy(prob, target) -> float:
    p = _clamp(np.asarray(prob, dtype=np.float64))
    t = np.asarray(target, dtype=np.float64)
    return float(np.mean(-(t * np.log(p) + (1.0 - t) * np.log(1.0 - p))))


def categorical_cross_entropy(probs: Sequence[float], index: int) -> float:
    p = _clamp(np.asarray(probs, dtype=np.float64))
    return float(-np.log(p[index]))


def joint_loss(
    gate_prob: float,
    has_relation: bool,
    rationale_probs: Optional[np.ndarray] = None,
    rationale_targets: Optional[np.ndarray] = None,
    relation_probs: Optional[np.ndarray] = None,
    relation_index: Optional[int] = None,
) -> tuple[float, dict[str, float]]:
    """Joint objective: gate + rationale + relation cross entropies.

    The rationale term averages per-token binary cross entropy over the
    provided targets (callers pass only loss-eligible tokens).  The
    relation and rationale terms apply only when ``has_relation``.
    """
    components = {
        "gate": binary_cross_entropy(gate_prob, 1.0 if has_relation else 0.0),
        "rationale": 0.0,
        "relation": 0.0,
    }
    if has_relation:
        if rationale_probs is not None and len(np.atleast_1d(rationale_probs)) > 0:
            if rationale_targets is None:
                raise ValueError("rationale_probs given without rationale_targets")
            components["rationale"] = binary_cross_entropy(rationale_probs, rationale_targets)
        if relation_probs is not None:
            if relation_index is None:
                raise ValueError("relation_probs given without relation_index")
            components["relation"] = categorical_cross_entropy(relation_probs, relation_index)
    total = components["gate"] + components["rationale"] + components["relation"]
    return total, components


# logit-space helpers used inside training steps


def sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def bce_with_logits(z: np.ndarray, t: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    return np.maximum(z, 0.0) - z * t + np.log1p(np.exp(-np.abs(z)))


def log_softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = logits - logits.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
