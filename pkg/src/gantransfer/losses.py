"""Loss and penalty terms for anchored transfer training.

Values are accumulated in float64 regardless of parameter dtype, and penalty
sums run in sorted parameter-name order, so a given input always produces the
same bits.
"""

from __future__ import annotations

import numpy as np

from .params import ROLE_FEATURE, ROLE_HEAD, ParameterSet

EPS_PRED = 1e-7


def binary_cross_entropy(predictions, labels) -> float:
    """Mean negative log-likelihood of binary labels under probabilities.

    Predictions are clamped to [EPS_PRED, 1 - EPS_PRED] before the logs so
    saturated outputs stay finite.
    """
    p = np.asarray(predictions, dtype=np.float64).ravel()
    y = np.asarray(labels, dtype=np.float64).ravel()
    if p.size == 0:
        raise ValueError("empty prediction vector")
    if p.size != y.size:
        raise ValueError(f"length mismatch: {p.size} predictions, {y.size} labels")
    p = np.clip(p, EPS_PRED, 1.0 - EPS_PRED)
    return float(np.mean(-y * np.log(p) - (1.0 - y) * np.log1p(-p)))


def _sum_squares(params: ParameterSet, names) -> float:
    total = 0.0
    for name in names:
        v = params[name].astype(np.float64, copy=False).ravel()
        total += float(v @ v)
    return total


def l2_norm_squared(params: ParameterSet, role_filter: str = "all") -> float:
    """Sum of squared entries over tensors with the given role.

    ``role_filter`` is one of ``feature``, ``head``, ``all``.
    """
    if role_filter not in (ROLE_FEATURE, ROLE_HEAD, "all"):
        raise ValueError(f"unknown role filter {role_filter!r}")
    names = params.sorted_names(role_filter)
    if not names:
        raise ValueError(f"no parameters with role {role_filter!r}")
    return _sum_squares(params, names)


def sp_penalty(current: ParameterSet, anchor: ParameterSet) -> float:
    """Squared deviation of feature weights from the anchor.

    Head parameters are excluded: the penalty ties the representation, not
    the classifier, to its starting point.
    """
    current.require_aligned(anchor)
    total = 0.0
    for name in current.sorted_names(ROLE_FEATURE):
        d = current[name].astype(np.float64, copy=False) - anchor[name].astype(
            np.float64, copy=False
        )
        d = d.ravel()
        total += float(d @ d)
    return total


def pretrain_loss(predictions, labels, params: ParameterSet, lambda_pretrain: float) -> float:
    """Cross-entropy plus plain weight decay over every parameter."""
    if lambda_pretrain < 0:
        raise ValueError("lambda_pretrain must be nonnegative")
    j = binary_cross_entropy(predictions, labels)
    return j + lambda_pretrain * l2_norm_squared(params, "all")


def transfer_loss(
    predictions,
    labels,
    current: ParameterSet,
    anchor: ParameterSet,
    gamma: float,
) -> float:
    """Cross-entropy plus the gamma-gated anchor and head-decay terms.

    One gate scales both penalties: features are pulled toward the anchor,
    head weights toward zero.
    """
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    j = binary_cross_entropy(predictions, labels)
    return (
        j
        + gamma * sp_penalty(current, anchor)
        + gamma * l2_norm_squared(current, ROLE_HEAD)
    )


def legacy_transfer_loss(
    predictions,
    labels,
    current: ParameterSet,
    anchor: ParameterSet,
    alpha: float,
    beta: float,
) -> float:
    """Fixed-coefficient variant of ``transfer_loss`` used as a baseline."""
    if alpha < 0 or beta < 0:
        raise ValueError("alpha and beta must be nonnegative")
    j = binary_cross_entropy(predictions, labels)
    return (
        j
        + alpha * sp_penalty(current, anchor)
        + beta * l2_norm_squared(current, ROLE_HEAD)
    )
