"""Composite training loss: softmax expression loss, knowledge-weighted AU
loss, their convex combination, and a central finite-difference verifier.

All log-sigmoid terms use the stable softplus form (never a naive log of a
sigmoid), so losses and gradients stay finite for any logit magnitude.
"""

from dataclasses import dataclass

import numpy as np

from .domain import ContractError, NUM_AUS, NUM_EXPRESSIONS, NumericFailure

AU_LOSS_REDUCTIONS = ("mean-elements", "mean-samples")


@dataclass
class LossBreakdown:
    """Scalar components of one combined-loss evaluation."""

    expression: float
    au: float
    lam: float
    total: float
    batch_size: int
    factor: float = 5.0


@dataclass
class GradReport:
    """Outcome of a finite-difference gradient check."""

    max_relative_error: float
    parameters_checked: int
    epsilon: float


def softmax(logits):
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def log_sigmoid(x):
    """log(sigmoid(x)) = -softplus(-x), computed without overflow."""
    return -np.logaddexp(0.0, -x)


def expression_loss(expr_logits, labels, factor=5.0):
    """Mean negative log(factor * p_target) with softmax probabilities.

    Returns (scalar loss, analytic gradient wrt logits). The factor shifts the
    loss by -log(factor) per sample and leaves the gradient untouched.
    """
    expr_logits = np.asarray(expr_logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if expr_logits.ndim != 2 or expr_logits.shape[1] != NUM_EXPRESSIONS:
        raise ContractError(f"expr_logits must be Nx{NUM_EXPRESSIONS}")
    n = expr_logits.shape[0]
    if n < 1:
        raise ContractError("empty batch")
    if labels.shape != (n,):
        raise ContractError("labels must be a length-N vector")
    if np.any(labels < 0) or np.any(labels >= NUM_EXPRESSIONS):
        raise ContractError("expression label out of range")
    if factor <= 0:
        raise ContractError("factor must be > 0")

    # log p_target via the log-sum-exp identity, no explicit division
    shifted = expr_logits - expr_logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    log_p = shifted[np.arange(n), labels] - log_z
    loss = -(np.log(factor) + log_p).mean()

    grad = softmax(expr_logits)
    grad[np.arange(n), labels] -= 1.0
    grad /= n
    return loss, grad


def au_loss(au_logits, au_labels, expr_labels, knowledge, pos_weights,
            reduction="mean-elements"):
    """Knowledge-weighted binary cross-entropy over the 18 AU logits.

    Element (i, j) contributes
        k[j, expr_i] * (pw[expr_i, j] * Y_ij * log s(x_ij)
                        + (1 - Y_ij) * log(1 - s(x_ij)))
    negated and averaged over all N*18 elements ('mean-elements', default) or
    over samples only ('mean-samples'). Returns (scalar, gradient wrt logits).
    """
    au_logits = np.asarray(au_logits, dtype=np.float64)
    au_labels = np.asarray(au_labels, dtype=np.float64)
    expr_labels = np.asarray(expr_labels, dtype=np.int64)
    if au_logits.ndim != 2 or au_logits.shape[1] != NUM_AUS:
        raise ContractError(f"au_logits must be Nx{NUM_AUS}")
    n = au_logits.shape[0]
    if au_labels.shape != (n, NUM_AUS):
        raise ContractError("au_labels shape mismatch")
    if expr_labels.shape != (n,):
        raise ContractError("expr_labels must be a length-N vector")
    if knowledge.stage != "loss-scaled":
        raise ContractError(
            f"au_loss expects a loss-scaled knowledge matrix, got {knowledge.stage!r}"
        )
    if reduction not in AU_LOSS_REDUCTIONS:
        raise ContractError(f"unknown reduction: {reduction!r}")

    pw_values = pos_weights.values if hasattr(pos_weights, "values") else pos_weights
    pw_values = np.asarray(pw_values, dtype=np.float64)
    if pw_values.shape != (NUM_EXPRESSIONS, NUM_AUS):
        raise ContractError(f"pos-weights must be {NUM_EXPRESSIONS}x{NUM_AUS}")

    k = knowledge.values.T[expr_labels]  # N x 18, per-sample expression column
    pw = pw_values[expr_labels]          # N x 18

    x = au_logits
    y = au_labels
    terms = pw * y * log_sigmoid(x) + (1.0 - y) * log_sigmoid(-x)
    denom = n * NUM_AUS if reduction == "mean-elements" else n
    loss = -(k * terms).sum() / denom

    s = 0.5 * (1.0 + np.tanh(0.5 * x))
    # d/dx log s(x) = 1 - s;  d/dx log(1 - s(x)) = -s
    grad = -k * (pw * y * (1.0 - s) - (1.0 - y) * s) / denom
    return loss, grad


def combined_loss(expression, au, lam):
    """(1 - lambda) * L_e + lambda * L_AU."""
    if not 0.0 <= lam <= 1.0:
        raise ContractError(f"lambda must be in [0, 1], got {lam}")
    return (1.0 - lam) * expression + lam * au


def finite_difference_check(evaluator, point, epsilon=1e-5):
    """Compare an evaluator's analytic gradient against central differences.

    evaluator(x) must return (loss, gradient) and be deterministic. Relative
    error per coordinate is |a - f| / max(1e-8, |a| + |f|).
    """
    point = np.asarray(point, dtype=np.float64)
    loss, grad = evaluator(point)
    if not np.isfinite(loss):
        raise NumericFailure(f"non-finite loss at probe point: {loss}")
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != point.shape:
        raise ContractError("gradient shape does not match the probe point")

    flat = point.ravel().copy()
    max_rel = 0.0
    for idx in range(flat.size):
        saved = flat[idx]
        flat[idx] = saved + epsilon
        plus, _ = evaluator(flat.reshape(point.shape))
        flat[idx] = saved - epsilon
        minus, _ = evaluator(flat.reshape(point.shape))
        flat[idx] = saved
        if not (np.isfinite(plus) and np.isfinite(minus)):
            raise NumericFailure("non-finite loss during finite differencing")
        numeric = (plus - minus) / (2.0 * epsilon)
        analytic = grad.ravel()[idx]
        rel = abs(analytic - numeric) / max(1e-8, abs(analytic) + abs(numeric))
        max_rel = max(max_rel, rel)
    return GradReport(
        max_relative_error=max_rel,
        parameters_checked=flat.size,
        epsilon=epsilon,
    )
