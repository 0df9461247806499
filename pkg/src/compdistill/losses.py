"""Classification, distillation and feature losses with their input gradients.

All values are batch means. Teacher-side arguments are treated as constants:
no gradient is returned for them.
"""
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError
from .tensor import softmax_rows

PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 1.0
    beta: float = 1.0

    def __post_init__(self):
        for name in ("alpha", "beta"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ConfigError(f"loss weight {name} must be finite and >= 0, got {v}")


def _pair_check(a, b, what):
    if a.shape != b.shape or a.ndim != 2:
        raise DimensionError(f"{what}: shapes {a.shape} and {b.shape} must be equal [B, K]")


def check_label_dist(labels, atol=1e-6):
    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise DimensionError(f"labels must be [B, K], got {labels.shape}")
    if np.any(labels < 0) or not np.allclose(labels.sum(axis=1), 1.0, atol=atol, rtol=0):
        raise ConfigError("label rows must be nonnegative and sum to 1")
    return labels


def one_hot(class_ids, num_classes, dtype=np.float64):
    class_ids = np.asarray(class_ids, dtype=np.int64)
    out = np.zeros((class_ids.size, num_classes), dtype=dtype)
    out[np.arange(class_ids.size), class_ids] = 1.0
    return out


def cross_entropy(probs, labels):
    """Mean of ``-sum_k y_k log p_k``; gradient is taken w.r.t. the logits that produced ``probs``.

    Uses the fused softmax/cross-entropy derivative ``(p - y) / B``, which
    is exact when the label rows sum to one.
    """
    probs = np.asarray(probs)
    labels = np.asarray(labels)
    _pair_check(probs, labels, "cross_entropy")
    bsz = probs.shape[0]
    logp = np.log(np.maximum(probs, PROB_FLOOR))
    loss = -float(np.sum(labels * logp)) / bsz
    return loss, (probs - labels) / bsz


def kl_distill(teacher_probs, student_probs, temperature=1.0):
    """Mean over the batch of ``KL(p_teacher || p_student)``.

    With a temperature other than 1 both arguments are expected to be
    softened already; the returned gradient is then w.r.t. the softened
    student logits.
    """
    pt = np.asarray(teacher_probs)
    ps = np.asarray(student_probs)
    _pair_check(pt, ps, "kl_distill")
    bsz = pt.shape[0]
    # 0 * log 0 := 0 on the teacher side
    safe_pt = np.maximum(pt, PROB_FLOOR)
    terms = np.where(pt > 0, pt * (np.log(safe_pt) - np.log(np.maximum(ps, PROB_FLOOR))), 0.0)
    loss = float(np.sum(terms)) / bsz
    return loss, (ps - pt) / bsz


def feature_l2(student_feat, teacher_feat):
    """Mean over the batch of ``||F_s - F_t||^2``; gradient ``2 (F_s - F_t) / B``."""
    fs = np.asarray(student_feat)
    ft = np.asarray(teacher_feat)
    if fs.ndim != 2 or ft.ndim != 2 or fs.shape[0] != ft.shape[0]:
        raise DimensionError(f"feature_l2: shapes {fs.shape} and {ft.shape} are not [B, D]")
    if fs.shape[1] != ft.shape[1]:
        raise ConfigError(
            f"feature widths differ ({fs.shape[1]} vs {ft.shape[1]}) and no adapter is configured"
        )
    diff = fs - ft
    bsz = fs.shape[0]
    return float(np.sum(diff * diff)) / bsz, 2.0 * diff / bsz


def student_loss(l_c, l_d, l_f, weights: LossWeights):
    return l_c + weights.alpha * l_d + weights.beta * l_f


def teacher_loss(l_c):
    return l_c


def softened(logits, temperature):
    return softmax_rows(np.asarray(logits) / temperature)
