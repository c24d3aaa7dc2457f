"""The combined training objective and its four constituent terms.

total = alpha * H(l, l') + beta * sum_i mu^i H(p_i, q_i)
        - gamma * sum_i (q_i(0)^2 + q_i(1)^2) + delta * L2(W)

The bias term enters negated because it is a reward: it peaks when every
bit distribution commits to 0 or 1. All batch inputs are rank-2; every
term except the L2 penalty is averaged over the batch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .autodiff import ShapeError, Tensor, add, cross_entropy, scale, square, sum_
from .nn import ParameterSet


@dataclass(frozen=True)
class HyperParams:
    """Loss weights and problem dimensions."""

    string_length: int
    num_classes: int
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 0.1
    delta: float = 1e-4
    mu: float = 0.8
    string_ce_order: str = "pq"  # "pq" = H(p, q) as written; "qp" mirrors it

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {self.num_classes}")
        min_length = math.ceil(math.log2(self.num_classes))
        if self.string_length < min_length:
            raise ValueError(
                f"string_length {self.string_length} cannot embed {self.num_classes} "
                f"classes; need at least {min_length}")
        if not (0.0 < self.mu < 1.0):
            raise ValueError(f"mu must lie strictly inside (0, 1), got {self.mu}")
        for name in ("alpha", "beta", "gamma", "delta"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.string_ce_order not in ("pq", "qp"):
            raise ValueError(f"string_ce_order must be 'pq' or 'qp', got {self.string_ce_order!r}")


@dataclass
class LossReport:
    """Scaled per-term values; total is their sum."""

    total: float
    term_class: float
    term_string: float
    term_bias: float
    term_l2: float


def _check_bit_lists(p: list[Tensor], q: list[Tensor]) -> int:
    if len(p) != len(q):
        raise ShapeError(f"bit sequence lengths differ: {len(p)} vs {len(q)}")
    batch = p[0].shape[0]
    for t in (*p, *q):
        if t.data.ndim != 2 or t.shape != (batch, 2):
            raise ShapeError(f"expected ({batch}, 2) bit distributions, got {t.shape}")
    return batch


def bias_regularizer(q: list[Tensor]) -> Tensor:
    """sum_i (q_i(0)^2 + q_i(1)^2), averaged over the batch.

    Per bit the value lives in [0.5, 1]: 0.5 at the uniform pair, 1 at a
    fully biased pair.
    """
    batch = q[0].shape[0]
    total = sum_(square(q[0]))
    for qi in q[1:]:
        total = add(total, sum_(square(qi)))
    return scale(total, 1.0 / batch)


def structured_string_loss(p: list[Tensor], q: list[Tensor], mu: float,
                           order: str = "pq") -> Tensor:
    """sum_i mu^i H(p_i, q_i), i starting at 1, averaged over the batch."""
    batch = _check_bit_lists(p, q)
    total = None
    for i, (pi, qi) in enumerate(zip(p, q), start=1):
        ce = cross_entropy(pi, qi) if order == "pq" else cross_entropy(qi, pi)
        term = scale(ce, mu ** i)
        total = term if total is None else add(total, term)
    return scale(total, 1.0 / batch)


def string_target_loss(target_bits: list[Tensor], p: list[Tensor], mu: float) -> Tensor:
    """Structured loss against fixed one-hot bit targets (random-embedding mode)."""
    batch = _check_bit_lists(target_bits, p)
    total = None
    for i, (ti, pi) in enumerate(zip(target_bits, p), start=1):
        term = scale(cross_entropy(ti, pi), mu ** i)
        total = term if total is None else add(total, term)
    return scale(total, 1.0 / batch)


def class_loss(labels: Tensor, predicted: Tensor) -> Tensor:
    """H(l, l') averaged over the batch."""
    if labels.data.ndim != 2:
        raise ShapeError(f"expected rank-2 label batch, got {labels.shape}")
    return scale(cross_entropy(labels, predicted), 1.0 / labels.shape[0])


def l2_penalty(params: ParameterSet) -> Tensor:
    """Sum of squares of every non-frozen parameter."""
    trainable = params.trainable()
    if not trainable:
        return Tensor(0.0)
    total = sum_(square(trainable[0][1]))
    for _, t in trainable[1:]:
        total = add(total, sum_(square(t)))
    return total


def total_loss(labels: Tensor, predicted: Tensor, p: list[Tensor], q: list[Tensor],
               params: ParameterSet, hp: HyperParams,
               gamma: float | None = None) -> tuple[Tensor, LossReport]:
    """Combined objective; gamma may be overridden for scheduled decay.

    Returns the scalar loss tensor (for backward) and a LossReport of the
    scaled term values.
    """
    effective_gamma = hp.gamma if gamma is None else gamma
    t_class = scale(class_loss(labels, predicted), hp.alpha)
    t_string = scale(structured_string_loss(p, q, hp.mu, hp.string_ce_order), hp.beta)
    t_bias = scale(bias_regularizer(q), -effective_gamma)
    t_l2 = scale(l2_penalty(params), hp.delta)
    total = add(add(t_class, t_string), add(t_bias, t_l2))
    report = LossReport(
        total=total.item(),
        term_class=t_class.item(),
        term_string=t_string.item(),
        term_bias=t_bias.item(),
        term_l2=t_l2.item(),
    )
    return total, report
