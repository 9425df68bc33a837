"""Relative-position prediction head and its auxiliary cross-entropy loss."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .encoder import position_index, position_value
from .numerics import affine, cross_entropy, softmax, softmax_cross_entropy

__all__ = [
    "PositionHead",
    "predict_position",
    "position_loss",
    "position_index",
    "position_value",
    "position_head_loss",
]


@dataclass
class PositionHead:
    W: np.ndarray  # |D| x d
    b: np.ndarray  # |D|

    @property
    def classes(self) -> int:
        return self.W.shape[0]

    @property
    def clip(self) -> int:
        return (self.classes - 1) // 2


def predict_position(r, head: PositionHead) -> np.ndarray:
    """Distribution over the ``2L+1`` relative-position classes."""
    return softmax(affine(r, head.W, head.b))


def position_loss(predictions: Sequence[np.ndarray], positions: Sequence[int], clip: int) -> float:
    """Summed cross-entropy of per-clause predictions against one-hot true positions."""
    if len(predictions) != len(positions):
        raise ValueError(f"{len(predictions)} predictions for {len(positions)} positions")
    total = 0.0
    for p_hat, pos in zip(predictions, positions):
        truth = np.zeros(2 * clip + 1)
        truth[position_index(pos, clip)] = 1.0
        total += cross_entropy(p_hat, truth)
    return total


def position_head_loss(r, positions, W, b, clip: int):
    """Batched loss over a document's clauses.

    Returns ``(loss, probs, dr, dW, db)``.
    """
    targets = [position_index(p, clip) for p in positions]
    loss, probs, dlogits = softmax_cross_entropy(affine(r, W, b), targets)
    return loss, probs, dlogits @ W, dlogits.T @ r, dlogits.sum(axis=0)
