"""Task-oriented adaptation layers on top of the per-relation embeddings.

Two flavors: a parameter-free column concatenation (neighbor ranking, feature
reconstruction) and a gated weighted sum whose per-relation weights come from a
squeeze-excitation bottleneck shared across relations (relation alignment,
recommendation scoring).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (
    LOGIT_CLAMP,
    Tensor,
    add,
    clip,
    column_mean,
    concat_cols,
    relu,
    softmax,
    stack_scalars,
    vecmat,
    weighted_sum,
)


@dataclass
class GateParams:
    """Squeeze-excitation gate: shared two-layer bottleneck over relation summaries."""

    fc1_weight: Tensor  # (d, hidden)
    fc1_bias: Tensor  # (hidden,)
    fc2_weight: Tensor  # (hidden, 1)
    fc2_bias: Tensor  # (1,)

    def tensors(self) -> list[Tensor]:
        return [self.fc1_weight, self.fc1_bias, self.fc2_weight, self.fc2_bias]


def gate_hidden_width(d: int, reduction: int = 4) -> int:
    return max(1, d // reduction)


def init_gate_params(d: int, rng, reduction: int = 4) -> list[np.ndarray]:
    """Glorot-uniform weights, zero biases: [fc1_w, fc1_b, fc2_w, fc2_b]."""
    hidden = gate_hidden_width(d, reduction)
    lim1 = np.sqrt(6.0 / (d + hidden))
    lim2 = np.sqrt(6.0 / (hidden + 1))
    return [
        rng.uniform(-lim1, lim1, size=(d, hidden)),
        np.zeros(hidden, dtype=np.float64),
        rng.uniform(-lim2, lim2, size=(hidden, 1)),
        np.zeros(1, dtype=np.float64),
    ]


def toa_concat(embeddings: list[Tensor]) -> Tensor:
    """Column-wise concatenation of per-relation embeddings: (n, |R| * d)."""
    if not embeddings:
        raise ValueError("need at least one relation embedding to concatenate")
    return concat_cols(embeddings)


def excitation_logits(gate: GateParams, embeddings: list[Tensor]) -> Tensor:
    """Raw gate logits, one per supplied relation embedding, clamped to +-50.

    The squeeze is the column mean of each (n, d) embedding; the excitation is
    a shared FC -> relu -> FC bottleneck producing one scalar per relation.
    """
    logits = []
    for emb in embeddings:
        s = column_mean(emb)
        h = relu(add(vecmat(s, gate.fc1_weight), gate.fc1_bias))
        logits.append(add(vecmat(h, gate.fc2_weight), gate.fc2_bias))
    return clip(stack_scalars(logits), -LOGIT_CLAMP, LOGIT_CLAMP)


def relation_weights(gate: GateParams, embeddings: list[Tensor]) -> Tensor:
    """Softmax-normalized gate weights over the supplied relations."""
    return softmax(excitation_logits(gate, embeddings))


def toa_weighted_sum(embeddings: list[Tensor], weights: Tensor) -> Tensor:
    """Fused embedding sum_r w_r E^r; weights is a (|R|,) tensor."""
    if len(embeddings) != weights.shape[0]:
        raise ValueError(
            f"got {len(embeddings)} embeddings but {weights.shape[0]} weights"
        )
    return weighted_sum(embeddings, weights)


def fuse_relations(gate: GateParams, embeddings: list[Tensor]) -> Tensor:
    """Gate + weighted sum in one step."""
    return toa_weighted_sum(embeddings, relation_weights(gate, embeddings))
