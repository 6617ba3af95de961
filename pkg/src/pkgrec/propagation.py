"""Linear neighborhood propagation encoder.

Per relation r the encoder is E^r = (D^{-1/2} A~ D^{-1/2})^M X W^r where A~ is
the symmetrized adjacency with self-loops. Propagation has no parameters, so
the M smoothing products are computed once up front; training only touches the
projection W^r.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .autodiff import Tensor, constant, matmul


def build_normalized_adjacency(graph, r: int) -> sp.csr_matrix:
    """Symmetrically normalized adjacency with self-loops for one relation.

    Entry (i, j) is 1/sqrt(d_i d_j) with degrees counted in the self-looped,
    symmetrized graph; isolated items therefore get a plain 1.0 self-loop and
    propagation leaves their rows untouched.
    """
    n = graph.num_items
    e = graph.edges[r]
    if len(e):
        rows = np.concatenate([e[:, 0], e[:, 1], np.arange(n)])
        cols = np.concatenate([e[:, 1], e[:, 0], np.arange(n)])
    else:
        rows = np.arange(n)
        cols = np.arange(n)
    data = np.ones(len(rows), dtype=np.float64)
    a = sp.coo_matrix((data, (rows, cols)), shape=(n, n))
    a.sum_duplicates()
    a.data[:] = 1.0  # duplicate (i,j)/(j,i) pairs collapse to a single unit entry
    a = a.tocsr()
    deg = np.asarray(a.sum(axis=1)).ravel()
    inv_sqrt = 1.0 / np.sqrt(deg)
    d = sp.diags(inv_sqrt)
    return (d @ a @ d).tocsr()


def propagate(adj: sp.csr_matrix, features: np.ndarray, m: int) -> np.ndarray:
    """Apply the normalized adjacency m times; m=0 returns a copy of the input."""
    if m < 0:
        raise ValueError(f"propagation depth must be >= 0, got {m}")
    out = np.array(features, dtype=np.float64, copy=True)
    for _ in range(m):
        out = adj @ out
    return out


def init_encoder_params(d_in: int, d: int, num_relations: int, rng) -> list[np.ndarray]:
    """One Glorot-uniform (d_in, d) projection matrix per relation."""
    limit = np.sqrt(6.0 / (d_in + d))
    return [rng.uniform(-limit, limit, size=(d_in, d)) for _ in range(num_relations)]


@dataclass
class RelationPropagator:
    """Caches the M-step propagated feature matrix for every relation of a graph."""

    m_layers: int
    propagated: list[np.ndarray]  # per relation, (n, d_in) float64

    @classmethod
    def from_graph(cls, graph, m_layers: int) -> "RelationPropagator":
        props = [
            propagate(build_normalized_adjacency(graph, r), graph.features, m_layers)
            for r in range(graph.num_relations)
        ]
        return cls(m_layers=m_layers, propagated=props)

    def encode(self, r: int, w: Tensor) -> Tensor:
        """Differentiable per-relation embeddings: propagated features @ W^r."""
        return matmul(constant(self.propagated[r], name=f"prop{r}"), w)

    def encode_all(self, weights: list[Tensor]) -> list[Tensor]:
        return [self.encode(r, w) for r, w in enumerate(weights)]
