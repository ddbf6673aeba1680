"""Per-turn conversation state: dynamic graph, graph convolution, history encoding.

Each turn is summarized as a weighted heterogeneous graph over the user, the
historical clicked and non-clicked attributes, the candidate attributes and a
(possibly sampled) subset of candidate items. User-item edges carry the soft
item preference scores; item-attribute incidence edges carry weight 1. Two
graph-convolution layers (symmetric normalization with self-loops, ReLU in
between) refine node vectors; the clicked-attribute sequence is then encoded
by one self-attention layer with learned positional embeddings and mean-pooled
into the conversation state vector.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import torch
from torch import nn

from .embeddings import EmbeddingTable
from .simulator import SessionState
from .soft_estimation import PreferenceDistribution

KIND_USER = 0
KIND_ITEM = 1
KIND_ATTR = 2

DEFAULT_SAMPLE_CAP = 5000


@dataclass
class DynamicGraph:
    """Compact weighted graph snapshot; cheap to store in a replay buffer."""

    node_kinds: np.ndarray  # (n,) int8
    node_ids: np.ndarray  # (n,) int64, id within the entity class
    edge_src: np.ndarray  # (e,) int32, local node index (one direction)
    edge_dst: np.ndarray  # (e,) int32
    edge_vals: np.ndarray  # (e,) float64
    click_positions: np.ndarray  # (l,) int64, node index of each click, in click order

    @property
    def n_nodes(self) -> int:
        return len(self.node_kinds)

    def node_index(self, kind: int, entity_id: int) -> int:
        hits = np.flatnonzero((self.node_kinds == kind) & (self.node_ids == entity_id))
        if len(hits) == 0:
            raise KeyError(f"node (kind={kind}, id={entity_id}) not in graph")
        return int(hits[0])

    def node_set(self) -> set[tuple[int, int]]:
        return {(int(k), int(i)) for k, i in zip(self.node_kinds, self.node_ids)}

    def adjacency(self) -> np.ndarray:
        """Dense symmetric adjacency with zero diagonal."""
        n = self.n_nodes
        adj = np.zeros((n, n))
        adj[self.edge_src, self.edge_dst] = self.edge_vals
        adj[self.edge_dst, self.edge_src] = self.edge_vals
        return adj

    def global_ids(self, n_users: int, n_items: int) -> np.ndarray:
        """Map nodes into the stacked user/item/attribute embedding row space."""
        offsets = np.array([0, n_users, n_users + n_items], dtype=np.int64)
        return self.node_ids + offsets[self.node_kinds]


def build_graph(session: SessionState, item_dist: PreferenceDistribution,
                sample_cap: int = DEFAULT_SAMPLE_CAP,
                pin: Sequence[int] = ()) -> DynamicGraph:
    """Assemble the turn's graph from the session and the item score distribution.

    When the candidate items exceed `sample_cap`, a uniform seeded sample is
    taken (from the session's sampling stream). Items listed in `pin` are kept
    in the sample so pruned actions always have node representations.
    """
    catalog = session.catalog
    attrs = sorted(session.click_history | session.nonclick_history | session.p_cand)
    v_cand_sorted = sorted(session.v_cand)
    if len(v_cand_sorted) > sample_cap:
        pinned = [v for v in sorted(set(pin)) if v in session.v_cand][:sample_cap]
        rest = [v for v in v_cand_sorted if v not in set(pinned)]
        extra = session.sample_rng.choice(rest, size=sample_cap - len(pinned), replace=False)
        items = sorted(pinned + [int(v) for v in extra])
    else:
        items = v_cand_sorted

    node_kinds = np.concatenate([
        np.full(1, KIND_USER, dtype=np.int8),
        np.full(len(attrs), KIND_ATTR, dtype=np.int8),
        np.full(len(items), KIND_ITEM, dtype=np.int8),
    ])
    node_ids = np.concatenate([
        np.array([session.user], dtype=np.int64),
        np.array(attrs, dtype=np.int64),
        np.array(items, dtype=np.int64),
    ])
    attr_pos = {p: 1 + i for i, p in enumerate(attrs)}
    item_pos = {v: 1 + len(attrs) + i for i, v in enumerate(items)}

    src, dst, vals = [], [], []
    for v in items:
        src.append(0)
        dst.append(item_pos[v])
        vals.append(item_dist.scores[v])
        for p in catalog.item_attrs[v]:
            if p in attr_pos:
                src.append(item_pos[v])
                dst.append(attr_pos[p])
                vals.append(1.0)

    click_positions = np.array([attr_pos[p] for p in session.click_sequence], dtype=np.int64)
    return DynamicGraph(
        node_kinds=node_kinds,
        node_ids=node_ids,
        edge_src=np.array(src, dtype=np.int32),
        edge_dst=np.array(dst, dtype=np.int32),
        edge_vals=np.array(vals, dtype=np.float64),
        click_positions=click_positions,
    )


def normalized_adjacency(adj: torch.Tensor) -> torch.Tensor:
    """Self-loop symmetric normalization, batched over the leading dim if any."""
    n = adj.shape[-1]
    eye = torch.eye(n, dtype=adj.dtype, device=adj.device)
    adj_hat = adj + eye
    deg = adj_hat.sum(dim=-1).clamp(min=1e-12)
    inv_sqrt = deg.pow(-0.5)
    return adj_hat * inv_sqrt.unsqueeze(-1) * inv_sqrt.unsqueeze(-2)


class ConversationEncoder(nn.Module):
    """2-layer graph convolution + 1-layer sequence encoder + mean pooling."""

    def __init__(self, embed_dim: int = 64, hidden: int = 100, nhead: int = 4,
                 max_seq_len: int = 30, dtype: torch.dtype = torch.float32):
        super().__init__()
        self.embed_dim = embed_dim
        self.hidden = hidden
        self.max_seq_len = max_seq_len
        self.gcn1 = nn.Linear(embed_dim, hidden, dtype=dtype)
        self.gcn2 = nn.Linear(hidden, hidden, dtype=dtype)
        self.seq_layer = nn.TransformerEncoderLayer(
            d_model=hidden, nhead=nhead, dim_feedforward=hidden,
            dropout=0.0, batch_first=True, dtype=dtype)
        self.pos_embedding = nn.Embedding(max_seq_len, hidden, dtype=dtype)
        self._dtype = dtype

    def gcn(self, features: torch.Tensor, adj: torch.Tensor) -> torch.Tensor:
        """Two propagation layers; works on (n, d) or batched (B, n, d) inputs."""
        adj_norm = normalized_adjacency(adj)
        h = torch.relu(adj_norm @ self.gcn1(features))
        return adj_norm @ self.gcn2(h)

    def encode_sequence(self, tokens: torch.Tensor,
                        padding_mask: Optional[torch.Tensor] = None) -> torch.Tensor:
        """Length-preserving self-attention over (B, l, hidden) token batches."""
        length = tokens.shape[1]
        if length > self.max_seq_len:
            tokens = tokens[:, -self.max_seq_len:]
            if padding_mask is not None:
                padding_mask = padding_mask[:, -self.max_seq_len:]
            length = self.max_seq_len
        pos = self.pos_embedding(torch.arange(length, device=tokens.device))
        return self.seq_layer(tokens + pos, src_key_padding_mask=padding_mask)


def node_features(graph: DynamicGraph, table: EmbeddingTable,
                  dtype: torch.dtype = torch.float32) -> torch.Tensor:
    mats = (table.user_vecs, table.item_vecs, table.attr_vecs)
    rows = [mats[kind][idx] for kind, idx in zip(graph.node_kinds, graph.node_ids)]
    return torch.as_tensor(np.stack(rows), dtype=dtype)


def encode_nodes(graph: DynamicGraph, table: EmbeddingTable,
                 params: ConversationEncoder) -> torch.Tensor:
    """Refined per-node representations, shape (n_nodes, hidden)."""
    features = node_features(graph, table, dtype=params._dtype)
    adj = torch.as_tensor(graph.adjacency(), dtype=params._dtype)
    return params.gcn(features, adj)


def encode_history(click_seq: torch.Tensor, params: ConversationEncoder) -> torch.Tensor:
    """Encode an ordered (l, hidden) clicked-attribute sequence; l >= 1."""
    if click_seq.ndim != 2 or click_seq.shape[0] == 0:
        raise ValueError("click_seq must be a nonempty (l, hidden) tensor")
    return params.encode_sequence(click_seq.unsqueeze(0)).squeeze(0)


def conversation_state(history_rep: torch.Tensor) -> torch.Tensor:
    """Mean pooling over the sequence dimension."""
    if history_rep.shape[0] == 0:
        raise ValueError("history representation is empty")
    return history_rep.mean(dim=0)


def encode_session(graph: DynamicGraph, table: EmbeddingTable,
                   params: ConversationEncoder) -> tuple[torch.Tensor, torch.Tensor]:
    """Full single-graph path: (node representations, state vector).

    An empty click history falls back to the user's node vector as a
    length-1 sequence so the state shape is defined from the first turn.
    """
    nodes = encode_nodes(graph, table, params)
    if len(graph.click_positions) > 0:
        tokens = nodes[torch.as_tensor(graph.click_positions)]
    else:
        tokens = nodes[:1]
    history = encode_history(tokens, params)
    return nodes, conversation_state(history)
