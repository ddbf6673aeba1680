"""Entity embedding vectors and the dot-product scoring primitives.

All preference scoring reduces to inner products between user, item and
attribute vectors of one shared dimension. Tables are frozen once built;
policy training never updates them. An optional translational pretraining
step (margin ranking over knowledge-graph triplets with uniform negative
sampling) stands in for an external embedding toolkit. Relation vectors are
internal to pretraining and discarded afterwards.

Checkpoint format (versioned): a .npz archive with keys
``version, dim, user_vecs, item_vecs, attr_vecs``.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .catalog import Catalog

CHECKPOINT_VERSION = 1


class EmbeddingError(ValueError):
    pass


@dataclass(frozen=True)
class EmbeddingTable:
    """Per-class embedding matrices indexed by dense entity id."""

    dim: int
    user_vecs: np.ndarray  # (n_users, dim)
    item_vecs: np.ndarray  # (n_items, dim)
    attr_vecs: np.ndarray  # (n_attributes, dim)

    def __post_init__(self):
        for name in ("user_vecs", "item_vecs", "attr_vecs"):
            mat = getattr(self, name)
            if mat.ndim != 2 or mat.shape[1] != self.dim:
                raise EmbeddingError(f"{name} must have shape (n, {self.dim})")
            if not np.isfinite(mat).all():
                raise EmbeddingError(f"{name} contains non-finite values")

    def user(self, u: int) -> np.ndarray:
        return self.user_vecs[u]

    def item(self, v: int) -> np.ndarray:
        return self.item_vecs[v]

    def attr(self, p: int) -> np.ndarray:
        return self.attr_vecs[p]


@dataclass
class PretrainReport:
    """Diagnostics from translational pretraining."""

    loss_curve: list[float]  # mean margin loss per epoch, index 0 = at init
    true_distance: float  # mean ||e_h + r - e_t|| over training triplets
    corrupt_distance: float  # same over freshly corrupted triplets


def init_embeddings(catalog: Catalog, dim: int = 64, seed: int = 0) -> EmbeddingTable:
    """Random zero-mean init with scale 1/sqrt(dim), deterministic in the seed."""
    if dim < 1:
        raise EmbeddingError("dim must be >= 1")
    rng = np.random.default_rng(seed)
    scale = 1.0 / np.sqrt(dim)
    return EmbeddingTable(
        dim=dim,
        user_vecs=rng.normal(0.0, scale, size=(catalog.n_users, dim)),
        item_vecs=rng.normal(0.0, scale, size=(catalog.n_items, dim)),
        attr_vecs=rng.normal(0.0, scale, size=(catalog.n_attributes, dim)),
    )


def score_user_item(table: EmbeddingTable, u: int, v: int) -> float:
    """Static preference of user u for item v: the exact inner product."""
    if not (0 <= u < len(table.user_vecs)):
        raise EmbeddingError(f"unknown user id {u}")
    if not (0 <= v < len(table.item_vecs)):
        raise EmbeddingError(f"unknown item id {v}")
    return float(table.user_vecs[u] @ table.item_vecs[v])


def _entity_matrix(table: EmbeddingTable) -> np.ndarray:
    """Stack user/item/attribute vectors into the global triplet id space."""
    return np.concatenate([table.user_vecs, table.item_vecs, table.attr_vecs], axis=0)


def _split_entity_matrix(ent: np.ndarray, catalog: Catalog, dim: int) -> EmbeddingTable:
    nu, ni = catalog.n_users, catalog.n_items
    return EmbeddingTable(
        dim=dim,
        user_vecs=ent[:nu],
        item_vecs=ent[nu:nu + ni],
        attr_vecs=ent[nu + ni:],
    )


def pretrain_translational(catalog: Catalog, epochs: int = 20, margin: float = 1.0,
                           lr: float = 0.05, seed: int = 0, dim: int = 64) -> EmbeddingTable:
    """Margin-ranking pretraining over catalog triplets; see the report variant."""
    table, _report = pretrain_translational_report(catalog, epochs, margin, lr, seed, dim)
    return table


def pretrain_translational_report(catalog: Catalog, epochs: int = 20, margin: float = 1.0,
                                  lr: float = 0.05, seed: int = 0,
                                  dim: int = 64) -> tuple[EmbeddingTable, PretrainReport]:
    """Train entity vectors so true triplets score closer than corrupted ones.

    Minimizes mean(max(0, margin + d(h+r, t) - d(h'+r, t'))) with squared L2
    distance and one uniformly corrupted head-or-tail negative per triplet.
    Deterministic in the seed; epochs=0 returns the random init unchanged.
    """
    if not catalog.triplets:
        raise EmbeddingError("catalog has no triplets; use init_embeddings instead")
    table = init_embeddings(catalog, dim=dim, seed=seed)
    rng = np.random.default_rng(seed + 1)

    ent = _entity_matrix(table)
    n_entities = ent.shape[0]
    trips = np.asarray(catalog.triplets, dtype=np.int64)
    heads, rels, tails = trips[:, 0], trips[:, 1], trips[:, 2]
    n_rel = int(rels.max()) + 1
    rel = rng.normal(0.0, 1.0 / np.sqrt(dim), size=(n_rel, dim))

    def sq_dist(h_idx, t_idx):
        diff = ent[h_idx] + rel[rels] - ent[t_idx]
        return (diff * diff).sum(axis=1)

    def corrupt():
        corrupt_head = rng.random(len(trips)) < 0.5
        rand_ent = rng.integers(n_entities, size=len(trips))
        neg_h = np.where(corrupt_head, rand_ent, heads)
        neg_t = np.where(corrupt_head, tails, rand_ent)
        return neg_h, neg_t

    def mean_loss(neg_h, neg_t):
        return float(np.maximum(0.0, margin + sq_dist(heads, tails) - sq_dist(neg_h, neg_t)).mean())

    eval_neg = corrupt()  # fixed negatives for the loss curve
    curve = [mean_loss(*eval_neg)]

    for _ in range(epochs):
        neg_h, neg_t = corrupt()
        pos_diff = ent[heads] + rel[rels] - ent[tails]
        neg_diff = ent[neg_h] + rel[rels] - ent[neg_t]
        active = margin + (pos_diff * pos_diff).sum(1) - (neg_diff * neg_diff).sum(1) > 0

        # d/dx ||x||^2 = 2x; accumulate per-entity gradients with scatter-add.
        g_ent = np.zeros_like(ent)
        g_rel = np.zeros_like(rel)
        scale = 2.0 / len(trips)
        gp = pos_diff[active] * scale
        gn = neg_diff[active] * scale
        np.add.at(g_ent, heads[active], gp)
        np.add.at(g_ent, tails[active], -gp)
        np.add.at(g_ent, neg_h[active], -gn)
        np.add.at(g_ent, neg_t[active], gn)
        np.add.at(g_rel, rels[active], gp - gn)
        ent -= lr * g_ent
        rel -= lr * g_rel
        curve.append(mean_loss(*eval_neg))

    report = PretrainReport(
        loss_curve=curve,
        true_distance=float(np.sqrt(sq_dist(heads, tails)).mean()),
        corrupt_distance=float(np.sqrt(sq_dist(*corrupt())).mean()),
    )
    return _split_entity_matrix(ent, catalog, dim), report


def save_embeddings(table: EmbeddingTable, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:  # file handle avoids savez's .npz suffix magic
        np.savez(fh, version=CHECKPOINT_VERSION, dim=table.dim,
                 user_vecs=table.user_vecs, item_vecs=table.item_vecs, attr_vecs=table.attr_vecs)


def load_embeddings(path) -> EmbeddingTable:
    with np.load(Path(path)) as data:
        version = int(data["version"])
        if version != CHECKPOINT_VERSION:
            raise EmbeddingError(f"unsupported embedding checkpoint version {version}")
        return EmbeddingTable(
            dim=int(data["dim"]),
            user_vecs=data["user_vecs"],
            item_vecs=data["item_vecs"],
            attr_vecs=data["attr_vecs"],
        )
