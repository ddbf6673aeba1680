import numpy as np
import pytest
import torch

from convrec.catalog import Catalog
from convrec.embeddings import EmbeddingTable

torch.set_num_threads(2)


def build_mini_catalog() -> Catalog:
    """Hand-built six-item world used for exact-value fixtures.

    Types: t0 = {a0, a1}, t1 = {a2, a3}, t2 = {a4, a5}.
    """
    item_attrs = {
        0: frozenset({0, 2, 4}),
        1: frozenset({0, 2, 5}),
        2: frozenset({0, 3}),
        3: frozenset({1, 4}),
        4: frozenset({1, 5}),
        5: frozenset({0, 1, 3}),
    }
    interactions = ((0, 0), (0, 1), (0, 2), (1, 3), (1, 4))
    triplets = tuple((u, 0, 2 + v) for u, v in interactions)
    return Catalog(
        users=frozenset({0, 1}),
        items=frozenset(range(6)),
        attributes=frozenset(range(6)),
        attribute_types=frozenset({0, 1, 2}),
        attr_type_of={0: 0, 1: 0, 2: 1, 3: 1, 4: 2, 5: 2},
        item_attrs=item_attrs,
        interactions=interactions,
        triplets=triplets,
    )


@pytest.fixture
def mini_catalog() -> Catalog:
    return build_mini_catalog()


@pytest.fixture
def mini_table(mini_catalog) -> EmbeddingTable:
    rng = np.random.default_rng(42)
    dim = 8
    scale = 1.0 / np.sqrt(dim)
    return EmbeddingTable(
        dim=dim,
        user_vecs=rng.normal(0, scale, (mini_catalog.n_users, dim)),
        item_vecs=rng.normal(0, scale, (mini_catalog.n_items, dim)),
        attr_vecs=rng.normal(0, scale, (mini_catalog.n_attributes, dim)),
    )
