import numpy as np
import pytest
import torch

from convrec.catalog import Catalog
from convrec.embeddings import EmbeddingTable
from convrec.simulator import MODE_HARD, new_session, respond_to_question
from convrec.soft_estimation import PreferenceDistribution, UseConfig, item_distribution
from convrec.state_encoder import (KIND_ATTR, KIND_ITEM, KIND_USER,
                                   ConversationEncoder, DynamicGraph,
                                   build_graph, conversation_state,
                                   encode_history, encode_nodes, encode_session,
                                   node_features, normalized_adjacency)


def single_item_catalog() -> Catalog:
    return Catalog(
        users=frozenset({0}), items=frozenset({0}), attributes=frozenset({0}),
        attribute_types=frozenset({0}), attr_type_of={0: 0},
        item_attrs={0: frozenset({0})}, interactions=((0, 0),))


def make_table(catalog, dim=8, seed=0) -> EmbeddingTable:
    rng = np.random.default_rng(seed)
    return EmbeddingTable(
        dim=dim,
        user_vecs=rng.normal(0, 0.3, (catalog.n_users, dim)),
        item_vecs=rng.normal(0, 0.3, (catalog.n_items, dim)),
        attr_vecs=rng.normal(0, 0.3, (catalog.n_attributes, dim)),
    )


def make_encoder(embed_dim=8, hidden=8, seed=0, dtype=torch.float64) -> ConversationEncoder:
    torch.manual_seed(seed)
    return ConversationEncoder(embed_dim=embed_dim, hidden=hidden, nhead=2,
                               max_seq_len=6, dtype=dtype)


class TestBuildGraph:
    def test_edge_weights_follow_the_scores(self):
        catalog = single_item_catalog()
        session = new_session(catalog, 0, (0,), seed=0)
        dist = PreferenceDistribution("item", {0: 0.7}, 0)
        graph = build_graph(session, dist, sample_cap=10)
        adj = graph.adjacency()
        u = graph.node_index(KIND_USER, 0)
        v = graph.node_index(KIND_ITEM, 0)
        p = graph.node_index(KIND_ATTR, 0)
        assert adj[u, v] == 0.7
        assert adj[v, p] == 1.0
        assert adj[u, p] == 0.0
        assert np.array_equal(adj, adj.T)
        assert np.all(np.diag(adj) == 0.0)

    def test_scores_carried_bit_for_bit(self, mini_catalog, mini_table):
        session = new_session(mini_catalog, 0, (0, 1), seed=1)
        dist = item_distribution(session, mini_table, UseConfig())
        graph = build_graph(session, dist, sample_cap=100)
        adj = graph.adjacency()
        u = graph.node_index(KIND_USER, 0)
        for v, score in dist.scores.items():
            assert adj[u, graph.node_index(KIND_ITEM, v)] == score

    def test_sampling_cap(self, mini_catalog):
        session = new_session(mini_catalog, 0, (0, 1), seed=1)
        session.v_cand = set(mini_catalog.items)  # widen to 6 candidates
        session._recompute_p_cand()
        dist = PreferenceDistribution("item", {v: 0.5 for v in session.v_cand}, 0)
        graph = build_graph(session, dist, sample_cap=3)
        items = [int(i) for k, i in zip(graph.node_kinds, graph.node_ids) if k == KIND_ITEM]
        assert len(items) == 3
        assert set(items) <= session.v_cand

    def test_pinned_items_survive_sampling(self, mini_catalog):
        session = new_session(mini_catalog, 0, (0, 1), seed=1)
        session.v_cand = set(mini_catalog.items)
        session._recompute_p_cand()
        dist = PreferenceDistribution("item", {v: 0.5 for v in session.v_cand}, 0)
        graph = build_graph(session, dist, sample_cap=2, pin=(4,))
        items = {int(i) for k, i in zip(graph.node_kinds, graph.node_ids) if k == KIND_ITEM}
        assert 4 in items and len(items) == 2

    def test_node_set_union_without_sampling(self, mini_catalog, mini_table):
        # Hard filtering shrinks candidates so historical attributes fall
        # outside the candidate attribute set, exercising the full union.
        session = new_session(mini_catalog, 0, (0, 1), vague_ratio=0.0,
                              mode=MODE_HARD, seed=1)
        respond_to_question(session, 1, (2, 3))
        dist = item_distribution(session, mini_table, UseConfig())
        graph = build_graph(session, dist, sample_cap=100)
        expected = {(KIND_USER, session.user)}
        expected |= {(KIND_ATTR, p) for p in
                     session.click_history | session.nonclick_history | session.p_cand}
        expected |= {(KIND_ITEM, v) for v in session.v_cand}
        assert graph.node_set() == expected
        assert 3 not in session.p_cand  # a non-candidate attr is still a node

    def test_click_positions_follow_click_order(self, mini_catalog, mini_table):
        session = new_session(mini_catalog, 0, (0, 1), vague_ratio=0.0, seed=1)
        respond_to_question(session, 2, (5, 4))
        dist = item_distribution(session, mini_table, UseConfig())
        graph = build_graph(session, dist, sample_cap=100)
        clicked_ids = [int(graph.node_ids[i]) for i in graph.click_positions]
        assert clicked_ids == session.click_sequence


def random_graph(n_attrs=3, n_items=2, seed=0):
    rng = np.random.default_rng(seed)
    kinds = np.array([0] + [2] * n_attrs + [1] * n_items, dtype=np.int8)
    ids = np.array([0] + list(range(n_attrs)) + list(range(n_items)), dtype=np.int64)
    src, dst, vals = [], [], []
    for i in range(n_items):
        item_node = 1 + n_attrs + i
        src.append(0)
        dst.append(item_node)
        vals.append(float(rng.uniform(0.1, 0.9)))
        for a in range(n_attrs):
            if rng.random() < 0.6:
                src.append(item_node)
                dst.append(1 + a)
                vals.append(1.0)
    clicks = np.array([1], dtype=np.int64)
    return DynamicGraph(kinds, ids, np.array(src, dtype=np.int32),
                        np.array(dst, dtype=np.int32), np.array(vals),
                        clicks)


def permute_graph(graph: DynamicGraph, perm: np.ndarray) -> DynamicGraph:
    """Relabel node positions by perm (new_index = position of old in perm)."""
    inv = np.empty_like(perm)
    inv[perm] = np.arange(len(perm))
    return DynamicGraph(
        node_kinds=graph.node_kinds[perm],
        node_ids=graph.node_ids[perm],
        edge_src=inv[graph.edge_src].astype(np.int32),
        edge_dst=inv[graph.edge_dst].astype(np.int32),
        edge_vals=graph.edge_vals.copy(),
        click_positions=inv[graph.click_positions],
    )


class TestEncodeNodes:
    def test_permutation_equivariance(self):
        catalog = single_item_catalog()
        table = make_table(catalog, dim=8, seed=3)
        # Graph over the mini world's entities: reuse ids within range.
        graph = random_graph(n_attrs=1, n_items=1, seed=1)
        encoder = make_encoder()
        rng = np.random.default_rng(5)
        perm = rng.permutation(graph.n_nodes)
        permuted = permute_graph(graph, perm)
        out = encode_nodes(graph, table, encoder).detach().numpy()
        out_perm = encode_nodes(permuted, table, encoder).detach().numpy()
        assert np.max(np.abs(out_perm - out[perm])) < 1e-6

    def test_single_node_equals_manual_mlp(self):
        catalog = single_item_catalog()
        table = make_table(catalog, dim=8, seed=2)
        graph = DynamicGraph(
            node_kinds=np.array([0], dtype=np.int8),
            node_ids=np.array([0], dtype=np.int64),
            edge_src=np.array([], dtype=np.int32),
            edge_dst=np.array([], dtype=np.int32),
            edge_vals=np.array([]),
            click_positions=np.array([], dtype=np.int64))
        encoder = make_encoder()
        out = encode_nodes(graph, table, encoder).detach()
        x = torch.as_tensor(table.user_vecs[0], dtype=torch.float64)
        h1 = torch.relu(encoder.gcn1(x))
        expected = encoder.gcn2(h1)
        assert torch.allclose(out.squeeze(0), expected, atol=1e-12)

    def test_isolated_nodes_encode_independently(self):
        catalog = single_item_catalog()
        table = make_table(catalog, dim=8, seed=4)
        kinds = np.array([0, 1, 2], dtype=np.int8)
        ids = np.array([0, 0, 0], dtype=np.int64)
        empty = np.array([], dtype=np.int32)
        graph = DynamicGraph(kinds, ids, empty, empty, np.array([]),
                             np.array([], dtype=np.int64))
        encoder = make_encoder()
        joint = encode_nodes(graph, table, encoder).detach()
        for i in range(3):
            solo = DynamicGraph(kinds[i:i + 1], ids[i:i + 1], empty, empty,
                                np.array([]), np.array([], dtype=np.int64))
            alone = encode_nodes(solo, table, encoder).detach()
            assert torch.allclose(joint[i], alone.squeeze(0), atol=1e-10)

    def test_outputs_finite(self, mini_catalog, mini_table):
        session = new_session(mini_catalog, 0, (0, 1), seed=1)
        dist = item_distribution(session, mini_table, UseConfig())
        graph = build_graph(session, dist, sample_cap=100)
        encoder = make_encoder()
        out = encode_nodes(graph, mini_table, encoder)
        assert torch.isfinite(out).all()


class TestHistoryEncoder:
    def test_length_one_shape(self):
        encoder = make_encoder()
        out = encode_history(torch.zeros((1, 8), dtype=torch.float64), encoder)
        assert out.shape == (1, 8)

    def test_empty_history_falls_back_to_user_node(self):
        catalog = single_item_catalog()
        table = make_table(catalog)
        session = new_session(catalog, 0, (0,), seed=0)
        dist = PreferenceDistribution("item", {0: 0.5}, 0)
        graph = build_graph(session, dist, sample_cap=10)
        assert len(graph.click_positions) == 0
        encoder = make_encoder()
        nodes, state = encode_session(graph, table, encoder)
        user_token = nodes[:1]
        expected = conversation_state(encode_history(user_token, encoder))
        assert torch.allclose(state, expected, atol=1e-12)

    def test_positional_encoding_separates_duplicates(self):
        encoder = make_encoder(seed=8)
        token = torch.randn(1, 8, dtype=torch.float64)
        doubled = token.repeat(2, 1)
        with torch.no_grad():
            encoder.pos_embedding.weight.zero_()
            rows_no_pos = encode_history(doubled, encoder)
        assert torch.allclose(rows_no_pos[0], rows_no_pos[1], atol=1e-10)
        encoder2 = make_encoder(seed=8)
        rows_pos = encode_history(doubled, encoder2)
        assert not torch.allclose(rows_pos[0], rows_pos[1], atol=1e-6)

    def test_rejects_empty_sequence(self):
        encoder = make_encoder()
        with pytest.raises(ValueError):
            encode_history(torch.zeros((0, 8), dtype=torch.float64), encoder)


class TestConversationState:
    def test_single_row_identity(self):
        row = torch.randn(1, 8)
        assert torch.equal(conversation_state(row), row.squeeze(0))

    def test_opposite_rows_cancel(self):
        r = torch.randn(1, 8)
        stacked = torch.cat([r, -r], dim=0)
        assert torch.allclose(conversation_state(stacked), torch.zeros(8), atol=1e-7)

    def test_mean_oracle(self):
        rows = torch.randn(3, 8, dtype=torch.float64)
        expected = torch.as_tensor(rows.numpy().mean(axis=0))
        assert torch.allclose(conversation_state(rows), expected, atol=1e-12)


class TestGradients:
    def test_gradients_match_central_finite_differences(self):
        torch.manual_seed(0)
        catalog = single_item_catalog()
        table = make_table(catalog, dim=6, seed=6)
        encoder = ConversationEncoder(embed_dim=6, hidden=8, nhead=2,
                                      max_seq_len=5, dtype=torch.float64)
        # 5-node fixture: user + 2 attrs + 2 items, one click token.
        kinds = np.array([0, 2, 2, 1, 1], dtype=np.int8)
        ids = np.array([0, 0, 0, 0, 0], dtype=np.int64)
        src = np.array([0, 0, 3, 4], dtype=np.int32)
        dst = np.array([3, 4, 1, 2], dtype=np.int32)
        vals = np.array([0.4, 0.8, 1.0, 1.0])
        graph = DynamicGraph(kinds, ids, src, dst, vals,
                             np.array([1, 2], dtype=np.int64))

        def loss_value() -> torch.Tensor:
            _, state = encode_session(graph, table, encoder)
            return (state ** 2).sum()

        loss = loss_value()
        loss.backward()
        h = 1e-3
        for name, param in encoder.named_parameters():
            grad = param.grad.detach().clone()
            flat = param.data.view(-1)
            for idx in range(flat.numel()):
                original = flat[idx].item()
                flat[idx] = original + h
                up = loss_value().item()
                flat[idx] = original - h
                down = loss_value().item()
                flat[idx] = original
                fd = (up - down) / (2 * h)
                ad = grad.view(-1)[idx].item()
                tol = 1e-4 * max(1.0, abs(ad), abs(fd))
                assert abs(ad - fd) <= tol, f"{name}[{idx}]: autograd {ad} vs fd {fd}"


class TestNormalizedAdjacency:
    def test_row_scaling_identity_on_regular_graph(self):
        # A ring where every node has equal degree: normalization is uniform.
        adj = torch.tensor([[0.0, 1.0, 1.0],
                            [1.0, 0.0, 1.0],
                            [1.0, 1.0, 0.0]], dtype=torch.float64)
        norm = normalized_adjacency(adj)
        assert torch.allclose(norm.sum(dim=1), torch.ones(3, dtype=torch.float64))

    def test_batched_matches_single(self):
        adj = torch.rand(4, 5, 5, dtype=torch.float64)
        adj = adj + adj.transpose(1, 2)
        batched = normalized_adjacency(adj)
        for i in range(4):
            assert torch.allclose(batched[i], normalized_adjacency(adj[i]), atol=1e-12)
