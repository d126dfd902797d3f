import pytest

from causalrec.pag import (
    GraphError,
    MarkConflictError,
    NodeId,
    Pag,
    SepsetTable,
)
from conftest import ARROW, CIRCLE, TAIL, make_nodes
from oracles import random_pag


class TestAdjacency:
    def test_empty_graph_has_no_edges(self):
        a, b = make_nodes("a", "b")
        g = Pag([a, b])
        assert not g.adjacent(a, b)

    def test_confounded_fixture_edges(self, confounded_session_pag):
        g = confounded_session_pag
        i2 = g.node_by_label("I2")
        i5 = g.node_by_label("I5")
        i1 = g.node_by_label("I1")
        assert g.adjacent(i2, i5)
        assert not g.adjacent(i1, i5)  # reaches the recommendation only via I3

    def test_unknown_node_raises(self):
        a, b = make_nodes("a", "b")
        g = Pag([a, b])
        with pytest.raises(GraphError):
            g.adjacent(a, NodeId(5, "ghost"))


class TestMarks:
    def test_mark_at_returns_arrow_into_recommendation(self, confounded_session_pag):
        g = confounded_session_pag
        i2, i5 = g.node_by_label("I2"), g.node_by_label("I5")
        assert g.mark_at(i2, i5) == ARROW
        assert g.mark_at(i5, i2) == CIRCLE

    def test_fresh_edge_is_circle_at_both_ends(self):
        a, b = make_nodes("a", "b")
        g = Pag.complete([a, b])
        assert g.mark_at(a, b) == CIRCLE
        assert g.mark_at(b, a) == CIRCLE

    def test_mark_at_nonadjacent_raises(self):
        a, b, c = make_nodes("a", "b", "c")
        g = Pag([a, b, c])
        g.add_edge(a, b, CIRCLE, ARROW)
        with pytest.raises(GraphError):
            g.mark_at(a, c)

    def test_mark_lookup_is_symmetric_consistent(self):
        a, b = make_nodes("a", "b")
        g = Pag([a, b])
        g.add_edge(b, a, TAIL, ARROW)  # tail at b, arrow at a
        assert g.mark_at(a, b) == TAIL
        assert g.mark_at(b, a) == ARROW


class TestSetMark:
    def test_circle_refines_to_arrow(self):
        a, b = make_nodes("a", "b")
        g = Pag.complete([a, b])
        g.set_mark(a, b, ARROW)
        assert g.mark_at(a, b) == ARROW

    def test_idempotent_reorientation(self):
        a, b = make_nodes("a", "b")
        g = Pag.complete([a, b])
        g.set_mark(a, b, ARROW)
        g.set_mark(a, b, ARROW)  # no-op
        assert g.mark_at(a, b) == ARROW

    def test_arrow_to_tail_conflicts(self):
        a, b = make_nodes("a", "b")
        g = Pag.complete([a, b])
        g.set_mark(a, b, ARROW)
        with pytest.raises(MarkConflictError):
            g.set_mark(a, b, TAIL)

    def test_committed_mark_cannot_revert_to_circle(self):
        a, b = make_nodes("a", "b")
        g = Pag.complete([a, b])
        g.set_mark(a, b, TAIL)
        with pytest.raises(MarkConflictError):
            g.set_mark(a, b, CIRCLE)


class TestUnshieldedCollider:
    def test_confounded_fixture_collider(self, confounded_session_pag):
        g = confounded_session_pag
        i1, i3, i5 = (g.node_by_label(x) for x in ("I1", "I3", "I5"))
        assert g.is_unshielded_collider(i5, i3, i1)
        assert g.is_unshielded_collider(i1, i3, i5)  # symmetric in outer nodes

    def test_chain_is_not_a_collider(self):
        a, b, c = make_nodes("a", "b", "c")
        g = Pag([a, b, c])
        g.add_edge(a, b, TAIL, ARROW)
        g.add_edge(b, c, TAIL, ARROW)
        assert not g.is_unshielded_collider(a, b, c)

    def test_triangle_is_shielded(self):
        a, b, c = make_nodes("a", "b", "c")
        g = Pag([a, b, c])
        g.add_edge(a, b, CIRCLE, ARROW)
        g.add_edge(c, b, CIRCLE, ARROW)
        g.add_edge(a, c, CIRCLE, CIRCLE)
        assert not g.is_unshielded_collider(a, b, c)

    def test_circle_heads_only_count_in_permissive_mode(self):
        a, b, c = make_nodes("a", "b", "c")
        g = Pag([a, b, c])
        g.add_edge(a, b, CIRCLE, CIRCLE)
        g.add_edge(c, b, CIRCLE, ARROW)
        assert not g.is_unshielded_collider(a, b, c)
        assert g.is_unshielded_collider(a, b, c, allow_circle_heads=True)

    def test_distinct_nodes_required(self):
        a, b = make_nodes("a", "b")
        g = Pag.complete([a, b])
        with pytest.raises(GraphError):
            g.is_unshielded_collider(a, b, a)


class TestConstruction:
    def test_self_edge_rejected(self):
        a, b = make_nodes("a", "b")
        g = Pag([a, b])
        with pytest.raises(GraphError):
            g.add_edge(a, a, CIRCLE, CIRCLE)

    def test_duplicate_edge_rejected(self):
        a, b = make_nodes("a", "b")
        g = Pag([a, b])
        g.add_edge(a, b, CIRCLE, CIRCLE)
        with pytest.raises(GraphError):
            g.add_edge(b, a, CIRCLE, CIRCLE)

    def test_sparse_indices_rejected(self):
        with pytest.raises(GraphError):
            Pag([NodeId(0, "a"), NodeId(2, "b")])

    def test_duplicate_labels_rejected(self):
        with pytest.raises(GraphError):
            Pag([NodeId(0, "a"), NodeId(1, "a")])


class TestSerialization:
    def test_text_round_trip_fixture(self, confounded_session_pag):
        g = confounded_session_pag
        assert Pag.from_text(g.to_text()) == g

    def test_text_round_trip_random_graphs(self, rng):
        for _ in range(50):
            g = random_pag(rng, int(rng.integers(2, 9)), edge_prob=0.5)
            assert Pag.from_text(g.to_text()) == g

    def test_text_format_shape(self):
        a, b = make_nodes("a", "b")
        g = Pag([a, b])
        g.add_edge(a, b, CIRCLE, ARROW)
        assert g.to_text() == "pag v1\nnode 0 a\nnode 1 b\nedge a o-> b\n"

    def test_malformed_text_rejected(self):
        with pytest.raises(GraphError):
            Pag.from_text("pag v1\nnode 0 a\nnode 1 b\nedge a x-> b\n")
        with pytest.raises(GraphError):
            Pag.from_text("node 0 a\n")

    def test_dot_export_mentions_marks(self, confounded_session_pag):
        dot = confounded_session_pag.to_dot()
        assert "digraph" in dot
        assert 'label="<->"' in dot
        assert "odot" in dot


class TestSepsetTable:
    def test_round_trip(self):
        t = SepsetTable()
        t.put(3, 1, {2})
        assert t.get(1, 3) == frozenset({2})
        assert t.contains(2, 1, 3)
        assert not t.contains(0, 1, 3)
        assert t.get(0, 1) is None

    def test_endpoint_in_sepset_rejected(self):
        t = SepsetTable()
        with pytest.raises(GraphError):
            t.put(1, 2, {1})


def test_copy_is_independent(confounded_session_pag):
    g = confounded_session_pag
    h = g.copy()
    i1, i3 = g.node_by_label("I1"), g.node_by_label("I3")
    h.set_mark(i3, i1, ARROW)
    assert g.mark_at(i3, i1) == CIRCLE
    assert h.mark_at(i3, i1) == ARROW
    assert g != h
