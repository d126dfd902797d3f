"""Mixed-graph data model with three endpoint marks: arrow, tail, circle.

Each unordered node pair owns a single edge record holding the mark at both
endpoints, so the two query directions can never disagree by construction.
Orientation is monotone: a circle may be refined to an arrow or a tail, but
committed arrows and tails never change.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Iterator


class GraphError(ValueError):
    """Query on an unknown node, a missing edge, or a malformed graph."""


class MarkConflictError(GraphError):
    """An orientation tried to overwrite a committed arrow or tail."""


class EdgeMark(Enum):
    ARROW = "arrow"
    TAIL = "tail"
    CIRCLE = "circle"


@dataclass(frozen=True, order=True)
class NodeId:
    """Graph node: dense position index plus an opaque item label.

    The index encodes temporal order (session position); the node appended
    for the recommendation carries the largest index.
    """

    index: int
    label: str


# text-format endpoint characters, by side of the edge string
_LEFT_CHAR = {EdgeMark.ARROW: "<", EdgeMark.TAIL: "-", EdgeMark.CIRCLE: "o"}
_RIGHT_CHAR = {EdgeMark.ARROW: ">", EdgeMark.TAIL: "-", EdgeMark.CIRCLE: "o"}
_LEFT_MARK = {c: m for m, c in _LEFT_CHAR.items()}
_RIGHT_MARK = {c: m for m, c in _RIGHT_CHAR.items()}

_DOT_HEAD = {EdgeMark.ARROW: "normal", EdgeMark.TAIL: "none", EdgeMark.CIRCLE: "odot"}


class Pag:
    """Partial ancestral graph over a fixed node set.

    Nodes must have unique, dense indices (0..m-1) and unique labels.
    Construction is single-threaded; once a discovery run has produced a
    graph it is treated as an immutable snapshot and is safe to share
    read-only across threads.
    """

    def __init__(self, nodes: Iterable[NodeId]):
        nodes = sorted(nodes)
        indices = [n.index for n in nodes]
        if indices != list(range(len(nodes))):
            raise GraphError(f"node indices must be dense 0..{len(nodes) - 1}, got {indices}")
        labels = [n.label for n in nodes]
        if len(set(labels)) != len(labels):
            raise GraphError("node labels must be unique")
        for lab in labels:
            if not lab or any(ch.isspace() for ch in lab):
                raise GraphError(f"label {lab!r} is empty or contains whitespace")
        self._nodes: dict[int, NodeId] = {n.index: n for n in nodes}
        self._by_label: dict[str, NodeId] = {n.label: n for n in nodes}
        self._edges: dict[tuple[int, int], tuple[EdgeMark, EdgeMark]] = {}

    @classmethod
    def complete(cls, nodes: Iterable[NodeId]) -> "Pag":
        """Complete graph with circle marks at every endpoint."""
        g = cls(nodes)
        ordered = g.nodes
        for a in range(len(ordered)):
            for b in range(a + 1, len(ordered)):
                g.add_edge(ordered[a], ordered[b], EdgeMark.CIRCLE, EdgeMark.CIRCLE)
        return g

    # -- node access ---------------------------------------------------------

    @property
    def nodes(self) -> tuple[NodeId, ...]:
        return tuple(self._nodes[i] for i in range(len(self._nodes)))

    def node_by_label(self, label: str) -> NodeId:
        try:
            return self._by_label[label]
        except KeyError:
            raise GraphError(f"unknown node label {label!r}") from None

    def _check(self, x: NodeId) -> None:
        if self._nodes.get(x.index) != x:
            raise GraphError(f"unknown node {x}")

    @staticmethod
    def _key(x: NodeId, y: NodeId) -> tuple[int, int]:
        return (x.index, y.index) if x.index < y.index else (y.index, x.index)

    # -- edge access ---------------------------------------------------------

    def add_edge(self, x: NodeId, y: NodeId, mark_at_x: EdgeMark, mark_at_y: EdgeMark) -> None:
        self._check(x)
        self._check(y)
        if x == y:
            raise GraphError(f"self-edge at {x.label}")
        key = self._key(x, y)
        if key in self._edges:
            raise GraphError(f"edge {x.label}-{y.label} already present")
        if key[0] == x.index:
            self._edges[key] = (mark_at_x, mark_at_y)
        else:
            self._edges[key] = (mark_at_y, mark_at_x)

    def remove_edge(self, x: NodeId, y: NodeId) -> None:
        self._check(x)
        self._check(y)
        try:
            del self._edges[self._key(x, y)]
        except KeyError:
            raise GraphError(f"no edge {x.label}-{y.label}") from None

    def adjacent(self, x: NodeId, y: NodeId) -> bool:
        self._check(x)
        self._check(y)
        return self._key(x, y) in self._edges

    def mark_at(self, x: NodeId, y: NodeId) -> EdgeMark:
        """Mark at endpoint ``y`` of edge {x, y}."""
        self._check(x)
        self._check(y)
        marks = self._edges.get(self._key(x, y))
        if marks is None:
            raise GraphError(f"no edge {x.label}-{y.label}")
        return marks[1] if x.index < y.index else marks[0]

    def set_mark(self, x: NodeId, y: NodeId, mark: EdgeMark) -> None:
        """Refine the mark at endpoint ``y`` of edge {x, y}.

        Setting the current mark again is a no-op; anything other than
        refining a circle raises MarkConflictError, which signals an
        unsound orientation (typically a too-permissive significance level).
        """
        current = self.mark_at(x, y)
        if current == mark:
            return
        if current != EdgeMark.CIRCLE:
            raise MarkConflictError(
                f"conflicting orientation at {y.label} on edge {x.label}-{y.label}: "
                f"{current.value} -> {mark.value}"
            )
        key = self._key(x, y)
        old = self._edges[key]
        if x.index < y.index:
            self._edges[key] = (old[0], mark)
        else:
            self._edges[key] = (mark, old[1])

    def neighbors(self, x: NodeId) -> list[NodeId]:
        self._check(x)
        out = []
        for (a, b) in self._edges:
            if a == x.index:
                out.append(self._nodes[b])
            elif b == x.index:
                out.append(self._nodes[a])
        return sorted(out)

    def edges(self) -> Iterator[tuple[NodeId, NodeId, EdgeMark, EdgeMark]]:
        """Edges as (x, y, mark_at_x, mark_at_y), x.index < y.index, sorted."""
        for (a, b) in sorted(self._edges):
            ma, mb = self._edges[(a, b)]
            yield self._nodes[a], self._nodes[b], ma, mb

    @property
    def edge_count(self) -> int:
        return len(self._edges)

    # -- structural queries --------------------------------------------------

    def _head_at(self, x: NodeId, v: NodeId, allow_circle_heads: bool) -> bool:
        m = self.mark_at(x, v)
        return m == EdgeMark.ARROW or (allow_circle_heads and m == EdgeMark.CIRCLE)

    def is_unshielded_collider(
        self, u: NodeId, v: NodeId, w: NodeId, *, allow_circle_heads: bool = False
    ) -> bool:
        """True iff u *-> v <-* w with u and w non-adjacent.

        Symmetric in u and w.  With ``allow_circle_heads`` a circle at v is
        accepted as a possible arrowhead (permissive equivalence-class
        reading); the default counts definite arrowheads only.
        """
        if len({u, v, w}) != 3:
            raise GraphError("collider query requires three distinct nodes")
        if not (self.adjacent(u, v) and self.adjacent(w, v)):
            return False
        if self.adjacent(u, w):
            return False
        return self._head_at(u, v, allow_circle_heads) and self._head_at(w, v, allow_circle_heads)

    def any_bidirected(self) -> bool:
        return any(
            marks == (EdgeMark.ARROW, EdgeMark.ARROW) for marks in self._edges.values()
        )

    def copy(self) -> "Pag":
        g = Pag(self.nodes)
        g._edges = dict(self._edges)
        return g

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Pag):
            return NotImplemented
        return self._nodes == other._nodes and self._edges == other._edges

    def __repr__(self) -> str:
        return f"Pag(nodes={len(self._nodes)}, edges={len(self._edges)})"

    # -- serialization -------------------------------------------------------

    def to_text(self) -> str:
        """Canonical text form: node lines then one edge per line, sorted."""
        lines = ["pag v1"]
        for n in self.nodes:
            lines.append(f"node {n.index} {n.label}")
        for x, y, mx, my in self.edges():
            lines.append(f"edge {x.label} {_LEFT_CHAR[mx]}-{_RIGHT_CHAR[my]} {y.label}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "Pag":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines or lines[0].strip() != "pag v1":
            raise GraphError("missing 'pag v1' header")
        nodes = []
        edge_lines = []
        for ln in lines[1:]:
            parts = ln.split()
            if parts[0] == "node" and len(parts) == 3:
                nodes.append(NodeId(int(parts[1]), parts[2]))
            elif parts[0] == "edge" and len(parts) == 4:
                edge_lines.append(parts)
            else:
                raise GraphError(f"malformed line: {ln!r}")
        g = cls(nodes)
        for _, xl, marks, yl in edge_lines:
            if len(marks) != 3 or marks[1] != "-" or marks[0] not in _LEFT_MARK or marks[2] not in _RIGHT_MARK:
                raise GraphError(f"malformed mark pair {marks!r}")
            g.add_edge(g.node_by_label(xl), g.node_by_label(yl), _LEFT_MARK[marks[0]], _RIGHT_MARK[marks[2]])
        return g

    def to_dot(self) -> str:
        """DOT export; endpoint marks are drawn and repeated in edge labels."""
        lines = ["digraph pag {", "  edge [dir=both];"]
        for n in self.nodes:
            lines.append(f'  "{n.label}";')
        for x, y, mx, my in self.edges():
            label = f"{_LEFT_CHAR[mx]}-{_RIGHT_CHAR[my]}"
            lines.append(
                f'  "{x.label}" -> "{y.label}" '
                f'[arrowtail={_DOT_HEAD[mx]}, arrowhead={_DOT_HEAD[my]}, label="{label}"];'
            )
        lines.append("}")
        return "\n".join(lines) + "\n"


class SepsetTable:
    """Separating sets found while removing edges, keyed by unordered pair.

    An entry exists exactly for the pairs made non-adjacent during skeleton
    learning; the stored set never contains either endpoint.
    """

    def __init__(self):
        self._table: dict[tuple[int, int], frozenset[int]] = {}

    @staticmethod
    def _key(i: int, j: int) -> tuple[int, int]:
        return (i, j) if i < j else (j, i)

    def put(self, i: int, j: int, sepset: Iterable[int]) -> None:
        s = frozenset(sepset)
        if i in s or j in s:
            raise GraphError(f"separating set for ({i},{j}) contains an endpoint")
        self._table[self._key(i, j)] = s

    def get(self, i: int, j: int) -> frozenset[int] | None:
        return self._table.get(self._key(i, j))

    def contains(self, v: int, i: int, j: int) -> bool:
        s = self.get(i, j)
        return s is not None and v in s

    def pairs(self) -> list[tuple[int, int]]:
        return sorted(self._table)

    def __len__(self) -> int:
        return len(self._table)
