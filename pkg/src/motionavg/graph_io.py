"""Plain-text view-graph format.

One record per line, whitespace separated, ``#`` starts a comment::

    NODE  <id> <focal> <width> <height>
    EDGE  <i> <j> <qw> <qx> <qy> <qz> <tx> <ty> <tz>
    BOX   <i> <j> <xi> <yi> <wi> <hi> <xj> <yj> <wj> <hj>
    GT    <id> <qw> <qx> <qy> <qz> <cx> <cy> <cz>

A container file holds several graphs, each introduced by ``GRAPH <name>``.
Predicted poses use their own one-line record,
``POSE <graph> <node> <qw> <qx> <qy> <qz> <cx> <cy> <cz>``.
Floats are written with 17 significant digits so parsing is exact.
"""

from __future__ import annotations

from typing import Iterable

import numpy as np

from .errors import DuplicateEdge, ParseError, UnknownNodeRef
from .graph import AbsolutePoseSet, CameraNode, CameraPose, DetectionBox, RelativePoseEdge, ViewGraph
from .so3 import UnitQuaternion

_ARITY = {"NODE": 4, "EDGE": 9, "BOX": 10, "GT": 8}


def fmt(x: float) -> str:
    return format(float(x), ".17g")


def _ints(tokens, lineno):
    try:
        return [int(t) for t in tokens]
    except ValueError:
        raise ParseError(f"expected integer in {tokens}", lineno) from None


def _floats(tokens, lineno):
    try:
        vals = [float(t) for t in tokens]
    except ValueError:
        raise ParseError(f"expected number in {tokens}", lineno) from None
    if not all(np.isfinite(vals)):
        raise ParseError("non-finite number", lineno)
    return vals


def _build(records: list[tuple[int, list[str]]]) -> ViewGraph:
    nodes: dict[int, CameraNode] = {}
    edges: dict[frozenset, RelativePoseEdge] = {}
    edge_lines: dict[frozenset, int] = {}
    boxes: dict[frozenset, list] = {}
    gt: dict[int, CameraPose] = {}

    for lineno, tok in records:
        kind, args = tok[0], tok[1:]
        if kind not in _ARITY:
            raise ParseError(f"unknown record type {kind!r}", lineno)
        if len(args) != _ARITY[kind]:
            raise ParseError(f"{kind} expects {_ARITY[kind]} fields, got {len(args)}", lineno)
        if kind == "NODE":
            (nid,) = _ints(args[:1], lineno)
            w, h = _ints(args[2:], lineno)
            (focal,) = _floats(args[1:2], lineno)
            if nid in nodes:
                raise ParseError(f"duplicate node {nid}", lineno)
            try:
                nodes[nid] = CameraNode(nid, focal, w, h)
            except ValueError as exc:
                raise ParseError(str(exc), lineno) from None
        elif kind == "EDGE":
            i, j = _ints(args[:2], lineno)
            vals = _floats(args[2:], lineno)
            if i == j:
                raise ParseError(f"self-loop on node {i}", lineno)
            for end in (i, j):
                if end not in nodes:
                    raise UnknownNodeRef(f"edge refers to unknown node {end}", lineno)
            pair = frozenset((i, j))
            if pair in edges:
                raise DuplicateEdge(f"second edge between {i} and {j}", lineno)
            try:
                edges[pair] = RelativePoseEdge(i, j, UnitQuaternion(*vals[:4]), tuple(vals[4:]))
            except ValueError as exc:
                raise ParseError(str(exc), lineno) from None
            edge_lines[pair] = lineno
        elif kind == "BOX":
            i, j = _ints(args[:2], lineno)
            vals = _floats(args[2:], lineno)
            pair = frozenset((i, j))
            if pair not in edges or edges[pair].key != (i, j):
                raise ParseError(f"BOX {i} {j} has no matching EDGE {i} {j} before it", lineno)
            try:
                boxes.setdefault(pair, []).append((DetectionBox(*vals[:4]), DetectionBox(*vals[4:])))
            except ValueError as exc:
                raise ParseError(str(exc), lineno) from None
        else:
            (nid,) = _ints(args[:1], lineno)
            vals = _floats(args[1:], lineno)
            if nid not in nodes:
                raise UnknownNodeRef(f"GT refers to unknown node {nid}", lineno)
            if nid in gt:
                raise ParseError(f"duplicate GT for node {nid}", lineno)
            try:
                gt[nid] = CameraPose(UnitQuaternion(*vals[:4]), tuple(vals[4:]))
            except ValueError as exc:
                raise ParseError(str(exc), lineno) from None

    if gt and set(gt) != set(nodes):
        missing = sorted(set(nodes) - set(gt))
        raise ParseError(f"GT missing for nodes {missing}")
    final_edges = []
    for pair, e in edges.items():
        if pair in boxes:
            e = RelativePoseEdge(e.i, e.j, e.rotation, e.translation, tuple(boxes[pair]))
        final_edges.append(e)
    return ViewGraph(tuple(nodes.values()), tuple(final_edges), gt or None)


def _records(lines: Iterable[str], start: int = 1):
    for lineno, raw in enumerate(lines, start):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield lineno, line.split()


def parse_graph(text: str) -> ViewGraph:
    recs = list(_records(text.splitlines()))
    if recs and recs[0][1][0] == "GRAPH":
        recs = recs[1:]
    for lineno, tok in recs:
        if tok[0] == "GRAPH":
            raise ParseError("multiple GRAPH headers; use parse_graphs", lineno)
    return _build(recs)


def parse_graphs(text: str) -> list[tuple[str, ViewGraph]]:
    """Parse a multi-graph container into (name, graph) pairs in file order."""
    out: list[tuple[str, ViewGraph]] = []
    name: str | None = None
    current: list = []
    names = set()
    for lineno, tok in _records(text.splitlines()):
        if tok[0] == "GRAPH":
            if len(tok) != 2:
                raise ParseError("GRAPH expects exactly one name", lineno)
            if name is not None:
                out.append((name, _build(current)))
            name, current = tok[1], []
            if name in names:
                raise ParseError(f"duplicate graph name {name!r}", lineno)
            names.add(name)
        else:
            if name is None:
                raise ParseError("record before the first GRAPH header", lineno)
            current.append((lineno, tok))
    if name is not None:
        out.append((name, _build(current)))
    return out


def serialize_graph(g: ViewGraph) -> str:
    lines = []
    for n in g.nodes:
        lines.append(f"NODE {n.id} {fmt(n.focal)} {n.width} {n.height}")
    for e in g.edges:
        q = e.rotation
        vals = [q.w, q.x, q.y, q.z, *e.translation]
        lines.append(f"EDGE {e.i} {e.j} " + " ".join(fmt(v) for v in vals))
        for bi, bj in e.boxes:
            vals = [bi.x, bi.y, bi.bb_w, bi.bb_h, bj.x, bj.y, bj.bb_w, bj.bb_h]
            lines.append(f"BOX {e.i} {e.j} " + " ".join(fmt(v) for v in vals))
    if g.ground_truth:
        for nid, p in g.ground_truth.items():
            q = p.rotation
            vals = [q.w, q.x, q.y, q.z, *p.center]
            lines.append(f"GT {nid} " + " ".join(fmt(v) for v in vals))
    return "\n".join(lines) + "\n"


def serialize_graphs(graphs: Iterable[tuple[str, ViewGraph]]) -> str:
    chunks = []
    for name, g in graphs:
        if not name or any(c.isspace() for c in name):
            raise ValueError(f"invalid graph name {name!r}")
        chunks.append(f"GRAPH {name}\n" + serialize_graph(g))
    return "".join(chunks)


def serialize_poses(poses: Iterable[tuple[str, AbsolutePoseSet | None]]) -> str:
    """POSE lines in the given graph order and ascending node id; ``None`` entries are left out."""
    lines = []
    for name, ps in poses:
        if ps is None:
            continue
        for nid in ps.node_ids:
            q = UnitQuaternion.from_matrix(ps.rotations[nid])
            vals = [q.w, q.x, q.y, q.z, *ps.centers[nid]]
            lines.append(f"POSE {name} {nid} " + " ".join(fmt(v) for v in vals))
    return "\n".join(lines) + ("\n" if lines else "")


def parse_poses(text: str) -> dict[str, AbsolutePoseSet]:
    """Inverse of :func:`serialize_poses`; graphs keep first-appearance order."""
    rot: dict[str, dict] = {}
    cen: dict[str, dict] = {}
    for lineno, tok in _records(text.splitlines()):
        if tok[0] != "POSE":
            raise ParseError(f"unknown record {tok[0]!r}", lineno)
        if len(tok) != 10:
            raise ParseError(f"POSE expects 9 fields, got {len(tok) - 1}", lineno)
        name, (nid,) = tok[1], _ints(tok[2:3], lineno)
        vals = _floats(tok[3:], lineno)
        if nid in rot.setdefault(name, {}):
            raise ParseError(f"duplicate pose for node {nid} in graph {name!r}", lineno)
        try:
            rot[name][nid] = UnitQuaternion(*vals[:4]).to_matrix()
        except ValueError as exc:
            raise ParseError(str(exc), lineno) from None
        cen.setdefault(name, {})[nid] = np.array(vals[4:])
    return {name: AbsolutePoseSet(rot[name], cen[name]) for name in rot}
