"""Labeled DAGs over network layers and the label-contraction operation.

Each layer becomes a node labeled by (operation signature, depth): ``7C`` for
a 7x7 convolution, ``F`` for a fully connected layer, ``P2`` for a max pool
with window 2, with depth counted from the input marker.  Contraction merges
every group of equally labeled nodes into one node, keeping the union of
their edges.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from .arch import ConvSpec, DenseSpec, LayerSpec, NetworkSpec, PoolSpec

INPUT = "input"
OUTPUT = "output"

_SIG_KINDS = ("C", "F", "P")


class GraphError(Exception):
    """Structurally invalid architecture graph."""


@dataclass(frozen=True)
class NodeLabel:
    """Operation signature plus distance from the input marker."""

    op: str
    depth: int

    def __post_init__(self):
        if self.depth < 1:
            raise GraphError(f"node depth must be >= 1, got {self.depth}")

    def __str__(self):
        return f"({self.op},{self.depth})"


def op_signature(layer: LayerSpec) -> str:
    """Signature string used for label matching: kernel+C, F, or P+window."""
    if isinstance(layer, ConvSpec):
        return f"{layer.kernel}C"
    if isinstance(layer, DenseSpec):
        return "F"
    return f"P{layer.window}"


@dataclass(frozen=True)
class GraphNode:
    """Internal graph node: label, layer attributes, contributing networks."""

    label: NodeLabel
    op: LayerSpec
    out_channels: int          # declared width; 0 for pooling nodes
    origins: tuple[str, ...]   # names of the parent networks that contributed it


class ArchGraph:
    """A DAG of labeled layer nodes between distinguished input/output markers.

    Node identifiers are ``d<depth>_<signature>_<i>`` where ``i`` disambiguates
    equal labels before contraction.  Edges may also touch the ``input`` and
    ``output`` markers.
    """

    def __init__(self, nodes: dict[str, GraphNode], edges: set[tuple[str, str]]):
        self.nodes = dict(nodes)
        self.edges = set(edges)

    def successors(self, node_id):
        return sorted(v for u, v in self.edges if u == node_id)

    def predecessors(self, node_id):
        return sorted(u for u, v in self.edges if v == node_id)

    def output_feeders(self):
        """Internal nodes with an edge into the output marker, sorted by id."""
        return self.predecessors(OUTPUT)

    def canonical(self):
        """Hashable structural form; requires unique labels (post contraction)."""
        by_label = {}
        for node in self.nodes.values():
            if node.label in by_label:
                raise GraphError(f"labels not unique: {node.label}")
            by_label[node.label] = node
        id_to_label = {i: str(n.label) for i, n in self.nodes.items()}
        id_to_label[INPUT] = INPUT
        id_to_label[OUTPUT] = OUTPUT
        nodes = tuple(
            (str(n.label), n.op, n.out_channels, n.origins)
            for _, n in sorted(self.nodes.items(), key=lambda kv: (kv[1].label.depth, kv[0]))
        )
        edges = tuple(sorted((id_to_label[u], id_to_label[v]) for u, v in self.edges))
        return nodes, edges


def _node_id(label: NodeLabel, index: int) -> str:
    return f"d{label.depth}_{label.op}_{index}"


def network_to_graph(spec: NetworkSpec) -> ArchGraph:
    """Translate a layer chain into its graph: input -> L1 -> ... -> Ln -> output."""
    nodes = {}
    edges = set()
    prev = INPUT
    for depth, layer in enumerate(spec.layers, start=1):
        label = NodeLabel(op_signature(layer), depth)
        nid = _node_id(label, 0)
        width = 0
        if isinstance(layer, ConvSpec):
            width = layer.out_channels
        elif isinstance(layer, DenseSpec):
            width = layer.units
        nodes[nid] = GraphNode(label=label, op=layer, out_channels=width, origins=(spec.name,))
        edges.add((prev, nid))
        prev = nid
    edges.add((prev, OUTPUT))
    return ArchGraph(nodes, edges)


def parallel_compose(graphs: list[ArchGraph]) -> ArchGraph:
    """Place graphs side by side sharing one input and one output marker.

    No internal nodes are merged; equal labels from different graphs get
    distinct identifiers (indexed in argument order).
    """
    if not graphs:
        raise GraphError("parallel composition needs at least one graph")
    counts: dict[NodeLabel, int] = {}
    nodes = {}
    edges = set()
    for g in graphs:
        rename = {INPUT: INPUT, OUTPUT: OUTPUT}
        for old_id, node in sorted(g.nodes.items()):
            idx = counts.get(node.label, 0)
            counts[node.label] = idx + 1
            rename[old_id] = _node_id(node.label, idx)
            nodes[rename[old_id]] = node
        for u, v in g.edges:
            edges.add((rename[u], rename[v]))
    return ArchGraph(nodes, edges)


def _resolve_class(members: list[GraphNode], feeds_output: bool) -> GraphNode:
    """Collapse a label class into one node.

    Width is the maximum member width, batch norm is kept if any member has
    it, and the activation is the members' unanimous choice, with sigmoid for
    output-feeding nodes and relu otherwise as the tie break.
    """
    label = members[0].label
    origins = tuple(sorted({name for m in members for name in m.origins}))
    op = members[0].op
    if isinstance(op, PoolSpec):
        return GraphNode(label=label, op=op, out_channels=0, origins=origins)
    width = max(m.out_channels for m in members)
    acts = {m.op.activation for m in members}
    if len(acts) == 1:
        act = acts.pop()
    else:
        act = "sigmoid" if feeds_output else "relu"
    if isinstance(op, ConvSpec):
        bn = any(m.op.batch_norm for m in members)
        op = ConvSpec(kernel=op.kernel, out_channels=width, batch_norm=bn, activation=act)
    else:
        op = DenseSpec(units=width, activation=act)
    return GraphNode(label=label, op=op, out_channels=width, origins=origins)


def contract(g: ArchGraph) -> ArchGraph:
    """Merge all equally labeled nodes, keeping the union of their edges.

    Input and output markers never take part in the merging.  The result has
    one node per distinct label, so a second contraction is the identity.
    """
    classes: dict[NodeLabel, list[str]] = {}
    for nid, node in sorted(g.nodes.items()):
        classes.setdefault(node.label, []).append(nid)
    rename = {INPUT: INPUT, OUTPUT: OUTPUT}
    for label, ids in classes.items():
        new_id = _node_id(label, 0)
        for old in ids:
            rename[old] = new_id
    edges = {(rename[u], rename[v]) for u, v in g.edges}
    to_output = {u for u, v in edges if v == OUTPUT}
    nodes = {}
    for label, ids in classes.items():
        new_id = _node_id(label, 0)
        members = [g.nodes[i] for i in ids]
        nodes[new_id] = _resolve_class(members, feeds_output=new_id in to_output)
    out = ArchGraph(nodes, edges)
    violations = validate_graph(out)
    if violations:
        raise GraphError("contraction produced an invalid graph: " + "; ".join(violations))
    return out


def validate_graph(g: ArchGraph) -> list[str]:
    """Return invariant violations (empty list when the graph is valid).

    Checks marker presence, edge endpoints, the depth(+1) rule on internal
    edges, and that every node lies on some input-to-output path.  Acyclicity
    follows from the depth rule.
    """
    problems = []
    ids = set(g.nodes)
    for u, v in sorted(g.edges):
        for end in (u, v):
            if end not in ids and end not in (INPUT, OUTPUT):
                problems.append(f"edge ({u}, {v}) references unknown node {end}")
        if u == OUTPUT or v == INPUT:
            problems.append(f"edge ({u}, {v}) enters the input or leaves the output marker")
        if u in g.nodes and v in g.nodes:
            du, dv = g.nodes[u].label.depth, g.nodes[v].label.depth
            if dv != du + 1:
                problems.append(f"edge ({u}, {v}) jumps depth {du} -> {dv}")
    if not any(u == INPUT for u, _ in g.edges):
        problems.append("no edge leaves the input marker")
    if not any(v == OUTPUT for _, v in g.edges):
        problems.append("no edge reaches the output marker")

    fwd = _reachable(g.edges, INPUT, forward=True)
    bwd = _reachable(g.edges, OUTPUT, forward=False)
    for nid in sorted(ids):
        if nid not in fwd or nid not in bwd:
            problems.append(f"node {nid} is not on any input-to-output path")
    return problems


def _reachable(edges, start, forward):
    adj: dict[str, list[str]] = {}
    for u, v in edges:
        if forward:
            adj.setdefault(u, []).append(v)
        else:
            adj.setdefault(v, []).append(u)
    seen = {start}
    stack = [start]
    while stack:
        for nxt in adj.get(stack.pop(), []):
            if nxt not in seen:
                seen.add(nxt)
                stack.append(nxt)
    return seen


def dump_graph(g: ArchGraph) -> str:
    """Stable, diffable text dump: one node line, then one edge line per edge."""
    lines = []
    for nid in sorted(g.nodes):
        node = g.nodes[nid]
        origins = ",".join(node.origins)
        lines.append(f"{nid} depth={node.label.depth} origins={origins}")
    for u, v in sorted(g.edges):
        lines.append(f"{u} -> {v}")
    return "\n".join(lines) + "\n"
