"""Back-translation of a contracted graph into an executable merged network.

Concatenation happens implicitly wherever a node has two or more feeders.
The nodes that feed the output marker are combined by an output-merge layer:
a (k, k, N*p, p) convolution when the parents produce p-channel images, or a
(p*N, p) dense map when they produce length-p vectors.  Hidden widths are
solved so the merged parameter count lands near the parents' mean.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

from .arch import (
    ArchError,
    ConvSpec,
    DenseSpec,
    LayerSpec,
    NetworkSpec,
    ParseError,
    PoolSpec,
    _significant_lines,
    count_params,
    layer_params,
    parse_layer_line,
    serialize_layer,
)
from .graph import INPUT, ArchGraph, contract, network_to_graph, op_signature, parallel_compose


class MergeError(ArchError):
    """Merge construction failed (mixed output kinds, shape mismatch, ...)."""


class InfeasibleParityError(MergeError):
    """Width solving cannot reach the target parameter count.

    Carries the closest achievable count so callers can report how far off
    the best width assignment was.
    """

    def __init__(self, target, best_count, tolerance):
        self.target = target
        self.best_count = best_count
        self.tolerance = tolerance
        err = abs(best_count - target) / target
        super().__init__(
            f"cannot reach {target:.0f} params within {tolerance:.3%}: "
            f"closest achievable count is {best_count} ({err:.3%} off)"
        )


@dataclass(frozen=True)
class MergeOptions:
    """Knobs for the merge: parity target/tolerance and output-merge kernel."""

    target_params: int = 0          # 0 means: use the mean of the parents' counts
    parity_tolerance: float = 0.10
    output_merge_kernel: int = 1

    def __post_init__(self):
        if not 0 < self.parity_tolerance < 1:
            raise MergeError("parity_tolerance must be in (0, 1)")
        if self.output_merge_kernel < 1 or self.output_merge_kernel % 2 == 0:
            raise MergeError("output merge kernel must be odd and positive")
        if self.target_params < 0:
            raise MergeError("target_params must be >= 0")


@dataclass(frozen=True)
class ConvMerge:
    kernel: int
    in_channels: int
    out_channels: int

    kind = "conv"


@dataclass(frozen=True)
class DenseMerge:
    in_units: int
    out_units: int

    kind = "dense"


@dataclass(frozen=True)
class Passthrough:
    kind = "pass"


@dataclass(frozen=True)
class MergedNode:
    """One computation node: operation, resolved channels, feeder ids."""

    node_id: str
    op: LayerSpec
    feeders: tuple[str, ...]
    in_channels: int

    @property
    def out_channels(self):
        if isinstance(self.op, ConvSpec):
            return self.op.out_channels
        if isinstance(self.op, DenseSpec):
            return self.op.units
        return self.in_channels


@dataclass(frozen=True)
class NodeDims:
    """Resolved dimensioning of one node for a concrete input shape."""

    in_channels: int
    fan_in: int                  # flattened input length (dense weight rows)
    out_shape: tuple             # (C, H, W) while spatial, (F,) once flattened


@dataclass(frozen=True)
class MergedNetworkSpec:
    """DAG-shaped network with concatenation points and an output merge.

    ``nodes`` is topologically ordered; a node with several feeders
    concatenates them channel-wise before applying its operation.
    """

    name: str
    input_shape: tuple[int, int, int]
    nodes: tuple[MergedNode, ...]
    output_merge: ConvMerge | DenseMerge | Passthrough
    merge_feeders: tuple[str, ...]

    def __post_init__(self):
        if not self.nodes:
            raise MergeError("merged network must have at least one node")
        seen = set()
        for node in self.nodes:
            for f in node.feeders:
                if f != INPUT and f not in seen:
                    raise MergeError(f"node {node.node_id}: feeder {f} does not precede it")
            if node.node_id in seen:
                raise MergeError(f"duplicate node id {node.node_id}")
            seen.add(node.node_id)
        if not self.merge_feeders:
            raise MergeError("output merge needs at least one feeder")
        for f in self.merge_feeders:
            if f not in seen:
                raise MergeError(f"output merge feeder {f} is not a node")
        if isinstance(self.output_merge, Passthrough) and len(self.merge_feeders) != 1:
            raise MergeError("passthrough output requires exactly one feeder")
        self.dims()  # validates channel bookkeeping and spatial agreement

    def node_map(self):
        return {n.node_id: n for n in self.nodes}

    def dims(self, input_channels: int | None = None) -> dict[str, NodeDims]:
        """Resolve per-node dimensions; raises MergeError on inconsistency."""
        h, w, c = self.input_shape
        if input_channels is not None:
            c = input_channels
        shapes = {INPUT: (c, h, w)}
        out = {}
        for node in self.nodes:
            feeds = [shapes[f] for f in node.feeders]
            spatial = [s for s in feeds if len(s) == 3]
            if spatial and len(spatial) != len(feeds):
                raise MergeError(f"node {node.node_id}: cannot concatenate image and vector feeders")
            if spatial:
                hw = {(s[1], s[2]) for s in spatial}
                if len(hw) > 1:
                    raise MergeError(f"node {node.node_id}: feeder spatial sizes differ: {sorted(hw)}")
            cin = sum(s[0] for s in feeds)
            if cin != node.in_channels:
                raise MergeError(
                    f"node {node.node_id}: in_channels {node.in_channels} != "
                    f"sum of feeder channels {cin}"
                )
            if isinstance(node.op, DenseSpec):
                fan_in = sum(s[0] * s[1] * s[2] if len(s) == 3 else s[0] for s in feeds)
                shape = (node.op.units,)
            elif isinstance(node.op, ConvSpec):
                if not spatial:
                    raise MergeError(f"node {node.node_id}: conv needs an image input")
                fan_in = cin
                shape = (node.op.out_channels, spatial[0][1], spatial[0][2])
            else:
                if not spatial:
                    raise MergeError(f"node {node.node_id}: maxpool needs an image input")
                win = node.op.window
                nh, nw = spatial[0][1] // win, spatial[0][2] // win
                if nh < 1 or nw < 1:
                    raise MergeError(f"node {node.node_id}: pooling underflows spatial size")
                fan_in = 0
                shape = (cin, nh, nw)
            shapes[node.node_id] = shape
            out[node.node_id] = NodeDims(in_channels=cin, fan_in=fan_in, out_shape=shape)

        feeds = [shapes[f] for f in self.merge_feeders]
        om = self.output_merge
        if isinstance(om, ConvMerge):
            if any(len(s) != 3 for s in feeds):
                raise MergeError("conv output merge requires image feeders")
            if len({(s[1], s[2]) for s in feeds}) > 1:
                raise MergeError("output merge feeders have differing spatial sizes")
            cin = sum(s[0] for s in feeds)
            if cin != om.in_channels:
                raise MergeError(f"output merge in_channels {om.in_channels} != {cin}")
        elif isinstance(om, DenseMerge):
            if any(len(s) != 1 for s in feeds):
                raise MergeError("dense output merge requires vector feeders")
            fin = sum(s[0] for s in feeds)
            if fin != om.in_units:
                raise MergeError(f"output merge in_units {om.in_units} != {fin}")
        return out

    def count_params(self, input_channels: int | None = None) -> int:
        """Trainable parameters over all nodes plus the output-merge layer."""
        dims = self.dims(input_channels)
        total = sum(layer_params(n.op, dims[n.node_id].fan_in) for n in self.nodes)
        om = self.output_merge
        if isinstance(om, ConvMerge):
            total += om.kernel * om.kernel * om.in_channels * om.out_channels + om.out_channels
        elif isinstance(om, DenseMerge):
            total += om.in_units * om.out_units + om.out_units
        return total

    @property
    def output_arity(self):
        om = self.output_merge
        if isinstance(om, ConvMerge):
            return om.out_channels
        if isinstance(om, DenseMerge):
            return om.out_units
        return self.node_map()[self.merge_feeders[0]].out_channels


def chain_to_merged(spec: NetworkSpec) -> MergedNetworkSpec:
    """View a plain layer chain as a merged network with a passthrough output."""
    nodes = []
    prev = INPUT
    cin = spec.input_shape[2]
    for depth, layer in enumerate(spec.layers, start=1):
        nid = f"d{depth}_{op_signature(layer)}_0"
        node = MergedNode(node_id=nid, op=layer, feeders=(prev,), in_channels=cin)
        nodes.append(node)
        cin = node.out_channels
        prev = nid
    return MergedNetworkSpec(
        name=spec.name,
        input_shape=spec.input_shape,
        nodes=tuple(nodes),
        output_merge=Passthrough(),
        merge_feeders=(prev,),
    )


def _origin_rank(node, origin_order):
    ranks = [origin_order.index(o) for o in node.origins if o in origin_order]
    return min(ranks) if ranks else len(origin_order)


def _ordered_feeders(graph, node_id, origin_order):
    """Frozen concatenation order: input marker first, then feeders by the
    earliest contributing parent, then by depth and id for a total order."""
    def key(fid):
        if fid == INPUT:
            return (0, 0, 0, "")
        node = graph.nodes[fid]
        return (1, _origin_rank(node, origin_order), node.label.depth, fid)

    return tuple(sorted(graph.predecessors(node_id), key=key))


def graph_to_network(
    graph: ArchGraph,
    widths: dict[str, int],
    opts: MergeOptions = MergeOptions(),
    *,
    name: str = "merged",
    input_shape: tuple[int, int, int],
    origin_order: list[str] | None = None,
) -> MergedNetworkSpec:
    """Translate a contracted graph into a merged network spec.

    ``widths`` assigns an output channel count to every conv/dense node.
    Output-feeding nodes must share one width p; the output merge maps the
    N*p concatenated channels back to p.
    """
    if origin_order is None:
        origin_order = sorted({o for n in graph.nodes.values() for o in n.origins})
    order = sorted(graph.nodes, key=lambda nid: (graph.nodes[nid].label.depth, nid))
    widths_resolved = {}
    nodes = []
    h, w, c = input_shape
    for nid in order:
        gnode = graph.nodes[nid]
        feeders = _ordered_feeders(graph, nid, origin_order)
        cin = sum(c if f == INPUT else widths_resolved[f] for f in feeders)
        op = gnode.op
        if isinstance(op, PoolSpec):
            widths_resolved[nid] = cin
        else:
            if nid not in widths:
                raise MergeError(f"missing width for node {nid}")
            width = widths[nid]
            if width < 1:
                raise MergeError(f"width for node {nid} must be >= 1")
            if isinstance(op, ConvSpec):
                op = replace(op, out_channels=width)
            else:
                op = replace(op, units=width)
            widths_resolved[nid] = width
        nodes.append(MergedNode(node_id=nid, op=op, feeders=feeders, in_channels=cin))

    feeders = tuple(sorted(
        graph.output_feeders(),
        key=lambda fid: (_origin_rank(graph.nodes[fid], origin_order),
                         graph.nodes[fid].label.depth, fid),
    ))
    if not feeders:
        raise MergeError("graph has no node feeding the output marker")
    feeder_ops = [graph.nodes[f].op for f in feeders]
    if any(isinstance(op, PoolSpec) for op in feeder_ops):
        raise MergeError("output feeders must be conv or dense layers, not pooling")
    kinds = {("conv" if isinstance(op, ConvSpec) else "dense") for op in feeder_ops}
    if len(kinds) > 1:
        raise MergeError("mixed conv and dense feeders into the output are unsupported")
    p_widths = {widths_resolved[f] for f in feeders}
    if len(p_widths) > 1:
        raise MergeError(f"output feeders must share one width, got {sorted(p_widths)}")
    p = p_widths.pop()
    if len(feeders) == 1:
        output_merge = Passthrough()
    elif kinds.pop() == "conv":
        output_merge = ConvMerge(
            kernel=opts.output_merge_kernel,
            in_channels=len(feeders) * p,
            out_channels=p,
        )
    else:
        output_merge = DenseMerge(in_units=p * len(feeders), out_units=p)
    return MergedNetworkSpec(
        name=name,
        input_shape=input_shape,
        nodes=tuple(nodes),
        output_merge=output_merge,
        merge_feeders=feeders,
    )


def solve_widths(
    graph: ArchGraph,
    parents: list[NetworkSpec],
    opts: MergeOptions = MergeOptions(),
) -> dict[str, int]:
    """Assign output channels to every node for parameter parity.

    Starts from each node's maximum parent width, pins output-feeding nodes
    to the parents' output arity p, then scales all hidden widths by a common
    factor found by bisection so the merged count lands within
    ``opts.parity_tolerance`` of the target (the parents' mean by default).
    """
    if not parents:
        raise MergeError("need at least one parent network")
    arities = {p.output_arity for p in parents}
    if len(arities) > 1:
        raise MergeError(f"parents disagree on output arity: {sorted(arities)}")
    p_out = arities.pop()
    input_shape = parents[0].input_shape
    origin_order = [p.name for p in parents]

    counts = [count_params(p, p.input_shape[2]) for p in parents]
    if max(counts) > 1.25 * min(counts):
        warnings.warn(
            f"parent parameter counts differ by more than 25%: {counts}; "
            "the parity target (their mean) may not be near any single parent",
            stacklevel=2,
        )
    target = opts.target_params if opts.target_params > 0 else sum(counts) / len(counts)

    pinned = set(graph.output_feeders())
    base = {
        nid: node.out_channels
        for nid, node in graph.nodes.items()
        if not isinstance(node.op, PoolSpec)
    }

    def widths_for(alpha):
        out = {}
        for nid, b in base.items():
            if nid in pinned:
                out[nid] = p_out
            else:
                out[nid] = max(1, int(alpha * b + 0.5))
        return out

    cache = {}

    def count_for(alpha):
        ws = widths_for(alpha)
        key = tuple(sorted(ws.items()))
        if key not in cache:
            merged = graph_to_network(
                graph, ws, opts, input_shape=input_shape, origin_order=origin_order
            )
            cache[key] = merged.count_params(input_shape[2])
        return cache[key]

    lo, hi = 1.0 / 64.0, 64.0
    if count_for(hi) < target:
        candidates = [hi]
    elif count_for(lo) >= target:
        candidates = [lo]
    else:
        for _ in range(80):
            mid = (lo + hi) / 2.0
            if count_for(mid) >= target:
                hi = mid
            else:
                lo = mid
        candidates = [lo, hi]

    best = min(candidates, key=lambda a: abs(count_for(a) - target))
    best_count = count_for(best)
    if abs(best_count - target) / target > opts.parity_tolerance:
        raise InfeasibleParityError(target, best_count, opts.parity_tolerance)
    return widths_for(best)


def spdnn_merge(parents: list[NetworkSpec], opts: MergeOptions = MergeOptions()) -> MergedNetworkSpec:
    """Merge parent networks into one semi-parallel network.

    Composes graph translation, parallel composition, contraction, width
    solving and back-translation.  Deterministic: identical inputs produce a
    structurally identical result.
    """
    if not parents:
        raise MergeError("need at least one parent network")
    shapes = {p.input_shape for p in parents}
    if len(shapes) > 1:
        raise MergeError(f"parents disagree on input shape: {sorted(shapes)}")
    names = [p.name for p in parents]
    if len(set(names)) != len(names):
        raise MergeError("parent networks must have distinct names")
    contracted = contract(parallel_compose([network_to_graph(p) for p in parents]))
    widths = solve_widths(contracted, parents, opts)
    return graph_to_network(
        contracted,
        widths,
        opts,
        name="spdnn_" + "_".join(names),
        input_shape=parents[0].input_shape,
        origin_order=names,
    )


# ---------------------------------------------------------------------------
# merged-network file format


def serialize_merged(spec: MergedNetworkSpec) -> str:
    """Render a merged network to its line-based file form."""
    h, w, c = spec.input_shape
    lines = [f"network {spec.name}", f"input {h} {w} {c}"]
    for node in spec.nodes:
        lines.append(
            f"node {node.node_id} op={serialize_layer(node.op)} from={','.join(node.feeders)}"
        )
    om = spec.output_merge
    feeders = ",".join(spec.merge_feeders)
    if isinstance(om, ConvMerge):
        lines.append(f"outmerge kind=conv k={om.kernel} from={feeders}")
    elif isinstance(om, DenseMerge):
        lines.append(f"outmerge kind=dense from={feeders}")
    else:
        lines.append(f"outmerge kind=pass from={feeders}")
    return "\n".join(lines) + "\n"


def _split_kv(tokens, line_no):
    out = {}
    for tok in tokens:
        if "=" not in tok:
            raise ParseError(f"expected key=value, got {tok!r}", line_no)
        k, _, v = tok.partition("=")
        out[k] = v
    return out


def parse_merged(text: str) -> MergedNetworkSpec:
    """Parse the merged-network file format."""
    lines = list(_significant_lines(text))
    if len(lines) < 4:
        raise ParseError("expected header, input, node lines and an outmerge line")
    (no1, head), (no2, inp) = lines[0], lines[1]
    if len(head) != 2 or head[0] != "network":
        raise ParseError("expected 'network NAME'", no1)
    if len(inp) != 4 or inp[0] != "input":
        raise ParseError("expected 'input H W C'", no2)
    try:
        shape = tuple(int(v) for v in inp[1:])
    except ValueError:
        raise ParseError("input dimensions must be integers", no2) from None

    widths = {}
    nodes = []
    output_merge = None
    merge_feeders = None
    for no, parts in lines[2:]:
        if parts[0] == "node":
            if output_merge is not None:
                raise ParseError("node line after outmerge", no)
            if len(parts) < 4:
                raise ParseError("node line needs an id, op= and from=", no)
            nid = parts[1]
            kv_parts = parts[2:]
            if not kv_parts[0].startswith("op=") or not kv_parts[-1].startswith("from="):
                raise ParseError("node line needs op=... from=...", no)
            op_tokens = [kv_parts[0][3:]] + kv_parts[1:-1]
            layer = parse_layer_line(op_tokens, no)
            feeders = tuple(kv_parts[-1][5:].split(","))
            cin = 0
            for f in feeders:
                if f == INPUT:
                    cin += shape[2]
                elif f in widths:
                    cin += widths[f]
                else:
                    raise ParseError(f"unknown feeder {f!r}", no)
            node = MergedNode(node_id=nid, op=layer, feeders=feeders, in_channels=cin)
            widths[nid] = node.out_channels
            nodes.append(node)
        elif parts[0] == "outmerge":
            kv = _split_kv(parts[1:], no)
            if "kind" not in kv or "from" not in kv:
                raise ParseError("outmerge needs kind= and from=", no)
            merge_feeders = tuple(kv["from"].split(","))
            for f in merge_feeders:
                if f not in widths:
                    raise ParseError(f"unknown outmerge feeder {f!r}", no)
            fw = {widths[f] for f in merge_feeders}
            if len(fw) > 1:
                raise ParseError(f"outmerge feeders must share one width, got {sorted(fw)}", no)
            p = fw.pop()
            n = len(merge_feeders)
            if kv["kind"] == "conv":
                k = int(kv.get("k", "1"))
                output_merge = ConvMerge(kernel=k, in_channels=n * p, out_channels=p)
            elif kv["kind"] == "dense":
                output_merge = DenseMerge(in_units=p * n, out_units=p)
            elif kv["kind"] == "pass":
                output_merge = Passthrough()
            else:
                raise ParseError(f"unknown outmerge kind {kv['kind']!r}", no)
        else:
            raise ParseError(f"unexpected line head {parts[0]!r}", no)
    if output_merge is None:
        raise ParseError("missing outmerge line")
    try:
        return MergedNetworkSpec(
            name=head[1],
            input_shape=shape,
            nodes=tuple(nodes),
            output_merge=output_merge,
            merge_feeders=merge_feeders,
        )
    except MergeError as exc:
        raise ParseError(str(exc)) from None


def parse_any(text: str):
    """Parse either file format; merged files contain node/outmerge lines."""
    for _, parts in _significant_lines(text):
        if parts[0] in ("node", "outmerge"):
            return parse_merged(text)
    from .arch import parse_network

    return parse_network(text)
