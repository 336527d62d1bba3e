"""Merge planning: width solving, output-merge construction, file format."""

import warnings

import numpy as np
import pytest

from conftest import random_conv_chain
from spdnn.arch import ConvSpec, DenseSpec, NetworkSpec, count_params
from spdnn.graph import contract, network_to_graph, parallel_compose
from spdnn.merge import (
    ConvMerge,
    DenseMerge,
    InfeasibleParityError,
    MergedNetworkSpec,
    MergeError,
    MergeOptions,
    Passthrough,
    chain_to_merged,
    graph_to_network,
    parse_any,
    parse_merged,
    serialize_merged,
    solve_widths,
    spdnn_merge,
)


def conv_parent(name, kernels, widths, size=32):
    layers = []
    for i, (k, w) in enumerate(zip(kernels, widths)):
        last = i == len(kernels) - 1
        layers.append(ConvSpec(kernel=k, out_channels=w, batch_norm=not last,
                               activation="sigmoid" if last else "relu"))
    return NetworkSpec(name=name, input_shape=(size, size, 1), layers=tuple(layers))


def dense_parent(name, depths_units, p, size=16):
    layers = [DenseSpec(units=u) for u in depths_units]
    layers.append(DenseSpec(units=p, activation="sigmoid"))
    return NetworkSpec(name=name, input_shape=(size, size, 1), layers=tuple(layers))


def build_merged_direct(parents, opts=MergeOptions()):
    """Contract the parents and translate back with widths taken as-is
    (output feeders pinned to the shared arity), bypassing parity solving."""
    g = contract(parallel_compose([network_to_graph(s) for s in parents]))
    p = parents[0].output_arity
    pinned = set(g.output_feeders())
    from spdnn.arch import PoolSpec

    widths = {
        nid: (p if nid in pinned else max(1, node.out_channels))
        for nid, node in g.nodes.items()
        if not isinstance(node.op, PoolSpec)
    }
    return graph_to_network(
        g, widths, opts,
        input_shape=parents[0].input_shape,
        origin_order=[s.name for s in parents],
    )


class TestOutputMerge:
    def test_three_conv_parents_default_kernel(self):
        # shared 3x3 trunk, distinct output kernels so all three feed the merge
        parents = [
            conv_parent("a", [3, 3, 3], [7, 7, 1]),
            conv_parent("b", [3, 3, 5], [6, 6, 1]),
            conv_parent("c", [3, 3, 7], [5, 5, 1]),
        ]
        merged = spdnn_merge(parents)
        assert merged.output_merge == ConvMerge(kernel=1, in_channels=3, out_channels=1)
        assert len(merged.merge_feeders) == 3

    def test_two_dense_parents(self):
        parents = [dense_parent("a", [6], 4), dense_parent("b", [6, 5], 4)]
        merged = build_merged_direct(parents)
        assert merged.output_merge == DenseMerge(in_units=8, out_units=4)

    def test_randomized_dimension_formulas(self):
        rng = np.random.default_rng(2024)
        for trial in range(200):
            n = int(rng.integers(1, 6))
            p = int(rng.integers(1, 9))
            use_dense = bool(rng.integers(0, 2))
            depths = rng.choice(np.arange(1, 10), size=n, replace=False)
            if use_dense:
                parents = [
                    dense_parent(f"d{i}", [int(rng.integers(2, 8))] * (int(d) - 1), p)
                    for i, d in enumerate(depths)
                ]
            else:
                parents = [
                    conv_parent(
                        f"c{i}",
                        [int(rng.choice([3, 5, 7]))] * int(d),
                        [int(rng.integers(2, 6))] * (int(d) - 1) + [p],
                        size=16,
                    )
                    for i, d in enumerate(depths)
                ]
            merged = build_merged_direct(parents)
            om = merged.output_merge
            if n == 1:
                assert isinstance(om, Passthrough)
            elif use_dense:
                assert om == DenseMerge(in_units=p * n, out_units=p)
            else:
                assert om == ConvMerge(kernel=1, in_channels=n * p, out_channels=p)
            assert merged.output_arity == p

    def test_custom_merge_kernel(self):
        parents = [conv_parent("a", [3, 3], [4, 2]), conv_parent("b", [3, 5], [4, 2])]
        merged = build_merged_direct(parents, MergeOptions(output_merge_kernel=3))
        assert merged.output_merge == ConvMerge(kernel=3, in_channels=4, out_channels=2)

    @pytest.mark.filterwarnings("ignore:parent parameter counts")
    def test_mixed_output_kinds_rejected(self):
        conv = conv_parent("a", [3, 3], [4, 2], size=16)
        dense = dense_parent("b", [6], 2)
        with pytest.raises(MergeError, match="arity|mixed"):
            spdnn_merge([conv, dense])

    def test_mixed_feeders_rejected_at_translation(self):
        conv = conv_parent("a", [3, 3, 3], [4, 4, 2], size=16)
        dense = dense_parent("b", [6, 5], 2)
        g = contract(parallel_compose([network_to_graph(conv), network_to_graph(dense)]))
        widths = {nid: node.out_channels for nid, node in g.nodes.items()}
        with pytest.raises(MergeError, match="mixed conv and dense"):
            graph_to_network(g, widths, input_shape=(16, 16, 1))

    def test_missing_width_rejected(self):
        g = contract(parallel_compose([network_to_graph(conv_parent("a", [3], [1]))]))
        with pytest.raises(MergeError, match="missing width"):
            graph_to_network(g, {}, input_shape=(32, 32, 1))


class TestSolveWidths:
    def test_identical_parents_reproduce_widths(self):
        parent = conv_parent("a", [3, 5, 3], [4, 6, 1])
        twin = conv_parent("b", [3, 5, 3], [4, 6, 1])
        g = contract(parallel_compose([network_to_graph(parent), network_to_graph(twin)]))
        widths = solve_widths(g, [parent, twin])
        assert widths == {"d1_3C_0": 4, "d2_5C_0": 6, "d3_3C_0": 1}
        merged = graph_to_network(g, widths, input_shape=(32, 32, 1))
        assert merged.count_params(1) == count_params(parent, 1)

    def test_parity_within_tolerance_randomized(self):
        rng = np.random.default_rng(5)
        successes = 0
        for trial in range(40):
            parents = [random_conv_chain(rng, f"n{i}", max_width=8) for i in range(3)]
            g = contract(parallel_compose([network_to_graph(p) for p in parents]))
            target = float(np.mean([count_params(p, 1) for p in parents]))
            try:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")
                    widths = solve_widths(g, parents)
            except InfeasibleParityError:
                continue
            merged = graph_to_network(g, widths, input_shape=parents[0].input_shape)
            err = abs(merged.count_params(1) - target) / target
            assert err <= 0.10
            successes += 1
        assert successes >= 30

    @pytest.mark.filterwarnings("ignore:parent parameter counts")
    def test_output_adjacent_widths_pinned(self):
        parents = [
            conv_parent("a", [3, 3], [4, 2]),
            conv_parent("b", [5, 5], [4, 2]),
        ]
        g = contract(parallel_compose([network_to_graph(p) for p in parents]))
        widths = solve_widths(g, parents, MergeOptions(parity_tolerance=0.9))
        assert widths["d2_3C_0"] == 2 and widths["d2_5C_0"] == 2

    @pytest.mark.filterwarnings("ignore:parent parameter counts")
    def test_unreachable_tolerance_reports_best(self):
        parents = [
            conv_parent("a", [3, 3], [4, 1]),
            conv_parent("b", [5, 5], [3, 1]),
        ]
        g = contract(parallel_compose([network_to_graph(p) for p in parents]))
        with pytest.raises(InfeasibleParityError) as err:
            solve_widths(g, parents, MergeOptions(parity_tolerance=1e-9))
        assert err.value.best_count > 0
        assert err.value.target > 0

    def test_warns_on_disparate_parents(self):
        parents = [
            conv_parent("a", [3, 3], [2, 1]),
            conv_parent("b", [7, 7], [16, 1]),
        ]
        g = contract(parallel_compose([network_to_graph(p) for p in parents]))
        with pytest.warns(UserWarning, match="differ by more than 25%"):
            try:
                solve_widths(g, parents)
            except InfeasibleParityError:
                pass

    def test_explicit_target(self):
        parents = [conv_parent("a", [3, 3, 3], [6, 6, 1])]
        g = contract(parallel_compose([network_to_graph(p) for p in parents]))
        widths = solve_widths(g, parents, MergeOptions(target_params=800, parity_tolerance=0.2))
        merged = graph_to_network(g, widths, input_shape=(32, 32, 1))
        assert abs(merged.count_params(1) - 800) / 800 <= 0.2


class TestMergedSpec:
    def test_channel_bookkeeping_enforced(self):
        node_ok = dict(node_id="d1_3C_0", op=ConvSpec(kernel=3, out_channels=2),
                       feeders=("input",), in_channels=1)
        from spdnn.merge import MergedNode

        with pytest.raises(MergeError, match="in_channels"):
            MergedNetworkSpec(
                name="bad", input_shape=(8, 8, 1),
                nodes=(MergedNode(**{**node_ok, "in_channels": 3}),),
                output_merge=Passthrough(), merge_feeders=("d1_3C_0",),
            )

    def test_feeder_must_precede(self):
        from spdnn.merge import MergedNode

        with pytest.raises(MergeError, match="precede"):
            MergedNetworkSpec(
                name="bad", input_shape=(8, 8, 1),
                nodes=(MergedNode(node_id="a", op=ConvSpec(kernel=3, out_channels=1),
                                  feeders=("b",), in_channels=1),),
                output_merge=Passthrough(), merge_feeders=("a",),
            )

    def test_concat_spatial_mismatch_rejected(self):
        # one branch pools, the other does not; joining them must fail
        from spdnn.arch import PoolSpec
        from spdnn.merge import MergedNode

        nodes = (
            MergedNode(node_id="d1_3C_0", op=ConvSpec(kernel=3, out_channels=2),
                       feeders=("input",), in_channels=1),
            MergedNode(node_id="d1_P2_0", op=PoolSpec(window=2),
                       feeders=("input",), in_channels=1),
            MergedNode(node_id="d2_3C_0", op=ConvSpec(kernel=3, out_channels=1),
                       feeders=("d1_3C_0", "d1_P2_0"), in_channels=3),
        )
        with pytest.raises(MergeError, match="spatial"):
            MergedNetworkSpec(name="bad", input_shape=(8, 8, 1), nodes=nodes,
                              output_merge=Passthrough(), merge_feeders=("d2_3C_0",))


class TestSpdnnMerge:
    def test_single_parent_passthrough_structure(self, shipped_nets):
        merged = spdnn_merge([shipped_nets[0]])
        chain = chain_to_merged(shipped_nets[0])
        assert isinstance(merged.output_merge, Passthrough)
        assert [n.op for n in merged.nodes] == [n.op for n in chain.nodes]
        assert [n.feeders for n in merged.nodes] == [n.feeders for n in chain.nodes]

    def test_identical_copies_fully_contract(self, shipped_nets):
        net1 = shipped_nets[0]
        twin = NetworkSpec(name="net1b", input_shape=net1.input_shape, layers=net1.layers)
        merged = spdnn_merge([net1, twin])
        assert isinstance(merged.output_merge, Passthrough)
        assert len(merged.nodes) == len(net1.layers)
        assert [n.op for n in merged.nodes] == list(net1.layers)

    def test_three_parent_merge_structure(self, shipped_nets):
        merged = spdnn_merge(shipped_nets)
        assert len(merged.nodes) == 17
        assert merged.output_merge == ConvMerge(kernel=1, in_channels=3, out_channels=1)
        assert merged.merge_feeders == ("d8_7C_0", "d6_3C_0", "d5_11C_0")
        by_id = merged.node_map()
        assert by_id["d3_7C_0"].feeders == ("d2_7C_0", "d2_5C_0")
        assert by_id["d3_7C_0"].in_channels == sum(
            by_id[f].out_channels for f in by_id["d3_7C_0"].feeders
        )

    def test_concat_order_follows_parent_order(self, shipped_nets):
        reordered = [shipped_nets[2], shipped_nets[0], shipped_nets[1]]
        merged = spdnn_merge(reordered)
        by_id = merged.node_map()
        # net3 now comes first, so its branch leads the concatenation
        assert by_id["d3_7C_0"].feeders == ("d2_5C_0", "d2_7C_0")
        assert merged.merge_feeders == ("d5_11C_0", "d8_7C_0", "d6_3C_0")

    def test_parity_for_shipped_triple(self, shipped_nets):
        merged = spdnn_merge(shipped_nets)
        counts = [count_params(p, 1) for p in shipped_nets]
        target = sum(counts) / len(counts)
        assert abs(merged.count_params(1) - target) / target <= 0.10

    def test_deterministic(self, shipped_nets):
        a = spdnn_merge(shipped_nets)
        b = spdnn_merge(shipped_nets)
        assert a == b
        assert serialize_merged(a) == serialize_merged(b)

    def test_mismatched_input_shapes_rejected(self):
        a = conv_parent("a", [3], [1], size=32)
        b = conv_parent("b", [3], [1], size=16)
        with pytest.raises(MergeError, match="input shape"):
            spdnn_merge([a, b])

    def test_empty_parent_list_rejected(self):
        with pytest.raises(MergeError):
            spdnn_merge([])


class TestMergedFileFormat:
    def test_round_trip(self, shipped_nets):
        merged = spdnn_merge(shipped_nets)
        assert parse_merged(serialize_merged(merged)) == merged

    def test_round_trip_passthrough(self, shipped_nets):
        merged = spdnn_merge([shipped_nets[1]])
        assert parse_merged(serialize_merged(merged)) == merged

    def test_round_trip_dense(self):
        merged = spdnn_merge(
            [dense_parent("a", [6], 3), dense_parent("b", [6, 4], 3)],
            MergeOptions(parity_tolerance=0.5),
        )
        assert parse_merged(serialize_merged(merged)) == merged

    def test_parse_any_dispatches(self, shipped_nets):
        from spdnn.arch import serialize_network

        assert parse_any(serialize_network(shipped_nets[0])) == shipped_nets[0]
        merged = spdnn_merge(shipped_nets)
        assert parse_any(serialize_merged(merged)) == merged

    def test_unknown_feeder_rejected(self):
        text = (
            "network m\ninput 8 8 1\n"
            "node d1_3C_0 op=conv k=3 c=1 bn=false act=sigmoid from=ghost\n"
            "outmerge kind=pass from=d1_3C_0\n"
        )
        from spdnn.arch import ParseError

        with pytest.raises(ParseError, match="ghost"):
            parse_merged(text)

    def test_missing_outmerge_rejected(self):
        text = (
            "network m\ninput 8 8 1\n"
            "node d1_3C_0 op=conv k=3 c=1 bn=false act=sigmoid from=input\n"
            "node d2_3C_0 op=conv k=3 c=1 bn=false act=sigmoid from=d1_3C_0\n"
        )
        from spdnn.arch import ParseError

        with pytest.raises(ParseError, match="outmerge"):
            parse_merged(text)
