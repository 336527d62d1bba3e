"""spdnn: merge feed-forward architectures into one semi-parallel network.

Networks are written in a small line-based IR, translated to labeled graphs,
parallel-composed, contracted by label equality and translated back into a
single DAG-shaped network whose hidden widths are solved for parameter
parity with the parents.  A small deterministic engine trains and evaluates
the result.
"""

from .arch import (
    ArchError,
    ConvSpec,
    DenseSpec,
    NetworkSpec,
    ParseError,
    PoolSpec,
    count_params,
    parse_network,
    serialize_network,
)
from .graph import ArchGraph, GraphError, NodeLabel, contract, dump_graph, network_to_graph, parallel_compose, validate_graph
from .merge import (
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

__version__ = "0.1.0"

__all__ = [
    "ArchError",
    "ArchGraph",
    "ConvMerge",
    "ConvSpec",
    "DenseMerge",
    "DenseSpec",
    "GraphError",
    "InfeasibleParityError",
    "MergeError",
    "MergeOptions",
    "MergedNetworkSpec",
    "NetworkSpec",
    "NodeLabel",
    "ParseError",
    "Passthrough",
    "PoolSpec",
    "chain_to_merged",
    "contract",
    "count_params",
    "dump_graph",
    "graph_to_network",
    "network_to_graph",
    "parallel_compose",
    "parse_any",
    "parse_merged",
    "parse_network",
    "serialize_merged",
    "serialize_network",
    "solve_widths",
    "spdnn_merge",
    "validate_graph",
]
