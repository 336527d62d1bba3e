"""Execution of merged network DAGs: parameter store, forward and backward.

Nodes are evaluated in their (topological) spec order; a node with several
feeders concatenates them channel-wise in the frozen feeder order.  The
backward pass walks the same order in reverse and splits concatenation
gradients back to the feeders by channel slice.
"""

from __future__ import annotations

import numpy as np

from ..arch import ConvSpec, DenseSpec
from ..merge import ConvMerge, DenseMerge, MergedNetworkSpec, Passthrough
from . import ops
from .ops import EngineError

INPUT = "input"
OUTMERGE = "outmerge"


class NumericError(EngineError):
    """A non-finite value appeared; the message names the offending node."""


def _he_normal(rng, shape, fan_in, dtype):
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


class ParameterStore:
    """Per-node weights, biases and batch-norm state plus velocity buffers.

    Keys are ``<node_id>/w``, ``<node_id>/b``, ``<node_id>/gamma``,
    ``<node_id>/beta`` for trainable tensors and ``<node_id>/rmean``,
    ``<node_id>/rvar`` for running statistics.  The output-merge layer uses
    node id ``outmerge``.
    """

    def __init__(self, params, running, dtype):
        self.params = params
        self.running = running
        self.dtype = dtype
        self.velocities = {k: np.zeros_like(v) for k, v in params.items()}

    @staticmethod
    def shape_table(spec: MergedNetworkSpec, input_channels=None):
        """Expected (key -> shape) for trainable and running tensors."""
        dims = spec.dims(input_channels)
        trainable = {}
        running = {}
        for node in spec.nodes:
            nid = node.node_id
            op = node.op
            if isinstance(op, ConvSpec):
                cin = dims[nid].in_channels
                trainable[f"{nid}/w"] = (op.kernel, op.kernel, cin, op.out_channels)
                trainable[f"{nid}/b"] = (op.out_channels,)
                if op.batch_norm:
                    trainable[f"{nid}/gamma"] = (op.out_channels,)
                    trainable[f"{nid}/beta"] = (op.out_channels,)
                    running[f"{nid}/rmean"] = (op.out_channels,)
                    running[f"{nid}/rvar"] = (op.out_channels,)
            elif isinstance(op, DenseSpec):
                trainable[f"{nid}/w"] = (dims[nid].fan_in, op.units)
                trainable[f"{nid}/b"] = (op.units,)
        om = spec.output_merge
        if isinstance(om, ConvMerge):
            trainable[f"{OUTMERGE}/w"] = (om.kernel, om.kernel, om.in_channels, om.out_channels)
            trainable[f"{OUTMERGE}/b"] = (om.out_channels,)
        elif isinstance(om, DenseMerge):
            trainable[f"{OUTMERGE}/w"] = (om.in_units, om.out_units)
            trainable[f"{OUTMERGE}/b"] = (om.out_units,)
        return trainable, running

    @classmethod
    def init(cls, spec: MergedNetworkSpec, rng, dtype=np.float32):
        """He-normal weights (fan-in scaling), zero biases, unit batch-norm."""
        trainable, running_shapes = cls.shape_table(spec)
        params = {}
        for key, shape in trainable.items():
            if key.endswith("/w"):
                fan_in = int(np.prod(shape[:-1])) if len(shape) == 4 else shape[0]
                params[key] = _he_normal(rng, shape, fan_in, dtype)
            elif key.endswith("/gamma"):
                params[key] = np.ones(shape, dtype)
            else:
                params[key] = np.zeros(shape, dtype)
        running = {}
        for key, shape in running_shapes.items():
            running[key] = np.ones(shape, dtype) if key.endswith("/rvar") else np.zeros(shape, dtype)
        return cls(params, running, dtype)

    def astype(self, dtype):
        """Copy of the store in another precision (velocities reset)."""
        params = {k: v.astype(dtype) for k, v in self.params.items()}
        running = {k: v.astype(dtype) for k, v in self.running.items()}
        return ParameterStore(params, running, dtype)


def _check_finite(arr, where):
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values at {where}")


def _gather(values, feeders):
    vals = [values[f] for f in feeders]
    if len(vals) == 1:
        return vals[0], None
    widths = [v.shape[1] for v in vals]
    return np.concatenate(vals, axis=1), widths


def _scatter(grads, feeders, dxcat, widths):
    if widths is None:
        pieces = [dxcat]
    else:
        pieces = np.split(dxcat, np.cumsum(widths)[:-1], axis=1)
    for fid, piece in zip(feeders, pieces):
        if fid == INPUT:
            continue
        if fid in grads:
            grads[fid] = grads[fid] + piece
        else:
            grads[fid] = piece


def run_forward(spec: MergedNetworkSpec, store: ParameterStore, batch, mode="train",
                update_running=None):
    """Evaluate the network on a (B, C, H, W) batch.

    Returns (prediction, caches).  ``mode`` selects the batch-norm behavior;
    ``update_running`` defaults to True in train mode and can be disabled for
    repeated probing forwards (gradient checking).
    """
    if batch.ndim != 4:
        raise EngineError(f"batch must be 4-D (B,C,H,W), got shape {batch.shape}")
    h, w, c = spec.input_shape
    if batch.shape[1] != c:
        raise EngineError(f"batch has {batch.shape[1]} channels, network expects {c}")
    if batch.shape[2] != h or batch.shape[3] != w:
        raise EngineError(
            f"batch is {batch.shape[2]}x{batch.shape[3]}, network expects {h}x{w}"
        )
    if update_running is None:
        update_running = mode == "train"
    values = {INPUT: batch}
    caches = {}
    for node in spec.nodes:
        nid = node.node_id
        xcat, widths = _gather(values, node.feeders)
        cache = {"widths": widths}
        op = node.op
        if isinstance(op, ConvSpec):
            w, b = store.params[f"{nid}/w"], store.params[f"{nid}/b"]
            pre = ops.conv2d(xcat, w, b)
            cache["xin"] = xcat
            if op.batch_norm:
                pre, cache["bn"] = ops.batch_norm(
                    pre, store.params[f"{nid}/gamma"], store.params[f"{nid}/beta"],
                    mode, store.running[f"{nid}/rmean"], store.running[f"{nid}/rvar"],
                    update_running=update_running,
                )
            post = ops.apply_activation(op.activation, pre)
            cache["pre_act"], cache["post"] = pre, post
        elif isinstance(op, DenseSpec):
            x2d = xcat.reshape(xcat.shape[0], -1)
            w, b = store.params[f"{nid}/w"], store.params[f"{nid}/b"]
            pre = ops.dense(x2d, w, b)
            post = ops.apply_activation(op.activation, pre)
            cache["xin"], cache["xcat_shape"] = x2d, xcat.shape
            cache["pre_act"], cache["post"] = pre, post
        else:
            post, cache["pool"] = ops.maxpool(xcat, op.window)
        _check_finite(post, f"node {nid}")
        values[nid] = post
        caches[nid] = cache

    xcat, widths = _gather(values, spec.merge_feeders)
    om = spec.output_merge
    mcache = {"widths": widths}
    if isinstance(om, ConvMerge):
        pre = ops.conv2d(xcat, store.params[f"{OUTMERGE}/w"], store.params[f"{OUTMERGE}/b"])
        pred = ops.sigmoid(pre)
        mcache["xin"], mcache["post"] = xcat, pred
    elif isinstance(om, DenseMerge):
        x2d = xcat.reshape(xcat.shape[0], -1)
        pre = ops.dense(x2d, store.params[f"{OUTMERGE}/w"], store.params[f"{OUTMERGE}/b"])
        pred = ops.sigmoid(pre)
        mcache["xin"], mcache["xcat_shape"], mcache["post"] = x2d, xcat.shape, pred
    else:
        pred = xcat
    _check_finite(pred, "output merge")
    caches[OUTMERGE] = mcache
    caches["values"] = values
    return pred, caches


def run_backward(spec: MergedNetworkSpec, store: ParameterStore, caches, dpred):
    """Accumulate gradients for every trainable parameter.

    Walks nodes in reverse topological order; concatenation gradients are
    split back to the feeders by channel slice.  Raises NumericError naming
    the node if any parameter gradient is non-finite.
    """
    grads = {}
    node_grads = {}

    om = spec.output_merge
    mcache = caches[OUTMERGE]
    if isinstance(om, Passthrough):
        _scatter(node_grads, spec.merge_feeders, dpred, mcache["widths"])
    else:
        dpre = ops.sigmoid_backward(mcache["post"], dpred)
        if isinstance(om, ConvMerge):
            dxcat, dw, db = ops.conv2d_backward(mcache["xin"], store.params[f"{OUTMERGE}/w"], dpre)
        else:
            dx2d, dw, db = ops.dense_backward(mcache["xin"], store.params[f"{OUTMERGE}/w"], dpre)
            dxcat = dx2d.reshape(mcache["xcat_shape"])
        grads[f"{OUTMERGE}/w"], grads[f"{OUTMERGE}/b"] = dw, db
        _scatter(node_grads, spec.merge_feeders, dxcat, mcache["widths"])

    for node in reversed(spec.nodes):
        nid = node.node_id
        cache = caches[nid]
        dy = node_grads.pop(nid, None)
        if dy is None:
            # node's output reaches neither the output merge nor any consumer
            # with nonzero gradient; parameters still get explicit zeros
            dy = np.zeros_like(caches["values"][nid])
        op = node.op
        if isinstance(op, ConvSpec):
            dpre = ops.activation_backward(op.activation, cache["pre_act"], cache["post"], dy)
            if op.batch_norm:
                dpre, dgamma, dbeta = ops.batch_norm_backward(cache["bn"], dpre)
                grads[f"{nid}/gamma"], grads[f"{nid}/beta"] = dgamma, dbeta
            dxcat, dw, db = ops.conv2d_backward(cache["xin"], store.params[f"{nid}/w"], dpre)
            grads[f"{nid}/w"], grads[f"{nid}/b"] = dw, db
        elif isinstance(op, DenseSpec):
            dpre = ops.activation_backward(op.activation, cache["pre_act"], cache["post"], dy)
            dx2d, dw, db = ops.dense_backward(cache["xin"], store.params[f"{nid}/w"], dpre)
            grads[f"{nid}/w"], grads[f"{nid}/b"] = dw, db
            dxcat = dx2d.reshape(cache["xcat_shape"])
        else:
            dxcat = ops.maxpool_backward(cache["pool"], dy)
        _scatter(node_grads, node.feeders, dxcat, cache["widths"])

    for key in store.params:
        if key not in grads:
            grads[key] = np.zeros_like(store.params[key])
        _check_finite(grads[key], f"gradient of {key}")
    return grads
