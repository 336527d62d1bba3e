"""Textual architecture IR: layer chains, parser/serializer, parameter counting.

A network file is line based: a ``network NAME`` header, an ``input H W C``
line, then one layer per line (``conv`` / ``dense`` / ``maxpool``).  ``#``
starts a comment, blank lines are ignored.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

ACTIVATIONS = ("relu", "sigmoid", "none")

_IDENT_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")


class ArchError(Exception):
    """Invalid architecture (bad field values, impossible shapes)."""


class ParseError(ArchError):
    """Malformed IR text; message carries the line number."""

    def __init__(self, message, line_no=None):
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)
        self.line_no = line_no


def _check_activation(activation):
    if activation not in ACTIVATIONS:
        raise ArchError(f"unknown activation {activation!r}, expected one of {ACTIVATIONS}")


@dataclass(frozen=True)
class ConvSpec:
    """Square convolution, stride 1, zero padding that preserves spatial size."""

    kernel: int
    out_channels: int
    batch_norm: bool = False
    activation: str = "relu"

    kind = "conv"

    def __post_init__(self):
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ArchError(f"conv kernel must be odd and positive, got {self.kernel}")
        if self.out_channels < 1:
            raise ArchError(f"conv out_channels must be >= 1, got {self.out_channels}")
        _check_activation(self.activation)


@dataclass(frozen=True)
class DenseSpec:
    """Fully connected layer; flattens a spatial input."""

    units: int
    activation: str = "relu"

    kind = "dense"

    def __post_init__(self):
        if self.units < 1:
            raise ArchError(f"dense units must be >= 1, got {self.units}")
        _check_activation(self.activation)


@dataclass(frozen=True)
class PoolSpec:
    """Non-overlapping max pooling; stride equals the window."""

    window: int

    kind = "maxpool"

    def __post_init__(self):
        if self.window < 1:
            raise ArchError(f"maxpool window must be >= 1, got {self.window}")


LayerSpec = ConvSpec | DenseSpec | PoolSpec


@dataclass(frozen=True)
class NetworkSpec:
    """An ordered chain of layers with a named input shape.

    The last layer is the output layer.  ``input_shape`` is (height, width,
    channels).
    """

    name: str
    input_shape: tuple[int, int, int]
    layers: tuple[LayerSpec, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if not _IDENT_RE.match(self.name):
            raise ArchError(f"network name {self.name!r} is not an identifier")
        if len(self.input_shape) != 3 or any(d < 1 for d in self.input_shape):
            raise ArchError(f"input shape must be three positive ints, got {self.input_shape}")
        if not self.layers:
            raise ArchError("network must have at least one layer")
        object.__setattr__(self, "layers", tuple(self.layers))
        propagate_shapes(self)  # rejects spatial underflow and conv-after-dense

    @property
    def output_arity(self):
        """Channel count (conv output) or unit count (dense output) of the last layer."""
        last = self.layers[-1]
        if isinstance(last, ConvSpec):
            return last.out_channels
        if isinstance(last, DenseSpec):
            return last.units
        raise ArchError("output layer must be conv or dense, not maxpool")


def propagate_shapes(spec: NetworkSpec) -> list[tuple]:
    """Return the output shape after each layer.

    Shapes are (channels, height, width) while spatial, or (units,) once the
    chain has passed through a dense layer.  Raises ArchError when a pooling
    window underflows the spatial size or a conv/pool follows a dense layer.
    """
    h, w, c = spec.input_shape[0], spec.input_shape[1], spec.input_shape[2]
    shape = (c, h, w)
    out = []
    for i, layer in enumerate(spec.layers):
        if isinstance(layer, DenseSpec):
            shape = (layer.units,)
        elif len(shape) == 1:
            raise ArchError(f"layer {i + 1}: {layer.kind} cannot follow a dense layer")
        elif isinstance(layer, ConvSpec):
            shape = (layer.out_channels, shape[1], shape[2])
        else:
            nh, nw = shape[1] // layer.window, shape[2] // layer.window
            if nh < 1 or nw < 1:
                raise ArchError(
                    f"layer {i + 1}: pooling window {layer.window} underflows "
                    f"spatial size {shape[1]}x{shape[2]}"
                )
            shape = (shape[0], nh, nw)
        out.append(shape)
    return out


def layer_params(layer: LayerSpec, fan_in: int) -> int:
    """Trainable parameter count of one layer given its input fan.

    For conv, ``fan_in`` is the input channel count; for dense it is the
    flattened input length.  Batch norm contributes a scale and shift per
    output channel.
    """
    if isinstance(layer, ConvSpec):
        n = layer.kernel * layer.kernel * fan_in * layer.out_channels + layer.out_channels
        if layer.batch_norm:
            n += 2 * layer.out_channels
        return n
    if isinstance(layer, DenseSpec):
        return fan_in * layer.units + layer.units
    return 0


def count_params(spec, input_channels: int) -> int:
    """Total trainable parameters of a plain or merged network.

    For merged networks the input channel count of a node fed by several
    feeders is the sum of the feeders' output channels.
    """
    if isinstance(spec, NetworkSpec):
        if input_channels < 1:
            raise ArchError("input_channels must be positive")
        h, w, _ = spec.input_shape
        shape = (input_channels, h, w)
        total = 0
        for layer in spec.layers:
            if isinstance(layer, DenseSpec):
                fan_in = shape[0] * shape[1] * shape[2] if len(shape) == 3 else shape[0]
                shape = (layer.units,)
            elif isinstance(layer, ConvSpec):
                fan_in = shape[0]
                shape = (layer.out_channels, shape[1], shape[2])
            else:
                fan_in = 0
                nh, nw = shape[1] // layer.window, shape[2] // layer.window
                if nh < 1 or nw < 1:
                    raise ArchError("pooling underflows spatial size")
                shape = (shape[0], nh, nw)
            total += layer_params(layer, fan_in)
        return total
    # merged DAG: delegate to its own bookkeeping to avoid an import cycle
    return spec.count_params(input_channels)


# ---------------------------------------------------------------------------
# parsing / serialization


def _parse_kv(parts, line_no, allowed):
    kv = {}
    for part in parts:
        if "=" not in part:
            raise ParseError(f"expected key=value, got {part!r}", line_no)
        key, _, value = part.partition("=")
        if key not in allowed:
            raise ParseError(f"unknown attribute {key!r}", line_no)
        if key in kv:
            raise ParseError(f"duplicate attribute {key!r}", line_no)
        kv[key] = value
    return kv


def _parse_int(value, line_no, what):
    try:
        n = int(value)
    except ValueError:
        raise ParseError(f"{what} must be an integer, got {value!r}", line_no) from None
    return n


def _parse_bool(value, line_no):
    if value == "true":
        return True
    if value == "false":
        return False
    raise ParseError(f"expected true or false, got {value!r}", line_no)


def parse_layer_line(parts, line_no):
    """Parse the token list of one layer line into a LayerSpec."""
    head = parts[0]
    try:
        if head == "conv":
            kv = _parse_kv(parts[1:], line_no, {"k", "c", "bn", "act"})
            if "k" not in kv or "c" not in kv:
                raise ParseError("conv requires k= and c=", line_no)
            return ConvSpec(
                kernel=_parse_int(kv["k"], line_no, "kernel"),
                out_channels=_parse_int(kv["c"], line_no, "channels"),
                batch_norm=_parse_bool(kv["bn"], line_no) if "bn" in kv else False,
                activation=kv.get("act", "relu"),
            )
        if head == "dense":
            kv = _parse_kv(parts[1:], line_no, {"u", "act"})
            if "u" not in kv:
                raise ParseError("dense requires u=", line_no)
            return DenseSpec(
                units=_parse_int(kv["u"], line_no, "units"),
                activation=kv.get("act", "relu"),
            )
        if head == "maxpool":
            kv = _parse_kv(parts[1:], line_no, {"w"})
            if "w" not in kv:
                raise ParseError("maxpool requires w=", line_no)
            return PoolSpec(window=_parse_int(kv["w"], line_no, "window"))
    except ArchError as exc:
        if isinstance(exc, ParseError):
            raise
        raise ParseError(str(exc), line_no) from None
    raise ParseError(f"unknown layer kind {head!r}", line_no)


def _significant_lines(text):
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield line_no, line.split()


def parse_network(text: str) -> NetworkSpec:
    """Parse architecture IR text into a NetworkSpec.

    Raises ParseError with the offending line number on syntax errors and on
    semantic violations (even kernels, zero channels, spatial underflow).
    """
    lines = list(_significant_lines(text))
    if len(lines) < 3:
        raise ParseError("expected a network header, an input line and at least one layer")
    (no1, head), (no2, inp) = lines[0], lines[1]
    if len(head) != 2 or head[0] != "network":
        raise ParseError("expected 'network NAME'", no1)
    if len(inp) != 4 or inp[0] != "input":
        raise ParseError("expected 'input H W C'", no2)
    shape = tuple(_parse_int(v, no2, "input dimension") for v in inp[1:])
    layers = [parse_layer_line(parts, no) for no, parts in lines[2:]]
    try:
        return NetworkSpec(name=head[1], input_shape=shape, layers=tuple(layers))
    except ArchError as exc:
        raise ParseError(str(exc)) from None


def serialize_layer(layer: LayerSpec) -> str:
    if isinstance(layer, ConvSpec):
        bn = "true" if layer.batch_norm else "false"
        return f"conv k={layer.kernel} c={layer.out_channels} bn={bn} act={layer.activation}"
    if isinstance(layer, DenseSpec):
        return f"dense u={layer.units} act={layer.activation}"
    return f"maxpool w={layer.window}"


def serialize_network(spec: NetworkSpec) -> str:
    """Render a NetworkSpec back to canonical IR text (all attributes explicit)."""
    h, w, c = spec.input_shape
    lines = [f"network {spec.name}", f"input {h} {w} {c}"]
    lines.extend(serialize_layer(layer) for layer in spec.layers)
    return "\n".join(lines) + "\n"
