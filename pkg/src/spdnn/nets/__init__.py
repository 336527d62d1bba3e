"""Shipped example architecture files."""

from importlib import resources

NAMES = ("net1", "net2", "net3")


def read_net(name: str) -> str:
    """Return the IR text of a shipped example network file."""
    return resources.files(__package__).joinpath(f"{name}.net").read_text(encoding="utf-8")


def load_all():
    from ..arch import parse_network

    return [parse_network(read_net(name)) for name in NAMES]
