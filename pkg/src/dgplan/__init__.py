"""Load flow, loss-sensitivity ranking and swarm-based DG sizing."""

__version__ = "0.1.0"
