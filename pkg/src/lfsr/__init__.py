"""Light-field super-resolution toolkit.

A compact, CPU-friendly stack: a minimal tape-based autodiff engine, exact
light-field representation transforms, selective-scan state-space blocks
with per-representation scan-path pruning, synthetic scene generation with
known disparity, and a training/evaluation CLI.
"""

__version__ = "0.1.0"
