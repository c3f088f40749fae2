"""Two-hand mesh and MANO-parameter reconstruction with mesh-mano interaction blocks."""

__version__ = "0.1.0"
