"""Bond percolation on Z^d with a modified line of edges along the first axis."""

__version__ = "0.1.0"
