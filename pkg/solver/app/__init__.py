"""
Preconditioned generalized forward-backward solver for graph-structured problems.
"""

__version__ = "1.0.0"
