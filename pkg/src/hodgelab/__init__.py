"""Discrete Hodge theory laboratory: heat flows on functions and 1-forms of triangulated surfaces."""

__version__ = "0.1.0"
