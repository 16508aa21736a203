"""
Shapeline: nearly coconvex spline and polynomial approximation of periodic functions.
"""

__version__ = "0.1.0"
