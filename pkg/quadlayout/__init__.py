"""
quadlayout: Abel-Jacobi singularity placement, cone metrics and T-mesh layouts on closed surfaces
"""

__version__ = "1.0.0"
