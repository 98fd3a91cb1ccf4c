"""Monge-Ampere solvers, psh envelopes and a-priori estimate checks on flat Kahler orbifolds."""

from .orbifold import (GridField, GroupAction, OrbifoldGrid, build_grid, group_average,
                       group_mollify, smooth_max_cutoff, tau_cutoff)
from .calculus import (GreenKernel, HermitianField, calibrated_metric, green_kernel, i_ddbar,
                       integrate, laplacian, ma_density)

__version__ = "0.1.0"
