"""Minimisers of Dirichlet energy plus fractional perimeter on a lattice.

Modules: :mod:`grid` (domains, sets, snapshots), :mod:`kernel` (fractional
perimeter and curvature), :mod:`harmonic` (replacements), :mod:`extension`
(the one-dimension-up extension and its constant), :mod:`minimize`,
:mod:`diagnostics` and the :mod:`cli`.
"""
from .accel import backend, set_backend
from .grid import Configuration, Exterior, IndicatorSet, build_domain, read_snapshot, write_snapshot
from .kernel import build_weight_table, frac_curvature, per_sigma
from .minimize import SearchParams, make_problem, minimize, sample_boundary

__version__ = "0.1.0"
