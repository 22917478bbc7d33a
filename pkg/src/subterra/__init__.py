"""Deterministic multi-agent subterranean exploration simulation.

Subpackages cover probabilistic voxel mapping with diff-based merging,
frontier view planning over fast-marching cost fields, metric-topological
graph planning, reactive centering and potential-field control, a priority-
scheduled mesh transport, per-agent mission management, ground-truth world
simulation, and a batch harness with a live supervisor bridge.
"""

__version__ = "0.1.0"
