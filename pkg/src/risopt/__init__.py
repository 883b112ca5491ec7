"""Optimization toolbox for RIS-aided multiuser MISO downlink networks.

Subpackages cover channel simulation, phase-shift representations and
solvers, conventional beamforming subproblems, the constrained-SCA
framework, end-to-end case-study pipelines, and a benchmark harness.
"""

from risopt import bench, channel, csca, phase, phasesolve, pipelines, precode

__all__ = [
    "bench",
    "channel",
    "csca",
    "phase",
    "phasesolve",
    "pipelines",
    "precode",
]

__version__ = "0.1.0"
