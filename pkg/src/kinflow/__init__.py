"""Numerical laboratory for particle-laden nonlocal Stokes flow.

Fine-scale solver for a kinetic cloud coupled to an incompressible Stokes
fluid with an oscillatory instantaneous viscosity and a time-convolution
memory stress, plus the periodic cell problem, effective-tensor assembly,
the homogenized limit solver and an epsilon-refinement study harness.
"""

__version__ = "0.1.0"
