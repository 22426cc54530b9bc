"""Built-in coefficient and initial-data scenarios."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

from .coefficients import resolve_coefficient
from .fields import GridSpec, VectorField, cavity_stream_field
from .particles import InitialData


def gaussian_ball_density(center=(0.5, 0.5), sigma_x=0.12, sigma_v=0.4,
                          v_center=(0.0, 0.0), amplitude=2.0) -> Callable:
    cx, cy = center
    vx0, vy0 = v_center

    def f0(x, y, vx, vy):
        return amplitude * np.exp(
            -((x - cx) ** 2 + (y - cy) ** 2) / (2.0 * sigma_x**2)
            - ((vx - vx0) ** 2 + (vy - vy0) ** 2) / (2.0 * sigma_v**2))

    return f0


def zero_density(x, y, vx, vy):
    return np.zeros_like(np.asarray(x, dtype=float))


@dataclass
class Scenario:
    """Named bundle of coefficients and initial data for a run."""

    name: str
    a0_id: str = "sinusoidal-A0"
    a1_id: Optional[str] = None
    cloud: bool = True
    u0_amplitude: float = 0.3
    vmax: float = 2.0
    lattice: tuple = (16, 16, 12, 12)

    def coefficients(self):
        A0 = resolve_coefficient(self.a0_id)
        A1 = resolve_coefficient(self.a1_id) if self.a1_id else None
        return A0, A1

    def initial_data(self, grid: GridSpec) -> InitialData:
        u0 = cavity_stream_field(grid, self.u0_amplitude) if self.u0_amplitude else VectorField(grid)
        f0 = gaussian_ball_density() if self.cloud else zero_density
        return InitialData(f0=f0, u0=u0, vmax=self.vmax)


SCENARIOS = {
    "constant": Scenario("constant", a0_id="constant", cloud=False, u0_amplitude=0.5),
    "sinusoidal-A0": Scenario("sinusoidal-A0", a0_id="sinusoidal-A0", cloud=False,
                              u0_amplitude=0.5),
    "checkerboard-A0": Scenario("checkerboard-A0", a0_id="checkerboard-A0", cloud=False,
                                u0_amplitude=0.5),
    "exp-memory-kernel": Scenario("exp-memory-kernel", a0_id="sinusoidal-A0",
                                  a1_id="exp-memory-kernel", cloud=False, u0_amplitude=0.5),
    "coupled-cloud": Scenario("coupled-cloud", a0_id="sinusoidal-A0", cloud=True,
                              u0_amplitude=0.3),
}


def get_scenario(name: str, a0_id=None, a1_id=None, vmax=None, lattice=None) -> Scenario:
    try:
        sc = SCENARIOS[name]
    except KeyError:
        raise KeyError("unknown scenario %r (have: %s)"
                       % (name, ", ".join(sorted(SCENARIOS)))) from None
    changes = {}
    if a0_id:
        changes["a0_id"] = a0_id
    if a1_id is not None:
        changes["a1_id"] = a1_id or None
    if vmax is not None:
        changes["vmax"] = vmax
    if lattice is not None:
        changes["lattice"] = tuple(lattice)
    return replace(sc, **changes) if changes else sc
