"""Surfaces of section shared by the integrator and the survey machinery.

Two kinds are supported:

    theta-section:  theta = value crossed with theta' > 0; free
                    coordinates (r, p_r)
    radial-section: r = value crossed with r' > 0; free coordinates
                    (theta, p_theta)

Grid ranges default to the full feature-bearing window: wells to beyond the
outer orbit for the theta-section, one full angular period with the entire
angular-momentum budget for the radial section.
"""

import math
from dataclasses import dataclass

import numpy as np

from .dynamics import angular_factor
from .errors import ConfigError

__all__ = ["SectionSpec", "theta_section", "radial_section"]

THETA_KIND = "theta"
RADIAL_KIND = "radial"


@dataclass(frozen=True)
class SectionSpec:
    """A section condition plus the grid window on its free coordinates."""

    kind: str                  # "theta" or "radial"
    value: float               # theta_0 or r_0
    axis1_range: tuple         # (lo, hi) of r (theta-section) or theta
    axis2_range: tuple         # (lo, hi) of p_r (theta-section) or p_theta
    resolution: int = 400

    def __post_init__(self):
        if self.kind not in (THETA_KIND, RADIAL_KIND):
            raise ConfigError(f"unknown section kind {self.kind!r}")
        if self.resolution < 2:
            raise ConfigError("resolution must be at least 2")
        for lo, hi in (self.axis1_range, self.axis2_range):
            if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
                raise ConfigError("section ranges must be finite with lo < hi")
        if self.kind == RADIAL_KIND and self.value <= 0:
            raise ConfigError("radial section needs a positive radius")

    @property
    def axis_names(self):
        if self.kind == THETA_KIND:
            return ("r", "p_r")
        return ("theta", "p_theta")

    def axes(self):
        """(axis1, axis2) grid node coordinates, resolution points each.

        The radial section's angular axis is half-open (endpoint excluded)
        so that the grid tiles the period exactly and theta -> theta + pi
        is a clean roll by resolution/2 cells; all other axes include both
        endpoints.
        """
        endpoint1 = self.kind != RADIAL_KIND
        a1 = np.linspace(*self.axis1_range, self.resolution, endpoint=endpoint1)
        a2 = np.linspace(*self.axis2_range, self.resolution)
        return a1, a2

    def with_resolution(self, n):
        return SectionSpec(self.kind, self.value, self.axis1_range,
                           self.axis2_range, int(n))


def theta_section(params, theta0=0.0, r_range=(2.0, 14.0), p_r_range=None,
                  resolution=400):
    """theta = theta0, theta' > 0 section; p_r spans the kinetic budget."""
    if p_r_range is None:
        b = math.sqrt(params.mu)
        p_r_range = (-b, b)
    return SectionSpec(THETA_KIND, theta0, r_range, p_r_range, resolution)


def radial_section(params, r0=3.6, theta_range=(-math.pi / 2, 3 * math.pi / 2),
                   p_theta_range=None, resolution=400):
    """r = r0, r' > 0 section; p_theta spans the kinetic budget at r0."""
    if p_theta_range is None:
        b = 1.0 / math.sqrt(angular_factor(params, r0))
        p_theta_range = (-b, b)
    return SectionSpec(RADIAL_KIND, r0, theta_range, p_theta_range, resolution)
