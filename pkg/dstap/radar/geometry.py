"""
Coordinate frames, range/angle grids and the receive-array manifold.

Frame: platform at the origin, x points North, y points East, z points up.
Azimuth theta is measured from +x toward +y, elevation phi from the
horizontal plane (negative below the platform). Angles are degrees at every
public boundary and are converted to radians once, internally.
"""

from dataclasses import dataclass

import numpy as np

from dstap.utils.errors import ConfigurationError

SPEED_OF_LIGHT = 299792458.0

# Tolerance on "steps divide the span to an integer count"
_GRID_COUNT_TOL = 1e-9


@dataclass(frozen=True)
class CartesianPoint:
    x: float
    y: float
    z: float

    def as_array(self):
        return np.array([self.x, self.y, self.z], dtype=np.float64)

    @classmethod
    def from_array(cls, v):
        return cls(float(v[0]), float(v[1]), float(v[2]))


@dataclass(frozen=True)
class ArrayGeometry:
    n_elements: int
    spacing: float     # meters
    wavelength: float  # meters

    def __post_init__(self):
        if self.n_elements < 1:
            raise ConfigurationError(f"array needs at least one element, got n_elements={self.n_elements}")
        if not self.spacing > 0:
            raise ConfigurationError(f"element spacing must be positive, got {self.spacing}")
        if not self.wavelength > 0:
            raise ConfigurationError(f"wavelength must be positive, got {self.wavelength}")

    @classmethod
    def from_carrier(cls, n_elements, spacing, carrier_hz):
        return cls(n_elements, spacing, SPEED_OF_LIGHT / carrier_hz)

    @property
    def spacing_wavelengths(self):
        return self.spacing / self.wavelength


@dataclass(frozen=True)
class RangeGrid:
    r0: float     # near edge of bin 0, meters
    dr: float     # bin width, meters
    n_bins: int

    def __post_init__(self):
        if self.n_bins < 1 or not self.dr > 0 or self.r0 < 0:
            raise ConfigurationError(f"invalid range grid r0={self.r0} dr={self.dr} n_bins={self.n_bins}")

    def bin_center(self, b):
        if not 0 <= b < self.n_bins:
            raise IndexError(f"range bin {b} outside [0, {self.n_bins})")
        return self.r0 + (b + 0.5) * self.dr

    def bin_edges(self, b):
        if not 0 <= b < self.n_bins:
            raise IndexError(f"range bin {b} outside [0, {self.n_bins})")
        return self.r0 + b * self.dr, self.r0 + (b + 1) * self.dr

    def bin_of(self, r):
        b = int(np.floor((r - self.r0) / self.dr))
        return min(max(b, 0), self.n_bins - 1)

    @property
    def centers(self):
        return self.r0 + (np.arange(self.n_bins) + 0.5) * self.dr


@dataclass(frozen=True)
class AngleGrid:
    theta_min: float
    theta_max: float
    dtheta: float
    phi_min: float
    phi_max: float
    dphi: float
    n_theta: int
    n_phi: int

    @property
    def thetas(self):
        return self.theta_min + np.arange(self.n_theta) * self.dtheta

    @property
    def phis(self):
        return self.phi_min + np.arange(self.n_phi) * self.dphi

    @property
    def shape(self):
        return (self.n_theta, self.n_phi)

    def theta(self, i):
        if not 0 <= i < self.n_theta:
            raise IndexError(f"azimuth index {i} outside [0, {self.n_theta})")
        return self.theta_min + i * self.dtheta

    def phi(self, j):
        if not 0 <= j < self.n_phi:
            raise IndexError(f"elevation index {j} outside [0, {self.n_phi})")
        return self.phi_min + j * self.dphi

    def index_of(self, theta, phi):
        """Nearest grid indices for an angle pair (exact for on-grid angles)."""
        i = int(round((theta - self.theta_min) / self.dtheta))
        j = int(round((phi - self.phi_min) / self.dphi))
        return min(max(i, 0), self.n_theta - 1), min(max(j, 0), self.n_phi - 1)


def _grid_count(lo, hi, step, axis):
    if hi < lo:
        raise ConfigurationError(f"{axis} axis: max {hi} is below min {lo}")
    if not step > 0:
        raise ConfigurationError(f"{axis} axis: step must be positive, got {step}")
    steps = (hi - lo) / step
    if abs(steps - round(steps)) > _GRID_COUNT_TOL * max(1.0, abs(steps)):
        raise ConfigurationError(
            f"{axis} axis: step {step} does not divide the span [{lo}, {hi}] into a whole number of cells")
    return int(round(steps)) + 1


def make_angle_grid(theta_bounds, phi_bounds, dtheta, dphi):
    theta_min, theta_max = theta_bounds
    phi_min, phi_max = phi_bounds
    n_theta = _grid_count(theta_min, theta_max, dtheta, "azimuth")
    n_phi = _grid_count(phi_min, phi_max, dphi, "elevation")
    return AngleGrid(float(theta_min), float(theta_max), float(dtheta),
                     float(phi_min), float(phi_max), float(dphi), n_theta, n_phi)


def polar_to_cartesian(r, theta, phi):
    if r < 0:
        raise ConfigurationError(f"range must be non-negative, got {r}")
    th, ph = np.deg2rad(theta), np.deg2rad(phi)
    return CartesianPoint(
        float(r * np.cos(ph) * np.cos(th)),
        float(r * np.cos(ph) * np.sin(th)),
        float(r * np.sin(ph)),
    )


def steering_vector(array: ArrayGeometry, theta, phi):
    n = np.arange(array.n_elements)
    th, ph = np.deg2rad(theta), np.deg2rad(phi)
    return np.exp(2j * np.pi * array.spacing_wavelengths * n * np.sin(th) * np.cos(ph))


def steering_matrix(array: ArrayGeometry, angle_grid: AngleGrid):
    """All grid steering vectors as an L x (n_theta*n_phi) matrix, theta-major."""
    th = np.deg2rad(angle_grid.thetas)[:, None]
    ph = np.deg2rad(angle_grid.phis)[None, :]
    u = (np.sin(th) * np.cos(ph)).reshape(-1)
    n = np.arange(array.n_elements)[:, None]
    return np.exp(2j * np.pi * array.spacing_wavelengths * n * u[None, :])


def cell_center(range_grid: RangeGrid, angle_grid: AngleGrid, b, i, j):
    return polar_to_cartesian(range_grid.bin_center(b), angle_grid.theta(i), angle_grid.phi(j))


def ground_depression(range_grid: RangeGrid, platform_height):
    """Elevation (deg, negative) at which each bin-center range meets flat ground."""
    ratio = np.clip(platform_height / range_grid.centers, -1.0, 1.0)
    return -np.rad2deg(np.arcsin(ratio))
