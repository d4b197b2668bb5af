"""Synthetic sensor and source geometry.

The sensor array is a quasi-uniform Fibonacci arrangement on the upper
hemisphere of a helmet sphere, with radially oriented pickup axes. The source
space is the same arrangement on a smaller sphere, with a seed-fixed random
tangential dipole orientation per grid point. Both stand in for anatomy-driven
geometry while keeping every quantity analytic and reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import InvalidArgumentError
from .rng import make_rng

_GOLDEN_ANGLE = np.pi * (3.0 - np.sqrt(5.0))

DEFAULT_SENSOR_COUNT = 306
DEFAULT_SENSOR_RADIUS = 0.12
DEFAULT_SOURCE_RADIUS = 0.08


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


def _check_unit_rows(vectors: np.ndarray, what: str) -> None:
    norms = np.linalg.norm(vectors, axis=1)
    if not np.all(np.abs(norms - 1.0) <= 1e-12):
        raise InvalidArgumentError(f"{what} must be unit vectors (norm 1 +/- 1e-12)")


@dataclass(frozen=True)
class SensorArray:
    """Positions and pickup orientations of the M sensors.

    positions : (M, 3) array in meters.
    orientations : (M, 3) array of unit vectors.
    """

    positions: np.ndarray
    orientations: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "positions", _readonly(self.positions))
        object.__setattr__(self, "orientations", _readonly(self.orientations))
        if self.positions.ndim != 2 or self.positions.shape[1] != 3:
            raise InvalidArgumentError("sensor positions must be an (M, 3) array")
        if self.positions.shape[0] < 1:
            raise InvalidArgumentError("need at least one sensor")
        if self.orientations.shape != self.positions.shape:
            raise InvalidArgumentError("sensor orientations must match positions in shape")
        if not np.all(np.isfinite(self.positions)):
            raise InvalidArgumentError("sensor positions must be finite")
        _check_unit_rows(self.orientations, "sensor orientations")

    @property
    def n_sensors(self) -> int:
        return self.positions.shape[0]


@dataclass(frozen=True)
class SourceSpace:
    """Candidate dipole grid: positions, fixed orientations, and spacing.

    positions : (P, 3) array in meters, all distinct.
    orientations : (P, 3) unit vectors (fixed dipole orientation per point).
    grid_spacing : median nearest-neighbor distance in meters.
    """

    positions: np.ndarray
    orientations: np.ndarray
    grid_spacing: float = field(default=0.0)

    def __post_init__(self):
        object.__setattr__(self, "positions", _readonly(self.positions))
        object.__setattr__(self, "orientations", _readonly(self.orientations))
        if self.positions.ndim != 2 or self.positions.shape[1] != 3:
            raise InvalidArgumentError("source positions must be a (P, 3) array")
        if self.positions.shape[0] < 2:
            raise InvalidArgumentError("source space needs at least 2 grid points")
        if not np.all(np.isfinite(self.positions)):
            raise InvalidArgumentError("source positions must be finite")
        _check_unit_rows(self.orientations, "source orientations")
        if self.grid_spacing == 0.0:
            d, _ = cKDTree(self.positions).query(self.positions, k=2)
            object.__setattr__(self, "grid_spacing", float(np.median(d[:, 1])))
        if self.grid_spacing <= 0.0:
            raise InvalidArgumentError("grid points must be distinct")

    @property
    def n_points(self) -> int:
        return self.positions.shape[0]


def _fibonacci_hemisphere(count: int, radius: float) -> np.ndarray:
    """Quasi-uniform points on the upper hemisphere (z > 0) of a sphere."""
    i = np.arange(count)
    # Archimedes: uniform z gives uniform area. Offset keeps z strictly > 0.
    z = (i + 0.5) / count
    rho = np.sqrt(1.0 - z * z)
    phi = i * _GOLDEN_ANGLE
    pts = np.column_stack([rho * np.cos(phi), rho * np.sin(phi), z])
    return radius * pts


def build_sensor_helmet(
    count: int = DEFAULT_SENSOR_COUNT, radius: float = DEFAULT_SENSOR_RADIUS
) -> SensorArray:
    """Build the default synthetic helmet: `count` sensors quasi-uniform on
    the upper hemisphere of radius `radius`, radially oriented."""
    if count < 1:
        raise InvalidArgumentError("sensor count must be >= 1")
    if radius <= 0:
        raise InvalidArgumentError("sensor radius must be positive")
    positions = _fibonacci_hemisphere(count, radius)
    orientations = positions / np.linalg.norm(positions, axis=1, keepdims=True)
    return SensorArray(positions=positions, orientations=orientations)


def build_synthetic_source_space(count: int, radius: float, seed: int) -> SourceSpace:
    """Build a deterministic quasi-uniform source grid on an upper hemisphere.

    Positions depend only on (count, radius); the seed fixes the random
    tangential dipole orientation drawn for each grid point.

    Args:
        count: number of grid points (P >= 2).
        radius: hemisphere radius in meters (> 0).
        seed: 64-bit seed for the orientation draw.

    Raises:
        InvalidArgumentError: count < 2 or radius <= 0.
    """
    if count < 2:
        raise InvalidArgumentError("source count must be >= 2")
    if radius <= 0:
        raise InvalidArgumentError("source radius must be positive")
    positions = _fibonacci_hemisphere(count, radius)
    radial = positions / np.linalg.norm(positions, axis=1, keepdims=True)

    rng = make_rng(seed)
    orientations = np.empty_like(positions)
    for p in range(count):
        # Project a random draw onto the tangent plane; redraw on the
        # measure-zero event that it is (near-)radial.
        while True:
            v = rng.standard_normal(3)
            t = v - np.dot(v, radial[p]) * radial[p]
            norm = np.linalg.norm(t)
            if norm > 1e-12:
                orientations[p] = t / norm
                break
    return SourceSpace(positions=positions, orientations=orientations)
