"""Forward model: lead field computation and sensor data simulation.

The lead field uses the analytic current-dipole field in a homogeneous
medium with unit constant: a sensor at r with pickup orientation n sees, from
a unit dipole at p with orientation q,

    a = (q x (r - p)) . n / |r - p|^3

Column p of the lead field is the topography of grid point p. Measurements
are Y = A[:, indices] @ S plus Gaussian noise rescaled to hit the requested
Frobenius-norm SNR exactly (dB on the amplitude ratio, 20*log10).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError, NumericError, SingularityError
from .geometry import SensorArray, SourceSpace, _readonly
from .rng import make_rng

NOISELESS = "noiseless"


@dataclass(frozen=True)
class LeadFieldMatrix:
    """M x P forward operator; column p is the topography of grid point p.

    Carries the source space it was computed for, which is what downstream
    consumers (localizers, datasets) need to turn indices into coordinates.
    """

    entries: np.ndarray
    space: SourceSpace

    def __post_init__(self):
        object.__setattr__(self, "entries", _readonly(self.entries))
        if self.entries.ndim != 2:
            raise InvalidArgumentError("lead field entries must be a 2-D array")
        if self.entries.shape[1] != self.space.n_points:
            raise InvalidArgumentError(
                "lead field column count must equal the number of grid points"
            )
        if not np.all(np.isfinite(self.entries)):
            raise InvalidArgumentError("lead field entries must be finite")
        if np.any(np.linalg.norm(self.entries, axis=0) == 0.0):
            raise InvalidArgumentError("every topography must have positive norm")

    @property
    def n_sensors(self) -> int:
        return self.entries.shape[0]

    @property
    def n_points(self) -> int:
        return self.entries.shape[1]


@dataclass(frozen=True)
class SourceActivation:
    """Q active grid indices with their Q x N source time courses."""

    indices: tuple
    timecourses: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "indices", tuple(int(i) for i in self.indices))
        tc = np.atleast_2d(np.asarray(self.timecourses, dtype=np.float64))
        object.__setattr__(self, "timecourses", _readonly(tc))
        if len(self.indices) < 1:
            raise InvalidArgumentError("activation needs at least one source")
        if len(set(self.indices)) != len(self.indices):
            raise InvalidArgumentError("activation indices must be distinct")
        if self.timecourses.shape[0] != len(self.indices):
            raise InvalidArgumentError("one timecourse row per active source required")
        if self.timecourses.shape[1] < 1:
            raise InvalidArgumentError("timecourses need at least one sample")

    @property
    def n_sources(self) -> int:
        return len(self.indices)

    @property
    def n_samples(self) -> int:
        return self.timecourses.shape[1]


@dataclass(frozen=True)
class Recording:
    """Simulated M x N sensor measurements with their noise realization.

    measurements = signal + noise entrywise; the signal part is recoverable
    as measurements - noise.
    """

    measurements: np.ndarray
    noise: np.ndarray
    snr_db: object
    rng_seed: int

    def __post_init__(self):
        object.__setattr__(self, "measurements", _readonly(self.measurements))
        object.__setattr__(self, "noise", _readonly(self.noise))
        if self.measurements.shape != self.noise.shape:
            raise InvalidArgumentError("measurements and noise must share a shape")

    @property
    def signal(self) -> np.ndarray:
        return self.measurements - self.noise

    @property
    def n_samples(self) -> int:
        return self.measurements.shape[1]


def compute_lead_field(sensors: SensorArray, space: SourceSpace) -> LeadFieldMatrix:
    """Evaluate the analytic dipole field for every sensor/grid-point pair.

    Args:
        sensors: the measuring array.
        space: the candidate dipole grid.

    Returns:
        LeadFieldMatrix with entries[m, p] = (q_p x (r_m - p)) . n_m / |r_m - p|^3.

    Raises:
        InvalidArgumentError: some sensor is not strictly farther from the
            origin than every source.
        SingularityError: a sensor coincides with a grid point.
    """
    sensor_r = np.linalg.norm(sensors.positions, axis=1)
    source_r = np.linalg.norm(space.positions, axis=1)
    if sensor_r.min() <= source_r.max():
        raise InvalidArgumentError(
            "every sensor must be strictly farther from the origin than every source"
        )
    # diff[m, p, :] = r_m - p
    diff = sensors.positions[:, None, :] - space.positions[None, :, :]
    dist = np.linalg.norm(diff, axis=2)
    if dist.min() == 0.0:
        raise SingularityError("sensor coincides with a source position")
    cross = np.cross(space.orientations[None, :, :], diff)
    entries = np.einsum("mpk,mk->mp", cross, sensors.orientations) / dist**3
    return LeadFieldMatrix(entries=entries, space=space)


def topography(lead_field: LeadFieldMatrix, index: int) -> np.ndarray:
    """Return the sensor pattern of a unit dipole at grid point `index`."""
    if not 0 <= index < lead_field.n_points:
        raise InvalidArgumentError(
            f"grid index {index} out of range [0, {lead_field.n_points})"
        )
    return lead_field.entries[:, index].copy()


def measure_snr(signal: np.ndarray, noise: np.ndarray) -> float:
    """Frobenius-norm SNR in dB: 20*log10(||signal||_F / ||noise||_F)."""
    signal = np.asarray(signal, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if signal.shape != noise.shape:
        raise InvalidArgumentError("signal and noise must share a shape")
    noise_norm = np.linalg.norm(noise)
    if noise_norm == 0.0:
        raise InvalidArgumentError("SNR is undefined for a zero noise matrix")
    signal_norm = np.linalg.norm(signal)
    if signal_norm == 0.0:
        return -math.inf
    return 20.0 * math.log10(signal_norm / noise_norm)


def simulate(
    lead_field: LeadFieldMatrix,
    activation: SourceActivation,
    snr_db,
    seed: int,
) -> Recording:
    """Mix active sources through the lead field and add calibrated noise.

    The noise matrix is drawn i.i.d. standard normal and then rescaled so
    that measure_snr(signal, noise) equals `snr_db` exactly; pass
    ``NOISELESS`` for a zero noise matrix.

    Raises:
        InvalidArgumentError: an activation index is out of range, or a
            finite SNR is requested for an identically zero signal.
    """
    idx = np.asarray(activation.indices, dtype=np.intp)
    if idx.max() >= lead_field.n_points:
        raise InvalidArgumentError("activation index out of range for this lead field")
    signal = lead_field.entries[:, idx] @ activation.timecourses

    if isinstance(snr_db, str):
        if snr_db != NOISELESS:
            raise InvalidArgumentError(f"unknown SNR sentinel {snr_db!r}")
        noise = np.zeros_like(signal)
        return Recording(measurements=signal, noise=noise, snr_db=NOISELESS, rng_seed=seed)

    snr_db = float(snr_db)
    signal_norm = np.linalg.norm(signal)
    if signal_norm == 0.0:
        raise InvalidArgumentError("SNR is undefined for a zero signal")
    rng = make_rng(seed)
    noise = rng.standard_normal(signal.shape)
    raw_norm = np.linalg.norm(noise)
    if raw_norm == 0.0:
        raise NumericError("degenerate noise draw")
    noise *= signal_norm / (raw_norm * 10.0 ** (snr_db / 20.0))
    return Recording(
        measurements=signal + noise, noise=noise, snr_db=snr_db, rng_seed=seed
    )


def perturb_lead_field(
    lead_field: LeadFieldMatrix, rho: float, seed: int
) -> LeadFieldMatrix:
    """Add a Gaussian model error with ||dA||_F = rho * ||A||_F exactly.

    rho = 0 returns the input unchanged. The perturbed matrix keeps the same
    source space (the error models forward-model misestimation, not moved
    sources).
    """
    if rho < 0:
        raise InvalidArgumentError("perturbation fraction must be >= 0")
    if rho == 0.0:
        return lead_field
    rng = make_rng(seed)
    delta = rng.standard_normal(lead_field.entries.shape)
    delta *= rho * np.linalg.norm(lead_field.entries) / np.linalg.norm(delta)
    return LeadFieldMatrix(entries=lead_field.entries + delta, space=lead_field.space)
