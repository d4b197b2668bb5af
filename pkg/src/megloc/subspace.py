"""Covariance-based scanning localizers: MUSIC and RAP-MUSIC.

The localizer value at grid point p is the subspace correlation
||Us^T a_p|| / ||a_p|| between the unit-normalized topography and the signal
subspace Us (top eigenvectors of the sample covariance). RAP-MUSIC finds
sources one at a time: after each find it projects the found topographies out
of both the data and every lead-field column, then rescans for the global
maximum with a subspace of rank reduced by one.

The projector is built and applied uniformly at every recursion step
(including the first, where it is the identity), so a localization run costs
O(Q * P) projected-column evaluations of O(M^2) each regardless of how many
sources have been found. Timing comparisons rely on this being the one and
only code path.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import InvalidArgumentError, NumericError
from .forward import LeadFieldMatrix
from .geometry import _readonly

_LOCAL_MAX_NEIGHBORS = 6
# Projected columns whose norm collapses below this fraction of the original
# are topographies of already-found sources; their localizer value is pinned
# to zero so the argmax cannot return a duplicate index.
_DEFLATED_COLUMN_FRACTION = 1e-8


@dataclass(frozen=True)
class SignalSubspace:
    """Orthonormal basis of the top-Q covariance eigenvectors."""

    basis: np.ndarray
    eigenvalues: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "basis", _readonly(self.basis))
        object.__setattr__(self, "eigenvalues", _readonly(self.eigenvalues))
        gram = self.basis.T @ self.basis
        if np.max(np.abs(gram - np.eye(gram.shape[0]))) > 1e-10:
            raise NumericError("subspace basis is not orthonormal")
        if np.any(np.diff(self.eigenvalues) > 0):
            raise InvalidArgumentError("eigenvalues must be sorted descending")

    @property
    def rank(self) -> int:
        return self.basis.shape[1]


@dataclass(frozen=True)
class LocalizationResult:
    """Found grid indices with positions, localizer peaks, and wall time.

    `requested` records how many sources were asked for; non-recursive MUSIC
    may return fewer when the map has too few local maxima.
    """

    indices: tuple
    positions: np.ndarray
    localizer_values: tuple
    elapsed: float
    requested: int

    def __post_init__(self):
        object.__setattr__(self, "positions", _readonly(self.positions))
        if len(set(self.indices)) != len(self.indices):
            raise InvalidArgumentError("found indices must be distinct")

    @property
    def complete(self) -> bool:
        return len(self.indices) == self.requested

    def flat_record(self) -> dict:
        """Flatten for CSV emission."""
        return {
            "indices": list(self.indices),
            "positions": [list(map(float, row)) for row in self.positions],
            "localizer_values": [float(v) for v in self.localizer_values],
            "elapsed_s": self.elapsed,
        }


def sample_covariance(measurements: np.ndarray) -> np.ndarray:
    """C = Y Y^T / N for an M x N measurement matrix."""
    y = np.atleast_2d(np.asarray(measurements, dtype=np.float64))
    if y.shape[1] < 1:
        raise InvalidArgumentError("need at least one snapshot")
    return y @ y.T / y.shape[1]


def signal_subspace(covariance: np.ndarray, q: int) -> SignalSubspace:
    """Top-q eigenpairs of a symmetric covariance, sign-normalized.

    The sign convention makes each eigenvector's largest-magnitude component
    positive, so results are deterministic across LAPACK builds.
    """
    c = np.asarray(covariance, dtype=np.float64)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise InvalidArgumentError("covariance must be square")
    if not 1 <= q < c.shape[0]:
        raise InvalidArgumentError("subspace rank must satisfy 1 <= q < M")
    if np.max(np.abs(c - c.T)) > 1e-8 * max(1.0, np.max(np.abs(c))):
        raise InvalidArgumentError("covariance must be symmetric")
    try:
        eigenvalues, eigenvectors = np.linalg.eigh(c)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"eigendecomposition failed: {exc}") from exc
    eigenvalues = eigenvalues[::-1][:q]
    basis = eigenvectors[:, ::-1][:, :q].copy()
    for k in range(q):
        lead = np.argmax(np.abs(basis[:, k]))
        if basis[lead, k] < 0:
            basis[:, k] = -basis[:, k]
    return SignalSubspace(basis=basis, eigenvalues=np.clip(eigenvalues, 0.0, None))


def music_map(subspace: SignalSubspace, lead_field: LeadFieldMatrix) -> np.ndarray:
    """Subspace correlation per grid point, in [0, 1]."""
    return _music_map_arrays(subspace.basis, lead_field.entries)


def _music_map_arrays(basis: np.ndarray, columns: np.ndarray, reference_norms=None) -> np.ndarray:
    if basis.shape[0] != columns.shape[0]:
        raise InvalidArgumentError("subspace and lead field have inconsistent row counts")
    col_norms = np.linalg.norm(columns, axis=0)
    projected = np.linalg.norm(basis.T @ columns, axis=0)
    if reference_norms is None:
        if np.any(col_norms == 0.0):
            raise InvalidArgumentError("lead field contains a zero-norm column")
        return projected / col_norms
    # Deflated scan: zero out columns annihilated by the projector.
    alive = col_norms > _DEFLATED_COLUMN_FRACTION * reference_norms
    values = np.zeros_like(col_norms)
    np.divide(projected, col_norms, out=values, where=alive)
    return values


def _orthonormal_projector(found_topographies: np.ndarray) -> np.ndarray:
    """I - B (B^T B)^-1 B^T computed through QR for numerical robustness."""
    m, k = found_topographies.shape
    if k == 0:
        return np.eye(m)
    q_basis, r = np.linalg.qr(found_topographies)
    diag = np.abs(np.diag(r))
    if np.any(diag < 1e-12 * diag.max()):
        raise NumericError("found topographies are rank deficient; cannot deflate")
    return np.eye(m) - q_basis @ q_basis.T


def rap_music_localize(
    measurements: np.ndarray, lead_field: LeadFieldMatrix, q: int
) -> LocalizationResult:
    """Recursively localize q sources by projecting out found topographies.

    At step k the projector built from the k-1 found topographies is applied
    to the data and to every lead-field column, the signal subspace of rank
    q - k + 1 is extracted from the projected covariance, and the global
    argmax of the localizer map (lowest index on exact ties) is appended.

    Args:
        measurements: M x N sensor data.
        lead_field: scanning grid operator.
        q: number of sources to find; 1 <= q <= 3 and q < M.

    Returns:
        LocalizationResult with q found sources and the per-step peak values.
    """
    y = np.atleast_2d(np.asarray(measurements, dtype=np.float64))
    _check_localize_args(y, lead_field, q)
    started = time.perf_counter()
    a = lead_field.entries
    original_norms = np.linalg.norm(a, axis=0)
    found: list[int] = []
    peaks: list[float] = []
    for k in range(1, q + 1):
        projector = _orthonormal_projector(a[:, found])
        y_proj = projector @ y
        a_proj = projector @ a
        subspace = signal_subspace(sample_covariance(y_proj), q - k + 1)
        values = _music_map_arrays(subspace.basis, a_proj, reference_norms=original_norms)
        best = int(np.argmax(values))
        found.append(best)
        peaks.append(float(values[best]))
    elapsed = time.perf_counter() - started
    return LocalizationResult(
        indices=tuple(found),
        positions=lead_field.space.positions[found],
        localizer_values=tuple(peaks),
        elapsed=elapsed,
        requested=q,
    )


def music_localize(
    measurements: np.ndarray, lead_field: LeadFieldMatrix, q: int
) -> LocalizationResult:
    """Non-recursive MUSIC: q largest local maxima of a single localizer map.

    Local maxima are taken over the grid's 6-nearest-neighbor graph (the grid
    is a point cloud, not a lattice). If fewer than q local maxima exist the
    result is returned short, flagged through `requested`.
    """
    y = np.atleast_2d(np.asarray(measurements, dtype=np.float64))
    _check_localize_args(y, lead_field, q)
    started = time.perf_counter()
    subspace = signal_subspace(sample_covariance(y), q)
    values = _music_map_arrays(subspace.basis, lead_field.entries)
    positions = lead_field.space.positions
    k_neighbors = min(_LOCAL_MAX_NEIGHBORS, len(positions) - 1)
    _, neighbor_idx = cKDTree(positions).query(positions, k=k_neighbors + 1)
    neighbor_vals = values[neighbor_idx[:, 1:]]
    is_max = values >= neighbor_vals.max(axis=1)
    candidates = np.flatnonzero(is_max)
    order = np.lexsort((candidates, -values[candidates]))
    chosen = candidates[order][:q]
    elapsed = time.perf_counter() - started
    return LocalizationResult(
        indices=tuple(int(i) for i in chosen),
        positions=positions[chosen],
        localizer_values=tuple(float(values[i]) for i in chosen),
        elapsed=elapsed,
        requested=q,
    )


def _check_localize_args(y: np.ndarray, lead_field: LeadFieldMatrix, q: int) -> None:
    if y.shape[0] != lead_field.n_sensors:
        raise InvalidArgumentError("measurement row count must equal sensor count")
    if not 1 <= q <= 3:
        raise InvalidArgumentError("Q must be 1, 2, or 3")
    if q >= y.shape[0]:
        raise InvalidArgumentError("Q must be smaller than the sensor count")
