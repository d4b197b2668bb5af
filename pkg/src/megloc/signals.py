"""Source time courses and labeled dataset generation.

Time courses are mixtures of seed-drawn sinusoids with exact pairwise sample
correlation: base mixtures are centered and orthonormalized under the sample
inner product, then recombined through a square root of the target
correlation matrix. That makes the empirical Pearson coefficient equal the
target to rounding error, not just in expectation.

Datasets map measurements to the true source coordinates. Each example is
generated from a sub-seed derived from (dataset seed, example index), so a
streaming pass and a materialized pass produce identical examples and any
example is reproducible in isolation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .errors import InvalidArgumentError
from .forward import LeadFieldMatrix, SourceActivation, simulate
from .geometry import SourceSpace
from .rng import derive_seed, make_rng

RANDOM_CORRELATION = "random"
_RANDOM_CORR_LOW, _RANDOM_CORR_HIGH = 0.0, 0.95
_SINUSOIDS_PER_ROW = 3


@dataclass(frozen=True)
class TimecourseSpec:
    """Recipe for one draw of source time courses."""

    n_samples: int = 16
    n_sources: int = 1
    target_correlation: object = RANDOM_CORRELATION
    amplitude: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n_samples < 1:
            raise InvalidArgumentError("n_samples must be >= 1")
        if self.n_sources < 1:
            raise InvalidArgumentError("n_sources must be >= 1")
        if self.amplitude <= 0:
            raise InvalidArgumentError("amplitude must be positive")
        if isinstance(self.target_correlation, str):
            if self.target_correlation != RANDOM_CORRELATION:
                raise InvalidArgumentError(
                    f"unknown correlation sentinel {self.target_correlation!r}"
                )
        elif abs(float(self.target_correlation)) > 1.0:
            raise InvalidArgumentError("correlation target must lie in [-1, 1]")


def pearson_correlation(a: np.ndarray, b: np.ndarray) -> float:
    """Sample Pearson coefficient of two equal-length vectors."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape or a.size < 2:
        raise InvalidArgumentError("need two equal-length vectors of size >= 2")
    da = a - a.mean()
    db = b - b.mean()
    na = np.linalg.norm(da)
    nb = np.linalg.norm(db)
    if na == 0.0 or nb == 0.0:
        raise InvalidArgumentError("Pearson correlation is undefined for zero variance")
    return float(np.clip(da @ db / (na * nb), -1.0, 1.0))


def _correlation_matrix(q: int, target, rng: np.random.Generator) -> np.ndarray:
    """Target correlation matrix for q sources, validated for feasibility."""
    corr = np.eye(q)
    if isinstance(target, str):  # RANDOM_CORRELATION
        while True:
            off = rng.uniform(_RANDOM_CORR_LOW, _RANDOM_CORR_HIGH, size=q * (q - 1) // 2)
            k = 0
            for i in range(q):
                for j in range(i + 1, q):
                    corr[i, j] = corr[j, i] = off[k]
                    k += 1
            if q == 2 or np.linalg.eigvalsh(corr).min() >= 1e-9:
                return corr
    rho = float(target)
    if q > 3:
        raise InvalidArgumentError("deterministic correlation targets support Q in {2, 3}")
    if q == 3 and rho < -0.5:
        raise InvalidArgumentError(
            "a common pairwise correlation below -0.5 is infeasible for three sources"
        )
    corr[~np.eye(q, dtype=bool)] = rho
    return corr


def _psd_square_root(corr: np.ndarray) -> np.ndarray:
    """Mixing matrix L with L @ L.T = corr; Cholesky when possible, else the
    symmetric eigenvalue square root (handles |rho| = 1 exactly)."""
    try:
        return np.linalg.cholesky(corr)
    except np.linalg.LinAlgError:
        w, v = np.linalg.eigh(corr)
        if w.min() < -1e-9:
            raise InvalidArgumentError("correlation matrix is not positive semidefinite")
        return v @ np.diag(np.sqrt(np.clip(w, 0.0, None)))


def _orthonormal_sinusoid_rows(
    q: int, n: int, rng: np.random.Generator
) -> np.ndarray:
    """q centered rows, orthonormal under <a, b> = mean(a * b), each a
    mixture of several sinusoids."""
    if n < q + 1:
        raise InvalidArgumentError(
            f"{q} correlated sources need at least {q + 1} time samples"
        )
    t = np.arange(n) / n
    rows = np.empty((q, n))
    built = 0
    while built < q:
        freqs = rng.uniform(0.5, max(1.0, n / 2.0), size=_SINUSOIDS_PER_ROW)
        phases = rng.uniform(0.0, 2.0 * np.pi, size=_SINUSOIDS_PER_ROW)
        weights = rng.uniform(0.5, 1.5, size=_SINUSOIDS_PER_ROW)
        row = (weights[:, None] * np.sin(2.0 * np.pi * freqs[:, None] * t + phases[:, None])).sum(axis=0)
        row = row - row.mean()
        for _ in range(2):  # twice-iterated Gram-Schmidt keeps orthogonality at rounding level
            for k in range(built):
                row -= (row @ rows[k] / n) * rows[k]
        rms = np.sqrt(row @ row / n)
        if rms > 1e-8:  # redraw nearly dependent mixtures
            rows[built] = row / rms
            built += 1
    return rows


def sinusoid_mixture_timecourses(spec: TimecourseSpec) -> np.ndarray:
    """Draw Q x N source time courses with controlled pairwise correlation.

    Each row is a zero-mean, unit-RMS sinusoid mixture scaled by
    spec.amplitude. For a numeric target (Q = 2, or Q = 3 with one common
    pairwise value) the empirical Pearson correlation of every source pair
    equals the target exactly; the ``"random"`` sentinel draws each pairwise
    target uniformly from [0, 0.95] (redrawing the rare infeasible Q = 3
    combinations).

    Single-snapshot specs (n_samples = 1) degenerate to constant rows at the
    source amplitude; no correlation structure exists for one sample.
    """
    q, n = spec.n_sources, spec.n_samples
    if n == 1:
        return np.full((q, 1), spec.amplitude)
    rng = make_rng(spec.seed)
    if q == 1:
        basis = _orthonormal_sinusoid_rows(1, n, rng)
        return spec.amplitude * basis
    corr = _correlation_matrix(q, spec.target_correlation, rng)
    mixing = _psd_square_root(corr)
    basis = _orthonormal_sinusoid_rows(q, n, rng)
    return spec.amplitude * (mixing @ basis)


@dataclass(frozen=True)
class LabeledDataset:
    """Measurement matrices paired with canonically ordered source coordinates.

    inputs : list of M x N float arrays.
    targets : list of Q x 3 coordinate arrays, rows sorted lexicographically
        by (x, y, z).
    metadata : generation parameters plus the lead-field fingerprint.
    """

    inputs: list
    targets: list
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.inputs) != len(self.targets):
            raise InvalidArgumentError("inputs and targets must have equal length")

    def __len__(self) -> int:
        return len(self.inputs)


def _draw_indices(space: SourceSpace, q: int, rng: np.random.Generator) -> np.ndarray:
    if q > space.n_points:
        raise InvalidArgumentError("cannot draw more sources than grid points")
    return rng.choice(space.n_points, size=q, replace=False)


def draw_example(
    lead_field: LeadFieldMatrix,
    q: int,
    snr_db,
    correlation,
    n_samples: int,
    amplitude: float,
    seed: int,
):
    """Generate one labeled example: (measurements, sorted targets, indices).

    Deterministic in `seed`; dataset generation, streaming, and the sweep
    harness all funnel through this function so they agree example-for-example.
    """
    space = lead_field.space
    idx = _draw_indices(space, q, make_rng(derive_seed(seed, "indices")))
    tc = sinusoid_mixture_timecourses(
        TimecourseSpec(
            n_samples=n_samples,
            n_sources=q,
            target_correlation=correlation,
            amplitude=amplitude,
            seed=derive_seed(seed, "timecourses"),
        )
    )
    activation = SourceActivation(indices=idx, timecourses=tc)
    recording = simulate(lead_field, activation, snr_db, derive_seed(seed, "noise"))
    coords = space.positions[idx]
    order = np.lexsort((coords[:, 2], coords[:, 1], coords[:, 0]))
    return recording.measurements, coords[order], idx[order]


def generate_dataset(
    lead_field: LeadFieldMatrix,
    space: SourceSpace,
    q: int,
    count: int,
    snr_db,
    correlation=RANDOM_CORRELATION,
    n_samples: int = 16,
    seed: int = 0,
    amplitude: float = 1.0,
) -> LabeledDataset:
    """Materialize `count` labeled examples with Q sources each.

    Args:
        lead_field: forward operator (must belong to `space`).
        space: source grid the targets are drawn from.
        q: sources per example, 1 <= q <= 3.
        count: number of examples (>= 1).
        snr_db: per-example SNR in dB, or the noiseless sentinel.
        correlation: numeric pairwise target or ``"random"``.
        n_samples: time samples per example.
        seed: dataset seed; examples use sub-seeds derived per index.
    """
    _check_dataset_args(lead_field, space, q, count)
    inputs, targets = [], []
    for k in range(count):
        y, coords, _ = draw_example(
            lead_field, q, snr_db, correlation, n_samples, amplitude, derive_seed(seed, k)
        )
        inputs.append(y)
        targets.append(coords)
    meta = _dataset_metadata(lead_field, q, count, snr_db, correlation, n_samples, seed, amplitude)
    return LabeledDataset(inputs=inputs, targets=targets, metadata=meta)


def dataset_stream(
    lead_field: LeadFieldMatrix,
    space: SourceSpace,
    q: int,
    count: int,
    snr_db,
    correlation=RANDOM_CORRELATION,
    n_samples: int = 16,
    seed: int = 0,
    amplitude: float = 1.0,
    batch_size: int = 32,
) -> Iterator[tuple]:
    """Yield the same examples as :func:`generate_dataset`, one batch at a
    time, with memory independent of `count`.

    Yields (inputs, targets) pairs where inputs is a (B, M, N) array and
    targets a (B, Q, 3) array; the final batch may be short.
    """
    _check_dataset_args(lead_field, space, q, count)
    if batch_size < 1:
        raise InvalidArgumentError("batch_size must be >= 1")
    for start in range(0, count, batch_size):
        stop = min(start + batch_size, count)
        xs = np.empty((stop - start, lead_field.n_sensors, n_samples))
        ys = np.empty((stop - start, q, 3))
        for k in range(start, stop):
            y, coords, _ = draw_example(
                lead_field, q, snr_db, correlation, n_samples, amplitude, derive_seed(seed, k)
            )
            xs[k - start] = y
            ys[k - start] = coords
        yield xs, ys


def _check_dataset_args(lead_field, space, q, count) -> None:
    if space is not lead_field.space and not np.array_equal(
        space.positions, lead_field.space.positions
    ):
        raise InvalidArgumentError("source space does not match the lead field")
    if not 1 <= q <= 3:
        raise InvalidArgumentError("Q must be 1, 2, or 3")
    if q > space.n_points:
        raise InvalidArgumentError("Q exceeds the number of grid points")
    if count < 1:
        raise InvalidArgumentError("count must be >= 1")


def _dataset_metadata(lead_field, q, count, snr_db, correlation, n_samples, seed, amplitude) -> dict:
    from .fileio import lead_field_fingerprint

    return {
        "q": q,
        "count": count,
        "snr_db": snr_db,
        "correlation": correlation,
        "n_samples": n_samples,
        "seed": seed,
        "amplitude": amplitude,
        "lead_field_fingerprint": lead_field_fingerprint(lead_field),
    }
