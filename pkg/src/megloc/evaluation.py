"""Monte-Carlo experiment harness: accuracy sweeps, robustness sweeps,
timing comparisons, and CSV reporting.

Per-trial seeds are derived from (config seed, condition values, trial
index), never from call order, so two localizers swept under the same config
consume identical simulated data trial for trial, and a robustness sweep's
rho = 0 row is bit-identical to the accuracy sweep row.
"""

from __future__ import annotations

import csv
import itertools
import statistics
import time
from dataclasses import dataclass, replace

import numpy as np

from .errors import InvalidArgumentError
from .forward import LeadFieldMatrix, perturb_lead_field
from .geometry import SourceSpace
from .network import NetworkModel, ServingEngine, build_cnn, build_mlp
from .rng import derive_seed
from .signals import RANDOM_CORRELATION, draw_example
from .subspace import music_localize, rap_music_localize

RAP_MUSIC, MUSIC, MLP_MODEL, CNN_MODEL = "rap_music", "music", "mlp_model", "cnn_model"

ACCURACY_COLUMNS = (
    "condition_snr_db",
    "condition_corr",
    "q",
    "n_samples",
    "localizer",
    "trials",
    "mean_error_m",
    "stderr_m",
    "mean_elapsed_s",
)
TIMING_COLUMNS = ("algorithm", "q", "n_samples", "median_ms", "repeats")


@dataclass(frozen=True)
class ExperimentConfig:
    """One sweep: localizer, source count, conditions, and trial budget."""

    localizer: object
    q: int
    snr_values: tuple = (0.0,)
    correlation_values: tuple = (RANDOM_CORRELATION,)
    n_samples: int = 16
    trials_per_condition: int = 200
    perturbation_rhos: tuple = ()
    seed: int = 0
    amplitude: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "snr_values", tuple(_norm_condition(v) for v in self.snr_values))
        object.__setattr__(
            self, "correlation_values", tuple(_norm_condition(v) for v in self.correlation_values)
        )
        object.__setattr__(self, "perturbation_rhos", tuple(float(r) for r in self.perturbation_rhos))
        if not 1 <= self.q <= 3:
            raise InvalidArgumentError("Q must be 1, 2, or 3")
        if self.n_samples < 1:
            raise InvalidArgumentError("n_samples must be >= 1")
        if self.trials_per_condition < 1:
            raise InvalidArgumentError("need at least one trial per condition")
        if any(r < 0 for r in self.perturbation_rhos):
            raise InvalidArgumentError("perturbation fractions must be >= 0")


def _norm_condition(value):
    """Condition values hash into trial seeds; pin their type early."""
    return value if isinstance(value, str) else float(value)


@dataclass(frozen=True)
class SweepRow:
    snr_db: object
    corr: object
    q: int
    n_samples: int
    localizer: str
    trials: int
    mean_error_m: float
    stderr_m: float
    mean_elapsed_s: float
    rho: float | None = None


@dataclass(frozen=True)
class SweepReport:
    rows: tuple
    kind: str = "accuracy"


@dataclass(frozen=True)
class TimingRow:
    algorithm: str
    q: int
    n_samples: int
    median_ms: float
    repeats: int


@dataclass(frozen=True)
class TimingReport:
    rows: tuple


def assignment_error(true_positions: np.ndarray, estimated_positions: np.ndarray) -> float:
    """Permutation-optimal mean Euclidean distance between two point sets.

    The minimum over all Q! row matchings of the mean distance between
    matched rows, in meters. Order-invariant and symmetric.
    """
    a = np.asarray(true_positions, dtype=np.float64).reshape(-1, 3)
    b = np.asarray(estimated_positions, dtype=np.float64).reshape(-1, 3)
    if a.shape != b.shape:
        raise InvalidArgumentError("position sets must have matching shapes")
    q = a.shape[0]
    if not 1 <= q <= 3:
        raise InvalidArgumentError("assignment error supports 1 to 3 sources")
    dists = np.linalg.norm(a[:, None, :] - b[None, :, :], axis=2)
    best = min(
        sum(dists[i, perm[i]] for i in range(q))
        for perm in itertools.permutations(range(q))
    )
    return float(best) / q


class _SubspaceLocalizer:
    def __init__(self, kind: str, lead_field: LeadFieldMatrix, q: int):
        self.name = kind
        self._fn = rap_music_localize if kind == RAP_MUSIC else music_localize
        self._lead_field = lead_field
        self._q = q

    def localize(self, measurements: np.ndarray) -> np.ndarray:
        result = self._fn(measurements, self._lead_field, self._q)
        positions = result.positions
        if len(result.indices) < self._q:
            # Non-recursive MUSIC can come up short of local maxima; repeat
            # the weakest find so the error metric still sees Q rows.
            pad = np.repeat(positions[-1:], self._q - len(result.indices), axis=0)
            positions = np.vstack([positions, pad])
        return positions


class _ModelLocalizer:
    def __init__(self, name: str, model: NetworkModel):
        self.name = name
        self._engine = ServingEngine(model)

    def localize(self, measurements: np.ndarray) -> np.ndarray:
        return self._engine.predict_locations(measurements)


def make_localizer(spec, lead_field: LeadFieldMatrix, q: int, n_samples: int):
    """Resolve a localizer spec into an adapter with .name and .localize.

    Accepts "rap_music" / "music", a NetworkModel, or a mapping
    {"kind": "mlp_model" | "cnn_model", "path": ...}.
    """
    if isinstance(spec, str) and spec in (RAP_MUSIC, MUSIC):
        return _SubspaceLocalizer(spec, lead_field, q)
    if isinstance(spec, NetworkModel):
        model, name = spec, "cnn_model" if spec.has_conv else "mlp_model"
    elif isinstance(spec, dict) and spec.get("kind") in (MLP_MODEL, CNN_MODEL):
        from .fileio import read_model

        model, _ = read_model(spec["path"])
        name = spec["kind"]
    else:
        raise InvalidArgumentError(f"unknown localizer spec {spec!r}")
    _check_model_shape(model, lead_field.n_sensors, n_samples)
    if model.n_sources != q:
        raise InvalidArgumentError(
            f"model predicts {model.n_sources} sources but the sweep uses Q={q}"
        )
    return _ModelLocalizer(name, model)


def _check_model_shape(model: NetworkModel, m: int, n_samples: int) -> None:
    expected = (m, n_samples) if model.has_conv else (m,)
    if model.has_conv and model.input_shape != expected:
        raise InvalidArgumentError(
            f"model input shape {model.input_shape} does not match (M={m}, N={n_samples})"
        )
    if not model.has_conv:
        if model.input_shape != (m,) or n_samples != 1:
            raise InvalidArgumentError(
                f"snapshot model with input {model.input_shape} cannot localize "
                f"M={m}, N={n_samples} data"
            )


def _trial_seed(config: ExperimentConfig, snr, corr, trial: int) -> int:
    return derive_seed(config.seed, "trial", snr, corr, trial)


def _run_condition(
    config: ExperimentConfig,
    localizer,
    data_lead_field: LeadFieldMatrix,
    snr,
    corr,
) -> tuple:
    errors = np.empty(config.trials_per_condition)
    elapsed = np.empty(config.trials_per_condition)
    for trial in range(config.trials_per_condition):
        y, coords, _ = draw_example(
            data_lead_field,
            config.q,
            snr,
            corr,
            config.n_samples,
            config.amplitude,
            _trial_seed(config, snr, corr, trial),
        )
        started = time.perf_counter()
        estimate = localizer.localize(y)
        elapsed[trial] = time.perf_counter() - started
        errors[trial] = assignment_error(coords, estimate)
    stderr = float(errors.std(ddof=1) / np.sqrt(len(errors))) if len(errors) > 1 else 0.0
    return float(errors.mean()), stderr, float(elapsed.mean())


def run_accuracy_sweep(
    config: ExperimentConfig, lead_field: LeadFieldMatrix, space: SourceSpace
) -> SweepReport:
    """Mean localization error per (SNR, correlation) condition.

    Every trial simulates fresh sources and noise from seeds derived from
    (config.seed, condition, trial), localizes, and scores the
    permutation-optimal error against the true grid positions.
    """
    localizer = make_localizer(config.localizer, lead_field, config.q, config.n_samples)
    rows = []
    for snr in config.snr_values:
        for corr in config.correlation_values:
            mean_err, stderr, mean_dt = _run_condition(config, localizer, lead_field, snr, corr)
            rows.append(
                SweepRow(
                    snr_db=snr,
                    corr=corr,
                    q=config.q,
                    n_samples=config.n_samples,
                    localizer=localizer.name,
                    trials=config.trials_per_condition,
                    mean_error_m=mean_err,
                    stderr_m=stderr,
                    mean_elapsed_s=mean_dt,
                )
            )
    return SweepReport(rows=tuple(rows), kind="accuracy")


def run_robustness_sweep(
    config: ExperimentConfig, lead_field: LeadFieldMatrix, space: SourceSpace
) -> SweepReport:
    """Accuracy under forward-model error: data comes from a perturbed lead
    field while the localizer keeps the ideal one.

    A rho = 0 baseline row is always included; per-trial seeds match the
    accuracy sweep, so the baseline row reproduces it exactly.
    """
    if not config.perturbation_rhos:
        raise InvalidArgumentError("robustness sweep needs at least one rho")
    rhos = config.perturbation_rhos
    if 0.0 not in rhos:
        rhos = (0.0,) + rhos
    localizer = make_localizer(config.localizer, lead_field, config.q, config.n_samples)
    rows = []
    for rho in rhos:
        data_lf = perturb_lead_field(
            lead_field, rho, derive_seed(config.seed, "model-error", float(rho))
        )
        for snr in config.snr_values:
            for corr in config.correlation_values:
                mean_err, stderr, mean_dt = _run_condition(config, localizer, data_lf, snr, corr)
                rows.append(
                    SweepRow(
                        snr_db=snr,
                        corr=corr,
                        q=config.q,
                        n_samples=config.n_samples,
                        localizer=localizer.name,
                        trials=config.trials_per_condition,
                        mean_error_m=mean_err,
                        stderr_m=stderr,
                        mean_elapsed_s=mean_dt,
                        rho=rho,
                    )
                )
    return SweepReport(rows=tuple(rows), kind="robustness")


def run_timing_benchmark(
    localizers,
    lead_field: LeadFieldMatrix,
    q_values,
    n_samples_values,
    repeats: int,
    seed: int = 0,
    warmup: int = 3,
) -> TimingReport:
    """Median wall-clock localization time per (algorithm, Q, N) row.

    Deep-model rows use seeded untrained builds (latency does not depend on
    the weight values). All algorithms in a row localize the same list of
    `repeats` recordings; `warmup` extra runs are excluded from the medians.

    Args:
        localizers: algorithm names among "rap_music", "music", "mlp", "cnn";
            "mlp" only times N = 1 rows and "cnn" rows with enough samples.
        repeats: measurement count per row, at least 10.
    """
    if repeats < 10:
        raise InvalidArgumentError("timing needs at least 10 repeats")
    known = {RAP_MUSIC, MUSIC, "mlp", "cnn"}
    unknown = set(localizers) - known
    if unknown:
        raise InvalidArgumentError(f"unknown timing algorithms: {sorted(unknown)}")
    m = lead_field.n_sensors
    rows = []
    for n_samples in n_samples_values:
        for q in q_values:
            recordings = [
                draw_example(
                    lead_field, q, 0.0, RANDOM_CORRELATION, n_samples, 1.0,
                    derive_seed(seed, "timing", q, n_samples, r),
                )[0]
                for r in range(repeats)
            ]
            for algorithm in localizers:
                target = _timing_target(algorithm, lead_field, m, n_samples, q, seed)
                if target is None:
                    continue
                for y in recordings[: min(warmup, repeats)]:
                    target.localize(y)
                samples = []
                for y in recordings:
                    started = time.perf_counter()
                    target.localize(y)
                    samples.append((time.perf_counter() - started) * 1e3)
                rows.append(
                    TimingRow(
                        algorithm=target.name,
                        q=q,
                        n_samples=n_samples,
                        median_ms=float(statistics.median(samples)),
                        repeats=repeats,
                    )
                )
    return TimingReport(rows=tuple(rows))


def _timing_target(algorithm, lead_field, m, n_samples, q, seed):
    if algorithm in (RAP_MUSIC, MUSIC):
        return _SubspaceLocalizer(algorithm, lead_field, q)
    if algorithm == "mlp":
        if n_samples != 1:
            return None
        model = build_mlp(m, q, seed=derive_seed(seed, "mlp", q))
        return _ModelLocalizer(f"mlp-{q}", model)
    if n_samples < 5:
        return None
    model = build_cnn(m, n_samples, q, seed=derive_seed(seed, "cnn", q))
    return _ModelLocalizer(f"cnn-{q}", model)


def strip_timings(report: SweepReport) -> SweepReport:
    """Zero the wall-clock column of a sweep report.

    Sweep CSVs are contract-bound to be byte-identical across reruns of the
    same configuration; wall-clock means cannot be. The CLI therefore
    persists sweeps with the elapsed column zeroed, and the timing benchmark
    is the artifact that reports latencies.
    """
    rows = tuple(replace(row, mean_elapsed_s=0.0) for row in report.rows)
    return SweepReport(rows=rows, kind=report.kind)


def _format_cell(value) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_report_csv(report, path) -> None:
    """Emit a report as CSV; floats use shortest-roundtrip formatting so a
    reader recovers them losslessly."""
    if isinstance(report, TimingReport):
        header = TIMING_COLUMNS
        lines = [
            [row.algorithm, row.q, row.n_samples, row.median_ms, row.repeats]
            for row in report.rows
        ]
    elif isinstance(report, SweepReport):
        header = ACCURACY_COLUMNS
        if report.kind == "robustness":
            header = ("condition_rho",) + header
        lines = []
        for row in report.rows:
            cells = [
                row.snr_db, row.corr, row.q, row.n_samples, row.localizer,
                row.trials, row.mean_error_m, row.stderr_m, row.mean_elapsed_s,
            ]
            if report.kind == "robustness":
                cells = [0.0 if row.rho is None else row.rho] + cells
            lines.append(cells)
    else:
        raise InvalidArgumentError(f"cannot serialize report of type {type(report).__name__}")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for cells in lines:
            writer.writerow([_format_cell(c) for c in cells])


def read_report_csv(path) -> list:
    """Parse a report CSV back into dicts with numeric cells converted."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        rows = []
        for record in reader:
            parsed = {}
            for key, value in record.items():
                try:
                    parsed[key] = float(value)
                except (TypeError, ValueError):
                    parsed[key] = value
            rows.append(parsed)
    return rows
