"""megloc: MEG dipole source localization at desk scale.

Simulates sensor recordings from dipole sources through an analytic forward
model, localizes them with MUSIC / RAP-MUSIC subspace scanning and with
trainable MLP / space-time CNN regressors, and benchmarks accuracy,
robustness to forward-model error, and inference latency.
"""

from .errors import (
    CompatibilityError,
    ConfigError,
    CorruptFileError,
    FormatError,
    InvalidArgumentError,
    MeglocError,
    NumericError,
    SingularityError,
)
from .evaluation import (
    ExperimentConfig,
    SweepReport,
    TimingReport,
    assignment_error,
    make_localizer,
    read_report_csv,
    run_accuracy_sweep,
    run_robustness_sweep,
    run_timing_benchmark,
    write_report_csv,
)
from .fileio import (
    lead_field_fingerprint,
    read_dataset,
    read_lead_field,
    read_model,
    write_dataset,
    write_lead_field,
    write_model,
)
from .forward import (
    NOISELESS,
    LeadFieldMatrix,
    Recording,
    SourceActivation,
    compute_lead_field,
    measure_snr,
    perturb_lead_field,
    simulate,
    topography,
)
from .geometry import (
    SensorArray,
    SourceSpace,
    build_sensor_helmet,
    build_synthetic_source_space,
)
from .network import (
    DenseLayer,
    NetworkModel,
    ServingEngine,
    SpaceTimeConvLayer,
    build_cnn,
    build_mlp,
    forward_pass,
    layer_activations,
    predict_locations,
)
from .rng import derive_seed, make_rng
from .signals import (
    LabeledDataset,
    RANDOM_CORRELATION,
    TimecourseSpec,
    dataset_stream,
    draw_example,
    generate_dataset,
    pearson_correlation,
    sinusoid_mixture_timecourses,
)
from .subspace import (
    LocalizationResult,
    SignalSubspace,
    music_localize,
    music_map,
    rap_music_localize,
    sample_covariance,
    signal_subspace,
)
from .training import TrainingConfig, loss_and_gradients, sgd_step, train

__version__ = "0.1.0"


def save_model(model: NetworkModel, path, lead_field_fingerprint: int = 0) -> None:
    """Serialize a model to the versioned MEGM format (bitwise round-trip)."""
    write_model(model, path, lead_field_fingerprint=lead_field_fingerprint)


def load_model(path) -> NetworkModel:
    """Load a MEGM model file; ignores the embedded lead-field fingerprint."""
    model, _ = read_model(path)
    return model
