"""Command-line front end.

One YAML config file describes a whole run; every command reads the sections
it needs, echoes the resolved configuration for auditability, and writes its
outputs atomically (no partial files on failure). `--set section.key=value`
overrides individual entries, `--out DIR` re-roots relative output paths,
and `--threads N` pins the BLAS thread pools (set before numpy loads, so it
only applies when the CLI runs as its own process).

Exit codes: 0 success, 2 configuration error, 3 artifact-compatibility
error (fingerprint mismatch), 4 numeric failure.

Heavy imports happen inside the command functions on purpose; keep module
level stdlib + yaml only.
"""

from __future__ import annotations

import argparse
import contextlib
import copy
import json
import os
import sys

import yaml

from .errors import (
    CompatibilityError,
    ConfigError,
    CorruptFileError,
    FormatError,
    InvalidArgumentError,
    NumericError,
)

DEFAULT_CONFIG = {
    "geometry": {
        "sensors": 306,
        "sensor_radius": 0.12,
        "sources": 500,
        "source_radius": 0.08,
        "seed": 1,
        "lead_field": "lead_field.megl",
    },
    "data": {
        "q": 1,
        "count": 1000,
        "snr_db": 10.0,
        "correlation": "random",
        "n_samples": 1,
        "amplitude": 1.0,
        "seed": 2,
        "dataset": "data.megd",
    },
    "train": {
        "arch": "mlp",
        "steps": 1000,
        "learning_rate": 0.001,
        "batch_size": 32,
        "reg_type": "none",
        "reg_weight": 0.0,
        "seed": 3,
        "source": "stream",
        "model": "model.megm",
        "history": "history.csv",
    },
    "localize": {
        "method": "rap_music",
        "model": "model.megm",
        "example_index": 0,
    },
    "sweep": {
        "localizer": "rap_music",
        "model": "model.megm",
        "q": 1,
        "snr_values": [-10.0, -5.0, 0.0, 5.0, 10.0, 20.0],
        "correlation_values": ["random"],
        "n_samples": 1,
        "trials": 200,
        "rhos": [0.05, 0.1, 0.2],
        "amplitude": 1.0,
        "seed": 4,
        "report": "sweep.csv",
    },
    "bench": {
        "algorithms": ["rap_music", "mlp", "cnn"],
        "q_values": [1, 2, 3],
        "n_samples_values": [1, 16],
        "repeats": 10,
        "seed": 5,
        "report": "timing.csv",
    },
}

_COMMANDS = (
    "gen-geometry",
    "gen-data",
    "train",
    "localize",
    "sweep",
    "perturb-sweep",
    "bench-time",
)


def _parse_args(argv):
    parser = argparse.ArgumentParser(
        prog="megloc",
        description="Simulate MEG dipole data, train deep localizers, and "
        "benchmark them against MUSIC-family scanning.",
    )
    parser.add_argument("command", choices=_COMMANDS)
    parser.add_argument("--config", help="YAML run configuration file")
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="SECTION.KEY=VALUE",
        help="override one config entry (repeatable)",
    )
    parser.add_argument("--out", default=".", help="directory for output files")
    parser.add_argument("--threads", type=int, help="pin BLAS thread pools to N threads")
    return parser.parse_args(argv)


def _load_config(path) -> dict:
    config = copy.deepcopy(DEFAULT_CONFIG)
    if path is None:
        return config
    try:
        with open(path) as fh:
            user = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed YAML in {path}: {exc}") from exc
    if user is None:
        return config
    if not isinstance(user, dict):
        raise ConfigError("config root must be a mapping of sections")
    _merge_validated(config, user, prefix="")
    return config


def _merge_validated(base: dict, user: dict, prefix: str) -> None:
    for key, value in user.items():
        label = f"{prefix}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key: {label}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config section {label} must be a mapping")
            _merge_validated(base[key], value, prefix=f"{label}.")
        else:
            base[key] = value


def _apply_overrides(config: dict, overrides) -> None:
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set needs SECTION.KEY=VALUE, got {item!r}")
        dotted, raw = item.split("=", 1)
        parts = dotted.strip().split(".")
        node = config
        for part in parts[:-1]:
            if part not in node or not isinstance(node[part], dict):
                raise ConfigError(f"unknown config key: {dotted}")
            node = node[part]
        leaf = parts[-1]
        if leaf not in node or isinstance(node[leaf], dict):
            raise ConfigError(f"unknown config key: {dotted}")
        try:
            node[leaf] = yaml.safe_load(raw)
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse value for {dotted}: {exc}") from exc


def _echo(config: dict, command: str) -> None:
    print(f"# megloc {command} resolved configuration")
    print(yaml.safe_dump(config, sort_keys=True).rstrip())


def _out_path(args, configured: str) -> str:
    if os.path.isabs(configured):
        return configured
    os.makedirs(args.out, exist_ok=True)
    return os.path.join(args.out, configured)


def _in_path(args, configured: str) -> str:
    """Inputs resolve like outputs so chained commands share --out."""
    path = configured if os.path.isabs(configured) else os.path.join(args.out, configured)
    if not os.path.exists(path):
        raise ConfigError(f"input file does not exist: {path}")
    return path


@contextlib.contextmanager
def _atomic(path: str):
    tmp = path + ".tmp"
    try:
        yield tmp
    except BaseException:
        with contextlib.suppress(OSError):
            os.unlink(tmp)
        raise
    os.replace(tmp, path)


def _cmd_gen_geometry(args, config):
    from . import fileio, forward, geometry

    section = config["geometry"]
    sensors = geometry.build_sensor_helmet(section["sensors"], section["sensor_radius"])
    space = geometry.build_synthetic_source_space(
        section["sources"], section["source_radius"], section["seed"]
    )
    lead_field = forward.compute_lead_field(sensors, space)
    path = _out_path(args, section["lead_field"])
    with _atomic(path) as tmp:
        fileio.write_lead_field(lead_field, tmp)
    print(
        f"lead field: M={lead_field.n_sensors} P={lead_field.n_points} "
        f"file={path} bytes={os.path.getsize(path)} "
        f"fingerprint={fileio.lead_field_fingerprint(lead_field):016x}"
    )
    return 0


def _cmd_gen_data(args, config):
    from . import fileio, signals

    lead_field = fileio.read_lead_field(_in_path(args, config["geometry"]["lead_field"]))
    section = config["data"]
    dataset = signals.generate_dataset(
        lead_field,
        lead_field.space,
        q=section["q"],
        count=section["count"],
        snr_db=section["snr_db"],
        correlation=section["correlation"],
        n_samples=section["n_samples"],
        seed=section["seed"],
        amplitude=section["amplitude"],
    )
    path = _out_path(args, section["dataset"])
    with _atomic(path) as tmp:
        fileio.write_dataset(dataset, tmp)
    print(
        f"dataset: examples={len(dataset)} q={section['q']} "
        f"n_samples={section['n_samples']} file={path} bytes={os.path.getsize(path)}"
    )
    return 0


def _input_scale(lead_field) -> float:
    import numpy as np

    return float(np.sqrt(np.mean(lead_field.entries**2)))


def _cmd_train(args, config):
    import numpy as np

    from . import fileio, network, signals, training
    from .rng import derive_seed

    lead_field = fileio.read_lead_field(_in_path(args, config["geometry"]["lead_field"]))
    fingerprint = fileio.lead_field_fingerprint(lead_field)
    data_cfg = config["data"]
    section = config["train"]

    if section["arch"] == "mlp":
        if data_cfg["n_samples"] != 1:
            raise ConfigError("train.arch=mlp needs data.n_samples=1")
        model = network.build_mlp(
            lead_field.n_sensors,
            data_cfg["q"],
            seed=derive_seed(section["seed"], "init"),
            normalize_input=True,
        )
    elif section["arch"] == "cnn":
        model = network.build_cnn(
            lead_field.n_sensors,
            data_cfg["n_samples"],
            data_cfg["q"],
            seed=derive_seed(section["seed"], "init"),
            normalize_input=True,
        )
    else:
        raise ConfigError(f"unknown train.arch {section['arch']!r}")

    train_config = training.TrainingConfig(
        steps=section["steps"],
        learning_rate=section["learning_rate"],
        batch_size=section["batch_size"],
        reg_type=section["reg_type"],
        reg_weight=section["reg_weight"],
        seed=section["seed"],
    )
    if section["source"] == "dataset":
        dataset = fileio.read_dataset(_in_path(args, data_cfg["dataset"]))
        _check_fingerprint(
            "dataset", dataset.metadata["lead_field_fingerprint"], "lead field", fingerprint
        )
        source = dataset
    elif section["source"] == "stream":
        def source():
            return signals.dataset_stream(
                lead_field,
                lead_field.space,
                q=data_cfg["q"],
                count=max(train_config.steps * train_config.batch_size, 1),
                snr_db=data_cfg["snr_db"],
                correlation=data_cfg["correlation"],
                n_samples=data_cfg["n_samples"],
                seed=data_cfg["seed"],
                amplitude=data_cfg["amplitude"],
                batch_size=train_config.batch_size,
            )
    else:
        raise ConfigError(f"train.source must be 'stream' or 'dataset', got {section['source']!r}")

    trained, history = training.train(model, source, train_config)

    model_path = _out_path(args, section["model"])
    with _atomic(model_path) as tmp:
        fileio.write_model(trained, tmp, lead_field_fingerprint=fingerprint)
    history_path = _out_path(args, section["history"])
    with _atomic(history_path) as tmp, open(tmp, "w", newline="") as fh:
        fh.write("step,loss,reg_term\n")
        for step, loss, reg in history:
            fh.write(f"{step},{loss!r},{reg!r}\n")
    final = history[-1][1] if history else float("nan")
    print(
        f"trained {section['arch']} q={data_cfg['q']} steps={train_config.steps} "
        f"final_loss={final} model={model_path} history={history_path}"
    )
    return 0


def _cmd_localize(args, config):
    from . import fileio
    from .subspace import music_localize, rap_music_localize

    section = config["localize"]
    dataset = fileio.read_dataset(_in_path(args, config["data"]["dataset"]))
    index = section["example_index"]
    if not 0 <= index < len(dataset):
        raise ConfigError(f"localize.example_index {index} out of range")
    measurement = dataset.inputs[index]
    q = dataset.metadata["q"]

    record = {"example": index, "localizer": section["method"]}
    if section["method"] in ("rap_music", "music"):
        lead_field = fileio.read_lead_field(_in_path(args, config["geometry"]["lead_field"]))
        _check_fingerprint(
            "dataset",
            dataset.metadata["lead_field_fingerprint"],
            "lead field",
            fileio.lead_field_fingerprint(lead_field),
        )
        fn = rap_music_localize if section["method"] == "rap_music" else music_localize
        result = fn(measurement, lead_field, q)
        record.update(result.flat_record())
    elif section["method"] == "model":
        from .network import ServingEngine

        model, model_fp = fileio.read_model(_in_path(args, section["model"]))
        _check_fingerprint(
            "dataset", dataset.metadata["lead_field_fingerprint"], "model", model_fp
        )
        positions = ServingEngine(model).predict_locations(measurement)
        record["positions"] = [list(map(float, row)) for row in positions]
    else:
        raise ConfigError(f"unknown localize.method {section['method']!r}")
    print(json.dumps(record))
    return 0


def _sweep_config(config, with_rhos: bool):
    from . import evaluation

    section = config["sweep"]
    localizer = section["localizer"]
    if localizer in ("mlp_model", "cnn_model"):
        localizer = {"kind": localizer, "path": None}  # path filled by caller
    elif localizer not in ("rap_music", "music"):
        raise ConfigError(f"unknown sweep.localizer {section['localizer']!r}")
    return evaluation.ExperimentConfig(
        localizer=localizer,
        q=section["q"],
        snr_values=tuple(section["snr_values"]),
        correlation_values=tuple(section["correlation_values"]),
        n_samples=section["n_samples"],
        trials_per_condition=section["trials"],
        perturbation_rhos=tuple(section["rhos"]) if with_rhos else (),
        seed=section["seed"],
        amplitude=section["amplitude"],
    )


def _run_sweep(args, config, robustness: bool):
    import dataclasses

    from . import evaluation, fileio

    lead_field = fileio.read_lead_field(_in_path(args, config["geometry"]["lead_field"]))
    experiment = _sweep_config(config, with_rhos=robustness)
    if isinstance(experiment.localizer, dict):
        path = _in_path(args, config["sweep"]["model"])
        model, model_fp = fileio.read_model(path)
        _check_fingerprint(
            "model", model_fp, "lead field", fileio.lead_field_fingerprint(lead_field)
        )
        experiment = dataclasses.replace(
            experiment, localizer={"kind": experiment.localizer["kind"], "path": path}
        )
    runner = evaluation.run_robustness_sweep if robustness else evaluation.run_accuracy_sweep
    report = runner(experiment, lead_field, lead_field.space)
    path = _out_path(args, config["sweep"]["report"])
    with _atomic(path) as tmp:
        # persisted sweeps are byte-reproducible: wall-clock column zeroed,
        # bench-time is the latency artifact
        evaluation.write_report_csv(evaluation.strip_timings(report), tmp)
    print(f"sweep: rows={len(report.rows)} report={path} (elapsed column zeroed for reproducibility)")
    return 0


def _cmd_bench_time(args, config):
    from . import evaluation, fileio

    lead_field = fileio.read_lead_field(_in_path(args, config["geometry"]["lead_field"]))
    section = config["bench"]
    report = evaluation.run_timing_benchmark(
        tuple(section["algorithms"]),
        lead_field,
        q_values=tuple(section["q_values"]),
        n_samples_values=tuple(section["n_samples_values"]),
        repeats=section["repeats"],
        seed=section["seed"],
    )
    path = _out_path(args, section["report"])
    with _atomic(path) as tmp:
        evaluation.write_report_csv(report, tmp)
    for row in report.rows:
        print(f"{row.algorithm} q={row.q} n={row.n_samples} median_ms={row.median_ms:.3f}")
    print(f"timing report={path}")
    return 0


def _check_fingerprint(name_a: str, fp_a: int, name_b: str, fp_b: int) -> None:
    if fp_a != fp_b:
        raise CompatibilityError(
            f"{name_a} fingerprint {fp_a:016x} does not match {name_b} fingerprint {fp_b:016x}"
        )


_DISPATCH = {
    "gen-geometry": _cmd_gen_geometry,
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "localize": _cmd_localize,
    "sweep": lambda args, config: _run_sweep(args, config, robustness=False),
    "perturb-sweep": lambda args, config: _run_sweep(args, config, robustness=True),
    "bench-time": _cmd_bench_time,
}


def main(argv=None) -> int:
    args = _parse_args(argv)
    if args.threads is not None:
        if args.threads < 1:
            print("config error: --threads must be >= 1", file=sys.stderr)
            return 2
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(args.threads)
    try:
        config = _load_config(args.config)
        _apply_overrides(config, args.overrides)
        _echo(config, args.command)
        return _DISPATCH[args.command](args, config)
    except (ConfigError, FormatError, CorruptFileError, InvalidArgumentError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except CompatibilityError as exc:
        print(f"compatibility error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
