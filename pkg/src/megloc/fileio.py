"""Binary artifact formats: lead fields (MEGL), datasets (MEGD), models (MEGM).

All files are little-endian with a 4-byte magic and a u32 format version.
Artifacts that depend on a lead field (datasets, trained models) embed a
64-bit content fingerprint of that lead field, so the CLI can refuse to
combine artifacts generated from different geometries.

MEGL layout: "MEGL", version, M u32, P u32, then M*P float64 entries in
column-major order, then P*3 positions and P*3 orientations as float64.

MEGD layout: "MEGD", version, M u32, N u32, Q u32, count u32, snr_db f64
(NaN encodes the noiseless sentinel), seed u64, lead-field fingerprint u64;
then per example M*N float32 measurements (row-major) and Q*3 float32
targets.

MEGM layout: "MEGM", version, lead-field fingerprint u64, input_scale f64,
input rank u32 + dims u32..., layer count u32, one record per layer
(kind u32: 0 dense out/in/activation, 1 conv filters/sensors/taps); then all
parameters as float64 in layer order, weights row-major before biases.
"""

from __future__ import annotations

import hashlib
import struct

import numpy as np

from .errors import CorruptFileError, FormatError, InvalidArgumentError
from .forward import LeadFieldMatrix, NOISELESS
from .geometry import SourceSpace
from .network import (
    DenseLayer,
    NetworkModel,
    SpaceTimeConvLayer,
    IDENTITY,
    RELU,
    SIGMOID,
)
from .signals import LabeledDataset

FORMAT_VERSION = 1
_MAGIC_LEAD = b"MEGL"
_MAGIC_DATA = b"MEGD"
_MAGIC_MODEL = b"MEGM"
_ACTIVATION_CODES = {SIGMOID: 0, RELU: 1, IDENTITY: 2}
_ACTIVATION_NAMES = {v: k for k, v in _ACTIVATION_CODES.items()}


def _lead_field_payload(lead_field: LeadFieldMatrix) -> bytes:
    entries = np.asfortranarray(lead_field.entries, dtype="<f8")
    positions = np.ascontiguousarray(lead_field.space.positions, dtype="<f8")
    orientations = np.ascontiguousarray(lead_field.space.orientations, dtype="<f8")
    return entries.tobytes(order="F") + positions.tobytes() + orientations.tobytes()


def lead_field_fingerprint(lead_field: LeadFieldMatrix) -> int:
    """64-bit content hash of a lead field (entries + source geometry)."""
    digest = hashlib.sha256(_lead_field_payload(lead_field)).digest()
    return int.from_bytes(digest[:8], "little")


def write_lead_field(lead_field: LeadFieldMatrix, path) -> None:
    header = _MAGIC_LEAD + struct.pack(
        "<III", FORMAT_VERSION, lead_field.n_sensors, lead_field.n_points
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(_lead_field_payload(lead_field))


def read_lead_field(path) -> LeadFieldMatrix:
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4, path)
        if magic != _MAGIC_LEAD:
            raise FormatError(f"{path}: not a lead-field file (magic {magic!r})")
        version, m, p = struct.unpack("<III", _read_exact(fh, 12, path))
        if version != FORMAT_VERSION:
            raise FormatError(f"{path}: unsupported lead-field version {version}")
        entries = _read_f64(fh, m * p, path).reshape((m, p), order="F")
        positions = _read_f64(fh, p * 3, path).reshape(p, 3)
        orientations = _read_f64(fh, p * 3, path).reshape(p, 3)
        _expect_eof(fh, path)
    space = SourceSpace(positions=positions, orientations=orientations)
    return LeadFieldMatrix(entries=entries, space=space)


def write_dataset(dataset: LabeledDataset, path) -> None:
    if len(dataset) == 0:
        raise InvalidArgumentError("refusing to write an empty dataset")
    meta = dataset.metadata
    m, n = dataset.inputs[0].shape
    q = dataset.targets[0].shape[0]
    snr = meta.get("snr_db", NOISELESS)
    snr_value = float("nan") if snr == NOISELESS else float(snr)
    header = _MAGIC_DATA + struct.pack(
        "<IIIIIdQQ",
        FORMAT_VERSION,
        m,
        n,
        q,
        len(dataset),
        snr_value,
        int(meta.get("seed", 0)),
        int(meta.get("lead_field_fingerprint", 0)),
    )
    with open(path, "wb") as fh:
        fh.write(header)
        for inp, tgt in zip(dataset.inputs, dataset.targets):
            if inp.shape != (m, n) or tgt.shape != (q, 3):
                raise InvalidArgumentError("dataset examples have inconsistent shapes")
            fh.write(np.ascontiguousarray(inp, dtype="<f4").tobytes())
            fh.write(np.ascontiguousarray(tgt, dtype="<f4").tobytes())


def read_dataset(path) -> LabeledDataset:
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4, path)
        if magic != _MAGIC_DATA:
            raise FormatError(f"{path}: not a dataset file (magic {magic!r})")
        version, m, n, q, count, snr_value, seed, fingerprint = struct.unpack(
            "<IIIIIdQQ", _read_exact(fh, 44, path)
        )
        if version != FORMAT_VERSION:
            raise FormatError(f"{path}: unsupported dataset version {version}")
        inputs, targets = [], []
        for _ in range(count):
            inputs.append(_read_f32(fh, m * n, path).reshape(m, n))
            targets.append(_read_f32(fh, q * 3, path).reshape(q, 3))
        _expect_eof(fh, path)
    snr = NOISELESS if np.isnan(snr_value) else snr_value
    meta = {
        "q": q,
        "count": count,
        "snr_db": snr,
        "n_samples": n,
        "seed": seed,
        "lead_field_fingerprint": fingerprint,
    }
    return LabeledDataset(inputs=inputs, targets=targets, metadata=meta)


def write_model(model: NetworkModel, path, lead_field_fingerprint: int = 0) -> None:
    records = [struct.pack("<I", len(model.layers))]
    for layer in model.layers:
        if isinstance(layer, SpaceTimeConvLayer):
            records.append(
                struct.pack("<IIIId", 1, layer.n_filters, layer.n_sensors, layer.n_taps, 0.0)
            )
        else:
            records.append(
                struct.pack(
                    "<IIIId", 0, layer.out_dim, layer.in_dim,
                    _ACTIVATION_CODES[layer.activation], layer.center,
                )
            )
    header = (
        _MAGIC_MODEL
        + struct.pack(
            "<IQddI",
            FORMAT_VERSION,
            int(lead_field_fingerprint),
            model.input_scale,
            model.output_scale,
            1 if model.normalize_input else 0,
        )
        + struct.pack("<I", len(model.input_shape))
        + struct.pack(f"<{len(model.input_shape)}I", *model.input_shape)
        + b"".join(records)
    )
    with open(path, "wb") as fh:
        fh.write(header)
        for layer in model.layers:
            if isinstance(layer, SpaceTimeConvLayer):
                fh.write(np.ascontiguousarray(layer.kernels, dtype="<f8").tobytes())
            else:
                fh.write(np.ascontiguousarray(layer.weights, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(layer.biases, dtype="<f8").tobytes())


def read_model(path):
    """Load a model file; returns (NetworkModel, lead-field fingerprint)."""
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4, path)
        if magic != _MAGIC_MODEL:
            raise FormatError(f"{path}: not a model file (magic {magic!r})")
        version, fingerprint, input_scale, output_scale, normalize = struct.unpack(
            "<IQddI", _read_exact(fh, 32, path)
        )
        if version != FORMAT_VERSION:
            raise FormatError(f"{path}: unsupported model version {version}")
        (rank,) = struct.unpack("<I", _read_exact(fh, 4, path))
        input_shape = struct.unpack(f"<{rank}I", _read_exact(fh, 4 * rank, path))
        (n_layers,) = struct.unpack("<I", _read_exact(fh, 4, path))
        descriptors = [
            struct.unpack("<IIIId", _read_exact(fh, 24, path)) for _ in range(n_layers)
        ]
        layers = []
        for kind, a, b, c, center in descriptors:
            if kind == 1:
                kernels = _read_f64(fh, a * b * c, path).reshape(a, b, c)
                biases = _read_f64(fh, a, path)
                layers.append(SpaceTimeConvLayer(kernels=kernels, biases=biases))
            elif kind == 0:
                if c not in _ACTIVATION_NAMES:
                    raise CorruptFileError(f"{path}: unknown activation code {c}")
                weights = _read_f64(fh, a * b, path).reshape(a, b)
                biases = _read_f64(fh, a, path)
                layers.append(
                    DenseLayer(
                        weights=weights, biases=biases,
                        activation=_ACTIVATION_NAMES[c], center=center,
                    )
                )
            else:
                raise CorruptFileError(f"{path}: unknown layer kind {kind}")
        _expect_eof(fh, path)
    if not layers or not isinstance(layers[-1], DenseLayer):
        raise CorruptFileError(f"{path}: model must end in a dense layer")
    try:
        model = NetworkModel(
            input_shape=input_shape,
            layers=tuple(layers),
            output_dim=layers[-1].out_dim,
            input_scale=input_scale,
            normalize_input=bool(normalize),
            output_scale=output_scale,
        )
    except InvalidArgumentError as exc:
        raise CorruptFileError(f"{path}: inconsistent model description: {exc}") from exc
    return model, fingerprint


def _read_exact(fh, nbytes: int, path) -> bytes:
    data = fh.read(nbytes)
    if len(data) != nbytes:
        raise CorruptFileError(f"{path}: truncated file")
    return data


def _read_f64(fh, count: int, path) -> np.ndarray:
    return np.frombuffer(_read_exact(fh, 8 * count, path), dtype="<f8").astype(np.float64)


def _read_f32(fh, count: int, path) -> np.ndarray:
    return np.frombuffer(_read_exact(fh, 4 * count, path), dtype="<f4").astype(np.float64)


def _expect_eof(fh, path) -> None:
    if fh.read(1):
        raise CorruptFileError(f"{path}: trailing bytes after expected end of file")
