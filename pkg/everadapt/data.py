"""
Synthetic multi-domain fault signals, moving-window segmentation and signal-file ingestion.
"""

from __future__ import annotations

import json
import logging
import zlib
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Literal

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from numpy.typing import ArrayLike
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .exceptions import (
    ConfigError,
    DataError,
    DatasetError,
    FormatError,
    MissingArtifactError,
    ParameterError,
    SizeError,
)
from .tensor import Array
from .types import SignalFormat

logger = logging.getLogger(__name__)

VARIANCE_FLOOR = 1e-8
DAMPING_RATIO = 0.1
# timing jitter of fault impulses, as a fraction of the impulse period
IMPULSE_JITTER = 0.02
BASE_ROTATION_HZ = 32.0
BASE_NOISE_SIGMA = 0.3


class FaultClass(BaseModel):
    """
    A fault type: a train of damped impulses at `impulse_rate` impulses per revolution, ringing at
    `resonance_hz`. A rate of 0 is the healthy class.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    class_id: int = Field(ge=0)
    name: str = ""
    impulse_rate: float = Field(0.0, ge=0.0)
    impulse_amplitude: float = Field(1.0, ge=0.0)
    resonance_hz: float = Field(300.0, gt=0.0)


class DomainSpec(BaseModel):
    """
    One operating condition: shaft speed, load, noise level and the fault classes observed in it.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    domain_id: str = Field(min_length=1)
    rotation_hz: float = Field(BASE_ROTATION_HZ, gt=0.0)
    load_scale: float = Field(1.0, ge=0.0)
    noise_sigma: float = Field(BASE_NOISE_SIGMA, ge=0.0)
    n_per_class: int = Field(200, ge=1)
    classes: tuple[FaultClass, ...] = Field(min_length=1)

    @model_validator(mode="after")
    def _dense_class_ids(self) -> DomainSpec:
        ids = sorted(fault.class_id for fault in self.classes)
        if ids != list(range(len(ids))):
            raise ValueError(f"class ids must be 0..{len(ids) - 1} without gaps, got {ids}")
        return self


def desk_fault_classes() -> tuple[FaultClass, ...]:
    return (
        FaultClass(class_id=0, name="healthy"),
        FaultClass(class_id=1, name="outer_race", impulse_rate=3.05, resonance_hz=300.0),
        FaultClass(class_id=2, name="inner_race", impulse_rate=4.95, resonance_hz=600.0),
    )


def default_domains(n_per_class: int = 200) -> dict[str, DomainSpec]:
    """
    Four working conditions: the base condition, low speed, low load and a noisier machine.
    """
    classes = desk_fault_classes()
    return {
        "D1": DomainSpec(domain_id="D1", n_per_class=n_per_class, classes=classes),
        "D2": DomainSpec(
            domain_id="D2",
            rotation_hz=BASE_ROTATION_HZ * 0.6,
            n_per_class=n_per_class,
            classes=classes,
        ),
        "D3": DomainSpec(domain_id="D3", load_scale=0.3, n_per_class=n_per_class, classes=classes),
        "D4": DomainSpec(
            domain_id="D4",
            noise_sigma=BASE_NOISE_SIGMA * 1.5,
            n_per_class=n_per_class,
            classes=classes,
        ),
    }


class Scenario(BaseModel):
    """An ordered adaptation sequence: one labeled source followed by unlabeled targets."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    name: str
    source: str
    targets: tuple[str, ...] = Field(min_length=1)

    @property
    def domains(self) -> tuple[str, ...]:
        return (self.source, *self.targets)


SCENARIOS: dict[str, Scenario] = {
    "1": Scenario(name="1", source="D1", targets=("D2", "D3", "D4")),
    "2": Scenario(name="2", source="D1", targets=("D3", "D2", "D4")),
    "3": Scenario(name="3", source="D1", targets=("D2", "D4", "D3")),
}


@dataclass
class DomainDataset:
    """
    Fixed-length segments `[n, 1, window_len]` of one domain, with labels when available.
    """

    domain_id: str
    segments: Array
    labels: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.segments = np.asarray(self.segments, dtype=np.float64)
        if self.segments.ndim != 3:
            raise DatasetError(
                f"Segments of {self.domain_id} must have shape [n, channels, window], got "
                f"{self.segments.shape}."
            )
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (self.segments.shape[0],):
                raise DatasetError(
                    f"{self.domain_id} has {self.segments.shape[0]} segments but labels of shape "
                    f"{self.labels.shape}."
                )
            if self.labels.size and self.labels.min() < 0:
                raise DatasetError(f"{self.domain_id} has negative labels.")

    def __len__(self) -> int:
        return int(self.segments.shape[0])

    @property
    def window_len(self) -> int:
        return int(self.segments.shape[2])

    @property
    def labeled(self) -> bool:
        return self.labels is not None

    def require_labels(self) -> np.ndarray:
        if self.labels is None:
            raise DatasetError(f"Dataset {self.domain_id} carries no labels.")
        return self.labels

    def unlabeled(self) -> DomainDataset:
        """The same segments with the labels withheld."""
        return DomainDataset(self.domain_id, self.segments)

    def subset(self, indices: ArrayLike) -> DomainDataset:
        indices = np.asarray(indices, dtype=np.intp)
        labels = None if self.labels is None else self.labels[indices]
        return DomainDataset(self.domain_id, self.segments[indices], labels)


def _sample_rng(seed: int, domain_id: str, class_id: int, index: int) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence([seed, zlib.crc32(domain_id.encode()), class_id, index])
    )


def _fault_signal(
    spec: DomainSpec, fault: FaultClass, time: Array, rng: np.random.Generator
) -> Array:
    signal = spec.load_scale * np.sin(
        2 * np.pi * spec.rotation_hz * time + rng.uniform(0.0, 2 * np.pi)
    )
    if fault.impulse_rate > 0:
        period = 1.0 / (fault.impulse_rate * spec.rotation_hz)
        # the first impulse precedes the window so its ringing is already under way
        starts = np.arange(-rng.uniform(0.0, period), time[-1], period)
        starts = starts + rng.normal(0.0, IMPULSE_JITTER * period, starts.shape)
        elapsed = time[None, :] - starts[:, None]
        started = elapsed >= 0
        elapsed = np.where(started, elapsed, 0.0)
        omega = 2 * np.pi * fault.resonance_hz
        ringing = np.exp(-DAMPING_RATIO * omega * elapsed) * np.sin(omega * elapsed)
        signal = signal + fault.impulse_amplitude * (ringing * started).sum(axis=0)
    if spec.noise_sigma > 0:
        signal = signal + rng.normal(0.0, spec.noise_sigma, time.shape)
    return signal


def generate_domain(
    spec: DomainSpec,
    window_len: int,
    seed: int,
    *,
    sample_rate: float = 2048.0,
    standardize: bool = True,
) -> DomainDataset:
    """
    Draw `n_per_class` labeled segments of every fault class.

    Each signal is a shaft-rate sinusoid scaled by the load, plus the class's damped impulse train,
    plus Gaussian noise. The randomness of sample `i` of class `c` is derived from
    `(seed, domain_id, c, i)` only, so it does not depend on generation order.
    """
    if window_len < 1 or sample_rate <= 0:
        raise ParameterError(
            f"window_len and sample_rate must be positive, got {window_len}, {sample_rate}."
        )
    time = np.arange(window_len) / sample_rate
    segments = []
    labels = []
    for fault in sorted(spec.classes, key=lambda fault: fault.class_id):
        for index in range(spec.n_per_class):
            rng = _sample_rng(seed, spec.domain_id, fault.class_id, index)
            segments.append(_fault_signal(spec, fault, time, rng))
            labels.append(fault.class_id)
    stacked = np.stack(segments)[:, None, :]
    if standardize:
        stacked = normalize_per_segment(stacked)
    logger.info(
        "Generated domain %s.",
        spec.domain_id,
        extra={"domain": spec.domain_id, "segments": len(labels), "seed": seed},
    )
    return DomainDataset(spec.domain_id, stacked, np.asarray(labels, dtype=np.int64))


def segment_signal(signal: ArrayLike, window: int, stride: int) -> Array:
    """
    Cut a 1-D signal into windows at offsets `0, stride, 2 * stride, ...` that fit entirely.
    """
    signal = np.asarray(signal, dtype=np.float64)
    if signal.ndim != 1:
        raise SizeError(f"segment_signal expects a 1-D signal, got shape {signal.shape}.")
    if window < 1 or stride < 1:
        raise ParameterError(f"window and stride must be positive, got {window}, {stride}.")
    if signal.shape[0] < window:
        raise SizeError(f"Signal of length {signal.shape[0]} is shorter than the window {window}.")
    return sliding_window_view(signal, window)[::stride].copy()


def normalize_per_segment(segments: ArrayLike) -> Array:
    """Zero mean and unit variance along the last axis; variances are floored at 1e-8."""
    segments = np.asarray(segments, dtype=np.float64)
    mean = segments.mean(axis=-1, keepdims=True)
    var = segments.var(axis=-1, keepdims=True)
    return (segments - mean) / np.sqrt(np.maximum(var, VARIANCE_FLOOR))


class SignalSchema(BaseModel):
    """
    How to read one raw signal from a file.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    format: SignalFormat = "text"
    column: int = Field(0, ge=0)
    """Zero-based column for `csv`."""
    delimiter: str = ","
    header_rows: int = Field(0, ge=0)
    """Leading lines skipped in `text` and `csv`."""
    dtype: Literal["<f4", "<f8"] = "<f8"
    """Sample type of `binary` files, which start with a little-endian uint64 sample count."""


def _parse_lines(raw: bytes, schema: SignalSchema) -> Array:
    values: list[float] = []
    offset = 0
    for number, line in enumerate(raw.splitlines(keepends=True)):
        line_offset = offset
        offset += len(line)
        if number < schema.header_rows or not line.strip():
            continue
        text = line.decode("utf-8", errors="replace").strip()
        if schema.format == "csv":
            fields = text.split(schema.delimiter)
            if schema.column >= len(fields):
                raise FormatError(
                    f"Line {number + 1} has {len(fields)} columns, column {schema.column} requested",
                    offset=line_offset,
                )
            text = fields[schema.column].strip()
        try:
            values.append(float(text))
        except ValueError:
            raise FormatError(
                f"Cannot parse {text!r} on line {number + 1} as a number", offset=line_offset
            ) from None
    return np.asarray(values, dtype=np.float64)


def _parse_binary(raw: bytes, schema: SignalSchema) -> Array:
    if len(raw) < 8:
        raise FormatError(
            f"Binary signal needs an 8-byte length header, found {len(raw)} bytes", offset=0
        )
    count = int(np.frombuffer(raw[:8], dtype="<u8")[0])
    itemsize = np.dtype(schema.dtype).itemsize
    expected = count * itemsize
    actual = len(raw) - 8
    if actual != expected:
        raise FormatError(
            f"Binary signal declares {count} samples ({expected} bytes) but holds {actual} bytes",
            offset=8 + min(actual, expected),
        )
    return np.frombuffer(raw, dtype=schema.dtype, count=count, offset=8).astype(np.float64)


def load_signal_file(path: str | Path, schema: SignalSchema | None = None) -> Array:
    """
    Read a raw 1-D signal.

    Raises:
        MissingArtifactError: If the file does not exist.
        FormatError: If the content does not parse; the message names the byte offset.
        DataError: If the signal contains NaN or infinite values.
    """
    schema = schema or SignalSchema()
    path = Path(path)
    if not path.is_file():
        raise MissingArtifactError(f"Signal file {path} does not exist.")
    raw = path.read_bytes()
    signal = _parse_binary(raw, schema) if schema.format == "binary" else _parse_lines(raw, schema)
    bad = np.flatnonzero(~np.isfinite(signal))
    if bad.size:
        raise DataError(f"Signal {path} has non-finite values, first at sample {bad[0]}.")
    return signal


def dataset_from_signals(
    domain_id: str,
    signals: Sequence[ArrayLike],
    labels: Sequence[int],
    window: int,
    stride: int | None = None,
    *,
    standardize: bool = True,
) -> DomainDataset:
    """
    Segment every signal and label each of its segments with the signal's class.

    `stride` defaults to `window`, giving disjoint segments.
    """
    if len(signals) != len(labels) or not signals:
        raise DatasetError(
            f"Need one label per signal and at least one signal, got {len(signals)} signals "
            f"and {len(labels)} labels."
        )
    stride = stride or window
    parts = [segment_signal(signal, window, stride) for signal in signals]
    segments = np.concatenate(parts)[:, None, :]
    if standardize:
        segments = normalize_per_segment(segments)
    segment_labels = np.concatenate(
        [np.full(len(part), label, dtype=np.int64) for part, label in zip(parts, labels, strict=True)]
    )
    return DomainDataset(domain_id, segments, segment_labels)


def split_dataset(
    dataset: DomainDataset, test_fraction: float = 0.2, seed: int = 0
) -> tuple[DomainDataset, DomainDataset]:
    """
    Stratified, deterministic train/test split of a labeled dataset.

    Every class contributes `round(test_fraction * n_class)` segments to the test part.
    """
    labels = dataset.require_labels()
    if not 0.0 <= test_fraction < 1.0:
        raise ParameterError(f"test_fraction must lie in [0, 1), got {test_fraction}.")
    rng = np.random.default_rng([seed, zlib.crc32(dataset.domain_id.encode())])
    test_rows: list[np.ndarray] = []
    for label in np.unique(labels):
        rows = np.flatnonzero(labels == label)
        count = int(np.floor(test_fraction * len(rows) + 0.5))
        test_rows.append(rng.permutation(rows)[:count])
    test = np.sort(np.concatenate(test_rows)) if test_rows else np.empty(0, dtype=np.intp)
    train = np.setdiff1d(np.arange(len(dataset)), test)
    return dataset.subset(train), dataset.subset(test)


def save_dataset(dataset: DomainDataset, directory: str | Path) -> Path:
    """
    Write `manifest.json`, `segments.npy` and, for labeled data, `labels.npy` into `directory`.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest: dict[str, object] = {
        "domain_id": dataset.domain_id,
        "window_len": dataset.window_len,
        "count": len(dataset),
        "labeled": dataset.labeled,
    }
    if dataset.labels is not None:
        classes, counts = np.unique(dataset.labels, return_counts=True)
        manifest["class_counts"] = {str(c): int(n) for c, n in zip(classes, counts, strict=True)}
        np.save(directory / "labels.npy", dataset.labels)
    np.save(directory / "segments.npy", dataset.segments)
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return directory


def load_dataset(directory: str | Path) -> DomainDataset:
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.is_file():
        raise MissingArtifactError(f"No dataset manifest at {manifest_path}.")
    try:
        manifest = json.loads(manifest_path.read_text())
        segments = np.load(directory / "segments.npy", allow_pickle=False)
        labels = (
            np.load(directory / "labels.npy", allow_pickle=False) if manifest["labeled"] else None
        )
    except FileNotFoundError as exc:
        raise MissingArtifactError(f"Dataset {directory} is incomplete: {exc}") from exc
    except (ValueError, KeyError) as exc:
        raise FormatError(f"Dataset {directory} is unreadable: {exc}") from exc
    dataset = DomainDataset(manifest["domain_id"], segments, labels)
    if len(dataset) != manifest["count"] or dataset.window_len != manifest["window_len"]:
        raise FormatError(f"Dataset {directory} does not match its manifest.")
    return dataset


def save_scenario(scenario: Scenario, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(scenario.model_dump_json(indent=2) + "\n")
    return path


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    if not path.is_file():
        raise MissingArtifactError(f"Scenario file {path} does not exist.")
    try:
        return Scenario.model_validate_json(path.read_text())
    except ValidationError as exc:
        raise ConfigError.from_validation_error(exc, prefix="scenario") from exc
