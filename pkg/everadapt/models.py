from __future__ import annotations

import io
import json
import logging
import zipfile
from dataclasses import dataclass, field
from math import sqrt
from pathlib import Path
from typing import Any

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from .exceptions import DimensionError, FormatError, MissingArtifactError, SpecError
from .functional import adaptive_avg_pool1d, conv1d, dense, dropout, maxpool1d, relu, softmax
from .normalization import BatchNormState, normalize
from .tensor import Array, Tensor, as_tensor, no_grad
from .types import ConvBlock, NormMode

logger = logging.getLogger(__name__)

FULL_BLOCKS: tuple[ConvBlock, ...] = (
    ConvBlock(128, 5, 0.5),
    ConvBlock(256, 8, 0.0),
    ConvBlock(128, 8, 0.0),
)
DESK_BLOCKS: tuple[ConvBlock, ...] = (ConvBlock(8, 5, 0.0), ConvBlock(16, 5, 0.0))

# fixed so checkpoints of identical models are byte-identical
_ZIP_TIMESTAMP = (1980, 1, 1, 0, 0, 0)


class ModelSpec(BaseModel):
    """
    Declarative architecture of the feature extractor and the classifier.

    The defaults are the full-size backbone for windows of 1024 samples.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    conv_blocks: tuple[ConvBlock, ...] = FULL_BLOCKS
    in_channels: int = Field(1, ge=1)
    input_length: int = Field(1024, ge=1)
    pool_window: int = Field(2, ge=1)
    """Window and stride of the max pooling in every block."""
    adaptive_out: int = Field(1, ge=1)
    """Length the adaptive average pooling condenses the last block's output to."""
    num_classes: int = Field(3, ge=2)
    norm_mode: NormMode = "CBN"

    @field_validator("conv_blocks")
    @classmethod
    def _check_blocks(cls, blocks: tuple[ConvBlock, ...]) -> tuple[ConvBlock, ...]:
        if not blocks:
            raise ValueError("at least one convolution block is required")
        for block in blocks:
            if block.channels < 1 or block.kernel < 1:
                raise ValueError(f"channels and kernel must be positive: {tuple(block)}")
            if not 0.0 <= block.dropout_p < 1.0:
                raise ValueError(f"dropout probability must lie in [0, 1): {tuple(block)}")
        return blocks

    @property
    def feature_dim(self) -> int:
        return self.conv_blocks[-1].channels * self.adaptive_out

    def stage_lengths(self) -> list[int]:
        """
        Signal length after every block.

        Raises:
            SpecError: If a stage is too short for its pooling window or the adaptive pooling.
        """
        lengths = []
        length = self.input_length
        for index, block in enumerate(self.conv_blocks):
            length = length + 2 * (block.kernel // 2) - block.kernel + 1
            if length < self.pool_window:
                raise SpecError(
                    f"Block {index} produces length {length}, shorter than the pooling window "
                    f"{self.pool_window}."
                )
            length = (length - self.pool_window) // self.pool_window + 1
            lengths.append(length)
        if length < self.adaptive_out:
            raise SpecError(
                f"The last block produces length {length}, shorter than adaptive_out "
                f"{self.adaptive_out}."
            )
        return lengths


def full_spec(num_classes: int = 3, input_length: int = 1024) -> ModelSpec:
    return ModelSpec(conv_blocks=FULL_BLOCKS, input_length=input_length, num_classes=num_classes)


def desk_spec(num_classes: int = 3, input_length: int = 128) -> ModelSpec:
    return ModelSpec(conv_blocks=DESK_BLOCKS, input_length=input_length, num_classes=num_classes)


@dataclass
class ConvLayer:
    kernel: Tensor
    bias: Tensor
    norm: BatchNormState
    dropout_p: float

    @property
    def padding(self) -> int:
        return self.kernel.shape[2] // 2


@dataclass
class Model:
    """
    Feature extractor (convolution blocks plus adaptive pooling) followed by a dense classifier.
    """

    spec: ModelSpec
    layers: list[ConvLayer]
    classifier_weight: Tensor
    classifier_bias: Tensor
    rng: np.random.Generator
    """Dropout randomness."""
    training: bool = field(default=True)

    @property
    def norm_states(self) -> list[BatchNormState]:
        return [layer.norm for layer in self.layers]

    def named_parameters(self) -> dict[str, Tensor]:
        params: dict[str, Tensor] = {}
        for index, layer in enumerate(self.layers):
            params[f"block{index}.kernel"] = layer.kernel
            params[f"block{index}.bias"] = layer.bias
            params[f"block{index}.norm.gamma"] = layer.norm.gamma
            params[f"block{index}.norm.beta"] = layer.norm.beta
        params["classifier.weight"] = self.classifier_weight
        params["classifier.bias"] = self.classifier_bias
        return params

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def train(self) -> Model:
        self.training = True
        for state in self.norm_states:
            if state.mode != "CBN":
                state.mode = "TRAIN_BN"
        return self

    def eval(self) -> Model:
        self.training = False
        for state in self.norm_states:
            if state.mode != "CBN":
                state.mode = "EVAL_BN"
        return self

    def freeze_statistics(self) -> None:
        """Move every norm layer to frozen source statistics; a no-op for conventional BN."""
        if self.spec.norm_mode != "CBN":
            return
        for state in self.norm_states:
            state.freeze()
        logger.debug("Froze %d normalization layers.", len(self.layers))

    def layer_inputs(self, batch: Tensor | Array) -> list[Array]:
        """The input of every norm layer for `batch`, computed in eval mode without recording."""
        was_training = self.training
        captured: list[Array] = []
        self.eval()
        try:
            with no_grad():
                _extract(self, as_tensor(batch), capture=captured)
        finally:
            if was_training:
                self.train()
        return captured


def build_model(spec: ModelSpec, seed: int) -> Model:
    """
    Initialize a model deterministically from `seed`.

    Weights and biases are drawn uniformly from `[-b, b]` with `b = sqrt(1 / fan_in)`.
    """
    spec.stage_lengths()
    init_seq, dropout_seq = np.random.SeedSequence(seed).spawn(2)
    init_rng = np.random.default_rng(init_seq)
    layers = []
    channels = spec.in_channels
    for index, block in enumerate(spec.conv_blocks):
        bound = sqrt(1.0 / (channels * block.kernel))
        layers.append(
            ConvLayer(
                kernel=Tensor(
                    init_rng.uniform(-bound, bound, (block.channels, channels, block.kernel)),
                    requires_grad=True,
                    name=f"block{index}.kernel",
                ),
                bias=Tensor(
                    init_rng.uniform(-bound, bound, block.channels),
                    requires_grad=True,
                    name=f"block{index}.bias",
                ),
                norm=BatchNormState.create(block.channels, name=f"block{index}.norm."),
                dropout_p=block.dropout_p,
            )
        )
        channels = block.channels
    bound = sqrt(1.0 / spec.feature_dim)
    weight = init_rng.uniform(-bound, bound, (spec.num_classes, spec.feature_dim))
    bias = init_rng.uniform(-bound, bound, spec.num_classes)
    return Model(
        spec=spec,
        layers=layers,
        classifier_weight=Tensor(weight, requires_grad=True, name="classifier.weight"),
        classifier_bias=Tensor(bias, requires_grad=True, name="classifier.bias"),
        rng=np.random.default_rng(dropout_seq),
    )


def _extract(
    model: Model,
    batch: Tensor,
    *,
    batch_statistics: bool = False,
    capture: list[Array] | None = None,
) -> Tensor:
    spec = model.spec
    if batch.ndim != 3 or batch.shape[1:] != (spec.in_channels, spec.input_length):
        raise DimensionError(
            f"Expected a batch of shape [B, {spec.in_channels}, {spec.input_length}], "
            f"got {batch.shape}."
        )
    x = batch
    for layer in model.layers:
        x = conv1d(x, layer.kernel, layer.bias, stride=1, padding=layer.padding)
        if capture is not None:
            capture.append(x.data.copy())
        x = normalize(x, layer.norm, batch_statistics=batch_statistics)
        x = relu(x)
        x = maxpool1d(x, spec.pool_window, spec.pool_window)
        x = dropout(x, layer.dropout_p, model.training, model.rng)
    x = adaptive_avg_pool1d(x, spec.adaptive_out)
    return x.reshape((batch.shape[0], spec.feature_dim))


def extract_features(
    model: Model, batch: Tensor | Array, *, batch_statistics: bool = False
) -> Tensor:
    """
    Features `[B, feature_dim]` of a `[B, in_channels, input_length]` batch.

    `batch_statistics` makes frozen (CBN) layers normalize by the batch's own statistics.
    """
    return _extract(model, as_tensor(batch), batch_statistics=batch_statistics)


def classify(model: Model, features: Tensor) -> Tensor:
    return dense(features, model.classifier_weight, model.classifier_bias)


def forward(model: Model, batch: Tensor | Array, *, batch_statistics: bool = False) -> Tensor:
    return classify(model, extract_features(model, batch, batch_statistics=batch_statistics))


def predict_proba(model: Model, segments: Array, *, batch_size: int = 256) -> Array:
    """Class probabilities in eval mode, computed chunk-wise without recording a graph."""
    was_training = model.training
    model.eval()
    try:
        with no_grad():
            chunks = [
                softmax(forward(model, segments[start : start + batch_size])).data
                for start in range(0, len(segments), batch_size)
            ]
    finally:
        if was_training:
            model.train()
    if not chunks:
        return np.empty((0, model.spec.num_classes))
    return np.concatenate(chunks)


def _write_entry(archive: zipfile.ZipFile, name: str, payload: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=_ZIP_TIMESTAMP)
    info.compress_type = zipfile.ZIP_DEFLATED
    archive.writestr(info, payload)


def _array_bytes(array: Array) -> bytes:
    buffer = io.BytesIO()
    np.lib.format.write_array(buffer, np.ascontiguousarray(array), allow_pickle=False)
    return buffer.getvalue()


def save_checkpoint(model: Model, path: str | Path) -> Path:
    """
    Write spec, parameters, normalization state and dropout generator state into one archive.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta: dict[str, Any] = {
        "spec": model.spec.model_dump(mode="json"),
        "training": model.training,
        "rng": model.rng.bit_generator.state,
        "norm": [
            {
                "mode": state.mode,
                "epsilon": state.epsilon,
                "ema_momentum": state.ema_momentum,
                "populated": state.populated,
            }
            for state in model.norm_states
        ],
    }
    arrays: dict[str, Array] = {name: param.data for name, param in model.named_parameters().items()}
    for index, state in enumerate(model.norm_states):
        arrays[f"block{index}.norm.mu_ema"] = state.mu_ema
        arrays[f"block{index}.norm.var_ema"] = state.var_ema
    with zipfile.ZipFile(path, "w") as archive:
        _write_entry(archive, "meta.json", json.dumps(meta, sort_keys=True).encode())
        for name in sorted(arrays):
            _write_entry(archive, f"{name}.npy", _array_bytes(arrays[name]))
    return path


def _restore(model: Model, meta: dict[str, Any], arrays: dict[str, Array]) -> None:
    for name, param in model.named_parameters().items():
        if name not in arrays or arrays[name].shape != param.shape:
            raise FormatError(f"Checkpoint array {name} is missing or has the wrong shape.")
        param.data = arrays[name].astype(np.float64)
    norms = meta["norm"]
    if len(norms) != len(model.norm_states):
        raise FormatError(
            f"Checkpoint holds {len(norms)} normalization layers, the model has "
            f"{len(model.norm_states)}."
        )
    for index, (state, state_meta) in enumerate(zip(model.norm_states, norms, strict=True)):
        state.mu_ema = arrays[f"block{index}.norm.mu_ema"]
        state.var_ema = arrays[f"block{index}.norm.var_ema"]
        state.mode = state_meta["mode"]
        state.epsilon = state_meta["epsilon"]
        state.ema_momentum = state_meta["ema_momentum"]
        state.populated = state_meta["populated"]
    model.rng.bit_generator.state = meta["rng"]
    model.training = meta["training"]


def load_checkpoint(path: str | Path) -> Model:
    """
    Inverse of `save_checkpoint`; the restored model is bit-identical.

    Raises:
        MissingArtifactError: If the file does not exist.
        FormatError: If the archive is not a readable checkpoint.
    """
    path = Path(path)
    if not path.is_file():
        raise MissingArtifactError(f"Checkpoint {path} does not exist.")
    try:
        with zipfile.ZipFile(path) as archive:
            meta = json.loads(archive.read("meta.json"))
            arrays = {
                name.removesuffix(".npy"): np.lib.format.read_array(
                    io.BytesIO(archive.read(name)), allow_pickle=False
                )
                for name in archive.namelist()
                if name.endswith(".npy")
            }
        model = build_model(ModelSpec.model_validate(meta["spec"]), 0)
        _restore(model, meta, arrays)
    except FormatError:
        raise
    except (zipfile.BadZipFile, KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path} is not a valid checkpoint: {exc!r}") from exc
    return model
