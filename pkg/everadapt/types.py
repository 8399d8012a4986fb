from __future__ import annotations

from typing import TYPE_CHECKING, Literal, NamedTuple, TypeAlias, TypedDict

if TYPE_CHECKING:
    from .tensor import Tensor

NormMode: TypeAlias = Literal["BN", "CBN"]
NormStateMode: TypeAlias = Literal["TRAIN_BN", "EVAL_BN", "CBN"]
SourceStream: TypeAlias = Literal["frozen", "batch"]
ReplayScope: TypeAlias = Literal["last", "all"]
AdaptMode: TypeAlias = Literal["corrected", "paper_literal"]
SignalFormat: TypeAlias = Literal["text", "csv", "binary"]
Preset: TypeAlias = Literal["full", "desk"]


class ConvBlock(NamedTuple):
    """
    One convolution block of the feature extractor: conv, norm, relu, maxpool, dropout.
    """

    channels: int
    """Output channels of the convolution."""
    kernel: int
    """Kernel width; the convolution pads by `kernel // 2`."""
    dropout_p: float = 0.0


class LossTerm(NamedTuple):
    """
    A loss component that may be absent for the current step.
    """

    value: Tensor
    """The scalar loss; a constant zero when skipped."""
    skipped: bool
    """True if the term had nothing to compute on (e.g. an empty replay buffer)."""


class StageRecord(TypedDict, total=False):
    """
    Snapshot of one stage of a continual run, as written into the run manifest.
    """

    stage: int
    domain_id: str
    accuracies: list[float]
    """Row of the result matrix filled at this stage."""
    seconds: float
    checkpoint: str
    buffer_size: int
    mean_loss: float


class MetricRow(TypedDict):
    mode: str
    scenario: str
    seed: int | str
    ACC: float
    BWT: float | None
    ADAPT: float
