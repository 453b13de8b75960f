"""Pydantic data models: run configuration, reports and file headers."""

from __future__ import annotations

import os
try:
    from enum import StrEnum
except ImportError:  # Python < 3.11
    from enum import Enum

    class StrEnum(str, Enum):
        __str__ = str.__str__
        __format__ = str.__format__
from typing import Literal

from pydantic import BaseModel, Field

from qpu_kit.qpu import TapeMode

# ═══════════════════════════════════════════════════════════════
# ENUMERATIONS
# ═══════════════════════════════════════════════════════════════


class BridgeMode(StrEnum):
    """How QPU outputs are handed to real-valued layers."""

    KEEP_REAL = "keep_real"
    KEEP_IMAGINARY = "keep_imaginary"
    FLATTEN4 = "flatten4"
    ANGLE_AXIS = "angle_axis"

    @property
    def width(self) -> int:
        """Real outputs per quaternion."""
        return {"keep_real": 1, "keep_imaginary": 3, "flatten4": 4, "angle_axis": 4}[
            self.value
        ]


class ModelKind(StrEnum):
    RMLP = "rmlp"
    QMLP = "qmlp"
    QMLP_RINV = "qmlp_rinv"


class Scenario(StrEnum):
    """Evaluation scenarios: the test set as is, or each sample freshly rotated."""

    NO_ROTATION = "no_rotation"
    ARBITRARY_ROTATION = "arbitrary_rotation"


def _default_threads() -> int:
    return os.cpu_count() or 1


# ═══════════════════════════════════════════════════════════════
# DATA GENERATION
# ═══════════════════════════════════════════════════════════════


class GenConfig(BaseModel):
    """CubeEdge generation knobs; fully determines a dataset together with ``seed``."""

    n_edges: int = Field(default=7, ge=3, le=30)
    n_train: int = Field(default=2000, ge=0)
    n_test: int = Field(default=2000, ge=0)
    sigma: float = Field(default=0.0, ge=0.0, description="Vertex-noise std dev")
    shear_range: float = Field(default=0.5, ge=0.0)
    seed: int = 0
    noise_train: bool = Field(
        default=False, description="Also add vertex noise to the training split"
    )
    rotate_test: bool = Field(
        default=False, description="Store the test split already randomly rotated"
    )

    @property
    def n_classes(self) -> int:
        return 2 ** (self.n_edges - 2)

    @property
    def n_features(self) -> int:
        return self.n_edges - 1


# ═══════════════════════════════════════════════════════════════
# MODEL + TRAINING
# ═══════════════════════════════════════════════════════════════


class ModelConfig(BaseModel):
    """Architecture of one of the three CubeEdge classifiers.

    ``hidden`` overrides the two hidden widths (quaternions for the QPU
    models, reals for the RMLP); ``bridge`` overrides the QMLP connector.
    """

    kind: ModelKind = ModelKind.QMLP
    bridge: BridgeMode | None = None
    tape_mode: TapeMode = TapeMode.STORE
    n_inputs: int = Field(default=6, ge=1, description="Input quaternions")
    n_classes: int = Field(default=32, ge=2)
    hidden: list[int] | None = Field(default=None, min_length=2, max_length=2)


class AdamConfig(BaseModel):
    beta1: float = Field(default=0.9, ge=0.0, lt=1.0)
    beta2: float = Field(default=0.999, ge=0.0, lt=1.0)
    eps: float = Field(default=1e-8, gt=0.0)


class TrainConfig(BaseModel):
    """Optimization settings; defaults are Adam, lr 1e-3, batch 32, 50 epochs."""

    epochs: int = Field(default=50, ge=0)
    batch_size: int = Field(default=32, ge=1)
    learning_rate: float = Field(default=1e-3, gt=0.0)
    optimizer: Literal["sgd", "adam"] = "adam"
    adam: AdamConfig = AdamConfig()
    seed: int = 0
    model: ModelKind = ModelKind.QMLP
    bridge: BridgeMode | None = None
    tape_mode: TapeMode = TapeMode.STORE
    threads: int = Field(default_factory=_default_threads, ge=1)
    eval_every: int = Field(
        default=1, ge=0, description="Evaluate both scenarios every k epochs (0 = off)"
    )
    checkpoint_every: int = Field(
        default=10, ge=0, description="Checkpoint every k epochs (0 = final only)"
    )


class RunConfig(BaseModel):
    """Top-level schema of the optional ``qpu_kit.json`` config file."""

    data: GenConfig = GenConfig()
    train: TrainConfig = TrainConfig()
    out: str = "output"
    data_path: str | None = None
    scenario: Scenario = Scenario.NO_ROTATION


# ═══════════════════════════════════════════════════════════════
# REPORTS
# ═══════════════════════════════════════════════════════════════


class EpochRecord(BaseModel):
    """One line of ``metrics.jsonl``."""

    epoch: int
    train_loss: float
    best_loss: float
    accuracy: dict[Scenario, float] | None = None
    seconds: float = 0.0


class EvalReport(BaseModel):
    accuracy: float = Field(ge=0.0, le=1.0)
    per_class: dict[int, float] = Field(default_factory=dict)
    scenario: Scenario
    sigma: float = Field(ge=0.0)
    n_samples: int = 0
    model: ModelKind | None = None


class GradcheckRow(BaseModel):
    name: str
    size: int
    max_rel_error: float
    passed: bool


class InvarianceReport(BaseModel):
    trials: int
    n_inputs: int
    max_real_deviation: float
    max_imag_deviation: float
    tol: float
    passed: bool


class BenchRow(BaseModel):
    n: int
    sequential_seconds: float
    tree_seconds: float
    depth: int
    expected_depth: int
    max_abs_diff: float
    multiplications: int
    expected_multiplications: int


# ═══════════════════════════════════════════════════════════════
# FILE HEADERS
# ═══════════════════════════════════════════════════════════════


class LayerSpec(BaseModel):
    """Serializable description of one layer of a model graph."""

    kind: Literal["qpu_fc", "graph_aggregate", "bridge", "dense"]
    n_in: int = Field(ge=1)
    n_out: int = Field(ge=1)
    bridge: BridgeMode | None = None
    rectify: bool = False
    tape_mode: TapeMode = TapeMode.STORE


class CheckpointHeader(BaseModel):
    format_version: int = 1
    model: ModelConfig
    layers: list[LayerSpec]
    epoch: int = 0


class DatasetHeader(BaseModel):
    config: GenConfig
    splits: dict[str, int]


class TrainingReport(BaseModel):
    """Contents of ``report.json`` for a single training run."""

    run_id: int = 0
    config: RunConfig
    history: list[float]
    smoothed_history: list[float] = Field(default_factory=list)
    evaluations: list[EvalReport] = Field(default_factory=list)
    checkpoints: list[str] = Field(default_factory=list)


class ExperimentReport(BaseModel):
    """Noise sweep: every model evaluated at every sigma under both scenarios."""

    config: RunConfig
    sigmas: list[float]
    evaluations: list[EvalReport] = Field(default_factory=list)
    histories: dict[ModelKind, list[float]] = Field(default_factory=dict)
