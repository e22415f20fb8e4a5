"""Pydantic request/response models for the HTTP service.

These mirror the core dataclass configs; the ``lambda`` wire key maps to the
``lam`` field everywhere.  Requests carry filesystem paths, not payloads: the
service is a local job runner and data stays on disk.
"""

from __future__ import annotations

from pydantic import BaseModel, ConfigDict, Field

from ..phantom import ClassSpec, PhantomConfig, benchmark_config
from ..pipeline.config import TrainConfig


class HealthResponse(BaseModel):
    status: str
    version: str


class ErrorInfo(BaseModel):
    kind: str  # "config" | "numeric" | "io" | "internal"
    message: str


class ClassSpecModel(BaseModel):
    region: tuple[tuple[int, int], tuple[int, int], tuple[int, int]]
    radius_range: tuple[float, float]
    intensity_range: tuple[float, float]
    name: str = ""

    def to_spec(self) -> ClassSpec:
        return ClassSpec(region=self.region, radius_range=self.radius_range,
                         intensity_range=self.intensity_range, name=self.name)

    @classmethod
    def from_spec(cls, spec: ClassSpec) -> "ClassSpecModel":
        return cls(**spec.to_dict())


def _default_class_specs() -> list[ClassSpecModel]:
    return [ClassSpecModel.from_spec(s) for s in benchmark_config().class_specs]


class PhantomConfigModel(BaseModel):
    shape: tuple[int, int, int] = (64, 64, 96)
    spacing: tuple[float, float, float] = (2.0, 2.0, 2.0)
    class_specs: list[ClassSpecModel] = Field(default_factory=_default_class_specs)
    n_confounders: int = 4
    confounder_radius_range: tuple[float, float] = (2.0, 3.5)
    confounder_intensity_range: tuple[float, float] = (10.0, 20.0)
    noise_level: float = 2.0
    blur_sigma: float = 1.0
    rng_seed: int = 0

    def to_config(self) -> PhantomConfig:
        return PhantomConfig(
            shape=self.shape, spacing=self.spacing,
            class_specs=tuple(s.to_spec() for s in self.class_specs),
            n_confounders=self.n_confounders,
            confounder_radius_range=self.confounder_radius_range,
            confounder_intensity_range=self.confounder_intensity_range,
            noise_level=self.noise_level, blur_sigma=self.blur_sigma, rng_seed=self.rng_seed,
        )


class TrainConfigModel(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    batch_size: int = 8
    epochs: int = 60
    learning_rate: float = 1e-3
    lam: float = Field(default=1.0, alias="lambda")
    seed: int = 0
    threshold_frac: float = 0.4
    suv_frac: float = 0.4
    max_suv: float = 30.0
    target_spacing: tuple[float, float, float] = (2.0, 2.0, 2.0)
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    weight_decay: float = 0.0
    report_samples: int = 4

    def to_config(self) -> TrainConfig:
        return TrainConfig(**self.model_dump(by_alias=False))


class PhantomRequest(BaseModel):
    out_dir: str
    n_per_class: int = 10
    config: PhantomConfigModel = Field(default_factory=PhantomConfigModel)


class PhantomResponse(BaseModel):
    manifest: str
    n_cases: int
    case_ids: list[str]


class TrainRequest(BaseModel):
    manifest: str
    out_dir: str
    train: TrainConfigModel = Field(default_factory=TrainConfigModel)


class LossRecord(BaseModel):
    loss1: float
    loss2: float
    combined: float


class TrainResponse(BaseModel):
    checkpoint: str
    history: str
    steps: int
    final: LossRecord | None


class FoldSummary(BaseModel):
    fold: int
    n_test: int
    dice_mean: float
    dice_std: float
    accuracy: float


class CrossvalRequest(BaseModel):
    manifest: str
    out_dir: str
    folds: int = 5
    write_masks: bool = False
    train: TrainConfigModel = Field(default_factory=TrainConfigModel)


class CrossvalResponse(BaseModel):
    report: str
    dice_mean: float
    dice_std: float
    accuracy: float
    n_cases: int
    folds: list[FoldSummary]


class EvalRequest(BaseModel):
    manifest: str
    checkpoint: str
    out_dir: str
    write_masks: bool = True
    train: TrainConfigModel = Field(default_factory=TrainConfigModel)


class EvalResponse(BaseModel):
    records: str
    dice_mean: float
    accuracy: float
    n_cases: int
    skipped: int


class GradcheckRequest(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    seed: int = 0
    instances: int = 5
    tolerance: float = 1e-4
    lam: float = Field(default=1.0, alias="lambda")


class GradcheckInstanceModel(BaseModel):
    seed: int
    skipped_degenerate: bool
    n_coordinates: int
    max_rel_error: dict[str, float]
    worst_parameter: dict[str, str]


class GradcheckResponse(BaseModel):
    passed: bool
    max_rel_error: float
    tolerance: float
    elapsed_seconds: float
    failures: list[str]
    instances: list[GradcheckInstanceModel]


class ReportRequest(BaseModel):
    reports: list[str]
    out_dir: str


class ReportResponse(BaseModel):
    files: list[str]


class LocalizeRequest(BaseModel):
    volume: str
    checkpoint: str
    out_path: str
    train: TrainConfigModel = Field(default_factory=TrainConfigModel)


class LocalizeResponse(BaseModel):
    mask: str
    pred_label: int
    probabilities: tuple[float, float]
    detected_voxels: int
    degenerate_cam: bool
