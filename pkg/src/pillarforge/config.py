"""Run configuration documents (JSON) validated before any work starts."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError as PydanticError, field_validator, model_validator

from .augment import MatchPlan
from .errors import ConfigError
from .evaluation import EvalConfig
from .model import SensorSpec
from .pillars import PillarConfig
from .postprocess import NmsParams
from .semisynth import NoiseSpec


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


def _ordered(v, name):
    if v[0] > v[1]:
        raise ValueError(f"{name} must be (low, high)")
    return v


class PillarSection(_Strict):
    range: Optional[tuple[float, float, float, float, float, float]] = None
    voxel_size: Optional[tuple[float, float, float]] = None
    max_points_per_pillar: int = Field(40, ge=1)
    max_pillars: int = Field(20_000, ge=1)

    def build(self) -> PillarConfig:
        if self.range is None:
            raise ConfigError("pillars.range is required for pillarization")
        vox = self.voxel_size or (0.2, 0.2, self.range[5] - self.range[4])
        return PillarConfig(self.range, vox, self.max_points_per_pillar, self.max_pillars)


class NoiseSection(_Strict):
    sigma: float = Field(0.1, ge=0)
    mu: float = 0.0
    apply_fraction: float = Field(1.0, ge=0, le=1)

    def build(self, seed: int) -> NoiseSpec:
        return NoiseSpec(self.sigma, self.mu, self.apply_fraction, seed)


class ScheduleSection(_Strict):
    """Per-frame augmentation applied to every ``every``-th frame (index 0 included)."""

    every: int = Field(2, ge=1)
    dropout_range: tuple[float, float] = (0.0, 0.2)
    noise_fraction_range: tuple[float, float] = (0.2, 0.4)
    noise_sigma: float = Field(0.2, ge=0)

    @field_validator("dropout_range", "noise_fraction_range")
    @classmethod
    def _unit(cls, v, info):
        if not (0 <= v[0] <= 1 and 0 <= v[1] <= 1):
            raise ValueError(f"{info.field_name} must lie in [0, 1]")
        return _ordered(v, info.field_name)


class GenerateSection(_Strict):
    clearance: float = Field(0.05, ge=0)
    ransac_iterations: int = Field(1000, ge=1)
    ransac_threshold: float = Field(0.1, gt=0)
    cell_size: float = Field(1.0, gt=0)
    ground_band: float = Field(0.2, gt=0)
    double_precision: bool = False


class GlobalAugSection(_Strict):
    enabled: bool = False
    rotation_range: tuple[float, float] = (-0.785398163397, 0.785398163397)
    flip_prob: float = Field(0.5, ge=0, le=1)
    scale_range: tuple[float, float] = (0.95, 1.05)

    @field_validator("rotation_range", "scale_range")
    @classmethod
    def _low_high(cls, v, info):
        return _ordered(v, info.field_name)


class ShapeAwareSection(_Strict):
    enabled: bool = False
    p_dropout: float = Field(0.25, ge=0, le=1)
    p_swap: float = Field(0.1, ge=0, le=1)
    p_sparsify: float = Field(0.1, ge=0, le=1)


class MatchSection(_Strict):
    object_upsample_factor: dict[str, float] = Field(default_factory=dict)
    background_dropout_rate: float = Field(0.0, ge=0, le=1)

    def build(self) -> MatchPlan:
        return MatchPlan(dict(self.object_upsample_factor), self.background_dropout_rate)


class AugmentSection(_Strict):
    match_plan: Optional[MatchSection] = None
    global_transform: GlobalAugSection = GlobalAugSection()
    shape_aware: ShapeAwareSection = ShapeAwareSection()


class NmsSection(_Strict):
    iou_threshold: float = Field(0.2, ge=0, le=1)
    score_threshold: float = Field(0.1, ge=0, le=1)
    beta: float = Field(0.5, ge=0, le=1)
    tau_near: float = Field(4.0, ge=0)
    d_ref: float = Field(40.0, gt=0)
    origin: tuple[float, float] = (0.0, 0.0)
    use_3d: bool = False
    rectify: bool = True

    def build(self) -> NmsParams:
        return NmsParams(self.iou_threshold, self.score_threshold, self.beta, self.tau_near, self.d_ref,
                         self.origin, self.use_3d)


class EvalSection(_Strict):
    metrics: tuple[Literal["BEV", "3D", "AOS"], ...] = ("3D", "BEV", "AOS")
    iou_thresholds: tuple[float, ...] = (0.5, 0.25)
    recall_positions: int = Field(40, ge=1)
    score_threshold: float = Field(0.1, ge=0, le=1)
    categories: tuple[str, ...] = ()

    def build(self) -> list:
        return [EvalConfig(m, t, self.recall_positions, self.score_threshold, self.categories)
                for t in self.iou_thresholds for m in self.metrics]


class SensorSection(_Strict):
    channels: int = 64
    range_m: float = 120.0
    points_per_second: int = 2_621_480
    rotation_rate_hz: float = 20.0
    vfov_deg: float = 45.0
    hfov_deg: float = 360.0
    noise_sigma: float = 0.1
    dropoff_rate: float = 0.1
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def build(self) -> SensorSpec:
        return SensorSpec(**self.model_dump())


class PathSection(_Strict):
    background_dir: Optional[str] = None
    synthetic_dir: Optional[str] = None
    out_dir: Optional[str] = None
    class_table: Optional[str] = None


class RunConfig(_Strict):
    seed: int = Field(0, ge=0, lt=2**64)
    strict_classes: bool = False
    pillars: PillarSection = PillarSection()
    noise: NoiseSection = NoiseSection()
    schedule: ScheduleSection = ScheduleSection()
    generate: GenerateSection = GenerateSection()
    augment: AugmentSection = AugmentSection()
    nms: NmsSection = NmsSection()
    eval: EvalSection = EvalSection()
    sensor: SensorSection = SensorSection()
    paths: PathSection = PathSection()

    @model_validator(mode="after")
    def _build_all(self):
        # surface cross-field problems (e.g. voxel z vs range) at load time
        try:
            if self.pillars.range is not None:
                self.pillars.build()
            self.nms.build()
            self.eval.build()
            self.sensor.build()
            if self.augment.match_plan is not None:
                self.augment.match_plan.build()
        except ConfigError:
            raise
        except Exception as exc:
            raise ValueError(str(exc)) from exc
        return self

    def canonical_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()


def load_config(path=None, **overrides) -> RunConfig:
    """Read and validate a JSON config; ``overrides`` replace top-level keys."""
    data = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be an object")
    data.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return RunConfig.model_validate(data)
    except PydanticError as exc:
        lines = [f"{'.'.join(map(str, e['loc'])) or '<root>'}: {e['msg']}" for e in exc.errors()]
        raise ConfigError("invalid config:\n  " + "\n  ".join(lines)) from None
