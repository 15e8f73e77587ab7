from pathlib import Path
from typing import Any, Literal, Optional

from pydantic import AliasChoices, BaseModel, ConfigDict, Field, field_validator, model_validator

from relaynet.config import WALK_KINDS, defaults
from relaynet.utils import is_even_perfect_square


def _alias(name: str) -> AliasChoices:
    # accept both `p_delta` and `p-delta` spellings
    return AliasChoices(name, name.replace("_", "-"))


class SchemeParams(BaseModel):
    """Parameters of the two-phase relay policy."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    p_delta: float = Field(defaults["p_delta"], gt=0.0, lt=1.0)
    alpha: float = Field(defaults["alpha"], gt=0.0, lt=1.0)
    W: float = Field(1.0, gt=0.0)
    delta: float = Field(defaults["delta"], gt=0.0)


class RunConfig(BaseModel):
    # unknown keys are a configuration error
    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    n: int = Field(defaults["n"], validation_alias=_alias("n"))
    delta: float = Field(defaults["delta"], gt=0.0, validation_alias=_alias("delta"))
    p_delta: float = Field(defaults["p_delta"], gt=0.0, lt=1.0, validation_alias=_alias("p_delta"))
    alpha: float = Field(defaults["alpha"], gt=0.0, lt=1.0, validation_alias=_alias("alpha"))
    seed: int = Field(defaults["seed"], ge=0, lt=2**64, validation_alias=_alias("seed"))
    trials: int = Field(defaults["trials"], ge=1, validation_alias=_alias("trials"))
    slots: Optional[int] = Field(None, ge=1, validation_alias=_alias("slots"))
    warmup: Optional[int] = Field(None, ge=0, validation_alias=_alias("warmup"))
    band_low: float = Field(defaults["band_low"], gt=0.0, validation_alias=_alias("band_low"))
    band_high: float = Field(defaults["band_high"], gt=0.0, validation_alias=_alias("band_high"))
    out_path: Optional[Path] = Field(None, validation_alias=_alias("out_path"))
    format: Literal["csv", "json"] = Field(defaults["format"], validation_alias=_alias("format"))
    log_events: bool = Field(False, validation_alias=_alias("log_events"))
    events_path: Optional[Path] = Field(None, validation_alias=_alias("events_path"))

    # subcommand-specific settings
    m: int = Field(defaults["m"], ge=2, validation_alias=_alias("m"))
    kind: str = Field(defaults["kind"], validation_alias=_alias("kind"))
    samples: int = Field(defaults["samples"], ge=1, validation_alias=_alias("samples"))
    n_list: list[int] = Field(default_factory=lambda: list(defaults["n_list"]), validation_alias=_alias("n_list"))
    queue_slots: int = Field(defaults["queue_slots"], ge=1, validation_alias=_alias("queue_slots"))
    workers: int = Field(defaults["workers"], ge=1, validation_alias=_alias("workers"))

    @field_validator("n")
    @classmethod
    def _check_n(cls, v: int) -> int:
        if not is_even_perfect_square(v):
            raise ValueError("n must be an even perfect square")
        return v

    @field_validator("n_list", mode="before")
    @classmethod
    def _split_n_list(cls, v: Any) -> Any:
        if isinstance(v, str):
            v = [item for item in v.replace(" ", "").split(",") if item]
        return v

    @field_validator("n_list")
    @classmethod
    def _check_n_list(cls, v: list[int]) -> list[int]:
        bad = [n for n in v if not is_even_perfect_square(n)]
        if bad:
            raise ValueError(f"n must be an even perfect square, got {bad}")
        return sorted(set(v))

    @field_validator("kind")
    @classmethod
    def _check_kind(cls, v: str) -> str:
        if v not in WALK_KINDS:
            raise ValueError(f"kind must be one of {WALK_KINDS}")
        return v

    @model_validator(mode="after")
    def _check_ranges(self) -> "RunConfig":
        if self.band_low >= self.band_high:
            raise ValueError("band_low must be smaller than band_high")
        if self.slots is not None and self.warmup is not None and self.warmup >= self.slots:
            raise ValueError("warmup must be smaller than slots")
        return self

    def scheme_params(self) -> SchemeParams:
        return SchemeParams(p_delta=self.p_delta, alpha=self.alpha, delta=self.delta)


class MomentSummary(BaseModel):
    """First two moments of a positive duration, in slots."""

    model_config = ConfigDict(frozen=True)

    mean: float = Field(..., ge=0.0)
    second_moment: float = Field(..., ge=0.0)
    source: Literal["oracle", "monte-carlo", "closed-form"] = "oracle"

    @model_validator(mode="after")
    def _check_moments(self) -> "MomentSummary":
        # Jensen, with slack for rounding in closed forms
        if self.second_moment < self.mean**2 * (1 - 1e-9):
            raise ValueError("second_moment must be at least mean**2")
        return self

    @property
    def variance(self) -> float:
        return max(self.second_moment - self.mean**2, 0.0)


class IntermeetingEstimate(BaseModel):
    model_config = ConfigDict(frozen=True)

    m: int
    kind: str
    samples: int
    mean: float
    second_moment: float
    mean_se: float
    second_moment_se: float

    def summary(self) -> MomentSummary:
        return MomentSummary(mean=self.mean, second_moment=self.second_moment, source="monte-carlo")


class Q4Analysis(BaseModel):
    model_config = ConfigDict(frozen=True)

    n: int
    E_A: float
    E_A2: float
    P_Q_positive: float
    E_Q: float
    E_Qtilde_upper: float
    E_D4_upper: float


class ScalingEstimate(BaseModel):
    model_config = ConfigDict(frozen=True)

    throughput_band_ratio: float
    throughput_x_n_band_ratio: float
    delay_band_ratio: float
    fitted_exponent: float
