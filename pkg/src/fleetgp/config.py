"""Run configuration: flat-key JSON file plus CLI overrides."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace

from .errors import ValidationError
from .gp import Hyperparameters

POLICIES = ("fgp", "gpddf", "gpddf+")

AUTO = "auto"


@dataclass(frozen=True)
class RunConfig:
    """All knobs of a simulation run.

    ``prior_mean`` is either a number or ``"auto"``, in which case the
    simulator uses the mean of the log-transformed demand field.  Counts
    follow the usual fleet-simulation roles: ``vehicles`` cruising vehicles,
    ``users`` waiting users, ``steps`` planning rounds, ``horizon`` walk
    length per round.
    """

    rows: int = 50
    cols: int = 100
    vehicles: int = 20
    users: int = 200
    steps: int = 960
    horizon: int = 4
    support_size: int = 64
    support_seed: int = 7
    policy: str = "gpddf+"
    seed: int = 0
    window: int = 10
    smoothing_eps: float = 1e-6
    signal_var: float = 1.0
    noise_var: float = 0.1
    length_scale_row: float = 0.12
    length_scale_col: float = 0.12
    prior_mean: object = AUTO
    hotspot_count: int = 3
    hotspot_amplitude: float = 2.5
    hotspot_radius: float = 0.08
    base_log_mean: float = 0.8
    timing: bool = False

    def validate(self) -> "RunConfig":
        if self.rows < 1 or self.cols < 1:
            raise ValidationError("grid dimensions must be positive")
        for name in ("vehicles", "users", "steps", "support_size", "window"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be positive")
        if self.horizon < 1:
            raise ValidationError("horizon must be >= 1")
        if self.policy not in POLICIES:
            raise ValidationError(f"policy must be one of {POLICIES}")
        if self.smoothing_eps <= 0:
            raise ValidationError("smoothing_eps must be > 0")
        if self.prior_mean != AUTO:
            try:
                float(self.prior_mean)
            except (TypeError, ValueError):
                raise ValidationError("prior_mean must be a number or 'auto'") from None
        if self.support_size >= self.rows * self.cols:
            raise ValidationError("support_size must be smaller than the grid")
        # constructing hyperparameters validates positivity of the variances
        self.hyperparameters(0.0)
        return self

    def hyperparameters(self, prior_mean: float) -> Hyperparameters:
        return Hyperparameters(
            signal_var=self.signal_var,
            noise_var=self.noise_var,
            length_scales=[self.length_scale_row, self.length_scale_col],
            prior_mean=float(prior_mean),
        )

    def to_dict(self) -> dict:
        return asdict(self)


def load_config(path) -> RunConfig:
    """Read a flat-key JSON config file; unknown keys are rejected."""
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ValidationError("config must be a JSON object with flat keys")
    known = set(RunConfig.__dataclass_fields__)
    unknown = set(raw) - known
    if unknown:
        raise ValidationError(f"unknown config keys: {sorted(unknown)}")
    return RunConfig(**raw).validate()


def override(config: RunConfig, **kwargs) -> RunConfig:
    """Apply non-None keyword overrides and re-validate."""
    updates = {k: v for k, v in kwargs.items() if v is not None}
    return replace(config, **updates).validate() if updates else config
