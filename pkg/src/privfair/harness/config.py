"""Experiment configuration from TOML files with command-line overrides."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from privfair.errors import ConfigError


@dataclass(frozen=True)
class ExperimentConfig:
    """Sweep settings.

    ``alpha_n`` and ``alpha_tilde`` accept a number or ``"theory"`` (the
    high-probability slack formulas, which are vacuous at moderate ``n``).
    With ``eta_per_B`` the multiplier step is ``eta / B``, the convention
    of the reference reductions software; otherwise ``eta`` is used as is.
    ``mixture`` selects how step one combines its best responses (see
    :func:`privfair.reduction.exp_gradient`).
    ``dataset=None`` selects the built-in synthetic surrogate.
    """

    epsilon_grid: tuple = (0.5, 1.0, 2.0, 5.0, 10.0)
    trials: int = 10
    train_fraction: float = 0.75
    split_fraction_s1: float = 0.5
    T: int = 50
    eta: float = 2.0
    B: float = 100.0
    eta_per_B: bool = True
    mixture: str = "lp"
    alpha_n: float | str = "theory"
    alpha_tilde: float | str = 0.0
    delta: float = 0.1
    seed: int = 0
    dataset: str | None = None
    synthetic_rows: int = 20_000
    group_column: str = "sex"
    label_column: str = "income"
    positive_label: str = ">50K"
    drop_columns: tuple = ("fnlwgt",)
    learner_steps: int = 500
    learner_step_size: float = 0.1
    learner_l2: float = 1e-6
    workers: int = 1
    report_probability: float = 0.3

    def __post_init__(self):
        object.__setattr__(self, "epsilon_grid", tuple(float(e) for e in self.epsilon_grid))
        object.__setattr__(self, "drop_columns", tuple(self.drop_columns))
        if not self.epsilon_grid:
            raise ConfigError("epsilon_grid must not be empty")
        if any(not (e > 0) for e in self.epsilon_grid):
            raise ConfigError("every epsilon must be positive")
        if self.trials < 1:
            raise ConfigError("trials must be at least 1")
        for name in ("train_fraction", "split_fraction_s1", "delta"):
            v = getattr(self, name)
            if not (0 < v < 1):
                raise ConfigError(f"{name} must lie in (0, 1)")
        if self.T < 1 or self.B <= 0 or self.eta <= 0:
            raise ConfigError("need T >= 1, B > 0 and eta > 0")
        for name in ("alpha_n", "alpha_tilde"):
            v = getattr(self, name)
            if isinstance(v, str):
                if v != "theory":
                    raise ConfigError(f"{name} must be a number or 'theory'")
            elif v < 0:
                raise ConfigError(f"{name} must be nonnegative")
        if self.mixture not in ("uniform", "lp"):
            raise ConfigError("mixture must be 'uniform' or 'lp'")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        if not (0 < self.report_probability <= 1):
            raise ConfigError("report_probability must lie in (0, 1]")

    @property
    def effective_eta(self) -> float:
        return self.eta / self.B if self.eta_per_B else self.eta

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["epsilon_grid"] = list(self.epsilon_grid)
        d["drop_columns"] = list(self.drop_columns)
        return d


_FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}


def config_from_dict(values: dict, base: ExperimentConfig | None = None) -> ExperimentConfig:
    unknown = sorted(set(values) - set(_FIELDS))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    try:
        return dataclasses.replace(base or ExperimentConfig(), **values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path=None, overrides: dict | None = None) -> ExperimentConfig:
    """Defaults, then the TOML file (flat keys or an ``[experiment]`` table), then overrides."""
    values = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                raw = tomllib.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"invalid TOML in {path}: {exc}") from None
        values.update(raw.get("experiment", raw))
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return config_from_dict(values)

