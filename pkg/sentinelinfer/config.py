import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, fields, replace
from os import PathLike
from typing import Any, Optional, Union

from .design import TAU_STRATEGIES
from .effort import EffortModel
from .exceptions import ConfigError, SentinelInferError
from .payments import COST_MODES
from .simulate import TASKS, SyntheticConfig

logger = logging.getLogger(__name__)

METHODS = ("sentinel", "active", "uniform", "classical")
SENTINEL_DESIGNS = ("fixed-rho", "fixed-b", "joint")
ESTIMANDS = ("mean", "odds_ratio")
BASELINE_PAYMENTS = ("linear-accuracy", "overhead-only")
TAU_MIX_GRID = tuple(i / 10 for i in range(11))
CAMPAIGN_N = 60000


def _from_known_keys(cls, data: dict[str, Any], section: str):
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"Unknown {section} keys: {sorted(unknown)}!")
    return cls(**data)


@dataclass(frozen=True)
class BaselineSettings:
    """
    Settings of the accuracy-paid baselines.

    ``tau_mix`` is a number in [0, 1] or ``"tuned"``, which picks the mixing
    weight with the smallest variance estimate on a pilot half of the data.
    """
    effort: float = 0.8
    tau_mix: Union[float, str] = 0.5
    payment: str = "linear-accuracy"

    def __post_init__(self):
        if not 0 < self.effort < 1:
            raise ConfigError("Baseline effort must lie in (0, 1)!")
        if isinstance(self.tau_mix, str):
            if self.tau_mix != "tuned":
                raise ConfigError("tau_mix must be a number in [0, 1] or 'tuned'!")
        elif not 0 <= self.tau_mix <= 1:
            raise ConfigError("tau_mix must lie in [0, 1]!")
        if self.payment not in BASELINE_PAYMENTS:
            raise ConfigError(f"Unknown baseline payment '{self.payment}'; choose from {BASELINE_PAYMENTS}!")


@dataclass(frozen=True)
class VerificationConfig:
    """
    Sizes of the theory-verification suites.
    """
    unbiasedness_rounds: int = 10000
    unbiasedness_n: int = 500
    coverage_rounds: int = 2000
    coverage_n: int = 1000
    m_estimation_rounds: int = 2000
    m_estimation_n: int = 1000
    perturbations: int = 200
    design_pairs: int = 20
    fidelity_n: int = 100000

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if value < 1:
                raise ConfigError(f"{f.name} must be at least 1!")


@dataclass(frozen=True)
class ExperimentConfig:
    """
    Configuration of a Monte Carlo campaign and of the verification suites.

    The dataset comes either from the synthetic generator (``dataset``) or from
    a CSV file (``data_path``), resampled with replacement in each replication.
    """
    dataset: SyntheticConfig = field(default_factory=lambda: SyntheticConfig(n=CAMPAIGN_N))
    data_path: Optional[str] = None
    data_schema: dict[str, str] = field(default_factory=dict)
    task: str = "binary"
    sample_size: Optional[int] = None
    methods: tuple[str, ...] = METHODS
    budgets: tuple[float, ...] = (1500.0, 3000.0, 6000.0, 12000.0, 24000.0)
    alpha: float = 0.05
    replications: int = 2000
    seed: int = 0
    w0: float = 0.25
    k: float = 0.0
    cost_mode: str = "aggregate"
    effort_model: dict[str, Any] = field(default_factory=lambda: EffortModel().to_config())
    sentinel_design: str = "fixed-rho"
    rho: float = 0.1
    bonus: float = 5.0
    tau_strategy: str = "column"
    estimand: str = "mean"
    baseline: BaselineSettings = field(default_factory=BaselineSettings)
    output_dir: str = "results"
    n_jobs: int = 1
    verification: VerificationConfig = field(default_factory=VerificationConfig)

    def __post_init__(self):
        object.__setattr__(self, "methods", tuple(self.methods))
        object.__setattr__(self, "budgets", tuple(float(b) for b in self.budgets))
        if not self.methods:
            raise ConfigError("At least one method is needed!")
        unknown = [m for m in self.methods if m not in METHODS]
        if unknown:
            raise ConfigError(f"Unknown methods {unknown}; choose from {METHODS}!")
        if len(set(self.methods)) != len(self.methods):
            raise ConfigError("Methods must not repeat!")
        if not self.budgets or any(b <= 0 for b in self.budgets):
            raise ConfigError("Budgets must be positive!")
        if any(b2 <= b1 for b1, b2 in zip(self.budgets, self.budgets[1:])):
            raise ConfigError("Budgets must be strictly increasing!")
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha must lie in (0, 1)!")
        if self.replications < 1:
            raise ConfigError("At least one replication is needed!")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("Seed must be a nonnegative 64-bit integer!")
        if self.w0 < 0 or self.k < 0:
            raise ConfigError("Costs w0 and k must be nonnegative!")
        if self.cost_mode not in COST_MODES:
            raise ConfigError(f"Unknown cost mode '{self.cost_mode}'; choose from {COST_MODES}!")
        if self.sentinel_design not in SENTINEL_DESIGNS:
            raise ConfigError(f"Unknown sentinel design '{self.sentinel_design}'; choose from {SENTINEL_DESIGNS}!")
        if not 0 < self.rho < 1:
            raise ConfigError("rho must lie in (0, 1)!")
        if self.bonus <= 0:
            raise ConfigError("bonus must be positive!")
        if self.tau_strategy not in TAU_STRATEGIES:
            raise ConfigError(f"Unknown tau strategy '{self.tau_strategy}'; choose from {TAU_STRATEGIES}!")
        if self.estimand not in ESTIMANDS:
            raise ConfigError(f"Unknown estimand '{self.estimand}'; choose from {ESTIMANDS}!")
        if self.task not in TASKS:
            raise ConfigError(f"Unknown task '{self.task}'; choose from {TASKS}!")
        if self.sample_size is not None and self.sample_size < 1:
            raise ConfigError("sample_size must be at least 1!")
        if self.n_jobs == 0:
            raise ConfigError("n_jobs must not be 0!")
        try:
            self.model()
        except SentinelInferError as exc:
            raise ConfigError(f"Invalid effort model: {exc.message}") from exc

    def model(self) -> EffortModel:
        return EffortModel.from_config(self.effort_model)

    @property
    def uses_file(self) -> bool:
        return self.data_path is not None

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ExperimentConfig":
        """
        Build a configuration from a dictionary, as read from a JSON file.

        Raises
        ------
        ConfigError
            For unknown keys or invalid values.
        """
        data = dict(data)
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"Unknown configuration keys: {sorted(unknown)}!")
        try:
            if "dataset" in data:
                data["dataset"] = _from_known_keys(SyntheticConfig, {"n": CAMPAIGN_N, **data["dataset"]}, "dataset")
            if "baseline" in data:
                data["baseline"] = _from_known_keys(BaselineSettings, data["baseline"], "baseline")
            if "verification" in data:
                data["verification"] = _from_known_keys(VerificationConfig, data["verification"], "verification")
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(f"Malformed configuration: {exc}") from exc

    def to_dict(self) -> dict[str, Any]:
        data = asdict(self)
        data["methods"] = list(self.methods)
        data["budgets"] = list(self.budgets)
        return data

    def digest(self) -> str:
        """SHA-256 of the canonical JSON form; ``output_dir`` and ``n_jobs`` do not enter it."""
        data = self.to_dict()
        data.pop("output_dir")
        data.pop("n_jobs")
        return hashlib.sha256(json.dumps(data, sort_keys=True).encode("utf-8")).hexdigest()

    def with_overrides(self, seed: Optional[int] = None, output_dir: Optional[str] = None) -> "ExperimentConfig":
        changes = {}
        if seed is not None:
            changes["seed"] = seed
        if output_dir is not None:
            changes["output_dir"] = output_dir
        return replace(self, **changes)


def load_config(filepath: Union[str, PathLike]) -> ExperimentConfig:
    try:
        with open(filepath) as f:
            data = json.load(f)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{filepath} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{filepath} must hold a JSON object!")
    logger.info("Loaded configuration from %s", filepath)
    return ExperimentConfig.from_dict(data)
