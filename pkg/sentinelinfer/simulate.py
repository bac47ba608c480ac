import logging
import re
from dataclasses import asdict, dataclass, field, fields
from os import PathLike
from typing import Any, Generator, Optional, Union

import numpy as np
import pandas as pd
from scipy.special import expit, logit

from .design import SamplingDesign
from .effort import EffortModel
from .exceptions import ConfigError, DataError, DomainError, ParseError
from .payments import SentinelScheme

logger = logging.getLogger(__name__)

TASKS = ("binary", "continuous")
CALIBRATIONS = ("well", "miscalibrated")
LABEL_CHANNELS = ("assisted", "symmetric")
DATASET_COLUMNS = ["id", "prediction", "y_true", "y_false", "ai_error_prob", "uncertainty"]

# draw indices of the keyed random streams
SAMPLING_DRAW = 0
AUDIT_DRAW = 1
AI_ERROR_DRAW = 2
CORRECTION_DRAW = 3


@dataclass(frozen=True)
class Instance:
    id: int
    prediction: float
    ai_error_prob: float
    y_true: float
    y_false: float
    uncertainty: Optional[float] = None
    group: Optional[int] = None


def binary_error_probability(prediction: np.ndarray, y_true: np.ndarray) -> np.ndarray:
    """
    Probability that a calibrated binary score ``prediction`` produces the wrong class:
    ``1 - (p * y + (1 - p) * (1 - y))``.
    """
    prediction = np.asarray(prediction, dtype=float)
    y_true = np.asarray(y_true, dtype=float)
    return 1.0 - (prediction * y_true + (1.0 - prediction) * (1.0 - y_true))


@dataclass(frozen=True, eq=False)
class Dataset:
    """
    Instances to be labelled, stored column-wise.

    ``prediction`` is the expected output of the AI assistant,
    ``(1 - ai_error_prob) * y_true + ai_error_prob * y_false``: for a binary
    task with a calibrated score it is the score itself. Indexing returns
    :class:`Instance` records.
    """
    ids: np.ndarray
    prediction: np.ndarray
    ai_error_prob: np.ndarray
    y_true: np.ndarray
    y_false: np.ndarray
    task: str = "binary"
    uncertainty: Optional[np.ndarray] = None
    group: Optional[np.ndarray] = None
    provenance: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.task not in TASKS:
            raise DataError(f"Unknown task '{self.task}'; choose from {TASKS}!")
        ids = np.asarray(self.ids)
        if ids.ndim != 1 or len(ids) == 0:
            raise DataError("A dataset needs at least one instance!")
        if not np.issubdtype(ids.dtype, np.integer):
            if not np.all(np.mod(ids, 1) == 0):
                raise DataError("Instance ids must be integers!")
            ids = ids.astype(np.int64)
        if np.any(ids < 0):
            raise DataError("Instance ids must be nonnegative!")
        if len(np.unique(ids)) != len(ids):
            raise DataError("Instance ids must be unique!")
        object.__setattr__(self, "ids", ids)

        n = len(ids)
        for name in ("prediction", "ai_error_prob", "y_true", "y_false", "uncertainty", "group"):
            value = getattr(self, name)
            if value is None:
                continue
            value = np.asarray(value, dtype=np.int64 if name == "group" else float)
            if value.shape != (n,):
                raise DataError(f"Column '{name}' has shape {value.shape}, expected ({n},)!")
            if name != "group" and not np.all(np.isfinite(value)):
                raise DataError(f"Column '{name}' has non-finite values!")
            object.__setattr__(self, name, value)

        if np.any(self.ai_error_prob < 0) or np.any(self.ai_error_prob > 1):
            raise DataError("AI error probabilities must lie in [0, 1]!")
        if self.uncertainty is not None and np.any(self.uncertainty < 0):
            raise DataError("Uncertainty scores must be nonnegative!")
        if self.task == "binary":
            if np.any((self.prediction < 0) | (self.prediction > 1)):
                raise DataError("Binary predictions must lie in [0, 1]!")
            if not np.all(np.isin(self.y_true, (0.0, 1.0))):
                raise DataError("Binary ground truth must be 0 or 1!")
            if not np.array_equal(self.y_false, 1.0 - self.y_true):
                raise DataError("For binary tasks y_false must equal 1 - y_true!")

        gap = np.abs(self.prediction - self.expected_ai_output())
        if np.max(gap) > 1e-8:
            logger.warning(
                "Prediction differs from the expected AI output on %d of %d instances "
                "(max gap %.3g); residual-corrected estimates may be biased.",
                int(np.sum(gap > 1e-8)), n, float(np.max(gap))
            )

    def __len__(self) -> int:
        return len(self.ids)

    def __getitem__(self, position: int) -> Instance:
        return Instance(
            id=int(self.ids[position]),
            prediction=float(self.prediction[position]),
            ai_error_prob=float(self.ai_error_prob[position]),
            y_true=float(self.y_true[position]),
            y_false=float(self.y_false[position]),
            uncertainty=None if self.uncertainty is None else float(self.uncertainty[position]),
            group=None if self.group is None else int(self.group[position]),
        )

    def __iter__(self) -> Generator[Instance, None, None]:
        for position in range(len(self)):
            yield self[position]

    def expected_ai_output(self) -> np.ndarray:
        return (1.0 - self.ai_error_prob) * self.y_true + self.ai_error_prob * self.y_false

    @property
    def true_mean(self) -> float:
        return float(np.mean(self.y_true))

    def subset(self, mask: np.ndarray) -> "Dataset":
        mask = np.asarray(mask, dtype=bool)
        return Dataset(
            ids=self.ids[mask],
            prediction=self.prediction[mask],
            ai_error_prob=self.ai_error_prob[mask],
            y_true=self.y_true[mask],
            y_false=self.y_false[mask],
            task=self.task,
            uncertainty=None if self.uncertainty is None else self.uncertainty[mask],
            group=None if self.group is None else self.group[mask],
            provenance=dict(self.provenance),
        )

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame({
            "id": self.ids,
            "prediction": self.prediction,
            "y_true": self.y_true,
            "y_false": self.y_false,
            "ai_error_prob": self.ai_error_prob,
        })
        # always written; an absent column stays empty
        frame["uncertainty"] = self.uncertainty if self.uncertainty is not None else np.nan
        if self.group is not None:
            frame["group"] = self.group
        return frame

    def to_csv(self, filepath: Union[str, PathLike]) -> None:
        self.to_frame().to_csv(filepath, index=False)


@dataclass(frozen=True)
class SyntheticConfig:
    """
    Parameters of the synthetic dataset generator.

    Binary tasks draw scores from Beta(alpha, beta). Under ``"well"``
    calibration the ground truth is Bernoulli(score); under
    ``"miscalibrated"`` it is Bernoulli(expit(distortion * logit(score))).
    With ``hard_predictions`` the AI predicts the class ``score > 0.5`` and errs
    exactly when that class is wrong. With ``two_groups`` each instance falls
    in group 0 or 1 and group 1 draws scores from Beta(alpha + group_shift, beta).

    Continuous tasks draw ``f ~ N(0, 1)``, a covariate ``x ~ U(0, 1)`` and
    residuals ``N(0, (residual_scale * (0.5 + x))**2)``; the AI error
    probability is ``U(0.05, 0.5)`` and the wrong output is chosen so that
    ``f`` stays the expected AI output.
    """
    n: int = 1000
    task: str = "binary"
    alpha: float = 4.5
    beta: float = 0.5
    calibration: str = "well"
    distortion: float = 1.0
    hard_predictions: bool = False
    two_groups: bool = False
    group_shift: float = 0.0
    residual_scale: float = 1.0

    def __post_init__(self):
        if self.n < 1:
            raise ConfigError("Dataset size n must be at least 1!")
        if self.task not in TASKS:
            raise ConfigError(f"Unknown task '{self.task}'; choose from {TASKS}!")
        if self.calibration not in CALIBRATIONS:
            raise ConfigError(f"Unknown calibration '{self.calibration}'; choose from {CALIBRATIONS}!")
        if self.alpha <= 0 or self.beta <= 0:
            raise ConfigError("Beta parameters must be positive!")
        if self.alpha + self.group_shift <= 0:
            raise ConfigError("Group shift leaves a nonpositive Beta parameter!")
        if self.distortion <= 0:
            raise ConfigError("Calibration distortion must be positive!")
        if self.residual_scale <= 0:
            raise ConfigError("Residual scale must be positive!")

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "SyntheticConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"Unknown synthetic dataset keys: {sorted(unknown)}!")
        return cls(**data)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def generate_synthetic(config: SyntheticConfig, seed: int) -> Dataset:
    """
    Generate a reproducible synthetic dataset.

    Parameters
    ----------
    config : SyntheticConfig
        Generator parameters.
    seed : int
        Nonnegative seed, up to 64 bits. The same ``(config, seed)`` always
        gives the same dataset.

    Returns
    -------
    Dataset
        The dataset, with ids ``0, ..., n - 1``.
    """
    if seed < 0:
        raise DomainError("Seed must be nonnegative!")
    rng = np.random.default_rng(seed)
    n = config.n
    ids = np.arange(n, dtype=np.int64)
    provenance = {"source": "synthetic", "config": config.to_dict(), "seed": int(seed)}

    if config.task == "binary":
        group = rng.integers(0, 2, size=n) if config.two_groups else None
        alpha = config.alpha + (config.group_shift * group if group is not None else 0.0)
        score = rng.beta(alpha, config.beta, size=n)
        if config.calibration == "well":
            truth_prob = score
        else:
            with np.errstate(divide="ignore"):
                truth_prob = expit(config.distortion * logit(score))
        y_true = (rng.random(n) < truth_prob).astype(float)
        if config.hard_predictions:
            prediction = (score > 0.5).astype(float)
            ai_error_prob = (prediction != y_true).astype(float)
        else:
            prediction = score
            ai_error_prob = binary_error_probability(score, y_true)
        return Dataset(
            ids=ids,
            prediction=prediction,
            ai_error_prob=ai_error_prob,
            y_true=y_true,
            y_false=1.0 - y_true,
            task="binary",
            uncertainty=score * (1.0 - score),
            group=group,
            provenance=provenance,
        )

    x = rng.random(n)
    prediction = rng.normal(0.0, 1.0, size=n)
    scale = config.residual_scale * (0.5 + x)
    residual = rng.normal(0.0, scale)
    ai_error_prob = rng.uniform(0.05, 0.5, size=n)
    y_true = prediction + residual
    return Dataset(
        ids=ids,
        prediction=prediction,
        ai_error_prob=ai_error_prob,
        y_true=y_true,
        y_false=y_true - residual / ai_error_prob,
        task="continuous",
        uncertainty=scale ** 2,
        provenance=provenance,
    )


def keyed_uniforms(seed: int, draw: int, ids: np.ndarray) -> np.ndarray:
    """
    Uniform draws on [0, 1) indexed by ``(seed, draw, id)``.

    The value for an instance depends only on its id, never on which other
    instances are drawn or in which order. A Philox stream keyed by
    ``(seed, draw)`` is read at position ``id``; sparse or very large ids fall
    back to one generator per instance.
    """
    ids = np.asarray(ids, dtype=np.int64)
    if len(ids) == 0:
        return np.zeros(0)
    if seed < 0 or seed >= 2 ** 64:
        raise DomainError("Seed must be a nonnegative 64-bit integer!")
    if np.any(ids < 0):
        raise DomainError("Instance ids must be nonnegative!")
    span = int(np.max(ids)) + 1
    if span <= 16 * len(ids) + 1024:
        generator = np.random.Generator(np.random.Philox(key=int(seed) | (int(draw) << 64)))
        return generator.random(span)[ids]
    return np.array([np.random.default_rng([int(seed), int(draw), int(i)]).random() for i in ids])


@dataclass(frozen=True)
class LabelOutcome:
    id: int
    sampled: bool
    regular: bool
    label: Optional[float]
    bonus_paid: float
    base_paid: float
    effort_used: float


@dataclass(frozen=True, eq=False)
class RoundOutcomes:
    """
    Outcomes of one labelling round, stored column-wise.

    ``regular`` is 0 on sentinels and on unsampled instances; ``label`` is NaN
    on unsampled instances. Indexing returns :class:`LabelOutcome` records.
    """
    ids: np.ndarray
    sampled: np.ndarray
    regular: np.ndarray
    label: np.ndarray
    bonus_paid: np.ndarray
    base_paid: np.ndarray
    effort_used: np.ndarray

    def __len__(self) -> int:
        return len(self.ids)

    def __getitem__(self, position: int) -> LabelOutcome:
        sampled = bool(self.sampled[position])
        return LabelOutcome(
            id=int(self.ids[position]),
            sampled=sampled,
            regular=bool(self.regular[position]),
            label=float(self.label[position]) if sampled else None,
            bonus_paid=float(self.bonus_paid[position]),
            base_paid=float(self.base_paid[position]),
            effort_used=float(self.effort_used[position]),
        )

    def __iter__(self) -> Generator[LabelOutcome, None, None]:
        for position in range(len(self)):
            yield self[position]

    @property
    def sentinel(self) -> np.ndarray:
        return self.sampled & ~self.regular

    @property
    def n_sampled(self) -> int:
        return int(np.sum(self.sampled))

    @property
    def n_sentinels(self) -> int:
        return int(np.sum(self.sentinel))

    def subset(self, mask: np.ndarray) -> "RoundOutcomes":
        mask = np.asarray(mask, dtype=bool)
        return RoundOutcomes(**{f.name: getattr(self, f.name)[mask] for f in fields(self)})

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "id": self.ids,
            "sampled": self.sampled.astype(int),
            "regular": self.regular.astype(int),
            "label": self.label,
            "bonus_paid": self.bonus_paid,
            "base_paid": self.base_paid,
            "effort_used": self.effort_used,
        })

    def to_csv(self, filepath: Union[str, PathLike]) -> None:
        self.to_frame().to_csv(filepath, index=False)

    @classmethod
    def read_csv(cls, filepath: Union[str, PathLike]) -> "RoundOutcomes":
        frame = pd.read_csv(filepath)
        missing = set(["id", "sampled", "regular", "label", "bonus_paid", "base_paid", "effort_used"]) - set(frame.columns)
        if missing:
            raise DataError(f"Outcome file lacks columns {sorted(missing)}!")
        return cls(
            ids=frame["id"].to_numpy(dtype=np.int64),
            sampled=frame["sampled"].to_numpy().astype(bool),
            regular=frame["regular"].to_numpy().astype(bool),
            label=frame["label"].to_numpy(dtype=float),
            bonus_paid=frame["bonus_paid"].to_numpy(dtype=float),
            base_paid=frame["base_paid"].to_numpy(dtype=float),
            effort_used=frame["effort_used"].to_numpy(dtype=float),
        )

    def aligned_with(self, dataset: Dataset) -> bool:
        return len(self) == len(dataset) and np.array_equal(self.ids, dataset.ids)


def simulate_round(
        dataset: Dataset,
        design: SamplingDesign,
        model: Optional[EffortModel] = None,
        seed: int = 0,
        label_channel: str = "assisted",
        efforts: Optional[np.ndarray] = None
) -> RoundOutcomes:
    """
    Simulate one labelling round.

    Each instance is sampled with probability ``pi``. A sampled instance is a
    sentinel with probability ``rho``; there the AI output is forced to the
    wrong answer, otherwise the AI errs with probability ``ai_error_prob``.
    The agent catches and corrects an AI error with probability ``q(e)``;
    an uncorrected error is submitted as is. The bonus is paid on sentinels
    answered correctly and every sampled instance pays the overhead (the
    per-label cost for baseline designs).

    Parameters
    ----------
    dataset : Dataset
        The instances.
    design : SamplingDesign
        The design, aligned with the dataset.
    model : EffortModel, optional
        The agent's model; defaults to the design's.
    seed : int, optional
        Seed of the keyed random streams.
    label_channel : str, optional
        ``"assisted"`` (above) or ``"symmetric"``, where the label is correct
        with probability ``q(e)`` regardless of the AI.
    efforts : np.ndarray, optional
        Efforts overriding the design's best responses.

    Returns
    -------
    RoundOutcomes
        The outcomes, in dataset order.

    Raises
    ------
    DomainError
        If the design and the dataset have different sizes.
    """
    if design.n != len(dataset):
        raise DomainError(f"Design covers {design.n} instances but the dataset has {len(dataset)}!")
    if label_channel not in LABEL_CHANNELS:
        raise DomainError(f"Unknown label channel '{label_channel}'; choose from {LABEL_CHANNELS}!")
    model = design.model if model is None else model
    efforts = design.efforts if efforts is None else np.broadcast_to(np.asarray(efforts, dtype=float), design.pi.shape)
    q = np.asarray(model.q(efforts), dtype=float)

    ids = dataset.ids
    sampled = keyed_uniforms(seed, SAMPLING_DRAW, ids) < design.pi
    regular = sampled & (keyed_uniforms(seed, AUDIT_DRAW, ids) >= design.rho)
    sentinel = sampled & ~regular
    corrected = keyed_uniforms(seed, CORRECTION_DRAW, ids) < q

    if label_channel == "assisted":
        ai_errs = sentinel | (keyed_uniforms(seed, AI_ERROR_DRAW, ids) < dataset.ai_error_prob)
        correct = ~ai_errs | corrected
    else:
        correct = corrected
    label = np.where(correct, dataset.y_true, dataset.y_false)
    label = np.where(sampled, label, np.nan)

    bonus_paid = np.where(sentinel & correct, design.bonuses(), 0.0)
    per_label = design.scheme.w0 if design.is_sentinel else design.label_cost
    base_paid = np.where(sampled, per_label, 0.0)
    return RoundOutcomes(
        ids=ids.copy(),
        sampled=sampled,
        regular=regular,
        label=label,
        bonus_paid=bonus_paid,
        base_paid=base_paid,
        effort_used=np.array(efforts, dtype=float),
    )


def realized_cost(outcomes: RoundOutcomes, scheme: Optional[SentinelScheme] = None) -> float:
    """
    Money spent in a round.

    Paid bonuses and overheads, plus ``rho * k`` in the aggregate cost mode or
    ``k`` per sentinel task in the per-sentinel mode.
    """
    total = float(np.sum(outcomes.bonus_paid) + np.sum(outcomes.base_paid))
    if scheme is None:
        return total
    if scheme.cost_mode == "aggregate":
        return total + scheme.rho * scheme.k
    return total + scheme.k * outcomes.n_sentinels


def _read_raw_csv(filepath: Union[str, PathLike]) -> pd.DataFrame:
    try:
        return pd.read_csv(filepath, dtype=str, keep_default_na=False)
    except pd.errors.EmptyDataError as exc:
        raise ParseError(1, "the file holds no header") from exc
    except pd.errors.ParserError as exc:
        reason = str(exc).strip()
        # pandas numbers lines from 1 with the header included
        match = re.search(r"line (\d+)", reason)
        raise ParseError(int(match.group(1)) if match else 0, reason) from exc


def _numeric_column(frame: pd.DataFrame, column: str) -> np.ndarray:
    values = pd.to_numeric(frame[column], errors="coerce").to_numpy(dtype=float)
    bad = ~np.isfinite(values)
    if np.any(bad):
        position = int(np.flatnonzero(bad)[0])
        raise ParseError(position + 2, f"column '{column}' holds '{frame[column].iloc[position]}', not a finite number")
    return values


def ingest_csv(
        filepath: Union[str, PathLike],
        schema: Optional[dict[str, str]] = None,
        task: str = "binary"
) -> Dataset:
    """
    Read a dataset from a CSV file.

    Parameters
    ----------
    filepath : str or PathLike
        The file. Required columns: ``id``, ``prediction``, ``y_true``;
        optional: ``ai_error_prob``, ``y_false``, ``uncertainty``, ``group``.
    schema : dict[str, str], optional
        Maps these canonical names to the file's column names.
    task : str, optional
        ``"binary"`` or ``"continuous"``.

    Returns
    -------
    Dataset
        The validated dataset.

    Raises
    ------
    ParseError
        If a row is ragged or holds a non-numeric or out-of-range value; ``line`` counts the
        header as line 1.
    DataError
        If a required column is missing or the dataset breaks an invariant.
    """
    if task not in TASKS:
        raise DomainError(f"Unknown task '{task}'; choose from {TASKS}!")
    schema = dict(schema or {})
    frame = _read_raw_csv(filepath)
    renamed = {source: canonical for canonical, source in schema.items()}
    frame = frame.rename(columns=renamed)

    missing = [column for column in ("id", "prediction", "y_true") if column not in frame.columns]
    if missing:
        raise DataError(f"{filepath} lacks required columns {missing}!")

    ids = _numeric_column(frame, "id")
    prediction = _numeric_column(frame, "prediction")
    y_true = _numeric_column(frame, "y_true")
    if task == "binary":
        out_of_range = (prediction < 0) | (prediction > 1)
        if np.any(out_of_range):
            line = int(np.flatnonzero(out_of_range)[0]) + 2
            raise ParseError(line, f"binary prediction {prediction[line - 2]} lies outside [0, 1]")
        not_binary = ~np.isin(y_true, (0.0, 1.0))
        if np.any(not_binary):
            line = int(np.flatnonzero(not_binary)[0]) + 2
            raise ParseError(line, f"binary ground truth {y_true[line - 2]} is neither 0 nor 1")

    supplied, derived = ["id", "prediction", "y_true"], []
    if "y_false" in frame.columns:
        y_false = _numeric_column(frame, "y_false")
        supplied.append("y_false")
    elif task == "binary":
        y_false = 1.0 - y_true
        derived.append("y_false")
    else:
        raise DataError("Continuous tasks need a y_false column!")

    if "ai_error_prob" in frame.columns:
        ai_error_prob = _numeric_column(frame, "ai_error_prob")
        supplied.append("ai_error_prob")
    elif task == "binary":
        ai_error_prob = binary_error_probability(prediction, y_true)
        derived.append("ai_error_prob")
    else:
        raise DataError("Continuous tasks need an ai_error_prob column!")

    uncertainty = None
    if "uncertainty" in frame.columns and frame["uncertainty"].str.strip().ne("").any():
        uncertainty = _numeric_column(frame, "uncertainty")
        supplied.append("uncertainty")
    group = None
    if "group" in frame.columns:
        group = _numeric_column(frame, "group").astype(np.int64)
        supplied.append("group")

    if not np.all(np.mod(ids, 1) == 0):
        raise DataError("Instance ids must be integers!")
    dataset = Dataset(
        ids=ids.astype(np.int64),
        prediction=prediction,
        ai_error_prob=ai_error_prob,
        y_true=y_true,
        y_false=y_false,
        task=task,
        uncertainty=uncertainty,
        group=group,
        provenance={"source": str(filepath), "supplied": supplied, "derived": derived},
    )
    logger.info(
        "Ingested %d rows from %s; supplied columns %s, derived %s",
        len(dataset), filepath, supplied, derived
    )
    return dataset
