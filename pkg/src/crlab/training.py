"""Training harness: method dispatch, two batch streams, tuning, run records.

Three method families share one estimator:

* ``erm`` trains on source examples alone;
* ``erm_da`` re-renders a fraction of the training examples with fresh styles
  and adds the results to the labeled set;
* ``cr:<kind>`` keeps the re-rendered examples paired with their originals
  and trains the combined objective with penalty ``<kind>``.

An epoch is always ``ceil(train_size / example_batch_size)`` steps, counted
against the source set even when extra augmented examples enlarge the
labeled pool, so per-epoch optimization effort is comparable across methods.

Every random draw of a run derives from ``config.seed`` through numbered
sub-streams of a ``numpy.random.SeedSequence`` (see ``STREAM_*`` below), so a
(config, seed) pair fully determines every recorded number.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .cld import (
    Benchmark,
    DomainSpec,
    FamilySpec,
    bayes_accuracy,
    bayes_oracle,
    make_ss_pair,
    sample_batch,
    uniform_style_distribution,
)
from .estimator import PairConsistencyClassifier
from .metrics import cross_entropy_and_accuracy, invariance_score, macro_f1
from .network import ModelParams, forward, sgd_step  # noqa: F401  (sgd_step is part of this module's surface)
from .penalties import VALID_KINDS
from .validation import PROB_FLOOR, ConfigError

# Sub-stream indices of a run seed: one SeedSequence(seed, spawn_key=(k,)) per
# purpose.  STREAM_MODEL is handed to the estimator, which splits it further
# into init / labeled-batch / pair-batch streams.
STREAM_DATA = 0
STREAM_AUGMENT = 1
STREAM_MODEL = 2
STREAM_EVAL = 3

METHODS = ("erm", "erm_da") + tuple(f"cr:{kind}" for kind in VALID_KINDS)

CSV_COLUMNS = (
    "epoch",
    "train_ce",
    "id_ce",
    "id_acc",
    "ood_ce",
    "ood_acc",
    "ood_macro_f1",
    "invariance_score",
    "regret",
)


def _stream(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))


@dataclass(frozen=True)
class TrainConfig:
    """Everything that defines a run besides the benchmark itself."""

    method: str
    lam: float = 0.0
    epochs: int = 50
    learning_rate: float = 0.05
    example_batch_size: int = 64
    pair_batch_size: int = 64
    lp_epochs: int = 0
    lp_learning_rate: float | None = None
    seed: int = 0
    pair_fraction: float = 1.0
    fidelity: float = 1.0
    train_size: int = 400
    eval_size: int = 2000
    invariance_pairs: int = 500
    hidden_units: int = 64
    feature_units: int = 32
    init_scale: float = 0.05
    momentum: float = 0.9
    detach_augmented: bool = False
    early_stop: bool = False

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(
                f"unknown method {self.method!r}; valid methods: {', '.join(METHODS)}"
            )
        if self.lam < 0:
            raise ConfigError(f"lam must be >= 0, got {self.lam!r}")
        if self.epochs < 1 or self.lp_epochs < 0:
            raise ConfigError("epochs must be >= 1 and lp_epochs >= 0")
        if self.example_batch_size < 1 or self.pair_batch_size < 1:
            raise ConfigError("batch sizes must be >= 1")
        if not 0.0 < self.pair_fraction <= 1.0:
            raise ConfigError(f"pair_fraction must lie in (0, 1], got {self.pair_fraction!r}")
        if not 0.0 <= self.fidelity <= 1.0:
            raise ConfigError(f"fidelity must lie in [0, 1], got {self.fidelity!r}")
        if self.train_size < 1 or self.eval_size < 1 or self.invariance_pairs < 1:
            raise ConfigError("train_size, eval_size and invariance_pairs must be >= 1")
        if self.learning_rate <= 0 or (self.lp_learning_rate is not None and self.lp_learning_rate <= 0):
            raise ConfigError("learning rates must be > 0")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must lie in [0, 1), got {self.momentum!r}")

    @property
    def kind(self) -> str | None:
        return self.method.split(":", 1)[1] if self.method.startswith("cr:") else None

    @property
    def is_cr(self) -> bool:
        return self.kind is not None

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        if "method" not in raw:
            raise ConfigError("train config requires a 'method' field")
        try:
            return cls(**raw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


@dataclass(frozen=True)
class EpochRow:
    epoch: int
    train_ce: float
    id_ce: float
    id_acc: float
    ood_ce: float
    ood_acc: float
    ood_macro_f1: float
    invariance_score: float
    regret: float


def _fmt(x: float) -> str:
    return format(float(x), ".10g")


@dataclass
class RunRecord:
    """Per-epoch metric rows, final summary, config echo and final weights."""

    rows: list[EpochRow]
    val_accuracy: list[float]
    summary: dict
    config: dict
    seed: int
    final_params: ModelParams

    def to_csv_text(self) -> str:
        lines = [",".join(CSV_COLUMNS)]
        for row in self.rows:
            lines.append(
                ",".join(
                    [str(row.epoch)]
                    + [
                        _fmt(getattr(row, col))
                        for col in CSV_COLUMNS[1:]
                    ]
                )
            )
        return "\n".join(lines) + "\n"

    def echo_dict(self) -> dict:
        return {"seed": self.seed, "config": self.config, "summary": self.summary}


def _build_pairs(family, batch, config: TrainConfig, rng: np.random.Generator):
    """Re-render a pair_fraction subset of the batch at the configured fidelity."""
    n = len(batch)
    k = min(n, max(1, round(config.pair_fraction * n)))
    indices = np.sort(rng.choice(n, size=k, replace=False))
    styles = uniform_style_distribution(family)
    pairs = [
        make_ss_pair(family, batch.example(int(i)), config.fidelity, styles, rng)
        for i in indices
    ]
    originals = batch.observations[indices]
    augmented = np.stack([p.augmented_observation for p in pairs])
    labels = batch.labels[indices]
    return originals, augmented, labels


def train(
    family: FamilySpec,
    source: DomainSpec,
    validation: DomainSpec,
    target: DomainSpec,
    config: TrainConfig,
) -> RunRecord:
    """Run one configured training and record per-epoch ID/OOD metrics.

    Evaluation sets (held-out ID, OOD, validation samples and fidelity-1
    invariance pairs) are drawn once per run from the eval stream so the
    per-epoch rows are comparable along the trajectory.
    """
    data_rng = _stream(config.seed, STREAM_DATA)
    augment_rng = _stream(config.seed, STREAM_AUGMENT)
    eval_rng = _stream(config.seed, STREAM_EVAL)
    model_seed = np.random.SeedSequence(config.seed, spawn_key=(STREAM_MODEL,))

    train_batch = sample_batch(family, source, config.train_size, data_rng)

    pair_arrays = None
    if config.method != "erm":
        pair_arrays = _build_pairs(family, train_batch, config, augment_rng)

    if config.method == "erm_da":
        x_fit = np.concatenate([train_batch.observations, pair_arrays[1]])
        y_fit = np.concatenate([train_batch.labels, pair_arrays[2]])
        fit_pairs = None
        reg_kind, lam = None, 0.0
    elif config.is_cr:
        x_fit, y_fit = train_batch.observations, train_batch.labels
        fit_pairs = pair_arrays
        reg_kind, lam = config.kind, config.lam
    else:
        x_fit, y_fit = train_batch.observations, train_batch.labels
        fit_pairs = None
        reg_kind, lam = None, 0.0

    id_eval = sample_batch(family, source, config.eval_size, eval_rng)
    ood_eval = sample_batch(family, target, config.eval_size, eval_rng)
    val_eval = sample_batch(family, validation, config.eval_size, eval_rng)
    styles = uniform_style_distribution(family)
    inv_base = sample_batch(family, source, config.invariance_pairs, eval_rng)
    inv_pairs = [
        make_ss_pair(family, inv_base.example(i), 1.0, styles, eval_rng)
        for i in range(len(inv_base))
    ]

    oracle_ce = bayes_oracle(family, target)
    rows: list[EpochRow] = []
    val_accuracy: list[float] = []
    snapshots: list[ModelParams] = []

    steps_per_epoch = -(-config.train_size // config.example_batch_size)
    estimator = PairConsistencyClassifier(
        reg_kind=reg_kind,
        lam=lam,
        epochs=config.epochs,
        learning_rate=config.learning_rate,
        batch_size=config.example_batch_size,
        pair_batch_size=config.pair_batch_size,
        steps_per_epoch=steps_per_epoch,
        lp_epochs=config.lp_epochs,
        lp_learning_rate=config.lp_learning_rate,
        hidden_units=config.hidden_units,
        feature_units=config.feature_units,
        init_scale=config.init_scale,
        momentum=config.momentum,
        detach_augmented=config.detach_augmented,
        n_classes=family.num_classes,
        random_state=model_seed,
    )

    def record_epoch(est, epoch, phase):
        params = est.params_
        id_ce, id_acc = cross_entropy_and_accuracy(params, id_eval.observations, id_eval.labels)
        ood_probs = forward(params, ood_eval.observations).probabilities
        ood_pred = np.argmax(ood_probs, axis=1)
        picked = ood_probs[np.arange(len(ood_eval)), ood_eval.labels]
        ood_ce = float(-np.log(np.maximum(picked, PROB_FLOOR)).mean())
        ood_acc = float((ood_pred == ood_eval.labels).mean())
        ood_f1 = macro_f1(ood_pred, ood_eval.labels, family.num_classes)
        _, val_acc = cross_entropy_and_accuracy(params, val_eval.observations, val_eval.labels)
        rows.append(
            EpochRow(
                epoch=epoch,
                train_ce=est.ce_curve_[-1],
                id_ce=id_ce,
                id_acc=id_acc,
                ood_ce=ood_ce,
                ood_acc=ood_acc,
                ood_macro_f1=ood_f1,
                invariance_score=invariance_score(params, inv_pairs),
                regret=ood_ce - oracle_ce,
            )
        )
        val_accuracy.append(val_acc)
        if config.early_stop:
            snapshots.append(params)

    estimator.fit(x_fit, y_fit, pairs=fit_pairs, epoch_hook=record_epoch)

    if config.early_stop:
        chosen = int(np.argmax(val_accuracy))
        final_params = snapshots[chosen]
    else:
        chosen = len(rows) - 1
        final_params = estimator.params_

    final = rows[chosen]
    summary = {
        "method": config.method,
        "lam": config.lam if config.is_cr else 0.0,
        "chosen_epoch": final.epoch,
        "train_ce": final.train_ce,
        "id_ce": final.id_ce,
        "id_acc": final.id_acc,
        "ood_ce": final.ood_ce,
        "ood_acc": final.ood_acc,
        "ood_macro_f1": final.ood_macro_f1,
        "invariance_score": final.invariance_score,
        "regret": final.regret,
        "val_acc": val_accuracy[chosen],
        "oracle_ce": oracle_ce,
        "oracle_acc": bayes_accuracy(family, target),
        "num_pairs": 0 if pair_arrays is None else int(pair_arrays[0].shape[0]),
        "steps_per_epoch": estimator.steps_per_epoch_,
        "lambda_applies_in_lp": True,
    }
    config_echo = config.to_dict()
    return RunRecord(
        rows=rows,
        val_accuracy=val_accuracy,
        summary=summary,
        config=config_echo,
        seed=config.seed,
        final_params=final_params,
    )


class TuneResult(NamedTuple):
    best_lam: float
    results: list[dict]


def tune_lambda(
    family: FamilySpec,
    source: DomainSpec,
    validation: DomainSpec,
    config: TrainConfig,
    grid,
) -> TuneResult:
    """Train once per grid value and pick the weight with the best validation
    accuracy (ties go to the smaller weight).

    Grid point ``i`` runs with seed ``config.seed + i``; tuning runs treat the
    validation domain as their held-out domain, so the target domain is never
    consulted.
    """
    grid = [float(g) for g in grid]
    if not grid:
        raise ConfigError("lambda grid must be non-empty")
    results = []
    for i, lam in enumerate(grid):
        cfg = dataclasses.replace(config, lam=lam, seed=config.seed + i)
        record = train(family, source, validation, validation, cfg)
        results.append(
            {
                "lam": lam,
                "seed": cfg.seed,
                "val_acc": record.summary["ood_acc"],
                "val_ce": record.summary["ood_ce"],
                "val_macro_f1": record.summary["ood_macro_f1"],
            }
        )
    best = max(results, key=lambda r: (r["val_acc"], -r["lam"]))
    return TuneResult(best_lam=best["lam"], results=results)


class CellRun(NamedTuple):
    record: RunRecord
    lam: float
    tuning: list[dict]


def train_with_tuning(benchmark: Benchmark, config: TrainConfig, grid=None) -> CellRun:
    """Full protocol for one run: tune the penalty weight if a grid is given
    (CR methods only), then train against the target domain."""
    if config.is_cr and grid is not None and len(grid) > 0:
        best_lam, results = tune_lambda(
            benchmark.family, benchmark.source, benchmark.validation, config, grid
        )
        final_cfg = dataclasses.replace(config, lam=best_lam)
    else:
        best_lam, results = config.lam, []
        final_cfg = config
    record = train(
        benchmark.family, benchmark.source, benchmark.validation, benchmark.target, final_cfg
    )
    return CellRun(record=record, lam=best_lam, tuning=results)


DEFAULT_LAMBDA_GRID = (0.05, 0.1, 0.5, 1.0, 5.0, 10.0)

__all__ = [
    "CSV_COLUMNS",
    "CellRun",
    "DEFAULT_LAMBDA_GRID",
    "EpochRow",
    "METHODS",
    "RunRecord",
    "STREAM_AUGMENT",
    "STREAM_DATA",
    "STREAM_EVAL",
    "STREAM_MODEL",
    "TrainConfig",
    "TuneResult",
    "sgd_step",
    "train",
    "train_with_tuning",
    "tune_lambda",
]
