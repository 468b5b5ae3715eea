"""Finite discrete benchmark generator for domain-shift experiments.

A *family* fixes two mechanisms shared by all of its domains: how an
observation is rendered from a pair of latent indices (a causal index that
determines the label and a style index that does not), and how the label is
drawn from the causal index.  A *domain* is one joint distribution over the
latent pair.  Because the latents are finite, the best achievable test loss
on any domain can be computed exactly by enumeration, which is what makes
the optimality checks in this package possible.

Observations are rendered additively: a causal embedding row plus a style
embedding row plus isotropic Gaussian noise.  Embeddings are drawn once per
family and frozen, so the rendering mechanism is identical across domains.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.special import xlogy

from .validation import (
    PROB_FLOOR,
    ConfigError,
    check_index,
    check_probability_table,
    check_probability_vector,
    check_unit_interval,
    frozen_array,
)


class LatentPair(NamedTuple):
    causal_index: int
    style_index: int


@dataclass(frozen=True)
class FamilySpec:
    """Shared mechanisms: label distribution per causal value and the renderer."""

    num_causal: int
    num_style: int
    num_classes: int
    label_table: np.ndarray  # [num_causal, num_classes]
    causal_embed: np.ndarray  # [num_causal, obs_dim]
    style_embed: np.ndarray  # [num_style, obs_dim]
    noise_sigma: float
    obs_dim: int

    def __post_init__(self):
        object.__setattr__(self, "label_table", check_probability_table(self.label_table, "label_table"))
        object.__setattr__(self, "label_table", frozen_array(self.label_table, "label_table", ndim=2))
        object.__setattr__(self, "causal_embed", frozen_array(self.causal_embed, "causal_embed", ndim=2))
        object.__setattr__(self, "style_embed", frozen_array(self.style_embed, "style_embed", ndim=2))
        if self.obs_dim < 1:
            raise ConfigError(f"obs_dim must be >= 1, got {self.obs_dim}")
        if self.noise_sigma < 0:
            raise ConfigError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if self.label_table.shape != (self.num_causal, self.num_classes):
            raise ConfigError(
                f"label_table shape {self.label_table.shape} != ({self.num_causal}, {self.num_classes})"
            )
        if self.causal_embed.shape != (self.num_causal, self.obs_dim):
            raise ConfigError(
                f"causal_embed shape {self.causal_embed.shape} != ({self.num_causal}, {self.obs_dim})"
            )
        if self.style_embed.shape != (self.num_style, self.obs_dim):
            raise ConfigError(
                f"style_embed shape {self.style_embed.shape} != ({self.num_style}, {self.obs_dim})"
            )
        # Distinct causal rows: distinct causal values must render distinct
        # observations (up to noise), otherwise no predictor can separate them.
        for i in range(self.num_causal):
            for j in range(i + 1, self.num_causal):
                if np.array_equal(self.causal_embed[i], self.causal_embed[j]):
                    raise ConfigError(f"causal_embed rows {i} and {j} are identical")


@dataclass(frozen=True)
class DomainSpec:
    """One domain: a joint distribution over (causal index, style index)."""

    joint_table: np.ndarray  # [num_causal, num_style]

    def __post_init__(self):
        table = frozen_array(self.joint_table, "joint_table", ndim=2)
        if np.any(table < 0):
            raise ValueError("joint_table has negative entries")
        total = float(table.sum())
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"joint_table sums to {total!r}, expected 1 within 1e-12")
        object.__setattr__(self, "joint_table", table)

    @property
    def num_causal(self) -> int:
        return self.joint_table.shape[0]

    @property
    def num_style(self) -> int:
        return self.joint_table.shape[1]

    def causal_marginal(self) -> np.ndarray:
        return self.joint_table.sum(axis=1)


@dataclass(frozen=True)
class Example:
    """A sampled observation with its label and ground-truth latents.

    The latents are bookkeeping for the lab; prediction models never see them.
    """

    observation: np.ndarray
    label: int
    latents: LatentPair

    def __post_init__(self):
        object.__setattr__(self, "observation", frozen_array(self.observation, "observation", ndim=1))


@dataclass(frozen=True)
class SSPair:
    """A labeled semantic-sharing pair: an example and a re-rendered partner.

    At fidelity 1 the partner shares the causal index exactly; below 1 the
    causal index is corrupted with probability (1 - fidelity), emulating a
    lossy augmentation pipeline.  The label always equals the original's.
    """

    original: Example
    augmented_observation: np.ndarray
    label: int
    fidelity: float
    augmented_latents: LatentPair

    def __post_init__(self):
        object.__setattr__(
            self,
            "augmented_observation",
            frozen_array(self.augmented_observation, "augmented_observation", ndim=1),
        )
        if self.label != self.original.label:
            raise ValueError("pair label must equal the original example's label")
        if self.fidelity == 1.0 and self.augmented_latents.causal_index != self.original.latents.causal_index:
            raise ValueError("fidelity-1 pair must preserve the causal index")


@dataclass(frozen=True)
class InvariantPredictor:
    """A tabular predictor indexed by the causal value alone."""

    table: np.ndarray  # [num_causal, num_classes]

    def __post_init__(self):
        table = check_probability_table(self.table, "predictor table")
        object.__setattr__(self, "table", frozen_array(table, "predictor table", ndim=2))


class ExampleBatch(NamedTuple):
    observations: np.ndarray  # [n, obs_dim]
    labels: np.ndarray  # [n] int
    causal_indices: np.ndarray  # [n] int
    style_indices: np.ndarray  # [n] int

    def __len__(self) -> int:
        return self.labels.shape[0]

    def example(self, i: int) -> Example:
        return Example(
            observation=self.observations[i],
            label=int(self.labels[i]),
            latents=LatentPair(int(self.causal_indices[i]), int(self.style_indices[i])),
        )


def _check_dims(family: FamilySpec, domain: DomainSpec) -> None:
    if domain.joint_table.shape != (family.num_causal, family.num_style):
        raise ConfigError(
            f"domain joint_table shape {domain.joint_table.shape} does not match "
            f"family latents ({family.num_causal}, {family.num_style})"
        )


def _draw_labels(label_table: np.ndarray, causal: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    cdf = np.cumsum(label_table[causal], axis=1)
    u = rng.random(causal.shape[0])
    labels = (u[:, None] >= cdf).sum(axis=1)
    return np.minimum(labels, label_table.shape[1] - 1)


def sample_batch(family: FamilySpec, domain: DomainSpec, n: int, rng: np.random.Generator) -> ExampleBatch:
    """Draw ``n`` i.i.d. examples from the domain.

    Stream consumption order is fixed (latents, then noise, then labels) so a
    given seed always yields the same batch.
    """
    _check_dims(family, domain)
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    flat = rng.choice(family.num_causal * family.num_style, size=n, p=domain.joint_table.ravel())
    causal, style = np.divmod(flat, family.num_style)
    noise = rng.standard_normal((n, family.obs_dim))
    obs = family.causal_embed[causal] + family.style_embed[style] + family.noise_sigma * noise
    labels = _draw_labels(family.label_table, causal, rng)
    return ExampleBatch(obs, labels, causal, style)


def sample_example(family: FamilySpec, domain: DomainSpec, rng: np.random.Generator) -> Example:
    """Draw a single example (equivalent to ``sample_batch`` with n=1)."""
    return sample_batch(family, domain, 1, rng).example(0)


def make_ss_pair(
    family: FamilySpec,
    example: Example,
    fidelity: float,
    style_distribution,
    rng: np.random.Generator,
) -> SSPair:
    """Re-render an example with a fresh style to form a labeled pair.

    The new style index is drawn from ``style_distribution``.  With
    probability ``fidelity`` the causal index is preserved; otherwise it is
    re-drawn uniformly, corrupting the shared semantic content the way a
    low-quality augmentation would.  The label is always kept.
    """
    fidelity = check_unit_interval(fidelity, "fidelity")
    style_distribution = check_probability_vector(style_distribution, "style_distribution")
    if style_distribution.shape[0] != family.num_style:
        raise ValueError(
            f"style_distribution length {style_distribution.shape[0]} != num_style {family.num_style}"
        )
    new_style = int(rng.choice(family.num_style, p=style_distribution))
    keep = rng.random() < fidelity
    redraw = int(rng.integers(0, family.num_causal))
    new_causal = example.latents.causal_index if keep else redraw
    noise = rng.standard_normal(family.obs_dim)
    obs = family.causal_embed[new_causal] + family.style_embed[new_style] + family.noise_sigma * noise
    return SSPair(
        original=example,
        augmented_observation=obs,
        label=example.label,
        fidelity=fidelity,
        augmented_latents=LatentPair(new_causal, new_style),
    )


def bayes_oracle(family: FamilySpec, target: DomainSpec) -> float:
    """Minimal achievable cross-entropy on the target domain, in nats.

    Computed exactly by enumeration: the causal marginal weighted by the
    entropy of each causal value's label distribution.  Attained by the
    predictor that outputs the true label distribution for the causal value
    behind each observation.
    """
    _check_dims(family, target)
    marginal = target.causal_marginal()
    row_entropy = -xlogy(family.label_table, family.label_table).sum(axis=1)
    return float(marginal @ row_entropy)


def bayes_accuracy(family: FamilySpec, target: DomainSpec) -> float:
    """Best achievable accuracy when the causal value is identified exactly.

    An upper bound for observation-based models; exact 1.0 when the label
    table is deterministic.
    """
    _check_dims(family, target)
    marginal = target.causal_marginal()
    return float(marginal @ family.label_table.max(axis=1))


def invariant_predictor_ood_loss(
    family: FamilySpec, target: DomainSpec, predictor: InvariantPredictor
) -> float:
    """Cross-entropy on the target domain of a causal-value-indexed predictor.

    Never below ``bayes_oracle`` (Gibbs' inequality); equal when the
    predictor table matches the family's label table.  A 1e-12 floor inside
    the log keeps the value finite for predictors with zero entries.
    """
    _check_dims(family, target)
    if predictor.table.shape != family.label_table.shape:
        raise ConfigError(
            f"predictor table shape {predictor.table.shape} != {family.label_table.shape}"
        )
    marginal = target.causal_marginal()
    log_q = np.log(np.maximum(predictor.table, PROB_FLOOR))
    per_causal = -(family.label_table * log_q).sum(axis=1)
    return float(marginal @ per_causal)


def support_of(domain: DomainSpec) -> set[int]:
    """Causal indices with positive marginal probability."""
    marginal = domain.causal_marginal()
    return {int(i) for i in np.flatnonzero(marginal > 0)}


def check_support_condition(source: DomainSpec, target: DomainSpec) -> bool:
    """True iff every causal value seen in the target also occurs in the source."""
    if source.joint_table.shape != target.joint_table.shape:
        raise ConfigError(
            f"domain shapes differ: {source.joint_table.shape} vs {target.joint_table.shape}"
        )
    return support_of(target) <= support_of(source)


@dataclass(frozen=True)
class SpurCorrConfig:
    """Parameters of the default spurious-correlation benchmark.

    ``rho`` is the strength of the style-causal coupling in the source
    domain: each source latent pair uses the style index matching its causal
    index with probability ``rho`` and a uniform style otherwise.  The target
    domain has independent uniform styles, and the validation domain sits at
    ``rho_validation`` (half of ``rho`` unless given).

    ``style_scale`` sets how strongly style dominates the observation
    geometry relative to the causal embedding; large values make the
    spurious shortcut the path of least resistance for plain training.
    """

    rho: float
    num_causal: int = 5
    num_style: int = 5
    num_classes: int = 5
    obs_dim: int = 20
    noise_sigma: float = 0.1
    rho_validation: float | None = None
    label_noise: float = 0.0
    separation_factor: float = 10.0
    causal_scale: float = 1.0
    style_scale: float = 6.0

    def __post_init__(self):
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError(f"rho must lie in [0, 1], got {self.rho!r}")
        if self.rho_validation is not None and not 0.0 <= self.rho_validation <= 1.0:
            raise ValueError(f"rho_validation must lie in [0, 1], got {self.rho_validation!r}")
        if not 0.0 <= self.label_noise <= 1.0:
            raise ValueError(f"label_noise must lie in [0, 1], got {self.label_noise!r}")
        for name in ("num_causal", "num_style", "num_classes", "obs_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if self.causal_scale <= 0 or self.style_scale <= 0:
            raise ValueError("causal_scale and style_scale must be > 0")

    @property
    def effective_rho_validation(self) -> float:
        return self.rho / 2.0 if self.rho_validation is None else self.rho_validation


@dataclass(frozen=True)
class Benchmark:
    family: FamilySpec
    source: DomainSpec
    validation: DomainSpec
    target: DomainSpec


_EMBED_ATTEMPTS = 1000


def _draw_separated_embeddings(
    num_rows: int, obs_dim: int, min_distance: float, rng: np.random.Generator
) -> np.ndarray:
    for _ in range(_EMBED_ATTEMPTS):
        embed = rng.standard_normal((num_rows, obs_dim))
        diffs = embed[:, None, :] - embed[None, :, :]
        dist = np.sqrt((diffs**2).sum(axis=2))
        dist[np.diag_indices(num_rows)] = np.inf
        if dist.min() >= min_distance:
            return embed
    raise ConfigError(
        f"could not draw {num_rows} embedding rows with pairwise distance >= {min_distance} "
        f"in {_EMBED_ATTEMPTS} attempts; reduce noise_sigma or separation_factor"
    )


def _coupled_joint(config: SpurCorrConfig, rho: float) -> DomainSpec:
    k, s = config.num_causal, config.num_style
    table = np.full((k, s), (1.0 - rho) / s)
    for i in range(k):
        table[i, i % s] += rho
    table /= k
    table /= table.sum()
    return DomainSpec(joint_table=table)


def make_spurcorr_family(config: SpurCorrConfig, rng: np.random.Generator) -> Benchmark:
    """Instantiate the spurious-correlation benchmark.

    The causal marginal is uniform in every domain, so the support condition
    between source and target holds by construction.  Causal embedding rows
    are rejection-sampled until their minimum pairwise distance is at least
    ``separation_factor * noise_sigma``, keeping distinct causal values
    distinguishable despite observation noise.
    """
    k, s, c = config.num_causal, config.num_style, config.num_classes
    min_distance = config.separation_factor * config.noise_sigma / config.causal_scale
    causal_embed = config.causal_scale * _draw_separated_embeddings(k, config.obs_dim, min_distance, rng)
    style_embed = config.style_scale * rng.standard_normal((s, config.obs_dim))

    label_table = np.full((k, c), config.label_noise / c)
    for i in range(k):
        label_table[i, i % c] += 1.0 - config.label_noise
    label_table /= label_table.sum(axis=1, keepdims=True)

    family = FamilySpec(
        num_causal=k,
        num_style=s,
        num_classes=c,
        label_table=label_table,
        causal_embed=causal_embed,
        style_embed=style_embed,
        noise_sigma=config.noise_sigma,
        obs_dim=config.obs_dim,
    )
    source = _coupled_joint(config, config.rho)
    validation = _coupled_joint(config, config.effective_rho_validation)
    target = _coupled_joint(config, 0.0)
    return Benchmark(family=family, source=source, validation=validation, target=target)


def uniform_style_distribution(family: FamilySpec) -> np.ndarray:
    return np.full(family.num_style, 1.0 / family.num_style)


__all__ = [
    "Benchmark",
    "DomainSpec",
    "Example",
    "ExampleBatch",
    "FamilySpec",
    "InvariantPredictor",
    "LatentPair",
    "SSPair",
    "SpurCorrConfig",
    "bayes_accuracy",
    "bayes_oracle",
    "check_support_condition",
    "invariant_predictor_ood_loss",
    "make_spurcorr_family",
    "make_ss_pair",
    "sample_batch",
    "sample_example",
    "support_of",
    "uniform_style_distribution",
]
