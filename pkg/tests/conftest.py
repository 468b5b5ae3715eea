import numpy as np
import pytest

from crlab.cld import DomainSpec, FamilySpec


def rng(seed=0):
    return np.random.default_rng(np.random.SeedSequence(seed))


@pytest.fixture
def tiny_family():
    """3 causal x 2 style values, 3 classes, 4 observation dims, no noise."""
    return FamilySpec(
        num_causal=3,
        num_style=2,
        num_classes=3,
        label_table=np.eye(3),
        causal_embed=np.array(
            [[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0]]
        ),
        style_embed=np.array([[0.0, 0.0, 0.0, 0.5], [0.0, 0.0, 0.0, -0.5]]),
        noise_sigma=0.0,
        obs_dim=4,
    )


@pytest.fixture
def uniform_domain_3x2():
    return DomainSpec(joint_table=np.full((3, 2), 1.0 / 6.0))


def random_family(r, num_causal=5, num_style=5, num_classes=5, obs_dim=6, noise_sigma=0.1):
    """Random family with Dirichlet label rows and well-separated embeddings."""
    label_table = r.dirichlet(np.ones(num_classes), size=num_causal)
    return FamilySpec(
        num_causal=num_causal,
        num_style=num_style,
        num_classes=num_classes,
        label_table=label_table,
        causal_embed=3.0 * r.standard_normal((num_causal, obs_dim)),
        style_embed=r.standard_normal((num_style, obs_dim)),
        noise_sigma=noise_sigma,
        obs_dim=obs_dim,
    )


def random_domain(r, num_causal=5, num_style=5, sparsity=0.0):
    table = r.random((num_causal, num_style))
    if sparsity > 0:
        table *= r.random((num_causal, num_style)) > sparsity
        if table.sum() == 0:
            table[0, 0] = 1.0
    return DomainSpec(joint_table=table / table.sum())
