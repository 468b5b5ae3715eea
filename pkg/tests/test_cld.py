import math

import numpy as np
import pytest

from crlab.cld import (
    DomainSpec,
    FamilySpec,
    InvariantPredictor,
    SpurCorrConfig,
    bayes_accuracy,
    bayes_oracle,
    check_support_condition,
    invariant_predictor_ood_loss,
    make_spurcorr_family,
    make_ss_pair,
    sample_batch,
    sample_example,
    support_of,
    uniform_style_distribution,
)
from crlab.validation import ConfigError

from conftest import random_domain, random_family, rng


class TestSpecValidation:
    def test_label_table_rows_must_normalize(self):
        bad = np.array([[0.5, 0.4], [0.5, 0.5]])
        with pytest.raises(ValueError):
            FamilySpec(2, 2, 2, bad, np.eye(2), np.eye(2), 0.1, 2)

    def test_label_table_rows_must_be_nonnegative(self):
        bad = np.array([[1.5, -0.5], [0.5, 0.5]])
        with pytest.raises(ValueError):
            FamilySpec(2, 2, 2, bad, np.eye(2), np.eye(2), 0.1, 2)

    def test_negative_noise_rejected(self):
        with pytest.raises(ValueError):
            FamilySpec(2, 2, 2, np.eye(2), np.eye(2), np.eye(2), -0.1, 2)

    def test_duplicate_causal_rows_rejected(self):
        dup = np.array([[1.0, 0.0], [1.0, 0.0]])
        with pytest.raises(ValueError):
            FamilySpec(2, 2, 2, np.eye(2), dup, np.eye(2), 0.1, 2)

    def test_domain_table_must_normalize(self):
        with pytest.raises(ValueError):
            DomainSpec(joint_table=np.full((2, 2), 0.3))
        with pytest.raises(ValueError):
            DomainSpec(joint_table=np.array([[0.8, 0.4], [-0.1, -0.1]]))

    def test_dimension_mismatch_is_config_error(self, tiny_family):
        wrong = DomainSpec(joint_table=np.full((2, 2), 0.25))
        with pytest.raises(ConfigError):
            sample_example(tiny_family, wrong, rng())

    def test_tables_are_read_only(self, tiny_family, uniform_domain_3x2):
        with pytest.raises(ValueError):
            tiny_family.label_table[0, 0] = 0.5
        with pytest.raises(ValueError):
            uniform_domain_3x2.joint_table[0, 0] = 0.5


class TestSampling:
    def test_zero_noise_observation_is_embedding_sum(self, tiny_family, uniform_domain_3x2):
        ex = sample_example(tiny_family, uniform_domain_3x2, rng(3))
        expected = (
            tiny_family.causal_embed[ex.latents.causal_index]
            + tiny_family.style_embed[ex.latents.style_index]
        )
        assert np.array_equal(ex.observation, expected)
        # identity label table: label equals the causal index exactly
        assert ex.label == ex.latents.causal_index

    def test_point_mass_latents(self, tiny_family):
        table = np.zeros((3, 2))
        table[2, 1] = 1.0
        domain = DomainSpec(joint_table=table)
        r = rng(5)
        for _ in range(20):
            ex = sample_example(tiny_family, domain, r)
            assert ex.latents == (2, 1)

    def test_uniform_latent_frequencies_within_three_sigma(self):
        r = rng(11)
        family = random_family(r)
        domain = DomainSpec(joint_table=np.full((5, 5), 0.04))
        n = 10_000
        batch = sample_batch(family, domain, n, rng(12))
        counts = np.bincount(batch.causal_indices * 5 + batch.style_indices, minlength=25)
        p = 0.04
        sigma = math.sqrt(n * p * (1 - p))
        assert np.all(np.abs(counts - n * p) <= 3 * sigma)

    def test_same_seed_yields_identical_sequences(self, tiny_family, uniform_domain_3x2):
        r1, r2 = rng(7), rng(7)
        for _ in range(5):
            a = sample_example(tiny_family, uniform_domain_3x2, r1)
            b = sample_example(tiny_family, uniform_domain_3x2, r2)
            assert a.latents == b.latents and a.label == b.label
            assert np.array_equal(a.observation, b.observation)

    def test_batch_matches_scalar_path(self, tiny_family, uniform_domain_3x2):
        batch = sample_batch(tiny_family, uniform_domain_3x2, 1, rng(9))
        single = sample_example(tiny_family, uniform_domain_3x2, rng(9))
        assert np.array_equal(batch.observations[0], single.observation)
        assert batch.labels[0] == single.label


class TestSSPairs:
    def test_full_fidelity_preserves_causal_index(self, tiny_family, uniform_domain_3x2):
        r = rng(21)
        styles = uniform_style_distribution(tiny_family)
        for _ in range(1000):
            ex = sample_example(tiny_family, uniform_domain_3x2, r)
            pair = make_ss_pair(tiny_family, ex, 1.0, styles, r)
            assert pair.augmented_latents.causal_index == ex.latents.causal_index
            assert pair.label == ex.label

    def test_zero_fidelity_matches_uniform_rate(self):
        r = rng(22)
        family = random_family(r, num_causal=5)
        domain = random_domain(rng(23), 5, 5)
        styles = uniform_style_distribution(family)
        draws = 10_000
        batch = sample_batch(family, domain, draws, rng(24))
        pair_rng = rng(25)
        matches = 0
        for i in range(draws):
            pair = make_ss_pair(family, batch.example(i), 0.0, styles, pair_rng)
            matches += pair.augmented_latents.causal_index == batch.causal_indices[i]
        p = 1.0 / 5.0
        sigma = math.sqrt(draws * p * (1 - p))
        assert abs(matches - draws * p) <= 3 * sigma

    def test_identity_augmentation_is_exact(self, tiny_family, uniform_domain_3x2):
        ex = sample_example(tiny_family, uniform_domain_3x2, rng(31))
        point_mass = np.zeros(tiny_family.num_style)
        point_mass[ex.latents.style_index] = 1.0
        pair = make_ss_pair(tiny_family, ex, 1.0, point_mass, rng(32))
        assert np.array_equal(pair.augmented_observation, ex.observation)

    def test_fidelity_out_of_range_rejected(self, tiny_family, uniform_domain_3x2):
        ex = sample_example(tiny_family, uniform_domain_3x2, rng(33))
        styles = uniform_style_distribution(tiny_family)
        with pytest.raises(ValueError):
            make_ss_pair(tiny_family, ex, 1.5, styles, rng(34))
        with pytest.raises(ValueError):
            make_ss_pair(tiny_family, ex, -0.1, styles, rng(34))


class TestOracle:
    def test_deterministic_labels_have_zero_oracle(self, tiny_family, uniform_domain_3x2):
        assert bayes_oracle(tiny_family, uniform_domain_3x2) == 0.0
        assert bayes_accuracy(tiny_family, uniform_domain_3x2) == 1.0

    def test_uniform_labels_give_log_num_classes(self):
        r = rng(41)
        family = random_family(r, num_classes=4)
        family = FamilySpec(
            family.num_causal,
            family.num_style,
            4,
            np.full((family.num_causal, 4), 0.25),
            family.causal_embed,
            family.style_embed,
            family.noise_sigma,
            family.obs_dim,
        )
        domain = random_domain(rng(42))
        assert bayes_oracle(family, domain) == pytest.approx(math.log(4), abs=1e-12)

    def test_binary_entropy_value(self):
        # 0.9*ln(1/0.9) + 0.1*ln(1/0.1), computed independently from the
        # entropy formula before being frozen here
        family = FamilySpec(
            2,
            2,
            2,
            np.array([[0.9, 0.1], [0.9, 0.1]]),
            np.array([[1.0, 0.0], [0.0, 1.0]]),
            np.zeros((2, 2)) + np.array([[0.1, 0.0], [0.0, 0.1]]),
            0.0,
            2,
        )
        domain = DomainSpec(joint_table=np.full((2, 2), 0.25))
        assert bayes_oracle(family, domain) == pytest.approx(0.3250829733914483, abs=1e-9)

    def test_truth_predictor_attains_oracle(self):
        r = rng(43)
        family = random_family(r)
        domain = random_domain(rng(44))
        loss = invariant_predictor_ood_loss(family, domain, InvariantPredictor(family.label_table))
        assert loss == pytest.approx(bayes_oracle(family, domain), abs=1e-12)

    def test_uniform_predictor_loss(self):
        r = rng(45)
        family = random_family(r, num_classes=4)
        domain = random_domain(rng(46))
        uniform = InvariantPredictor(np.full((5, 4), 0.25))
        assert invariant_predictor_ood_loss(family, domain, uniform) == pytest.approx(
            math.log(4), abs=1e-12
        )

    def test_no_predictor_beats_oracle(self):
        r = rng(47)
        family = random_family(r)
        domain = random_domain(rng(48))
        oracle = bayes_oracle(family, domain)
        for _ in range(1000):
            q = InvariantPredictor(r.dirichlet(np.ones(5), size=5))
            assert invariant_predictor_ood_loss(family, domain, q) >= oracle - 1e-12


class TestSupport:
    def test_uniform_domain_has_full_support(self, uniform_domain_3x2):
        assert support_of(uniform_domain_3x2) == {0, 1, 2}

    def test_zero_row_excluded(self):
        table = np.full((4, 2), 1.0 / 6.0)
        table[3] = 0.0
        assert support_of(DomainSpec(joint_table=table)) == {0, 1, 2}

    def test_matches_bruteforce_marginalization(self):
        r = rng(51)
        for _ in range(20):
            domain = random_domain(r, 6, 4, sparsity=0.6)
            brute = set()
            for i in range(6):
                total = 0.0
                for j in range(4):
                    total += domain.joint_table[i, j]
                if total > 0:
                    brute.add(i)
            assert support_of(domain) == brute

    def test_support_condition_cases(self):
        def domain_with_rows(rows):
            table = np.zeros((5, 2))
            for row in rows:
                table[row] = 1.0
            return DomainSpec(joint_table=table / table.sum())

        source = domain_with_rows([0, 1, 2])
        assert check_support_condition(source, source)
        assert check_support_condition(source, domain_with_rows([0, 1]))
        assert not check_support_condition(source, domain_with_rows([0, 4]))


class TestSpurCorrBenchmark:
    def test_rho_one_source_is_diagonal(self):
        bench = make_spurcorr_family(SpurCorrConfig(rho=1.0), rng(61))
        table = bench.source.joint_table
        off_diag = table - np.diag(np.diag(table))
        assert np.all(off_diag == 0)
        assert np.allclose(np.diag(table), 0.2)

    def test_rho_zero_source_is_uniform(self):
        bench = make_spurcorr_family(SpurCorrConfig(rho=0.0), rng(62))
        assert np.allclose(bench.source.joint_table, 1.0 / 25.0)

    def test_target_is_style_independent(self):
        bench = make_spurcorr_family(SpurCorrConfig(rho=0.9), rng(63))
        assert np.allclose(bench.target.joint_table, 1.0 / 25.0)

    def test_support_condition_holds_by_construction(self):
        for rho in (0.0, 0.5, 0.95, 1.0):
            bench = make_spurcorr_family(SpurCorrConfig(rho=rho), rng(64))
            assert check_support_condition(bench.source, bench.target)

    def test_invalid_rho_rejected(self):
        with pytest.raises(ValueError):
            SpurCorrConfig(rho=1.2)
        with pytest.raises(ValueError):
            SpurCorrConfig(rho=-0.1)

    def test_causal_embeddings_respect_separation_margin(self):
        config = SpurCorrConfig(rho=0.5, noise_sigma=0.3)
        bench = make_spurcorr_family(config, rng(65))
        embed = bench.family.causal_embed
        dists = [
            np.linalg.norm(embed[i] - embed[j])
            for i in range(len(embed))
            for j in range(i + 1, len(embed))
        ]
        assert min(dists) >= config.separation_factor * config.noise_sigma

    def test_generation_is_deterministic(self):
        a = make_spurcorr_family(SpurCorrConfig(rho=0.8), rng(66))
        b = make_spurcorr_family(SpurCorrConfig(rho=0.8), rng(66))
        assert np.array_equal(a.family.causal_embed, b.family.causal_embed)
        assert np.array_equal(a.family.style_embed, b.family.style_embed)
        assert np.array_equal(a.source.joint_table, b.source.joint_table)

    def test_validation_sits_between_source_and_target(self):
        bench = make_spurcorr_family(SpurCorrConfig(rho=0.9), rng(67))
        # coupling strength shows up as the diagonal mass of the joint table
        diag = lambda d: np.trace(d.joint_table)
        assert diag(bench.target) < diag(bench.validation) < diag(bench.source)
