import math

import numpy as np
import pytest

from swd_engine.core import InvalidArgumentError, new_fully_masked, state_from_tokens
from swd_engine.denoiser import MarkovModel
from swd_engine.verify import (
    CorpusResult,
    check_lemma1,
    check_theorem1,
    conditional_mi,
    enumerate_joint,
    run_verification_corpus,
)


def symmetric_chain(p_same=0.8):
    return MarkovModel(
        initial=np.array([0.5, 0.5]),
        transition=np.array([[p_same, 1 - p_same], [1 - p_same, p_same]]),
    )


def product_model(K=2):
    # Transition rows all equal to the initial: positions are independent.
    init = np.linspace(1, K, K)
    init = init / init.sum()
    return MarkovModel(initial=init, transition=np.tile(init, (K, 1)))


class TestEnumerateJoint:
    def test_single_position_is_initial(self):
        j = enumerate_joint(symmetric_chain(), 1)
        np.testing.assert_allclose(j.table, [0.5, 0.5], atol=1e-15)

    def test_two_positions_hand_values(self):
        j = enumerate_joint(symmetric_chain(0.8), 2)
        np.testing.assert_allclose(
            j.table, [[0.4, 0.1], [0.1, 0.4]], atol=1e-15
        )

    def test_sums_to_one_random_models(self):
        for seed in range(5):
            m = MarkovModel.random(3, seed=seed)
            j = enumerate_joint(m, 5)
            assert abs(float(j.table.sum()) - 1.0) < 1e-10

    def test_size_cap(self):
        m = MarkovModel.random(6, seed=0)
        with pytest.raises(InvalidArgumentError):
            enumerate_joint(m, 12)

    def test_condition_slices_and_normalizes(self):
        j = enumerate_joint(symmetric_chain(0.8), 2)
        cond = j.condition({0: 0})
        np.testing.assert_allclose(cond, [0.8, 0.2], atol=1e-12)


class TestConditionalMI:
    def test_independence_gives_zero(self):
        j = enumerate_joint(product_model(3), 4)
        assert conditional_mi(j, 0, [2]) == pytest.approx(0.0, abs=1e-12)

    def test_adjacent_pair_matches_binary_entropy_formula(self):
        j = enumerate_joint(symmetric_chain(0.8), 2)
        expected = math.log(2) - (-(0.8 * math.log(0.8) + 0.2 * math.log(0.2)))
        assert conditional_mi(j, 0, [1]) == pytest.approx(expected, abs=1e-12)
        assert expected == pytest.approx(0.192745, abs=1e-6)

    def test_monotone_in_reveal_set(self):
        j = enumerate_joint(symmetric_chain(0.8), 3)
        small = conditional_mi(j, 0, [1])
        large = conditional_mi(j, 0, [1, 2])
        assert large >= small - 1e-12

    def test_nonnegative(self):
        m = MarkovModel.random(3, seed=4)
        j = enumerate_joint(m, 4)
        assert conditional_mi(j, 1, [3], {0: 1}) >= -1e-15

    def test_overlapping_context_rejected(self):
        j = enumerate_joint(symmetric_chain(), 3)
        with pytest.raises(InvalidArgumentError):
            conditional_mi(j, 0, [1], {1: 0})

    def test_empty_reveal_is_zero(self):
        j = enumerate_joint(symmetric_chain(), 3)
        assert conditional_mi(j, 0, []) == 0.0

    def test_self_inclusion_degenerates_to_entropy(self):
        j = enumerate_joint(symmetric_chain(0.8), 2)
        assert conditional_mi(j, 0, [0, 1]) == pytest.approx(math.log(2), abs=1e-12)


class TestLemma1:
    def test_empty_reveal_trivial(self):
        rep = check_lemma1(symmetric_chain(), new_fully_masked(3), [], 1)
        assert rep.lhs == 0.0
        assert rep.rhs == 0.0

    def test_symmetric_chain_fully_masked(self):
        rep = check_lemma1(symmetric_chain(0.8), new_fully_masked(3), [0], 1)
        assert rep.gap <= 1e-10
        assert rep.lhs > 0.01

    def test_product_model_gives_zero(self):
        rep = check_lemma1(product_model(2), new_fully_masked(4), [0, 2], 1)
        assert abs(rep.lhs) <= 1e-12
        assert abs(rep.rhs) <= 1e-12

    def test_partially_observed_context(self):
        m = MarkovModel.random(3, seed=8)
        state = state_from_tokens([1, None, None, None, 2])
        rep = check_lemma1(m, state, [1, 3], 2)
        assert rep.gap <= 1e-10

    def test_reveal_must_be_masked(self):
        with pytest.raises(InvalidArgumentError):
            check_lemma1(symmetric_chain(), state_from_tokens([0, None]), [0], 1)

    def test_target_cannot_be_revealed(self):
        with pytest.raises(InvalidArgumentError):
            check_lemma1(symmetric_chain(), new_fully_masked(3), [1], 1)


class TestTheorem1:
    def test_bound_and_identity_on_random_configs(self):
        for seed in range(6):
            m = MarkovModel.random(3, seed=seed)
            state = new_fully_masked(4)
            rep = check_theorem1(m, state, [0, 3], 1)
            assert rep.slack >= -1e-12
            assert rep.identity_gap <= 1e-10

    def test_product_model_everything_zero(self):
        rep = check_theorem1(product_model(2), new_fully_masked(4), [0, 2], 1)
        assert abs(rep.expected_kl) <= 1e-12
        # mi_total degenerates to the target's entropy (self-inclusion);
        # the refinement itself carries no information.
        assert rep.slack >= -1e-12
        assert rep.identity_gap <= 1e-10

    def test_reveal_all_but_target(self):
        m = symmetric_chain(0.8)
        state = new_fully_masked(4)
        rep = check_theorem1(m, state, [0, 2, 3], 1)
        assert rep.identity_gap <= 1e-10
        assert rep.slack >= -1e-12

    def test_reverse_kl_is_reported_not_asserted(self):
        m = MarkovModel.random(2, seed=3)
        rep = check_theorem1(m, new_fully_masked(3), [0], 1)
        assert rep.reverse_kl >= 0.0
        assert isinstance(rep.reverse_exceeds_bound, bool)


class TestCorpus:
    def test_small_corpus_all_green(self):
        result = run_verification_corpus(num_configs=40, seed=99)
        assert len(result.records) == 40
        assert result.max_gap <= 1e-10
        assert result.min_slack >= -1e-12
        assert result.max_identity_gap <= 1e-10
        assert result.max_oracle_gap <= 1e-10
        assert result.all_within_tolerance()

    def test_records_serialize_to_ldjson(self):
        result = run_verification_corpus(num_configs=3, seed=5)
        for rec in result.records:
            line = rec.to_json()
            assert line.startswith("{") and line.endswith("}")
            assert "lhs" in line and "slack" in line
