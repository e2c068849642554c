import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from personality_ncf.errors import EmptyDatasetError, RecordError
from personality_ncf.personality import (
    OceanScores,
    PersonalityTable,
    Trait,
    assign_baseline_labels,
    hard_vector,
    import_scores_csv,
    lexicon_score,
    load_lexicon,
    most_salient,
    soft_weights,
    trait_distribution,
    write_scores_csv,
)

# reported as AGR, CON, NEU, EXT, OPEN; reordered to O, C, E, A, N
REPORTED = OceanScores(42.71, 34.87, 54.39, 54.05, 25.96)
EXAMPLE = OceanScores(30, 70, 50, 30, 20)

scores_strategy = st.lists(st.floats(0.0, 100.0), min_size=5, max_size=5).map(OceanScores.from_sequence)


def test_trait_order_is_canonical():
    assert [t.name for t in Trait] == [
        "OPENNESS",
        "CONSCIENTIOUSNESS",
        "EXTROVERSION",
        "AGREEABLENESS",
        "NEUROTICISM",
    ]
    assert [int(t) for t in Trait] == [0, 1, 2, 3, 4]


def test_scores_range_enforced():
    with pytest.raises(ValueError):
        OceanScores(101, 0, 0, 0, 0)
    with pytest.raises(ValueError):
        OceanScores(float("nan"), 0, 0, 0, 0)


class TestMostSalient:
    def test_reported_is_extroversion(self):
        assert most_salient(REPORTED) is Trait.EXTROVERSION

    def test_ties_go_to_openness(self):
        assert most_salient(OceanScores(50, 50, 50, 50, 50)) is Trait.OPENNESS

    def test_one_hot_neuroticism(self):
        assert most_salient(OceanScores(0, 0, 0, 0, 100)) is Trait.NEUROTICISM

    def test_example_is_conscientiousness(self):
        assert most_salient(EXAMPLE) is Trait.CONSCIENTIOUSNESS


class TestSoftWeights:
    def test_example_temperature_100(self):
        e = [math.exp(x / 100) for x in (30, 70, 50, 30, 20)]
        oracle = [x / sum(e) for x in e]
        w = soft_weights(EXAMPLE, 100)
        np.testing.assert_allclose(w, oracle, rtol=1e-14)
        np.testing.assert_allclose(w, [0.17800, 0.26554, 0.21741, 0.17800, 0.16106], atol=5e-6)

    def test_equal_scores_uniform(self):
        np.testing.assert_allclose(soft_weights(OceanScores(40, 40, 40, 40, 40)), [0.2] * 5, rtol=1e-15)

    def test_low_temperature_concentrates(self):
        w = soft_weights(REPORTED, 1e-3)
        assert int(np.argmax(w)) == int(most_salient(REPORTED))
        assert w.max() == pytest.approx(1.0, abs=1e-12)

    def test_rejects_nonpositive_temperature(self):
        with pytest.raises(ValueError):
            soft_weights(EXAMPLE, 0)

    @given(scores_strategy, st.floats(1e-3, 1e4))
    def test_on_simplex(self, scores, temperature):
        w = soft_weights(scores, temperature)
        assert abs(w.sum() - 1.0) < 1e-9
        assert np.all(w >= 0)

    @given(scores_strategy, st.floats(1e-2, 1e4))
    def test_argmax_consistent(self, scores, temperature):
        arr = scores.as_array()
        top = np.sort(arr)
        assume(top[-1] - top[-2] > 1e-6)
        assert int(np.argmax(soft_weights(scores, temperature))) == int(most_salient(scores))


class TestHardVector:
    def test_example(self):
        assert hard_vector(EXAMPLE).tolist() == [0.3, 0.7, 0.5, 0.3, 0.2]

    def test_zero(self):
        assert hard_vector(OceanScores(0, 0, 0, 0, 0)).tolist() == [0.0] * 5

    def test_reported(self):
        np.testing.assert_allclose(hard_vector(REPORTED), [0.4271, 0.3487, 0.5439, 0.5405, 0.2596], rtol=1e-15)

    def test_normalized_variant_sums_to_one(self):
        assert hard_vector(EXAMPLE, normalize=True).sum() == pytest.approx(1.0)

    @given(scores_strategy, st.floats(0.0, 1.0))
    def test_linear(self, scores, alpha):
        scaled = OceanScores.from_sequence(alpha * scores.as_array())
        np.testing.assert_allclose(hard_vector(scaled), alpha * hard_vector(scores), rtol=1e-12, atol=1e-15)


def write_csv(path, rows, header="user_id,openness,conscientiousness,extroversion,agreeableness,neuroticism"):
    path.write_text(header + "\n" + "\n".join(rows) + "\n")
    return path


class TestImport:
    def test_questionnaire_rescale(self, tmp_path):
        p = write_csv(tmp_path / "s.csv", ["u1,4,1,7,2.5,5.5"])
        s = import_scores_csv(p, (1, 7))["u1"]
        assert s.as_array().tolist() == [50.0, 0.0, 100.0, 25.0, 75.0]

    def test_identity_range(self, tmp_path):
        p = write_csv(tmp_path / "s.csv", ["u1,54.39,1,2,3,4"])
        assert import_scores_csv(p, (0, 100))["u1"].openness == 54.39

    def test_out_of_range_names_row(self, tmp_path):
        p = write_csv(tmp_path / "s.csv", ["u1,4,4,4,4,4", "u2,4,4,8,4,4"])
        with pytest.raises(RecordError, match="line 3"):
            import_scores_csv(p, (1, 7))

    def test_duplicate_user(self, tmp_path):
        p = write_csv(tmp_path / "s.csv", ["u1,4,4,4,4,4", "u1,4,4,4,4,4"])
        with pytest.raises(RecordError, match="duplicate"):
            import_scores_csv(p, (1, 7))

    def test_round_trip_is_byte_identical(self, tmp_path):
        p = write_csv(tmp_path / "s.csv", ["u1,4,1,7,2.5,5.5", "u2,3.3,6.1,1.7,2,2"])
        t = import_scores_csv(p, (1, 7))
        out1 = tmp_path / "a.csv"
        out2 = tmp_path / "b.csv"
        write_scores_csv(t, out1)
        write_scores_csv(import_scores_csv(out1, (0, 100)), out2)
        assert out1.read_bytes() == out2.read_bytes()

    @given(st.floats(-50, 50), st.floats(0.1, 100), st.lists(st.floats(0, 1), min_size=2, max_size=10))
    def test_rescale_order_preserving(self, low, width, fracs):
        from personality_ncf.personality import rescale

        high = low + width
        xs = sorted(low + f * width for f in fracs)
        ys = [rescale(x, low, high) for x in xs]
        assert ys == sorted(ys)
        assert rescale(low, low, high) == 0.0
        assert rescale(high, low, high) == 100.0


@pytest.fixture(scope="module")
def lexicon():
    return load_lexicon()


class TestLexicon:
    def test_empty_text_is_neutral(self, lexicon):
        assert lexicon_score("", lexicon).as_array().tolist() == [50.0] * 5

    def test_extroversion_words(self, lexicon):
        words = [w for w, wt in lexicon[Trait.EXTROVERSION].items() if wt > 0 and all(
            w not in lexicon[t] for t in Trait if t is not Trait.EXTROVERSION
        )]
        s = lexicon_score(" ".join(words), lexicon)
        assert s.extroversion > 50
        arr = s.as_array()
        assert arr[Trait.EXTROVERSION] == arr.max() and np.sum(arr == arr.max()) == 1

    def test_duplication_invariant(self, lexicon):
        text = "I love this, my husband says it is wonderful but the box was broken."
        assert lexicon_score(text + " " + text, lexicon) == lexicon_score(text, lexicon)

    def test_case_insensitive(self, lexicon):
        assert lexicon_score("LOVE Friends", lexicon) == lexicon_score("love friends", lexicon)

    def test_custom_file(self, tmp_path):
        p = tmp_path / "lex.csv"
        p.write_text("trait,word,weight\n" + "\n".join(f"{t.column},{'abcde'[t] * 3},1" for t in Trait) + "\n")
        lex = load_lexicon(p)
        s = lexicon_score("ccc ccc x", lex)
        assert most_salient(s) is Trait.EXTROVERSION


class TestBaselineLabels:
    def test_same_openness(self):
        assert set(assign_baseline_labels(["a", "b", "c"], "same").values()) == {Trait.OPENNESS}

    def test_random_is_uniform(self):
        labels = assign_baseline_labels(range(100_000), "random", seed=7)
        counts = np.bincount([int(t) for t in labels.values()], minlength=5) / 100_000
        assert np.all(np.abs(counts - 0.2) < 0.01)

    def test_random_deterministic(self):
        assert assign_baseline_labels(range(50), "random", 3) == assign_baseline_labels(range(50), "random", 3)


class TestDistribution:
    def table(self, values, trait=Trait.EXTROVERSION):
        t = PersonalityTable()
        for i, v in enumerate(values):
            arr = [50.0] * 5
            arr[trait] = v
            t.add(f"u{i}", OceanScores.from_sequence(arr), "synthetic")
        return t

    def test_single_user(self):
        d = trait_distribution(self.table([54.39]), bins=10)
        assert d[Trait.EXTROVERSION].median == 54.39
        assert d[Trait.EXTROVERSION].counts.sum() == 1

    def test_lower_median(self):
        assert trait_distribution(self.table([60, 40]))[Trait.EXTROVERSION].median == 40

    def test_normal_sample(self):
        rng = np.random.default_rng(0)
        vals = np.clip(rng.normal(60, 10, 10_000), 0, 100)
        assert trait_distribution(self.table(vals))[Trait.EXTROVERSION].median == pytest.approx(60, abs=0.5)

    def test_endpoint_in_last_bin(self):
        d = trait_distribution(self.table([100.0, 0.0]), bins=4)[Trait.EXTROVERSION]
        assert d.counts.tolist() == [1, 0, 0, 1]

    def test_empty(self):
        with pytest.raises(EmptyDatasetError):
            trait_distribution(PersonalityTable())
