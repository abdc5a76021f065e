import math

import pytest
from hypothesis import given, settings, strategies as st

from emokit.aggregation import (LabelKind, SmoothingConfig, UnscorableUtterance,
                                aggregate_ar, aggregate_dataset, aggregate_mr,
                                aggregate_pr, count_votes, data_loss_report,
                                one_hot, smooth)
from emokit.corpus import EmotionTaxonomy

from conftest import make_utterance

FIVE_VOTES = [["neutral"], ["anger"], ["anger"], ["sadness"], ["sadness"]]


class TestCountVotes:
    def test_five_vote_example(self, four_class):
        utt = make_utterance("u1", FIVE_VOTES)
        counts = count_votes(utt, four_class)
        assert counts.counts == {"neutral": 1, "anger": 2, "sadness": 2}
        assert counts.total == 5
        assert counts.n_raters == 5

    def test_figure_caption_example(self, pod_primary):
        # disgust, contempt, fear, neutral, and happy x6: ten label instances
        votes = [["disgust"], ["contempt"], ["fear"], ["neutral"]] + [["happy"]] * 6
        counts = count_votes(make_utterance("u1", votes), pod_primary)
        assert counts.counts == {"disgust": 1, "contempt": 1, "fear": 1,
                                 "neutral": 1, "happy": 6}
        assert counts.total == 10

    def test_single_vote(self, four_class):
        counts = count_votes(make_utterance("u1", [["anger"]]), four_class)
        assert counts.counts == {"anger": 1}
        assert counts.total == 1

    def test_multi_select_counts_instances(self, four_class):
        counts = count_votes(make_utterance("u1", [["anger", "sadness"]]), four_class)
        assert counts.total == 2
        assert counts.n_raters == 1

    def test_typed_only_unscorable(self, four_class):
        utt = make_utterance("u1", [([], "just a description")])
        with pytest.raises(UnscorableUtterance):
            count_votes(utt, four_class)

    def test_rater_order_irrelevant(self, four_class):
        a = count_votes(make_utterance("u1", FIVE_VOTES), four_class)
        b = count_votes(make_utterance("u1", FIVE_VOTES[::-1]), four_class)
        assert a.counts == b.counts


class TestMajorityRule:
    def test_no_majority_dropped(self, four_class):
        counts = count_votes(make_utterance("u1", FIVE_VOTES), four_class)
        rec = aggregate_mr(counts, "u1")
        assert rec.kind is LabelKind.DROPPED
        assert rec.reason == "no majority"

    def test_clear_majority(self, four_class):
        votes = [["anger"], ["anger"], ["anger"], ["neutral"], ["sadness"]]
        rec = aggregate_mr(count_votes(make_utterance("u1", votes), four_class))
        assert rec.kind is LabelKind.SINGLE
        assert rec.clazz == "anger"

    def test_multi_select_ambiguous_majority(self, pod_primary):
        # three raters all selecting both classes: each exceeds half the raters
        votes = [["angry", "happy"]] * 3
        counts = count_votes(make_utterance("u1", votes), pod_primary)
        assert counts.total == 6 and counts.n_raters == 3
        rec = aggregate_mr(counts)
        assert rec.kind is LabelKind.DROPPED
        assert rec.reason == "ambiguous majority"


class TestPluralityRule:
    def test_tie_dropped(self, four_class):
        counts = count_votes(make_utterance("u1", FIVE_VOTES), four_class)
        rec = aggregate_pr(counts)
        assert rec.kind is LabelKind.DROPPED
        assert rec.reason == "plurality tie"

    def test_unique_max_without_majority(self, pod_primary):
        votes = [["angry"], ["angry"], ["neutral"], ["sad"], ["happy"]]
        rec = aggregate_pr(count_votes(make_utterance("u1", votes), pod_primary))
        assert rec.kind is LabelKind.SINGLE
        assert rec.clazz == "angry"

    def test_singleton(self, four_class):
        rec = aggregate_pr(count_votes(make_utterance("u1", [["anger"]]), four_class))
        assert rec.clazz == "anger"


class TestAllInclusiveRule:
    def test_five_vote_distribution(self, four_class):
        counts = count_votes(make_utterance("u1", FIVE_VOTES), four_class)
        rec = aggregate_ar(counts, four_class, "u1")
        assert rec.kind is LabelKind.DISTRIBUTION
        assert rec.distribution == (0.2, 0.4, 0.4, 0.0)

    def test_figure_caption_distribution(self, pod_primary):
        votes = [["disgust"], ["contempt"], ["fear"], ["neutral"]] + [["happy"]] * 6
        rec = aggregate_ar(count_votes(make_utterance("u1", votes), pod_primary),
                           pod_primary)
        assert rec.distribution == (0.0, 0.0, 0.1, 0.1, 0.1, 0.1, 0.0, 0.6)

    def test_singleton_one_hot(self, four_class):
        rec = aggregate_ar(count_votes(make_utterance("u1", [["anger"]]), four_class),
                           four_class)
        assert rec.distribution == (0.0, 1.0, 0.0, 0.0)


class TestSmoothing:
    def test_zero_epsilon_identity(self):
        dist = (0.2, 0.4, 0.4, 0.0)
        assert smooth(dist, SmoothingConfig(0.0)) == dist

    def test_worked_example(self):
        out = smooth((0.2, 0.4, 0.4, 0.0), SmoothingConfig(0.05))
        assert out == pytest.approx((0.2025, 0.3925, 0.3925, 0.0125), abs=1e-15)
        assert sum(out) == pytest.approx(1.0, abs=1e-12)

    def test_uniform_fixed_point(self):
        uniform = (0.25,) * 4
        for eps in (0.01, 0.05, 0.5, 0.99):
            assert smooth(uniform, SmoothingConfig(eps)) == pytest.approx(uniform)

    def test_default_epsilon(self):
        assert SmoothingConfig().epsilon == 0.05

    @given(st.lists(st.floats(0, 1), min_size=2, max_size=8),
           st.floats(0, 0.99))
    def test_affine_sum_and_argmax_preserved(self, raw, eps):
        total = sum(raw)
        if total <= 0:
            return
        dist = [v / total for v in raw]
        out = smooth(dist, SmoothingConfig(eps))
        assert sum(out) == pytest.approx(1.0, abs=1e-9)
        assert all(v >= 0 for v in out)
        assert out.index(max(out)) == dist.index(max(dist))
        if eps > 0:
            assert all(v > 0 for v in out)


# ---------------------------------------------------------------------------
# Dataset-level behaviour
# ---------------------------------------------------------------------------


def random_corpus(rng_seed, n_utts, classes):
    import random
    rng = random.Random(rng_seed)
    utts = []
    for i in range(n_utts):
        n_votes = rng.randint(1, 6)
        votes = []
        for _ in range(n_votes):
            k = rng.randint(1, min(3, len(classes)))
            votes.append(rng.sample(list(classes), k))
        utts.append(make_utterance(f"u{i}", votes))
    return utts


class TestDataLoss:
    def test_ar_never_drops(self, four_class):
        utts = random_corpus(0, 50, four_class.classes)
        report = data_loss_report(utts, four_class)
        assert report["rules"]["ar"]["ratio"] == 0.0

    def test_unanimous_corpus_no_loss(self, four_class):
        utts = [make_utterance(f"u{i}", [["anger"]] * 3) for i in range(10)]
        report = data_loss_report(utts, four_class)
        assert report["rules"]["mr"]["ratio"] == 0.0
        assert report["rules"]["pr"]["ratio"] == 0.0

    @pytest.mark.parametrize("seed", range(20))
    def test_loss_ordering(self, four_class, seed):
        utts = random_corpus(seed, 40, four_class.classes)
        report = data_loss_report(utts, four_class)
        assert (report["rules"]["mr"]["ratio"]
                >= report["rules"]["pr"]["ratio"]
                >= report["rules"]["ar"]["ratio"] == 0.0)

    def test_empty_dataset_rejected(self, four_class):
        with pytest.raises(Exception):
            data_loss_report([], four_class)


@given(st.integers(0, 10_000))
@settings(max_examples=150, deadline=None)
def test_mr_kept_implies_pr_same_class(seed):
    taxonomy = EmotionTaxonomy(name="prop", classes=("a", "b", "c", "d"))
    for utt in random_corpus(seed, 10, taxonomy.classes):
        counts = count_votes(utt, taxonomy)
        mr = aggregate_mr(counts)
        pr = aggregate_pr(counts)
        ar = aggregate_ar(counts, taxonomy)
        assert math.isclose(sum(ar.distribution), 1.0, abs_tol=1e-9)
        if mr.kind is LabelKind.SINGLE:
            assert pr.kind is LabelKind.SINGLE
            assert pr.clazz == mr.clazz


class TestAggregateDataset:
    def test_smoothing_applied_to_distributions_only(self, four_class):
        utts = [make_utterance("u1", FIVE_VOTES),
                make_utterance("u2", [["anger"]] * 3)]
        res = aggregate_dataset(utts, "ar", four_class)
        assert all(r.smoothed for r in res.labels)
        res_mr = aggregate_dataset(utts, "mr", four_class)
        kept = [r for r in res_mr.labels if r.kind is LabelKind.SINGLE]
        assert kept and not kept[0].smoothed

    def test_smooth_singles_flag(self, four_class):
        utts = [make_utterance("u1", [["anger"]] * 3)]
        res = aggregate_dataset(utts, "mr", four_class, smooth_singles=True)
        rec = res.labels[0]
        assert rec.kind is LabelKind.DISTRIBUTION and rec.smoothed
        expected = smooth(one_hot("anger", four_class), SmoothingConfig())
        assert rec.distribution == pytest.approx(expected)

    def test_unscorable_routed_out(self, four_class):
        utts = [make_utterance("u1", [([], "typed only")]),
                make_utterance("u2", [["anger"]])]
        res = aggregate_dataset(utts, "ar", four_class)
        assert res.unscorable == ["u1"]
        assert [r.utterance_id for r in res.labels] == ["u2"]

    def test_label_record_json_round_trip(self, four_class):
        from emokit.aggregation import LabelRecord
        utts = [make_utterance("u1", FIVE_VOTES)]
        rec = aggregate_dataset(utts, "ar", four_class).labels[0]
        assert LabelRecord.from_json(rec.to_json()) == rec
