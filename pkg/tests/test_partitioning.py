import json
import random

import pytest

from emokit.errors import PartitionError
from emokit.partitioning import (PartitionPlan, assign,
                                 builtin_scheme, check_leakage,
                                 fixed_split_scheme, load_plan, save_plan)

from conftest import make_utterance

ROTATING = ("iemocap-5fold", "improv-6fold", "cremad-5fold", "nnime-5fold")


def dyad_corpus(scheme, per_group=3):
    """One speaker pair per dyad group, a few utterances each."""
    utts = []
    for gname, members in scheme.groups.items():
        for member in sorted(members):
            for j in range(per_group):
                for spk in (f"{member}-A", f"{member}-B"):
                    utts.append(make_utterance(
                        f"{spk}-utt{j}", [["neutral"]],
                        speaker_id=spk, dyad_id=member))
    return utts


def speaker_corpus(scheme, per_speaker=2):
    utts = []
    for members in scheme.groups.values():
        for spk in sorted(members):
            for j in range(per_speaker):
                utts.append(make_utterance(f"{spk}-utt{j}", [["neutral"]],
                                           speaker_id=spk, dyad_id=None))
    return utts


class TestBuiltinSchemes:
    def test_iemocap_fold_one_matches_table(self):
        scheme = builtin_scheme("iemocap-5fold")
        fold = scheme.folds[0]
        assert set(fold.train) == {"Dyad1", "Dyad2", "Dyad3"}
        assert fold.dev == ("Dyad4",)
        assert fold.test == ("Dyad5",)

    def test_iemocap_fold_two_matches_table(self):
        fold = builtin_scheme("iemocap-5fold").folds[1]
        assert set(fold.train) == {"Dyad2", "Dyad3", "Dyad4"}
        assert fold.dev == ("Dyad5",)
        assert fold.test == ("Dyad1",)

    def test_improv_fold_one_matches_table(self):
        fold = builtin_scheme("improv-6fold").folds[0]
        assert set(fold.train) == {"Dyad1", "Dyad2", "Dyad3", "Dyad4"}
        assert fold.dev == ("Dyad5",)
        assert fold.test == ("Dyad6",)

    def test_improv_all_folds_match_table(self):
        expected = [
            ({"Dyad1", "Dyad2", "Dyad3", "Dyad4"}, "Dyad5", "Dyad6"),
            ({"Dyad1", "Dyad2", "Dyad3", "Dyad6"}, "Dyad4", "Dyad5"),
            ({"Dyad1", "Dyad2", "Dyad5", "Dyad6"}, "Dyad3", "Dyad4"),
            ({"Dyad1", "Dyad4", "Dyad5", "Dyad6"}, "Dyad2", "Dyad3"),
            ({"Dyad3", "Dyad4", "Dyad5", "Dyad6"}, "Dyad1", "Dyad2"),
            ({"Dyad2", "Dyad3", "Dyad4", "Dyad5"}, "Dyad6", "Dyad1"),
        ]
        for fold, (train, dev, test) in zip(builtin_scheme("improv-6fold").folds,
                                            expected):
            assert set(fold.train) == train
            assert fold.dev == (dev,)
            assert fold.test == (test,)

    def test_cremad_speaker_ranges(self):
        scheme = builtin_scheme("cremad-5fold")
        assert scheme.key == "speaker"
        assert "1037" in scheme.groups["Session1"]
        assert "1054" in scheme.groups["Session1"]
        assert "1001" in scheme.groups["Session2"]
        assert "1091" in scheme.groups["Session3"]
        assert sum(len(m) for m in scheme.groups.values()) == 91

    def test_nnime_speaker_lists(self):
        scheme = builtin_scheme("nnime-5fold")
        assert scheme.groups["Session1"] == frozenset({"01", "02", "03", "04", "22"})
        assert scheme.groups["Session4"] == frozenset({"13", "14", "15", "16"})

    def test_unknown_scheme(self):
        with pytest.raises(PartitionError):
            builtin_scheme("no-such-scheme")

    @pytest.mark.parametrize("name", ROTATING)
    def test_each_group_is_test_exactly_once(self, name):
        scheme = builtin_scheme(name)
        test_groups = [g for fold in scheme.folds for g in fold.test]
        assert sorted(test_groups) == sorted(scheme.groups)

    @pytest.mark.parametrize("name", ROTATING)
    def test_folds_cover_all_groups_exactly_once(self, name):
        scheme = builtin_scheme(name)
        for fold in scheme.folds:
            named = list(fold.train) + list(fold.dev) + list(fold.test)
            assert sorted(named) == sorted(scheme.groups)


class TestPrintedIemocapTable:
    def test_loads_verbatim(self):
        scheme = builtin_scheme("iemocap-5fold-printed")
        fold5 = scheme.folds[4]
        assert set(fold5.train) == {"Dyad1", "Dyad2", "Dyad4"}
        assert fold5.dev == ("Dyad3",)
        assert fold5.test == ("Dyad4",)

    def test_assign_refuses_the_overlap(self):
        scheme = builtin_scheme("iemocap-5fold-printed")
        corpus = dyad_corpus(scheme)
        with pytest.raises(PartitionError, match="Dyad4"):
            assign(scheme, corpus)


class TestAssign:
    def test_dyad_members_share_split(self):
        scheme = builtin_scheme("iemocap-5fold")
        u1 = make_utterance("utt-a", [["neutral"]], speaker_id="spkA", dyad_id="Dyad5")
        u2 = make_utterance("utt-b", [["neutral"]], speaker_id="spkB", dyad_id="Dyad5")
        plan = assign(scheme, [u1, u2])
        assert set(plan.folds[0]["test"]) == {"utt-a", "utt-b"}

    def test_empty_corpus(self):
        plan = assign(builtin_scheme("iemocap-5fold"), [])
        assert all(not fold[s] for fold in plan.folds for s in fold)

    def test_unmapped_dyad_is_error(self):
        scheme = builtin_scheme("iemocap-5fold")
        utt = make_utterance("utt-x", [["neutral"]], speaker_id="s", dyad_id="Dyad9")
        with pytest.raises(PartitionError, match="Dyad9"):
            assign(scheme, [utt])

    def test_missing_dyad_id_is_error(self):
        scheme = builtin_scheme("iemocap-5fold")
        utt = make_utterance("utt-x", [["neutral"]], speaker_id="s", dyad_id=None)
        with pytest.raises(PartitionError):
            assign(scheme, [utt])

    def test_deterministic_byte_identical(self, tmp_path):
        scheme = builtin_scheme("improv-6fold")
        corpus = dyad_corpus(scheme)
        p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
        save_plan(assign(scheme, corpus), p1)
        save_plan(assign(scheme, list(corpus)), p2)
        assert p1.read_bytes() == p2.read_bytes()

    @pytest.mark.parametrize("name", ROTATING)
    def test_assign_output_passes_leakage_check(self, name):
        scheme = builtin_scheme(name)
        corpus = dyad_corpus(scheme) if scheme.key == "dyad" else speaker_corpus(scheme)
        plan = assign(scheme, corpus)
        assert check_leakage(plan, corpus).ok

    def test_randomized_corpora_never_leak(self):
        rng = random.Random(99)
        scheme = builtin_scheme("iemocap-5fold")
        dyads = sorted(scheme.groups)
        for trial in range(25):
            corpus = []
            for i in range(rng.randint(1, 60)):
                dyad = rng.choice(dyads)
                spk = f"{dyad}-{rng.choice('AB')}"
                corpus.append(make_utterance(f"t{trial}-u{i}", [["neutral"]],
                                             speaker_id=spk, dyad_id=dyad))
            plan = assign(scheme, corpus)
            assert check_leakage(plan, corpus).ok


class TestCheckLeakage:
    def test_speaker_in_train_and_test(self):
        corpus = [
            make_utterance("u1", [["neutral"]], speaker_id="spk5", dyad_id="Dyad1"),
            make_utterance("u2", [["neutral"]], speaker_id="spk5", dyad_id="Dyad1"),
        ]
        plan = PartitionPlan(scheme="manual", folds=(
            {"train": ("u1",), "dev": (), "test": ("u2",)},))
        report = check_leakage(plan, corpus)
        assert not report.ok
        kinds = {(v.kind, v.subject) for v in report.violations}
        assert ("speaker", "spk5") in kinds
        v = report.violations[0]
        assert v.fold == 1 and set(v.splits) == {"test", "train"}

    def test_dyad_spanning_splits_with_disjoint_speakers(self):
        # partner-speech rule: same dyad, different speakers, across splits
        corpus = [
            make_utterance("u1", [["neutral"]], speaker_id="spkA", dyad_id="DyadX"),
            make_utterance("u2", [["neutral"]], speaker_id="spkB", dyad_id="DyadX"),
        ]
        plan = PartitionPlan(scheme="manual", folds=(
            {"train": ("u1",), "dev": (), "test": ("u2",)},))
        report = check_leakage(plan, corpus)
        assert [v for v in report.violations if v.kind == "dyad"
                and v.subject == "DyadX"]

    def test_unknown_plan_id_breaks_coverage(self):
        plan = PartitionPlan(scheme="manual", folds=(
            {"train": ("ghost",), "dev": (), "test": ()},))
        with pytest.raises(PartitionError, match="ghost"):
            check_leakage(plan, [])


class TestFixedSplit:
    def test_degenerate_one_fold(self):
        scheme = fixed_split_scheme("podcast", {
            "train": ["s1", "s2"], "dev": ["s3"], "test": ["s4"]})
        assert len(scheme.folds) == 1
        corpus = [make_utterance(f"{s}-u", [["neutral"]], speaker_id=s)
                  for s in ("s1", "s2", "s3", "s4")]
        plan = assign(scheme, corpus)
        assert plan.folds[0]["test"] == ("s4-u",)
        assert check_leakage(plan, corpus).ok

    def test_missing_split_rejected(self):
        with pytest.raises(PartitionError):
            fixed_split_scheme("bad", {"train": ["a"], "dev": ["b"]})


def test_plan_round_trip(tmp_path):
    scheme = builtin_scheme("iemocap-5fold")
    corpus = dyad_corpus(scheme, per_group=1)
    plan = assign(scheme, corpus)
    path = tmp_path / "plan.json"
    save_plan(plan, path)
    assert load_plan(path) == plan
    # file schema: scheme name + folds with train/dev/test id lists
    payload = json.loads(path.read_text())
    assert payload["scheme"] == "iemocap-5fold"
    assert set(payload["folds"][0]) == {"train", "dev", "test"}
