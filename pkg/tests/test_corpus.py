import json

import pytest
from hypothesis import given, settings, strategies as st

from emokit.corpus import (EmotionTaxonomy, builtin_taxonomy, dump_jsonl,
                           load_annotations, load_predictions)
from emokit.errors import CorpusFormatError, TaxonomyError

from conftest import write_jsonl


def annotation_row(utt_id="u1", votes=None, speaker="spk1", dyad=None):
    return {
        "utterance_id": utt_id,
        "dataset": "test",
        "speaker_id": speaker,
        "dyad_id": dyad,
        "votes": votes or [{"rater_id": "r0", "emotions": ["neutral"],
                            "typed_description": None}],
    }


class TestTaxonomy:
    def test_pod_primary_order(self, pod_primary):
        assert pod_primary.classes == (
            "angry", "sad", "disgust", "contempt", "fear", "neutral",
            "surprise", "happy")
        assert pod_primary.C == 8

    def test_duplicate_classes_rejected(self):
        with pytest.raises(TaxonomyError):
            EmotionTaxonomy(name="bad", classes=("a", "a", "b"))

    def test_too_few_classes_rejected(self):
        with pytest.raises(TaxonomyError):
            EmotionTaxonomy(name="bad", classes=("only",))

    def test_case_sensitive_lookup(self, pod_primary):
        with pytest.raises(TaxonomyError):
            pod_primary.index("Angry")

    def test_unknown_builtin(self):
        with pytest.raises(TaxonomyError):
            builtin_taxonomy("no-such-taxonomy")


class TestLoadAnnotations:
    def test_five_vote_example(self, tmp_path, four_class):
        votes = [{"rater_id": f"r{i}", "emotions": [e], "typed_description": None}
                 for i, e in enumerate(
                     ["neutral", "anger", "anger", "sadness", "sadness"])]
        path = write_jsonl(tmp_path / "a.jsonl", [annotation_row(votes=votes)])
        records = load_annotations(path, four_class)
        assert len(records) == 1
        assert len(records[0].votes) == 5

    def test_empty_file(self, tmp_path, four_class):
        path = tmp_path / "empty.jsonl"
        path.write_text("")
        assert load_annotations(path, four_class) == []

    def test_unknown_class_rejected(self, tmp_path, pod_primary):
        votes = [{"rater_id": "r0", "emotions": ["joyful"], "typed_description": None}]
        path = write_jsonl(tmp_path / "a.jsonl", [annotation_row(votes=votes)])
        with pytest.raises(CorpusFormatError, match="joyful"):
            load_annotations(path, pod_primary)

    def test_malformed_line_reports_line_number(self, tmp_path, pod_primary):
        path = tmp_path / "a.jsonl"
        path.write_text(json.dumps(annotation_row(votes=[
            {"rater_id": "r0", "emotions": ["happy"], "typed_description": None}
        ])) + "\n{ not json\n")
        with pytest.raises(CorpusFormatError, match=":2"):
            load_annotations(path, pod_primary)

    def test_duplicate_utterance_id(self, tmp_path, pod_primary):
        row = annotation_row(votes=[
            {"rater_id": "r0", "emotions": ["happy"], "typed_description": None}])
        path = write_jsonl(tmp_path / "a.jsonl", [row, row])
        with pytest.raises(CorpusFormatError, match="duplicate"):
            load_annotations(path, pod_primary)

    def test_typed_description_preserved_verbatim(self, tmp_path, pod_primary):
        raw = "Haaapy , sliGhtly angry\t(raw)"
        votes = [{"rater_id": "r0", "emotions": [], "typed_description": raw}]
        path = write_jsonl(tmp_path / "a.jsonl", [annotation_row(votes=votes)])
        records = load_annotations(path, pod_primary)
        assert records[0].votes[0].typed_description == raw

    def test_vote_without_content_rejected(self, tmp_path, pod_primary):
        votes = [{"rater_id": "r0", "emotions": [], "typed_description": None}]
        path = write_jsonl(tmp_path / "a.jsonl", [annotation_row(votes=votes)])
        with pytest.raises(CorpusFormatError):
            load_annotations(path, pod_primary)


class TestLoadPredictions:
    def test_paper_vector_accepted(self, tmp_path, four_class):
        path = write_jsonl(tmp_path / "p.jsonl", [
            {"utterance_id": "u1", "distribution": [0.2, 0.35, 0.35, 0.1]}])
        records = load_predictions(path, four_class)
        assert records[0].distribution == (0.2, 0.35, 0.35, 0.1)

    def test_wrong_dimension_rejected(self, tmp_path, four_class):
        path = write_jsonl(tmp_path / "p.jsonl", [
            {"utterance_id": "u1", "distribution": [0.5, 0.3, 0.2]}])
        with pytest.raises(CorpusFormatError, match="expected C=4"):
            load_predictions(path, four_class)

    def test_negative_entry_rejected(self, tmp_path, four_class):
        path = write_jsonl(tmp_path / "p.jsonl", [
            {"utterance_id": "u1", "distribution": [0.6, 0.3, 0.2, -0.1]}])
        with pytest.raises(CorpusFormatError):
            load_predictions(path, four_class)

    def test_non_finite_rejected(self, tmp_path, four_class):
        path = tmp_path / "p.jsonl"
        path.write_text('{"utterance_id": "u1", "distribution": [0.5, 0.3, 0.2, NaN]}\n')
        with pytest.raises(CorpusFormatError):
            load_predictions(path, four_class)


# ---------------------------------------------------------------------------
# Properties
# ---------------------------------------------------------------------------

class_names = st.lists(st.text(alphabet="abcdefgh", min_size=1, max_size=6),
                       min_size=2, max_size=8, unique=True)


@st.composite
def taxonomy_and_rows(draw):
    classes = draw(class_names)
    n = draw(st.integers(min_value=0, max_value=8))
    rows = []
    for i in range(n):
        n_votes = draw(st.integers(min_value=1, max_value=4))
        votes = []
        for v in range(n_votes):
            emotions = draw(st.lists(st.sampled_from(classes), min_size=0,
                                     max_size=len(classes), unique=True))
            desc = draw(st.one_of(st.none(), st.text(min_size=1, max_size=12)))
            if not emotions and desc is None:
                emotions = [classes[0]]
            votes.append({"rater_id": f"r{v}", "emotions": sorted(emotions),
                          "typed_description": desc})
        rows.append({"utterance_id": f"u{i}", "dataset": "prop",
                     "speaker_id": f"s{i % 3}", "dyad_id": None, "votes": votes})
    return EmotionTaxonomy(name="prop", classes=tuple(classes)), rows


@pytest.fixture(scope="module")
def scratch(tmp_path_factory):
    return tmp_path_factory.mktemp("roundtrip")


@given(case=taxonomy_and_rows())
@settings(deadline=None, max_examples=60)
def test_round_trip_and_class_closure(scratch, case):
    taxonomy, rows = case
    path = write_jsonl(scratch / "a.jsonl", rows)
    records = load_annotations(path, taxonomy)

    # every loaded vote's emotions are taxonomy classes
    for rec in records:
        for vote in rec.votes:
            assert vote.emotions <= set(taxonomy.classes)

    # serialize -> load reproduces the same data
    out = scratch / "b.jsonl"
    dump_jsonl(records, out)
    again = load_annotations(out, taxonomy)
    assert again == records
