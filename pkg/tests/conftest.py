import json

import pytest

from emokit.corpus import (EmotionTaxonomy, RaterVote, UtteranceAnnotations,
                           builtin_taxonomy)


@pytest.fixture
def pod_primary():
    return builtin_taxonomy("pod-primary")


@pytest.fixture
def four_class():
    # order from the worked four-class example: neutral, anger, sadness, happiness
    return EmotionTaxonomy(name="nash", classes=("neutral", "anger", "sadness", "happiness"))


def make_utterance(utt_id, votes, dataset="test", speaker_id="spk1", dyad_id=None):
    """votes: list of emotion-name lists (or (emotions, typed_description) pairs)."""
    parsed = []
    for i, vote in enumerate(votes):
        if isinstance(vote, tuple):
            emotions, desc = vote
        else:
            emotions, desc = vote, None
        parsed.append(RaterVote(rater_id=f"r{i}", emotions=frozenset(emotions),
                                typed_description=desc))
    return UtteranceAnnotations(utterance_id=utt_id, dataset=dataset,
                                speaker_id=speaker_id, dyad_id=dyad_id,
                                votes=tuple(parsed))


def write_jsonl(path, rows):
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")
    return path
