import io
import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from socialact.scene import (
    AnnotationError,
    LabelSet,
    Partition,
    adjacency_target,
    dominant_activity,
    majority_vote_groups,
    parse_annotations,
    scene_group_activity,
    serialize_annotations,
)

from conftest import make_scene


def _record(**overrides):
    rec = {
        "scene_id": "a",
        "key_frame": 10,
        "split": "train",
        "actors": [
            {"id": 0, "bbox": [0, 0, 10, 20], "action": "walking"},
            {"id": 1, "bbox": [30, 0, 10, 20], "action": "waiting"},
        ],
        "groups": [{"members": [0], "activity": "walking"}, {"members": [1], "activity": "waiting"}],
    }
    rec.update(overrides)
    return rec


class TestLabelSet:
    def test_cad_layout(self, labels):
        assert labels.n_actions == 6 and labels.n_social == 6
        assert labels.merged_labels() == ["moving", "waiting", "queuing", "talking", "N/A"]
        assert labels.action_labels[labels.na_action] == "N/A"

    def test_rejects_duplicates(self):
        with pytest.raises(ValueError):
            LabelSet(("a", "a"), ("a",))

    def test_digest_changes_with_labels(self, labels):
        other = LabelSet(labels.action_labels, labels.social_labels, {})
        assert other.digest() != labels.digest()


class TestPartition:
    def test_canonical_order(self):
        p = Partition(((3, 1), (0,), (2,)))
        assert p.groups == ((0,), (1, 3), (2,))

    def test_from_labels_roundtrip(self):
        p = Partition.from_labels([5, 5, 2, 9, 2])
        np.testing.assert_array_equal(p.labels(), [0, 0, 1, 2, 1])

    @pytest.mark.parametrize("groups", [((0, 1), (1, 2)), ((0,), (2,)), ((0, 0),)])
    def test_rejects_non_partitions(self, groups):
        with pytest.raises(ValueError):
            Partition(groups)

    def test_scene_rejects_overlap(self):
        with pytest.raises(AnnotationError):
            make_scene([[0, 1], [1, 2]], [1, 1, 1])


class TestAnnotations:
    def test_roundtrip_bytes_identical(self, labels, tiny_corpus):
        _, scenes, _ = tiny_corpus
        data = serialize_annotations(scenes, labels)
        again = parse_annotations(data, labels)
        assert again == scenes
        assert serialize_annotations(again, labels) == data

    def test_blank_lines_skipped(self, labels):
        text = "\n" + json.dumps(_record()) + "\n\n"
        assert len(parse_annotations(io.StringIO(text), labels)) == 1

    def test_unknown_label_reports_line(self, labels):
        bad = _record(groups=[{"members": [0, 1], "activity": "dancing"}])
        text = json.dumps(_record()) + "\n" + json.dumps(bad) + "\n"
        with pytest.raises(AnnotationError) as err:
            parse_annotations(io.StringIO(text), labels)
        assert err.value.line == 2

    def test_malformed_json_reports_line(self, labels):
        with pytest.raises(AnnotationError) as err:
            parse_annotations(b'{"scene_id": \n', labels)
        assert err.value.line == 1

    def test_missing_actor_in_groups(self, labels):
        bad = _record(groups=[{"members": [0], "activity": "walking"}])
        with pytest.raises(AnnotationError, match="partition"):
            parse_annotations(json.dumps(bad).encode(), labels)


def _brute_majority(parts, n):
    # every pair with >= 2 votes, then connected components by repeated merging
    label = list(range(n))
    for i, j in itertools.combinations(range(n), 2):
        votes = sum(p.labels()[i] == p.labels()[j] for p in parts)
        if votes >= 2:
            old, new = label[j], label[i]
            label = [new if x == old else x for x in label]
    return Partition.from_labels(label)


class TestMajorityVote:
    def test_two_of_three(self):
        a = Partition(((0, 1), (2,), (3,)))
        b = Partition(((0, 1, 2), (3,)))
        c = Partition(((0,), (1,), (2, 3)))
        assert majority_vote_groups([a, b, c]).groups == ((0, 1), (2,), (3,))

    def test_chain_is_closed(self):
        a = Partition(((0, 1), (2,)))
        b = Partition(((0, 1, 2),))
        c = Partition(((0,), (1, 2)))
        assert majority_vote_groups([a, b, c]).groups == ((0, 1, 2),)

    def test_needs_three(self):
        with pytest.raises(ValueError):
            majority_vote_groups([Partition(((0,),))] * 2)

    @settings(max_examples=200, deadline=None)
    @given(st.integers(1, 7).flatmap(lambda n: st.lists(st.lists(st.integers(0, n - 1), min_size=n, max_size=n),
                                                        min_size=3, max_size=3)))
    def test_matches_enumeration(self, labellings):
        parts = [Partition.from_labels(l) for l in labellings]
        assert majority_vote_groups(parts) == _brute_majority(parts, len(labellings[0]))

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.integers(0, 3), min_size=1, max_size=8))
    def test_unanimous_is_identity(self, lab):
        p = Partition.from_labels(lab)
        assert majority_vote_groups([p, p, p]) == p


class TestDominantActivity:
    def test_majority(self, labels):
        acts = [labels.action_index(x) for x in ("talking", "talking", "waiting")]
        assert labels.social_labels[dominant_activity([0, 1, 2], acts, labels)] == "talking"

    def test_tie_goes_to_smallest_index(self, labels):
        acts = [labels.action_index("talking"), labels.action_index("crossing")]
        assert dominant_activity([0, 1], acts, labels) == min(acts)

    def test_scene_level_label(self, labels):
        s = make_scene([[0, 1], [2, 3, 4]], [1, 1, 3, 3, 3])
        assert scene_group_activity(s, labels) == 3


class TestAdjacency:
    def test_target(self):
        s = make_scene([[0, 2], [1]], [1, 2, 1])
        np.testing.assert_array_equal(adjacency_target(s), [[1, 0, 1], [0, 1, 0], [1, 0, 1]])
