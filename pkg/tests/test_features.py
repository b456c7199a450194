import numpy as np
import pytest

from socialact.features import (
    FeatureBatch,
    FeatureError,
    SynthConfig,
    features_from_bytes,
    features_to_bytes,
    load_corpus,
    save_corpus,
    synth_corpus,
    synth_scene,
)


def _batch(n=3, P=2, D=8, D_g=5, seed=0):
    rng = np.random.default_rng(seed)
    return FeatureBatch("x", rng.standard_normal(D_g), rng.standard_normal((n, P, P, D)))


class TestContainer:
    def test_roundtrip_exact(self):
        b = _batch()
        again = features_from_bytes(features_to_bytes(b))
        np.testing.assert_array_equal(again.grids, b.grids)
        np.testing.assert_array_equal(again.clip, b.clip)

    def test_header_layout(self):
        data = features_to_bytes(_batch(n=3, P=2, D=8, D_g=5))
        assert data[:8] == b"SGFEAT\x00\x01"
        assert len(data) == 8 + 5 * 4 + 8 * (5 + 3 * 2 * 2 * 8)

    def test_bad_magic(self):
        data = bytearray(features_to_bytes(_batch()))
        data[0:1] = b"X"
        with pytest.raises(FeatureError, match="magic"):
            features_from_bytes(bytes(data))

    def test_truncated(self):
        with pytest.raises(FeatureError):
            features_from_bytes(features_to_bytes(_batch())[:-8])

    def test_actor_count_mismatch(self, tiny_corpus):
        _, scenes, _ = tiny_corpus
        s = next(s for s in scenes if s.n_actors != 3)
        with pytest.raises(FeatureError, match="actors"):
            features_from_bytes(features_to_bytes(_batch(n=3)), s)

    def test_non_finite_rejected(self):
        grids = np.zeros((1, 2, 2, 8))
        grids[0, 0, 0, 0] = np.nan
        with pytest.raises(FeatureError):
            FeatureBatch("x", np.zeros(3), grids)


class TestSynth:
    def test_seeded_and_scene_local(self):
        cfg = SynthConfig(n_scenes=5, P=3, D=8, D_g=8)
        s_a, b_a = synth_corpus(cfg)
        s_b, b_b = synth_scene(cfg, 3)
        assert s_a[3] == s_b
        np.testing.assert_array_equal(b_a[3].grids, b_b.grids)

    def test_ranges_and_split(self):
        cfg = SynthConfig(n_scenes=40, P=3, D=8, D_g=8, test_fraction=0.25)
        scenes, batches = synth_corpus(cfg)
        assert [s.split for s in scenes].count("test") == 10
        assert all(s.split == "test" for s in scenes[30:])
        for s, b in zip(scenes, batches):
            assert 2 <= s.n_actors <= 10
            assert 1 <= len(s.groups) <= 4
            assert b.grids.shape == (s.n_actors, 3, 3, 8)

    def test_group_labels_are_dominant_actions(self, labels, tiny_corpus):
        from socialact.scene import dominant_activity

        _, scenes, _ = tiny_corpus
        for s in scenes:
            for g in s.groups:
                assert g.activity == dominant_activity(g.members, s.actions, labels)

    def test_groups_are_separable_in_feature_means(self):
        cfg = SynthConfig(n_scenes=20, P=3, D=32, D_g=8, action_scale=0.0, noise_sigma=0.05)
        scenes, batches = synth_corpus(cfg)
        for s, b in zip(scenes, batches):
            means = b.grids.mean(axis=(1, 2))
            lab = s.partition.labels()
            d = np.linalg.norm(means[:, None] - means[None], axis=-1)
            same = lab[:, None] == lab[None]
            if (~same).any():
                assert d[same].max() < d[~same].min()


class TestCorpusIO:
    def test_save_load(self, tmp_path, labels, tiny_corpus):
        _, scenes, batches = tiny_corpus
        save_corpus(tmp_path, scenes, batches, labels)
        s2, b2 = load_corpus(tmp_path, labels)
        assert s2 == scenes
        for a, b in zip(batches, b2):
            np.testing.assert_array_equal(a.grids, b.grids)
        test_only, _ = load_corpus(tmp_path, labels, split="test")
        assert all(s.split == "test" for s in test_only)

    def test_missing_feature_file(self, tmp_path, labels, tiny_corpus):
        _, scenes, batches = tiny_corpus
        save_corpus(tmp_path, scenes, batches, labels)
        (tmp_path / "features" / f"{scenes[0].scene_id}.feat").unlink()
        with pytest.raises(FeatureError, match="missing"):
            load_corpus(tmp_path, labels)
