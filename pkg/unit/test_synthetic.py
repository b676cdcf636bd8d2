"""Test the synthetic bench and the held-out query split."""

import numpy as np
import pytest

from components.errors import ConfigError, MissingIdentityError
from components.models import NO_TRACKLET, ImageMeta, View
from components.synthetic import (
    split_query_gallery,
    synth_auxiliary,
    synth_generate,
    synth_views,
    tracklet_headings,
)
from unit.fixtures.factories import STANDARD_FIXTURE, FeatureFactory


class TestSynthGenerate:
    """Test fixture generation."""

    def test_layout(self, standard_set):
        """Ids, cameras and tracklets follow the documented scheme."""
        fs, metas = standard_set
        assert fs.count == 40 * 2 * 5
        assert fs.dim == 32
        assert fs.normalized
        first = metas[0]
        assert first.image_id == "id0000_t0_f0"
        assert metas[5].image_id == "id0000_t1_f0"
        assert metas[5].camera_id == 1
        assert metas[5].tracklet_id == 1
        last = metas[-1]
        assert (last.identity, last.camera_id, last.tracklet_id) == (39, (39 + 1) % 4, 79)

    def test_same_seed_same_bytes(self):
        """Generation is a pure function of its arguments."""
        a, _ = synth_generate(**STANDARD_FIXTURE, seed=7)
        b, _ = synth_generate(**STANDARD_FIXTURE, seed=7)
        c, _ = synth_generate(**STANDARD_FIXTURE, seed=8)
        assert a.data.tobytes() == b.data.tobytes()
        assert a.data.tobytes() != c.data.tobytes()

    def test_zero_noise_tracklets_collapse(self):
        """Without noise every frame of a tracklet is the same vector."""
        fs, metas = synth_generate(3, 2, 2, 4, 8, 0.5, 0.0, seed=1)
        rows = fs.data[:4]
        assert np.allclose(rows, rows[0], atol=1e-6)

    def test_identity_closer_than_other_identity_without_bias(self):
        """With no camera offset and little noise, identities separate cleanly."""
        fs, metas = synth_generate(5, 2, 2, 3, 16, 0.0, 0.01, seed=3)
        ids = np.array([m.identity for m in metas])
        cos = fs.data @ fs.data.T
        same = ids[:, None] == ids[None, :]
        assert cos[same].min() > cos[~same].max()

    def test_camera_offsets_are_orthogonal(self):
        """A dominant camera offset makes cameras mutually orthogonal."""
        fs, metas = synth_generate(6, 4, 2, 2, 16, 100.0, 0.0, seed=4)
        cams = np.array([m.camera_id for m in metas])
        cos = fs.data.astype(np.float64) @ fs.data.T
        same = cams[:, None] == cams[None, :]
        assert cos[same].min() > 0.99
        assert np.abs(cos[~same]).max() < 0.05

    def test_more_cameras_than_dimensions(self):
        """Offsets stay unit vectors when they cannot be orthogonal."""
        fs, metas = synth_generate(4, 5, 2, 2, 3, 0.5, 0.1, seed=2)
        assert fs.count == 16
        assert {m.camera_id for m in metas} == {0, 1, 2, 3, 4}

    def test_invalid_counts(self):
        """Counts must be positive integers."""
        with pytest.raises(ConfigError):
            synth_generate(0, 2, 2, 2, 8, 0.5, 0.1, seed=0)
        with pytest.raises(ConfigError):
            synth_generate(2, 2, 2, 2, 1, 0.5, 0.1, seed=0)

    def test_heading_bias_changes_features(self):
        """A heading offset moves the features; zero leaves them untouched."""
        plain, _ = synth_generate(**STANDARD_FIXTURE, seed=0)
        same, _ = synth_generate(**STANDARD_FIXTURE, seed=0, orientation_offset_scale=0.0)
        biased, _ = synth_generate(**STANDARD_FIXTURE, seed=0, orientation_offset_scale=0.3)
        assert np.array_equal(plain.data, same.data)
        assert not np.allclose(plain.data, biased.data)


class TestHeadings:
    """Test the per-tracklet heading assignment."""

    def test_consecutive_tracklets_are_opposite(self, standard_set):
        """An identity's second tracklet heads the other way."""
        _, metas = standard_set
        headings = tracklet_headings(metas, seed=0)
        for identity in range(40):
            first, second = headings[2 * identity], headings[2 * identity + 1]
            assert (second - first) % 36 == 18

    def test_orientation_embeddings_match_headings(self, standard_set):
        """Noise-free orientation embeddings sit at the heading bin centres."""
        _, metas = standard_set
        aux = synth_auxiliary(metas, "orientation", 0.0, seed=0)
        headings = tracklet_headings(metas, seed=0)
        theta = np.arctan2(aux.data[:, 1], aux.data[:, 0]) % (2 * np.pi)
        expected = np.array([(headings[m.tracklet_key] + 0.5) * np.pi / 18 for m in metas])
        assert np.allclose(theta, expected, atol=1e-5)


class TestAuxiliaryAndViews:
    """Test auxiliary embeddings and augmentation views."""

    def test_camera_embedding_is_one_hot(self, feature_factory: FeatureFactory):
        """Noise-free camera embeddings are one-hot over camera ids."""
        metas = feature_factory.create_metas(3, cameras=[0, 2, 1])
        aux = synth_auxiliary(metas, "camera", 0.0, seed=0)
        assert aux.dim == 3
        assert np.array_equal(np.argmax(aux.data, axis=1), [0, 2, 1])

    def test_unknown_kind(self, feature_factory: FeatureFactory):
        """Only camera and orientation are supported."""
        with pytest.raises(ConfigError):
            synth_auxiliary(feature_factory.create_metas(2), "colour", 0.0, seed=0)

    def test_four_tagged_views(self, standard_set):
        """One normalized perturbation per view tag, image ids unchanged."""
        fs, metas = standard_set
        views = synth_views(fs, metas, 0.3, seed=1)
        assert [v[1][0].view for v in views] == list(View)
        for view_fs, view_metas in views:
            assert view_fs.normalized
            assert [m.image_id for m in view_metas] == [m.image_id for m in metas]
            assert not np.array_equal(view_fs.data, fs.data)


class TestSplitQueryGallery:
    """Test the held-out split."""

    def test_one_query_per_identity(self, standard_set):
        """Middle frame of the first tracklet, the rest of it dropped."""
        fs, metas = standard_set
        q, q_metas, g, g_metas = split_query_gallery(fs, metas)
        assert q.count == 40
        assert g.count == 40 * 5
        assert q_metas[0].image_id == "id0000_t0_f2"
        assert all(m.tracklet_id == NO_TRACKLET for m in q_metas)
        assert not any(m.image_id.startswith("id0000_t0") for m in g_metas)
        assert np.array_equal(q.data[0], fs.data[2])

    def test_unlabeled_input(self):
        """Splitting needs identities."""
        fs = FeatureFactory.create_set(2, 3)
        with pytest.raises(MissingIdentityError):
            split_query_gallery(fs, [ImageMeta("a", 0), ImageMeta("b", 0)])
