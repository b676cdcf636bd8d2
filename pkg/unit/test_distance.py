"""Test pairwise distances, fusion, tracklet and ensemble distances, and dumps."""

import numpy as np
import pytest

from components.distance import (
    ensemble_distances,
    fuse_distances,
    load_distance,
    pairwise,
    save_distance,
    tracklet_distances,
)
from components.errors import (
    DimensionMismatchError,
    MatrixShapeError,
    NonFiniteError,
    NotNormalizedError,
    SizeMismatchError,
)
from components.feature_ops import tracklet_aggregate
from components.models import DistanceKind, DistanceMatrix, FeatureSet, ImageMeta, TrackletMode
from unit.fixtures.factories import FeatureFactory
from unit.fixtures.oracles import squared_distances


def _random_matrix(rows: int, cols: int, seed: int) -> DistanceMatrix:
    data = np.random.default_rng(seed).uniform(0, 4, size=(rows, cols))
    return DistanceMatrix(
        data, tuple(f"q{i}" for i in range(rows)), tuple(f"g{j}" for j in range(cols))
    )


class TestPairwise:
    """Test the dense distance kernel."""

    def test_matches_double_loop(self):
        """A 20 x 20 instance agrees with a naive loop."""
        q = FeatureSet(FeatureFactory.unit_rows(20, 12, seed=1), normalized=True)
        g = FeatureSet(FeatureFactory.unit_rows(20, 12, seed=2), normalized=True)
        d = pairwise(q, g)
        assert d.kind is DistanceKind.RAW
        expected = squared_distances(q.data.astype(np.float64), g.data.astype(np.float64))
        assert np.allclose(d.data, expected, atol=1e-5)

    def test_identical_sets_zero_diagonal(self):
        """A set against itself has an exact zero diagonal."""
        fs = FeatureSet(FeatureFactory.unit_rows(9, 4, seed=3), normalized=True)
        d = pairwise(fs, fs)
        assert np.array_equal(np.diag(d.data), np.zeros(9))
        assert (d.data >= 0).all() and (d.data <= 4).all()

    def test_antipodal_vectors(self):
        """Opposite unit vectors are at distance 4."""
        q = FeatureSet(np.array([[1.0, 0.0]]), normalized=True)
        g = FeatureSet(np.array([[-1.0, 0.0]]), normalized=True)
        assert pairwise(q, g).data[0, 0] == pytest.approx(4.0)

    def test_shared_image_ids_are_zero(self):
        """The same image on both sides is at distance exactly zero."""
        rows = FeatureFactory.unit_rows(3, 5, seed=4)
        q = FeatureSet(rows[:2], normalized=True, ids=("a", "b"))
        g = FeatureSet(rows[1:], normalized=True, ids=("b", "c"))
        assert pairwise(q, g).data[1, 0] == 0.0

    @pytest.mark.parametrize("block_size,workers", [(1, 1), (3, 4), (512, 2)])
    def test_blocking_does_not_change_values(self, block_size, workers):
        """Block size and thread count do not change the result."""
        q = FeatureSet(FeatureFactory.unit_rows(17, 8, seed=5), normalized=True)
        g = FeatureSet(FeatureFactory.unit_rows(11, 8, seed=6), normalized=True)
        reference = pairwise(q, g, block_size=17, max_workers=1)
        assert np.allclose(pairwise(q, g, block_size, workers).data, reference.data, atol=1e-12)

    def test_requires_normalized(self):
        """Unnormalized sets are rejected."""
        fs = FeatureSet(np.ones((2, 2)))
        with pytest.raises(NotNormalizedError):
            pairwise(fs, fs)

    def test_dimension_mismatch(self):
        """Both sides share a dimension."""
        q = FeatureSet(np.eye(2), normalized=True)
        g = FeatureSet(np.eye(3), normalized=True)
        with pytest.raises(DimensionMismatchError):
            pairwise(q, g)


class TestFuseDistances:
    """Test subtraction of the auxiliary distances."""

    def test_zero_weights_reproduce_reid_distance(self):
        """lambda1 = lambda2 = 0 returns D_r bit-exactly."""
        d_r, d_c, d_o = (_random_matrix(4, 6, s) for s in (1, 2, 3))
        fused = fuse_distances(d_r, d_c, d_o, 0.0, 0.0)
        assert np.array_equal(fused.data, d_r.data)
        assert fused.kind is DistanceKind.FUSED

    def test_matches_direct_recomputation(self):
        """Fusion equals D_r - l1 D_c - l2 D_o entry by entry."""
        d_r, d_c, d_o = (_random_matrix(5, 7, s) for s in (4, 5, 6))
        fused = fuse_distances(d_r, d_c, d_o, 0.1, 0.05)
        for i in range(5):
            for j in range(7):
                direct = d_r.data[i, j] - 0.1 * d_c.data[i, j] - 0.05 * d_o.data[i, j]
                assert abs(fused.data[i, j] - direct) < 1e-7

    def test_negative_entries_are_kept(self):
        """Only the ordering matters, so negatives survive."""
        ids = ("q",), ("g",)
        d_r = DistanceMatrix(np.array([[0.0]]), *ids)
        d_c = DistanceMatrix(np.array([[2.0]]), *ids)
        fused = fuse_distances(d_r, d_c, d_c, 0.1, 0.05)
        assert fused.data[0, 0] == pytest.approx(-0.3)

    def test_shape_mismatch(self):
        """All three matrices share a layout."""
        with pytest.raises(MatrixShapeError):
            fuse_distances(_random_matrix(2, 3, 1), _random_matrix(3, 3, 2), _random_matrix(2, 3, 3), 0.1, 0.05)


class TestTrackletDistances:
    """Test the distance-level tracklet step."""

    def test_columns_replaced_by_weighted_member_distance(self):
        """Every member column holds the weighted mean over its tracklet."""
        rows = FeatureFactory.unit_rows(5, 4, seed=8)
        g_metas = [ImageMeta(f"g{i}", 0, tracklet_id=0 if i < 3 else 1) for i in range(5)]
        gallery = FeatureSet(rows, normalized=True, ids=tuple(m.image_id for m in g_metas))
        tf = tracklet_aggregate(gallery, g_metas, TrackletMode.WEIGHTED)
        d = _random_matrix(2, 5, 9)
        d = DistanceMatrix(d.data, d.row_ids, gallery.ids)
        out = tracklet_distances(d, g_metas, tf)
        expected = d.data[:, :3] @ tf.weights[0]
        for j in range(3):
            assert np.allclose(out.data[:, j], expected)
        assert np.allclose(out.data[:, 3], d.data[:, 3:] @ tf.weights[1])


class TestEnsembleDistances:
    """Test averaging of per-model distances."""

    def test_entrywise_mean(self):
        """Two aligned matrices average entry by entry."""
        a, b = _random_matrix(3, 4, 1), _random_matrix(3, 4, 2)
        assert np.allclose(ensemble_distances([a, b]).data, (a.data + b.data) / 2)


class TestDistanceDump:
    """Test the raw distance dump with its JSON sidecar."""

    def test_f64_dump_is_exact(self, tmp_path):
        """Double precision dumps reload bit-identically."""
        d = _random_matrix(3, 5, 1)
        loaded = load_distance(save_distance(d, tmp_path / "d.json", dtype="f64le"))
        assert np.array_equal(loaded.data, d.data)
        assert loaded.row_ids == d.row_ids and loaded.col_ids == d.col_ids

    def test_f32_dump_keeps_masked_entries(self, tmp_path):
        """Single precision keeps +inf for masked entries."""
        data = np.array([[0.5, np.inf], [1.5, 2.0]])
        d = DistanceMatrix(data, ("a", "b"), ("x", "y"), DistanceKind.RERANKED, masked=True)
        loaded = load_distance(save_distance(d, tmp_path / "d.json"))
        assert loaded.masked
        assert loaded.kind is DistanceKind.RERANKED
        assert np.isinf(loaded.data[0, 1])
        assert np.allclose(loaded.data[np.isfinite(loaded.data)], [0.5, 1.5, 2.0])

    def test_truncated_dump(self, tmp_path):
        """The data file must hold rows x cols values."""
        path = save_distance(_random_matrix(2, 2, 3), tmp_path / "d.json")
        np.zeros(3, dtype="<f4").tofile(tmp_path / "d.bin")
        with pytest.raises(SizeMismatchError):
            load_distance(path)

    def test_unmasked_infinity_rejected(self):
        """Infinite entries are only allowed on masked matrices."""
        with pytest.raises(NonFiniteError):
            DistanceMatrix(np.array([[np.inf]]), ("a",), ("b",))
