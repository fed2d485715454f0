import numpy as np
import pytest
from scipy import sparse

from models.association import FeatureField
from services.association_service import AssociationService, smoothing_operator
from services.errors import SizeMismatchError, ZeroFeatureError
from services.hierarchy_service import HierarchyService


@pytest.fixture
def sphere_hierarchy(sphere):
    return HierarchyService.build_hierarchy(sphere, [10, 4], seed=0)


class TestInitFeatures:

    def test_same_seed_same_field(self, sphere_hierarchy):
        a = AssociationService.init_features(sphere_hierarchy, [5, 4, 3], seed=8)
        b = AssociationService.init_features(sphere_hierarchy, [5, 4, 3], seed=8)
        for fa, fb in zip(a.levels, b.levels):
            np.testing.assert_array_equal(fa, fb)
        assert a.sizes == [42, 10, 4]
        assert a.dims == [5, 4, 3]

    def test_range(self, sphere_hierarchy):
        f = AssociationService.init_features(sphere_hierarchy, [4, 4, 4], seed=0, init_scale=0.2)
        for level in f.levels:
            assert np.abs(level).max() <= 0.2
            assert level.any(axis=1).all()

    def test_width_one_allowed(self, sphere_hierarchy):
        f = AssociationService.init_features(sphere_hierarchy, [1, 1, 1], seed=0)
        assert f.dims == [1, 1, 1]

    def test_geometric_seeding(self, tetrahedron):
        h = HierarchyService.build_hierarchy(tetrahedron, [2], seed=0)
        f = AssociationService.init_features(h, [6, 3], seed=0, mesh=tetrahedron, geometric_seeding=True)
        geometric = np.hstack([tetrahedron.vertices, tetrahedron.vertex_normals])
        expected = geometric / np.sqrt(np.mean(geometric ** 2))
        np.testing.assert_allclose(f.levels[0], expected, atol=1e-15)

    def test_dims_must_match_levels(self, sphere_hierarchy):
        with pytest.raises(SizeMismatchError):
            AssociationService.init_features(sphere_hierarchy, [4, 4], seed=0)


class TestCombine:

    def test_single_level_passes_through(self, sphere):
        h = HierarchyService.build_hierarchy(sphere, [], seed=0)
        field = AssociationService.init_features(h, [3], seed=1)
        combined = AssociationService.combine(h, field, smoothing_steps=0)
        np.testing.assert_array_equal(combined.levels[0], field.levels[0])

    def test_top_level_unchanged(self, sphere_hierarchy):
        field = AssociationService.init_features(sphere_hierarchy, [3, 3, 3], seed=1)
        combined = AssociationService.combine(sphere_hierarchy, field, smoothing_steps=2)
        np.testing.assert_array_equal(combined.levels[2], field.levels[2])
        assert combined.widths == [9, 6, 3]

    def test_constant_field_stays_constant(self, sphere_hierarchy):
        field = FeatureField([np.full((n, 2), 0.7) for n in sphere_hierarchy.level_sizes])
        combined = AssociationService.combine(sphere_hierarchy, field, smoothing_steps=3)
        for level in combined.levels:
            np.testing.assert_allclose(level, 0.7, atol=1e-15)

    def test_blocks_match_manual_repooling(self, sphere_hierarchy):
        h = sphere_hierarchy
        field = AssociationService.init_features(h, [2, 3, 4], seed=5)
        combined = AssociationService.combine(h, field, smoothing_steps=0)
        f0, f1, f2 = field.levels
        level1 = np.hstack([f1, HierarchyService.repool(h, 2, 1, f2)])
        level0 = np.hstack([f0, HierarchyService.repool(h, 1, 0, level1)])
        np.testing.assert_array_equal(combined.levels[1], level1)
        np.testing.assert_array_equal(combined.levels[0], level0)

    def test_smoothing_operator_rows(self):
        adj = sparse.csr_matrix(np.array([[0, 1, 1, 0], [1, 0, 0, 0], [1, 0, 0, 0], [0, 0, 0, 0]]))
        s = smoothing_operator(adj).toarray()
        np.testing.assert_allclose(s.sum(axis=1), 1.0)
        np.testing.assert_allclose(s[0], [0.5, 0.25, 0.25, 0.0])
        np.testing.assert_allclose(s[3], [0.0, 0.0, 0.0, 1.0])


class TestAssociate:

    def test_single_row(self):
        pxy, pyx = AssociationService.associate(np.array([[1.0, 2.0]]), np.array([[1.0, 2.0]]), tau=0.01)
        np.testing.assert_array_equal(pxy.matrix, [[1.0]])
        np.testing.assert_array_equal(pyx.matrix, [[1.0]])

    def test_equal_similarity_is_uniform(self):
        a = np.array([[1.0, 0.0, 0.0]])
        b = np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
        pxy, _ = AssociationService.associate(a, b, tau=0.01)
        np.testing.assert_allclose(pxy.matrix, [[0.5, 0.5]])

    def test_row_stochastic(self):
        rng = np.random.default_rng(0)
        pxy, pyx = AssociationService.associate(rng.normal(size=(7, 4)), rng.normal(size=(5, 4)), tau=0.01)
        assert pxy.shape == (7, 5)
        assert pyx.shape == (5, 7)
        assert pxy.is_row_stochastic()
        assert pyx.is_row_stochastic()

    def test_swapping_shapes_swaps_directions(self):
        rng = np.random.default_rng(1)
        a, b = rng.normal(size=(6, 3)), rng.normal(size=(4, 3))
        pxy, pyx = AssociationService.associate(a, b, tau=0.1)
        qxy, qyx = AssociationService.associate(b, a, tau=0.1)
        np.testing.assert_allclose(pxy.matrix, qyx.matrix, atol=1e-12)
        np.testing.assert_allclose(pyx.matrix, qxy.matrix, atol=1e-12)

    def test_invariant_to_positive_row_scaling(self):
        rng = np.random.default_rng(2)
        a, b = rng.normal(size=(6, 3)), rng.normal(size=(4, 3))
        scaled = a * rng.uniform(0.1, 10.0, size=(6, 1))
        np.testing.assert_allclose(
            AssociationService.associate(a, b, 0.05)[0].matrix,
            AssociationService.associate(scaled, b, 0.05)[0].matrix,
            atol=1e-12,
        )

    def test_zero_row_rejected(self):
        with pytest.raises(ZeroFeatureError):
            AssociationService.associate(np.zeros((2, 3)), np.ones((2, 3)), tau=0.1)

    def test_width_mismatch(self):
        with pytest.raises(SizeMismatchError):
            AssociationService.associate(np.ones((2, 3)), np.ones((2, 4)), tau=0.1)


class TestSelfAssociate:

    def test_orthonormal_rows_give_identity(self):
        pi = AssociationService.self_associate(np.eye(4), tau=0.01)
        np.testing.assert_allclose(pi.matrix, np.eye(4), atol=1e-40)

    def test_duplicated_rows_split_mass(self):
        a = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        pi = AssociationService.self_associate(a, tau=0.01).matrix
        assert pi[0, 0] == pytest.approx(0.5, abs=1e-12)
        assert pi[0, 1] == pytest.approx(0.5, abs=1e-12)

    def test_single_patch(self):
        np.testing.assert_array_equal(AssociationService.self_associate(np.ones((1, 3)), 0.01).matrix, [[1.0]])


class TestExtractPointMap:

    def test_near_diagonal(self):
        pi = np.full((4, 4), 0.1) + 0.6 * np.eye(4)
        np.testing.assert_array_equal(AssociationService.extract_point_map(pi), np.arange(4))

    def test_uniform_row_takes_lowest_index(self):
        np.testing.assert_array_equal(AssociationService.extract_point_map(np.full((2, 5), 0.2)), [0, 0])
