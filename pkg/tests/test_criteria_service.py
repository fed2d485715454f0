import numpy as np
import pytest

from schemas.config import CRITERIA, CriterionWeights, LossWeights, RunConfig
from services.association_service import AssociationService
from services.criteria_service import CriteriaService
from services.deformation_service import DeformationService
from services.errors import NonFiniteError, SizeMismatchError
from services.hierarchy_service import HierarchyService
from services.matching_service import MatchingService, Objective, ShapeData
from models.deformation import DeformationParams
from tests.conftest import grid_mesh, random_mesh


def permutation(n, seed):
    return np.eye(n)[np.random.default_rng(seed).permutation(n)]


def uniform(n, m):
    return np.full((n, m), 1.0 / m)


def spread(c):
    return float(np.sum((c - c.mean(axis=0)) ** 2))


class TestGeodesicLoss:

    def test_identity(self):
        d = np.random.default_rng(0).uniform(size=(5, 5))
        d = d + d.T
        assert CriteriaService.geodesic_loss(np.eye(5), np.eye(5), d, d) == 0.0

    def test_permuted_isometry(self):
        rng = np.random.default_rng(1)
        d_x = rng.uniform(size=(6, 6))
        d_x = d_x + d_x.T
        p = permutation(6, 2)
        d_y = p.T @ d_x @ p
        assert CriteriaService.geodesic_loss(p, p.T, d_x, d_y) == pytest.approx(0.0, abs=1e-24)

    def test_shape_check(self):
        with pytest.raises(SizeMismatchError):
            CriteriaService.geodesic_loss(np.eye(3), np.eye(3), np.eye(3), np.eye(4))


class TestCycleLoss:

    def test_inverse_permutations(self):
        p = permutation(5, 3)
        c_x = np.random.default_rng(0).normal(size=(5, 3))
        c_y = np.random.default_rng(1).normal(size=(5, 3))
        assert CriteriaService.cycle_loss(p, p.T, c_x, c_y) == 0.0

    def test_uniform_maps_collapse_to_centroids(self):
        rng = np.random.default_rng(2)
        c_x, c_y = rng.normal(size=(4, 3)), rng.normal(size=(6, 3))
        value = CriteriaService.cycle_loss(uniform(4, 6), uniform(6, 4), c_x, c_y)
        assert value == pytest.approx(spread(c_x) + spread(c_y), rel=1e-12)

    def test_single_patches(self):
        value = CriteriaService.cycle_loss(np.ones((1, 1)), np.ones((1, 1)), np.ones((1, 3)), np.zeros((1, 3)))
        assert value == 0.0


class TestSelfReconstructionLoss:

    def test_identity(self):
        c = np.random.default_rng(0).normal(size=(5, 3))
        assert CriteriaService.self_reconstruction_loss(np.eye(5), c, np.eye(5), c) == 0.0

    def test_uniform(self):
        rng = np.random.default_rng(3)
        c_x, c_y = rng.normal(size=(5, 3)), rng.normal(size=(3, 3))
        value = CriteriaService.self_reconstruction_loss(uniform(5, 5), c_x, uniform(3, 3), c_y)
        assert value == pytest.approx(spread(c_x) + spread(c_y), rel=1e-12)

    def test_coincident_centers_split_mass(self):
        c = np.array([[1.0, 2.0, 3.0], [1.0, 2.0, 3.0], [0.0, 0.0, 0.0]])
        pi = np.array([[0.5, 0.5, 0.0], [0.5, 0.5, 0.0], [0.0, 0.0, 1.0]])
        assert CriteriaService.self_reconstruction_loss(pi, c, pi, c) == 0.0


class TestMatchingLoss:

    def test_identity(self):
        c = np.random.default_rng(0).normal(size=(4, 3))
        assert CriteriaService.matching_loss(c, np.eye(4), c, c, np.eye(4), c) == 0.0

    def test_translated_target(self):
        c_x = np.random.default_rng(1).normal(size=(4, 3))
        t = np.array([0.5, -1.0, 2.0])
        c_y = c_x + t
        value = CriteriaService.matching_loss(c_x, np.eye(4), c_y, c_y, np.eye(4), c_x)
        assert value == pytest.approx(2 * 4 * t.dot(t), rel=1e-12)


class TestTotalLoss:

    def weights(self, **values):
        level = CriterionWeights(**{k: values.get(k, 0.0) for k in CRITERIA})
        return LossWeights(levels=[CriterionWeights(geodesic=0, cycle=0, reconstruction=0, matching=0, rigidity=0), level])

    def test_all_zero(self):
        report = CriteriaService.total_loss([{}, {"cycle": 3.0, "rigidity": 2.0}], self.weights())
        assert report.total == 0.0
        assert report.levels[1].cycle == 3.0

    def test_single_weight(self):
        report = CriteriaService.total_loss([{}, {"cycle": 3.0, "rigidity": 2.0}], self.weights(rigidity=0.25))
        assert report.total == 0.5

    def test_default_weights_hand_sum(self):
        rng = np.random.default_rng(0)
        terms = [
            {k: float(rng.uniform()) for k in CRITERIA if k != "geodesic"},
            {k: float(rng.uniform()) for k in CRITERIA},
        ]
        weights = LossWeights.default(2)
        expected = sum(weights.weight(l, k) * v for l, t in enumerate(terms) for k, v in t.items())
        assert CriteriaService.total_loss(terms, weights).total == pytest.approx(expected, abs=1e-9)

    def test_level_zero_geodesic_weight_forced_off(self):
        weights = LossWeights(levels=[CriterionWeights(geodesic=5.0)])
        assert weights.weight(0, "geodesic") == 0.0

    def test_nonfinite_names_level_and_criterion(self):
        with pytest.raises(NonFiniteError, match="cycle criterion at level 1"):
            CriteriaService.total_loss([{}, {"cycle": float("nan")}], self.weights(cycle=1.0))

    def test_unknown_criterion(self):
        with pytest.raises(ValueError):
            CriteriaService.total_loss([{"smoothness": 1.0}], LossWeights.default(1))


def toy_objective(weights):
    """Two small meshes, two levels, d = 4, perturbed deformation parameters"""
    config = RunConfig(patch_counts=[5], feature_dims=4, tau=0.5, geometric_seeding=False, seed=1)
    meshes = {"x": grid_mesh(5, 5, spacing=0.25), "y": random_mesh(np.random.default_rng(4), 5, 5)}
    rng = np.random.default_rng(6)
    shapes, features, deformation = {}, {}, {}
    for s, mesh in meshes.items():
        h = HierarchyService.build_hierarchy(mesh, config.patch_counts, seed=config.seed)
        shapes[s] = ShapeData(mesh, h, config)
        features[s] = AssociationService.init_features(h, config.dims, seed=config.seed, init_scale=1.0)
        params = DeformationParams.identity(h)
        for r, u in zip(params.rot6, params.u):
            r += rng.normal(scale=0.2, size=r.shape)
            u += rng.normal(scale=0.1, size=u.shape)
        deformation[s] = params
    params = MatchingService.parameters(features, deformation)
    return Objective(shapes, params, config, weights), params


def only(criterion):
    values = {k: (1.0 if k == criterion else 0.0) for k in CRITERIA}
    return LossWeights(levels=[CriterionWeights(**values), CriterionWeights(**values)])


@pytest.mark.parametrize("criterion", list(CRITERIA) + ["total"])
def test_gradients_match_finite_differences(criterion):
    weights = LossWeights.default(2) if criterion == "total" else only(criterion)
    objective, params = toy_objective(weights)
    _, grads = objective.evaluate(0, 0, 1e-3)
    rng = np.random.default_rng(0)
    h = 1e-5

    def loss():
        objective.tape.forward()
        return float(objective.total.value)

    for name, value in params.items():
        flat = value.reshape(-1)
        picks = rng.choice(flat.size, size=min(6, flat.size), replace=False)
        for k in picks:
            old = flat[k]
            flat[k] = old + h
            up = loss()
            flat[k] = old - h
            down = loss()
            flat[k] = old
            numeric = (up - down) / (2 * h)
            analytic = grads[name].reshape(-1)[k]
            assert abs(analytic - numeric) <= 1e-4 * abs(numeric) + 1e-6, (name, k)


def test_rigidity_matches_energy():
    objective, params = toy_objective(only("rigidity"))
    report, _ = objective.evaluate(0, 0, 1e-3)
    expected = 0.0
    for s in ("x", "y"):
        data = objective.shapes[s]
        for level in range(2):
            p = DeformationParams(
                rot6=[params[f"{s}.rot6.{l}"] for l in range(2)],
                u=[params[f"{s}.u.{l}"] for l in range(2)],
            )
            expected += DeformationService.rigidity_energy(data.mesh, data.hierarchy, level, p, data.blend(level))
    got = sum(lvl.rigidity for lvl in report.levels)
    assert got == pytest.approx(expected, rel=1e-12)
