"""
Matching service for the patchmatch toolkit.
Per-pair optimization of feature fields and patch deformations under the
weighted criteria, and extraction of the final correspondence.
"""
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from models.association import FeatureField
from models.deformation import BlendWeights, DeformationParams, RigidityTerms
from models.hierarchy import PatchHierarchy
from models.mesh import TriMesh
from schemas.config import LossWeights, RunConfig
from schemas.report import LossReport
from services.association_service import AssociationService
from services.criteria_service import CriteriaService
from services.deformation_service import DeformationService
from services.geodesic_service import GeodesicService
from services.hierarchy_service import HierarchyService
from services.optim_service import OptimService, OptimState
from services import tape as T
from services.tape import Tape, Tensor

logger = logging.getLogger(__name__)

ASSOCIATION_CRITERIA = ("geodesic", "cycle", "reconstruction", "matching")
SHAPES = ("x", "y")


class ShapeData:
    """
    Constant inputs of one shape: mesh, hierarchy and the per-level
    distance matrices, blend weights and rigidity triples, built on demand.
    """

    def __init__(self, mesh: TriMesh, hierarchy: PatchHierarchy, config: RunConfig, cache_dir: Optional[Path] = None):
        self.mesh = mesh
        self.hierarchy = hierarchy
        self.config = config
        self.cache_dir = cache_dir
        self._distances: Dict[int, np.ndarray] = {}
        self._blends: Dict[int, BlendWeights] = {}
        self._rigidity: Dict[int, RigidityTerms] = {}

    def distances(self, level: int) -> np.ndarray:
        if level not in self._distances:
            h = self.hierarchy
            matrix = GeodesicService.cached_center_matrix(
                self.mesh, h.centers[level], self.config.normalization,
                cache_dir=self.cache_dir, distances=h.center_distances[level],
            )
            self._distances[level] = matrix.values
        return self._distances[level]

    def blend(self, level: int) -> BlendWeights:
        if level not in self._blends:
            self._blends[level] = DeformationService.blend_weights(
                self.mesh, self.hierarchy, level, self.config.sigma_scale, self.config.support_sigmas
            )
        return self._blends[level]

    def rigidity(self, level: int) -> RigidityTerms:
        if level not in self._rigidity:
            self._rigidity[level] = DeformationService.rigidity_terms(
                self.mesh, self.hierarchy, level, self.blend(level)
            )
        return self._rigidity[level]


def parameter_name(shape: str, kind: str, level: int) -> str:
    return f"{shape}.{kind}.{level}"


class Objective:
    """
    The loss graph for one weight setting. Built once, then replayed every
    step while the parameter arrays change in place.
    """

    def __init__(self, shapes: Dict[str, ShapeData], params: Dict[str, np.ndarray], config: RunConfig, weights: LossWeights):
        self.shapes = shapes
        self.weights = weights
        self.tape = Tape()
        self.leaves: Dict[str, Tensor] = {name: self.tape.leaf(value, name) for name, value in params.items()}
        n_levels = config.n_levels
        active = [l for l in range(n_levels) if any(w > 0 for w in weights.levels[l].model_dump().values())]
        self.terms: List[Dict[str, Tensor]] = [{} for _ in range(n_levels)]
        if not active:
            self.total = self.tape.constant(0.0)
            return

        lowest = min(active)
        combined = {
            s: AssociationService.combine_tensors(
                shapes[s].hierarchy,
                [self.leaves[parameter_name(s, "features", l)] for l in range(n_levels)],
                config.smoothing_steps,
            )
            for s in SHAPES
        }
        for l in range(lowest, n_levels):
            w = weights.levels[l]
            x, y = shapes["x"], shapes["y"]
            cx = x.hierarchy.center_positions[l]
            cy = y.hierarchy.center_positions[l]
            terms = self.terms[l]
            needs_association = any(w.get(k) > 0 for k in ASSOCIATION_CRITERIA)
            if needs_association:
                pxy, pyx = AssociationService.associate_tensors(combined["x"][l], combined["y"][l], config.tau)
            if w.geodesic > 0:
                terms["geodesic"] = CriteriaService.geodesic_loss(pxy, pyx, x.distances(l), y.distances(l))
            if w.cycle > 0:
                terms["cycle"] = CriteriaService.cycle_loss(pxy, pyx, cx, cy)
            if w.reconstruction > 0:
                pxx = AssociationService.self_associate_tensor(combined["x"][l], config.tau)
                pyy = AssociationService.self_associate_tensor(combined["y"][l], config.tau)
                terms["reconstruction"] = CriteriaService.self_reconstruction_loss(pxx, cx, pyy, cy)
            if config.use_deformation and (w.matching > 0 or w.rigidity > 0):
                rotations = {
                    s: DeformationService.decode_rotation_tensor(self.leaves[parameter_name(s, "rot6", l)])
                    for s in SHAPES
                }
                u = {s: self.leaves[parameter_name(s, "u", l)] for s in SHAPES}
                if w.matching > 0:
                    deformed = {}
                    for s in SHAPES:
                        data = shapes[s]
                        h = data.hierarchy
                        positions = DeformationService.deform_tensors(
                            rotations[s], u[s], data.mesh.vertices, h.center_positions[l], data.blend(l)
                        )
                        deformed[s] = T.gather_rows(positions, h.centers[l])
                    terms["matching"] = CriteriaService.matching_loss(deformed["x"], pxy, cy, deformed["y"], pyx, cx)
                if w.rigidity > 0:
                    terms["rigidity"] = (
                        DeformationService.rigidity_tensor(rotations["x"], u["x"], x.rigidity(l))
                        + DeformationService.rigidity_tensor(rotations["y"], u["y"], y.rigidity(l))
                    )
        self.total = CriteriaService.total_tensor(self.terms, weights, self.tape)
        logger.debug(f"objective graph with {len(self.tape)} nodes over levels {active}")

    def evaluate(self, step: int, epoch: int, lr: float) -> Tuple[LossReport, Dict[str, np.ndarray]]:
        """Replay the graph, then differentiate the total"""
        self.tape.forward()
        report = CriteriaService.report(self.terms, self.total, step=step, epoch=epoch, lr=lr)
        self.tape.backward(self.total)
        return report, {name: leaf.grad for name, leaf in self.leaves.items()}


@dataclass
class MatchResult:
    """Everything one matching run produces"""
    map_xy: np.ndarray
    map_yx: np.ndarray
    initial_map_xy: np.ndarray
    initial_map_yx: np.ndarray
    associations: List[Tuple[np.ndarray, np.ndarray]]
    history: List[LossReport]
    hierarchy_x: PatchHierarchy
    hierarchy_y: PatchHierarchy
    features_x: FeatureField
    features_y: FeatureField
    params_x: Optional[DeformationParams] = None
    params_y: Optional[DeformationParams] = None
    deformed_x: List[np.ndarray] = field(default_factory=list)
    deformed_y: List[np.ndarray] = field(default_factory=list)
    reinitialized: int = 0

    @property
    def steps(self) -> int:
        return len(self.history)

    @property
    def final_loss(self) -> Optional[float]:
        return self.history[-1].total if self.history else None


class MatchingService:
    """
    Service for per-pair correspondence optimization.
    """

    @staticmethod
    def active_from(epoch: int, n_levels: int, coarse_to_fine_epochs: int) -> int:
        """Finest level carrying weight in `epoch`; one more level every K epochs"""
        if coarse_to_fine_epochs <= 0:
            return 0
        return max(0, n_levels - 1 - epoch // coarse_to_fine_epochs)

    @staticmethod
    def parameters(
        features: Dict[str, FeatureField],
        deformation: Dict[str, Optional[DeformationParams]],
    ) -> Dict[str, np.ndarray]:
        """Named views of every optimizable array"""
        params = {}
        for s in SHAPES:
            for l, f in enumerate(features[s].levels):
                params[parameter_name(s, "features", l)] = f
            if deformation[s] is not None:
                for l, (r, u) in enumerate(zip(deformation[s].rot6, deformation[s].u)):
                    params[parameter_name(s, "rot6", l)] = r
                    params[parameter_name(s, "u", l)] = u
        return params

    @staticmethod
    def associations(shapes: Dict[str, ShapeData], features: Dict[str, FeatureField], config: RunConfig):
        """Pi_xy and Pi_yx at every level for the current features"""
        combined = {
            s: AssociationService.combine(shapes[s].hierarchy, features[s], config.smoothing_steps)
            for s in SHAPES
        }
        out = []
        for l in range(config.n_levels):
            pxy, pyx = AssociationService.associate(
                combined["x"].levels[l], combined["y"].levels[l], config.tau, level=l
            )
            out.append((pxy.matrix, pyx.matrix))
        return out

    @staticmethod
    def point_maps(shapes: Dict[str, ShapeData], features: Dict[str, FeatureField], config: RunConfig):
        """Vertex-level argmax maps in both directions"""
        combined = {
            s: AssociationService.combine(shapes[s].hierarchy, features[s], config.smoothing_steps).levels[0]
            for s in SHAPES
        }
        pxy, pyx = AssociationService.associate(combined["x"], combined["y"], config.tau)
        return AssociationService.extract_point_map(pxy), AssociationService.extract_point_map(pyx)

    @staticmethod
    def reset_degenerate(deformation: Dict[str, Optional[DeformationParams]], state: OptimState) -> int:
        """Re-initialize degenerate rotations to the identity and forget their moments"""
        count = 0
        for s in SHAPES:
            if deformation[s] is None:
                continue
            for l, rot6 in enumerate(deformation[s].rot6):
                bad = DeformationService.reset_degenerate(rot6)
                if bad.size:
                    name = parameter_name(s, "rot6", l)
                    state.reset_rows(name, bad)
                    logger.warning(f"Re-initialized {bad.size} degenerate rotations in {name}")
                    count += int(bad.size)
        return count

    @staticmethod
    def match_pair(
        mesh_x: TriMesh,
        mesh_y: TriMesh,
        config: RunConfig,
        on_step: Optional[Callable[[LossReport], None]] = None,
        cache_dir: Optional[Path] = None,
    ) -> MatchResult:
        """
        Optimize features and deformations of one pair and extract the maps.

        Args:
            mesh_x: Source shape
            mesh_y: Target shape
            config: Validated run configuration
            on_step: Called with every step's LossReport
            cache_dir: Geodesic cache directory, None disables caching

        Returns:
            MatchResult with maps in both directions and all artifacts
        """
        counts = config.patch_counts
        hierarchies = {
            "x": HierarchyService.build_hierarchy(mesh_x, counts, seed=config.seed),
            "y": HierarchyService.build_hierarchy(mesh_y, counts, seed=config.seed),
        }
        meshes = {"x": mesh_x, "y": mesh_y}
        shapes = {s: ShapeData(meshes[s], hierarchies[s], config, cache_dir) for s in SHAPES}
        features = {
            s: AssociationService.init_features(
                hierarchies[s], config.dims, seed=config.seed, mesh=meshes[s],
                geometric_seeding=config.geometric_seeding, init_scale=config.init_scale,
            )
            for s in SHAPES
        }
        deformation = {
            s: DeformationParams.identity(hierarchies[s]) if config.use_deformation else None
            for s in SHAPES
        }
        params = MatchingService.parameters(features, deformation)
        state = OptimState(
            params=params,
            clip_norm=config.clip_norm,
            beta1=config.beta1,
            beta2=config.beta2,
            eps=config.eps,
            lr_schedule=list(config.lr_schedule),
            lr_milestones=list(config.lr_milestones),
        )
        initial_xy, initial_yx = MatchingService.point_maps(shapes, features, config)
        logger.info(
            f"Matching {mesh_x.name} ({mesh_x.n_vertices} vertices) to {mesh_y.name} "
            f"({mesh_y.n_vertices} vertices), levels {hierarchies['x'].level_sizes}"
        )

        base = config.weights
        history: List[LossReport] = []
        objective: Optional[Objective] = None
        active = None
        reinitialized = 0
        step = 0
        for epoch in range(config.epochs):
            level_from = MatchingService.active_from(epoch, config.n_levels, config.coarse_to_fine_epochs)
            if objective is None or level_from != active:
                active = level_from
                objective = Objective(shapes, params, config, base.masked(active, config.use_deformation))
            lr = OptimService.lr_at(epoch, config.lr_schedule, config.lr_milestones)
            for _ in range(config.steps_per_epoch):
                reinitialized += MatchingService.reset_degenerate(deformation, state)
                report, grads = objective.evaluate(step, epoch, lr)
                grad_norm = OptimService.adam_step(state, grads, lr)
                logger.debug(f"step {step}: loss {report.total:.6g}, gradient norm {grad_norm:.3g}")
                history.append(report)
                if on_step is not None:
                    on_step(report)
                step += 1
            logger.info(f"Epoch {epoch + 1}/{config.epochs}: loss {history[-1].total:.6g} (lr {lr:g})")

        reinitialized += MatchingService.reset_degenerate(deformation, state)
        associations = MatchingService.associations(shapes, features, config)
        map_xy = AssociationService.extract_point_map(associations[0][0])
        map_yx = AssociationService.extract_point_map(associations[0][1])
        result = MatchResult(
            map_xy=map_xy,
            map_yx=map_yx,
            initial_map_xy=initial_xy,
            initial_map_yx=initial_yx,
            associations=associations,
            history=history,
            hierarchy_x=hierarchies["x"],
            hierarchy_y=hierarchies["y"],
            features_x=features["x"],
            features_y=features["y"],
            params_x=deformation["x"],
            params_y=deformation["y"],
            reinitialized=reinitialized,
        )
        if config.use_deformation:
            for s, target in (("x", result.deformed_x), ("y", result.deformed_y)):
                for l in range(config.n_levels):
                    positions, _ = DeformationService.deform(
                        meshes[s], hierarchies[s], l, deformation[s], shapes[s].blend(l)
                    )
                    target.append(positions)
        logger.info(f"Finished {step} steps, final loss {result.final_loss}")
        return result
