"""
Deformation service for the patchmatch toolkit.
6D rotation decoding, Gaussian geodesic blending, blended patch-wise rigid
deformation and the rigidity energy between neighboring patches.
"""
import logging
from typing import Optional, Tuple

import numpy as np
from scipy import sparse

from models.deformation import BlendWeights, DeformationParams, IDENTITY_ROT6, RigidityTerms
from models.hierarchy import PatchHierarchy
from models.mesh import TriMesh
from services import tape as T
from services.errors import DegenerateRotationError, SizeMismatchError
from services.geodesic_service import DIJKSTRA_CHUNK, GeodesicService
from services.tape import Tape, Tensor

logger = logging.getLogger(__name__)

DEGENERATE_NORM = 1e-12
TINY = np.finfo(np.float64).tiny
# blend support radius in sigmas; 6 keeps the truncation error below 1e-6 of the bbox diagonal
DEFAULT_SUPPORT_SIGMAS = 6.0


class DeformationService:
    """
    Service for the patch-wise near-rigid deformation model.
    """

    @staticmethod
    def degenerate_rows(rot6) -> np.ndarray:
        """Rows whose first vector or orthogonal residual is below 1e-12"""
        rot6 = np.atleast_2d(np.asarray(rot6, dtype=np.float64))
        a, b = rot6[:, :3], rot6[:, 3:]
        na = np.linalg.norm(a, axis=1)
        r1 = a / np.where(na < DEGENERATE_NORM, 1.0, na)[:, None]
        residual = b - np.sum(b * r1, axis=1, keepdims=True) * r1
        nr = np.linalg.norm(residual, axis=1)
        return np.flatnonzero((na < DEGENERATE_NORM) | (nr < DEGENERATE_NORM))

    @staticmethod
    def decode_rotation_tensor(rot6: Tensor) -> Tensor:
        """(k, 6) -> (k, 3, 3) with columns r1, r2, r3 = r1 x r2"""
        a = rot6[:, 0:3]
        b = rot6[:, 3:6]
        r1 = a / T.row_norms(a)
        residual = b - T.reduce_sum(b * r1, axis=1, keepdims=True) * r1
        r2 = residual / T.row_norms(residual)
        r3 = T.cross(r1, r2)
        return T.stack([r1, r2, r3], axis=2)

    @staticmethod
    def decode_rotation(rot6) -> np.ndarray:
        """
        Gram-Schmidt decoding of 6D rotation parameters.

        Args:
            rot6: (6,) or (k, 6)

        Returns:
            (3, 3) or (k, 3, 3) rotation matrices
        """
        rot6 = np.asarray(rot6, dtype=np.float64)
        single = rot6.ndim == 1
        batch = np.atleast_2d(rot6)
        if batch.shape[1] != 6:
            raise SizeMismatchError(f"rotation parameters need 6 columns, got {batch.shape[1]}")
        bad = DeformationService.degenerate_rows(batch)
        if bad.size:
            raise DegenerateRotationError(bad)
        R = DeformationService.decode_rotation_tensor(Tape().constant(batch)).value
        return R[0] if single else R

    @staticmethod
    def reset_degenerate(rot6: np.ndarray) -> np.ndarray:
        """Reset degenerate rows to the identity in place; returns their indices"""
        bad = DeformationService.degenerate_rows(rot6)
        if bad.size:
            rot6[bad] = IDENTITY_ROT6
        return bad

    @staticmethod
    def blend_weights(
        mesh: TriMesh,
        hierarchy: PatchHierarchy,
        level: int,
        sigma_scale: float = 1.0,
        support_sigmas: float = DEFAULT_SUPPORT_SIGMAS,
    ) -> BlendWeights:
        """
        Normalized Gaussians of the geodesic distance to each patch center.

        Args:
            mesh: Mesh the hierarchy was built on
            hierarchy: Patch hierarchy
            level: Level whose patches blend
            sigma_scale: sigma_i = sigma_scale * max(patch radius, mean edge length)
            support_sigmas: Truncation radius in sigmas; the own patch is always kept
        """
        if sigma_scale <= 0 or support_sigmas <= 0:
            raise ValueError("sigma_scale and support_sigmas must be positive")
        hierarchy.check_level(level)
        n_patches = hierarchy.level_sizes[level]
        centers = hierarchy.centers[level]
        assignment = hierarchy.assignment[level]
        floor = max(mesh.mean_edge_length, TINY)
        sigma = sigma_scale * np.maximum(hierarchy.patch_radius[level], floor)
        reach = support_sigmas * sigma
        stored = hierarchy.center_distances[level]

        rows, cols, vals = [], [], []
        for start in range(0, n_patches, DIJKSTRA_CHUNK):
            patches = np.arange(start, min(start + DIJKSTRA_CHUNK, n_patches))
            if stored is not None:
                dist = stored[patches]
            else:
                dist = GeodesicService.multi_source(mesh, centers[patches], limit=float(reach[patches].max()))
            own = assignment[None, :] == patches[:, None]
            keep = (dist <= reach[patches, None]) | own
            p, v = np.nonzero(keep)
            d = dist[p, v]
            s = sigma[patches[p]]
            w = np.exp(-(d * d) / (2.0 * s * s))
            # the own patch never underflows to an empty row
            w = np.where(own[p, v], np.maximum(w, TINY), w)
            rows.append(v)
            cols.append(patches[p])
            vals.append(w)

        weights = sparse.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(mesh.n_vertices, n_patches),
        )
        weights.sum_duplicates()
        weights.sort_indices()
        totals = np.asarray(weights.sum(axis=1)).ravel()
        alpha = (sparse.diags(1.0 / totals) @ weights).tocsr()
        logger.debug(f"{mesh.name}: level {level} blend weights with {alpha.nnz} entries")
        return BlendWeights(level=level, alpha=alpha, sigma=sigma)

    @staticmethod
    def deform_tensors(
        rotations: Tensor,
        u: Tensor,
        rest_positions: np.ndarray,
        centers: np.ndarray,
        weights: BlendWeights,
    ) -> Tensor:
        """
        x(v) = sum_i alpha_i(v) (R_i (x0(v) - c_i) + u_i), evaluated as
        (sum_i alpha_i R_i) x0 - sum_i alpha_i (R_i c_i - u_i).
        """
        tape = rotations.tape
        n = rotations.shape[0]
        n_vertices = len(rest_positions)
        blended = T.reshape(T.sparse_matmul(weights.alpha, T.reshape(rotations, (n, 9))), (n_vertices, 3, 3))
        rotated = T.batched_matvec(blended, tape.constant(rest_positions))
        shift = T.batched_matvec(rotations, tape.constant(centers)) - u
        return rotated - T.sparse_matmul(weights.alpha, shift)

    @staticmethod
    def deform(
        mesh: TriMesh,
        hierarchy: PatchHierarchy,
        level: int,
        params: DeformationParams,
        weights: BlendWeights,
    ) -> Tuple[np.ndarray, np.ndarray]:
        """
        Blend the per-patch rigid transforms of one level.

        Returns:
            (deformed vertex positions, deformed center positions)
        """
        hierarchy.check_level(level)
        n = hierarchy.level_sizes[level]
        rot6, u = params.rot6[level], params.u[level]
        if rot6.shape != (n, 6) or u.shape != (n, 3) or weights.n_patches != n:
            raise SizeMismatchError(f"deformation parameters do not match the {n} patches of level {level}")
        bad = DeformationService.degenerate_rows(rot6)
        if bad.size:
            raise DegenerateRotationError(bad)
        tape = Tape()
        R = DeformationService.decode_rotation_tensor(tape.constant(rot6))
        x = DeformationService.deform_tensors(
            R, tape.constant(u), mesh.vertices, hierarchy.center_positions[level], weights
        )
        return x.value, x.value[hierarchy.centers[level]]

    @staticmethod
    def rigidity_terms(
        mesh: TriMesh,
        hierarchy: PatchHierarchy,
        level: int,
        weights: BlendWeights,
    ) -> RigidityTerms:
        """Enumerate (i, j, v) for every ordered adjacent pair and v in P_i or P_j"""
        pairs = hierarchy.adjacent_pairs(level)
        layout = hierarchy.layouts[level]
        sizes = layout.sizes
        pair_ids, vertices = [], []
        for side in (0, 1):
            patch = pairs[:, side]
            counts = sizes[patch]
            total = int(counts.sum())
            ends = np.cumsum(counts)
            within = np.arange(total) - np.repeat(ends - counts, counts)
            vertices.append(layout.order[np.repeat(layout.starts[patch], counts) + within])
            pair_ids.append(np.repeat(np.arange(len(pairs)), counts))
        pair_ids = np.concatenate(pair_ids)
        vertex = np.concatenate(vertices).astype(np.int64)
        order = np.argsort(pair_ids, kind="stable")
        pair_ids, vertex = pair_ids[order], vertex[order]
        first, second = pairs[pair_ids, 0], pairs[pair_ids, 1]

        alpha = weights.alpha
        weight = np.asarray(alpha[vertex, first]).ravel() + np.asarray(alpha[vertex, second]).ravel()
        c = hierarchy.center_positions[level]
        x0 = mesh.vertices[vertex]
        return RigidityTerms(
            first=first,
            second=second,
            vertex=vertex,
            weight=weight,
            offset_first=x0 - c[first],
            offset_second=x0 - c[second],
        )

    @staticmethod
    def rigidity_tensor(rotations: Tensor, u: Tensor, terms: RigidityTerms) -> Tensor:
        """sum over (i, j, v) of (alpha_i(v) + alpha_j(v)) |x_i(v) - x_j(v)|^2"""
        tape = rotations.tape
        if not len(terms):
            return tape.constant(0.0)
        xi = T.batched_matvec(T.gather_rows(rotations, terms.first), tape.constant(terms.offset_first))
        xi = xi + T.gather_rows(u, terms.first)
        xj = T.batched_matvec(T.gather_rows(rotations, terms.second), tape.constant(terms.offset_second))
        xj = xj + T.gather_rows(u, terms.second)
        return T.reduce_sum(T.square(xi - xj) * terms.weight[:, None])

    @staticmethod
    def rigidity_energy(
        mesh: TriMesh,
        hierarchy: PatchHierarchy,
        level: int,
        params: DeformationParams,
        weights: BlendWeights,
        terms: Optional[RigidityTerms] = None,
    ) -> float:
        """Rigidity energy of one level; each unordered neighbor pair counts twice"""
        if terms is None:
            terms = DeformationService.rigidity_terms(mesh, hierarchy, level, weights)
        rot6 = params.rot6[level]
        bad = DeformationService.degenerate_rows(rot6)
        if bad.size:
            raise DegenerateRotationError(bad)
        tape = Tape()
        R = DeformationService.decode_rotation_tensor(tape.constant(rot6))
        return float(DeformationService.rigidity_tensor(R, tape.constant(params.u[level]), terms).value)
