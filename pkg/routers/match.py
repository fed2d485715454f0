"""
Match router: optimize the correspondence of one mesh pair, or of every
pair in a batch file, and write maps, dumps, loss log and manifest.
"""
import argparse
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime, timezone
from pathlib import Path
from typing import List, Optional

import numpy as np
from pydantic import ValidationError

from app.config import settings
from app.database import create_tables, get_db
from app.logs import setup_logging
from schemas.config import RunConfig
from schemas.report import PairJob, RunManifest
from services.errors import ConfigMismatchError, DivergenceError, InputError, PatchMatchError
from services.matching_service import MatchingService, MatchResult
from services.mesh_service import MeshService
from services.run_registry import RunRegistryService

logger = logging.getLogger(__name__)

MANIFEST = "manifest.json"
LOSS_LOG = "loss.jsonl"


def register(subparsers, common: argparse.ArgumentParser):
    parser = subparsers.add_parser(
        "match",
        parents=[common],
        help="Compute dense correspondences between two meshes",
    )
    parser.add_argument("mesh_a", nargs="?", help="Source mesh X")
    parser.add_argument("mesh_b", nargs="?", help="Target mesh Y")
    parser.add_argument("--pairs", help="JSON list of {mesh_a, mesh_b, out_dir?} jobs")
    parser.add_argument("--workers", type=int, help="Parallel jobs in --pairs mode")
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--steps-per-epoch", type=int)
    parser.add_argument("--patch-counts", type=int, nargs="+")
    parser.add_argument("--tau", type=float)
    parser.add_argument("--coarse-to-fine-epochs", type=int)
    parser.add_argument("--no-deformation", action="store_true", help="Association-only model")
    parser.add_argument("--no-run-subdir", action="store_true", help="Write into --out directly")
    parser.add_argument("--dump-deformations", action="store_true", help="Write deformed_[xy]_l<l>.obj")
    parser.add_argument("--dump-associations", action="store_true", help="Write associations.npz")
    parser.add_argument("--dump-vertex-associations", action="store_true", help="Include level 0 in associations.npz")
    parser.set_defaults(handler=cmd_match)


def effective_config(args) -> RunConfig:
    return RunConfig.from_sources(
        args.config,
        seed=args.seed,
        epochs=args.epochs,
        steps_per_epoch=args.steps_per_epoch,
        patch_counts=args.patch_counts,
        tau=args.tau,
        coarse_to_fine_epochs=args.coarse_to_fine_epochs,
        use_deformation=False if args.no_deformation else None,
    )


def read_manifest(out_dir: Path) -> Optional[RunManifest]:
    path = out_dir / MANIFEST
    if not path.is_file():
        return None
    try:
        return RunManifest.model_validate_json(path.read_text(encoding="utf-8"))
    except ValidationError as e:
        raise InputError(f"{path}: unreadable manifest ({e})") from e


def write_manifest(manifest: RunManifest, out_dir: Path) -> Path:
    path = out_dir / MANIFEST
    MeshService.atomic_write(path, manifest.model_dump_json(indent=2))
    return path


def write_outputs(result: MatchResult, out_dir: Path, mesh_x, mesh_y, options: dict) -> dict:
    """Point maps plus the optional dumps; returns name -> path"""
    outputs = {
        "map_xy": str(MeshService.write_index_map(result.map_xy, out_dir / "map_xy.txt")),
        "map_yx": str(MeshService.write_index_map(result.map_yx, out_dir / "map_yx.txt")),
    }
    if options.get("dump_deformations") and result.deformed_x:
        for level, (px, py) in enumerate(zip(result.deformed_x, result.deformed_y)):
            outputs[f"deformed_x_l{level}"] = str(
                MeshService.save_mesh(mesh_x, out_dir / f"deformed_x_l{level}.obj", vertices=px)
            )
            outputs[f"deformed_y_l{level}"] = str(
                MeshService.save_mesh(mesh_y, out_dir / f"deformed_y_l{level}.obj", vertices=py)
            )
    if options.get("dump_associations"):
        first = 0 if options.get("dump_vertex_associations") else 1
        arrays = {}
        for level in range(first, len(result.associations)):
            pxy, pyx = result.associations[level]
            arrays[f"pi_xy_l{level}"] = pxy
            arrays[f"pi_yx_l{level}"] = pyx
        path = out_dir / "associations.npz"
        np.savez_compressed(path, **arrays)
        outputs["associations"] = str(path)
    return outputs


def _finish_registry(run_key: str, status: str, final_loss: Optional[float]):
    try:
        with get_db() as db:
            RunRegistryService.finish(db, run_key, status, final_loss)
    except Exception as e:
        logger.error(f"Run registry unavailable: {e}")


def run_job(mesh_a: str, mesh_b: str, config: RunConfig, out_dir: Path, options: Optional[dict] = None) -> RunManifest:
    """
    One matching job with its artifacts.
    Refuses to resume into a directory whose manifest has another config hash.
    """
    options = options or {}
    out_dir = Path(out_dir)
    previous = read_manifest(out_dir)
    if previous is not None and previous.config_hash != config.config_hash:
        raise ConfigMismatchError(
            f"{out_dir}: existing run has config hash {previous.config_hash[:12]}, "
            f"this run has {config.config_hash[:12]}"
        )
    mesh_x = MeshService.load_mesh(mesh_a)
    mesh_y = MeshService.load_mesh(mesh_b)
    out_dir.mkdir(parents=True, exist_ok=True)

    run_key = RunRegistryService.run_key(config.config_hash, config.seed, str(mesh_a), str(mesh_b))
    try:
        create_tables()
        with get_db() as db:
            RunRegistryService.register(
                db, run_key, str(mesh_a), str(mesh_b), config.config_hash, config.seed, str(out_dir)
            )
    except Exception as e:
        logger.error(f"Run registry unavailable: {e}")

    manifest = RunManifest(
        app_version=settings.app_version,
        status="running",
        seed=config.seed,
        config_hash=config.config_hash,
        config=config.effective_dump(),
        mesh_a=str(mesh_a),
        mesh_b=str(mesh_b),
        loss_log=str(out_dir / LOSS_LOG),
        started_at=datetime.now(timezone.utc),
    )
    with open(out_dir / LOSS_LOG, "w", encoding="utf-8") as log:
        def on_step(report):
            log.write(report.model_dump_json() + "\n")
            manifest.steps += 1

        try:
            result = MatchingService.match_pair(
                mesh_x, mesh_y, config, on_step=on_step, cache_dir=settings.cache_dir
            )
        except Exception as e:
            manifest.status = "diverged" if isinstance(e, DivergenceError) else "failed"
            manifest.message = str(e)
            manifest.finished_at = datetime.now(timezone.utc)
            log.flush()
            write_manifest(manifest, out_dir)
            _finish_registry(run_key, manifest.status, None)
            raise

    manifest.outputs = write_outputs(result, out_dir, mesh_x, mesh_y, options)
    manifest.status = "finished"
    manifest.final_loss = result.final_loss
    manifest.finished_at = datetime.now(timezone.utc)
    write_manifest(manifest, out_dir)
    _finish_registry(run_key, "finished", result.final_loss)
    logger.info(f"Run {run_key} finished after {result.steps} steps, artifacts in {out_dir}")
    return manifest


def load_pairs(path) -> List[PairJob]:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"{path}: file not found")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
        if not isinstance(data, list):
            raise InputError(f"{path}: expected a JSON list of pairs")
        return [PairJob.model_validate(item) for item in data]
    except (json.JSONDecodeError, ValidationError) as e:
        raise InputError(f"{path}: invalid pairs file ({e})") from e


def _run_pair(payload: dict) -> dict:
    """Process-pool entry point; returns status instead of raising"""
    setup_logging()
    config = RunConfig.model_validate(payload["config"])
    try:
        manifest = run_job(payload["mesh_a"], payload["mesh_b"], config, Path(payload["out_dir"]), payload["options"])
        return {"index": payload["index"], "exit_code": 0, "status": manifest.status, "message": None}
    except PatchMatchError as e:
        logger.error(f"Pair {payload['index']} failed: {e}")
        return {"index": payload["index"], "exit_code": e.exit_code, "status": "failed", "message": str(e)}
    except Exception as e:
        logger.error(f"Pair {payload['index']} crashed: {type(e).__name__}: {e}")
        return {"index": payload["index"], "exit_code": 1, "status": "failed", "message": f"{type(e).__name__}: {e}"}


def run_batch(pairs_path, config: RunConfig, out_root: Path, workers: int, options: dict) -> int:
    """Fan independent pair jobs out to a process pool; returns the worst exit code"""
    jobs = load_pairs(pairs_path)
    run_root = out_root / RunRegistryService.run_dir_name(config.config_hash, config.seed)
    payloads = []
    for index, job in enumerate(jobs):
        default = run_root / f"pair{index:03d}_{Path(job.mesh_a).stem}_{Path(job.mesh_b).stem}"
        payloads.append({
            "index": index,
            "mesh_a": job.mesh_a,
            "mesh_b": job.mesh_b,
            "out_dir": str(job.out_dir or default),
            "config": config.model_dump(mode="json"),
            "options": options,
        })
    logger.info(f"Running {len(payloads)} pairs with {workers} workers")
    if workers <= 1:
        results = [_run_pair(p) for p in payloads]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_pair, payloads))
    failed = [r for r in results if r["exit_code"]]
    for r in failed:
        logger.error(f"pair {r['index']}: {r['message']}")
    return max((r["exit_code"] for r in results), default=0)


def cmd_match(args) -> int:
    config = effective_config(args)
    options = {
        "dump_deformations": args.dump_deformations,
        "dump_associations": args.dump_associations or args.dump_vertex_associations,
        "dump_vertex_associations": args.dump_vertex_associations,
    }
    out_root = Path(args.out)
    if args.pairs:
        workers = args.workers or settings.max_workers
        return run_batch(args.pairs, config, out_root, workers, options)
    if not (args.mesh_a and args.mesh_b):
        raise InputError("match needs two meshes or --pairs")
    out_dir = out_root if args.no_run_subdir else out_root / RunRegistryService.run_dir_name(
        config.config_hash, config.seed
    )
    run_job(args.mesh_a, args.mesh_b, config, out_dir, options)
    return 0
