"""Experiment orchestration: manifests, named recipes, seeded grid runs.

A manifest is a fully-resolved list of jobs (source x codec x lambda plus
training settings). ``run`` executes pending jobs in a process pool,
writing one directory per grid point with an atomic completion marker, so
re-running a manifest never retrains completed points. All outputs embed
the manifest hash and tool version.
"""

import hashlib
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import yaml

from . import config as cfg
from .codecs import CODEC_KINDS, load_codec
from .metrics import RDCurve, RDPoint, bd_psnr, bd_rate, neighbor_stats, partition_svg, \
    rasterize_partition, write_pgm
from .sources import SourceSpec, sample

_MANIFEST_KEYS = {"schema", "name", "base_seed", "eval_samples", "jobs"}
_JOB_KEYS = {"source", "codec", "lam", "params", "train_pool", "artifacts", "cells"}
_SOURCE_KEYS = {"family", "dim", "params", "label"}


def runs_root(override=None):
    if override is not None:
        return Path(override)
    return Path(os.environ.get("ECVQLAB_RUNS", "runs"))


def worker_count(override=None):
    if override is not None:
        return max(1, int(override))
    env = os.environ.get("ECVQLAB_WORKERS")
    return max(1, int(env)) if env else max(1, os.cpu_count() or 1)


# ---------------------------------------------------------------------------
# manifests


def validate_manifest(manifest):
    """Strict structural validation; unknown keys are hard errors."""
    if not isinstance(manifest, dict):
        raise ValueError("manifest must be a mapping")
    unknown = set(manifest) - _MANIFEST_KEYS
    if unknown:
        raise ValueError(f"unknown manifest keys: {sorted(unknown)}")
    for key in ("schema", "name", "jobs"):
        if key not in manifest:
            raise ValueError(f"manifest is missing required key {key!r}")
    if manifest["schema"] != cfg.SCHEMA_VERSION:
        raise ValueError(f"unsupported manifest schema {manifest['schema']!r}")
    if not manifest["jobs"]:
        raise ValueError("manifest has no jobs (empty grid)")
    for i, job in enumerate(manifest["jobs"]):
        unknown = set(job) - _JOB_KEYS
        if unknown:
            raise ValueError(f"job {i}: unknown keys {sorted(unknown)}")
        for key in ("source", "codec", "lam"):
            if key not in job:
                raise ValueError(f"job {i} is missing {key!r}")
        src = job["source"]
        unknown = set(src) - _SOURCE_KEYS
        if unknown:
            raise ValueError(f"job {i}: unknown source keys {sorted(unknown)}")
        if job["codec"] not in CODEC_KINDS:
            raise ValueError(f"job {i}: unknown codec {job['codec']!r} "
                             f"(choose from {sorted(CODEC_KINDS)})")
        if not (float(job["lam"]) > 0):
            raise ValueError(f"job {i}: lam must be positive")
        # constructing the spec runs the family/dim validation
        _job_spec(job, seed=0)
    return manifest


def _job_spec(job, seed):
    src = job["source"]
    return SourceSpec(src["family"], src.get("dim", 2), src.get("params", {}),
                      seed=seed, label=src.get("label", ""))


def manifest_hash(manifest):
    return hashlib.sha256(json.dumps(manifest, sort_keys=True).encode()).hexdigest()[:16]


def job_key(job):
    label = job["source"].get("label") or f"{job['source']['family']}-{job['source'].get('dim', 2)}d"
    return f"{label}/{job['codec']}/lam{job['lam']:g}"


def _job_hash(job):
    return hashlib.sha256(json.dumps(job, sort_keys=True).encode()).hexdigest()[:16]


def _job_seed(base_seed, job):
    digest = hashlib.sha256(f"{base_seed}:{job_key(job)}".encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1


def load_manifest(path):
    with open(path, "r", encoding="utf-8") as f:
        return validate_manifest(yaml.safe_load(f))


def save_manifest(manifest, path):
    with open(path, "w", encoding="utf-8") as f:
        yaml.safe_dump(manifest, f, sort_keys=True)


# ---------------------------------------------------------------------------
# recipes


def _grid_jobs(source, codecs, dim, points=None, cells=False):
    points = points if points is not None else cfg.GRID_POINTS[dim]
    jobs = []
    for codec in codecs:
        for lam, n_codewords in points:
            params = dict(cfg.train_config(codec, dim))
            if codec != "ntc":
                params["n_codewords"] = n_codewords
                params["n_iters"] = cfg.staged_iters(n_codewords)
            job = {"source": dict(source), "codec": codec, "lam": float(lam),
                   "params": params, "train_pool": cfg.train_pool_size(dim)}
            if cells:
                job["artifacts"] = ["rd", "cells"]
            jobs.append(job)
    return jobs


def _ig(dim):
    return {"family": "isotropic_gaussian", "dim": dim, "label": f"ig-{dim}d"}


_TWO_D_SOURCES = [
    _ig(2),
    {"family": "banana", "dim": 2, "label": "banana"},
    {"family": "boomerang", "dim": 2, "label": "boomerang"},
    {"family": "laplace", "dim": 2, "label": "laplace-2d"},
    {"family": "gaussian_mixture", "dim": 2, "label": "gauss-mix"},
    {"family": "sphere", "dim": 2, "params": {"inner_fraction": 0.0}, "label": "sphere0"},
    {"family": "sphere", "dim": 2, "params": {"inner_fraction": 0.5}, "label": "sphere50"},
    {"family": "sphere", "dim": 2, "params": {"inner_fraction": 0.99}, "label": "sphere99"},
]


def recipe(name, base_seed=cfg.DEFAULT_BASE_SEED):
    """Expand a named experiment preset into a full manifest."""
    jobs = []
    if name == "table1":
        for dim in (2, 4, 8, 16):
            jobs += _grid_jobs(_ig(dim), ["ntc", "ecvq"], dim)
    elif name == "table2":
        for source in _TWO_D_SOURCES[:3]:
            jobs += _grid_jobs(source, ["ntc", "ecvq"], 2)
    elif name == "fig2-cells":
        cell_point = [cfg.GRID_POINTS[2][5]]
        for source in _TWO_D_SOURCES[:3]:
            jobs += _grid_jobs(source, ["ntc", "ecvq"], 2, points=cell_point, cells=True)
    elif name == "nt-compare":
        for source in _TWO_D_SOURCES[1:3]:
            jobs += _grid_jobs(source, ["nt-vq", "nt-ecvq"], 2)
    elif name == "appendix-rd":
        for source in _TWO_D_SOURCES:
            jobs += _grid_jobs(source, ["vq", "ecvq", "ntc", "nt-vq", "nt-ecvq"], 2)
    else:
        raise ValueError(f"unknown recipe {name!r}; available: {', '.join(RECIPES)}")
    manifest = {"schema": cfg.SCHEMA_VERSION, "name": name, "base_seed": base_seed,
                "eval_samples": cfg.EVAL_SAMPLES, "jobs": jobs}
    return validate_manifest(manifest)


RECIPES = ("table1", "table2", "fig2-cells", "nt-compare", "appendix-rd")


# ---------------------------------------------------------------------------
# execution


def _atomic_write(path, data, binary=False):
    tmp = path.with_name(path.name + ".tmp")
    mode = "wb" if binary else "w"
    with open(tmp, mode) as f:
        f.write(data)
    os.replace(tmp, path)


def train_job(job, base_seed, eval_samples):
    """Train and evaluate one grid point; returns (model, point dict)."""
    seed = _job_seed(base_seed, job)
    ss = np.random.SeedSequence(seed)
    model_ss, pool_ss, eval_ss = ss.spawn(3)
    model_seed = int(model_ss.generate_state(1)[0])
    pool_seed = int(pool_ss.generate_state(1)[0])
    eval_seed = int(eval_ss.generate_state(1)[0])

    spec = _job_spec(job, seed=pool_seed)
    pool = sample(spec, int(job.get("train_pool", cfg.train_pool_size(spec.dim))))
    params = dict(job.get("params", {}))
    params.update(dim=spec.dim, lam=float(job["lam"]), seed=model_seed)
    model = CODEC_KINDS[job["codec"]](**params)
    t0 = time.perf_counter()
    model.fit(pool)
    train_seconds = time.perf_counter() - t0

    point = model.evaluate(sample(spec.with_seed(eval_seed), int(eval_samples)))
    record = {
        "codec": job["codec"], "source": spec.label, "lam": float(job["lam"]),
        "rate_bpd": point.rate, "mse": point.mse, "psnr_db": point.psnr,
        "seed": seed, "job_hash": _job_hash(job), "train_seconds": round(train_seconds, 2),
        "tool_version": cfg.TOOL_VERSION,
    }
    return model, record


def _cells_artifacts(model, point_dir):
    from . import autodiff as ad
    from .autodiff import Tensor

    raster = rasterize_partition(model.encode_points, bounds=(-4.0, 4.0), resolution=512)
    if hasattr(model, "codebook_"):
        centers = model.codebook_
        if getattr(model._stages[0], "g", None) is not None:
            with ad.no_grad():
                centers = model._stages[0].g(Tensor(model.codebook_)).data
    else:
        # occupied integer cells of the scalar quantizer, mapped back
        grid = np.linspace(-4.0, 4.0, 96)
        gx, gy = np.meshgrid(grid, grid)
        q = np.unique(model.predict(np.column_stack([gx.ravel(), gy.ravel()])), axis=0)
        with ad.no_grad():
            centers = model.synthesis_(Tensor(q.astype(np.float64))).data
    partition_svg(raster, point_dir / "cells.svg", centers=centers)
    write_pgm(raster, point_dir / "cells.pgm")
    stats = {"mean_distinct_neighbors": neighbor_stats(raster)}
    _atomic_write(point_dir / "cells.json", json.dumps(stats, indent=2))
    return stats


def _run_one(args):
    out_dir, job, base_seed, eval_samples, mhash, limit_threads = args
    if limit_threads:
        from threadpoolctl import threadpool_limits
        ctx = threadpool_limits(limits=1)
    else:
        ctx = None
    try:
        point_dir = Path(out_dir) / "points" / job_key(job)
        point_dir.mkdir(parents=True, exist_ok=True)
        model, record = train_job(job, base_seed, eval_samples)
        record["manifest_hash"] = mhash
        model.save(point_dir / "model.ckpt.tmp")
        os.replace(point_dir / "model.ckpt.tmp", point_dir / "model.ckpt")
        if "cells" in job.get("artifacts", []):
            record["cells"] = _cells_artifacts(model, point_dir)
        _atomic_write(point_dir / "point.json", json.dumps(record, indent=2, sort_keys=True))
        return job_key(job), None
    except Exception as exc:  # report per-point failures, do not kill the grid
        return job_key(job), f"{type(exc).__name__}: {exc}"
    finally:
        if ctx is not None:
            ctx.unregister()


def pending_jobs(manifest, out_dir):
    todo = []
    for job in manifest["jobs"]:
        marker = Path(out_dir) / "points" / job_key(job) / "point.json"
        if marker.exists():
            record = json.loads(marker.read_text())
            if record.get("job_hash") == _job_hash(job):
                continue
            raise RuntimeError(f"completed point {job_key(job)} was produced by a "
                               f"different job definition; use a fresh run directory")
        todo.append(job)
    return todo


def run(manifest, out_root=None, workers=None):
    """Execute a manifest; resumable per completed grid point.

    Returns the run directory. Raises RuntimeError listing failed points
    if any job errored (completed points are kept for resume).
    """
    validate_manifest(manifest)
    mhash = manifest_hash(manifest)
    out_dir = runs_root(out_root) / manifest["name"]
    out_dir.mkdir(parents=True, exist_ok=True)
    save_manifest(manifest, out_dir / "manifest.yaml")
    _atomic_write(out_dir / "manifest.hash", mhash + "\n")

    todo = pending_jobs(manifest, out_dir)
    n_workers = worker_count(workers)
    eval_samples = manifest.get("eval_samples", cfg.EVAL_SAMPLES)
    base_seed = manifest.get("base_seed", cfg.DEFAULT_BASE_SEED)
    args = [(str(out_dir), job, base_seed, eval_samples, mhash, True) for job in todo]
    failures = []
    if args:
        if n_workers == 1:
            results = map(_run_one, args)
        else:
            pool = ProcessPoolExecutor(max_workers=n_workers)
            results = pool.map(_run_one, args)
        for key, err in results:
            if err is not None:
                failures.append((key, err))
        if n_workers > 1:
            pool.shutdown()
    _write_curves(manifest, out_dir)
    if failures:
        lines = "\n".join(f"  {k}: {e}" for k, e in failures)
        raise RuntimeError(f"{len(failures)} grid point(s) failed:\n{lines}")
    return out_dir


def _write_curves(manifest, out_dir):
    by_source = {}
    for job in manifest["jobs"]:
        marker = Path(out_dir) / "points" / job_key(job) / "point.json"
        if not marker.exists():
            continue
        record = json.loads(marker.read_text())
        by_source.setdefault(record["source"], []).append(record)
    for source, records in by_source.items():
        records.sort(key=lambda r: (r["codec"], r["lam"]))
        lines = ["codec,lambda,rate_bpd,mse,psnr_db"]
        for r in records:
            lines.append(f"{r['codec']},{r['lam']:.12g},{r['rate_bpd']:.12g},"
                         f"{r['mse']:.12g},{r['psnr_db']:.12g}")
        _atomic_write(Path(out_dir) / f"curves_{source}.csv", "\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# reporting


def load_curves(run_dir):
    """Curves per (source, codec) from a run directory's CSV files.

    Zero-rate points (a codec collapsed to a single cell at that lambda)
    carry no information for log-rate fits and are dropped here; the CSV
    rows keep them.
    """
    curves = {}
    for path in sorted(Path(run_dir).glob("curves_*.csv")):
        source = path.stem[len("curves_"):]
        rows = path.read_text().strip().splitlines()[1:]
        by_codec = {}
        for row in rows:
            codec, lam, rate, mse, _psnr = row.split(",")
            if float(rate) <= 1e-9:
                continue
            by_codec.setdefault(codec, []).append(RDPoint(rate=float(rate), mse=float(mse),
                                                          label=codec))
        for codec, pts in by_codec.items():
            curves[(source, codec)] = RDCurve(pts, label=f"{source}/{codec}")
    return curves


def _bd_cell(curves, source, codec_a, codec_b, metric):
    a = curves.get((source, codec_a))
    b = curves.get((source, codec_b))
    if a is None or b is None or len(a) < 4 or len(b) < 4:
        return None, "insufficient points"
    try:
        a, b = a.pareto(), b.pareto()
        if len(a) < 4 or len(b) < 4:
            return None, "insufficient points"
        value = bd_psnr(a, b) if metric == "psnr" else bd_rate(a, b)
        return value, None
    except ValueError as exc:
        return None, str(exc)


def report(run_dir):
    """Summary text with BD tables for the standard codec pairings."""
    run_dir = Path(run_dir)
    curves = load_curves(run_dir)
    sources = sorted({s for s, _ in curves})
    mhash = (run_dir / "manifest.hash").read_text().strip() if (run_dir / "manifest.hash").exists() else "?"
    lines = [f"run: {run_dir.name}", f"manifest hash: {mhash}",
             f"tool version: {cfg.TOOL_VERSION}", ""]
    bd_rows = []
    for source in sources:
        if (source, "ntc") in curves and (source, "ecvq") in curves:
            val, err = _bd_cell(curves, source, "ntc", "ecvq", "psnr")
            bd_rows.append((source, val, err))
    if bd_rows:
        lines.append("BD-PSNR of NTC over ECVQ (dB; negative means NTC is worse):")
        lines.append(f"{'':<12}" + "".join(f"{s:>12}" for s, _, _ in bd_rows))
        cells = [f"{val:>12.3f}" if val is not None else f"{'n/a':>12}"
                 for _, val, _ in bd_rows]
        lines.append(f"{'BD-PSNR':<12}" + "".join(cells))
        for source, val, err in bd_rows:
            if val is None:
                lines.append(f"  {source}: {err}")
        lines.append("")
    nt_rows = []
    for source in sources:
        val, err = _bd_cell(curves, source, "nt-ecvq", "nt-vq", "rate")
        if val is not None:
            nt_rows.append((source, val))
    if nt_rows:
        lines.append("BD-rate of NT-ECVQ over NT-VQ (%; negative means ECVQ saves rate):")
        for source, val in nt_rows:
            lines.append(f"  {source:<12} {val:+.2f}%")
        lines.append("")
    for source in sources:
        codecs = sorted(c for s, c in curves if s == source)
        lines.append(f"{source}: curves for {', '.join(codecs)}")
    text = "\n".join(lines) + "\n"
    _atomic_write(run_dir / "report.txt", text)
    return text
