"""End-to-end commands behind the CLI.

Output layout (all paths relative to the command's ``out`` directory)::

    gen-corpus     manifest.json, config.json
                   images/<id>/source.png, images/<id>/target_<j>.png
                   flows/<id>/pair_<j>.flo, creases/<id>.png
    build-library  library.fplib, library_summary.json, config.json
    sample         <id>/<k>.png, samples.json, config.json
                   <id>/trace_<k>/{cond_warped,x_clean,n_warp,stage<s>_t<t>}.png
                   <id>/trace_<k>/n_warp.noise  (single-channel .flo variant)
    evaluate       metrics.json
    demo           corpus/, library/, samples/, metrics.json, config.json
"""

from __future__ import annotations

import hashlib
import json
import logging
import shutil
from concurrent.futures import ThreadPoolExecutor
from functools import partial
from pathlib import Path
from types import SimpleNamespace

import numpy as np

from . import io
from .config import PipelineConfig, dump_config
from .diffusion import gaussian_denoiser, sample_three_stage, smoothed
from .flow import estimate_flow
from .metrics import EmbeddingSet, class_distances, frechet_distance
from .prior import EmptyLibraryError, build_library, embed, load_library, sample_deformation, save_library
from .seeding import derive_seed, rng
from .synthetic import CreaseIdentity, gen_crease_map, gen_pair_corpus, identity_name

log = logging.getLogger(__name__)


class UsageError(Exception):
    """Bad invocation or inputs; the CLI maps it to exit status 2."""


def _write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def _prepare_dir(out: Path, force: bool) -> Path:
    if out.exists() and any(out.iterdir()):
        if not force:
            raise UsageError(f"{out} exists and is not empty (use --force to replace it)")
        shutil.rmtree(out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _map(fn, items, workers: int):
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def cmd_gen_corpus(config: PipelineConfig, out, force: bool = False) -> dict:
    out = _prepare_dir(Path(out), force)
    c = config.corpus
    pairs = gen_pair_corpus(c.n_identities, c.pairs_per_identity, c.deformation(), config.seed,
                            config.resolution, c.corrupt_fraction, c.texture_weight)
    entries = []
    for i in range(c.n_identities):
        ident = identity_name(i)
        (out / "images" / ident).mkdir(parents=True)
        (out / "flows" / ident).mkdir(parents=True)
        (out / "creases").mkdir(exist_ok=True)
        crease = gen_crease_map(CreaseIdentity.from_seed(derive_seed(config.seed, "identity", i)), config.resolution)
        io.write_png(crease, out / "creases" / f"{ident}.png")
        io.write_png(pairs[i * c.pairs_per_identity].source, out / "images" / ident / "source.png")
    for n, p in enumerate(pairs):
        j = n % c.pairs_per_identity
        target = f"images/{p.identity_id}/target_{j:02d}.png"
        flow = f"flows/{p.identity_id}/pair_{j:02d}.flo"
        io.write_png(p.target, out / target)
        io.write_flo(p.flow, out / flow)
        entries.append({
            "pair_id": p.pair_id,
            "identity_id": p.identity_id,
            "source": f"images/{p.identity_id}/source.png",
            "target": target,
            "flow": flow,
            "corrupted": p.corrupted,
            "identity_seed": derive_seed(config.seed, "identity", int(p.identity_id[2:])),
            "deformation_seed": derive_seed(config.seed, "deform", int(p.identity_id[2:]), j),
        })
    manifest = {"seed": config.seed, "resolution": config.resolution, "entries": entries}
    _write_json(out / "manifest.json", manifest)
    dump_config(config, out / "config.json", runtime=False)
    return manifest


def _read_manifest(corpus) -> tuple[Path, dict]:
    corpus = Path(corpus)
    path = corpus / "manifest.json" if corpus.is_dir() else corpus
    if not path.is_file():
        raise UsageError(f"no corpus manifest at {path}")
    manifest = json.loads(path.read_text())
    if not manifest.get("entries"):
        raise UsageError(f"corpus manifest {path} lists no pairs")
    return path.parent, manifest


def cmd_build_library(config: PipelineConfig, corpus, out) -> dict:
    root, manifest = _read_manifest(corpus)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    ingest = config.library.flow_source == "truth"
    pairs = [
        SimpleNamespace(
            source=io.read_png(root / e["source"]),
            target=io.read_png(root / e["target"]),
            identity_id=e["identity_id"],
            pair_id=e["pair_id"],
            flow=io.read_flo(root / e["flow"]) if ingest else None,
        )
        for e in manifest["entries"]
    ]
    th = config.thresholds
    estimator = partial(estimate_flow, params=config.estimator)
    try:
        lib = build_library(pairs, estimator, embed, th.tau_d, th.tau_c, th.delta,
                            use_given_flows=ingest, workers=config.workers)
        summary = lib.metadata["summary"]
    except EmptyLibraryError as exc:
        lib, summary = None, exc.summary
    corrupted = {e["pair_id"]: e["corrupted"] for e in manifest["entries"]}
    for row in summary["pairs"]:
        row["corrupted"] = corrupted[row["pair_id"]]
    summary["flow_source"] = config.library.flow_source
    summary["thresholds"] = {"delta": th.delta, "tau_d": th.tau_d, "tau_c": th.tau_c}
    _write_json(out / "library_summary.json", summary)
    dump_config(config, out / "config.json", runtime=False)
    if lib is None:
        raise UsageError("every deformation was rejected; no library written (see library_summary.json)")
    lib.metadata = {"seed": config.seed, "corpus_seed": manifest.get("seed"), "summary": summary}
    save_library(lib, out / "library.fplib")
    return summary


def _make_denoiser(config: PipelineConfig, schedule):
    d = config.denoiser
    if d.kind == "external":
        from .external import ExternalDenoiser
        return ExternalDenoiser(d.command, config.resolution, config.resolution, config.sampler.T)
    return gaussian_denoiser(schedule, d.data_std, smoothed(d.smooth_sigma), d.uncond_mean)


def _write_trace(states: dict, folder: Path) -> None:
    folder.mkdir(parents=True, exist_ok=True)
    for name, arr in states.items():
        io.write_png(np.clip(arr, -1.0, 1.0), folder / f"{name}.png")
    if "n_warp" in states:
        io.write_noise(states["n_warp"], folder / "n_warp.noise")


def cmd_sample(config: PipelineConfig, library, out, identities: int | None = None,
               count_per_identity: int | None = None, trace: bool = False, force: bool = False) -> dict:
    library = Path(library)
    if library.is_dir():
        library = library / "library.fplib"
    if not library.is_file():
        raise UsageError(f"no library file at {library}")
    lib = load_library(library)
    out = _prepare_dir(Path(out), force)
    n_ids = identities or config.sampling.identities
    per_id = count_per_identity or config.sampling.samples_per_identity
    s = config.sampler
    sampler, schedule, transport = s.sampler(), s.schedule(), s.transport()
    seed = config.seed

    def run_identity(i: int) -> list[dict]:
        ident = identity_name(i)
        crease = gen_crease_map(CreaseIdentity.from_seed(derive_seed(seed, "sample-identity", i)), config.resolution)
        denoiser = _make_denoiser(config, schedule)
        (out / ident).mkdir()
        rows = []
        try:
            for k in range(per_id):
                pick = rng(seed, "pick", i, k)
                record = sample_deformation(lib, pick)
                xi_seed = derive_seed(seed, "identity-xi", i) if s.share_identity_noise else None
                res = sample_three_stage(denoiser, crease, record, sampler, schedule,
                                         derive_seed(seed, "sample", i, k), xi_seed, transport, trace)
                io.write_png(res.image, out / ident / f"{k}.png")
                if trace:
                    _write_trace(res.trace, out / ident / f"trace_{k}")
                rows.append({"identity_id": ident, "index": k, "path": f"{ident}/{k}.png",
                             "deformation": record.source_pair_id})
        finally:
            if hasattr(denoiser, "close"):
                denoiser.close()
        return rows

    workers = 1 if config.denoiser.kind == "external" else config.workers
    rows = [r for group in _map(run_identity, range(n_ids), workers) for r in group]
    manifest = {"seed": seed, "library_sha256": hashlib.sha256(library.read_bytes()).hexdigest(), "samples": rows}
    _write_json(out / "samples.json", manifest)
    dump_config(config, out / "config.json", runtime=False)
    return manifest


def _embed_tree(root: Path) -> EmbeddingSet:
    if not root.is_dir():
        raise UsageError(f"image tree {root} does not exist")
    files = sorted(root.glob("*/*.png"))
    if not files:
        raise UsageError(f"no <identity>/<image>.png files under {root}")
    return EmbeddingSet(np.stack([embed(io.read_png(f)) for f in files]), [f.parent.name for f in files])


def cmd_evaluate(config: PipelineConfig, generated, reference, out=None) -> dict:
    gen = _embed_tree(Path(generated))
    ref = _embed_tree(Path(reference))
    n_min = min(len(gen.labels), len(ref.labels))
    reduce_dim = min(config.evaluate.reduce_dim, gen.vectors.shape[1], n_min - 1)
    if reduce_dim < 1:
        raise UsageError("need at least two images per tree for the Frechet distance")
    inter_g, intra_g = class_distances(gen, config.seed)
    inter_r, intra_r = class_distances(ref, config.seed)
    metrics = {
        "frechet": frechet_distance(gen, ref, reduce_dim),
        "inter": inter_g,
        "intra": intra_g,
        "n_samples": len(gen.labels),
        "dim": int(gen.vectors.shape[1]),
        "reduce_dim": int(reduce_dim),
        "seed": config.seed,
        "reference": {"inter": inter_r, "intra": intra_r, "n_samples": len(ref.labels)},
    }
    if out is not None:
        out = Path(out)
        out.parent.mkdir(parents=True, exist_ok=True)
        _write_json(out, metrics)
    return metrics


def verify_outputs(out: Path) -> list[str]:
    """Re-read every artefact of a demo run and re-check module invariants."""
    problems = []
    lib = load_library(out / "library" / "library.fplib")
    try:
        lib.check()
    except ValueError as exc:
        problems.append(str(exc))
    corpus = json.loads((out / "corpus" / "manifest.json").read_text())
    for e in corpus["entries"]:
        flow = io.read_flo(out / "corpus" / e["flow"])
        if flow.shape != (256, 256, 2):
            problems.append(f"{e['flow']} has shape {flow.shape}")
    summary = json.loads((out / "library" / "library_summary.json").read_text())
    if summary["kept"] != len(lib):
        problems.append(f"summary lists {summary['kept']} kept fields, library holds {len(lib)}")
    samples = json.loads((out / "samples" / "samples.json").read_text())
    for row in samples["samples"]:
        img = io.read_png(out / "samples" / row["path"])
        if img.shape != (256, 256):
            problems.append(f"{row['path']} has shape {img.shape}")
    metrics = json.loads((out / "metrics.json").read_text())
    if not np.isfinite(metrics["frechet"]):
        problems.append("non-finite Frechet distance")
    return problems


def cmd_demo(config: PipelineConfig, out, force: bool = False, trace: bool = True) -> dict:
    out = _prepare_dir(Path(out), force)
    log.info("generating corpus")
    cmd_gen_corpus(config, out / "corpus")
    log.info("building deformation library")
    summary = cmd_build_library(config, out / "corpus", out / "library")
    log.info("sampling")
    cmd_sample(config, out / "library", out / "samples", trace=trace)
    log.info("evaluating")
    metrics = cmd_evaluate(config, out / "samples", out / "corpus" / "images", out / "metrics.json")
    dump_config(config, out / "config.json", runtime=False)
    problems = verify_outputs(out)
    if problems:
        raise RuntimeError("output verification failed: " + "; ".join(problems))
    return {"library": {"kept": summary["kept"], "rejected": summary["rejected"]}, "metrics": metrics}
