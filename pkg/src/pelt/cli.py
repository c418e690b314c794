"""Batch command-line frontend.

Subcommands wire the pipeline end to end through files only, so external
model outputs (normal maps, masks, match scores) slot in at any stage:

  synth    generate synthetic scenes and a dataset manifest
  solve    normals -> clipped gradients -> metric -> UV field per entry
  unwrap   UV field + image -> canonical RGBA texture per entry
  eval     leave-one-out re-identification over one or two variants
  report   re-render a saved evaluation report as csv/markdown

Entries in a batch are isolated: one failing image is logged and reflected
in the exit code without aborting the rest.
"""

from __future__ import annotations

import argparse
import json
import sys
import zlib
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import coordnet, evaluate, fileio, gridfit, matching, synth, unwrap
from .geometry import DEFAULT_TAU, depth_gradients, metric_from_gradients

DEFAULT_SEED = 7


def _entry_seed(seed: int, entry_id: str) -> int:
    return zlib.crc32(f"{seed}:{entry_id}".encode()) & 0x7FFFFFFF


def _pool_map(fn, items, threads: int):
    if threads <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _metric_for_entry(entry, tau: float):
    normals = fileio.read_normal_map(entry.normals)
    mask = fileio.read_mask(entry.mask)
    return metric_from_gradients(depth_gradients(normals.restrict(mask), tau))


# ---------------------------------------------------------------------------
# synth

def cmd_synth(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    base_pattern = synth.PatternSpec(
        args.pattern, cell=args.cell, pitch=args.pitch,
        dot_radius=args.dot_radius, seed=args.seed)
    base = synth.SurfaceSpec(
        args.kind, width=args.width, height=args.height, pattern=base_pattern,
        radius=args.radius if args.radius > 0 else 0.6 * args.width,
        band_fraction=args.band_fraction, amplitude=args.amplitude,
        wavelength=args.wavelength, phase=args.phase)
    try:
        if args.individuals > 0:
            scenes = synth.generate_reid_set(
                args.individuals, args.poses, base, seed=args.seed,
                deform=args.deform)
        else:
            base.identity_id = "solo"
            scenes = [("scene0", synth.generate_scene(base))]
    except synth.SynthError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    manifest = fileio.Manifest()
    for sid, scene in scenes:
        fileio.write_image_rgb(scene.image, out / f"{sid}_image.png")
        fileio.write_normal_map(scene.normals, out / f"{sid}_normals.png")
        fileio.write_mask(scene.mask, out / f"{sid}_mask.png")
        fileio.write_uv_field(scene.gt_uv, out / f"{sid}_gtuv.uvf")
        manifest.entries.append(fileio.ManifestEntry(
            id=sid, identity=scene.spec.identity_id or sid,
            image=out / f"{sid}_image.png", normals=out / f"{sid}_normals.png",
            mask=out / f"{sid}_mask.png"))
    fileio.save_manifest(manifest, out / "manifest.json")
    print(f"wrote {len(scenes)} scenes to {out}")
    return 0


# ---------------------------------------------------------------------------
# solve

def cmd_solve(args) -> int:
    try:
        manifest = fileio.load_manifest(args.manifest)
    except fileio.IOFormatError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    if not manifest.entries:
        print("error: manifest has no entries", file=sys.stderr)
        return 1
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    def work(entry):
        try:
            metric = _metric_for_entry(entry, args.tau)
            if args.solver == "grid":
                uv, report = gridfit.solve_uv_grid(
                    metric, iterations=args.iterations,
                    regularization=args.regularization)
            else:
                cfg = coordnet.CoordinateNetConfig(
                    fourier_bands=args.bands, fourier_sigma=args.sigma,
                    hidden_width=args.hidden_width,
                    pretrain_epochs=args.epochs_pretrain,
                    train_epochs=args.epochs_train, lr_initial=args.lr,
                    batch_size=args.batch_size or None,
                    seed=_entry_seed(args.seed, entry.id))
                uv, report = coordnet.solve_uv_network(metric, cfg)
            fileio.write_uv_field(uv, out / f"{entry.id}.uvf")
            report.save(out / f"{entry.id}.report.json")
            return entry.id, None, report.final_residual
        except Exception as e:  # per-entry isolation
            return entry.id, str(e), None

    results = _pool_map(work, manifest.entries, args.threads)
    failed = 0
    for eid, err, residual in results:
        if err is None:
            print(f"solved {eid}: residual {residual:.3e}")
        else:
            failed += 1
            print(f"FAILED {eid}: {err}", file=sys.stderr)
    if failed:
        print(f"{failed}/{len(results)} entries failed", file=sys.stderr)
    return 1 if failed else 0


# ---------------------------------------------------------------------------
# unwrap

def cmd_unwrap(args) -> int:
    try:
        manifest = fileio.load_manifest(args.manifest)
    except fileio.IOFormatError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    if not manifest.entries:
        print("error: manifest has no entries", file=sys.stderr)
        return 1
    uv_dir = Path(args.uv_dir)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    out_size = None
    if args.out_width > 0 and args.out_height > 0:
        out_size = (args.out_width, args.out_height)

    def work(entry):
        try:
            uv_path = uv_dir / f"{entry.id}.uvf"
            if not uv_path.is_file():
                raise fileio.IOFormatError(
                    f"missing UV file for entry {entry.id!r}: {uv_path}")
            uv = fileio.read_uv_field(uv_path)
            image = fileio.read_image_rgb(entry.image)
            mask = fileio.read_mask(entry.mask)
            uv = unwrap.UVField(uv.uv, uv.valid & mask)
            tex = unwrap.unwrap_image(
                image, uv, stride=args.stride, out_size=out_size,
                max_edge_uv=args.max_edge_uv,
                max_source_edge_px=args.max_source_edge_px)
            fileio.write_texture_rgba(tex.pixels, out / f"{entry.id}.png")
            return entry.id, None, float(tex.coverage.mean())
        except Exception as e:
            return entry.id, str(e), None

    results = _pool_map(work, manifest.entries, args.threads)
    failed = 0
    for (entry, (eid, err, cov)) in zip(manifest.entries, results):
        if err is None:
            entry.unwrapped = out / f"{eid}.png"
            print(f"unwrapped {eid}: coverage {100 * cov:.1f}%")
        else:
            failed += 1
            print(f"FAILED {eid}: {err}", file=sys.stderr)
    kept = fileio.Manifest(
        entries=[e for e in manifest.entries if e.unwrapped is not None])
    fileio.save_manifest(kept, out / "manifest.json")
    if failed:
        print(f"{failed}/{len(results)} entries failed", file=sys.stderr)
    return 1 if failed else 0


# ---------------------------------------------------------------------------
# eval

def _variant_images(manifest, variant):
    images = {}
    for e in manifest.entries:
        if variant == "original":
            rgb = fileio.read_image_rgb(e.image)
            mask = fileio.read_mask(e.mask)
            rgba = np.dstack([rgb, np.where(mask, 255, 0).astype(np.uint8)])
        else:
            if e.unwrapped is None:
                raise evaluate.EvalError(
                    f"entry {e.id!r} has no unwrapped texture in the manifest")
            rgba = fileio.read_texture_rgba(e.unwrapped)
        images[e.id] = rgba
    return images


def _diagnostics(manifest, images, retrievals, out_dir, limit):
    out_dir.mkdir(parents=True, exist_ok=True)
    feats = {}
    for r in retrievals[:limit]:
        top = r.ranked_ids[0]
        for i in (r.query_id, top):
            if i not in feats:
                feats[i] = matching.detect_and_describe(images[i])
        ms = matching.match(feats[r.query_id], feats[top])
        viz = matching.draw_match_visualization(
            images[r.query_id], images[top], feats[r.query_id], feats[top], ms)
        fileio.write_image_rgb(viz, out_dir / f"{r.query_id}__{top}.png")


def cmd_eval(args) -> int:
    try:
        manifest = fileio.load_manifest(args.manifest)
        if len(manifest.entries) < 2:
            raise evaluate.EvalError("need at least 2 manifest entries")
        variants = [v.strip() for v in args.variants.split(",") if v.strip()]
        for v in variants:
            if v not in ("original", "unwrapped"):
                raise evaluate.EvalError(f"unknown variant {v!r}")
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        ids = manifest.ids()
        labels = manifest.labels()
        scores = {"original": args.scores_original,
                  "unwrapped": args.scores_unwrapped}
        report = evaluate.EvalReport()
        retrievals = {}
        for v in variants:
            if scores[v]:
                matrix = matching.build_similarity_matrix(ids, scores_csv=scores[v])
            else:
                images = _variant_images(manifest, v)
                matrix = matching.build_similarity_matrix(
                    ids, images=images, matcher_ratio=args.ratio)
            retrievals[v] = evaluate.leave_one_out(matrix, labels)
            report.excluded_queries = evaluate.excluded_query_count(matrix, labels)
            report.variants.append(evaluate.metrics_for(v, retrievals[v]))
            if args.diagnostics and not scores[v]:
                _diagnostics(manifest, images, retrievals[v],
                             out / f"diagnostics_{v}", args.diagnostics_limit)
        if "original" in retrievals and "unwrapped" in retrievals:
            failures, improvements = evaluate.compare_variants(
                retrievals["original"], retrievals["unwrapped"])
            for vm in report.variants:
                if vm.name == "unwrapped":
                    vm.failures = failures
                    vm.improvements = improvements
        report.per_query = evaluate.per_query_records(retrievals)
    except (evaluate.EvalError, matching.MatchingError, fileio.IOFormatError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    (out / "report.csv").write_text(evaluate.emit_report(report, "csv"))
    (out / "report.md").write_text(evaluate.emit_report(report, "markdown"))
    evaluate.save_per_query_records(report.per_query, out / "per_query.json")
    raw = {"excluded_queries": report.excluded_queries, "variants": [
        {"name": v.name, "map_pct": v.map_pct,
         "top_k_pct": {str(k): p for k, p in v.top_k_pct.items()},
         "failures": v.failures, "improvements": v.improvements}
        for v in report.variants]}
    (out / "report.json").write_text(json.dumps(raw, indent=2) + "\n")
    print(evaluate.emit_report(report, "markdown"), end="")
    return 0


# ---------------------------------------------------------------------------
# report

def cmd_report(args) -> int:
    try:
        raw = json.loads(Path(args.input).read_text(encoding="utf-8"))
        report = evaluate.EvalReport(
            excluded_queries=raw.get("excluded_queries", 0))
        for v in raw["variants"]:
            report.variants.append(evaluate.VariantMetrics(
                name=v["name"], map_pct=v["map_pct"],
                top_k_pct={int(k): p for k, p in v["top_k_pct"].items()},
                failures=v.get("failures"), improvements=v.get("improvements")))
        text = evaluate.emit_report(report, args.format)
    except (OSError, KeyError, ValueError) as e:
        print(f"error: cannot render report: {e}", file=sys.stderr)
        return 1
    if args.out:
        Path(args.out).write_text(text)
    else:
        print(text, end="")
    return 0


# ---------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="pelt",
        description="Unwrap deformable surface patterns into a canonical "
                    "texture space and evaluate re-identification.")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth", help="generate synthetic scenes")
    sp.add_argument("--out", required=True)
    sp.add_argument("--kind", choices=["flat", "cylinder", "sine"], default="cylinder")
    sp.add_argument("--width", type=int, default=64)
    sp.add_argument("--height", type=int, default=64)
    sp.add_argument("--radius", type=float, default=0.0,
                    help="cylinder radius in px (default 0.6*width)")
    sp.add_argument("--band-fraction", type=float, default=0.8)
    sp.add_argument("--amplitude", type=float, default=3.0)
    sp.add_argument("--wavelength", type=float, default=24.0)
    sp.add_argument("--phase", type=float, default=0.0)
    sp.add_argument("--pattern", choices=["checkerboard", "dot_grid", "random_dots"],
                    default="checkerboard")
    sp.add_argument("--cell", type=float, default=8.0)
    sp.add_argument("--pitch", type=float, default=8.0)
    sp.add_argument("--dot-radius", type=float, default=2.5)
    sp.add_argument("--individuals", type=int, default=0,
                    help="generate a re-id set with this many individuals")
    sp.add_argument("--poses", type=int, default=3)
    sp.add_argument("--deform", choices=["moderate", "strong"], default="strong",
                    help="pose deformation severity for re-id sets")
    sp.add_argument("--seed", type=int, default=DEFAULT_SEED)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("solve", help="solve UV fields for a manifest")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--solver", choices=["network", "grid"], default="network")
    sp.add_argument("--tau", type=float, default=DEFAULT_TAU)
    sp.add_argument("--epochs-pretrain", type=int, default=100)
    sp.add_argument("--epochs-train", type=int, default=300)
    sp.add_argument("--lr", type=float, default=1e-5)
    sp.add_argument("--batch-size", type=int, default=0,
                    help="minibatch size; 0 sizes it per image (~60 steps/epoch)")
    sp.add_argument("--hidden-width", type=int, default=128)
    sp.add_argument("--bands", type=int, default=12)
    sp.add_argument("--sigma", type=float, default=2.0)
    sp.add_argument("--iterations", type=int, default=60,
                    help="grid solver Gauss-Newton step budget")
    sp.add_argument("--regularization", type=float, default=1e-3,
                    help="grid solver initial damping")
    sp.add_argument("--threads", type=int, default=1)
    sp.add_argument("--seed", type=int, default=DEFAULT_SEED)
    sp.set_defaults(func=cmd_solve)

    sp = sub.add_parser("unwrap", help="rasterize canonical textures")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--uv-dir", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--stride", type=int, default=1)
    sp.add_argument("--max-edge-uv", type=float, default=unwrap.DEFAULT_MAX_EDGE_UV)
    sp.add_argument("--max-source-edge-px", type=float,
                    default=unwrap.DEFAULT_MAX_SOURCE_EDGE_PX)
    sp.add_argument("--out-width", type=int, default=0)
    sp.add_argument("--out-height", type=int, default=0)
    sp.add_argument("--threads", type=int, default=1)
    sp.set_defaults(func=cmd_unwrap)

    sp = sub.add_parser("eval", help="leave-one-out re-identification")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--variants", default="original,unwrapped")
    sp.add_argument("--scores-original", default=None,
                    help="external score CSV for the original variant")
    sp.add_argument("--scores-unwrapped", default=None)
    sp.add_argument("--ratio", type=float, default=matching.EVAL_RATIO,
                    help="matcher ratio-test threshold; 1.0 keeps every "
                         "mutual-NN match and scores by the full curve")
    sp.add_argument("--diagnostics", action="store_true",
                    help="emit side-by-side match visualizations")
    sp.add_argument("--diagnostics-limit", type=int, default=6)
    sp.add_argument("--seed", type=int, default=DEFAULT_SEED)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("report", help="re-render a saved evaluation report")
    sp.add_argument("--input", required=True, help="report.json from eval")
    sp.add_argument("--format", choices=["csv", "markdown"], default="markdown")
    sp.add_argument("--out", default=None)
    sp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
