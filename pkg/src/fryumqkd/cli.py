"""Command-line front end: optimize, simulate, tiling, border-error, sample."""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__, config as cfgmod
from .biphoton import Basis, beam_stats, conditional_width_estimate, sample_pairs
from .fryum import (InvalidSegmentation, PixelGrid, Segmentation, apply_discard_bands, build_segmentation,
                    equalize_kept_probability, rasterize)
from .optimizer import CSV_HEADER, discarded_segmentation, result_json, sweep
from .simulator import run_report, simulate_frames
from .tilingbench import (GridSpec, border_error_breakdown, discarded_grid_rate, example_grid_path,
                          lattice_containment_count, lattice_shell_count, packing_report, write_packing_csv)

EXIT_OK, EXIT_CONFIG, EXIT_EMPTY, EXIT_NUMERIC = 0, 2, 3, 4
DEFAULT_WHEEL = (1, 6, 8, 21)


class EmptyResult(RuntimeError):
    pass


class NumericFailure(RuntimeError):
    pass


def _finite_or_none(x):
    if isinstance(x, float) and not math.isfinite(x):
        return None
    return x


def _clean(obj):
    """Replace non-finite floats so the JSON stays standard."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        obj = obj.item()
    return _finite_or_none(obj)


def _dump(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(_clean(doc), indent=2, sort_keys=True) + "\n")


def _meta(cfg: dict) -> dict:
    return {"config": cfg, "seed": cfg["seed"], "version": __version__}


def _write_csv(path: Path, header: list, rows: list) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


# ---------------------------------------------------------------- commands

def cmd_optimize(cfg: dict, args) -> int:
    res = cfgmod.build(cfg)
    if res.rules is None:
        raise cfgmod.ConfigError("the optimizer needs rules.bandMultiplier > 0")
    lo, hi = cfg["rules"]["Nrange"]

    def progress(N, size, best):
        tag = f"A={'-'.join(map(str, best.A))} Rmod={best.report.Rmod:.4f}" if best else "no valid segmentation"
        print(f"N={N}: {size['valid']} valid, {size['scored']} scored, {tag}", file=sys.stderr)

    result = sweep(res.stats, res.r_ap, res.rules, (lo, hi), workers=args.workers,
                   keep_candidates=args.dump_all, progress=None if args.quiet else progress)
    out = args.out_dir
    _write_csv(out / "sweep.csv", CSV_HEADER, result.csv_rows())
    meta = _meta(cfg)
    (out / "sweep.json").write_text(result_json(result, False, **_clean(meta)) + "\n")
    if args.dump_all:
        _dump(out / "candidates.json", {**meta, "candidates": result.candidates})
    if result.global_best is None:
        print(f"no valid segmentation for N in [{lo}, {hi}]", file=sys.stderr)
        return EXIT_EMPTY
    best = result.global_best
    seg = discarded_segmentation(best.A, res.stats, res.r_ap, res.rules)
    doc = {**meta, "segmentation": seg.to_dict(), "geometryHash": seg.geometry_hash(),
           "report": best.report.to_dict()}
    _dump(out / "best_segmentation.json", doc)
    if cfg["detector"]["pitch_um"] is not None:
        grid = PixelGrid.covering(res.r_ap, float(cfg["detector"]["pitch_um"]))
        labels = rasterize(seg, grid)
        labels.write_pgm(out / "best_labels.pgm")
        labels.write_csv(out / "best_labels.csv")
    r = best.report
    summary = (f"best A = ({', '.join(map(str, best.A))}) + auxiliary {r.extra['aAux']:.4f}\n"
               f"d = {r.d}\np = {r.p:.6f}\nepsilon = {r.epsilon['combined']:.6g}\n"
               f"R = {r.R:.6f}\nRmod = {r.Rmod:.6f}\n")
    (out / "summary.txt").write_text(summary)
    print(summary, end="")
    return EXIT_OK


def _segmentation_for_simulation(cfg: dict, res, path) -> Segmentation:
    band = float(cfg["rules"]["bandMultiplier"])
    A_cfg = cfg["segmentation"]["A"]
    if path is not None:
        try:
            seg = Segmentation.load(path)
        except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
            raise cfgmod.ConfigError(f"cannot read segmentation {path}: {exc}") from None
        if A_cfg is not None and sum(A_cfg) != seg.d:
            raise cfgmod.ConfigError(f"segmentation file has d = {seg.d} but the config asks for d = {sum(A_cfg)}")
        if not math.isclose(seg.sigma, res.stats.sigma, rel_tol=1e-9):
            raise cfgmod.ConfigError("segmentation file was built for a different beam width than this config")
        return seg
    A = tuple(A_cfg) if A_cfg is not None else DEFAULT_WHEEL
    seg = build_segmentation(A, res.stats, res.r_ap)
    if band > 0:
        seg = apply_discard_bands(seg, res.stats, band)
        if seg.N > 1:
            seg = equalize_kept_probability(seg, res.stats)
    return seg


def cmd_simulate(cfg: dict, args) -> int:
    res = cfgmod.build(cfg)
    seg = _segmentation_for_simulation(cfg, res, args.segmentation)
    det = cfgmod.build_detector(cfg, res.r_ap, res.stats.sigma)
    batch = simulate_frames(res.source, det, seg, cfg["seed"], res.scales, args.workers)
    if args.event_log:
        batch.write_event_log(args.event_log)
    rep = run_report(res.source, det, seg, cfg["seed"], res.scales, cfg["rules"]["discardMode"], batch=batch)
    out = args.out_dir
    rep.errors.write_csv(out)
    doc = {**_meta(cfg), **rep.to_dict(), "segmentation": seg.to_dict(), "geometryHash": seg.geometry_hash()}
    _dump(out / "report.json", doc)
    r = rep.rate
    eps = r.epsilon["combined"]
    lines = [f"d = {r.d}", f"p = {r.p:.6f}",
             f"epsilon = {eps:.6g}" if eps is not None else "epsilon = undetermined",
             f"Rmod = {r.Rmod:.6f}" if r.Rmod is not None else "Rmod = undetermined"]
    if rep.diagnostics["wideUncertainty"]:
        lines.append("warning: too few coincidences, estimates have wide uncertainty")
    print("\n".join(lines))
    if r.Rmod is not None and not math.isfinite(r.Rmod):
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_tiling(cfg: dict, args) -> int:
    n_max = args.n_max if args.n_max is not None else cfg["tiling"]["nMax"]
    if n_max < 2:
        raise cfgmod.ConfigError("n-max must be >= 2")
    out = args.out_dir
    write_packing_csv(out / "packing.csv", n_max)
    reports = [packing_report(n).to_dict() for n in range(1, n_max + 1)]
    lattice = {str(n): {"shells": lattice_shell_count(n), "containment": lattice_containment_count(n)}
               for n in range(1, n_max + 1)}
    _dump(out / "tiling.json", {**_meta(cfg), "nMax": n_max, "reports": reports, "latticeCounts": lattice})
    print(f"wrote {n_max - 1} packing rows to {out / 'packing.csv'}")
    return EXIT_OK


def cmd_border_error(cfg: dict, args) -> int:
    path = args.grid if args.grid is not None else example_grid_path()
    try:
        g = GridSpec.read_csv(path)
    except OSError as exc:
        raise cfgmod.ConfigError(f"cannot read grid {path}: {exc.strerror}") from None
    doc = {**_meta(cfg), "grid": str(args.grid) if args.grid else "bundled 6x6 four-macropixel grid",
           "shape": list(g.shape), "macropixels": g.n_macropixels,
           "cases": border_error_breakdown(g, "cases"), "quarters": border_error_breakdown(g, "quarters"),
           "noDiscard": discarded_grid_rate(g, False)}
    try:
        doc["borderDiscard"] = discarded_grid_rate(g, True)
    except ValueError as exc:
        doc["borderDiscard"] = {"error": str(exc)}
    _dump(args.out_dir / "border_error.json", doc)
    print(f"epsilon = {doc['cases']['epsilon']:.4f} (quarter-square accounting {doc['quarters']['epsilon']:.4f})")
    return EXIT_OK


def cmd_sample(cfg: dict, args) -> int:
    res = cfgmod.build(cfg)
    n = args.n if args.n is not None else cfg["sample"]["n"]
    ab = Basis.parse(cfg["sample"]["aliceBasis"])
    bb = Basis.parse(cfg["sample"]["bobBasis"])
    rng = np.random.default_rng(cfg["seed"])
    a, b = sample_pairs(res.source, ab, bb, rng, n, res.scales)
    rows = [[repr(float(v)) for v in (a[i, 0], a[i, 1], b[i, 0], b[i, 1])] for i in range(n)]
    _write_csv(args.out_dir / "samples.csv", ["aliceX", "aliceY", "bobX", "bobY"], rows)
    sa, sb = beam_stats(res.source, ab, res.scales[ab]), beam_stats(res.source, bb, res.scales[bb])
    doc = {**_meta(cfg), "n": n, "aliceBasis": ab.short, "bobBasis": bb.short,
           "alice": {"sigma": sa.sigma, "sigmaCond": sa.sigma_cond}, "bob": {"sigma": sb.sigma},
           "K": sa.K, "sampleStd": [float(a.std()), float(b.std())]}
    if ab == bb and n >= 1000:
        doc["conditionalWidthEstimate"] = conditional_width_estimate(a, b)
    _dump(args.out_dir / "sample.json", doc)
    print(f"wrote {n} pairs to {args.out_dir / 'samples.csv'}")
    return EXIT_OK


COMMANDS = {"optimize": cmd_optimize, "simulate": cmd_simulate, "tiling": cmd_tiling,
            "border-error": cmd_border_error, "sample": cmd_sample}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON config file")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config entry (dotted path, JSON value); repeatable")
    common.add_argument("--out-dir", type=Path, default=Path("."), help="output directory")
    common.add_argument("--workers", type=int, default=1, help="worker processes (outputs do not depend on it)")
    common.add_argument("--quiet", action="store_true", help="suppress progress on stderr")

    parser = argparse.ArgumentParser(prog="fryumqkd", description="Fryum-wheel segmentation and key-rate tools.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("optimize", parents=[common], help="sweep angular specs for the best key rate")
    p.add_argument("--dump-all", action="store_true", help="also write every scored candidate")
    p = sub.add_parser("simulate", parents=[common], help="frame-level protocol simulation")
    p.add_argument("--segmentation", type=Path, help="segmentation JSON (e.g. from optimize)")
    p.add_argument("--event-log", type=Path, help="write the detected events as a binary log")
    p = sub.add_parser("tiling", parents=[common], help="uniform-disk packing comparison CSV")
    p.add_argument("--n-max", type=int)
    p = sub.add_parser("border-error", parents=[common], help="border error of a pixel grid")
    p.add_argument("grid", type=Path, nargs="?", help="CSV of integer macropixel labels")
    p = sub.add_parser("sample", parents=[common], help="draw biphoton coordinates")
    p.add_argument("--n", type=int)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    try:
        if args.workers < 1:
            raise cfgmod.ConfigError("--workers must be >= 1")
        cfg = cfgmod.load(args.config, args.overrides)
        args.out_dir.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, args)
    except EmptyResult as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_EMPTY
    except (NumericFailure, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (cfgmod.ConfigError, InvalidSegmentation, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
