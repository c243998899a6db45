"""Command-line interface: ``sosdec {check-nhc,decompose,verify,eval-grid}``.

Exit status: 0 on success, 1 when a mathematical check fails, 2 on usage,
configuration or I/O errors.  ``SOSDEC_LOG`` (error, info, debug) sets the
log level.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, ProblemConfig, load_config
from .geometry import GeometryError
from .gluing import GlobalDecomposition, GluingError, build_decomposition, from_manifest
from .manifold import check_manifold_nhc
from .morse import MorseError
from .nhc import GlobalNhcReport, check_global_nhc, report_csv, report_table
from .verify import GridSpec, GridSpecError, verify_decomposition

log = logging.getLogger("sosdec")

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_USAGE = 2
MANIFEST_FORMAT = "sosdec-manifest/1"


class ManifestError(ValueError):
    """Manifest unreadable or built for a different problem."""


# ---------------------------------------------------------------------------
# Shared steps


def run_nhc(cfg: ProblemConfig, seed: int | None = None) -> GlobalNhcReport:
    f = cfg.function_ast()
    zs = cfg.zero_set_description()
    tol = cfg.tol(seed)
    if cfg.is_manifold:
        atlas = cfg.domain_object().atlas
        return check_manifold_nhc(f, atlas, zs, cfg.nhc_samples, tol)
    return check_global_nhc(f, zs, cfg.nhc_samples, tol)


def decompose(cfg: ProblemConfig, seed: int | None = None,
              grid: str | None = None) -> GlobalDecomposition:
    return build_decomposition(cfg.function_ast(), cfg.zero_set_description(),
                               cfg.domain_object(grid), cfg.tol(seed))


def manifest_for(cfg: ProblemConfig, gd: GlobalDecomposition, grid: GridSpec) -> dict:
    active = gd.active_counts(grid.points()).max(initial=0)
    out = gd.to_manifest(int(active))
    out["format"] = MANIFEST_FORMAT
    out["config"] = {"name": cfg.name, "mode": cfg.mode, "grid": str(grid),
                     "nhc_samples": cfg.nhc_samples}
    return out


def dump_json(data: dict) -> str:
    return json.dumps(data, sort_keys=True, indent=1, allow_nan=False) + "\n"


def load_manifest(path: str | Path, cfg: ProblemConfig, seed: int | None = None) -> GlobalDecomposition:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}") from None
    if not isinstance(data, dict) or data.get("format") != MANIFEST_FORMAT:
        raise ManifestError(f"{path}: not a decomposition manifest")
    f = cfg.function_ast()
    if data.get("function") != str(f) or data.get("dim") != cfg.dim:
        raise ManifestError(f"{path}: manifest was built for f = {data.get('function')!r}, "
                            f"config has f = {str(f)!r}")
    if data.get("config", {}).get("mode") != cfg.mode:
        raise ManifestError(f"{path}: manifest mode differs from the config mode")
    zs = cfg.zero_set_description()
    if [c.to_dict() for c in zs.components] != data.get("components"):
        raise ManifestError(f"{path}: manifest zero set differs from the config zero set")
    tol = cfg.tol(data.get("seed") if seed is None else seed)
    try:
        return from_manifest(f, zs, cfg.domain_object(), data, tol)
    except (KeyError, TypeError, ValueError) as exc:
        raise ManifestError(f"{path}: malformed manifest ({exc})") from None


def write_piece_csvs(out: Path, gd: GlobalDecomposition, grid: GridSpec) -> list[Path]:
    """One CSV per piece: columns x1..xd, piece, value (17 significant digits)."""
    pts = grid.points()
    vals = gd.pieces(pts)
    folder = out / "pieces"
    folder.mkdir(parents=True, exist_ok=True)
    header = [f"x{k + 1}" for k in range(pts.shape[1])] + ["piece", "value"]
    coords = [[format(float(v), ".17g") for v in p] for p in pts]
    paths = []
    for m in range(vals.shape[1]):
        path = folder / f"piece_{m:03d}.csv"
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for c, v in zip(coords, vals[:, m]):
                w.writerow(c + [str(m), format(float(v), ".17g")])
        paths.append(path)
    return paths


# ---------------------------------------------------------------------------
# Subcommands


def cmd_check_nhc(args) -> int:
    cfg = load_config(args.config)
    report = run_nhc(cfg, args.seed)
    print(report_table(report.reports))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "nhc.csv").write_text(report_csv(report.reports), encoding="utf-8")
    if report.passed:
        print(f"NHC pass at {len(report.reports)} samples" + (" (SHC)" if report.shc else ""))
        return EXIT_OK
    print(f"NHC fail at {len(report.failures)} of {len(report.reports)} samples")
    return EXIT_FAIL


def cmd_decompose(args) -> int:
    cfg = load_config(args.config)
    report = run_nhc(cfg, args.seed)
    if not report.passed:
        print(report_table(report.failures))
        print("NHC fails; no decomposition attempted")
        return EXIT_FAIL
    grid = cfg.grid_spec(args.grid)
    gd = decompose(cfg, args.seed, args.grid)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "manifest.json").write_text(dump_json(manifest_for(cfg, gd, grid)), encoding="utf-8")
    (out / "nhc.csv").write_text(report_csv(report.reports), encoding="utf-8")
    write_piece_csvs(out, gd, grid)
    print(f"{gd.n_pieces} pieces from {gd.n_patches} patches "
          f"(per component {gd.per_component_counts}); star threshold {gd.theta_star:.6g}")
    print(f"wrote {out / 'manifest.json'} and {gd.n_pieces} piece CSVs")
    return EXIT_OK


def cmd_verify(args) -> int:
    cfg = load_config(args.config)
    gd = load_manifest(args.manifest, cfg, args.seed)
    grid = cfg.grid_spec(args.grid)
    rep = verify_decomposition(cfg.function_ast(), gd, cfg.zero_set_description(), grid, gd.tol)
    print(rep.to_text())
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "verify.csv").write_text(rep.to_csv(), encoding="utf-8")
        (out / "verify.txt").write_text(rep.to_text() + "\n", encoding="utf-8")
    return EXIT_OK if rep.passed else EXIT_FAIL


def cmd_eval_grid(args) -> int:
    cfg = load_config(args.config)
    gd = load_manifest(args.manifest, cfg, args.seed)
    grid = cfg.grid_spec(args.grid)
    out = Path(args.out)
    paths = write_piece_csvs(out, gd, grid)
    pts = grid.points()
    err = np.abs(np.asarray(cfg.function_ast()(pts)) - gd.evaluate(pts))
    print(f"wrote {len(paths)} piece CSVs on {grid.size} points; max |f - sum g^2| = {err.max():.3e}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sosdec",
        description="Construct and verify sum-of-squares decompositions of non-negative "
                    "functions whose zero sets satisfy the normal Hessian condition.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, manifest=False, out_required=False):
        p.add_argument("--config", required=True, help="problem JSON file")
        p.add_argument("--seed", type=int, default=None, help="override the RNG seed")
        p.add_argument("--grid", default=None, help='grid "x1:lo:hi:n,x2:lo:hi:n"')
        p.add_argument("--out", required=out_required, default=None, help="output directory")
        if manifest:
            p.add_argument("--manifest", required=True, help="manifest written by decompose")

    p = sub.add_parser("check-nhc", help="check the normal Hessian condition on the zero set")
    common(p)
    p.set_defaults(func=cmd_check_nhc)
    p = sub.add_parser("decompose", help="build the decomposition and write manifest + CSVs")
    common(p, out_required=True)
    p.set_defaults(func=cmd_decompose)
    p = sub.add_parser("verify", help="rebuild from a manifest and run residual/smoothness/count checks")
    common(p, manifest=True)
    p.set_defaults(func=cmd_verify)
    p = sub.add_parser("eval-grid", help="evaluate the pieces of a manifest on a grid")
    common(p, manifest=True, out_required=True)
    p.set_defaults(func=cmd_eval_grid)
    return parser


def _configure_logging() -> None:
    level = os.environ.get("SOSDEC_LOG", "error").upper()
    logging.basicConfig(level=getattr(logging, level, logging.ERROR),
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv: list[str] | None = None) -> int:
    _configure_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ManifestError, GridSpecError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (MorseError, GluingError, GeometryError) as exc:
        print(f"failure: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
