"""
Command-line pipeline: ``synth | extract | segment | unmix | eval``.

Each stage writes into ``<workdir>/<stage>-<hash>/`` where the hash covers
the stage configuration and the digests of its inputs, records a
``manifest.json`` there, and registers itself in ``<workdir>/latest.json``
so the next stage can pick up its outputs without explicit paths.

Exit codes: 0 success, 1 runtime failure, 2 usage error, 3 malformed or
missing input file, 4 dimension mismatch. Errors are printed to stderr as
one JSON line.
"""

import argparse
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .datamodel import (
    HyperCube,
    SolverConfig,
    load_cube,
    load_library,
    load_matrix_csv,
    save_cube,
    save_library,
    save_matrix_csv,
)
from .errors import DimensionMismatchError, FileFormatError, MissingFileError, SvasuError
from .library import DEFAULT_ZETA, PurityConfig, extract_insitu_library, segment_library
from .metrics import band_mean_error_map, config_hash, evaluate_run
from .solver import baseline_sunsal, svasu_solve
from .synthgen import SynthConfig, make_scene

log = logging.getLogger("svasu")

PRESETS = {
    "jasper": {"alpha": 1.0, "beta": 1e3, "gamma": 1e6},
    "cuprite": {"alpha": 3.0, "beta": 1e4, "gamma": 1e6},
    "synthetic": {"alpha": 9.0, "beta": 10.0, "gamma": 1e4},
}

EXIT_RUNTIME, EXIT_USAGE, EXIT_FILE, EXIT_DIMENSION = 1, 2, 3, 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# --------------------------------------------------------------------------
# run-directory bookkeeping


def _digest(path):
    if not Path(path).is_file():
        raise MissingFileError(str(path), "file not found")
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _cube_digest(header):
    header = Path(header)
    data_file = json.loads(header.read_text()).get("data_file", "")
    raw = header.parent / data_file
    return _digest(header) + (_digest(raw) if raw.is_file() else "")


class Workdir:
    def __init__(self, root):
        self.root = Path(root)
        self.state_path = self.root / "latest.json"

    def state(self):
        if self.state_path.is_file():
            return json.loads(self.state_path.read_text())
        return {}

    def latest(self, key):
        entry = self.state().get(key)
        if entry is None:
            return None
        return self.root / entry

    def stage_dir(self, stage, config, inputs):
        digest = config_hash(stage, config, inputs)
        path = self.root / f"{stage}-{digest}"
        path.mkdir(parents=True, exist_ok=True)
        return path, digest

    def register(self, *keys, path):
        state = self.state()
        for key in keys:
            state[key] = path.name
        self.root.mkdir(parents=True, exist_ok=True)
        self.state_path.write_text(json.dumps(state, indent=2, sort_keys=True) + "\n")


def _write_json(path, payload):
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _read_manifest(stage_dir):
    path = Path(stage_dir) / "manifest.json"
    if not path.is_file():
        raise MissingFileError(str(path), "stage manifest missing")
    return json.loads(path.read_text())


def _manifest(stage, config, inputs, outputs, seed=None, extra=None):
    payload = {
        "stage": stage,
        "tool_version": __version__,
        "config": config,
        "inputs": inputs,
        "outputs": outputs,
        "seed": seed,
    }
    payload.update(extra or {})
    return payload


def _resolve(explicit, workdir, key, filename, what):
    if explicit:
        return Path(explicit).resolve()
    stage = workdir.latest(key)
    if stage is None:
        raise MissingFileError(what, f"no --{what} given and no previous '{key}' stage in {workdir.root}")
    return (stage / filename).resolve()


def _upstream(path):
    """Manifest of the stage directory that produced ``path``, if any."""
    manifest = Path(path).parent / "manifest.json"
    return json.loads(manifest.read_text()) if manifest.is_file() else {}


# --------------------------------------------------------------------------
# stages


def cmd_synth(args, workdir):
    cfg = SynthConfig(
        n_pixels=args.pixels,
        n_bands=args.bands,
        n_endmembers=args.endmembers,
        max_active=args.max_active,
        signature_snr_db=args.signature_snr,
        scene_snr_db=args.scene_snr,
        variability_copies=args.copies,
        seed=args.seed,
    )
    out, digest = workdir.stage_dir("synth", cfg.to_dict(), {})
    scene = make_scene(cfg)
    save_cube(scene.cube, out / "cube.json")
    save_matrix_csv(scene.abundances.values, out / "abundances.csv")
    save_library(scene.base, out / "base_library.csv")
    save_library(scene.insitu, out / "insitu_library.csv")
    _write_json(
        out / "manifest.json",
        _manifest(
            "synth",
            cfg.to_dict(),
            {},
            ["cube.json", "cube.bin", "abundances.csv", "base_library.csv", "insitu_library.csv"],
            seed=cfg.seed,
            extra={
                "run_hash": digest,
                "cube": str((out / "cube.json").resolve()),
                "truth_abundances": str((out / "abundances.csv").resolve()),
            },
        ),
    )
    workdir.register("synth", "cube", "insitu", path=out)
    return out


def cmd_extract(args, workdir):
    cube_path = _resolve(args.cube, workdir, "cube", "cube.json", "cube")
    cfg = PurityConfig(
        window_radius=args.window_radius,
        homogeneity_threshold=args.threshold,
        max_candidates_per_class=args.max_candidates,
        merge_angle=args.merge_angle,
    )
    config = cfg.__dict__.copy()
    inputs = {"cube": {"path": str(cube_path), "sha256": _cube_digest(cube_path)}}
    cube = load_cube(cube_path)
    out, digest = workdir.stage_dir("extract", config, {"cube": inputs["cube"]["sha256"]})
    library = extract_insitu_library(cube, cfg)
    save_library(library, out / "insitu_library.csv")
    up = _upstream(cube_path)
    _write_json(
        out / "manifest.json",
        _manifest(
            "extract",
            config,
            inputs,
            ["insitu_library.csv"],
            extra={
                "run_hash": digest,
                "cube": str(cube_path),
                "truth_abundances": up.get("truth_abundances"),
                "classes": library.n_classes,
            },
        ),
    )
    workdir.register("extract", "insitu", path=out)
    return out


def cmd_segment(args, workdir):
    lib_path = _resolve(args.library, workdir, "insitu", "insitu_library.csv", "library")
    config = {"zeta": args.zeta, "add_mean": args.add_mean}
    inputs = {"library": {"path": str(lib_path), "sha256": _digest(lib_path)}}
    library = load_library(lib_path)
    out, digest = workdir.stage_dir("segment", config, {"library": inputs["library"]["sha256"]})
    seg = segment_library(library, zeta=args.zeta, add_mean=args.add_mean)
    save_library(seg.endmembers, out / "endmember_library.csv")
    save_library(seg.variability, out / "variability_library.csv")
    _write_json(out / "segment_report.json", seg.report())
    up = _upstream(lib_path)
    _write_json(
        out / "manifest.json",
        _manifest(
            "segment",
            config,
            inputs,
            ["endmember_library.csv", "variability_library.csv", "segment_report.json"],
            extra={
                "run_hash": digest,
                "cube": up.get("cube"),
                "truth_abundances": up.get("truth_abundances"),
            },
        ),
    )
    workdir.register("segment", path=out)
    log.info("segment: k=%d, %d endmember and %d variability columns",
             seg.model.k, seg.endmembers.size, seg.variability.size)
    return out


def _solver_config(args):
    params = dict(PRESETS["synthetic"])
    if args.preset:
        params.update(PRESETS[args.preset])
    for name in ("alpha", "beta", "gamma"):
        value = getattr(args, name)
        if value is not None:
            params[name] = value
    return SolverConfig(
        alpha=params["alpha"],
        beta=params["beta"],
        gamma=params["gamma"],
        epsilon=args.epsilon,
        max_iters=args.max_iters,
        rel_tol=args.rel_tol,
        seed=args.seed,
        asc_enabled=args.asc,
        asc_weight=args.asc_weight,
    )


def cmd_unmix(args, workdir):
    cfg = _solver_config(args)
    inputs = {}
    segment_manifest = {}
    if args.insitu_library:
        insitu_path = Path(args.insitu_library).resolve()
        inputs["insitu_library"] = {"path": str(insitu_path), "sha256": _digest(insitu_path)}
        seg = segment_library(load_library(insitu_path), zeta=args.zeta, add_mean=args.add_mean)
        M_lib, V_lib = seg.endmembers, seg.variability
        segment_manifest = _upstream(insitu_path)
    else:
        em_path = _resolve(args.endmembers, workdir, "segment", "endmember_library.csv", "endmembers")
        var_path = Path(args.variability).resolve() if args.variability else em_path.parent / "variability_library.csv"
        inputs["endmembers"] = {"path": str(em_path), "sha256": _digest(em_path)}
        M_lib = load_library(em_path, kind="endmember")
        V_lib = None
        if not args.no_variability:
            inputs["variability"] = {"path": str(var_path), "sha256": _digest(var_path)}
            V_lib = load_library(var_path, kind="variability")
        segment_manifest = _upstream(em_path)

    cube_path = Path(args.cube).resolve() if args.cube else None
    if cube_path is None and segment_manifest.get("cube"):
        cube_path = Path(segment_manifest["cube"])
    if cube_path is None:
        cube_path = _resolve(None, workdir, "cube", "cube.json", "cube")
    inputs["cube"] = {"path": str(cube_path), "sha256": _cube_digest(cube_path)}
    cube = load_cube(cube_path)

    A0 = None
    if args.init_abundances:
        init_path = Path(args.init_abundances).resolve()
        inputs["init_abundances"] = {"path": str(init_path), "sha256": _digest(init_path)}
        A0 = load_matrix_csv(init_path)
        if A0.shape != (M_lib.size, cube.n_pixels):
            raise DimensionMismatchError(
                f"initial abundances are {A0.shape[0]}x{A0.shape[1]}, "
                f"library has {M_lib.size} columns and cube {cube.n_pixels} pixels"
            )
        A0 = np.maximum(A0, 1e-6)

    if cube.band_count != M_lib.band_count:
        raise DimensionMismatchError(f"cube has {cube.band_count} bands, library has {M_lib.band_count}")

    config = dict(cfg.__dict__, baseline=args.baseline, lam=args.lam, zeta=args.zeta, add_mean=args.add_mean)
    out, digest = workdir.stage_dir("unmix", config, {k: v["sha256"] for k, v in inputs.items()})

    def progress(it, value):
        log.debug("iter %d objective %.12g", it, value)

    A, B, report = svasu_solve(cube, M_lib, V_lib, cfg, A0=A0, callback=progress)
    save_matrix_csv(A.values, out / "abundances.csv")
    if B.values.shape[0]:
        save_matrix_csv(B.values, out / "coefficients.csv")
    else:
        (out / "coefficients.csv").write_text("")
    save_library(M_lib, out / "endmember_library.csv")
    if V_lib is not None:
        save_library(V_lib, out / "variability_library.csv")
    _write_json(out / "solver_report.json", report.to_dict())
    outputs = ["abundances.csv", "coefficients.csv", "solver_report.json", "endmember_library.csv"]

    if args.baseline == "sunsal":
        Ab, brep = baseline_sunsal(cube, M_lib, lam=args.lam)
        save_matrix_csv(Ab.values, out / "baseline_abundances.csv")
        _write_json(out / "baseline_report.json", brep.to_dict())
        outputs += ["baseline_abundances.csv", "baseline_report.json"]

    _write_json(
        out / "manifest.json",
        _manifest(
            "unmix",
            config,
            inputs,
            outputs,
            seed=cfg.seed,
            extra={
                "run_hash": digest,
                "cube": str(cube_path),
                "truth_abundances": segment_manifest.get("truth_abundances"),
                "has_variability": V_lib is not None,
            },
        ),
    )
    workdir.register("unmix", path=out)
    log.info("unmix: %d iterations, converged=%s", report.iterations, report.converged)
    return out


def _format_table(columns):
    rows = [
        ("SRE_R (dB)", "sre_r_db"),
        ("RMSE_R", "rmse_r"),
        ("SRE_A (dB)", "sre_a_db"),
        ("RMSE_A", "rmse_a"),
        ("SRE_A by class (dB)", "sre_a_by_class_db"),
        ("||R-MA||_F", "residual_norm_first"),
        ("||R-MA-VB||_F", "residual_norm_second"),
    ]
    names = list(columns)
    lines = ["metric".ljust(22) + "".join(n.rjust(14) for n in names)]
    for label, key in rows:
        cells = []
        for n in names:
            value = columns[n].get(key)
            cells.append(("-" if value is None else f"{value:.4f}").rjust(14))
        lines.append(label.ljust(22) + "".join(cells))
    return "\n".join(lines)


def cmd_eval(args, workdir):
    run_dir = Path(args.run).resolve() if args.run else workdir.latest("unmix")
    if run_dir is None:
        raise MissingFileError("run", f"no --run given and no previous 'unmix' stage in {workdir.root}")
    manifest = _read_manifest(run_dir)
    cube_path = Path(args.cube).resolve() if args.cube else Path(manifest["cube"])
    cube = load_cube(cube_path)
    truth_path = args.truth or manifest.get("truth_abundances")
    truth = load_matrix_csv(truth_path) if truth_path else None

    M_lib = load_library(run_dir / "endmember_library.csv", kind="endmember")
    A = load_matrix_csv(run_dir / "abundances.csv")
    V = B = None
    if manifest.get("has_variability"):
        V = load_library(run_dir / "variability_library.csv", kind="variability").signatures
        B = load_matrix_csv(run_dir / "coefficients.csv")

    # digests only: the hash must not depend on where the workdir lives
    digests = {k: v["sha256"] for k, v in manifest["inputs"].items()}
    chash = config_hash(manifest["config"], digests, truth_path and _digest(truth_path))
    results = {
        "svasu": evaluate_run(truth, A, cube.data, M_lib.signatures, V, B,
                              M_lib.class_offsets, chash).to_dict(),
    }
    baseline_path = run_dir / "baseline_abundances.csv"
    if baseline_path.is_file():
        Ab = load_matrix_csv(baseline_path)
        results["sunsal"] = evaluate_run(truth, Ab, cube.data, M_lib.signatures,
                                         class_offsets=M_lib.class_offsets, cfg_hash=chash).to_dict()
    payload = {"config_hash": chash, "results": results}

    out, digest = workdir.stage_dir("eval", {"run": manifest.get("run_hash")}, {"cube": _cube_digest(cube_path)})
    _write_json(out / "eval.json", payload)
    outputs = ["eval.json"]
    if args.maps:
        first = M_lib.signatures @ A
        save_matrix_csv(band_mean_error_map(cube.data, first, cube.height, cube.width), out / "error_map_first.csv")
        outputs.append("error_map_first.csv")
        if V is not None:
            second = first + V @ B
            save_matrix_csv(band_mean_error_map(cube.data, second, cube.height, cube.width),
                            out / "error_map_second.csv")
            outputs.append("error_map_second.csv")
    _write_json(
        out / "manifest.json",
        _manifest("eval", {"run": str(run_dir)}, {"cube": str(cube_path), "truth": truth_path}, outputs,
                  extra={"run_hash": digest}),
    )
    workdir.register("eval", path=out)
    print(_format_table(results))
    return out


# --------------------------------------------------------------------------
# argument parsing


def build_parser():
    parser = _Parser(prog="svasu", description=__doc__.split("\n\n")[0].strip())
    parser.add_argument("--workdir", default="svasu_runs", help="directory holding stage run directories")
    parser.add_argument("--threads", type=int, default=None,
                        help="BLAS thread cap; 1 guarantees bitwise reproducibility (env SVASU_THREADS)")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="-v stage summaries, -vv per-iteration log")
    parser.add_argument("--version", action="version", version=f"svasu {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic scene with known abundances")
    p.add_argument("--pixels", type=int, default=2500, help="number of pixels n")
    p.add_argument("--bands", type=int, default=200, help="number of bands b")
    p.add_argument("--endmembers", type=int, default=5, help="number of materials p")
    p.add_argument("--max-active", type=int, default=4, help="cap on active materials per pixel")
    p.add_argument("--signature-snr", type=float, default=30.0, help="library variant SNR in dB")
    p.add_argument("--scene-snr", type=float, default=40.0, help="scene noise SNR in dB (inf disables noise)")
    p.add_argument("--copies", type=int, default=4, help="perturbed variants per base signature")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("extract", help="build an in-situ library from homogeneous windows")
    p.add_argument("--cube", help="cube header JSON (default: latest synth cube)")
    p.add_argument("--window-radius", type=int, default=1, help="window half-size r")
    p.add_argument("--threshold", type=float, default=0.02, help="max mean spectral angle (rad) of a pure window")
    p.add_argument("--max-candidates", type=int, default=5, help="representatives kept per class")
    p.add_argument("--merge-angle", type=float, default=0.03, help="centroid angle (rad) merging candidates")

    p = sub.add_parser("segment", help="split an in-situ library into endmember and variability libraries")
    p.add_argument("--library", help="in-situ library CSV (default: latest synth/extract output)")
    p.add_argument("--zeta", type=float, default=DEFAULT_ZETA, help="cumulative eigenvalue threshold ζ")
    p.add_argument("--add-mean", action="store_true", help="add the library mean back to variability atoms")

    p = sub.add_parser("unmix", help="run the two-order solver (optionally the l1 baseline)")
    p.add_argument("--cube", help="cube header JSON (default: the cube upstream of the libraries)")
    p.add_argument("--endmembers", help="endmember library CSV (default: latest segment output)")
    p.add_argument("--variability", help="variability library CSV (default: next to --endmembers)")
    p.add_argument("--no-variability", action="store_true", help="solve without a variability library")
    p.add_argument("--insitu-library", help="segment this in-situ library inline instead")
    p.add_argument("--zeta", type=float, default=DEFAULT_ZETA, help="ζ for inline segmentation")
    p.add_argument("--add-mean", action="store_true", help="inline segmentation: add mean to variability")
    p.add_argument("--init-abundances", help="CSV warm start for A (m x n)")
    p.add_argument("--preset", choices=sorted(PRESETS), help="parameter bundle for α, β, γ")
    p.add_argument("--alpha", type=float, default=None, help="α, weight of the second-order fit")
    p.add_argument("--beta", type=float, default=None, help="β, row-sparsity weight")
    p.add_argument("--gamma", type=float, default=None, help="γ, coefficient penalty weight")
    p.add_argument("--epsilon", type=float, default=1e-8, help="ε, reweighting stabilizer")
    p.add_argument("--max-iters", type=int, default=1000)
    p.add_argument("--rel-tol", type=float, default=1e-6, help="relative objective change to stop at")
    p.add_argument("--seed", type=int, default=0, help="seed of the random initialization")
    p.add_argument("--asc", action="store_true", help="soft sum-to-one via a pseudo band")
    p.add_argument("--asc-weight", type=float, default=10.0, help="pseudo-band magnitude δ")
    p.add_argument("--baseline", choices=["none", "sunsal"], default="none", help="also run the l1 baseline")
    p.add_argument("--lambda", dest="lam", type=float, default=1e-3, help="λ of the l1 baseline")

    p = sub.add_parser("eval", help="score an unmix run")
    p.add_argument("--run", help="unmix run directory (default: latest)")
    p.add_argument("--cube", help="override the cube used for reconstruction scores")
    p.add_argument("--truth", help="ground-truth abundance CSV (default: from the synth stage)")
    p.add_argument("--maps", action="store_true", help="write band-averaged error maps as CSV grids")
    return parser


COMMANDS = {
    "synth": cmd_synth,
    "extract": cmd_extract,
    "segment": cmd_segment,
    "unmix": cmd_unmix,
    "eval": cmd_eval,
}


def _fail(kind, code, message):
    sys.stderr.write(json.dumps({"error": kind, "exit_code": code, "message": str(message)}) + "\n")
    return code


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        return _fail("usage", EXIT_USAGE, exc)
    logging.basicConfig(
        level=[logging.WARNING, logging.INFO, logging.DEBUG][min(args.verbose, 2)],
        format="%(name)s: %(message)s",
    )
    threads = args.threads
    if threads is None:
        threads = int(os.environ.get("SVASU_THREADS", "1"))
    workdir = Workdir(args.workdir)
    try:
        with threadpool_limits(limits=threads):
            out = COMMANDS[args.command](args, workdir)
    except DimensionMismatchError as exc:
        return _fail(exc.kind, EXIT_DIMENSION, exc)
    except FileFormatError as exc:
        return _fail(exc.kind, EXIT_FILE, exc)
    except SvasuError as exc:
        return _fail(exc.kind, EXIT_RUNTIME, exc)
    except OSError as exc:
        return _fail("io", EXIT_FILE, exc)
    print(out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
