"""
Kommandozeile: reconstruct, extract, eval, gradcheck, bench, sample, kernel-profile

Exit-Codes: 0 Erfolg, 1 Validierungs- oder Laufzeitfehler, 2 Aufruffehler.
Alle Meldungen gehen auf stderr.
"""

import argparse
import logging
import sys
import time
from typing import List, Optional

import numpy as np

from . import config as config_module
from .export import (
    write_grid_dump,
    write_kernel_profile,
    write_loss_history,
    write_mesh,
    write_point_cloud,
    write_records,
)
from .field import with_kernel_kind
from .gradcheck import PIPELINE_CONFIGS, run_gradcheck
from .ingest import read_image, read_mesh, read_point_cloud
from .isosurface import is_watertight
from .kernel import KernelKind, evaluate, matched_exponential_k
from .metrics import (
    DEFAULT_LAMBDA_MIX,
    chamfer_distance,
    composite_loss,
    l1,
    mesh_chamfer,
    mse,
    psnr,
    sample_surface,
    ssim,
)
from .optimize import (
    ConstraintViolationError,
    NonFiniteLossError,
    extract_mesh,
    nearest_plane_oracle,
    run,
)
from .shapes import SHAPE_KINDS, sample_shape

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2

# Flag → Konfigurationsschlüssel (None = nicht gesetzt, Datei bzw. Standard gilt)
_RUN_FLAGS = (
    "resolution",
    "steps",
    "lr_position",
    "lr_normal",
    "lr_k",
    "lr_m",
    "lr_feature",
    "supervision_samples",
    "loss_kind",
    "kernel_kind",
    "background_sdf",
    "workers",
    "alpha0",
    "lambda_lap",
    "mc_samples",
    "anneal_fraction",
    "seed",
)


def _error(message: str) -> None:
    print(f"Fehler: {message}", file=sys.stderr)


def _info(message: str) -> None:
    print(message, file=sys.stderr)


def _add_run_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key=value-Konfigurationsdatei")
    parser.add_argument("--resolution", type=int)
    parser.add_argument("--steps", type=int)
    parser.add_argument("--lr-position", dest="lr_position", type=float)
    parser.add_argument("--lr-normal", dest="lr_normal", type=float)
    parser.add_argument("--lr-k", dest="lr_k", type=float)
    parser.add_argument("--lr-m", dest="lr_m", type=float)
    parser.add_argument("--lr-feature", dest="lr_feature", type=float)
    parser.add_argument("--supervision-samples", dest="supervision_samples", type=int)
    parser.add_argument("--loss-kind", dest="loss_kind", choices=("sdf_l1", "sdf_l2"))
    parser.add_argument("--kernel", dest="kernel_kind", choices=[k.value for k in KernelKind])
    parser.add_argument("--background-sdf", dest="background_sdf", type=float)
    parser.add_argument("--workers", type=int)
    parser.add_argument("--alpha0", type=float, help="Anfangsradius des Filters")
    parser.add_argument("--lambda-lap", dest="lambda_lap", type=float)
    parser.add_argument("--mc-samples", dest="mc_samples", type=int)
    parser.add_argument("--anneal-fraction", dest="anneal_fraction", type=float)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--no-dim-correction", dest="dim_corrected", action="store_const", const=False)
    parser.add_argument("--debug", action="store_const", const=True, help="Invarianten in jedem Schritt prüfen")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="compact-imls", description="Kompakte IMLS-Flächenrekonstruktion")
    parser.add_argument("--verbose", action="store_true", help="Debug-Logging auf stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("reconstruct", help="Punktattribute optimieren und Netz extrahieren")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--loss-csv", dest="loss_csv")
    p.add_argument("--no-progress", dest="progress", action="store_false")
    _add_run_flags(p)

    p = sub.add_parser("extract", help="Einmal splatten und Marching Cubes, ohne Optimierung")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--resolution", type=int, default=64)
    p.add_argument("--kernel", choices=[k.value for k in KernelKind], default=KernelKind.COMPACT.value)
    p.add_argument("--background-sdf", dest="background_sdf", type=float)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--dump-grid", dest="dump_grid")

    p = sub.add_parser("eval", help="Chamfer zweier Netze oder Bildmetriken zweier PNGs")
    p.add_argument("--mesh-a", dest="mesh_a")
    p.add_argument("--mesh-b", dest="mesh_b")
    p.add_argument("--image-a", dest="image_a")
    p.add_argument("--image-b", dest="image_b")
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lambda-mix", dest="lambda_mix", type=float, default=DEFAULT_LAMBDA_MIX)

    p = sub.add_parser("gradcheck", help="Finite-Differenzen-Prüfung aller Ableitungen")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--pipeline-configs", dest="pipeline_configs", type=int, default=PIPELINE_CONFIGS)

    p = sub.add_parser("bench", help="Kernvergleich kompakt gegen exponentiell")
    p.add_argument("--kernel", action="append", choices=[k.value for k in KernelKind])
    p.add_argument("--shape", choices=SHAPE_KINDS, default="torus")
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--resolution", type=int, default=48)
    p.add_argument("--steps", type=int, default=300)
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")

    p = sub.add_parser("sample", help="Punktwolke einer Testform erzeugen")
    p.add_argument("--kind", choices=SHAPE_KINDS, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--noise-pos", dest="noise_pos", type=float, default=0.0)
    p.add_argument("--noise-normal-deg", dest="noise_normal_deg", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("kernel-profile", help="1-D-Kernprofil als CSV")
    p.add_argument("--k", type=float, default=1.0)
    p.add_argument("--m", type=float, default=1.0)
    p.add_argument("--n", type=int, default=151)
    p.add_argument("--out", required=True)
    return parser


def _cmd_reconstruct(args: argparse.Namespace) -> int:
    file_values = config_module.read_config_file(args.config) if args.config else {}
    overrides = {key: getattr(args, key) for key in _RUN_FLAGS}
    overrides["dim_corrected"] = args.dim_corrected
    overrides["debug"] = args.debug
    cfg = config_module.build_config(file_values, overrides)

    cloud = with_kernel_kind(read_point_cloud(args.input), cfg.kernel_kind)
    _info(f"{len(cloud)} Punkte gelesen, {cfg.steps} Schritte bei {cfg.resolution}³")
    state, mesh = run(cloud, nearest_plane_oracle(cloud), cfg, progress=args.progress)
    write_mesh(mesh, args.out)
    if args.loss_csv:
        write_loss_history(args.loss_csv, state.loss_history, state.alpha_history)
    final = state.loss_history[-1] if state.loss_history else float("nan")
    _info(f"✓ Netz geschrieben: {args.out} ({mesh.n_vertices} Vertices, {mesh.n_triangles} Dreiecke)")
    _info(f"  Letzter Verlust: {final:.6g}")
    return EXIT_OK


def _cmd_extract(args: argparse.Namespace) -> int:
    kind = KernelKind(args.kernel)
    cloud = with_kernel_kind(read_point_cloud(args.input), kind)
    grid, mesh = extract_mesh(cloud, args.resolution, kind, args.background_sdf, args.workers)
    write_mesh(mesh, args.out)
    if args.dump_grid:
        write_grid_dump(grid, args.dump_grid)
    closed = "ja" if is_watertight(mesh) else "nein"
    _info(f"✓ Netz geschrieben: {args.out} ({mesh.n_vertices} Vertices, {mesh.n_triangles} Dreiecke)")
    _info(f"  Wasserdicht: {closed}")
    return EXIT_OK


def _cmd_eval(args: argparse.Namespace) -> int:
    meshes = args.mesh_a is not None or args.mesh_b is not None
    images = args.image_a is not None or args.image_b is not None
    if meshes == images:
        raise ValueError("either --mesh-a/--mesh-b or --image-a/--image-b is required")
    if meshes:
        if args.mesh_a is None or args.mesh_b is None:
            raise ValueError("--mesh-a and --mesh-b must both be given")
        distance = mesh_chamfer(read_mesh(args.mesh_a), read_mesh(args.mesh_b), args.samples, args.seed)
        print("metric\tvalue")
        print(f"chamfer\t{distance!r}")
        return EXIT_OK

    if args.image_a is None or args.image_b is None:
        raise ValueError("--image-a and --image-b must both be given")
    image, reference = read_image(args.image_a), read_image(args.image_b)
    print("metric\tvalue")
    print(f"l1\t{l1(image, reference)!r}")
    print(f"ssim\t{ssim(image, reference)!r}")
    print(f"composite\t{composite_loss(image, reference, args.lambda_mix)!r}")
    print(f"mse\t{mse(image, reference)!r}")
    print(f"psnr\t{psnr(image, reference)!r}")
    return EXIT_OK


def _cmd_gradcheck(args: argparse.Namespace) -> int:
    results = run_gradcheck(args.seed, args.pipeline_configs)
    for result in results:
        status = "ok" if result.passed else "FEHLER"
        _info(f"  {status:6s} {result.name}: {result.failures}/{result.checked}, max rel {result.max_error:.3g}")
    failed = [r for r in results if not r.passed]
    if failed:
        _error(f"{len(failed)} von {len(results)} Gradientenprüfungen fehlgeschlagen")
        return EXIT_FAILURE
    _info(f"✓ Alle {len(results)} Gradientenprüfungen bestanden")
    return EXIT_OK


def bench_kernels(
    kernels: List[KernelKind], shape: str, n: int, resolution: int, steps: int, samples: int, seed: int
) -> List[dict]:
    """Rekonstruiert dieselbe Form mit jedem Kern bei gleichem Trägerradius."""
    cloud, oracle = sample_shape(shape, n, noise_pos=0.005, noise_normal_deg=5.0, seed=seed)
    truth, _ = sample_shape(shape, samples, seed=seed + 1)
    records = []
    for kind in kernels:
        cfg = config_module.build_config(
            overrides={"resolution": resolution, "steps": max(steps, 1), "kernel_kind": kind.value, "seed": seed}
        )
        start = time.perf_counter()
        _, mesh = run(with_kernel_kind(cloud, kind), oracle, cfg, steps=steps)
        seconds = time.perf_counter() - start
        chamfer = (
            chamfer_distance(sample_surface(mesh, samples, seed), truth.positions)
            if mesh.n_triangles
            else float("inf")
        )
        logger.info("bench %s: chamfer %.6g in %.1fs", kind.value, chamfer, seconds)
        records.append(
            {
                "kernel": kind.value,
                "shape": shape,
                "resolution": resolution,
                "steps": steps,
                "chamfer": float(chamfer),
                "seconds": float(seconds),
            }
        )
    return records


def _cmd_bench(args: argparse.Namespace) -> int:
    kernels = [KernelKind(k) for k in (args.kernel or [k.value for k in KernelKind])]
    records = bench_kernels(kernels, args.shape, args.n, args.resolution, args.steps, args.samples, args.seed)
    print("kernel,shape,resolution,steps,chamfer,seconds")
    for r in records:
        print(f"{r['kernel']},{r['shape']},{r['resolution']},{r['steps']},{r['chamfer']!r},{r['seconds']:.3f}")
    if args.out:
        write_records(args.out, records)
    return EXIT_OK


def _cmd_sample(args: argparse.Namespace) -> int:
    cloud, _ = sample_shape(args.kind, args.n, args.noise_pos, args.noise_normal_deg, args.seed)
    write_point_cloud(cloud, args.out)
    _info(f"✓ {len(cloud)} Punkte ({args.kind}) geschrieben: {args.out}")
    return EXIT_OK


def kernel_profile(k: float, m: float, n: int = 151) -> dict:
    """Kernwerte über s ∈ [0, 1.5·m·k]; die Trägergrenze s = m·k ist immer enthalten."""
    if n < 2:
        raise ValueError(f"n must be >= 2, got {n}")
    support = m * k
    s = np.union1d(np.linspace(0.0, 1.5 * support, n), [support])
    k_arr, m_arr = np.full_like(s, k), np.full_like(s, m)
    compact = evaluate(KernelKind.COMPACT, s, k_arr, m_arr)
    exponential = evaluate(KernelKind.EXPONENTIAL, s, matched_exponential_k(k_arr, m_arr), m_arr, derivatives=False)
    return {
        "s": s,
        "distance": np.sqrt(s),
        "compact": compact.value,
        "d_s": compact.d_s,
        "exponential": exponential.value,
    }


def _cmd_kernel_profile(args: argparse.Namespace) -> int:
    table = kernel_profile(args.k, args.m, args.n)
    write_kernel_profile(args.out, table)
    _info(f"✓ Kernprofil mit {len(table['s'])} Zeilen geschrieben: {args.out}")
    return EXIT_OK


_COMMANDS = {
    "reconstruct": _cmd_reconstruct,
    "extract": _cmd_extract,
    "eval": _cmd_eval,
    "gradcheck": _cmd_gradcheck,
    "bench": _cmd_bench,
    "sample": _cmd_sample,
    "kernel-profile": _cmd_kernel_profile,
}


def cli_main(argv: Optional[List[str]] = None) -> int:
    """Führt einen Unterbefehl aus und liefert den Exit-Code."""
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE

    if args.verbose:
        logging.basicConfig(level=logging.DEBUG, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")

    try:
        return _COMMANDS[args.command](args)
    except (ValueError, OSError, NonFiniteLossError, ConstraintViolationError) as e:
        _error(str(e))
        logger.debug("command %s failed", args.command, exc_info=True)
        return EXIT_FAILURE


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
