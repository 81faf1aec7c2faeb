"""Command-line entry point: ``edn <subcommand> ...``.

Exit codes: 0 success, 1 validation failure, 2 I/O or file-format error.
"""
import argparse
import statistics
import sys
import time
from pathlib import Path

import numpy as np

from . import graph, io, kernels, losses, metrics
from .errors import EdnError, FormatError

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 1, 2


class ValidationFailure(EdnError):
    pass


def _config(path):
    return io.load_run_config(path) if path else graph.NetworkConfig()


def _model(args, cfg):
    if args.weights:
        return io.load_weights(args.weights, cfg)
    return graph.build_model(cfg)


def cmd_infer(args):
    cfg = _config(args.config)
    model = _model(args, cfg)
    image = io.load_image_ppm(args.image, cfg.input_side)
    out = graph.forward(model, image, backend=args.backend)
    io.save_map_pgm(out.predictions[0], args.out)
    if args.all_sides:
        d = Path(args.all_sides)
        d.mkdir(parents=True, exist_ok=True)
        stem = Path(args.image).stem
        for i, p in enumerate(out.predictions, start=1):
            io.save_map_pgm(p, d / f"{stem}_p{i}.pgm")
    return EXIT_OK


def cmd_init_weights(args):
    cfg = _config(args.config)
    model = graph.build_model(cfg)
    if args.calibrate_image:
        image = io.load_image_ppm(args.calibrate_image, cfg.input_side)
        model = graph.calibrate_batchnorm(model, image, backend=args.backend)
    io.save_weights(model, args.out)
    return EXIT_OK


def pair_files(*dirs):
    """Map stem -> paths across directories; abort if any stem is unmatched."""
    listings = []
    for d in dirs:
        d = Path(d)
        if not d.is_dir():
            raise FileNotFoundError(f"not a directory: {d}")
        listings.append({p.stem: p for p in d.iterdir() if p.suffix.lower() == ".pgm"})
    stems = set().union(*listings)
    unmatched = sorted(s for s in stems if not all(s in lst for lst in listings))
    if unmatched:
        for s in unmatched:
            print(f"unmatched: {s}", file=sys.stderr)
        raise ValidationFailure(f"{len(unmatched)} file(s) have no counterpart")
    if not stems:
        raise ValidationFailure("no .pgm files found")
    return [(s, [lst[s] for lst in listings]) for s in sorted(stems)]


def _load_pair(pred_path, gt_path):
    P = io.load_map_pgm(pred_path)
    G = io.load_mask_pgm(gt_path)
    if P.shape != G.shape:
        raise ValidationFailure(f"{pred_path.name}: prediction {P.shape} and mask {G.shape} differ in size")
    return P, G


def cmd_eval(args):
    report = metrics.MetricsReport()
    rows = []
    for stem, (pred, gt) in pair_files(args.pred, args.gt):
        P, G = _load_pair(pred, gt)
        if not G.any():
            print(f"warning: {stem}: empty ground-truth mask, skipped", file=sys.stderr)
            rows.append((stem, None))
            continue
        scores = metrics.evaluate_pair(P, G)
        report.add(stem, scores)
        rows.append((stem, scores))
    io.write_metrics_csv(args.out, rows, report.aggregate())
    return EXIT_OK


def _improvement(a, b):
    return metrics.relative_improvement(a, b) if a > 0 else float("nan")


def cmd_partition_eval(args):
    rows = []
    per_region = {f"{r}_{s}": [] for s in ("a", "b") for r in metrics.REGIONS}
    for stem, (pa, pb, gt) in pair_files(args.pred_a, args.pred_b, args.gt):
        A, G = _load_pair(pa, gt)
        B, _ = _load_pair(pb, gt)
        if not G.any():
            print(f"warning: {stem}: empty ground-truth mask, skipped", file=sys.stderr)
            rows.append((stem, None))
            continue
        ea, eb = metrics.region_errors(A, G), metrics.region_errors(B, G)
        values = {}
        for r in metrics.REGIONS:
            values[f"{r}_a"], values[f"{r}_b"] = ea[r], eb[r]
            values[f"impv_{r}"] = _improvement(ea[r], eb[r])
            per_region[f"{r}_a"].append(ea[r])
            per_region[f"{r}_b"].append(eb[r])
        rows.append((stem, values))
    agg = {}
    for key, vals in per_region.items():
        vals = np.asarray(vals, dtype=np.float64)
        vals = vals[~np.isnan(vals)]
        agg[key] = float(vals.mean()) if vals.size else float("nan")
    # the aggregate improvement compares the mean errors, not the mean of ratios
    for r in metrics.REGIONS:
        a, b = agg[f"{r}_a"], agg[f"{r}_b"]
        agg[f"impv_{r}"] = _improvement(a, b) if not np.isnan(a) else float("nan")
    io.write_partition_csv(args.out, rows, agg)
    return EXIT_OK


def cmd_gradcheck(args):
    worst, ok = losses.gradcheck(args.seed, cases=args.cases)
    print(f"max relative error {worst:.3e} over {args.cases} cases: {'PASS' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_INVALID


def time_forward(model, image, backend, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        graph.forward(model, image, backend=backend)
        times.append(time.perf_counter() - t0)
    return times


def cmd_bench(args):
    cfg = _config(args.config)
    backends = sorted(kernels.BACKENDS) if args.backend == "all" else [args.backend or kernels.active()]
    image = np.random.default_rng(cfg.seed).random((1, 3, cfg.input_side, cfg.input_side), dtype=np.float32)
    print(f"input {cfg.input_side}x{cfg.input_side}, repeat {args.repeat}")
    print(f"{'variant':8s} {'backend':9s} {'GMACs':>8s} {'median s':>9s} {'best s':>8s}")
    for lite in (False, True):
        variant = cfg.replace(lite=lite)
        model = graph.build_model(variant)
        gmacs = model.macs() / 1e9
        for b in backends:
            times = time_forward(model, image, b, args.repeat)
            name = "lite" if lite else "full"
            print(f"{name:8s} {b:9s} {gmacs:8.3f} {statistics.median(times):9.3f} {min(times):8.3f}")
    return EXIT_OK


def build_parser():
    ap = argparse.ArgumentParser(prog="edn", description="EDN saliency network and evaluation tools")
    sub = ap.add_subparsers(dest="command", required=True)

    def backend_opt(p, allow_all=False):
        choices = sorted(kernels.BACKENDS) + (["all"] if allow_all else [])
        p.add_argument("--backend", choices=choices, default=None,
                       help="kernel backend (default: compiled when available)")

    p = sub.add_parser("infer", help="run the network on one PPM image")
    p.add_argument("--config")
    p.add_argument("--weights", help="EDNW weights; seeded initialization when omitted")
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--all-sides", metavar="DIR", help="also write P1..P5 into DIR")
    backend_opt(p)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("init-weights", help="write seeded initial weights")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--calibrate-image", metavar="PPM",
                   help="set batch-norm statistics from one forward pass on this image")
    backend_opt(p)
    p.set_defaults(func=cmd_init_weights)

    p = sub.add_parser("eval", help="score predictions against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("partition-eval", help="per-region MAE for two prediction sets")
    p.add_argument("--pred-a", required=True)
    p.add_argument("--pred-b", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_partition_eval)

    p = sub.add_parser("gradcheck", help="check loss gradients against finite differences")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--cases", type=int, default=100)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("bench", help="forward time and MAC totals, full vs lite")
    p.add_argument("--config")
    p.add_argument("--repeat", type=int, default=3)
    backend_opt(p, allow_all=True)
    p.set_defaults(func=cmd_bench)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (FormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (EdnError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
