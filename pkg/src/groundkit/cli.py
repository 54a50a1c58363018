"""Command-line surface: ground, eval, bench-search, heatmap.

Exit codes: 0 ok, 2 bad bundle, 3 bad image, 4 bad flags.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from .boxsearch import BRUTE_FORCE_GUARD, brute_force_search, default_lambda, ess_search, hierarchical_search
from .bundle import load_bundle
from .errors import (
    BundleCorruptionError,
    BundleFormatError,
    ConfigError,
    GroundkitError,
    ParameterError,
    UnsupportedArchError,
)
from .evalharness import DATASET_THRESHOLDS, evaluate, load_dataset
from .features import PipelineConfig
from .imageio import ImageReadError, read_image, write_pgm16, write_raw_dump
from .pipeline import ground_phrase
from .scoremap import compute_score_map
from .tensor_ops import bilinear_resize

EXIT_BAD_BUNDLE = 2
EXIT_BAD_IMAGE = 3
EXIT_BAD_FLAGS = 4

_BUNDLE_ERRORS = (BundleFormatError, BundleCorruptionError, UnsupportedArchError, FileNotFoundError)


class _FlagError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # bad flags -> exit code 4, not argparse's 2
        raise _FlagError(message)


def parse_slic_spec(spec: str) -> list[int]:
    """'100:600:50' -> [100, 150, ..., 600]; also 'a,b,c' lists and single ints."""
    try:
        if ":" in spec:
            start, stop, step = (int(v) for v in spec.split(":"))
            counts = list(range(start, stop + 1, step))
        elif "," in spec:
            counts = [int(v) for v in spec.split(",")]
        else:
            counts = [int(spec)]
    except ValueError as e:
        raise ParameterError(f"bad --slic spec {spec!r}: {e}") from None
    if not counts:
        raise ParameterError(f"--slic spec {spec!r} produces no counts")
    return counts


def parse_arch_opts(tokens: list[str]) -> dict:
    opts: dict = {}
    for tok in tokens:
        if tok.startswith("stride="):
            opts["stride_divisor"] = int(tok.split("=", 1)[1])
        elif tok == "dilate":
            opts["dilation_enabled"] = True
        elif tok == "no-dilate":
            opts["dilation_enabled"] = False
        else:
            raise ParameterError(f"unknown --arch-opts token {tok!r}")
    return opts


def _pipeline_config(args) -> PipelineConfig:
    opts = parse_arch_opts(args.arch_opts or [])
    return PipelineConfig(
        stride_divisor=opts.get("stride_divisor", 1),
        slic_counts=parse_slic_spec(args.slic),
        dilation_enabled=opts.get("dilation_enabled", True),
        seed=args.seed,
    )


def _add_pipeline_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--bundle", required=True, help="CGB1 weights bundle")
    p.add_argument("--arch-opts", nargs="*", default=[], metavar="OPT",
                   help="stride=N, dilate, no-dilate")
    p.add_argument("--slic", default="100:600:50", help="superpixel counts, start:stop:step")
    p.add_argument("--sigma", type=float, default=None, help="score-map temperature")
    lam = p.add_mutually_exclusive_group()
    lam.add_argument("--lambda-rel", type=float, default=None,
                     help="area penalty as a multiple of mean(score map)")
    lam.add_argument("--lambda", dest="lambda_abs", type=float, default=None,
                     help="absolute area penalty")
    p.add_argument("--search", choices=("brute", "ess", "hier"), default="hier")
    p.add_argument("--hier-factor", type=int, default=4)
    p.add_argument("--levels", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--template", action="store_true",
                   help="wrap the query in the photo prompt template")


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _resize_score_map(values: np.ndarray, h: int, w: int) -> np.ndarray:
    # resize in log space: values can exceed the float32 range
    logv = np.log(values).astype(np.float32)
    return np.exp(bilinear_resize(logv[:, :, None], h, w)[:, :, 0].astype(np.float64))


def cmd_ground(args) -> int:
    bundle = load_bundle(args.bundle)
    image = read_image(args.image)
    out = ground_phrase(
        image, args.query, bundle,
        cfg=_pipeline_config(args),
        sigma=args.sigma,
        lambda_rel=args.lambda_rel,
        lambda_abs=args.lambda_abs,
        search=args.search,
        hier_factor=args.hier_factor,
        levels=args.levels,
        use_template=args.template,
    )
    payload = {
        "box": list(out.box.as_tuple()),
        "method": out.method,
        "query": args.query,
        "score": out.score,
    }
    if not args.no_timings:
        payload["timings"] = out.timings
    _emit(json.dumps(payload, sort_keys=True, indent=2) + "\n", args.out)
    if args.heatmap:
        heat = _resize_score_map(out.score_map.values, image.shape[1], image.shape[2])
        write_pgm16(heat, args.heatmap)
        write_raw_dump(heat, str(args.heatmap) + ".raw")
        from .report import render_heatmap_figure

        render_heatmap_figure(image, heat, str(args.heatmap) + ".png",
                              box=out.box, title=args.query)
    return 0


def cmd_heatmap(args) -> int:
    bundle = load_bundle(args.bundle)
    image = read_image(args.image)
    from .features import compute_spatial_features, preprocess_image
    from .text_encoder import encode_phrase

    cfg = _pipeline_config(args)
    feats = compute_spatial_features(preprocess_image(image, bundle), bundle, cfg)
    text = encode_phrase(args.query, bundle, use_template=args.template)
    phi = compute_score_map(feats, text, args.sigma if args.sigma is not None else bundle.sigma_default)
    heat = _resize_score_map(phi.values, image.shape[1], image.shape[2])
    write_pgm16(heat, args.out)
    write_raw_dump(heat, str(args.out) + ".raw")
    from .report import render_heatmap_figure

    render_heatmap_figure(image, heat, str(args.out) + ".png", title=args.query)
    return 0


def cmd_eval(args) -> int:
    bundle = load_bundle(args.bundle)
    records, parse_errors = load_dataset(args.data)
    for err in parse_errors:
        print(f"dataset: {err}", file=sys.stderr)
    thr = args.thr if args.thr is not None else DATASET_THRESHOLDS[args.dataset_kind]
    cfg = _pipeline_config(args)
    base = Path(args.data).parent

    def predictor(rec):
        img = read_image(base / rec.image_path)
        out = ground_phrase(
            img, rec.phrase, bundle, cfg=cfg,
            sigma=args.sigma, lambda_rel=args.lambda_rel, lambda_abs=args.lambda_abs,
            search=args.search, hier_factor=args.hier_factor, levels=args.levels,
            use_template=args.template,
        )
        return out.box, out.score

    report = evaluate(records, predictor, thr)
    payload = report.to_dict()
    payload["dataset_parse_errors"] = parse_errors
    _emit(json.dumps(payload, sort_keys=True, indent=2) + "\n", args.out)
    if args.out:
        stem = Path(args.out).with_suffix("")
        with open(f"{stem}.csv", "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["index", "iou", "correct", "score", "error"])
            for r in report.rows:
                writer.writerow([r.index, r.iou, int(r.correct), r.score, r.error or ""])
        from .report import render_eval_figure

        render_eval_figure(report, f"{stem}.png")
    print(f"Acc@{thr} = {report.accuracy:.4f} ({report.evaluated} records, {report.errors} errors)")
    return 0


def _smooth_random_map(size: int, rng: np.random.Generator) -> np.ndarray:
    from scipy.ndimage import gaussian_filter

    g = gaussian_filter(rng.standard_normal((size, size)), sigma=size / 16.0)
    g = (g - g.mean()) / (g.std() + 1e-12)
    return np.exp(g)


def cmd_bench_search(args) -> int:
    rng = np.random.default_rng(args.seed)
    maps = [_smooth_random_map(args.size, rng) for _ in range(args.trials)]
    methods = args.methods.split(",")
    rows = []
    for method in methods:
        if method == "brute" and args.size > BRUTE_FORCE_GUARD:
            print(f"note: brute skipped, {args.size} exceeds guard ({BRUTE_FORCE_GUARD})",
                  file=sys.stderr)
            rows.append({"method": method, "mean_s": None, "std_s": None})
            continue
        times = []
        for phi in maps:
            lam = default_lambda(phi, args.lambda_rel)
            t0 = time.perf_counter()
            if method == "brute":
                brute_force_search(phi, lam)
            elif method == "ess":
                ess_search(phi, lam)
            elif method == "hier":
                hierarchical_search(phi, lam, factor=args.hier_factor, levels=args.levels)
            else:
                raise ParameterError(f"unknown method {method!r}")
            times.append(time.perf_counter() - t0)
        rows.append({
            "method": method,
            "mean_s": float(np.mean(times)),
            "std_s": float(np.std(times)),
        })
    lines = ["method,mean_s,std_s,trials,size"]
    for r in rows:
        lines.append(f"{r['method']},{r['mean_s']},{r['std_s']},{args.trials},{args.size}")
    _emit("\n".join(lines) + "\n", args.out)
    if args.out:
        from .report import render_bench_figure

        render_bench_figure(rows, str(Path(args.out).with_suffix(".png")))
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="groundkit", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ground", help="localize a phrase in one image")
    _add_pipeline_args(p)
    p.add_argument("--image", required=True)
    p.add_argument("--query", required=True)
    p.add_argument("--out", default=None, help="write box JSON here (default stdout)")
    p.add_argument("--heatmap", default=None, help="also write score-map PGM/raw/figure")
    p.add_argument("--no-timings", action="store_true")
    p.set_defaults(func=cmd_ground)

    p = sub.add_parser("heatmap", help="score map only, no box search")
    _add_pipeline_args(p)
    p.add_argument("--image", required=True)
    p.add_argument("--query", required=True)
    p.add_argument("--out", required=True, help="PGM output path")
    p.set_defaults(func=cmd_heatmap)

    p = sub.add_parser("eval", help="batch Acc@thr evaluation over a JSONL dataset")
    _add_pipeline_args(p)
    p.add_argument("--data", required=True, help="JSONL grounding records")
    p.add_argument("--thr", type=float, default=None)
    p.add_argument("--dataset-kind", choices=sorted(DATASET_THRESHOLDS), default="flickr")
    p.add_argument("--out", default=None, help="JSON report path (CSV+figure alongside)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench-search", help="time the search methods on random smooth maps")
    p.add_argument("--size", type=int, default=256)
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--methods", default="brute,ess,hier")
    p.add_argument("--lambda-rel", type=float, default=1.0)
    p.add_argument("--hier-factor", type=int, default=4)
    p.add_argument("--levels", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="CSV output path (figure alongside)")
    p.set_defaults(func=cmd_bench_search)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _FlagError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_BAD_FLAGS
    try:
        return args.func(args)
    except _BUNDLE_ERRORS as e:
        print(f"bundle error: {e}", file=sys.stderr)
        return EXIT_BAD_BUNDLE
    except ImageReadError as e:
        print(f"image error: {e}", file=sys.stderr)
        return EXIT_BAD_IMAGE
    except (ParameterError, ConfigError) as e:
        print(f"flag error: {e}", file=sys.stderr)
        return EXIT_BAD_FLAGS
    except GroundkitError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
