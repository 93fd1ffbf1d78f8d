"""Command-line interface.

Subcommands: generate | fit-mixture | fit | barycenter | distance | evaluate |
plot.  Exit codes: 0 success, 1 usage error, 2 data/model error, 3 solver
non-convergence.  With --json a machine-readable summary is printed on stdout
(schema shipped in ``mct/schemas/summary.schema.json``).  The environment
variable MCT_LOG in {error, info, debug} controls diagnostics on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import barycenter as bc
from . import data as dataio
from . import metrics, mixture, multilevel, ot
from .expfam import CATEGORICAL, GAUSSIAN, FamilyError
from .ot import SinkhornError

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_SOLVER = 3

#: fixed plotting palette
PALETTE = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b",
    "#e377c2", "#7f7f7f", "#bcbd22", "#17becf", "#393b79", "#637939",
    "#8c6d31",
]


class UsageError(ValueError):
    """Bad flag combination detected after parsing."""


def _add_common(p):
    p.add_argument("--json", action="store_true", help="print a JSON summary on stdout")
    p.add_argument("--seed", type=int, default=0)


def _add_solver(p):
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--max-iter", type=int, default=100)
    p.add_argument(
        "--threads", type=int, default=1,
        help="reserved; computation is single-threaded and deterministic",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mct",
        description="Multilevel probabilistic clustering via composite transportation distance.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic grouped dataset")
    p.add_argument("--kind", choices=["bars", "continuous"], required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--groups", type=int, default=None, help="number of groups J")
    p.add_argument("--points", type=int, default=None, help="points per group")
    p.add_argument("--dim", type=int, default=None)
    p.add_argument("--clusters", type=int, default=None, help="true cluster count")
    p.add_argument("--sigma2", type=float, default=0.5)
    _add_common(p)

    p = sub.add_parser("fit-mixture", help="fit a single mixture to one group")
    p.add_argument("--data", required=True)
    p.add_argument("--group", type=int, default=0, help="group index to fit")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--lambda-l", type=float, default=1.0, dest="lambda_l")
    p.add_argument("--out", default=None)
    _add_solver(p)
    _add_common(p)

    p = sub.add_parser("fit", help="fit the full multilevel model")
    p.add_argument("--data", required=True)
    p.add_argument("--k", type=int, required=True, help="local components per group")
    p.add_argument("--c", type=int, required=True, help="global clusters")
    p.add_argument("--l", type=int, required=True, help="components per global cluster")
    p.add_argument("--zeta", type=float, default=1.0)
    p.add_argument("--lambda-l", type=float, default=1.0, dest="lambda_l")
    p.add_argument("--lambda-g", type=float, default=1.0, dest="lambda_g")
    p.add_argument("--lambda-a", type=float, default=None, dest="lambda_a",
                   help="defaults to --lambda-g")
    p.add_argument("--out", default=None)
    _add_solver(p)
    _add_common(p)

    p = sub.add_parser("barycenter", help="barycenter of saved mixtures")
    p.add_argument("--inputs", nargs="+", required=True, help="mixture JSON files")
    p.add_argument("--l", type=int, required=True)
    p.add_argument("--lambda-g", type=float, default=1.0, dest="lambda_g")
    p.add_argument("--out", default=None)
    _add_solver(p)
    _add_common(p)

    p = sub.add_parser("distance", help="composite distance between two mixtures")
    p.add_argument("--a", required=True, help="first mixture JSON file")
    p.add_argument("--b", required=True, help="second mixture JSON file")
    p.add_argument("--lambda-g", type=float, default=1.0, dest="lambda_g")
    _add_common(p)

    p = sub.add_parser("evaluate", help="score a model against ground-truth labels")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    _add_common(p)

    p = sub.add_parser("plot", help="render the fitted model to SVG")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    _add_common(p)

    return parser


def _emit(args, summary: dict):
    if args.json:
        print(json.dumps(summary))


def cmd_generate(args) -> int:
    kind = dataio.BAR_TOPICS if args.kind == "bars" else dataio.CONTINUOUS_GMM
    base = dataio.bars_defaults(args.seed) if args.kind == "bars" else dataio.continuous_defaults(args.seed)
    cfg = dataio.GeneratorConfig(
        kind=kind,
        n_groups=args.groups if args.groups is not None else base.n_groups,
        n_per_group=args.points if args.points is not None else base.n_per_group,
        dim=args.dim if args.dim is not None else base.dim,
        n_clusters=args.clusters if args.clusters is not None else base.n_clusters,
        seed=args.seed,
        sigma2=args.sigma2,
    )
    ds = dataio.generate(cfg)
    dataio.save_dataset(ds, args.out)
    logger.info("wrote %d groups to %s", ds.n_groups, args.out)
    _emit(args, {
        "command": "generate", "status": "ok", "out": args.out,
        "kind": args.kind, "seed": args.seed, "n_groups": ds.n_groups,
    })
    return EXIT_OK


def cmd_fit_mixture(args) -> int:
    ds = dataio.load_dataset(args.data)
    if not 0 <= args.group < ds.n_groups:
        raise dataio.DataFormatError(
            f"group index {args.group} out of range [0, {ds.n_groups})"
        )
    cfg = mixture.MixtureFitConfig(
        n_components=args.k, lam=args.lambda_l,
        max_iter=args.max_iter, tol=args.tol, seed=args.seed,
    )
    fitted, trace = mixture.fit_mixture(ds.groups[args.group], ds.spec, cfg)
    if args.out:
        dataio.save_mixture(fitted, args.out, trace=trace)
    print(f"fit-mixture: {len(trace)} iteration(s), objective {trace[-1]:.6f}")
    _emit(args, {
        "command": "fit-mixture", "status": "ok", "out": args.out,
        "seed": args.seed, "iterations": len(trace), "objective": trace[-1],
    })
    return EXIT_OK


def cmd_fit(args) -> int:
    ds = dataio.load_dataset(args.data)
    cfg = multilevel.MctConfig(
        n_local=args.k, n_clusters=args.c, n_components=args.l,
        lambda_l=args.lambda_l, lambda_g=args.lambda_g, lambda_a=args.lambda_a,
        zeta=args.zeta, max_iter=args.max_iter, tol=args.tol, seed=args.seed,
    )
    model = multilevel.fit_mct(ds, cfg)
    if args.out:
        dataio.save_model(model, args.out)
    print(
        f"fit: {len(model.trace)} sweep(s), objective {model.trace[-1]:.6f}, "
        f"cluster mass {np.array2string(model.b, precision=4)}"
    )
    _emit(args, {
        "command": "fit", "status": "ok", "out": args.out, "seed": args.seed,
        "n_groups": model.n_groups, "iterations": len(model.trace),
        "objective": model.trace[-1], "b": [float(v) for v in model.b],
    })
    return EXIT_OK


def cmd_barycenter(args) -> int:
    mixtures = [dataio.load_mixture(p) for p in args.inputs]
    spec = mixtures[0].spec
    if any(m.spec != spec for m in mixtures):
        raise dataio.DataFormatError("input mixtures use different family specs")
    cfg = bc.BarycenterConfig(
        n_components=args.l, lam=args.lambda_g,
        max_iter=args.max_iter, tol=args.tol, seed=args.seed,
    )
    fitted, trace = bc.fit_barycenter(mixtures, spec, cfg)
    if args.out:
        dataio.save_mixture(fitted, args.out, trace=trace)
    print(f"barycenter: {len(trace)} iteration(s), objective {trace[-1]:.6f}")
    _emit(args, {
        "command": "barycenter", "status": "ok", "out": args.out,
        "seed": args.seed, "iterations": len(trace), "objective": trace[-1],
    })
    return EXIT_OK


def cmd_distance(args) -> int:
    P = dataio.load_mixture(args.a)
    Q = dataio.load_mixture(args.b)
    value = ot.composite_distance(P, Q, args.lambda_g)
    print(f"{value:.12g}")
    _emit(args, {"command": "distance", "status": "ok", "distance": value})
    return EXIT_OK


def cmd_evaluate(args) -> int:
    ds = dataio.load_dataset(args.data)
    model = dataio.load_model(args.model)
    if ds.labels is None:
        raise dataio.DataFormatError("dataset carries no ground-truth labels")
    if model.n_groups != ds.n_groups:
        raise dataio.DataFormatError(
            f"model has {model.n_groups} groups but dataset has {ds.n_groups}"
        )
    preds = multilevel.assign_groups(model)
    scores = {
        "nmi": metrics.nmi(ds.labels, preds),
        "ari": metrics.ari(ds.labels, preds),
        "ami": metrics.ami(ds.labels, preds),
    }
    for name, value in scores.items():
        print(f"{name.upper()} {value:.4f}")
    _emit(args, {"command": "evaluate", "status": "ok", "metrics": scores})
    return EXIT_OK


def cmd_plot(args) -> int:
    ds = dataio.load_dataset(args.data)
    model = dataio.load_model(args.model)
    render_svg(model, ds, args.out)
    _emit(args, {"command": "plot", "status": "ok", "out": args.out})
    return EXIT_OK


# --------------------------------------------------------------------------
# SVG rendering (hand-emitted, deterministic)

_PANEL = 220
_MARGIN = 18


def _svg_header(width, height):
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height}" viewBox="0 0 {width} {height}">\n'
        f'<rect width="{width}" height="{height}" fill="white"/>\n'
    )


def render_svg(model, dataset, path):
    """Write a deterministic SVG: per-cluster scatter panels (2-d Gaussian) or
    per-cluster category heatmaps (categorical with a square dimension)."""
    spec = model.spec
    if spec.kind == GAUSSIAN and spec.dim == 2:
        body = _render_gaussian(model, dataset)
    elif spec.kind == CATEGORICAL and int(round(np.sqrt(spec.dim))) ** 2 == spec.dim:
        body = _render_categorical(model)
    else:
        raise dataio.DataFormatError(
            f"no plot is defined for family {spec.kind!r} with dim {spec.dim}"
        )
    with open(path, "w") as fh:
        fh.write(body)
    logger.info("wrote figure to %s", path)


def _panel_origin(m, per_row):
    row, col = divmod(m, per_row)
    return _MARGIN + col * (_PANEL + _MARGIN), _MARGIN + row * (_PANEL + _MARGIN)


def _render_gaussian(model, dataset):
    C = len(model.global_mixtures)
    per_row = min(C, 3)
    rows = -(-C // per_row)
    width = _MARGIN + per_row * (_PANEL + _MARGIN)
    height = _MARGIN + rows * (_PANEL + _MARGIN)
    assign = multilevel.assign_groups(model)
    sigma = float(np.sqrt(model.spec.sigma2))

    pts_by_cluster = []
    for m in range(C):
        members = np.nonzero(assign == m)[0]
        if members.size:
            quota = max(1, 2000 // members.size)
            pts = np.vstack([dataset.groups[j][:quota] for j in members])
        else:
            pts = np.zeros((0, 2))
        pts_by_cluster.append(pts)
    means = [model.spec.sigma2 * gm.atoms for gm in model.global_mixtures]
    everything = np.vstack(pts_by_cluster + means)
    lo = everything.min(axis=0) - 1.0
    hi = everything.max(axis=0) + 1.0
    span = float(max(hi - lo))
    scale = _PANEL / span

    out = [_svg_header(width, height)]
    for m in range(C):
        x0, y0 = _panel_origin(m, per_row)
        color = PALETTE[m % len(PALETTE)]
        out.append(
            f'<rect x="{x0}" y="{y0}" width="{_PANEL}" height="{_PANEL}" '
            f'fill="none" stroke="#444" stroke-width="1"/>\n'
        )
        out.append(
            f'<text x="{x0 + 4}" y="{y0 + 14}" font-size="12" '
            f'fill="#222">cluster {m} (b={model.b[m]:.3f})</text>\n'
        )

        def to_px(p, x0=x0, y0=y0):
            return (
                x0 + (p[0] - lo[0]) * scale,
                y0 + _PANEL - (p[1] - lo[1]) * scale,
            )

        for p in pts_by_cluster[m]:
            cx, cy = to_px(p)
            out.append(
                f'<circle cx="{cx:.2f}" cy="{cy:.2f}" r="1.4" '
                f'fill="{color}" fill-opacity="0.45"/>\n'
            )
        for mu, w in zip(means[m], model.global_mixtures[m].weights):
            cx, cy = to_px(mu)
            out.append(
                f'<circle cx="{cx:.2f}" cy="{cy:.2f}" r="{sigma * scale:.2f}" '
                f'fill="none" stroke="#111" stroke-width="1.5"/>\n'
            )
            out.append(
                f'<circle cx="{cx:.2f}" cy="{cy:.2f}" r="2.5" fill="#111"/>\n'
            )
    out.append("</svg>\n")
    return "".join(out)


def _render_categorical(model):
    from .expfam import softmax

    C = len(model.global_mixtures)
    side = int(round(np.sqrt(model.spec.dim)))
    per_row = min(C, 5)
    rows = -(-C // per_row)
    width = _MARGIN + per_row * (_PANEL + _MARGIN)
    height = _MARGIN + rows * (_PANEL + _MARGIN)
    cell = _PANEL / side

    out = [_svg_header(width, height)]
    for m, gm in enumerate(model.global_mixtures):
        x0, y0 = _panel_origin(m, per_row)
        color = PALETTE[m % len(PALETTE)]
        probs = gm.weights @ softmax(gm.atoms, axis=-1)  # (V,)
        top = float(probs.max()) or 1.0
        for v, p in enumerate(probs):
            r, c = divmod(v, side)
            out.append(
                f'<rect x="{x0 + c * cell:.2f}" y="{y0 + r * cell:.2f}" '
                f'width="{cell:.2f}" height="{cell:.2f}" fill="{color}" '
                f'fill-opacity="{p / top:.4f}" stroke="#ccc" stroke-width="0.5"/>\n'
            )
        out.append(
            f'<text x="{x0 + 4}" y="{y0 + _PANEL + 14}" font-size="12" '
            f'fill="#222">cluster {m} (b={model.b[m]:.3f})</text>\n'
        )
    out.append("</svg>\n")
    return "".join(out)


# --------------------------------------------------------------------------

_COMMANDS = {
    "generate": cmd_generate,
    "fit-mixture": cmd_fit_mixture,
    "fit": cmd_fit,
    "barycenter": cmd_barycenter,
    "distance": cmd_distance,
    "evaluate": cmd_evaluate,
    "plot": cmd_plot,
}

_LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


def _configure_logging():
    level = os.environ.get("MCT_LOG", "error").lower()
    logging.basicConfig(
        stream=sys.stderr,
        level=_LOG_LEVELS.get(level, logging.ERROR),
        format="%(levelname)s %(name)s: %(message)s",
    )


def main(argv=None) -> int:
    _configure_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    try:
        return _COMMANDS[args.command](args)
    except (dataio.DataFormatError, FamilyError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (SinkhornError, FloatingPointError) as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
