"""Command-line entry point: ``erclust <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data validation error, 3 runtime
failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .calibration import (
    CountHistogram,
    UnattainableTargetWarning,
    all_pairs_histogram,
    fit_left_half,
    fit_report,
    format_report,
    mismatched_histogram,
    threshold_for_fpr,
)
from .clustering import (
    ERClustering,
    constraints_from_tracklets,
    read_clusters,
    read_constraints,
    write_clusters,
)
from .core import (
    RNG_ALGORITHM,
    DataValidationError,
    GallerySet,
    RngSpec,
    load_features,
    read_boxes,
    tracklets_from_rows,
)
from .ergraph import connectivity_curve
from .fusion import FusionConfig, fuse, make_tracker, write_tracklets
from .metrics import categorize_pairs, export_matrix, f_alpha, match_detections, upp_upr
from .rank1 import PairScoreTable, rank1_all_pairs_fast, tracklet_score_table

log = logging.getLogger("erclust")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3
META_NAME = "run.meta"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# --------------------------------------------------------------------------
# config and metadata
# --------------------------------------------------------------------------


def read_config(path) -> dict:
    """Flat ``key=value`` lines; ``#`` starts a comment."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such config file: {path}")
    out = {}
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        k, v = line.split("=", 1)
        out[k.strip().replace("-", "_")] = v.strip()
    return out


def _to_bool(s: str) -> bool:
    s = s.strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"not a boolean: {s!r}")


def _apply_config(sub: argparse.ArgumentParser, config: dict) -> None:
    actions = {a.dest: a for a in sub._actions}
    defaults = {}
    for k, v in config.items():
        if k not in actions or k in ("help", "config"):
            raise UsageError(f"unknown config key {k!r} for this subcommand")
        a = actions[k]
        if isinstance(a, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
            defaults[k] = _to_bool(v)
        else:
            defaults[k] = v
    sub.set_defaults(**defaults)


def write_meta(out: Path, args, extra: dict = None) -> None:
    cfg = {k: v for k, v in vars(args).items() if k not in ("func", "config")}
    lines = [f"version={__version__}", f"rng={RNG_ALGORITHM}", f"seed={args.seed}"]
    if extra:
        lines += [f"{k}={v}" for k, v in extra.items()]
    lines += [f"config.{k}={'' if v is None else v}" for k, v in sorted(cfg.items())]
    (out / META_NAME).write_text("\n".join(lines) + "\n")


def read_meta(path) -> dict:
    out = {}
    for line in Path(path).read_text().splitlines():
        if "=" in line:
            k, v = line.split("=", 1)
            out[k] = v
    return out


def _n_dims_for(scores_path: str, explicit, table: PairScoreTable) -> float:
    if explicit is not None:
        return float(explicit)
    meta = Path(scores_path).parent / META_NAME
    if meta.exists():
        m = read_meta(meta)
        if m.get("n_dims"):
            return float(m["n_dims"])
    return float(math.ceil(table.scores.max()))


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _float_list(s: str) -> list:
    try:
        return [float(v) for v in s.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"expected a comma-separated list of numbers, got {s!r}") from None


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------


def cmd_similarity(args) -> int:
    feats = load_features(args.features, args.format)
    gallery = load_features(args.gallery, args.format, expect_dims=feats.n_dims) if args.gallery else None
    sgal = load_features(args.super_gallery, args.format, expect_dims=feats.n_dims) if args.super_gallery else None
    if gallery is None and sgal is None:
        raise UsageError("--gallery or --super-gallery is required")
    gal = GallerySet(gallery if gallery is not None else sgal, sgal, args.g_sim)
    if args.tracklets:
        boxes, extra = read_boxes(args.tracklets)
        tracklets = tracklets_from_rows(boxes, [int(e["tracklet_id"]) for e in extra])
        ids = [t.id for t in tracklets]
        if ids != list(range(len(ids))):
            raise DataValidationError("tracklet ids must be 0..T-1")
        table = tracklet_score_table(tracklets, feats, gal, args.sample_size, RngSpec(args.seed), args.mode)
    else:
        table = rank1_all_pairs_fast(feats, gal, args.mode)
    out = _outdir(args)
    table.to_csv(out / "scores.csv")
    all_pairs_histogram(table, args.bin_width).to_csv(out / "histogram.csv")
    write_meta(out, args, {"n_dims": feats.n_dims, "n_items": table.n_items})
    return EXIT_OK


def cmd_make_reference(args) -> int:
    table = PairScoreTable.read_csv(args.scores)
    table.n_dims = _n_dims_for(args.scores, args.n_dims, table)
    labels = {}
    with open(args.labels, newline="") as fh:
        for row in csv.DictReader(fh):
            labels[int(row["item_index"])] = row["label"]
    missing = [i for i in range(table.n_items) if i not in labels]
    if missing:
        raise DataValidationError(f"{args.labels}: no label for items {missing[:5]}")
    hist = mismatched_histogram(table, [labels[i] for i in range(table.n_items)], args.bin_width)
    out = _outdir(args)
    hist.to_csv(out / "reference.csv")
    write_meta(out, args, {"n_dims": table.n_dims, "mismatched_pairs": int(hist.total)})
    return EXIT_OK


def _calibrate(args, table: PairScoreTable, F: float):
    reference = CountHistogram.read_csv(args.reference, upper=F)
    test = all_pairs_histogram(table, args.bin_width)
    fit = fit_left_half(test, reference, n_dims=F)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", UnattainableTargetWarning)
        tau = threshold_for_fpr(fit, len(table), args.target_fpr)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    return fit, tau


def cmd_calibrate(args) -> int:
    table = PairScoreTable.read_csv(args.scores)
    F = _n_dims_for(args.scores, args.n_dims, table)
    table.n_dims = F
    fit, tau = _calibrate(args, table, F)
    out = _outdir(args)
    (out / "fit_report.txt").write_text(format_report(fit_report(fit, tau, args.target_fpr, len(table))))
    fit.histogram.to_csv(out / "fitted_mismatched.csv")
    write_meta(out, args, {"n_dims": F})
    return EXIT_OK


def cmd_cluster(args) -> int:
    table = PairScoreTable.read_csv(args.scores)
    F = _n_dims_for(args.scores, args.n_dims, table)
    table.n_dims = F
    constraints = frozenset()
    if args.constraints:
        constraints = read_constraints(args.constraints)
    if args.tracklets:
        boxes, extra = read_boxes(args.tracklets)
        tracklets = tracklets_from_rows(boxes, [int(e["tracklet_id"]) for e in extra])
        constraints = constraints | constraints_from_tracklets(tracklets)
    out = _outdir(args)
    if args.auto:
        if not args.reference:
            raise UsageError("--auto needs --reference")
        fit, tau = _calibrate(args, table, F)
        (out / "fit_report.txt").write_text(format_report(fit_report(fit, tau, args.target_fpr, len(table))))
    elif args.threshold is not None:
        tau = args.threshold
    else:
        raise UsageError("give --threshold or --auto")
    est = ERClustering(threshold=tau, n_dims=F, method=args.method)
    est.fit(table, constraints=constraints)
    write_clusters(out / "clusters.csv", est.labels_)
    with open(out / "merges.csv", "w") as fh:
        fh.write("kept,absorbed,dissimilarity\n")
        for a, b, d in est.merge_trace_:
            fh.write(f"{a},{b},{d:.17g}\n")
    write_meta(out, args, {"n_dims": F, "threshold": f"{tau:.17g}", "n_clusters": est.n_clusters_})
    return EXIT_OK


def cmd_tracklets(args) -> int:
    boxes, _ = read_boxes(args.detections)
    cfg = FusionConfig(args.iou_threshold, args.patience)
    tracklets = fuse(boxes, make_tracker(args.tracker), cfg)
    out = _outdir(args)
    write_tracklets(out / "tracklets.csv", tracklets)
    write_meta(out, args, {"n_tracklets": len(tracklets)})
    return EXIT_OK


def cmd_eval(args) -> int:
    dets, extra = read_boxes(args.detections)
    anns, _ = read_boxes(args.annotations)
    clusters = read_clusters(args.clusters)
    keys = []
    for k, (d, e) in enumerate(zip(dets, extra)):
        if args.join == "row":
            keys.append(k)
        elif args.join == "feature_index":
            keys.append(d.feature_index)
        else:
            if "tracklet_id" not in e:
                raise DataValidationError(f"{args.detections}: no tracklet_id column")
            keys.append(int(e["tracklet_id"]))
    try:
        cids = [clusters[k] for k in keys]
    except KeyError as exc:
        raise DataValidationError(f"{args.clusters}: no cluster for item {exc.args[0]}") from None
    tuples = match_detections(dets, anns, args.match_iou, cids)
    counts = categorize_pairs(tuples)
    upp, upr = upp_upr(counts)
    out = _outdir(args)
    lines = [f"{k}={v}" for k, v in counts.as_dict().items()]
    lines += [f"upp={upp:.17g}", f"upr={upr:.17g}"]
    lines += [f"f_{a:g}={f_alpha(upp, upr, a):.17g}" for a in _float_list(args.alphas)]
    (out / "metrics.txt").write_text("\n".join(lines) + "\n")
    export_matrix(tuples, out / "matrix.ppm", counts)
    write_meta(out, args)
    return EXIT_OK


def cmd_simulate_er(args) -> int:
    if args.grid:
        grid = _float_list(args.grid)
    else:
        base = math.log(args.n) / args.n if args.n > 1 else 0.0
        grid = [m * base for m in _float_list(args.grid_multiples)]
    curve = connectivity_curve(args.n, grid, args.trials, RngSpec(args.seed))
    out = _outdir(args)
    curve.to_csv(out / "curve.csv")
    write_meta(out, args)
    return EXIT_OK


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="erclust", description="Rank-1 counts verification and Erdős-Rényi clustering.")
    p.add_argument("--version", action="version", version=__version__)
    subs = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def sub(name, func, help):
        s = subs.add_parser(name, help=help)
        s.add_argument("--config", help="key=value config file; flags override it")
        s.add_argument("--seed", type=int, default=0)
        s.add_argument("--threads", type=int, default=1, help="parallelism cap (results do not depend on it)")
        s.add_argument("--out", required=True, help="output directory")
        s.set_defaults(func=func)
        return s

    s = sub("similarity", cmd_similarity, "pairwise rank-1 scores")
    s.add_argument("--features", required=True)
    s.add_argument("--format", choices=["binary", "csv"])
    s.add_argument("--gallery")
    s.add_argument("--super-gallery")
    s.add_argument("--mode", choices=["exact", "averaged"], default="exact")
    s.add_argument("--g-sim", type=int, default=50)
    s.add_argument("--tracklets", help="score tracklets (tracklets CSV) instead of items")
    s.add_argument("--sample-size", type=int, default=10)
    s.add_argument("--bin-width", type=float, default=1.0)

    s = sub("make-reference", cmd_make_reference, "mismatched-pair histogram from labeled scores")
    s.add_argument("--scores", required=True)
    s.add_argument("--labels", required=True, help="CSV item_index,label")
    s.add_argument("--bin-width", type=float, default=1.0)
    s.add_argument("--n-dims", type=float)

    def calib_args(s):
        s.add_argument("--reference")
        s.add_argument("--target-fpr", type=float, default=1e-6)
        s.add_argument("--bin-width", type=float, default=1.0)
        s.add_argument("--n-dims", type=float)

    s = sub("calibrate", cmd_calibrate, "fit the reference and report the threshold")
    s.add_argument("--scores", required=True)
    calib_args(s)

    s = sub("cluster", cmd_cluster, "constrained single-linkage clustering of pair scores")
    s.add_argument("--scores", required=True)
    s.add_argument("--constraints", help="CSV i,j of do-not-link pairs")
    s.add_argument("--tracklets", help="derive do-not-link pairs from overlapping tracklets")
    s.add_argument("--threshold", type=float, help="link pairs with score > threshold")
    s.add_argument("--auto", action="store_true", help="calibrate the threshold from --reference")
    s.add_argument("--method", choices=["fast", "naive"], default="fast")
    calib_args(s)

    s = sub("tracklets", cmd_tracklets, "fuse detections and tracker proposals")
    s.add_argument("--detections", required=True)
    s.add_argument("--tracker", default="constant-velocity",
                   help="constant-position, constant-velocity or scripted:<boxes.csv>")
    s.add_argument("--iou-threshold", type=float, default=0.3)
    s.add_argument("--patience", type=int, default=10)

    s = sub("eval", cmd_eval, "unified pairwise precision/recall")
    s.add_argument("--detections", required=True)
    s.add_argument("--annotations", required=True)
    s.add_argument("--clusters", required=True)
    s.add_argument("--join", choices=["tracklet_id", "feature_index", "row"], default="tracklet_id",
                   help="detection column matching item_index in the clusters CSV")
    s.add_argument("--match-iou", type=float, default=0.5)
    s.add_argument("--alphas", default="0.5")

    s = sub("simulate-er", cmd_simulate_er, "Erdős-Rényi connectivity curve")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--grid", help="comma-separated edge probabilities")
    s.add_argument("--grid-multiples", default="0.25,0.5,0.75,1,1.25,1.5,2,3",
                   help="grid as multiples of ln(n)/n when --grid is absent")
    s.add_argument("--trials", type=int, default=200)
    return p


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.config:
            sub = parser._subparsers._group_actions[0].choices[args.command]
            _apply_config(sub, read_config(args.config))
            args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"erclust: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataValidationError, FileNotFoundError) as exc:
        print(f"erclust: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"erclust: invalid argument: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ZeroDivisionError as exc:
        print(f"erclust: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        log.exception("runtime failure")
        print(f"erclust: runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
