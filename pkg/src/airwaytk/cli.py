"""Command-line front end: file-in/file-out pipelines over the library.

Every subcommand is a pure function of its input files, flags, and --seed;
identical invocations produce byte-identical outputs, and --threads only
changes scheduling, never results. Exit codes: 0 ok, 2 I/O or file-format
error, 3 flag/validation error, 4 domain error (e.g. a cyclic skeleton).
"""

from __future__ import annotations

import argparse
import glob
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .errors import DomainError, EmptyMaskError, FileFormatError, ValidationError
from .metrics import (
    DEFAULT_THETA,
    MetricsReport,
    aggregate_to_json,
    evaluate_case,
    format_mean_std,
    reports_to_csv,
    save_reports,
)
from .morphology import keep_largest_component, skeletonize
from .nnmath import (
    BranchLossMode,
    CenterlineVariant,
    LossWeights,
    bce_loss,
    branch_loss,
    centerline_loss,
    dice_loss,
    total_loss,
)
from .preprocess import (
    GRID_FORMAT_VERSION,
    PatchGrid,
    extract_patches,
    plan_patches,
    random_augmentation,
    reassemble,
    zscore_normalize,
)
from .synthgen import TreeSpec, generate_tree
from .tree import (
    TABLE_FORMAT_VERSION,
    RootPolicy,
    break_cycles,
    build_skeleton_graph,
    decompose_branches,
    label_branches,
    save_table,
)
from .uncertainty import PredictionStack, aggregate, uncertainty_mask
from .volume import Connectivity, Role, Volume, load_volume, save_volume

log = logging.getLogger("airwaytk")

_CONNECTIVITY = {"6": Connectivity.FACE6, "18": Connectivity.EDGE18, "26": Connectivity.VERTEX26}

EXIT_OK = 0
EXIT_IO = 2
EXIT_VALIDATION = 3
EXIT_DOMAIN = 4


@dataclass(frozen=True)
class RunConfig:
    """Parsed global flags; validated before any I/O happens."""

    seed: int
    threads: int
    log_level: str


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit 2; flags are validation
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_VALIDATION)


def _dims(text: str) -> tuple[int, int, int]:
    parts = text.split(",")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected Z,Y,X (3 integers), got {text!r}")
    try:
        dims = tuple(int(p) for p in parts)
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e)) from e
    if any(d < 1 for d in dims):
        raise argparse.ArgumentTypeError(f"dimensions must be >= 1, got {text!r}")
    return dims


def _weights(text: str) -> LossWeights:
    parts = text.split(",")
    if len(parts) != 4:
        raise argparse.ArgumentTypeError(f"expected w1,w2,w3,w4, got {text!r}")
    try:
        return LossWeights(*(float(p) for p in parts))
    except (ValueError, ValidationError) as e:
        raise argparse.ArgumentTypeError(str(e)) from e


def _root_policy(text: str):
    if text == "min-z":
        return RootPolicy.MIN_Z
    if text == "max-z":
        return RootPolicy.MAX_Z
    parts = text.split(",")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"root must be min-z, max-z, or z,y,x; got {text!r}")
    try:
        return tuple(int(p) for p in parts)
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e)) from e


def build_parser() -> _Parser:
    parser = _Parser(prog="airwaytk", description=__doc__)
    parser.add_argument(
        "--version",
        action="version",
        version=f"airwaytk {__version__} (grid.json v{GRID_FORMAT_VERSION}, table.json v{TABLE_FORMAT_VERSION})",
    )
    parser.add_argument("--seed", type=int, default=0, help="seed for any randomized step")
    parser.add_argument("--threads", type=int, default=0, help="worker threads, 0 = auto")
    parser.add_argument("--log-level", default="warning", choices=["debug", "info", "warning", "error"])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="z-score + sliding-window patches")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--patch", type=_dims, default=(128, 96, 144), help="patch shape Z,Y,X")
    p.add_argument("--stride", type=_dims, default=None, help="stride Z,Y,X (default: patch)")
    p.add_argument("--normalize", action="store_true", help="z-score normalize first")
    p.add_argument("--augment", action="store_true", help="apply one seeded random flip/rotate/scale first")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("reassemble", help="invert a preprocess run")
    p.add_argument("--grid", required=True, help="grid.json from preprocess")
    p.add_argument("--patch-dir", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_reassemble)

    p = sub.add_parser("postprocess", help="keep the largest connected component")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--connectivity", choices=list(_CONNECTIVITY), default="26")
    p.set_defaults(func=cmd_postprocess)

    p = sub.add_parser("evaluate", help="score prediction(s) against ground truth")
    p.add_argument("--pred", required=True, help="probability/binary volume or directory")
    p.add_argument("--gt", required=True, help="binary volume or directory")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--postprocess", action="store_true")
    p.add_argument("--theta", type=float, default=DEFAULT_THETA)
    p.add_argument("--csv", default=None)
    p.add_argument("--json", default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("uncertainty", help="aggregate an MC-dropout prediction stack")
    p.add_argument("--pred-glob", required=True, help="glob over probability volumes, ordered lexicographically")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--tau", type=float, default=None, help="variance threshold for mask.mhd")
    p.set_defaults(func=cmd_uncertainty)

    p = sub.add_parser("skeletonize", help="thin a binary mask to its centerline")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_skeletonize)

    p = sub.add_parser("branches", help="parse a mask into labeled branches")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--root", type=_root_policy, default=RootPolicy.MIN_Z, help="min-z | max-z | z,y,x")
    p.add_argument("--labels-out", default=None)
    p.add_argument("--table-out", default=None)
    p.add_argument(
        "--break-cycles",
        action="store_true",
        help="drop one max-betweenness edge per skeleton loop instead of failing",
    )
    p.set_defaults(func=cmd_branches)

    p = sub.add_parser("loss", help="branch-level losses for one prediction")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt-labels", required=True)
    p.add_argument("--weights", type=_weights, default=LossWeights())
    p.add_argument("--mode", choices=[m.value for m in BranchLossMode], default=BranchLossMode.PER_BRANCH_MEAN.value)
    p.add_argument("--variant", choices=[v.value for v in CenterlineVariant], default=CenterlineVariant.SKELETON_PRODUCT.value)
    p.add_argument("--threshold", type=float, default=0.5)
    p.set_defaults(func=cmd_loss)

    p = sub.add_parser("synth", help="generate a synthetic airway phantom")
    p.add_argument("--spec", required=True, help="tree spec JSON")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_synth)

    return parser


# --- subcommands ---


def cmd_preprocess(args, cfg: RunConfig) -> int:
    vol = load_volume(args.input)
    if args.augment:
        vol = random_augmentation(vol, np.random.default_rng(cfg.seed))
    if args.normalize:
        vol = zscore_normalize(vol)
    grid = plan_patches(vol.shape, args.patch, args.stride)
    patches = extract_patches(vol, grid)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for i, patch in enumerate(patches):
        save_volume(patch, out_dir / f"patch_{i:04d}.mhd")
    payload = {
        "format_version": GRID_FORMAT_VERSION,
        "full_shape": list(vol.shape),
        "patch_shape": list(grid.patch_shape),
        "origins": [list(o) for o in grid.origins],
        "spacing": list(vol.spacing),
        "role": vol.role.value,
        "n_patches": len(patches),
    }
    (out_dir / "grid.json").write_text(json.dumps(payload, indent=2) + "\n")
    log.info("wrote %d patches to %s", len(patches), out_dir)
    return EXIT_OK


def cmd_reassemble(args, cfg: RunConfig) -> int:
    payload = json.loads(Path(args.grid).read_text())
    grid = PatchGrid(
        patch_shape=tuple(payload["patch_shape"]),
        origins=tuple(tuple(o) for o in payload["origins"]),
        full_shape=tuple(payload["full_shape"]),
    )
    role = Role(payload["role"])
    patch_dir = Path(args.patch_dir)
    patches = [
        load_volume(patch_dir / f"patch_{i:04d}.mhd", role=role)
        for i in range(payload["n_patches"])
    ]
    vol = reassemble(patches, grid)
    save_volume(vol, args.out)
    return EXIT_OK


def cmd_postprocess(args, cfg: RunConfig) -> int:
    mask = load_volume(args.input, role=Role.BINARY)
    try:
        pruned = keep_largest_component(mask, _CONNECTIVITY[args.connectivity])
    except EmptyMaskError:
        log.warning("input mask is empty; writing it through unchanged")
        pruned = mask
    save_volume(pruned, args.out)
    return EXIT_OK


def _collect_cases(pred_path: Path, gt_path: Path) -> list[tuple[str, Path, Path]]:
    if pred_path.is_dir() != gt_path.is_dir():
        raise ValidationError("--pred and --gt must both be files or both be directories")
    if not pred_path.is_dir():
        return [(pred_path.stem, pred_path, gt_path)]
    preds = {p.stem: p for p in sorted(pred_path.glob("*.mhd"))}
    gts = {p.stem: p for p in sorted(gt_path.glob("*.mhd"))}
    missing = sorted(set(preds) ^ set(gts))
    if missing:
        raise ValidationError(f"unpaired case stems between --pred and --gt: {missing}")
    if not preds:
        raise ValidationError("no .mhd cases found")
    return [(stem, preds[stem], gts[stem]) for stem in sorted(preds)]


def cmd_evaluate(args, cfg: RunConfig) -> int:
    cases = _collect_cases(Path(args.pred), Path(args.gt))

    def run_one(item: tuple[str, Path, Path]) -> MetricsReport:
        stem, pred_file, gt_file = item
        pred = load_volume(pred_file)
        gt = load_volume(gt_file, role=Role.BINARY)
        if pred.role is Role.BINARY:  # binary predictions skip thresholding
            pred_prob = Volume(pred.data.astype(np.float32), pred.spacing, Role.PROBABILITY)
        else:
            pred_prob = pred
        return evaluate_case(
            pred_prob, gt, t=args.threshold, postprocess=args.postprocess, theta=args.theta, case_id=stem
        )

    if cfg.threads == 1 or len(cases) == 1:
        reports = [run_one(c) for c in cases]
    else:
        workers = cfg.threads if cfg.threads > 0 else None
        with ThreadPoolExecutor(max_workers=workers) as pool:
            reports = list(pool.map(run_one, cases))

    agg = save_reports(reports, args.csv, args.json, theta=args.theta)
    if args.csv is None:
        sys.stdout.write(reports_to_csv(reports))
    for name in ("dsc", "precision", "td", "bd"):
        print(f"{name} {format_mean_std(agg.means[name], agg.stds[name])}")
    return EXIT_OK


def cmd_uncertainty(args, cfg: RunConfig) -> int:
    paths = sorted(glob.glob(args.pred_glob))
    if not paths:
        raise ValidationError(f"--pred-glob matched no files: {args.pred_glob!r}")
    stack = PredictionStack(tuple(load_volume(p, role=Role.PROBABILITY) for p in paths))
    summary = aggregate(stack)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_volume(summary.mean, out_dir / "mean.mhd")
    save_volume(summary.variance, out_dir / "var.mhd")
    payload = {
        "n_drop": stack.n_drop,
        "mean_variance": float(summary.variance.data.mean()),
        "max_variance": float(summary.variance.data.max()),
    }
    (out_dir / "uncertainty.json").write_text(json.dumps(payload, indent=2) + "\n")
    if args.tau is not None:
        save_volume(uncertainty_mask(summary, args.tau), out_dir / "mask.mhd")
    return EXIT_OK


def cmd_skeletonize(args, cfg: RunConfig) -> int:
    mask = load_volume(args.input, role=Role.BINARY)
    save_volume(skeletonize(mask), args.out)
    return EXIT_OK


def cmd_branches(args, cfg: RunConfig) -> int:
    mask = load_volume(args.input, role=Role.BINARY)
    skel = skeletonize(mask)  # no-op when the input is already a skeleton
    graph = build_skeleton_graph(skel)
    if args.break_cycles:
        graph = break_cycles(graph)
    table = decompose_branches(graph, mask.spacing, args.root)
    if args.table_out:
        save_table(table, args.table_out)
    if args.labels_out:
        save_volume(label_branches(mask, table), args.labels_out)
    print(f"branches {len(table)}")
    return EXIT_OK


def cmd_loss(args, cfg: RunConfig) -> int:
    pred = load_volume(args.pred, role=Role.PROBABILITY)
    gt_labels = load_volume(args.gt_labels, role=Role.LABEL)
    gt_binary = Volume((gt_labels.data > 0).astype(np.uint8), gt_labels.spacing, Role.BINARY)
    l_dice = dice_loss(pred, gt_binary)
    l_bce = bce_loss(pred, gt_binary)
    l_branch = branch_loss(pred, gt_labels, mode=BranchLossMode(args.mode))
    l_center = centerline_loss(pred, gt_labels, t=args.threshold, variant=CenterlineVariant(args.variant))
    total = total_loss(l_dice, l_bce, l_branch, l_center, args.weights)
    payload = {
        "dice": l_dice,
        "bce": l_bce,
        "branch": l_branch,
        "centerline": l_center,
        "weights": [args.weights.w1, args.weights.w2, args.weights.w3, args.weights.w4],
        "total": total,
    }
    print(json.dumps(payload, indent=2))
    print(f"total {total:.6f}")
    return EXIT_OK


def cmd_synth(args, cfg: RunConfig) -> int:
    raw = json.loads(Path(args.spec).read_text())
    for key in ("volume_shape", "spacing"):
        if key in raw:
            raw[key] = tuple(raw[key])
    spec = TreeSpec(**raw)
    tree = generate_tree(spec)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_volume(tree.mask, out_dir / "mask.mhd")
    save_volume(tree.centerline, out_dir / "centerline.mhd")
    save_table(tree.table, out_dir / "table.json")
    print(f"branches {len(tree.table)}")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    cfg = RunConfig(seed=args.seed, threads=args.threads, log_level=args.log_level)
    logging.basicConfig(level=cfg.log_level.upper(), stream=sys.stderr, format="%(levelname)s %(message)s")
    try:
        return args.func(args, cfg)
    except FileFormatError as e:
        log.error("%s", e)
        return EXIT_IO
    except (FileNotFoundError, OSError) as e:
        log.error("%s", e)
        return EXIT_IO
    except ValidationError as e:
        log.error("%s", e)
        return EXIT_VALIDATION
    except DomainError as e:
        log.error("%s", e)
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())
