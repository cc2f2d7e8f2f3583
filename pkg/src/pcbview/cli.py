"""Command-line front end.

Exit codes: 0 success, 1 a check failed, 2 usage or validation error.
Every file-producing command stages its output next to the destination and
renames it into place only after everything has been written.
"""

from __future__ import annotations

import argparse
import contextlib
import hashlib
import os
import shutil
import sys
import tempfile
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .augment import (
    CONTRAST_PRESETS,
    SAMPLING_MODES,
    AugmentSpec,
    LabeledImage,
    build_contrast_dataset,
    build_shear_rotate_dataset,
    contrast_preset,
)
from .cbam import CbamWeights, _check_config, cbam_forward, cbam_forward_naive, channel_attention, init_weights, spatial_attention, zero_weights
from .dataset import (
    PKU_CLASSES,
    DatasetManifest,
    LabelFormatError,
    ManifestError,
    SplitSpec,
    check_item_id,
    ground_truths,
    load_labeled,
    parse_predictions,
    parse_voc_xml,
    read_image,
    read_manifest,
    split_dataset,
    write_dataset,
    write_manifest,
)
from .losses import SIoUParams, loss_gradient_check, sample_smooth_pair
from .metrics import evaluate
from .report import format_table, per_class_csv, pr_curves_csv, pr_curves_svg, summary_csv
from .rng import keyed_rng

EXIT_OK, EXIT_CHECK, EXIT_USAGE = 0, 1, 2

# flags that only affect scheduling or destination; left out of recorded
# configs so outputs match across thread counts and output locations
_UNRECORDED = {"func", "workers", "output", "overwrite"}


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_USAGE):
        super().__init__(message)
        self.code = code


def run_config(args: argparse.Namespace) -> dict:
    cfg = {}
    for k, v in sorted(vars(args).items()):
        if k in _UNRECORDED:
            continue
        if isinstance(v, Path):
            v = str(v)
        elif isinstance(v, (list, tuple)):
            v = [str(x) if isinstance(x, Path) else x for x in v]
        cfg[k] = v
    cfg["version"] = __version__
    return cfg


@contextlib.contextmanager
def staged_dir(dest: Path, overwrite: bool = False):
    """Yield a temporary sibling of ``dest``; move it to ``dest`` on success."""
    dest = Path(dest)
    if dest.exists() and not overwrite:
        raise CliError(f"output {dest} already exists (pass --overwrite to replace it)")
    dest.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(dir=dest.parent, prefix=f".{dest.name}.", suffix=".tmp"))
    try:
        yield tmp
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    old = None
    if dest.exists():
        old = dest.parent / f".{dest.name}.old-{os.getpid()}"
        os.replace(dest, old)
    os.replace(tmp, dest)
    if old is not None:
        shutil.rmtree(old, ignore_errors=True)


def _atomic_bytes(path: Path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _existing(path: Path, what: str) -> Path:
    if not Path(path).exists():
        raise CliError(f"{what} {path} does not exist")
    return Path(path)


def _load_manifest(path: Path, split: Optional[str]) -> DatasetManifest:
    m = read_manifest(_existing(path, "manifest"))
    if split is not None:
        m = m.subset(split)
        if not m.items:
            raise CliError(f"manifest {path} has no items in split {split!r}")
    return m


# -- augment -----------------------------------------------------------------


def cmd_augment(args) -> int:
    spec = AugmentSpec(
        shear_limit=args.shear_limit,
        rotate_limit=args.rotate_limit,
        blur_radius_range=(args.blur_min, args.blur_max),
        output_size=args.output_size,
        seed=args.seed,
        retention_threshold=args.retention,
        min_side_px=args.min_side_px,
        sampling=args.sampling,
        fill=args.fill,
    )
    if args.mode == "contrast":
        contrast_preset(args.preset)
    manifest = _load_manifest(args.input, args.split)
    items = load_labeled(manifest)
    config = run_config(args)
    if args.mode == "train":
        out = build_shear_rotate_dataset(items, spec, workers=args.workers)
        split = "train"
    else:
        shear, rotate = contrast_preset(args.preset)
        out = build_contrast_dataset(
            items, shear, rotate, args.seed,
            sampling=spec.sampling, retention=spec.retention_threshold,
            min_side_px=spec.min_side_px, fill=spec.fill, workers=args.workers,
        )
        split = "test"
    with staged_dir(args.output, args.overwrite) as tmp:
        write_dataset(out, tmp, manifest.classes, split=split, config=config)
    n_labels = sum(len(li.labels) for li in out)
    what = "tiles" if args.mode == "train" else "images"
    print(f"augment ({args.mode}): {len(items)} input images -> {len(out)} output {what}, {n_labels} labels")
    print(f"wrote {args.output / 'manifest.jsonl'}")
    return EXIT_OK


# -- eval --------------------------------------------------------------------


def cmd_eval(args) -> int:
    manifest = _load_manifest(args.ground_truth, args.split)
    pred_path = _existing(args.predictions, "prediction file")
    nc = len(manifest.classes)
    dets = parse_predictions(pred_path.read_bytes(), nc, source=str(pred_path))
    known = {it.id for it in manifest.items}
    for d in dets:
        if d.image_id not in known:
            raise CliError(f"{pred_path}: prediction references unknown image_id {d.image_id!r}")
    report = evaluate(dets, ground_truths(manifest), manifest.classes)
    config = run_config(args)
    table = format_table(report, args.method, config)
    if args.output is not None:
        with staged_dir(args.output, args.overwrite) as tmp:
            (tmp / "summary.csv").write_text(summary_csv(report, config), encoding="utf-8")
            (tmp / "per_class.csv").write_text(per_class_csv(report, config), encoding="utf-8")
            (tmp / "table.txt").write_text(table, encoding="utf-8")
            (tmp / "pr_curve.csv").write_text(pr_curves_csv(report, config), encoding="utf-8")
            (tmp / "pr_curve.svg").write_text(pr_curves_svg(report, config=config), encoding="utf-8")
    print(table, end="")
    return EXIT_OK


# -- losscheck ---------------------------------------------------------------


def cmd_losscheck(args) -> int:
    params = SIoUParams(theta_exponent=args.theta)
    worst_all = 0.0
    failed = None
    for loss_id in args.losses:
        rng = keyed_rng(args.seed, loss_id, "losscheck")
        worst, worst_pair = 0.0, None
        for _ in range(args.n):
            pred, gt = sample_smooth_pair(rng, loss_id, args.step, params)
            err = loss_gradient_check(loss_id, pred, gt, params, args.step)
            if err > worst:
                worst, worst_pair = err, (pred, gt)
        status = "ok" if worst <= args.tolerance else "FAIL"
        print(f"{loss_id}: worst relative gradient error {worst:.6e} over {args.n} pairs [{status}]")
        if worst > args.tolerance and failed is None:
            failed = (loss_id, worst, worst_pair)
        worst_all = max(worst_all, worst)
    print(f"worst = {worst_all:.6e} (tolerance {args.tolerance:g})")
    if failed is not None:
        loss_id, worst, (pred, gt) = failed
        print(f"offending {loss_id} pair: pred={pred.astuple()} gt={gt.astuple()} error={worst:.6e}")
        return EXIT_CHECK
    return EXIT_OK


# -- cbamcheck ---------------------------------------------------------------


def _checksum(a: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(a, dtype="<f4").tobytes()).hexdigest()


def cmd_cbamcheck(args) -> int:
    if args.import_weights is not None:
        try:
            imported = CbamWeights.load(_existing(args.import_weights, "weight file"))
        except ValueError as e:
            raise CliError(f"{args.import_weights}: {e}") from None
        configs = [(imported.channels, imported.reduction, imported.kernel_size)]
    else:
        imported = None
        configs = [(c, args.ratio, args.kernel) for c in args.channels]
        for c, r, k in configs:
            _check_config(c, r, k)

    ok = True

    def report(name: str, passed: bool, detail: str) -> None:
        nonlocal ok
        ok &= passed
        print(f"  {'PASS' if passed else 'FAIL'}  {name}: {detail}")

    first_output = None
    for idx, (c, r, k) in enumerate(configs):
        w = imported if imported is not None else init_weights(c, r, k, seed=args.seed)
        print(f"C={c} r={r} k={k}")
        x = np.random.default_rng([args.seed, c]).standard_normal((args.batch, c, args.size, args.size)).astype(np.float32)
        y = cbam_forward(x, w)
        report("shape", y.shape == x.shape, f"{y.shape}")
        ca = channel_attention(x, w)
        sa = spatial_attention(x * ca, w)
        lo, hi = float(min(ca.min(), sa.min())), float(max(ca.max(), sa.max()))
        report("gate bounds", 0 < lo and hi < 1, f"gates in [{lo:.6g}, {hi:.6g}]")
        z = cbam_forward(x, zero_weights(c, r, k))
        err0 = float(np.abs(z.astype(np.float64) - 0.25 * x.astype(np.float64)).max())
        report("zero weights", err0 <= 1e-6, f"max |y - x/4| = {err0:.3e}")
        xs = x[:1, :, : args.oracle_size, : args.oracle_size]
        err_n = float(np.abs(cbam_forward(xs, w).astype(np.float64) - cbam_forward_naive(xs, w)).max())
        report("naive oracle", err_n <= 1e-5, f"max diff {err_n:.3e} on {xs.shape}")
        if idx == 0:
            first_output = y
            if args.export_weights is not None:
                _atomic_bytes(args.export_weights, w.to_bytes())
                print(f"  exported weights to {args.export_weights}")
    print(f"output sha256: {_checksum(first_output)}")
    print("all checks passed" if ok else "some checks FAILED")
    return EXIT_OK if ok else EXIT_CHECK


# -- split -------------------------------------------------------------------


def cmd_split(args) -> int:
    manifest = read_manifest(_existing(args.input, "manifest"))
    spec = SplitSpec(args.train_fraction, args.seed, not args.no_stratify)
    train, val = split_dataset(manifest, spec)
    tag = {it.id: "train" for it in train.items} | {it.id: "val" for it in val.items}
    by_id = train.by_id() | val.by_id()
    merged = DatasetManifest(list(manifest.classes), [by_id[it.id] for it in manifest.items])
    write_manifest(merged, args.output, run_config(args))

    rows: dict[str, list[int]] = {}
    for it in manifest.items:
        key = (it.group or "-") if spec.stratify_by_class else "all"
        rows.setdefault(key, [0, 0])[tag[it.id] == "val"] += 1
    width = max(len("group"), *(len(k) for k in rows))
    print(f"{'group':<{width}}  {'train':>6}  {'val':>6}")
    for key in sorted(rows):
        print(f"{key:<{width}}  {rows[key][0]:>6}  {rows[key][1]:>6}")
    print(f"{'total':<{width}}  {len(train.items):>6}  {len(val.items):>6}")
    print(f"wrote {args.output}")
    return EXIT_OK


# -- convert -----------------------------------------------------------------

_IMAGE_SUFFIXES = (".jpg", ".jpeg", ".png", ".bmp")


def _find_images(root: Path) -> dict[str, Path]:
    found: dict[str, Path] = {}
    for p in sorted(root.rglob("*")):
        if p.suffix.lower() in _IMAGE_SUFFIXES and p.is_file():
            if p.stem in found:
                raise CliError(f"image name {p.stem!r} is ambiguous: {found[p.stem]} and {p}")
            found[p.stem] = p
    return found


def cmd_convert(args) -> int:
    root = _existing(args.input, "VOC root")
    ann_dir = root / "Annotations"
    if not ann_dir.is_dir():
        raise CliError(f"{root} has no Annotations/ directory")
    images = _find_images(root / args.images_dir)
    xmls = sorted(ann_dir.rglob("*.xml"))
    if not xmls:
        raise CliError(f"no .xml files under {ann_dir}")
    items = []
    for xml in xmls:
        stem = check_item_id(xml.stem)
        if stem not in images:
            raise CliError(f"{xml}: no image named {stem}.* under {root / args.images_dir}")
        img = read_image(images[stem])
        h, w = img.shape[:2]
        labels = parse_voc_xml(xml.read_bytes(), w, h, PKU_CLASSES, source=str(xml))
        rel = xml.parent.relative_to(ann_dir)
        group = rel.parts[0].lower() if rel.parts else None
        prov = {"source": str(xml.relative_to(root))}
        if group is not None:
            prov["group"] = group
        items.append(LabeledImage(img, labels, stem, prov))
    with staged_dir(args.output, args.overwrite) as tmp:
        write_dataset(items, tmp, PKU_CLASSES, config=run_config(args))
    print(f"convert: {len(items)} annotations -> {sum(len(li.labels) for li in items)} labels")
    print(f"wrote {args.output / 'manifest.jsonl'}")
    return EXIT_OK


# -- parser ------------------------------------------------------------------


def _positive_int(s: str) -> int:
    try:
        v = int(s)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{s!r} is not an integer") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _seed(s: str) -> int:
    try:
        v = int(s)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{s!r} is not an integer") from None
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _positive_float(s: str) -> float:
    try:
        v = float(s)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{s!r} is not a number") from None
    if not v > 0 or v == float("inf"):
        raise argparse.ArgumentTypeError(f"must be a positive finite number, got {s}")
    return v


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    p = argparse.ArgumentParser(prog="pcbview", description="Viewpoint-robust PCB defect tooling.", formatter_class=fmt)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def seed_flag(sp):
        sp.add_argument("--seed", type=_seed, default=0, help="global RNG seed (unsigned 64-bit integer)")

    def out_flags(sp, required=True):
        sp.add_argument("--output", "-o", type=Path, required=required, default=None, help="output directory (created; must not exist)")
        sp.add_argument("--overwrite", action="store_true", help="replace an existing output directory")

    a = sub.add_parser("augment", help="build a viewpoint-augmented dataset", formatter_class=fmt)
    a.add_argument("input", type=Path, help="input manifest (JSON Lines)")
    out_flags(a)
    a.add_argument("--mode", choices=("train", "contrast"), default="train", help="train: 12 tiles per image; contrast: one warped copy per image")
    a.add_argument("--preset", choices=sorted(CONTRAST_PRESETS), default="shear006-rotate10", help="contrast bounds (shear coefficient, degrees)")
    a.add_argument("--split", default=None, help="only use input items with this split tag (all items when omitted)")
    seed_flag(a)
    a.add_argument("--shear-limit", type=float, default=0.06, help="train mode shear bound (unitless coefficient)")
    a.add_argument("--rotate-limit", type=float, default=10.0, help="train mode rotation bound (degrees)")
    a.add_argument("--blur-min", type=int, default=1, help="smallest blur radius (pixels)")
    a.add_argument("--blur-max", type=int, default=5, help="largest blur radius (pixels)")
    a.add_argument("--output-size", type=int, default=640, help="side of the square output tiles (pixels)")
    a.add_argument("--retention", type=float, default=0.25, help="minimum kept fraction of a clipped label (area fraction)")
    a.add_argument("--min-side-px", type=float, default=2.0, help="minimum side of a clipped label (pixels of the warped image or tile, before resizing)")
    a.add_argument("--sampling", choices=SAMPLING_MODES, default="uniform", help="magnitude sampling (uniform in the range, or its endpoints)")
    a.add_argument("--fill", type=int, default=0, help="value for pixels warped in from outside (gray level 0-255)")
    a.add_argument("--workers", type=_positive_int, default=1, help="worker threads (count); output does not depend on it")
    a.set_defaults(func=cmd_augment)

    e = sub.add_parser("eval", help="score predictions against a ground-truth manifest", formatter_class=fmt)
    e.add_argument("ground_truth", type=Path, help="ground-truth manifest (JSON Lines)")
    e.add_argument("predictions", type=Path, help="predictions: 'image_id class conf cx cy w h' per line, normalized coordinates")
    out_flags(e, required=False)
    e.add_argument("--split", default=None, help="only score items with this split tag (all items when omitted)")
    e.add_argument("--method", default="model", help="row label in the table (text)")
    e.set_defaults(func=cmd_eval)

    lc = sub.add_parser("losscheck", help="check analytic loss gradients against central differences", formatter_class=fmt)
    lc.add_argument("--n", type=_positive_int, default=1000, help="random box pairs per loss (count)")
    seed_flag(lc)
    lc.add_argument("--step", type=_positive_float, default=1e-5, help="central-difference step (normalized units)")
    lc.add_argument("--theta", type=float, default=4.0, help="SIoU shape exponent (unitless, 1-8)")
    lc.add_argument("--tolerance", type=_positive_float, default=1e-3, help="maximum normwise relative error (unitless)")
    lc.add_argument("--losses", nargs="+", choices=("siou", "ciou"), default=["siou", "ciou"], help="losses to check")
    lc.set_defaults(func=cmd_losscheck)

    cb = sub.add_parser("cbamcheck", help="shape, bound and oracle checks for the attention block", formatter_class=fmt)
    cb.add_argument("--channels", type=_positive_int, nargs="+", default=[128, 256, 512], help="channel counts to check (count)")
    cb.add_argument("--ratio", type=_positive_int, default=16, help="channel reduction ratio (must divide every channel count)")
    cb.add_argument("--kernel", type=_positive_int, default=7, help="spatial kernel side (pixels, odd)")
    seed_flag(cb)
    cb.add_argument("--batch", type=_positive_int, default=2, help="input batch size (count)")
    cb.add_argument("--size", type=_positive_int, default=16, help="input height and width (pixels)")
    cb.add_argument("--oracle-size", type=_positive_int, default=8, help="height and width of the nested-loop oracle input (pixels)")
    cb.add_argument("--export-weights", type=Path, default=None, help="write the first configuration's weights to this file")
    cb.add_argument("--import-weights", type=Path, default=None, help="check these weights instead of seeded ones")
    cb.set_defaults(func=cmd_cbamcheck)

    s = sub.add_parser("split", help="tag manifest items train/val", formatter_class=fmt)
    s.add_argument("input", type=Path, help="input manifest (JSON Lines)")
    s.add_argument("--output", "-o", type=Path, required=True, help="output manifest path")
    s.add_argument("--train-fraction", type=float, default=0.8, help="share of each group sent to train (fraction)")
    seed_flag(s)
    s.add_argument("--no-stratify", action="store_true", help="split the whole manifest at once instead of per group")
    s.set_defaults(func=cmd_split)

    cv = sub.add_parser("convert", help="convert VOC XML annotations to a YOLO-label dataset", formatter_class=fmt)
    cv.add_argument("input", type=Path, help="root holding Annotations/ and the image directory")
    out_flags(cv)
    cv.add_argument("--images-dir", default="images", help="image directory below the root (path)")
    cv.set_defaults(func=cmd_convert)
    return p


def _validate(args) -> None:
    """Checks that argparse types cannot express; run before any work."""
    if args.command == "augment":
        AugmentSpec(
            args.shear_limit, args.rotate_limit, (args.blur_min, args.blur_max), args.output_size,
            args.seed, args.retention, args.min_side_px, args.sampling, args.fill,
        )
    elif args.command == "losscheck":
        SIoUParams(theta_exponent=args.theta)
    elif args.command == "cbamcheck" and args.import_weights is None:
        for c in args.channels:
            _check_config(c, args.ratio, args.kernel)
        if args.oracle_size > args.size:
            raise ValueError("--oracle-size must not exceed --size")
    elif args.command == "split":
        SplitSpec(args.train_fraction, args.seed)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        _validate(args)
        return args.func(args)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.code
    except (LabelFormatError, ManifestError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as e:
        print(f"error: invalid configuration: {e}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
