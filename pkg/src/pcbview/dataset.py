"""Annotation formats, manifests and train/val splitting.

YOLO label grammar, one record per line, blank lines ignored::

    class_id cx cy w h

Prediction grammar::

    image_id class_id confidence cx cy w h

A manifest is a JSON Lines file. The first line is a header
``{"format": "pcbview-manifest", "version": 1, "classes": [...]}``; each
following line is one item. Paths inside are relative to the manifest's
directory.
"""

from __future__ import annotations

import json
import math
import os
import re
import tempfile
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np
from PIL import Image

from .augment import LabeledImage
from .geometry import BBox
from .metrics import Detection, GroundTruth
from .rng import keyed_rng

PKU_CLASSES = ("missing_hole", "mouse_bite", "open_circuit", "short", "spur", "spurious_copper")

MANIFEST_FORMAT = "pcbview-manifest"
MANIFEST_VERSION = 1
SPLITS = ("train", "val", "test", "")

_INT = re.compile(r"[0-9]+\Z")
_FLOAT = re.compile(r"[+-]?(?:[0-9]+(?:\.[0-9]*)?|\.[0-9]+)(?:[eE][+-]?[0-9]+)?\Z")
_SAFE_ID = re.compile(r"[A-Za-z0-9][A-Za-z0-9._+-]*\Z")

Label = tuple[int, BBox]


class LabelFormatError(ValueError):
    """Malformed annotation text. ``line`` is 1-based when known."""

    def __init__(self, message: str, line: Optional[int] = None, source: Optional[str] = None):
        self.line = line
        self.source = source
        where = ""
        if source:
            where += f"{source}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}" if where else message)


class ManifestError(ValueError):
    pass


def _decode(text: Union[str, bytes], source) -> str:
    if isinstance(text, bytes):
        try:
            return text.decode("utf-8")
        except UnicodeDecodeError as e:
            raise LabelFormatError(f"not valid UTF-8 ({e.reason})", source=source) from None
    return text


def _number(tok: str, what: str, lineno: int, source) -> float:
    if not _FLOAT.match(tok):
        raise LabelFormatError(f"{what} {tok!r} is not a number", lineno, source)
    v = float(tok)
    if not math.isfinite(v):
        raise LabelFormatError(f"{what} {tok!r} is not finite", lineno, source)
    return v


def _class_id(tok: str, lineno: int, source, num_classes: Optional[int]) -> int:
    if not _INT.match(tok):
        raise LabelFormatError(f"class id {tok!r} is not a non-negative integer", lineno, source)
    cls = int(tok)
    if num_classes is not None and cls >= num_classes:
        raise LabelFormatError(f"unknown class id {cls} (have {num_classes} classes)", lineno, source)
    return cls


def _unit_box(vals: Sequence[float], lineno: int, source) -> BBox:
    cx, cy, w, h = vals
    for name, v in zip(("cx", "cy", "w", "h"), vals):
        if not 0 <= v <= 1:
            raise LabelFormatError(f"{name}={v} outside [0, 1]", lineno, source)
    if w <= 0 or h <= 0:
        raise LabelFormatError("box width and height must be positive", lineno, source)
    return BBox(cx, cy, w, h)


def parse_yolo_label(text: Union[str, bytes], num_classes: Optional[int] = None, source: Optional[str] = None) -> list[Label]:
    text = _decode(text, source)
    labels = []
    for lineno, line in enumerate(text.splitlines(), 1):
        toks = line.split()
        if not toks:
            continue
        if len(toks) != 5:
            raise LabelFormatError(f"expected 5 fields, got {len(toks)}", lineno, source)
        cls = _class_id(toks[0], lineno, source, num_classes)
        vals = [_number(t, f, lineno, source) for t, f in zip(toks[1:], ("cx", "cy", "w", "h"))]
        labels.append((cls, _unit_box(vals, lineno, source)))
    return labels


def format_yolo_label(labels: Iterable[Label]) -> str:
    """Serialize with six fractional digits."""
    return "".join(f"{c} {b.cx:.6f} {b.cy:.6f} {b.w:.6f} {b.h:.6f}\n" for c, b in labels)


def _class_lookup(class_map) -> dict[str, int]:
    if isinstance(class_map, dict):
        return {str(k).lower(): int(v) for k, v in class_map.items()}
    return {name.lower(): i for i, name in enumerate(class_map)}


def parse_voc_xml(
    text: Union[str, bytes],
    image_width: Optional[float] = None,
    image_height: Optional[float] = None,
    class_map=PKU_CLASSES,
    source: Optional[str] = None,
) -> list[Label]:
    """Read ``object/name`` and ``object/bndbox`` from a VOC annotation.

    Class names match case-insensitively. Image size falls back to the
    ``size`` element when not given.
    """
    lookup = _class_lookup(class_map)
    try:
        root = ET.fromstring(text)
    except (ET.ParseError, ValueError, TypeError, LookupError) as e:
        # LookupError: unknown encoding named in the XML declaration
        raise LabelFormatError(f"malformed XML: {e}", source=source) from None

    def num(el, tag, ctx):
        node = el.find(tag)
        if node is None or node.text is None:
            raise LabelFormatError(f"missing <{tag}> in {ctx}", source=source)
        tok = node.text.strip()
        if not _FLOAT.match(tok):
            raise LabelFormatError(f"<{tag}> value {tok!r} is not a number", source=source)
        v = float(tok)
        if not math.isfinite(v):
            raise LabelFormatError(f"<{tag}> value {tok!r} is not finite", source=source)
        return v

    if image_width is None or image_height is None:
        size = root.find("size")
        if size is None:
            raise LabelFormatError("image size not given and <size> missing", source=source)
        image_width, image_height = num(size, "width", "<size>"), num(size, "height", "<size>")
    if not (image_width > 0 and image_height > 0):
        raise LabelFormatError("image size must be positive", source=source)

    labels = []
    for k, obj in enumerate(root.iter("object")):
        name_el = obj.find("name")
        if name_el is None or name_el.text is None:
            raise LabelFormatError(f"object {k} has no <name>", source=source)
        name = name_el.text.strip().lower()
        if name not in lookup:
            raise LabelFormatError(f"unknown class name {name_el.text.strip()!r}", source=source)
        bb = obj.find("bndbox")
        if bb is None:
            raise LabelFormatError(f"object {k} has no <bndbox>", source=source)
        ctx = f"object {k}"
        x0, y0, x1, y1 = (num(bb, t, ctx) for t in ("xmin", "ymin", "xmax", "ymax"))
        if not (x1 > x0 and y1 > y0):
            raise LabelFormatError(f"inverted or empty box in {ctx}: ({x0}, {y0}, {x1}, {y1})", source=source)
        if x0 < 0 or y0 < 0 or x1 > image_width or y1 > image_height:
            raise LabelFormatError(f"box of {ctx} extends outside the {image_width:g}x{image_height:g} image", source=source)
        box = BBox((x0 + x1) / (2 * image_width), (y0 + y1) / (2 * image_height), (x1 - x0) / image_width, (y1 - y0) / image_height)
        labels.append((lookup[name], box))
    return labels


def parse_predictions(text: Union[str, bytes], num_classes: Optional[int] = None, source: Optional[str] = None) -> list[Detection]:
    text = _decode(text, source)
    dets = []
    for lineno, line in enumerate(text.splitlines(), 1):
        toks = line.split()
        if not toks:
            continue
        if len(toks) != 7:
            raise LabelFormatError(f"expected 7 fields, got {len(toks)}", lineno, source)
        cls = _class_id(toks[1], lineno, source, num_classes)
        conf = _number(toks[2], "confidence", lineno, source)
        if not 0 <= conf <= 1:
            raise LabelFormatError(f"confidence {conf} outside [0, 1]", lineno, source)
        vals = [_number(t, f, lineno, source) for t, f in zip(toks[3:], ("cx", "cy", "w", "h"))]
        dets.append(Detection(toks[0], cls, _unit_box(vals, lineno, source), conf))
    return dets


def format_predictions(dets: Iterable[Detection]) -> str:
    return "".join(
        f"{d.image_id} {d.class_id} {d.confidence:.6f} {d.box.cx:.6f} {d.box.cy:.6f} {d.box.w:.6f} {d.box.h:.6f}\n"
        for d in dets
    )


# -- images ------------------------------------------------------------------


def read_image(path) -> np.ndarray:
    """Decode an 8-bit grayscale or RGB image to ``(H, W, C)`` uint8."""
    with Image.open(path) as im:
        if im.mode not in ("L", "RGB"):
            raise ValueError(f"{path}: unsupported image mode {im.mode!r} (need 8-bit L or RGB)")
        a = np.asarray(im, dtype=np.uint8)
    return a[:, :, None] if a.ndim == 2 else a


def write_image(path, img: np.ndarray) -> None:
    a = np.asarray(img)
    if a.ndim == 3 and a.shape[2] == 1:
        a = a[:, :, 0]
    Image.fromarray(a).save(path, format="PNG", compress_level=1)


# -- manifests ---------------------------------------------------------------


@dataclass
class ManifestItem:
    id: str
    image: Path
    label: Path
    split: str = ""
    group: Optional[str] = None
    provenance: dict = field(default_factory=dict)


@dataclass
class DatasetManifest:
    classes: list[str]
    items: list[ManifestItem]

    def __post_init__(self):
        validate_classes(self.classes)
        seen = set()
        for it in self.items:
            if it.id in seen:
                raise ManifestError(f"duplicate item id {it.id!r}")
            seen.add(it.id)
            if it.split not in SPLITS:
                raise ManifestError(f"item {it.id!r} has unknown split {it.split!r}")

    def subset(self, split: str) -> "DatasetManifest":
        return DatasetManifest(list(self.classes), [it for it in self.items if it.split == split])

    def by_id(self) -> dict[str, ManifestItem]:
        return {it.id: it for it in self.items}


def validate_classes(classes: Sequence[str]) -> None:
    if not classes:
        raise ManifestError("class list is empty")
    if any(not isinstance(c, str) or not c for c in classes):
        raise ManifestError("class names must be nonempty strings")
    dup = sorted({c for c in classes if list(classes).count(c) > 1})
    if dup:
        raise ManifestError(f"duplicate class names: {dup}")


def _atomic_write_text(path: Path, text: str) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _rel(p: Path, base: Path) -> str:
    return Path(os.path.relpath(Path(p).resolve(), base.resolve())).as_posix()


def write_manifest(manifest: DatasetManifest, path, config: Optional[dict] = None) -> None:
    """Write ``manifest`` as JSON Lines; ``config`` is stored in the header."""
    path = Path(path)
    base = path.parent
    header = {"format": MANIFEST_FORMAT, "version": MANIFEST_VERSION, "classes": list(manifest.classes)}
    if config is not None:
        header["config"] = config
    lines = [json.dumps(header, sort_keys=True)]
    for it in manifest.items:
        rec = {
            "id": it.id,
            "image": _rel(it.image, base),
            "label": _rel(it.label, base),
            "split": it.split,
            "group": it.group,
            "provenance": it.provenance,
        }
        lines.append(json.dumps(rec, sort_keys=True))
    _atomic_write_text(path, "\n".join(lines) + "\n")


_ITEM_KEYS = {"id", "image", "label", "split", "group", "provenance"}


def read_manifest(path, check_files: bool = True) -> DatasetManifest:
    """Load and validate a manifest.

    With ``check_files`` every referenced file must exist and every label
    file must parse with class ids inside the class list.
    """
    path = Path(path)
    base = path.parent.resolve()
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except UnicodeDecodeError as e:
        raise ManifestError(f"{path}: not valid UTF-8") from e
    lines = [ln for ln in lines if ln.strip()]
    if not lines:
        raise ManifestError(f"{path}: empty manifest")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as e:
        raise ManifestError(f"{path}:1: bad header: {e}") from None
    if not isinstance(header, dict) or header.get("format") != MANIFEST_FORMAT:
        raise ManifestError(f"{path}:1: not a {MANIFEST_FORMAT} file")
    if header.get("version") != MANIFEST_VERSION:
        raise ManifestError(f"{path}:1: unsupported manifest version {header.get('version')!r}")
    classes = header.get("classes")
    if not isinstance(classes, list):
        raise ManifestError(f"{path}:1: 'classes' must be a list")
    validate_classes(classes)

    items = []
    for lineno, line in enumerate(lines[1:], 2):
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as e:
            raise ManifestError(f"{path}:{lineno}: bad record: {e}") from None
        if not isinstance(rec, dict) or not {"id", "image", "label"} <= rec.keys() or not rec.keys() <= _ITEM_KEYS:
            raise ManifestError(f"{path}:{lineno}: record needs id/image/label and only known keys")
        if not all(isinstance(rec[k], str) for k in ("id", "image", "label")):
            raise ManifestError(f"{path}:{lineno}: id/image/label must be strings")
        prov = rec.get("provenance") or {}
        if not isinstance(prov, dict):
            raise ManifestError(f"{path}:{lineno}: provenance must be an object")
        items.append(
            ManifestItem(
                id=rec["id"],
                image=base / rec["image"],
                label=base / rec["label"],
                split=rec.get("split") or "",
                group=rec.get("group"),
                provenance=prov,
            )
        )
    manifest = DatasetManifest(classes, items)
    if check_files:
        validate_files(manifest)
    return manifest


def validate_files(manifest: DatasetManifest) -> None:
    missing = [str(p) for it in manifest.items for p in (it.image, it.label) if not Path(p).is_file()]
    if missing:
        raise ManifestError("missing files: " + ", ".join(missing))
    for it in manifest.items:
        parse_yolo_label(Path(it.label).read_bytes(), len(manifest.classes), source=str(it.label))


# -- splitting ---------------------------------------------------------------


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.8
    seed: int = 0
    stratify_by_class: bool = True

    def __post_init__(self):
        if not 0 < self.train_fraction < 1:
            raise ValueError(f"train_fraction must be in (0, 1), got {self.train_fraction}")


def train_count(n: int, fraction: float) -> int:
    """``floor(fraction * n)``, tolerant of the float error in the product."""
    return min(n, math.floor(fraction * n + 1e-9))


def split_dataset(manifest: DatasetManifest, spec: SplitSpec) -> tuple[DatasetManifest, DatasetManifest]:
    """Seeded train/val partition.

    With stratification each item ``group`` (the class folder for the source
    dataset) is split on its own: ``floor(fraction * n)`` items go to train,
    the remainder to validation. Items keep their manifest order.
    """
    if not manifest.items:
        raise ValueError("manifest is empty")
    groups: dict[str, list[int]] = {}
    for i, it in enumerate(manifest.items):
        key = (it.group or "") if spec.stratify_by_class else ""
        groups.setdefault(key, []).append(i)
    train_idx = set()
    for key in sorted(groups):
        idx = sorted(groups[key], key=lambda i: manifest.items[i].id)
        perm = keyed_rng(spec.seed, key, "split").permutation(len(idx))
        n_train = train_count(len(idx), spec.train_fraction)
        train_idx.update(idx[p] for p in perm[:n_train])
    train, val = [], []
    for i, it in enumerate(manifest.items):
        if i in train_idx:
            train.append(replace(it, split="train"))
        else:
            val.append(replace(it, split="val"))
    return DatasetManifest(list(manifest.classes), train), DatasetManifest(list(manifest.classes), val)


# -- whole datasets ----------------------------------------------------------


def check_item_id(item_id: str) -> str:
    if not _SAFE_ID.match(item_id):
        raise ManifestError(f"item id {item_id!r} is not filename-safe")
    return item_id


def write_dataset(
    items: Sequence[LabeledImage], root, classes: Sequence[str], split: str = "", config: Optional[dict] = None
) -> DatasetManifest:
    """Write images (PNG), YOLO labels and ``manifest.jsonl`` under ``root``."""
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "labels").mkdir(parents=True, exist_ok=True)
    entries = []
    nc = len(classes)
    for li in items:
        sid = check_item_id(li.source_id)
        for cls, _ in li.labels:
            if not 0 <= cls < nc:
                raise ManifestError(f"{sid}: class id {cls} outside [0, {nc})")
        img_path = root / "images" / f"{sid}.png"
        lbl_path = root / "labels" / f"{sid}.txt"
        write_image(img_path, li.image)
        lbl_path.write_text(format_yolo_label(li.labels), encoding="utf-8")
        prov = dict(li.provenance)
        group = prov.pop("group", None)
        entries.append(ManifestItem(sid, img_path, lbl_path, split, group, prov))
    manifest = DatasetManifest(list(classes), entries)
    write_manifest(manifest, root / "manifest.jsonl", config)
    return manifest


def load_labeled(manifest: DatasetManifest) -> list[LabeledImage]:
    nc = len(manifest.classes)
    out = []
    for it in manifest.items:
        labels = parse_yolo_label(Path(it.label).read_bytes(), nc, source=str(it.label))
        prov = dict(it.provenance)
        if it.group is not None:
            prov["group"] = it.group
        out.append(LabeledImage(read_image(it.image), labels, it.id, prov))
    return out


def ground_truths(manifest: DatasetManifest) -> list[GroundTruth]:
    nc = len(manifest.classes)
    gts = []
    for it in manifest.items:
        for cls, box in parse_yolo_label(Path(it.label).read_bytes(), nc, source=str(it.label)):
            gts.append(GroundTruth(it.id, cls, box))
    return gts
