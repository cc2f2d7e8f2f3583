import json
import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pcbview.augment import LabeledImage
from pcbview.dataset import (
    PKU_CLASSES,
    DatasetManifest,
    LabelFormatError,
    ManifestError,
    ManifestItem,
    SplitSpec,
    format_predictions,
    format_yolo_label,
    load_labeled,
    parse_predictions,
    parse_voc_xml,
    parse_yolo_label,
    read_manifest,
    split_dataset,
    train_count,
    write_dataset,
    write_manifest,
)
from pcbview.geometry import BBox
from pcbview.metrics import Detection

PKU_COUNTS = dict(zip(PKU_CLASSES, (115, 115, 116, 116, 115, 116)))


def voc(objects, size=(600, 400)):
    objs = "".join(
        f"<object><name>{n}</name><bndbox><xmin>{a}</xmin><ymin>{b}</ymin><xmax>{c}</xmax><ymax>{d}</ymax></bndbox></object>"
        for n, (a, b, c, d) in objects
    )
    sz = "" if size is None else f"<size><width>{size[0]}</width><height>{size[1]}</height><depth>3</depth></size>"
    return f"<annotation><filename>x.jpg</filename>{sz}{objs}</annotation>"


def pku_manifest(counts=PKU_COUNTS):
    items = []
    for cls, n in counts.items():
        for k in range(n):
            sid = f"{cls}_{k:03d}"
            items.append(ManifestItem(sid, Path(f"images/{sid}.png"), Path(f"labels/{sid}.txt"), group=cls))
    return DatasetManifest(list(PKU_CLASSES), items)


class TestYolo:
    def test_basic(self):
        assert parse_yolo_label("0 0.5 0.5 0.1 0.2") == [(0, BBox(0.5, 0.5, 0.1, 0.2))]

    def test_range_error_line(self):
        with pytest.raises(LabelFormatError) as e:
            parse_yolo_label("0 1.5 0.5 0.1 0.2")
        assert e.value.line == 1

    def test_line_numbers_skip_blank(self):
        with pytest.raises(LabelFormatError) as e:
            parse_yolo_label("0 0.5 0.5 0.1 0.2\n\n1 0.5 0.5 0.1\n", source="f.txt")
        assert e.value.line == 3 and str(e.value).startswith("f.txt:3:")

    @pytest.mark.parametrize(
        "text",
        ["0 0.5 0.5 0 0.2", "-1 0.5 0.5 0.1 0.1", "0 nan 0.5 0.1 0.1", "0 inf 0.5 0.1 0.1", "a 0.5 0.5 0.1 0.1",
         "0 0.5 0.5 0.1 0.1 9", "0 0x1 0.5 0.1 0.1", "1.0 0.5 0.5 0.1 0.1", "0 ０.5 0.5 0.1 0.1"],
    )
    def test_rejects(self, text):
        with pytest.raises(LabelFormatError):
            parse_yolo_label(text)

    def test_class_bound(self):
        with pytest.raises(LabelFormatError):
            parse_yolo_label("6 0.5 0.5 0.1 0.1", num_classes=6)

    def test_bytes_non_utf8(self):
        with pytest.raises(LabelFormatError):
            parse_yolo_label(b"\xff\xfe")

    @given(st.lists(st.tuples(st.integers(0, 5), *[st.integers(1, 1_000_000)] * 4), max_size=10))
    def test_round_trip(self, raw):
        labels = [(c, BBox(*(v / 1e6 for v in vals))) for c, *vals in raw]
        text = format_yolo_label(labels)
        back = parse_yolo_label(text, 6)
        assert back == labels
        assert format_yolo_label(back) == text


class TestVoc:
    def test_conversion(self):
        (cls, b), = parse_voc_xml(voc([("spur", (60, 40, 120, 80))]), 600, 400)
        assert cls == 4
        assert b.astuple() == pytest.approx((0.15, 0.15, 0.1, 0.1), abs=1e-15)

    def test_size_from_xml(self):
        assert parse_voc_xml(voc([("short", (60, 40, 120, 80))])) == parse_voc_xml(voc([("short", (60, 40, 120, 80))]), 600, 400)

    def test_class_names_case_insensitive(self):
        labels = parse_voc_xml(voc([(n.capitalize(), (1, 1, 2, 2)) for n in PKU_CLASSES]))
        assert [c for c, _ in labels] == list(range(6))
        assert parse_voc_xml(voc([("missing_hole", (1, 1, 2, 2))]))[0][0] == 0

    @pytest.mark.parametrize(
        "xml",
        [
            voc([("spur", (60, 40, 60, 80))]),
            voc([("spur", (70, 40, 60, 80))]),
            voc([("crack", (1, 1, 2, 2))]),
            voc([("spur", (1, 1, 700, 2))]),
            voc([("spur", (1, 1, 2, 2))], size=None),
            voc([("spur", ("a", 1, 2, 2))]),
            "<annotation><object><name>spur</name></object><size><width>5</width><height>5</height></size></annotation>",
            "<annotation",
            "",
        ],
    )
    def test_rejects(self, xml):
        with pytest.raises(LabelFormatError):
            parse_voc_xml(xml)


class TestPredictions:
    def test_round_trip(self):
        dets = [Detection("img_1", 2, BBox(0.25, 0.5, 0.125, 0.0625), 0.75)]
        assert parse_predictions(format_predictions(dets), 6) == dets

    def test_bad_confidence(self):
        with pytest.raises(LabelFormatError) as e:
            parse_predictions("a 0 1.5 0.5 0.5 0.1 0.1", source="p.txt")
        assert e.value.line == 1


class TestSplit:
    def test_pku_counts(self):
        train, val = split_dataset(pku_manifest(), SplitSpec(0.8, seed=0))
        assert (len(train.items), len(val.items)) == (552, 141)
        rows = [(sum(it.group == c for it in train.items), sum(it.group == c for it in val.items)) for c in PKU_CLASSES]
        assert rows == [(92, 23), (92, 23), (92, 24), (92, 24), (92, 23), (92, 24)]

    def test_floor_rule(self):
        assert [train_count(n, 0.8) for n in (115, 116, 10, 5, 1)] == [92, 92, 8, 4, 0]
        assert train_count(1, 1 - 1e-12) == 1

    def test_single_item_near_one(self):
        m = pku_manifest({"short": 1})
        train, val = split_dataset(m, SplitSpec(1 - 1e-12))
        assert len(train.items) == 1 and not val.items

    @given(st.integers(0, 2**32), st.floats(0.05, 0.95), st.dictionaries(st.sampled_from(PKU_CLASSES), st.integers(1, 40), min_size=1))
    def test_partition(self, seed, frac, counts):
        m = pku_manifest(counts)
        train, val = split_dataset(m, SplitSpec(frac, seed))
        ids = [it.id for it in m.items]
        t, v = [it.id for it in train.items], [it.id for it in val.items]
        assert sorted(t + v) == sorted(ids) and not set(t) & set(v)
        assert t == [i for i in ids if i in set(t)]  # manifest order kept
        for cls, n in counts.items():
            k = sum(it.group == cls for it in train.items)
            assert abs(k / n - frac) < 1 / n + 1e-9

    def test_deterministic_and_seeded(self):
        m = pku_manifest()
        a = [it.id for it in split_dataset(m, SplitSpec(seed=3))[0].items]
        b = [it.id for it in split_dataset(m, SplitSpec(seed=3))[0].items]
        c = [it.id for it in split_dataset(m, SplitSpec(seed=4))[0].items]
        assert a == b and a != c

    def test_fraction_bounds(self):
        for f in (0.0, 1.0, -0.1):
            with pytest.raises(ValueError):
                SplitSpec(f)


class TestManifest:
    def _write(self, tmp_path, n=3):
        items = [
            LabeledImage(np.full((8, 10, 3), k, np.uint8), [(k % 6, BBox(0.5, 0.5, 0.25, 0.5))], f"it{k}", {"group": "short", "note": k})
            for k in range(n)
        ]
        return items, write_dataset(items, tmp_path, PKU_CLASSES, split="val", config={"seed": 1})

    def test_round_trip(self, tmp_path):
        items, m = self._write(tmp_path)
        back = read_manifest(tmp_path / "manifest.jsonl")
        assert back.classes == m.classes
        assert [(i.id, i.split, i.group, i.provenance) for i in back.items] == [(i.id, i.split, i.group, i.provenance) for i in m.items]
        assert [Path(i.image).resolve() for i in back.items] == [Path(i.image).resolve() for i in m.items]
        loaded = load_labeled(back)
        for a, b in zip(items, loaded):
            assert np.array_equal(a.image, b.image) and a.labels == b.labels and b.provenance["group"] == "short"
        header = json.loads((tmp_path / "manifest.jsonl").read_text().splitlines()[0])
        assert header["config"] == {"seed": 1}

    def test_relative_paths(self, tmp_path):
        self._write(tmp_path / "a")
        (tmp_path / "a").rename(tmp_path / "b")
        assert len(read_manifest(tmp_path / "b" / "manifest.jsonl").items) == 3

    def test_missing_label(self, tmp_path):
        _, m = self._write(tmp_path)
        Path(m.items[1].label).unlink()
        with pytest.raises(ManifestError, match="it1.txt"):
            read_manifest(tmp_path / "manifest.jsonl")

    def test_bad_label_class(self, tmp_path):
        _, m = self._write(tmp_path)
        Path(m.items[0].label).write_text("9 0.5 0.5 0.1 0.1\n")
        with pytest.raises(LabelFormatError):
            read_manifest(tmp_path / "manifest.jsonl")

    def test_duplicate_classes(self, tmp_path):
        with pytest.raises(ManifestError):
            DatasetManifest(["a", "b", "a"], [])
        p = tmp_path / "m.jsonl"
        p.write_text(json.dumps({"format": "pcbview-manifest", "version": 1, "classes": ["a", "a"]}) + "\n")
        with pytest.raises(ManifestError):
            read_manifest(p)

    def test_duplicate_ids(self):
        it = ManifestItem("x", Path("i"), Path("l"))
        with pytest.raises(ManifestError):
            DatasetManifest(["a"], [it, it])

    @pytest.mark.parametrize(
        "text",
        ["", "not json\n", '{"format": "other"}\n', '{"format": "pcbview-manifest", "version": 2, "classes": ["a"]}\n',
         '{"format": "pcbview-manifest", "version": 1, "classes": ["a"]}\n{"id": "x"}\n',
         '{"format": "pcbview-manifest", "version": 1, "classes": ["a"]}\n{"id": "x", "image": "i", "label": "l", "split": "dev"}\n'],
    )
    def test_schema_errors(self, tmp_path, text):
        p = tmp_path / "m.jsonl"
        p.write_text(text)
        with pytest.raises(ManifestError):
            read_manifest(p, check_files=False)

    def test_unsafe_id(self, tmp_path):
        with pytest.raises(ManifestError):
            write_dataset([LabeledImage(np.zeros((4, 4), np.uint8), [], "../evil")], tmp_path, PKU_CLASSES)

    def test_write_read_manifest_direct(self, tmp_path):
        m = pku_manifest({"spur": 2})
        write_manifest(m, tmp_path / "m.jsonl")
        back = read_manifest(tmp_path / "m.jsonl", check_files=False)
        assert [(i.id, i.group) for i in back.items] == [(i.id, i.group) for i in m.items]


@given(st.binary(max_size=200))
def test_fuzz_small(data):
    for fn in (parse_yolo_label, parse_voc_xml, parse_predictions):
        try:
            fn(data)
        except LabelFormatError:
            pass
