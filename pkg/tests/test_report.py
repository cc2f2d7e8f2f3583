import csv
import io
import json
import xml.etree.ElementTree as ET

from pcbview.geometry import BBox
from pcbview.metrics import Detection, GroundTruth, evaluate
from pcbview.report import format_table, per_class_csv, pr_curves_csv, pr_curves_svg, summary_csv

SVG = "{http://www.w3.org/2000/svg}"
CONFIG = {"command": "eval", "method": "a<b & c--d", "seed": 3}


def report(names=("cat", "dog")):
    gts = [GroundTruth("a", 0, BBox(0.3, 0.3, 0.2, 0.2)), GroundTruth("a", 1, BBox(0.7, 0.7, 0.2, 0.2))]
    dets = [Detection("a", 0, BBox(0.3, 0.3, 0.2, 0.2), 0.9), Detection("a", 1, BBox(0.2, 0.7, 0.2, 0.2), 0.8)]
    return evaluate(dets, gts, list(names))


def rows(text):
    body = [ln for ln in text.splitlines() if not ln.startswith("#")]
    return list(csv.reader(io.StringIO("\n".join(body))))


def config_from_header(text):
    line = next(ln for ln in text.splitlines() if ln.startswith("# config: "))
    return json.loads(line[len("# config: ") :])


def test_summary_values():
    r = rows(summary_csv(report()))
    assert r[0] == ["metric", "value"]
    got = dict(r[1:])
    assert got["map50"] == "0.500000"
    # F1 is 2/3 at confidence 0.9 and 1/2 once the 0.8 miss is admitted
    assert (got["tp"], got["fp"], got["fn"], got["conf_threshold"]) == ("1", "0", "1", "0.900000")


def test_per_class_columns():
    r = rows(per_class_csv(report()))
    assert r[0][:5] == ["class_id", "class", "num_gt", "num_det", "evaluated"]
    assert r[0][5] == "ap50" and r[0][-2] == "ap95" and r[0][-1] == "ap50_95"
    assert [row[1] for row in r[1:]] == ["cat", "dog"]


def test_config_round_trips_through_every_text_report():
    rep = report()
    for text in (summary_csv(rep, CONFIG), per_class_csv(rep, CONFIG), pr_curves_csv(rep, CONFIG), format_table(rep, config=CONFIG)):
        assert config_from_header(text) == CONFIG


def test_svg_is_well_formed_and_carries_config():
    root = ET.fromstring(pr_curves_svg(report(("a<b", "c&d")), config=CONFIG))
    assert root.tag == SVG + "svg"
    desc = root.find(SVG + "desc").text
    assert config_from_header(desc) == CONFIG
    legend = [t.text for t in root.iter(SVG + "text") if t.text and t.text.startswith(("a<b", "c&d"))]
    assert legend == ["a<b 1.000", "c&d 0.000"]
    assert len(list(root.iter(SVG + "polyline"))) == 2


def test_svg_without_config_has_no_desc():
    assert ET.fromstring(pr_curves_svg(report())).find(SVG + "desc") is None


def test_pr_curve_rows_follow_ranking():
    r = rows(pr_curves_csv(report()))
    assert r[0] == ["class_id", "class", "rank", "recall", "precision"]
    assert r[1:] == [["0", "cat", "0", "1.000000", "1.000000"], ["1", "dog", "0", "0.000000", "0.000000"]]
