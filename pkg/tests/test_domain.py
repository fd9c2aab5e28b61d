import io
import json
import math
import os
import unittest

from force_aggregator.domain import (ClassificationTree, Position, Report, SituationPicture, Track,
                                     Unit, UnitCandidate, UnitTemplate, default_templates,
                                     find_template, is_descendant, load_templates, normalize_angle,
                                     parse_report_log, read_report_log, read_tracks,
                                     resolve_class, save_report_log, serialize_report)
from force_aggregator.errors import ClassificationError, ReportLogError, TemplateError


def make_report(x=0.0, y=0.0, time=0.0, classification="mbt", orientation=0.0,
                observer="obs-1", name="mbt_platoon-1/1"):
    return Report(observer, name, Position(x, y), time, classification, orientation)


class TestClassificationTree(unittest.TestCase):
    def setUp(self):
        self.tree = ClassificationTree.default()

    def test_default_tree_shape(self):
        self.assertEqual(self.tree.root, "unknown")
        self.assertEqual(self.tree.ancestors("mbt"), ("mbt", "tracked", "unknown"))
        self.assertEqual(self.tree.depth("unknown"), 0)
        self.assertEqual(self.tree.depth("wheeled"), 1)
        self.assertEqual(self.tree.children("tracked"), ["apc_tracked", "atgm_launcher", "mbt"])

    def test_is_descendant(self):
        self.assertTrue(is_descendant("mbt", "tracked", self.tree))
        self.assertTrue(is_descendant("tracked", "mbt", self.tree))
        self.assertTrue(is_descendant("mbt", "mbt", self.tree))
        self.assertFalse(is_descendant("mbt", "apc_tracked", self.tree))
        self.assertTrue(is_descendant("unknown", "wheeled", self.tree))
        with self.assertRaises(ClassificationError):
            is_descendant("mbt", "hovercraft", self.tree)

    def test_truncate(self):
        self.assertEqual(self.tree.truncate("mbt", None), "mbt")
        self.assertEqual(self.tree.truncate("mbt", 2), "mbt")
        self.assertEqual(self.tree.truncate("mbt", 1), "tracked")
        self.assertEqual(self.tree.truncate("mbt", 0), "unknown")
        self.assertEqual(self.tree.truncate("tracked", 1), "tracked")

    def test_malformed_trees(self):
        with self.assertRaises(ClassificationError):
            ClassificationTree({"tracked": "vehicle"}, root="vehicle")
        with self.assertRaises(ClassificationError):
            ClassificationTree({"a": "b", "b": "a"})
        with self.assertRaises(ClassificationError):
            ClassificationTree({"a": "missing"})

    def test_dict_round_trip(self):
        tree = ClassificationTree.from_dict(json.loads(json.dumps(self.tree.to_dict())))
        self.assertEqual(tree.nodes, self.tree.nodes)
        self.assertEqual(tree.parent, self.tree.parent)

    def test_resolve_class(self):
        self.assertEqual(resolve_class(["unknown", "tracked", "mbt"], self.tree), "mbt")
        self.assertEqual(resolve_class(["unknown"], self.tree), "unknown")
        with self.assertRaises(ClassificationError):
            resolve_class(["mbt", "apc_tracked"], self.tree)
        with self.assertRaises(ClassificationError):
            resolve_class([], self.tree)


class TestReports(unittest.TestCase):
    def setUp(self):
        self.tree = ClassificationTree.default()
        # 创建测试输出目录
        self.test_output_dir = "test_output"
        if not os.path.exists(self.test_output_dir):
            os.makedirs(self.test_output_dir)

    def test_normalize_angle(self):
        self.assertAlmostEqual(normalize_angle(-0.5), 2 * math.pi - 0.5)
        self.assertEqual(normalize_angle(2 * math.pi), 0.0)
        self.assertEqual(normalize_angle(-1e-20), 0.0)
        self.assertAlmostEqual(make_report(orientation=-math.pi / 2).orientation, 1.5 * math.pi)

    def test_invalid_reports(self):
        with self.assertRaises(ValueError):
            make_report(time=-1.0)
        with self.assertRaises(ValueError):
            Position(float("nan"), 0.0)

    def test_parse_string_fields(self):
        line = json.dumps({"from": "obs-1", "name": None, "position": {"x": 1, "y": 2},
                           "time": "12.5", "classification": "mbt", "orientation": "1.57"})
        reports = parse_report_log([line])
        self.assertEqual(len(reports), 1)
        self.assertEqual(reports[0].time, 12.5)
        self.assertAlmostEqual(reports[0].orientation, math.pi / 2, places=2)
        self.assertEqual(reports[0].classification, "mbt")
        self.assertIsNone(reports[0].name)

    def test_parse_empty_stream(self):
        self.assertEqual(parse_report_log([]), [])
        self.assertEqual(parse_report_log(["", "   \n"]), [])

    def test_parse_errors_name_line_and_field(self):
        good = serialize_report(make_report())
        bad = json.dumps({"from": "obs-1", "name": None, "position": {"x": 1, "y": 2},
                          "time": 3, "classification": "hovercraft", "orientation": 0})
        with self.assertRaises(ReportLogError) as ctx:
            parse_report_log([good, bad])
        self.assertEqual(ctx.exception.line, 2)
        self.assertEqual(ctx.exception.field, "classification")
        self.assertIn("line 2", str(ctx.exception))

        missing = json.dumps({"from": "obs-1", "name": None, "position": {"x": 1, "y": 2},
                              "time": 3, "orientation": 0})
        with self.assertRaises(ReportLogError) as ctx:
            parse_report_log([missing])
        self.assertEqual(ctx.exception.field, "classification")

        with self.assertRaises(ReportLogError) as ctx:
            parse_report_log([good, "{not json"])
        self.assertEqual(ctx.exception.line, 2)

        negative = good.replace('"time": 0.0', '"time": -4')
        with self.assertRaises(ReportLogError) as ctx:
            parse_report_log([negative])
        self.assertEqual(ctx.exception.field, "time")

    def test_parse_csv(self):
        text = ("from,name,x,y,time,classification,orientation\n"
                "obs-1,mbt_platoon-1/1,10,20,5,mbt,0.5\n"
                "obs-2,,11,21,6,tracked,0.6\n")
        reports = parse_report_log(io.StringIO(text))
        self.assertEqual(len(reports), 2)
        self.assertEqual(reports[0].position, Position(10.0, 20.0))
        self.assertIsNone(reports[1].name)
        self.assertEqual(reports[1].classification, "tracked")

    def test_log_round_trip(self):
        reports = [make_report(x=i * 3.5, y=-i, time=float(i), orientation=0.1 * i) for i in range(5)]
        output_file = os.path.join(self.test_output_dir, "round_trip.jsonl")
        save_report_log(reports, output_file)
        self.assertEqual(read_report_log(output_file), reports)
        with open(output_file, encoding="utf-8") as f:
            lines = f.read().splitlines()
        self.assertEqual(lines, [serialize_report(r) for r in reports])
        self.assertEqual(list(json.loads(lines[0])),
                         ["from", "name", "position", "time", "classification", "orientation"])


class TestTracksAndTemplates(unittest.TestCase):
    def setUp(self):
        self.tree = ClassificationTree.default()
        self.test_output_dir = "test_output"
        if not os.path.exists(self.test_output_dir):
            os.makedirs(self.test_output_dir)

    def test_track_sorts_and_resolves(self):
        reports = [make_report(time=5.0, classification="tracked"),
                   make_report(time=1.0, classification="mbt"),
                   make_report(time=3.0, classification="unknown")]
        track = Track.from_reports("T1", reports, self.tree, report_ids=[7, 2, 4])
        self.assertEqual([r.time for r in track.reports], [1.0, 3.0, 5.0])
        self.assertEqual(track.report_ids, (2, 4, 7))
        self.assertEqual(track.resolved_class, "mbt")
        self.assertEqual((track.start, track.end), (1.0, 5.0))

    def test_track_rejects_type_conflict(self):
        with self.assertRaises(ClassificationError):
            Track.from_reports("T1", [make_report(classification="mbt"),
                                      make_report(time=1.0, classification="apc_tracked")], self.tree)
        with self.assertRaises(ValueError):
            Track("T1", (), "unknown")

    def test_tracks_file(self):
        track = Track.from_reports("T1", [make_report(time=float(t)) for t in range(3)], self.tree,
                                   report_ids=[0, 1, 2])
        output_file = os.path.join(self.test_output_dir, "tracks.json")
        with open(output_file, "w", encoding="utf-8") as f:
            json.dump({"tracks": [track.to_dict(conflict=0.1)]}, f)
        loaded = read_tracks(output_file)
        self.assertEqual(len(loaded), 1)
        self.assertEqual(loaded[0].reports, track.reports)
        self.assertEqual(loaded[0].report_ids, (0, 1, 2))

    def test_default_templates(self):
        templates = default_templates()
        self.assertEqual(find_template(templates, "mech_platoon").composition, (("apc_tracked", 4),))
        self.assertEqual(find_template(templates, "mbt_platoon").composition, (("mbt", 5),))
        self.assertEqual(find_template(templates, "at_platoon").composition, (("atgm_launcher", 5),))
        company = find_template(templates, "mech_company_mbt")
        self.assertEqual(company.level, 2)
        self.assertEqual(company.expected_total, 5)
        with self.assertRaises(TemplateError):
            find_template(templates, "battalion")

    def test_template_validation(self):
        with self.assertRaises(TemplateError):
            UnitTemplate("empty", ())
        with self.assertRaises(TemplateError):
            UnitTemplate("bad", (("mbt", 0),))
        with self.assertRaises(TemplateError):
            UnitTemplate("bad", (("mbt", 2),), spacing_min=200.0, spacing_max=50.0)

    def test_load_templates(self):
        output_file = os.path.join(self.test_output_dir, "templates.json")
        with open(output_file, "w", encoding="utf-8") as f:
            json.dump({"templates": [t.to_dict() for t in default_templates()]}, f)
        self.assertEqual(load_templates(output_file), default_templates())

    def test_situation_picture_partition(self):
        tracks = tuple(Track.from_reports(f"T{i}", [make_report(time=float(i))], self.tree)
                       for i in range(1, 4))
        unit = Unit("U1", ("T1", "T2"), (UnitCandidate("mbt_platoon", 0.6, 0.6, 0.4),), 0.0)
        picture = SituationPicture(tracks, (unit,), ("T3",))
        self.assertEqual(picture.to_dict()["unaggregated"], ["T3"])
        self.assertEqual(SituationPicture.from_dict(picture.to_dict(), self.tree), picture)
        with self.assertRaises(ValueError):
            SituationPicture(tracks, (unit,), ())
        with self.assertRaises(ValueError):
            SituationPicture(tracks, (unit,), ("T3", "T1"))


if __name__ == "__main__":
    unittest.main()
