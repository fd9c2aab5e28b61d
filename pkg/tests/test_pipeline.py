import contextlib
import io
import json
import os
import unittest
from dataclasses import replace

import numpy as np

from force_aggregator.cli import EXIT_DATA, EXIT_NONCONVERGENCE, EXIT_OK, EXIT_USAGE, main
from force_aggregator.config import PipelineConfig, load_config
from force_aggregator.domain import (ClassificationTree, Position, Report, SituationPicture, Track,
                                     save_report_log)
from force_aggregator.pipeline import aggregate_reports, classify_tracks, split_by_class
from force_aggregator.scengen import generate_scenario, load_scenario, score
from force_aggregator.writers import SituationWriter, TrackWriter

PROJECT_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
CONFIGS = os.path.join(PROJECT_ROOT, "configs")
TWO_PLATOONS = os.path.join(CONFIGS, "two_platoons.json")
TWO_PLATOONS_REMAINDER = os.path.join(CONFIGS, "two_platoons_remainder.json")
PIPELINE_CONFIG = os.path.join(CONFIGS, "pipeline.json")


def vehicle_reports(name, x0, y0, times, classification="mbt", vx=5.0):
    return [Report("obs-1", name, Position(x0 + vx * t, y0), float(t), classification, 0.0)
            for t in times]


def run_quietly(argv):
    stdout = io.StringIO()
    with contextlib.redirect_stdout(stdout):
        code = main(argv + ["-q"])
    return code, stdout.getvalue()


class TestEndToEnd(unittest.TestCase):
    def setUp(self):
        self.tree = ClassificationTree.default()
        self.config = load_config(PIPELINE_CONFIG)

    def run_pipeline(self, spec_path, seed):
        spec = replace(load_scenario(spec_path), seed=seed)
        config = self.config.with_overrides(seed=seed)
        truth, reports = generate_scenario(spec, config.templates(), self.tree)
        result = aggregate_reports(reports, config, self.tree)
        picture = classify_tracks(result.tracks, config, tree=self.tree)
        return truth, result, picture

    def test_two_platoons_recovered(self):
        recovered = 0
        for seed in range(10):
            truth, result, picture = self.run_pipeline(TWO_PLATOONS, seed)
            metrics = score(picture, truth)
            units = {u.unit_type: u for u in picture.units}
            if (len(result.tracks) == 9 and metrics.purity == 1.0
                    and sorted(units) == ["mbt_platoon", "mech_platoon"]
                    and all(u.candidates[0].classification_conflict == 0.0 for u in picture.units)
                    and not picture.unaggregated
                    and metrics.unit_precision == 1.0 and metrics.unit_recall == 1.0):
                recovered += 1
        print(f"\nBoth platoons recovered for {recovered}/10 seeds")
        self.assertGreaterEqual(recovered, 9)

    def test_track_conflicts_recombine_to_metaconflict(self):
        _, result, _ = self.run_pipeline(TWO_PLATOONS, 7)
        data = json.loads(json.dumps(result.to_dict()))
        remaining = np.prod([1.0 - t["conflict"] for t in data["tracks"]])
        self.assertAlmostEqual(1.0 - remaining, data["metaconflict"], delta=1e-9)
        self.assertEqual(data["k"], 9)
        self.assertTrue(data["accepted"])
        self.assertEqual(data["repaired_clusters"], 0)
        self.assertEqual(sum(len(t["report_ids"]) for t in data["tracks"]), 99)

    def test_default_threshold_falls_back_to_smallest_weight(self):
        # 默认阈值 0.105 下没有 K 被接受，取权重最小的 K
        spec = load_scenario(TWO_PLATOONS)
        config = PipelineConfig().with_overrides(seed=7, k_max=12)
        _, reports = generate_scenario(spec, config.templates(), self.tree)
        with self.assertLogs("force_aggregator.dsclust", level="WARNING") as logs:
            result = aggregate_reports(reports, config, self.tree)
        selection = result.selection
        self.assertTrue(any("No K" in line for line in logs.output))
        self.assertFalse(selection.accepted)
        self.assertEqual(selection.unfrozen, ())
        self.assertEqual(len(selection.curve), 12)
        weights = [w for _, w in selection.curve]
        self.assertEqual(selection.K, selection.curve[weights.index(min(weights))][0])
        self.assertEqual(selection.total_weight, min(weights))
        self.assertGreater(min(weights), 0.105)
        self.assertGreaterEqual(selection.K, 9)
        self.assertFalse(result.to_dict()["accepted"])

    def test_remainder_stays_unaggregated(self):
        pictures = []
        for _ in range(2):
            truth, result, picture = self.run_pipeline(TWO_PLATOONS_REMAINDER, 7)
            pictures.append(json.dumps(picture.to_dict()))
        self.assertEqual(pictures[0], pictures[1])
        self.assertNotIn("mech_platoon-1/3", truth.vehicles)
        self.assertEqual(len(result.tracks), 7)
        self.assertEqual([u.unit_type for u in picture.units], ["mbt_platoon"])
        self.assertEqual(len(picture.unaggregated), 2)
        for track_id in picture.unaggregated:
            self.assertEqual(picture.track(track_id).resolved_class, "apc_tracked")

    def test_empty_log(self):
        result = aggregate_reports([], PipelineConfig(), self.tree)
        self.assertEqual(result.tracks, ())
        self.assertEqual(result.metaconflict, 0.0)
        self.assertEqual(result.to_dict()["k"], 0)
        self.assertEqual(classify_tracks([], tree=self.tree), SituationPicture((), (), ()))

    def test_split_by_class(self):
        reports = (vehicle_reports("a", 0, 0, [0, 2], "mbt")
                   + vehicle_reports("b", 0, 0, [4], "tracked")
                   + vehicle_reports("c", 0, 0, [6], "apc_tracked")
                   + vehicle_reports("d", 0, 0, [8], "unknown"))
        self.assertEqual(split_by_class([0, 1, 2], reports, self.tree), [[0, 1, 2]])
        self.assertEqual(split_by_class([0, 1, 2, 3, 4], reports, self.tree), [[2, 3, 4], [0, 1]])


class TestWriters(unittest.TestCase):
    def setUp(self):
        self.test_output_dir = "test_output"
        if not os.path.exists(self.test_output_dir):
            os.makedirs(self.test_output_dir)

    def test_writers_need_their_input(self):
        with self.assertRaises(ValueError):
            TrackWriter().write_tracks(os.path.join(self.test_output_dir, "none.json"))
        with self.assertRaises(ValueError):
            SituationWriter().write_picture(os.path.join(self.test_output_dir, "none.json"))
        with self.assertRaises(ValueError):
            SituationWriter(SituationPicture((), (), ())).write_decision_log(
                os.path.join(self.test_output_dir, "none.json"))

    def test_trace_files(self):
        reports = vehicle_reports("a", 0, 0, range(0, 10, 2)) + vehicle_reports("b", 0, 500, range(0, 10, 2))
        result = aggregate_reports(reports, PipelineConfig(), ClassificationTree.default())
        trace_file = os.path.join(self.test_output_dir, "trace.csv")
        curve_file = TrackWriter(result).write_trace(trace_file)
        with open(trace_file, encoding="utf-8") as f:
            lines = f.read().splitlines()
        self.assertEqual(lines[0], "k,sweep,temperature,saturation")
        self.assertEqual(len(lines) - 1, len(result.selection.anneal.trace))
        with open(curve_file, encoding="utf-8") as f:
            curve = f.read().splitlines()
        self.assertEqual(curve[0], "k,total_weight,frozen")
        self.assertEqual([int(line.split(",")[0]) for line in curve[1:]], [1, 2])
        self.assertEqual([line.split(",")[2] for line in curve[1:]], ["1", "1"])


class TestCommandLine(unittest.TestCase):
    def setUp(self):
        # 创建测试输出目录
        self.test_output_dir = "test_output"
        if not os.path.exists(self.test_output_dir):
            os.makedirs(self.test_output_dir)

    def path(self, name):
        return os.path.join(self.test_output_dir, name)

    def write_json(self, name, data):
        with open(self.path(name), "w", encoding="utf-8") as f:
            json.dump(data, f)
        return self.path(name)

    def read_lines(self, name):
        with open(self.path(name), encoding="utf-8") as f:
            return f.read().splitlines()

    def test_usage_errors(self):
        with contextlib.redirect_stderr(io.StringIO()):
            self.assertEqual(main([]), EXIT_USAGE)
            self.assertEqual(main(["aggregate"]), EXIT_USAGE)
            self.assertEqual(main(["simulate", TWO_PLATOONS, self.path("x.jsonl"), "--bogus"]), EXIT_USAGE)
            self.assertEqual(main(["config"]), EXIT_USAGE)

    def test_simulate(self):
        code, _ = run_quietly(["simulate", TWO_PLATOONS, self.path("reports.jsonl"),
                               "--truth", self.path("truth.json")])
        self.assertEqual(code, EXIT_OK)
        self.assertEqual(len(self.read_lines("reports.jsonl")), 99)
        with open(self.path("truth.json"), encoding="utf-8") as f:
            self.assertEqual(len(json.load(f)["vehicles"]), 9)

    def test_simulate_seed_override(self):
        for name in ("seed_a.jsonl", "seed_b.jsonl"):
            run_quietly(["simulate", TWO_PLATOONS, self.path(name), "--seed", "3"])
        run_quietly(["simulate", TWO_PLATOONS, self.path("seed_c.jsonl")])
        self.assertEqual(self.read_lines("seed_a.jsonl"), self.read_lines("seed_b.jsonl"))
        self.assertNotEqual(self.read_lines("seed_a.jsonl"), self.read_lines("seed_c.jsonl"))

    def test_missing_spec_file(self):
        code, _ = run_quietly(["simulate", self.path("no_such_spec.json"), self.path("out.jsonl")])
        self.assertEqual(code, EXIT_DATA)

    def test_config_dump(self):
        code, out = run_quietly(["config", "--dump"])
        self.assertEqual(code, EXIT_OK)
        self.assertEqual(PipelineConfig.from_dict(json.loads(out)), PipelineConfig())
        code, out = run_quietly(["config", "--dump", "--config", PIPELINE_CONFIG, "--k-max", "12"])
        dumped = json.loads(out)
        self.assertEqual((dumped["cluster_threshold"], dumped["k_max"]), (2.0, 12))

    def test_bad_config(self):
        config_file = self.write_json("bad_config.json", {"anneal": {"temperature": 3}})
        code, _ = run_quietly(["config", "--dump", "--config", config_file])
        self.assertEqual(code, EXIT_DATA)

    def test_aggregate_single_vehicle(self):
        save_report_log(vehicle_reports("mbt_platoon-1/1", 0, 0, range(0, 12, 2)), self.path("one.jsonl"))
        code, _ = run_quietly(["aggregate", self.path("one.jsonl"), self.path("one_tracks.json"),
                               "--trace", self.path("one_trace.csv")])
        self.assertEqual(code, EXIT_OK)
        with open(self.path("one_tracks.json"), encoding="utf-8") as f:
            data = json.load(f)
        self.assertEqual(len(data["tracks"]), 1)
        self.assertEqual(data["tracks"][0]["report_ids"], list(range(6)))
        self.assertTrue(os.path.exists(self.path("one_trace_k_curve.csv")))

    def test_aggregate_non_convergence(self):
        reports = vehicle_reports("a", 0, 0, [0, 2, 4]) + vehicle_reports("b", 0, 500, [0, 2, 4])
        save_report_log(reports, self.path("two.jsonl"))
        config_file = self.write_json("one_sweep.json", {"anneal": {"max_sweeps": 1}})
        code, _ = run_quietly(["aggregate", self.path("two.jsonl"), self.path("two_tracks.json"),
                               "--config", config_file])
        self.assertEqual(code, EXIT_NONCONVERGENCE)

    def test_aggregate_malformed_log(self):
        with open(self.path("bad.jsonl"), "w", encoding="utf-8") as f:
            f.write("{\"from\": \"obs-1\"}\n")
        code, _ = run_quietly(["aggregate", self.path("bad.jsonl"), self.path("bad_tracks.json")])
        self.assertEqual(code, EXIT_DATA)

    def test_classify(self):
        tree = ClassificationTree.default()
        tracks = [Track.from_reports(f"T{k}", vehicle_reports(None, 0, 100.0 * k, range(0, 21, 2),
                                                             "apc_tracked"), tree)
                  for k in range(1, 5)]
        tracks_file = self.write_json("apc_tracks.json", {"tracks": [t.to_dict() for t in tracks]})
        code, _ = run_quietly(["classify", tracks_file, self.path("apc_picture.json"),
                               "--decision-log", self.path("apc_decisions.json")])
        self.assertEqual(code, EXIT_OK)
        with open(self.path("apc_picture.json"), encoding="utf-8") as f:
            picture = json.load(f)
        self.assertEqual(len(picture["units"]), 1)
        candidate = picture["units"][0]["candidates"][0]
        self.assertEqual((candidate["unit_type"], candidate["classification_conflict"]),
                         ("mech_platoon", 0.0))
        with open(self.path("apc_decisions.json"), encoding="utf-8") as f:
            self.assertEqual(json.load(f)["generated"], 15)

    def test_classify_empty_tracks_file(self):
        open(self.path("empty_tracks.json"), "w").close()
        code, _ = run_quietly(["classify", self.path("empty_tracks.json"), self.path("empty_picture.json")])
        self.assertEqual(code, EXIT_OK)
        with open(self.path("empty_picture.json"), encoding="utf-8") as f:
            self.assertEqual(json.load(f), {"tracks": [], "units": [], "unaggregated": []})

    def test_score_without_names(self):
        reports = vehicle_reports(None, 0, 0, range(0, 10, 2))
        save_report_log(reports, self.path("anonymous.jsonl"))
        track = Track.from_reports("T1", reports, ClassificationTree.default())
        SituationWriter(SituationPicture((track,), (), ("T1",))).write_picture(self.path("anonymous.json"))
        code, _ = run_quietly(["score", self.path("anonymous.json"), self.path("anonymous.jsonl")])
        self.assertEqual(code, EXIT_DATA)

    def test_run_is_reproducible(self):
        outputs = []
        for name in ("run_a", "run_b"):
            code, _ = run_quietly(["run", TWO_PLATOONS, self.path(name), "--trace",
                                   "--config", PIPELINE_CONFIG])
            self.assertEqual(code, EXIT_OK)
            files = {}
            for filename in sorted(os.listdir(self.path(name))):
                with open(os.path.join(self.path(name), filename), "rb") as f:
                    files[filename] = f.read()
            outputs.append(files)
        self.assertEqual(outputs[0], outputs[1])
        self.assertEqual(sorted(outputs[0]), ["decisions.json", "picture.json", "reports.jsonl",
                                              "score.json", "trace.csv", "trace_k_curve.csv",
                                              "tracks.json", "truth.json"])
        metrics = json.loads(outputs[0]["score.json"])
        self.assertEqual(metrics["purity"], 1.0)

        code, out = run_quietly(["score", os.path.join(self.path("run_a"), "picture.json"),
                                 os.path.join(self.path("run_a"), "reports.jsonl")])
        self.assertEqual(code, EXIT_OK)
        self.assertEqual(json.loads(out), metrics)


if __name__ == "__main__":
    unittest.main()
