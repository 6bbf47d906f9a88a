import os
import json

import pytest

from chatintent.classification import eval_report
from chatintent.config import RunConfig
from chatintent.corpus_io import CorpusIO
from chatintent.errors import ConfigError, PrerequisiteError
from chatintent.judge_metrics import JudgmentRecord
from chatintent.pipeline import Pipeline, dump_json
from chatintent.scripts.chatintent_run import main, parse_args

GATEWAY = {"endpoint": "http://127.0.0.1:9/v1", "model": "gpt-4-0125-preview", "api_key_env": None, "max_retries": 0}

# (Similar@1 hits, Similar@5 hits) over the three test users, as scripted in the e2e fixture
E2E_HITS = {"UsePredicted": (1, 2), "UseGroundTruth": (2, 3), "UseAll": (0, 1), "UseNone": (0, 1)}
SHIPPED_GOLDEN = os.path.join(os.path.dirname(os.path.abspath(__file__)), os.pardir, "fixtures", "e2e", "golden_report.json")


def small_config(tmp_path, **overrides):
    raw = {"run_id": "unit",
           "paths": {"output_dir": str(tmp_path / "runs")},
           "gen_spec": {"n_sessions": 30, "page_count_mean": 8.0, "page_count_std": 3.0, "page_count_cap": 16, "min_pages": 5, "seed": 7},
           "model": {"d_model": 16, "max_tokens": 256, "max_pages": 16, "max_attr_tokens": 8, "layers": 1, "heads": 2, "window": 16, "dropout": 0.0},
           "generator": GATEWAY, "judge": GATEWAY, "seed": 7}
    raw.update(overrides)
    return RunConfig.model_validate(raw)


def read_report(tmp_path, run_id):
    with open(tmp_path / "runs" / run_id / "report.json", "r", encoding="utf-8") as fh:
        return json.load(fh)


class TestStages:

    def test_synth_is_byte_stable(self, tmp_path):
        first = Pipeline(small_config(tmp_path, run_id="a"))
        second = Pipeline(small_config(tmp_path, run_id="b"))
        first.synth()
        second.synth()
        with open(first.artifact("corpus"), "rb") as fh_a, open(second.artifact("corpus"), "rb") as fh_b:
            assert fh_a.read() == fh_b.read()
        corpus = CorpusIO().load_corpus(first.artifact("corpus"))
        assert corpus.has_splits
        assert len(corpus.subset("test")) == 3

    def test_unknown_stage(self, tmp_path):
        with pytest.raises(ConfigError):
            Pipeline(small_config(tmp_path)).run(["synth", "deploy"])

    def test_train_needs_corpus(self, tmp_path):
        with pytest.raises(PrerequisiteError) as err:
            Pipeline(small_config(tmp_path)).run(["train"])
        assert err.value.exit_code == 3

    def test_generate_without_model_sends_nothing(self, tmp_path, mock_server):
        server = mock_server([{"match": None, "reply": "1. Q", "status": 200}])
        config = small_config(tmp_path, variants=["UsePredicted"]).with_endpoint(server.endpoint)
        pipeline = Pipeline(config)
        pipeline.synth()
        with pytest.raises(PrerequisiteError):
            pipeline.generate()
        assert server.transcript == []
        assert server.remaining() == 1

    def test_generate_ground_truth_needs_no_model(self, tmp_path, mock_server):
        server = mock_server([{"match": None, "reply": "1. Is it in stock?\n2. Can I return it?", "status": 200}] * 3)
        config = small_config(tmp_path, variants=["UseGroundTruth"], M=2).with_endpoint(server.endpoint)
        pipeline = Pipeline(config)
        pipeline.synth()
        pipeline.generate()
        rows = CorpusIO().load_candidates(pipeline.artifact("candidates"))
        assert [row["variant"] for row in rows] == ["UseGroundTruth"] * 3
        assert [row["user_id"] for row in rows] == sorted(row["user_id"] for row in rows)
        assert all(row["candidates"] == ["Is it in stock?", "Can I return it?"] for row in rows)


class TestReport:

    def write_artifacts(self, pipeline):
        '''
        Hand-made classification and judgments over the synthesized test split.
        '''
        pipeline.synth()
        corpus_io = CorpusIO()
        items = sorted(corpus_io.load_corpus(pipeline.artifact("corpus")).subset("test"), key=lambda item: item.user_id)
        golds = [item.intent_class for item in items]
        report = eval_report(golds, golds)
        with open(pipeline.artifact("classification"), "w", encoding="utf-8") as fh:
            fh.write(dump_json({"models": [{"name": "LongformerPlus", "report": report.to_dict()}]}))
        users = [item.user_id for item in items]
        judged = {"UseAll": [JudgmentRecord(users[0], 1, 1), JudgmentRecord(users[0], 2, 0),
                             JudgmentRecord(users[1], 1, 0), JudgmentRecord(users[1], 2, 1)]}
        corpus_io.save_judgments(judged, pipeline.artifact("judgments"))
        return users

    def test_report_from_artifacts(self, tmp_path):
        fp_labels = tmp_path / "labels.csv"
        pipeline = Pipeline(small_config(tmp_path, paths={"output_dir": str(tmp_path / "runs"), "human_labels": str(fp_labels)}))
        users = self.write_artifacts(pipeline)
        fp_labels.write_text("pair_id,human_label\n"
                             "UseAll/%s/1,1\nUseAll/%s/2,1\nUseAll/%s/1,0\nUseAll/%s/2,0\nUseAll/nobody/1,1\n" % (users[0], users[0], users[1], users[1]),
                             encoding="utf-8")
        report = pipeline.report()
        assert list(report["generation"]) == ["UseAll"]
        scores = report["generation"]["UseAll"]["scores"]
        assert scores["similar_at_1"] == {"hits": 1, "users": 3, "value": pytest.approx(1 / 3)}
        assert scores["similar_at_5"]["hits"] == 2
        agreement = report["agreement"]
        assert agreement["n_pairs"] == 4
        assert agreement["contingency"] == {"tn": 1, "fp": 1, "fn": 1, "tp": 1}
        assert agreement["cohen_kappa"] == pytest.approx(0.0)
        assert report["probe"] is None
        with open(pipeline.artifact("report_md"), "r", encoding="utf-8") as fh:
            markdown = fh.read()
        assert "Similar@1" in markdown and "Cohen's kappa" in markdown
        assert read_report(tmp_path, "unit")["run_id"] == "unit"

    def test_report_needs_classification(self, tmp_path):
        with pytest.raises(PrerequisiteError):
            Pipeline(small_config(tmp_path)).report()

    def test_classification_only_report(self, tmp_path):
        pipeline = Pipeline(small_config(tmp_path))
        self.write_artifacts(pipeline)
        os.remove(pipeline.artifact("judgments"))
        report = pipeline.report()
        assert report["generation"] is None and report["agreement"] is None
        assert report["classification"][0]["report"]["accuracy"] == 1.0


class TestCommandLine:

    def test_config_error_exit_code(self, tmp_path):
        assert main(parse_args(["synth", "--config", str(tmp_path / "absent.json")])) == 2

    def test_prerequisite_exit_code(self, e2e_config):
        assert main(parse_args(["classify-eval", "--config", e2e_config])) == 3

    def test_stage_selection(self):
        args = parse_args(["run", "--config", "c.json", "--stage", "synth", "--stage", "train"])
        assert (args.command, args.stage) == ("run", ["synth", "train"])
        with pytest.raises(SystemExit):
            parse_args(["run", "--config", "c.json", "--stage", "deploy"])

    def test_e2e_needs_golden(self, e2e_config, tmp_path):
        assert main(parse_args(["e2e", "--config", e2e_config])) == 3
        assert not os.path.exists(tmp_path / "golden_report.json")
        assert not os.path.exists(tmp_path / "runs" / "e2e" / "report.json")

    def test_e2e_is_reproducible(self, e2e_config, tmp_path):
        assert parse_args(["e2e", "--config", e2e_config]).record_golden is False
        assert main(parse_args(["e2e", "--config", e2e_config, "--record-golden"])) == 0
        assert os.path.isfile(tmp_path / "golden_report.json")
        assert main(parse_args(["e2e", "--config", e2e_config])) == 0

        report = read_report(tmp_path, "e2e")
        assert [entry["name"] for entry in report["classification"]] == ["LongformerPlus", "gpt-3.5-turbo-0125"]
        assert list(report["generation"]) == list(E2E_HITS)
        for variant, (at_1, at_5) in E2E_HITS.items():
            scores = report["generation"][variant]["scores"]
            assert (scores["similar_at_1"]["hits"], scores["similar_at_5"]["hits"]) == (at_1, at_5)
            assert scores["similar_at_1"]["users"] == 3
        with open(tmp_path / "runs" / "e2e" / "mock_transcript.jsonl", "r", encoding="utf-8") as fh:
            assert len(fh.readlines()) == 39

    @pytest.mark.skipif(not os.path.isfile(SHIPPED_GOLDEN), reason="fixtures/e2e/golden_report.json has not been recorded")
    def test_e2e_matches_shipped_golden(self, e2e_config, tmp_path):
        with open(e2e_config, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
        raw["paths"]["golden_report"] = SHIPPED_GOLDEN
        fp_config = tmp_path / "shipped.json"
        fp_config.write_text(json.dumps(raw), encoding="utf-8")
        with open(SHIPPED_GOLDEN, "rb") as fh:
            shipped = fh.read()
        assert main(parse_args(["e2e", "--config", str(fp_config)])) == 0
        with open(SHIPPED_GOLDEN, "rb") as fh:
            assert fh.read() == shipped

    def test_e2e_detects_drift(self, e2e_config, tmp_path):
        (tmp_path / "golden_report.json").write_text("{}\n", encoding="utf-8")
        assert main(parse_args(["e2e", "--config", e2e_config])) == 5
