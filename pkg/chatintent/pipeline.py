'''
Stage orchestration: synth -> train -> classify-eval -> generate -> judge -> report, plus
the position probe and the offline end-to-end run against the mock server.

Every stage reads its inputs from the run directory `<output_dir>/<run_id>/` (or from an
input override in `paths`), checks that they exist before doing any work, and writes its
artifacts atomically into the run directory.
'''
import os, json, logging, contextlib
from collections import OrderedDict

import pandas as pd

from chatintent.errors import ConfigError, PrerequisiteError, MetricError, CandidateParseError, CorpusFormatError, EncodingError
from chatintent.config import STAGES, PIPELINE_STAGES
from chatintent.corpus_io import CorpusIO, atomic_write_text, dump_jsonl
from chatintent.session_model import IntentClass, filter_min_pages, split_corpus, truncate_session
from chatintent.synth_corpus import generate_corpus, plant_position_probe
from chatintent.tokenizer import Vocab, RESERVED_TOKENS, build_vocab
from chatintent.longformer_plus import init_params, predict, load_checkpoint, save_checkpoint
from chatintent.training import Trainer
from chatintent.classification import ClassReport, TextModelClassifier, eval_report, class_report_markdown
from chatintent.generation import Variant, GenRequest, IntentGenerator
from chatintent.llm_gateway import GatewayClient
from chatintent.judge_metrics import IntentJudge, JudgmentRecord, load_judge_template, similar_hits, agreement_stats
from chatintent.mock_server import run_mock

ARTIFACTS = {
    "corpus": "corpus.jsonl",
    "vocab": "vocab.txt",
    "checkpoint": "model.ckpt",
    "history": "train_history.csv",
    "grid": "grid_search.csv",
    "classification": "classification.json",
    "predictions": "predictions.jsonl",
    "candidates": "candidates.jsonl",
    "judgments": "judgments.jsonl",
    "report_json": "report.json",
    "report_md": "report.md",
    "probe": "probe_comparison.json",
    "transcript": "mock_transcript.jsonl",
}

# artifacts that `paths` may redirect to an existing input file
INPUT_OVERRIDES = ("corpus", "vocab", "checkpoint")

PROBE_VARIANTS = ("LongformerPlus", "Longformer")


def dump_json(data):
    return json.dumps(data, indent = 2, ensure_ascii = False) + "\n"


def read_json(fp_in):
    with open(fp_in, "r", encoding = "utf-8") as fh_in:
        return json.load(fh_in, object_pairs_hook = OrderedDict)


class Pipeline:

    def __init__(self, config, base_dir = ".", gateway_factory = GatewayClient, logger = None):
        '''
        Params:
         - config: RunConfig
         - base_dir: directory relative config paths resolve against
         - gateway_factory: callable GatewayConfig -> gateway client (context manager)
        '''
        self.config = config
        self.base_dir = os.path.abspath(base_dir)
        self.gateway_factory = gateway_factory
        self.log = logger or logging.getLogger(__name__ + ".Pipeline")
        self.io = CorpusIO()
        self.run_dir = self.resolve(os.path.join(config.paths.output_dir, config.run_id))
        # page lengths depend only on word counts, so truncation works without a trained vocabulary
        self._length_vocab = Vocab(RESERVED_TOKENS)

    ###############
    # Paths       #
    ###############

    def resolve(self, fp):
        return fp if os.path.isabs(fp) else os.path.normpath(os.path.join(self.base_dir, fp))

    def artifact(self, name):
        return os.path.join(self.run_dir, ARTIFACTS[name])

    def input_path(self, name):
        override = getattr(self.config.paths, name) if name in INPUT_OVERRIDES else None
        return self.resolve(override) if override else self.artifact(name)

    def require(self, stage, *fps):
        missing = [fp for fp in fps if not os.path.isfile(fp)]
        if missing:
            raise PrerequisiteError("Error while checking prerequisites of stage `%s`: missing %s" % (stage, ", ".join("`%s`" % fp for fp in missing)))

    def load_split_corpus(self, fp_corpus):
        '''
        Load a corpus and split it with the run seed when the file carries no split tags.
        '''
        corpus = self.io.load_corpus(fp_corpus)
        if not corpus.has_splits:
            self.log.info("Corpus `%s` has no split tags; splitting with seed %d." % (fp_corpus, self.config.seed))
            corpus = split_corpus(corpus, self.config.split_ratios, self.config.seed)
        return corpus

    def truncate(self, session, max_pages, max_attr_tokens, max_tokens, vocab = None):
        try:
            return truncate_session(session, max_pages, max_attr_tokens, max_tokens, vocab or self._length_vocab)
        except ValueError as err:
            raise EncodingError(str(err))

    def test_items(self, corpus):
        items = sorted(corpus.subset("test"), key = lambda item: item.user_id)
        if not items:
            raise MetricError("Error while selecting test sessions: the test split is empty")
        return items

    ##########
    # Stages #
    ##########

    def synth(self):
        spec = self.config.gen_spec
        corpus = filter_min_pages(generate_corpus(spec), spec.min_pages)
        corpus = split_corpus(corpus, self.config.split_ratios, self.config.seed)
        self.io.save_corpus(corpus, self.artifact("corpus"))
        self.log.info("Wrote %d sessions (%d train, %d val, %d test) to `%s`." %
          (len(corpus), len(corpus.subset("train")), len(corpus.subset("val")), len(corpus.subset("test")), self.artifact("corpus")))

    def train(self):
        fp_corpus = self.input_path("corpus")
        self.require("train", fp_corpus)
        corpus = self.load_split_corpus(fp_corpus)
        vocab = build_vocab(corpus, self.config.vocab_min_freq)
        vocab.save(self.artifact("vocab"))
        model_config = self.config.model_config_for(len(vocab))
        trainer = Trainer()
        if self.config.grid:
            result = trainer.grid_search(model_config, self.config.train, self.config.grid, corpus, vocab)
            params, model_config = result.best_params, result.best_config
            atomic_write_text(self.artifact("grid"), result.table.to_csv(index = False))
        else:
            params, history = trainer.train(init_params(model_config), model_config, self.config.train, corpus, vocab)
            atomic_write_text(self.artifact("history"), pd.DataFrame(history).to_csv(index = False))
        save_checkpoint(params, model_config, self.artifact("checkpoint"))
        self.log.info("Wrote checkpoint `%s`." % (self.artifact("checkpoint")))

    def classify_eval(self):
        fp_corpus, fp_vocab, fp_checkpoint = self.input_path("corpus"), self.input_path("vocab"), self.input_path("checkpoint")
        self.require("classify-eval", fp_corpus, fp_vocab, fp_checkpoint)
        corpus = self.load_split_corpus(fp_corpus)
        vocab = Vocab.load(fp_vocab)
        params, model_config = load_checkpoint(fp_checkpoint)
        if model_config.vocab_size != len(vocab):
            raise PrerequisiteError("Error while loading model: checkpoint expects %d tokens, vocabulary `%s` has %d" % (model_config.vocab_size, fp_vocab, len(vocab)))
        items = self.test_items(corpus)
        golds = [item.intent_class for item in items]
        preds = [predict(params, model_config, item.session, vocab)[0] for item in items]

        reports = OrderedDict()
        reports[model_config.variant] = eval_report(preds, golds)
        if self.config.baseline:
            sessions = [self.truncate(item.session, model_config.max_pages, model_config.max_attr_tokens, model_config.max_tokens, vocab) for item in items]
            for gateway_config in self.config.baseline:
                with self.gateway_factory(gateway_config) as gateway:
                    classifier = TextModelClassifier(gateway, gateway_config.model, self.config.lexicon)
                    reports[gateway_config.model] = eval_report(classifier.classify_all(sessions), golds)

        rows = [{"user_id": item.user_id, "gold": item.intent_class.value, "predicted": pred.value} for item, pred in zip(items, preds)]
        atomic_write_text(self.artifact("predictions"), dump_jsonl(rows))
        atomic_write_text(self.artifact("classification"), dump_json({"models": [{"name": name, "report": report.to_dict()} for name, report in reports.items()]}))
        for name, report in reports.items():
            self.log.info("%s: weighted precision %.4f, weighted recall %.4f on %d test sessions." % (name, report.weighted_precision, report.weighted_recall, report.n_items))

    def _predicted_classes(self, items):
        fp_predictions = self.artifact("predictions")
        if os.path.isfile(fp_predictions):
            return {row["user_id"]: IntentClass.from_code(row["predicted"]) for row in self.io.read_jsonl(fp_predictions)}
        self.log.info("No predictions from classify-eval; predicting with the checkpoint.")
        vocab = Vocab.load(self.input_path("vocab"))
        params, model_config = load_checkpoint(self.input_path("checkpoint"))
        return {item.user_id: predict(params, model_config, item.session, vocab)[0] for item in items}

    def generate(self):
        variants = self.config.selected_variants()
        fp_corpus = self.input_path("corpus")
        needed = [fp_corpus]
        if Variant.USE_PREDICTED in variants and not os.path.isfile(self.artifact("predictions")):
            needed += [self.input_path("vocab"), self.input_path("checkpoint")]
        self.require("generate", *needed)
        corpus = self.load_split_corpus(fp_corpus)
        items = self.test_items(corpus)
        predicted = self._predicted_classes(items) if Variant.USE_PREDICTED in variants else {}

        limits = self.config.input_limits()
        rows = []
        generator_config = self.config.generator
        with self.gateway_factory(generator_config) as gateway:
            generator = IntentGenerator(gateway, generator_config.model, generator_config.max_tokens)
            for variant in variants:
                for item in items:
                    session = self.truncate(item.session, *limits)
                    if variant is Variant.USE_PREDICTED:
                        if item.user_id not in predicted:
                            raise PrerequisiteError("Error while generating: no prediction for user `%s`" % (item.user_id))
                        conditioning = predicted[item.user_id]
                    elif variant is Variant.USE_GROUND_TRUTH:
                        conditioning = item.intent_class
                    else:
                        conditioning = None
                    request = GenRequest(session, variant, conditioning, self.config.M, self.config.seed)
                    try:
                        candidates = list(generator.generate(request))
                    except CandidateParseError as err:
                        self.log.warning("User `%s` (%s) keeps zero candidates: %s" % (item.user_id, variant.value, str(err)))
                        candidates = []
                    rows.append({"user_id": item.user_id, "variant": variant.value, "candidates": candidates})
                self.log.info("Generated candidates for %d users (%s)." % (len(items), variant.value))
        self.io.save_candidates(rows, self.artifact("candidates"))

    def judge(self):
        fp_corpus, fp_candidates = self.input_path("corpus"), self.artifact("candidates")
        self.require("judge", fp_corpus, fp_candidates)
        intents = {item.user_id: item.intent for item in self.io.load_corpus(fp_corpus)}
        rows = self.io.load_candidates(fp_candidates)
        template = load_judge_template(self.config.judge_template)
        judged = OrderedDict()
        judge_config = self.config.judge
        with self.gateway_factory(judge_config) as gateway:
            judge = IntentJudge(gateway, judge_config.model, template, judge_config.max_in_flight, judge_config.max_tokens)
            for variant in self.config.selected_variants():
                pairs = []
                for row in rows:
                    if row["variant"] != variant.value:
                        continue
                    if row["user_id"] not in intents:
                        raise CorpusFormatError("Error while judging: user `%s` of `%s` is not in the corpus" % (row["user_id"], fp_candidates))
                    for rank, candidate in enumerate(row["candidates"], start = 1):
                        pairs.append((row["user_id"], rank, intents[row["user_id"]], candidate))
                judged[variant.value] = judge.judge_candidates(pairs)
                self.log.info("Judged %d pairs (%s)." % (len(pairs), variant.value))
        self.io.save_judgments(judged, self.artifact("judgments"))

    def probe(self):
        '''
        Train both model variants on the key-versus-value probe corpus with identical seeds
        and record their test metrics side by side.
        '''
        spec = self.config.gen_spec.model_copy(update = {"n_sessions": self.config.probe_sessions})
        corpus = split_corpus(plant_position_probe(spec), self.config.split_ratios, self.config.seed)
        vocab = build_vocab(corpus, self.config.vocab_min_freq)
        trainer = Trainer()
        models = OrderedDict()
        for variant in PROBE_VARIANTS:
            model_config = self.config.model_config_for(len(vocab)).model_copy(update = {"variant": variant})
            params, history = trainer.train(init_params(model_config), model_config, self.config.train, corpus, vocab)
            report = trainer.evaluate(params, model_config, trainer.encode_items(corpus.subset("test"), model_config, vocab))
            models[variant] = {"test_accuracy": report.accuracy,
                               "test_weighted_precision": report.weighted_precision,
                               "test_weighted_recall": report.weighted_recall,
                               "epochs_run": len(history)}
            self.log.info("Probe %s: test accuracy %.4f." % (variant, report.accuracy))
        atomic_write_text(self.artifact("probe"), dump_json({"n_sessions": len(corpus), "models": models}))

    ##########
    # Report #
    ##########

    def _generation_section(self, fp_corpus, fp_judgments):
        users = [item.user_id for item in self.test_items(self.load_split_corpus(fp_corpus))]
        by_variant = OrderedDict()
        for row in self.io.load_judgments(fp_judgments):
            by_variant.setdefault(row["variant"], []).append(JudgmentRecord(row["user_id"], int(row["rank"]), int(row["verdict"])))
        empty_users = {}
        if os.path.isfile(self.artifact("candidates")):
            for row in self.io.load_candidates(self.artifact("candidates")):
                if not row["candidates"]:
                    empty_users[row["variant"]] = empty_users.get(row["variant"], 0) + 1
        section = OrderedDict()
        for variant in self.config.selected_variants():
            if variant.value not in by_variant:
                continue
            scores = OrderedDict()
            for m in self.config.report_m:
                hits, total = similar_hits(by_variant[variant.value], m, users)
                scores["similar_at_%d" % (m)] = {"hits": hits, "users": total, "value": hits / total}
            section[variant.value] = {"users_without_candidates": empty_users.get(variant.value, 0), "scores": scores}
        return section, by_variant

    def _agreement_section(self, by_variant):
        labels = self.io.read_human_labels(self.resolve(self.config.paths.human_labels))
        verdicts = {}
        for variant, records in by_variant.items():
            for rec in records:
                verdicts["%s/%s/%d" % (variant, rec.user_id, rec.candidate_rank)] = rec.verdict
        shared = sorted(set(labels) & set(verdicts))
        if not shared:
            raise MetricError("Error while computing agreement: no human label matches a judged pair")
        if len(shared) < len(labels):
            self.log.warning("%d of %d human labels have no judged pair and are ignored." % (len(labels) - len(shared), len(labels)))
        return agreement_stats([verdicts[p] for p in shared], [labels[p] for p in shared]).to_dict()

    def report(self):
        fp_classification = self.artifact("classification")
        self.require("report", fp_classification)
        fp_corpus, fp_judgments = self.input_path("corpus"), self.artifact("judgments")
        if self.config.paths.human_labels:
            self.require("report", fp_judgments, self.resolve(self.config.paths.human_labels))

        report = OrderedDict()
        report["run_id"] = self.config.run_id
        report["classification"] = read_json(fp_classification)["models"]
        report["generation"] = None
        report["agreement"] = None
        if os.path.isfile(fp_judgments):
            self.require("report", fp_corpus)
            report["generation"], by_variant = self._generation_section(fp_corpus, fp_judgments)
            if self.config.paths.human_labels:
                report["agreement"] = self._agreement_section(by_variant)
        report["probe"] = read_json(self.artifact("probe")) if os.path.isfile(self.artifact("probe")) else None

        atomic_write_text(self.artifact("report_json"), dump_json(report))
        atomic_write_text(self.artifact("report_md"), report_markdown(report))
        self.log.info("Wrote report `%s`." % (self.artifact("report_json")))
        return report

    #######
    # Run #
    #######

    def run(self, stages):
        '''
        Run the named stages in the given order.
        '''
        unknown = [s for s in stages if s not in STAGES]
        if unknown:
            raise ConfigError("Error while selecting stages: unknown stage(s) %s; expected %s" % (unknown, list(STAGES)))
        methods = {"synth": self.synth, "train": self.train, "classify-eval": self.classify_eval, "generate": self.generate,
                   "judge": self.judge, "report": self.report, "probe": self.probe}
        for stage in stages:
            self.log.info("Stage `%s` (run `%s`)" % (stage, self.config.run_id))
            try:
                methods[stage]()
            except Exception:
                self.log.error("Stage `%s` failed." % (stage))
                raise

    def e2e(self, record_golden = False):
        '''
        Run every pipeline stage and compare the JSON report with the golden report.
        A missing golden file is a prerequisite error unless `record_golden` is set, in
        which case the produced report is written to the golden path instead of compared.
        '''
        if not self.config.paths.golden_report:
            raise ConfigError("Error while running e2e: `paths.golden_report` is not set")
        fp_golden = self.resolve(self.config.paths.golden_report)
        if not record_golden:
            self.require("e2e", fp_golden)
        self.run(PIPELINE_STAGES)
        with open(self.artifact("report_json"), "rb") as fh_report:
            produced = fh_report.read()
        if record_golden:
            atomic_write_text(fp_golden, produced.decode("utf-8"))
            self.log.info("Recorded golden report `%s`." % (fp_golden))
            return
        with open(fp_golden, "rb") as fh_golden:
            expected = fh_golden.read()
        if produced != expected:
            raise MetricError("Error while comparing reports: `%s` differs from golden `%s`" % (self.artifact("report_json"), fp_golden))
        self.log.info("Report matches golden `%s`." % (fp_golden))


def report_markdown(report):
    '''
    Markdown rendering of a report dict as written by Pipeline.report().
    '''
    parts = ["# Run report `%s`" % (report["run_id"]), "", "## Intent classification", ""]
    reports = OrderedDict((entry["name"], ClassReport.from_dict(entry["report"])) for entry in report["classification"])
    parts += [class_report_markdown(reports), ""]
    if report["generation"]:
        rows = []
        for variant, entry in report["generation"].items():
            row = {"Variant": variant}
            for key, score in entry["scores"].items():
                row[key.replace("similar_at_", "Similar@")] = "%.4f (%d/%d)" % (score["value"], score["hits"], score["users"])
            row["Users without candidates"] = entry["users_without_candidates"]
            rows.append(row)
        parts += ["## Intent generation", "", pd.DataFrame(rows).to_markdown(index = False), ""]
    if report["agreement"]:
        agreement = report["agreement"]
        table = pd.DataFrame([{"Pairs": agreement["n_pairs"], "Cohen's kappa": "%.4f" % agreement["cohen_kappa"],
                               "Precision": "%.4f" % agreement["precision"] if agreement["precision_defined"] else "undefined",
                               "Recall": "%.4f" % agreement["recall"] if agreement["recall_defined"] else "undefined"}])
        parts += ["## Judge agreement with human labels", "", table.to_markdown(index = False), ""]
    if report["probe"]:
        rows = [{"Model": name, "Test accuracy": "%.4f" % m["test_accuracy"], "Weighted precision": "%.4f" % m["test_weighted_precision"],
                 "Weighted recall": "%.4f" % m["test_weighted_recall"], "Epochs": m["epochs_run"]} for name, m in report["probe"]["models"].items()]
        parts += ["## Key-versus-value probe (%d sessions)" % (report["probe"]["n_sessions"]), "", pd.DataFrame(rows).to_markdown(index = False), ""]
    return "\n".join(parts)


@contextlib.contextmanager
def mocked_gateways(config, base_dir, fp_fixture = None):
    '''
    Boot the mock chat server on a free port and yield (config pointed at it, server).
    The transcript goes to the run directory.
    '''
    fp_fixture = fp_fixture or config.paths.fixtures
    if not fp_fixture:
        raise ConfigError("Error while starting mock server: no fixture given and `paths.fixtures` is not set")
    pipeline = Pipeline(config, base_dir)
    fp_fixture = pipeline.resolve(fp_fixture)
    pipeline.require("mock", fp_fixture)
    fp_transcript = pipeline.artifact("transcript")
    os.makedirs(pipeline.run_dir, exist_ok = True)
    if os.path.exists(fp_transcript):
        os.remove(fp_transcript)
    with run_mock(fp_fixture, transcript_path = fp_transcript) as server:
        yield config.with_endpoint(server.endpoint), server


def run_pipeline(config, stages, base_dir = "."):
    Pipeline(config, base_dir).run(stages)


def run_e2e(config, base_dir = ".", fp_fixture = None, record_golden = False):
    '''
    Offline end-to-end run: mock server, every stage, golden report comparison (or recording).
    '''
    with mocked_gateways(config, base_dir, fp_fixture) as (mocked_config, server):
        Pipeline(mocked_config, base_dir).e2e(record_golden)
        if server.remaining():
            logging.getLogger(__name__).warning("%d scripted mock replies were not consumed." % (server.remaining()))
