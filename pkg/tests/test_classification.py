import os

import numpy as np
import pytest

from chatintent.classification import (
    ClassReport, TextModelClassifier, build_classification_prompt, class_report_markdown, classify_with_text_model, eval_report,
    match_text_to_class,
)
from chatintent.errors import MetricError
from chatintent.session_model import CLASS_ORDER

INS, AVL, PRI, WTY, RET = CLASS_ORDER


def brute_force(preds, golds):
    '''
    Direct per-class counts; weights are gold supports.
    '''
    precision, recall = {}, {}
    for c in CLASS_ORDER:
        predicted = sum(1 for p in preds if p is c)
        gold = sum(1 for g in golds if g is c)
        hit = sum(1 for p, g in zip(preds, golds) if p is c and g is c)
        precision[c.value] = hit / predicted if predicted else 0.0
        recall[c.value] = hit / gold if gold else 0.0
    n = len(golds)
    weights = {c.value: sum(1 for g in golds if g is c) / n for c in CLASS_ORDER}
    return (precision, recall,
            sum(weights[k] * precision[k] for k in weights),
            sum(weights[k] * recall[k] for k in weights))


class FakeGateway:

    def __init__(self, replies):
        self.replies = list(replies)
        self.requests = []

    def chat_complete(self, request):
        self.requests.append(request)
        return self.replies.pop(0)


class TestEvalReport:

    def test_matches_brute_force(self):
        rng = np.random.default_rng(13)
        for _ in range(1000):
            n = int(rng.integers(1, 30))
            golds = [CLASS_ORDER[i] for i in rng.integers(0, 5, size=n)]
            preds = [None if i == 5 else CLASS_ORDER[i] for i in rng.integers(0, 6, size=n)]
            report = eval_report(preds, golds)
            precision, recall, w_precision, w_recall = brute_force(preds, golds)
            assert report.precision == pytest.approx(precision)
            assert report.recall == pytest.approx(recall)
            assert report.weighted_precision == pytest.approx(w_precision)
            assert report.weighted_recall == pytest.approx(w_recall)
            assert sum(map(sum, report.confusion)) + report.n_unmatched == n

    def test_unmatched_counts_against_gold(self):
        report = eval_report([INS, None, None, AVL], [INS, INS, AVL, AVL])
        assert report.precision["INS"] == 1.0
        assert report.recall["INS"] == 0.5
        assert report.unmatched == [1, 1, 0, 0, 0]
        assert report.accuracy == 0.5

    def test_errors(self):
        with pytest.raises(MetricError):
            eval_report([], [])
        with pytest.raises(MetricError):
            eval_report([INS], [INS, AVL])

    def test_dict_round_trip_and_markdown(self):
        report = eval_report([INS, PRI, None], [INS, AVL, PRI])
        assert ClassReport.from_dict(report.to_dict()) == report
        table = class_report_markdown({"LongformerPlus": report, "gpt": report})
        header = table.splitlines()[0]
        for column in ("Metric", "Model", "All", "INS", "AVL", "PRI", "WTY", "RET", "Unmatched"):
            assert column in header
        assert len(table.splitlines()) == 2 + 4


class TestTextBaseline:

    def test_prompt_matches_golden(self, drill_session, fixture_dir):
        with open(os.path.join(fixture_dir, "prompts", "classification.txt"), "r", encoding="utf-8") as fh:
            golden = fh.read().rstrip("\n")
        assert build_classification_prompt(drill_session) == golden

    @pytest.mark.parametrize("text,expected", [
        ("The customer wants installation help.", INS),
        ("Is it in stock anywhere?", AVL),
        ("They want a price match; price is too high.", PRI),
        ("Warranty repair question", WTY),
        ("I want a refund", RET),
        ("Hello there", None),
        ("install or return", INS),
    ])
    def test_match_text_to_class(self, text, expected):
        assert match_text_to_class(text) is expected

    def test_custom_lexicon(self):
        assert match_text_to_class("broken thing", {"WTY": ["broken"]}) is WTY

    def test_classifier_uses_gateway(self, drill_session):
        gateway = FakeGateway(["Return/Refund", "no idea"])
        classifier = TextModelClassifier(gateway, "gpt-3.5-turbo-0125")
        assert classifier.classify_all([drill_session, drill_session]) == [RET, None]
        request = gateway.requests[0]
        assert request.temperature == 0
        assert request.messages == (("user", build_classification_prompt(drill_session)),)

    def test_classify_with_text_model(self, drill_session):
        gateway = FakeGateway(["Check product availability", "a WARRANTY question"])
        assert classify_with_text_model(gateway, "gpt-3.5-turbo-0125", [drill_session, drill_session], {"WTY": ["warranty"], "AVL": ["availability"]}) == [AVL, WTY]
        assert [r.model for r in gateway.requests] == ["gpt-3.5-turbo-0125"] * 2
