'''
Stage-1 harness: per-class and weighted evaluation of intent-class predictions, and the
text-to-text baseline path (instruction prompt, chat completion, output-to-class matching).
'''
import re
import logging
from dataclasses import dataclass
from typing import Dict, List

import numpy as np
import pandas as pd
from sklearn.metrics import confusion_matrix, precision_recall_fscore_support

from chatintent.errors import MetricError
from chatintent.session_model import CLASS_ORDER, N_CLASSES, flatten_session
from chatintent.llm_gateway import ChatRequest

log = logging.getLogger(__name__)

CLASSIFICATION_INSTRUCTION = ("Predict the customer's intent behind reaching out to a live chat agent, "
                              "after viewing a sequence of the following pages:")

# Matching lexicon in canonical class order; multi-word phrases score 2, single words 1
DEFAULT_LEXICON = {
    "INS": ["install", "installation"],
    "AVL": ["availability", "available", "in stock", "stock"],
    "PRI": ["price match", "price", "pricing"],
    "WTY": ["warranty", "repair"],
    "RET": ["return", "refund"],
}

UNMATCHED = -1


@dataclass(frozen = True)
class ClassReport:
    precision: Dict[str, float]
    recall: Dict[str, float]
    f1: Dict[str, float]
    support: Dict[str, int]
    weighted_precision: float
    weighted_recall: float
    weighted_f1: float
    accuracy: float
    confusion: List[List[int]]
    unmatched: List[int]
    n_items: int

    @property
    def n_unmatched(self):
        return int(sum(self.unmatched))

    def to_dict(self):
        return {"n_items": self.n_items,
                "accuracy": self.accuracy,
                "weighted_precision": self.weighted_precision,
                "weighted_recall": self.weighted_recall,
                "weighted_f1": self.weighted_f1,
                "precision": dict(self.precision),
                "recall": dict(self.recall),
                "f1": dict(self.f1),
                "support": dict(self.support),
                "confusion": [list(row) for row in self.confusion],
                "unmatched": list(self.unmatched)}

    @classmethod
    def from_dict(cls, data):
        return cls(precision = dict(data["precision"]), recall = dict(data["recall"]), f1 = dict(data["f1"]),
                   support = dict(data["support"]), weighted_precision = data["weighted_precision"],
                   weighted_recall = data["weighted_recall"], weighted_f1 = data["weighted_f1"],
                   accuracy = data["accuracy"], confusion = data["confusion"], unmatched = data["unmatched"],
                   n_items = data["n_items"])


def eval_report(preds, golds):
    '''
    Per-class and gold-support-weighted precision/recall of predictions.
    Params:
     - preds: list of IntentClass or None (unmatched text output)
     - golds: list of IntentClass
    Unmatched predictions never count toward a class's predicted total but do count as
    a miss against their gold class.
    '''
    if len(preds) != len(golds):
        raise MetricError("Error while computing class report: %d predictions vs %d gold labels" % (len(preds), len(golds)))
    if len(golds) == 0:
        raise MetricError("Error while computing class report: no items")
    y_true = np.asarray([g.index for g in golds])
    y_pred = np.asarray([UNMATCHED if p is None else p.index for p in preds])
    labels = list(range(N_CLASSES))
    precision, recall, f1, support = precision_recall_fscore_support(y_true, y_pred, labels = labels, average = None, zero_division = 0)
    w_precision, w_recall, w_f1, _ = precision_recall_fscore_support(y_true, y_pred, labels = labels, average = "weighted", zero_division = 0)
    full = confusion_matrix(y_true, y_pred, labels = labels + [UNMATCHED])
    codes = [c.value for c in CLASS_ORDER]
    return ClassReport(precision = dict(zip(codes, map(float, precision))),
                       recall = dict(zip(codes, map(float, recall))),
                       f1 = dict(zip(codes, map(float, f1))),
                       support = dict(zip(codes, map(int, support))),
                       weighted_precision = float(w_precision),
                       weighted_recall = float(w_recall),
                       weighted_f1 = float(w_f1),
                       accuracy = float(np.mean(y_true == y_pred)),
                       confusion = full[:N_CLASSES, :N_CLASSES].astype(int).tolist(),
                       unmatched = full[:N_CLASSES, N_CLASSES].astype(int).tolist(),
                       n_items = len(golds))


def class_report_markdown(reports):
    '''
    Markdown table with rows Metric x Model and columns All (weighted), the five classes
    and the unmatched count.
    Params:
     - reports: dict of model name -> ClassReport, in display order
    '''
    rows = []
    for metric, weighted_attr, per_class_attr in (("Precision", "weighted_precision", "precision"), ("Recall", "weighted_recall", "recall")):
        for model, report in reports.items():
            row = {"Metric": metric, "Model": model, "All": "%.4f" % getattr(report, weighted_attr)}
            for code, value in getattr(report, per_class_attr).items():
                row[code] = "%.4f" % value
            row["Unmatched"] = str(report.n_unmatched)
            rows.append(row)
    return pd.DataFrame(rows).to_markdown(index = False)


#################
# Text baseline #
#################

def build_classification_prompt(session):
    return CLASSIFICATION_INSTRUCTION + "\n" + flatten_session(session)


def _term_pattern(term):
    return re.compile(r"\b" + r"\s+".join(re.escape(w) for w in term.split()) + r"\b")


def match_text_to_class(text, lexicon = None):
    '''
    Map free text to an intent class by weighted keyword counts; None when nothing matches.
    Ties go to the earlier class in canonical order.
    Params:
     - text: model output
     - lexicon: optional dict of class code -> list of terms (defaults to DEFAULT_LEXICON)
    '''
    lexicon = DEFAULT_LEXICON if lexicon is None else lexicon
    lowered = text.lower()
    best, best_score = None, 0
    for intent_class in CLASS_ORDER:
        score = 0
        for term in lexicon.get(intent_class.value, []):
            weight = 2 if len(term.split()) > 1 else 1
            score += weight * len(_term_pattern(term.lower()).findall(lowered))
        if score > best_score:
            best, best_score = intent_class, score
    return best


class TextModelClassifier:
    '''
    Classify sessions with a text-to-text model reached through the chat gateway.
    '''

    def __init__(self, gateway, model, lexicon = None, max_tokens = 64, logger = None):
        self.gateway = gateway
        self.model = model
        self.lexicon = lexicon
        self.max_tokens = max_tokens
        self.log = logger or logging.getLogger(__name__ + ".TextModelClassifier")

    def classify(self, session):
        request = ChatRequest(model = self.model, messages = (("user", build_classification_prompt(session)),),
                              temperature = 0, max_tokens = self.max_tokens)
        reply = self.gateway.chat_complete(request)
        matched = match_text_to_class(reply, self.lexicon)
        if matched is None:
            self.log.warning("Output of `%s` for session `%s` matches no class: `%s`" % (self.model, session.user_id, reply.strip()[:120]))
        return matched

    def classify_all(self, sessions):
        return [self.classify(s) for s in sessions]


def classify_with_text_model(gateway, model, sessions, lexicon = None):
    return TextModelClassifier(gateway, model, lexicon).classify_all(sessions)
