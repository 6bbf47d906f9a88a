'''
LLM-as-judge similarity of intent pairs, Similar@m aggregation and agreement statistics
between judge verdicts and human labels.
'''
import os, re, json, logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Tuple

import numpy as np
from sklearn.metrics import cohen_kappa_score, confusion_matrix

from chatintent.errors import ChatIntentError, MetricError
from chatintent.llm_gateway import ChatRequest

TEMPLATE_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), "templates")
DEFAULT_TEMPLATE = "judge_v1"
VERDICT_PATTERN = re.compile(r"^\W*(yes|no)\b", re.IGNORECASE)


@dataclass(frozen = True)
class JudgmentRecord:
    user_id: str
    candidate_rank: int
    verdict: int

    def __post_init__(self):
        if self.candidate_rank < 1:
            raise ValueError("candidate_rank must be at least 1, got %s" % (self.candidate_rank))
        if self.verdict not in (0, 1):
            raise ValueError("verdict must be 0 or 1, got %s" % (self.verdict))


@dataclass(frozen = True)
class AgreementStats:
    cohen_kappa: float
    precision: float
    recall: float
    n_pairs: int
    precision_defined: bool
    recall_defined: bool
    contingency: Tuple[int, int, int, int]

    def to_dict(self):
        tn, fp, fn, tp = self.contingency
        return {"cohen_kappa": self.cohen_kappa, "precision": self.precision, "recall": self.recall, "n_pairs": self.n_pairs,
                "precision_defined": self.precision_defined, "recall_defined": self.recall_defined,
                "contingency": {"tn": tn, "fp": fp, "fn": fn, "tp": tp}}


def load_judge_template(name = DEFAULT_TEMPLATE):
    fp_template = os.path.join(TEMPLATE_DIR, name + ".json")
    if not os.path.isfile(fp_template):
        raise ChatIntentError("Error reading judge template: Unable to find '%s'." % (fp_template))
    with open(fp_template, "r", encoding = "utf-8") as fh_template:
        return json.load(fh_template)


def parse_verdict(reply):
    '''
    1 for a reply starting with "yes", 0 for "no" (case-insensitive), else None.
    '''
    match = VERDICT_PATTERN.match(reply.strip())
    if match is None:
        return None
    return 1 if match.group(1).lower() == "yes" else 0


class IntentJudge:

    def __init__(self, gateway, model, template = None, max_in_flight = 1, max_tokens = 8, logger = None):
        '''
        Params:
         - gateway: object with chat_complete(ChatRequest) -> str
         - model: judge model name
         - template: judge template dict (defaults to the bundled judge_v1)
         - max_in_flight: number of pairs judged concurrently
        '''
        self.gateway = gateway
        self.model = model
        self.template = template or load_judge_template()
        self.max_in_flight = max_in_flight
        self.max_tokens = max_tokens
        self.log = logger or logging.getLogger(__name__ + ".IntentJudge")

    def build_messages(self, true_intent, candidate):
        pair = self.template["pair_template"]
        messages = [("system", self.template["system"])]
        for demo in self.template["demonstrations"]:
            messages.append(("user", pair.format(true_intent = demo["true_intent"], candidate = demo["candidate"])))
            messages.append(("assistant", demo["verdict"]))
        messages.append(("user", pair.format(true_intent = true_intent, candidate = candidate)))
        return messages

    def _ask(self, messages):
        return self.gateway.chat_complete(ChatRequest(model = self.model, messages = tuple(messages), temperature = 0, max_tokens = self.max_tokens))

    def judge_pair(self, true_intent, candidate):
        '''
        Binary similarity of (true intent, candidate); directional, true intent first.
        An unparseable reply is re-asked once, then scored 0.
        '''
        if not true_intent or not candidate:
            raise ValueError("Both intents must be non-empty")
        messages = self.build_messages(true_intent, candidate)
        reply = self._ask(messages)
        verdict = parse_verdict(reply)
        if verdict is None:
            messages += [("assistant", reply), ("user", self.template["reask"])]
            second = self._ask(messages)
            verdict = parse_verdict(second)
            if verdict is None:
                self.log.warning("Judge gave no Yes/No verdict (`%s`, then `%s`); scoring 0" % (reply.strip()[:80], second.strip()[:80]))
                verdict = 0
        return verdict

    def judge_candidates(self, pairs):
        '''
        Judge many pairs through the gateway, at most `max_in_flight` at once.
        Params:
         - pairs: iterable of (user_id, rank, true_intent, candidate)
        Returns JudgmentRecords sorted by (user_id, rank).
        '''
        pairs = list(pairs)
        with ThreadPoolExecutor(max_workers = self.max_in_flight) as pool:
            verdicts = list(pool.map(lambda p: self.judge_pair(p[2], p[3]), pairs))
        records = [JudgmentRecord(str(u), int(r), v) for (u, r, _, _), v in zip(pairs, verdicts)]
        self.log.debug("Judged %d pairs, %d similar." % (len(records), sum(r.verdict for r in records)))
        return sorted(records, key = lambda r: (r.user_id, r.candidate_rank))


###########
# Metrics #
###########

def similar_hits(records, m, users = None):
    '''
    (number of users with a similar verdict at rank <= m, number of users).
    Params:
     - users: optional explicit user list; users without records count as misses
    '''
    if m < 1:
        raise ValueError("m must be at least 1, got %s" % (m))
    user_set = set(users) if users is not None else set(r.user_id for r in records)
    if not user_set:
        raise MetricError("Error while computing Similar@%d: no users" % (m))
    hit_users = set(r.user_id for r in records if r.verdict == 1 and r.candidate_rank <= m and r.user_id in user_set)
    return len(hit_users), len(user_set)


def similar_at_m(records, m, users = None):
    '''
    Fraction of users with at least one similar candidate among their top-m.
    '''
    hits, total = similar_hits(records, m, users)
    return hits / total


def agreement_stats(judge, human):
    '''
    Agreement of judge verdicts with human labels, human labels taken as ground truth.
    precision = P(human=1 | judge=1), recall = P(judge=1 | human=1); an undefined ratio
    is reported as 0 with its flag cleared.
    '''
    judge = np.asarray(list(judge), dtype = int)
    human = np.asarray(list(human), dtype = int)
    if judge.shape != human.shape:
        raise MetricError("Error while computing agreement: %d judge vs %d human labels" % (judge.size, human.size))
    if judge.size == 0:
        raise MetricError("Error while computing agreement: no pairs")
    if not set(np.unique(np.concatenate([judge, human]))) <= {0, 1}:
        raise MetricError("Error while computing agreement: labels must be binary")
    tn, fp, fn, tp = (int(x) for x in confusion_matrix(human, judge, labels = [0, 1]).ravel())
    n = judge.size
    p_e = ((tp + fp) / n) * ((tp + fn) / n) + ((fn + tn) / n) * ((fp + tn) / n)
    if p_e >= 1.0:
        raise MetricError("Error while computing agreement: chance agreement is 1, kappa undefined")
    kappa = float(cohen_kappa_score(human, judge, labels = [0, 1]))
    precision_defined, recall_defined = (tp + fp) > 0, (tp + fn) > 0
    return AgreementStats(cohen_kappa = kappa,
                          precision = tp / (tp + fp) if precision_defined else 0.0,
                          recall = tp / (tp + fn) if recall_defined else 0.0,
                          n_pairs = n,
                          precision_defined = precision_defined,
                          recall_defined = recall_defined,
                          contingency = (tn, fp, fn, tp))
