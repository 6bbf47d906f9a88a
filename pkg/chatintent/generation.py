'''
Stage-2 prompt construction for the four conditioning variants and parsing of the
enumerated candidate list returned by the generator model.
'''
import re
import random
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Tuple

from chatintent.errors import CandidateParseError
from chatintent.session_model import CLASS_SET, IntentClass, Session, flatten_session
from chatintent.llm_gateway import ChatRequest

log = logging.getLogger(__name__)

GENERATION_TEMPLATE = ("A customer browsed the following pages---{flattened}---and reached out a chat agent for assistance. "
                       "{topic_sentence}Pretend to be this customer, and enumerate {M} questions (1., 2., ...) to ask the chat agent. "
                       "Don't say anything else.")
TOPIC_WITH_CLASS = "Possible topics are {classes}, but {name} is the most likely. "
TOPIC_ALL = "Possible topics are {classes}. "

CANDIDATE_LINE = re.compile(r"^\s*\d+\.\s*(.+)$", re.MULTILINE)


class Variant(Enum):
    USE_PREDICTED = "UsePredicted"
    USE_GROUND_TRUTH = "UseGroundTruth"
    USE_ALL = "UseAll"
    USE_NONE = "UseNone"

    @property
    def needs_class(self):
        return self in (Variant.USE_PREDICTED, Variant.USE_GROUND_TRUTH)

    @classmethod
    def from_name(cls, name):
        try:
            return cls(name)
        except ValueError:
            raise ValueError("Unknown generation variant `%s`; expected one of %s" % (name, [v.value for v in cls]))


VARIANT_ORDER = (Variant.USE_PREDICTED, Variant.USE_GROUND_TRUTH, Variant.USE_ALL, Variant.USE_NONE)


@dataclass(frozen = True)
class GenRequest:
    session: Session
    variant: Variant
    conditioning_class: Optional[IntentClass]
    M: int = 5
    shuffle_seed: int = 0

    def __post_init__(self):
        if self.M < 1:
            raise ValueError("M must be at least 1, got %s" % (self.M))
        if self.variant.needs_class and self.conditioning_class is None:
            raise ValueError("Variant %s needs a conditioning class" % (self.variant.value))
        if not self.variant.needs_class and self.conditioning_class is not None:
            raise ValueError("Variant %s takes no conditioning class" % (self.variant.value))


@dataclass(frozen = True)
class CandidateList:
    candidates: Tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "candidates", tuple(self.candidates))
        if any(not c for c in self.candidates):
            raise ValueError("Candidate intents must be non-empty strings")

    def __len__(self):
        return len(self.candidates)

    def __iter__(self):
        return iter(self.candidates)


def shuffle_class_names(seed):
    '''
    Seeded Fisher-Yates permutation of the five class display names.
    '''
    rng = random.Random(seed)
    names = list(CLASS_SET)
    for i in range(len(names) - 1, 0, -1):
        j = rng.randint(0, i)
        names[i], names[j] = names[j], names[i]
    return names


def build_generation_prompt(req):
    '''
    Render the generation instruction for one request.
    '''
    classes = ", ".join(shuffle_class_names(req.shuffle_seed))
    if req.variant.needs_class:
        topic_sentence = TOPIC_WITH_CLASS.format(classes = classes, name = req.conditioning_class.display_name)
    elif req.variant is Variant.USE_ALL:
        topic_sentence = TOPIC_ALL.format(classes = classes)
    else:
        topic_sentence = ""
    return GENERATION_TEMPLATE.format(flattened = flatten_session(req.session), topic_sentence = topic_sentence, M = req.M)


def parse_candidates(text, M):
    '''
    Capture the enumerated lines `1. ...`, `2. ...` of a reply, trimmed and capped at M.
    Params:
     - text: raw generator reply
     - M: maximum number of candidates kept
    '''
    found = [m.strip() for m in CANDIDATE_LINE.findall(text)]
    found = [c for c in found if c]
    if not found:
        raise CandidateParseError("Error while parsing candidates: no enumerated lines in reply `%s`" % (text.strip()[:200]), text)
    return CandidateList(tuple(found[:M]))


class IntentGenerator:
    '''
    Generate candidate intents through the chat gateway.
    '''

    def __init__(self, gateway, model, max_tokens = 256, logger = None):
        self.gateway = gateway
        self.model = model
        self.max_tokens = max_tokens
        self.log = logger or logging.getLogger(__name__ + ".IntentGenerator")

    def generate(self, req):
        prompt = build_generation_prompt(req)
        reply = self.gateway.chat_complete(ChatRequest(model = self.model, messages = (("user", prompt),), temperature = 0, max_tokens = self.max_tokens))
        candidates = parse_candidates(reply, req.M)
        if len(candidates) < req.M:
            self.log.warning("Generator returned %d of %d candidates for user `%s` (%s)" % (len(candidates), req.M, req.session.user_id, req.variant.value))
        return candidates
