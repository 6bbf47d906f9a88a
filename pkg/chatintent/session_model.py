'''
Domain types for browsing histories and live-chat intents, plus the pure operations on
them: minimum-length filtering, train/val/test splitting, recency truncation and
flattening into the `<page>`-marked text form.
'''
import math
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Tuple

import numpy as np

log = logging.getLogger(__name__)

PAGE_TYPE_KEY = "page type"
PAGE_MARKER = "<page>"
ATTR_SEPARATOR = " ; "
SPLIT_NAMES = ("train", "val", "test")


class IntentClass(Enum):
    INS = "INS"
    AVL = "AVL"
    PRI = "PRI"
    WTY = "WTY"
    RET = "RET"

    @property
    def display_name(self):
        return _DISPLAY_NAMES[self]

    @property
    def index(self):
        return CLASS_ORDER.index(self)

    @classmethod
    def from_code(cls, code):
        try:
            return cls(code)
        except ValueError:
            raise ValueError("Unknown intent class `%s`" % (code))

    @classmethod
    def from_index(cls, index):
        return CLASS_ORDER[index]


_DISPLAY_NAMES = {
    IntentClass.INS: "Installation",
    IntentClass.AVL: "Item availability",
    IntentClass.PRI: "Price match",
    IntentClass.WTY: "Repair/Warranty",
    IntentClass.RET: "Return/Refund",
}

# Canonical order C; indices into it are the model's output classes
CLASS_ORDER = (IntentClass.INS, IntentClass.AVL, IntentClass.PRI, IntentClass.WTY, IntentClass.RET)
CLASS_SET = tuple(c.display_name for c in CLASS_ORDER)
N_CLASSES = len(CLASS_ORDER)


def split_words(text):
    '''
    Whitespace word split shared by truncation, counting and the tokenizer.
    '''
    return text.split()


@dataclass(frozen = True)
class Page:
    attrs: Tuple[Tuple[str, str], ...]

    def __post_init__(self):
        attrs = tuple((str(k), str(v)) for k, v in self.attrs)
        object.__setattr__(self, "attrs", attrs)
        if len(attrs) == 0:
            raise ValueError("A page needs at least one attribute")
        if any(not k for k, _ in attrs):
            raise ValueError("Attribute keys must be non-empty")
        if attrs[0][0] != PAGE_TYPE_KEY:
            raise ValueError("First attribute must be `%s`, found `%s`" % (PAGE_TYPE_KEY, attrs[0][0]))
        if sum(1 for k, _ in attrs if k == PAGE_TYPE_KEY) != 1:
            raise ValueError("`%s` must occur exactly once" % (PAGE_TYPE_KEY))

    @property
    def page_type(self):
        return self.attrs[0][1]

    @classmethod
    def of(cls, page_type, **extra):
        '''
        Convenience constructor; underscores in keyword names become spaces.
        '''
        attrs = [(PAGE_TYPE_KEY, page_type)]
        attrs.extend((k.replace("_", " "), v) for k, v in extra.items())
        return cls(tuple(attrs))


@dataclass(frozen = True)
class Session:
    user_id: str
    pages: Tuple[Page, ...]

    def __post_init__(self):
        object.__setattr__(self, "pages", tuple(self.pages))
        if len(self.pages) == 0:
            raise ValueError("Session `%s` has no pages" % (self.user_id))

    def __len__(self):
        return len(self.pages)


@dataclass(frozen = True)
class LabeledSession:
    session: Session
    intent: str
    intent_class: IntentClass

    def __post_init__(self):
        if not self.intent:
            raise ValueError("Raw intent of session `%s` is empty" % (self.session.user_id))
        if not isinstance(self.intent_class, IntentClass):
            raise ValueError("Invalid intent class `%s`" % (self.intent_class))

    @property
    def user_id(self):
        return self.session.user_id


@dataclass(frozen = True)
class Corpus:
    items: Tuple[LabeledSession, ...]
    splits: Tuple[Optional[str], ...] = field(default = ())

    def __post_init__(self):
        object.__setattr__(self, "items", tuple(self.items))
        splits = tuple(self.splits) if self.splits else (None,) * len(self.items)
        if len(splits) != len(self.items):
            raise ValueError("Split tags (%d) do not match corpus size (%d)" % (len(splits), len(self.items)))
        for tag in splits:
            if tag is not None and tag not in SPLIT_NAMES:
                raise ValueError("Unknown split tag `%s`" % (tag))
        object.__setattr__(self, "splits", splits)

    def __len__(self):
        return len(self.items)

    def __iter__(self):
        return iter(self.items)

    @property
    def has_splits(self):
        return any(tag is not None for tag in self.splits)

    def subset(self, split):
        '''
        Items tagged with `split`, in corpus order.
        '''
        return [item for item, tag in zip(self.items, self.splits) if tag == split]

    def training_items(self):
        '''
        The train split when splits are present, otherwise every item.
        '''
        if self.has_splits:
            return self.subset("train")
        return list(self.items)


##############
# Operations #
##############

def filter_min_pages(corpus, min_pages = 5):
    '''
    Keep the items whose session has at least `min_pages` pages, preserving order.
    '''
    if min_pages < 1:
        raise ValueError("min_pages must be at least 1, got %s" % (min_pages))
    kept = [(item, tag) for item, tag in zip(corpus.items, corpus.splits) if len(item.session) >= min_pages]
    log.debug("Kept %d of %d sessions with at least %d pages." % (len(kept), len(corpus), min_pages))
    return Corpus(tuple(i for i, _ in kept), tuple(t for _, t in kept))


def split_sizes(n_items, ratios):
    '''
    Sizes of (train, val, test) under the floor rule; test takes the remainder.
    '''
    n_train = int(math.floor(n_items * ratios[0] + 1e-9))
    n_val = int(math.floor(n_items * ratios[1] + 1e-9))
    return n_train, n_val, n_items - n_train - n_val


def split_corpus(corpus, ratios = (0.8, 0.1, 0.1), seed = 0):
    '''
    Shuffle the items with a seeded RNG and tag contiguous slices as train, val and test.
    Params:
     - corpus: Corpus to split (existing tags are replaced)
     - ratios: (train, val, test) fractions summing to 1
     - seed: integer seed of the shuffle
    '''
    if len(ratios) != 3 or any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError("Split ratios must be three positive fractions summing to 1, got %s" % (list(ratios)))
    if len(corpus) < 3:
        raise ValueError("Error while splitting corpus: `%d` items cannot populate three splits" % (len(corpus)))
    n_train, n_val, _ = split_sizes(len(corpus), ratios)
    order = np.random.default_rng(seed).permutation(len(corpus))
    items = [corpus.items[i] for i in order]
    tags = ["train"] * n_train + ["val"] * n_val + ["test"] * (len(items) - n_train - n_val)
    return Corpus(tuple(items), tuple(tags))


def _truncate_text(text, max_tokens):
    words = split_words(text)
    if len(words) <= max_tokens:
        return text
    return " ".join(words[:max_tokens])


def _truncate_key(key, max_tokens):
    '''
    Keys are capped like values, except where the cap would turn a key into `page type`.
    '''
    if key == PAGE_TYPE_KEY:
        return key
    truncated = _truncate_text(key, max_tokens)
    return key if truncated == PAGE_TYPE_KEY else truncated


def truncate_session(session, max_pages, max_attr_tokens, token_budget, tokenizer):
    '''
    Keep the most recent pages that fit the model's input budgets.
    The result is always a suffix of the input page list.
    Params:
     - session: Session to truncate
     - max_pages: maximum number of pages kept (n)
     - max_attr_tokens: per-key and per-value token cap
     - token_budget: maximum structured encoding length including [CLS] (p)
     - tokenizer: object exposing `page_length(page)` (a Vocab)
    '''
    if max_pages < 1:
        raise ValueError("max_pages must be at least 1, got %s" % (max_pages))
    pages = session.pages[-max_pages:]
    pages = [Page(tuple((_truncate_key(k, max_attr_tokens), _truncate_text(v, max_attr_tokens)) for k, v in p.attrs)) for p in pages]
    lengths = [tokenizer.page_length(p) for p in pages]
    if lengths[-1] + 1 > token_budget:
        raise ValueError("Error while truncating session `%s`: the most recent page needs %d tokens, budget is %d" %
          (session.user_id, lengths[-1] + 1, token_budget))
    total = 1 + sum(lengths)
    start = 0
    while total > token_budget:
        total -= lengths[start]
        start += 1
    return Session(session.user_id, tuple(pages[start:]))


def sanitize_value(text):
    while ATTR_SEPARATOR in text:
        text = text.replace(ATTR_SEPARATOR, " ")
    return text


def flatten_page(page):
    return PAGE_MARKER + " " + ATTR_SEPARATOR.join("%s: %s" % (sanitize_value(k), sanitize_value(v)) for k, v in page.attrs)


def flatten_session(session):
    '''
    Render a (truncated) session as `<page> k1: v1 ; k2: v2 ...` per page, pages joined by single spaces.
    '''
    return " ".join(flatten_page(p) for p in session.pages)
