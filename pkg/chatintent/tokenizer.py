'''
Whitespace-word vocabulary and the encoders feeding the classifier: the structured
four-stream encoding (token ids, token positions, token types, page positions) and the
flat `<page>`-marked encoding used for text-to-text inputs.
'''
import os
import logging
from collections import Counter
from dataclasses import dataclass

import numpy as np

from chatintent.errors import EncodingError, ChatIntentError
from chatintent.session_model import PAGE_MARKER, ATTR_SEPARATOR, sanitize_value, split_words
from chatintent.corpus_io import atomic_write_text

log = logging.getLogger(__name__)

PAD, CLS, UNK = "[PAD]", "[CLS]", "[UNK]"
RESERVED_TOKENS = (PAD, CLS, UNK, PAGE_MARKER)
PAD_ID, CLS_ID, UNK_ID, PAGE_ID = 0, 1, 2, 3

TYPE_CLS, TYPE_KEY, TYPE_VALUE = 0, 1, 2

SEPARATOR_TOKEN = ATTR_SEPARATOR.strip()


def words(text):
    return [w.lower() for w in split_words(text)]


@dataclass(frozen = True)
class EncodedInput:
    token_ids: np.ndarray
    token_positions: np.ndarray
    token_types: np.ndarray
    page_positions: np.ndarray

    def __len__(self):
        return int(self.token_ids.shape[0])


class Vocab:

    def __init__(self, tokens):
        '''
        Params:
         - tokens: list of tokens in id order; the four reserved tokens must come first
        '''
        tokens = list(tokens)
        if tuple(tokens[:len(RESERVED_TOKENS)]) != RESERVED_TOKENS:
            raise ValueError("Vocabulary must start with the reserved tokens %s" % (list(RESERVED_TOKENS)))
        if len(set(tokens)) != len(tokens):
            raise ValueError("Vocabulary contains duplicate tokens")
        self.tokens = tuple(tokens)
        self.token_to_id = {t: i for i, t in enumerate(self.tokens)}

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self.token_to_id

    def __eq__(self, other):
        return isinstance(other, Vocab) and self.tokens == other.tokens

    def id_of(self, token):
        return self.token_to_id.get(token, UNK_ID)

    def page_length(self, page):
        '''
        Number of structured tokens a page contributes (keys plus values, no marker).
        '''
        return sum(len(split_words(k)) + len(split_words(v)) for k, v in page.attrs)

    ###############
    # I/O methods #
    ###############

    def save(self, fp_vocab):
        atomic_write_text(fp_vocab, "".join(t + "\n" for t in self.tokens))

    @classmethod
    def load(cls, fp_vocab):
        if not os.path.isfile(fp_vocab):
            raise ChatIntentError("Error reading vocabulary: Unable to find '%s'." % (fp_vocab))
        with open(fp_vocab, "r", encoding = "utf-8") as fh_vocab:
            tokens = [line.rstrip("\n") for line in fh_vocab]
        return cls(tokens)


def session_word_counts(session):
    '''
    Word frequencies of one session, each occurrence counted once: the structured key and
    value words, plus the forms only the flat text has (the `key:` token closing every key
    and the `;` between attributes).
    '''
    counts = Counter()
    for page in session.pages:
        if len(page.attrs) > 1:
            counts[SEPARATOR_TOKEN] += len(page.attrs) - 1
        for k, v in page.attrs:
            counts.update(words(k))
            counts.update(words(v))
            counts[words(sanitize_value(k) + ":")[-1]] += 1
    return counts


def build_vocab(corpus, min_freq = 1):
    '''
    Build a vocabulary from the training split (or the whole corpus when untagged).
    Ordering is by frequency, descending, then lexicographic.
    '''
    items = corpus.training_items()
    if not items:
        raise ValueError("Cannot build a vocabulary from an empty corpus")
    counts = Counter()
    for item in items:
        counts.update(session_word_counts(item.session))
    kept = sorted((t for t, c in counts.items() if c >= min_freq and t not in RESERVED_TOKENS), key = lambda t: (-counts[t], t))
    vocab = Vocab(RESERVED_TOKENS + tuple(kept))
    log.info("Built vocabulary of %d tokens (%d below min_freq=%d dropped)." % (len(vocab), len(counts) - len(kept), min_freq))
    return vocab


def encode_structured(session, vocab, max_tokens, max_pages):
    '''
    Encode a truncated session as [CLS] followed by, per page and attribute, the key
    tokens (type 1) and the value tokens (type 2), all carrying the page's index.
    Params:
     - session: Session, already truncated to fit the limits
     - vocab: Vocab
     - max_tokens: p, the maximum sequence length
     - max_pages: n, the number of page-position rows
    '''
    if len(session.pages) > max_pages:
        raise EncodingError("Error while encoding session `%s`: %d pages exceed the limit of %d" % (session.user_id, len(session.pages), max_pages))
    token_ids = [CLS_ID]
    token_types = [TYPE_CLS]
    page_positions = [0]
    for j, page in enumerate(session.pages):
        for k, v in page.attrs:
            for w in words(k):
                token_ids.append(vocab.id_of(w))
                token_types.append(TYPE_KEY)
                page_positions.append(j)
            for w in words(v):
                token_ids.append(vocab.id_of(w))
                token_types.append(TYPE_VALUE)
                page_positions.append(j)
    if len(token_ids) > max_tokens:
        raise EncodingError("Error while encoding session `%s`: %d tokens exceed the limit of %d" % (session.user_id, len(token_ids), max_tokens))
    return EncodedInput(np.asarray(token_ids, dtype = np.int64),
                        np.arange(len(token_ids), dtype = np.int64),
                        np.asarray(token_types, dtype = np.int64),
                        np.asarray(page_positions, dtype = np.int64))


def encode_flat(text, vocab, max_len):
    '''
    Encode flat text, keeping the last `max_len` tokens.
    '''
    ids = [vocab.id_of(w) for w in words(text)]
    if max_len is not None and len(ids) > max_len:
        ids = ids[len(ids) - max_len:]
    return np.asarray(ids, dtype = np.int64)
