import os, json, logging, tempfile
import pandas as pd
from chatintent.errors import CorpusFormatError, ChatIntentError
from chatintent.session_model import Page, Session, LabeledSession, Corpus, IntentClass, SPLIT_NAMES


def atomic_write_text(fp_out, text):
    '''
    Write text to a temp file next to `fp_out`, then rename it into place.
    '''
    outdir = os.path.dirname(os.path.abspath(fp_out))
    os.makedirs(outdir, exist_ok = True)
    fd, fp_tmp = tempfile.mkstemp(prefix = "." + os.path.basename(fp_out) + ".", dir = outdir)
    try:
        with os.fdopen(fd, "w", encoding = "utf-8", newline = "\n") as fh_tmp:
            fh_tmp.write(text)
        os.replace(fp_tmp, fp_out)
    except BaseException:
        if os.path.exists(fp_tmp):
            os.remove(fp_tmp)
        raise


def atomic_write_bytes(fp_out, data):
    outdir = os.path.dirname(os.path.abspath(fp_out))
    os.makedirs(outdir, exist_ok = True)
    fd, fp_tmp = tempfile.mkstemp(prefix = "." + os.path.basename(fp_out) + ".", dir = outdir)
    try:
        with os.fdopen(fd, "wb") as fh_tmp:
            fh_tmp.write(data)
        os.replace(fp_tmp, fp_out)
    except BaseException:
        if os.path.exists(fp_tmp):
            os.remove(fp_tmp)
        raise


def dump_jsonl(records):
    return "".join(json.dumps(r, ensure_ascii = False) + "\n" for r in records)


class CorpusIO:

    def __init__(self, logger = None):
        self.log = logger or logging.getLogger(__name__ + ".CorpusIO")

    ##########
    # Corpus #
    ##########

    def item_to_record(self, item, split):
        return {"user_id": item.session.user_id,
                "pages": [{"attrs": [[k, v] for k, v in page.attrs]} for page in item.session.pages],
                "intent": item.intent,
                "class": item.intent_class.value,
                "split": split}

    def record_to_item(self, record):
        '''
        Convert one decoded JSONL record into (LabeledSession, split tag)
        '''
        if not isinstance(record, dict):
            raise ValueError("record is not a JSON object")
        try:
            pages = []
            for page in record["pages"]:
                pages.append(Page(tuple((k, v) for k, v in page["attrs"])))
            session = Session(str(record["user_id"]), tuple(pages))
            intent_class = IntentClass.from_code(record["class"])
            item = LabeledSession(session, record["intent"], intent_class)
        except KeyError as err:
            raise ValueError("missing field %s" % (str(err)))
        split = record.get("split")
        if split not in (None,) + SPLIT_NAMES:
            raise ValueError("unknown split `%s`" % (split))
        return item, split

    def save_corpus(self, corpus, fp_corpus):
        '''
        Write a corpus as line-delimited JSON, one labeled session per line.
        Params:
         - corpus: Corpus to write
         - fp_corpus: file path to output file
        '''
        text = dump_jsonl(self.item_to_record(item, tag) for item, tag in zip(corpus.items, corpus.splits))
        atomic_write_text(fp_corpus, text)
        self.log.debug("Wrote %d sessions to `%s`." % (len(corpus), fp_corpus))

    def load_corpus(self, fp_corpus):
        '''
        Read a line-delimited JSON corpus. Blank lines are skipped.
        Params:
         - fp_corpus: file path to input file
        '''
        if not os.path.isfile(fp_corpus):
            raise ChatIntentError("Error reading corpus: Unable to find '%s'." % (fp_corpus))
        items = []
        tags = []
        with open(fp_corpus, "r", encoding = "utf-8") as fh_corpus:
            for line_number, line in enumerate(fh_corpus, start = 1):
                if not line.strip():
                    continue
                try:
                    item, tag = self.record_to_item(json.loads(line))
                except (ValueError, TypeError) as err:
                    raise CorpusFormatError("Error while parsing `%s` at line %d: `%s`" % (fp_corpus, line_number, str(err)), line_number)
                items.append(item)
                tags.append(tag)
        try:
            return Corpus(tuple(items), tuple(tags))
        except ValueError as err:
            raise CorpusFormatError("Error while reading corpus `%s`: `%s`" % (fp_corpus, str(err)))

    ##############
    # Candidates #
    ##############

    def save_candidates(self, rows, fp_candidates):
        '''
        Write generated candidate lists.
        Params:
         - rows: iterable of dicts with keys user_id, variant, candidates
         - fp_candidates: file path to output file
        '''
        atomic_write_text(fp_candidates, dump_jsonl({"user_id": r["user_id"], "variant": r["variant"], "candidates": list(r["candidates"])} for r in rows))

    def load_candidates(self, fp_candidates):
        return self.read_jsonl(fp_candidates)

    ##############
    # Judgments  #
    ##############

    def save_judgments(self, records_by_variant, fp_judgments):
        '''
        Params:
         - records_by_variant: dict of variant name -> list of JudgmentRecord, in write order
        '''
        rows = []
        for variant, records in records_by_variant.items():
            for rec in records:
                rows.append({"variant": variant, "user_id": rec.user_id, "rank": rec.candidate_rank, "verdict": rec.verdict})
        atomic_write_text(fp_judgments, dump_jsonl(rows))

    def load_judgments(self, fp_judgments):
        return self.read_jsonl(fp_judgments)

    def read_human_labels(self, fp_labels):
        '''
        Read a CSV of `pair_id,human_label` rows into a dict of pair_id -> 0/1.
        '''
        if not os.path.isfile(fp_labels):
            raise ChatIntentError("Error reading human labels: Unable to find '%s'." % (fp_labels))
        table = pd.read_csv(fp_labels, dtype = {"pair_id": str}, encoding = "utf-8")
        missing = {"pair_id", "human_label"} - set(table.columns)
        if missing:
            raise CorpusFormatError("Error while reading `%s`: missing columns %s" % (fp_labels, sorted(missing)))
        labels = {}
        for pair_id, label in zip(table["pair_id"], table["human_label"]):
            if int(label) not in (0, 1):
                raise CorpusFormatError("Error while reading `%s`: label of `%s` is not binary" % (fp_labels, pair_id))
            labels[pair_id] = int(label)
        return labels

    ###########
    # Helpers #
    ###########

    def read_jsonl(self, fp_in):
        if not os.path.isfile(fp_in):
            raise ChatIntentError("Error reading `%s`: file does not exist." % (fp_in))
        rows = []
        with open(fp_in, "r", encoding = "utf-8") as fh_in:
            for line_number, line in enumerate(fh_in, start = 1):
                if not line.strip():
                    continue
                try:
                    rows.append(json.loads(line))
                except ValueError as err:
                    raise CorpusFormatError("Error while parsing `%s` at line %d: `%s`" % (fp_in, line_number, str(err)), line_number)
        return rows
