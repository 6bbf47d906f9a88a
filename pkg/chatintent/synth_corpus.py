'''
Synthetic labeled browsing corpora with a planted class signal.

Sessions are built from a fixed list of 66 page types. Each session carries one to
three signal pages near its end whose attribute values contain class-signature
keywords; keywords of one class never occur in sessions of another class. A second
generator builds a probe corpus whose label depends on whether a probe keyword sits in
a key or in a value of the final page.
'''
import logging
from typing import Dict, List, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from chatintent.session_model import Page, Session, LabeledSession, Corpus, IntentClass, CLASS_ORDER, PAGE_TYPE_KEY, split_words

# Published class shares (37.3/22.3/21.7/10.4/8.2 %) renormalized to sum to one
CLASS_PROPORTIONS = {"INS": 0.373 / 0.999, "AVL": 0.223 / 0.999, "PRI": 0.217 / 0.999, "WTY": 0.104 / 0.999, "RET": 0.082 / 0.999}

NAMED_PAGE_TYPES = ("product", "search", "products list", "brand", "catalog", "how to", "buying guide", "inspiration", "calculators")
PAGE_TYPES = NAMED_PAGE_TYPES + tuple("misc_%02d" % i for i in range(1, 58))
TITLE_PAGE_TYPES = ("catalog", "how to", "buying guide", "inspiration", "calculators")
SIGNAL_PAGE_TYPES = ("search", "how to", "buying guide", "catalog")

BRANDS = ("Makita", "DeWalt", "Ryobi", "Kobalt", "Craftsman", "Whirlpool", "Samsung", "Maytag", "Pella", "Kohler")
PRODUCTS = ("Cordless Drill", "Circular Saw", "Impact Driver", "Leaf Blower", "Pressure Washer",
            "Ceiling Fan", "Top-Load Washer", "Electric Dryer", "Gas Range", "French Door Refrigerator",
            "Dishwasher", "Smart Thermostat", "Water Heater", "Patio Door", "Vinyl Window",
            "Toilet", "Bathroom Vanity", "Kitchen Faucet", "Lawn Mower", "Storage Shed")
CATALOG = tuple("%s %s" % (b, p) for b in BRANDS for p in PRODUCTS)

DEFAULT_NOISE_VOCAB = ("ideas", "tips", "best", "modern", "outdoor", "kitchen", "bathroom", "garden", "project",
                       "design", "small", "space", "diy", "seasonal", "deals", "tools", "lighting", "paint",
                       "flooring", "storage", "decor", "backyard", "weekend", "budget", "planner", "colors")

CLASS_KEYWORDS = {
    IntentClass.INS: ("installation", "installer", "mounting", "hookup"),
    IntentClass.AVL: ("availability", "stock", "pickup", "backorder"),
    IntentClass.PRI: ("pricematch", "competitor", "discount", "coupon"),
    IntentClass.WTY: ("warranty", "repair", "defective", "broken"),
    IntentClass.RET: ("return", "refund", "receipt", "exchange"),
}

INTENT_TEMPLATES = {
    IntentClass.INS: ("Hi, do you offer installation services for the {item}?",
                      "How much does it cost to have the {item} installed?",
                      "Hello, can someone install the {item} I am about to buy?"),
    IntentClass.AVL: ("Is the {item} in stock at my local store?",
                      "Hi, when will the {item} be available for pickup?",
                      "Can you check the availability of the {item}?"),
    IntentClass.PRI: ("Hi, can I get a price match on the {item}?",
                      "A competitor sells the {item} cheaper, will you match it?",
                      "Is there any discount on the {item}?"),
    IntentClass.WTY: ("My {item} stopped working, is it under warranty?",
                      "Hi, how do I get the {item} repaired?",
                      "What does the warranty on the {item} cover?"),
    IntentClass.RET: ("Hi, can I return the {item} without a receipt?",
                      "I want a refund for the {item}.",
                      "How long do I have to return the {item}?"),
}

PROBE_KEYWORDS = ("voucher", "manual", "delivery")
PROBE_FILLER = "detail"
# (probe keyword, position) -> class; position is "value" or "key" within the final page
PROBE_RULES = {
    ("voucher", "value"): IntentClass.INS,
    ("voucher", "key"): IntentClass.AVL,
    ("manual", "value"): IntentClass.PRI,
    ("manual", "key"): IntentClass.WTY,
    ("delivery", "value"): IntentClass.RET,
}


class GenSpec(BaseModel):
    model_config = ConfigDict(frozen = True, extra = "forbid")

    n_sessions: int = Field(1000, ge = 1)
    class_proportions: Dict[str, float] = Field(default_factory = lambda: dict(CLASS_PROPORTIONS))
    page_count_mean: float = Field(68.0, gt = 0)
    page_count_std: float = Field(111.0, ge = 0)
    page_count_cap: int = Field(400, ge = 1)
    min_pages: int = Field(5, ge = 1)
    signal_pages: Tuple[int, int] = (1, 3)
    signal_window: int = Field(5, ge = 1)
    noise_vocab: List[str] = Field(default_factory = lambda: list(DEFAULT_NOISE_VOCAB))
    seed: int = 0

    @field_validator("class_proportions")
    @classmethod
    def _check_proportions(cls, value):
        codes = {c.value for c in CLASS_ORDER}
        if set(value) != codes:
            raise ValueError("class_proportions must name exactly the classes %s" % (sorted(codes)))
        if any(v < 0 for v in value.values()) or abs(sum(value.values()) - 1.0) > 1e-9:
            raise ValueError("class_proportions must be non-negative and sum to 1")
        return value

    @field_validator("noise_vocab")
    @classmethod
    def _check_noise(cls, value):
        reserved = {kw for kws in CLASS_KEYWORDS.values() for kw in kws} | set(PROBE_KEYWORDS)
        clash = sorted({w.lower() for v in value for w in split_words(v)} & reserved)
        if clash:
            raise ValueError("noise_vocab must not contain signal keywords: %s" % (clash))
        if not value:
            raise ValueError("noise_vocab must not be empty")
        return value

    @model_validator(mode = "after")
    def _check_signal(self):
        low, high = self.signal_pages
        if low < 1 or high < low:
            raise ValueError("signal_pages must be a range 1 <= low <= high, got %s" % (list(self.signal_pages)))
        if self.signal_window < high:
            raise ValueError("signal_window (%d) must be at least the maximum signal pages (%d)" % (self.signal_window, high))
        if self.page_count_cap < self.min_pages:
            raise ValueError("page_count_cap must be at least min_pages")
        return self


def class_quotas(n_items, proportions):
    '''
    Largest-remainder allocation of `n_items` over the classes, in canonical order.
    '''
    raw = [n_items * proportions[c.value] for c in CLASS_ORDER]
    counts = [int(np.floor(r)) for r in raw]
    remainder = n_items - sum(counts)
    order = sorted(range(len(raw)), key = lambda i: (-(raw[i] - counts[i]), i))
    for i in order[:remainder]:
        counts[i] += 1
    return counts


def probe_rule(session):
    '''
    Label of a probe session, recomputed from its final page alone.
    '''
    final = session.pages[-1]
    for key, value in final.attrs[1:]:
        key_words = [w.lower() for w in split_words(key)]
        value_words = [w.lower() for w in split_words(value)]
        for kw in PROBE_KEYWORDS:
            if kw in key_words:
                return PROBE_RULES.get((kw, "key"))
            if kw in value_words:
                return PROBE_RULES.get((kw, "value"))
    return None


class CorpusSynthesizer:

    def __init__(self, spec, logger = None):
        self.log = logger or logging.getLogger(__name__ + ".CorpusSynthesizer")
        self.spec = spec
        sigma2 = np.log1p((spec.page_count_std / spec.page_count_mean) ** 2)
        self.lognormal_sigma = float(np.sqrt(sigma2))
        self.lognormal_mu = float(np.log(spec.page_count_mean) - sigma2 / 2.0)

    ##################
    # Page builders  #
    ##################

    def _session_rng(self, index):
        return np.random.default_rng([self.spec.seed, index])

    def _page_count(self, rng):
        count = int(round(float(rng.lognormal(self.lognormal_mu, self.lognormal_sigma))))
        return min(max(count, self.spec.min_pages), self.spec.page_count_cap)

    def _noise_text(self, rng, n_words):
        return " ".join(rng.choice(self.spec.noise_vocab, size = n_words))

    def _noise_page(self, rng):
        page_type = PAGE_TYPES[int(rng.integers(len(PAGE_TYPES)))]
        if page_type == "product":
            return Page.of(page_type, product_name = CATALOG[int(rng.integers(len(CATALOG)))])
        if page_type in ("search", "products list"):
            noun = PRODUCTS[int(rng.integers(len(PRODUCTS)))].lower()
            return Page.of(page_type, search_query = noun + " " + self._noise_text(rng, 1))
        if page_type == "brand":
            return Page.of(page_type, brand_name = BRANDS[int(rng.integers(len(BRANDS)))])
        if page_type in TITLE_PAGE_TYPES:
            return Page.of(page_type, page_title = self._noise_text(rng, int(rng.integers(2, 5))))
        return Page.of(page_type)

    def _signal_page(self, rng, intent_class, item):
        keywords = CLASS_KEYWORDS[intent_class]
        keyword = keywords[int(rng.integers(len(keywords)))]
        noun = item.split(" ", 1)[1].lower()
        page_type = SIGNAL_PAGE_TYPES[int(rng.integers(len(SIGNAL_PAGE_TYPES)))]
        if page_type == "search":
            return Page.of(page_type, search_query = "%s %s" % (noun, keyword))
        return Page.of(page_type, page_title = "%s %s %s" % (keyword, noun, self._noise_text(rng, 1)))

    def _intent_text(self, rng, intent_class, item):
        templates = INTENT_TEMPLATES[intent_class]
        return templates[int(rng.integers(len(templates)))].format(item = item)

    def _class_sequence(self):
        counts = class_quotas(self.spec.n_sessions, self.spec.class_proportions)
        labels = []
        for c, count in zip(CLASS_ORDER, counts):
            labels.extend([c] * count)
        order = np.random.default_rng(self.spec.seed).permutation(len(labels))
        return [labels[i] for i in order]

    ##############
    # Generators #
    ##############

    def generate_corpus(self):
        '''
        Build `n_sessions` labeled sessions with planted class signal.
        Deterministic per seed; each session draws from its own (seed, index) stream.
        '''
        spec = self.spec
        items = []
        for index, intent_class in enumerate(self._class_sequence()):
            rng = self._session_rng(index)
            n_pages = self._page_count(rng)
            pages = [self._noise_page(rng) for _ in range(n_pages)]
            item = CATALOG[int(rng.integers(len(CATALOG)))]
            window = min(spec.signal_window, n_pages)
            n_signal = min(int(rng.integers(spec.signal_pages[0], spec.signal_pages[1] + 1)), window)
            offsets = sorted(int(o) for o in rng.choice(window, size = n_signal, replace = False))
            for offset in offsets:
                pages[n_pages - 1 - offset] = self._signal_page(rng, intent_class, item)
            # the intent's item also shows up as a product page inside the window when room is left
            free = [o for o in range(window) if o not in offsets]
            if free:
                pages[n_pages - 1 - free[-1]] = Page.of("product", product_name = item)
            session = Session("user-%06d" % (index), tuple(pages))
            items.append(LabeledSession(session, self._intent_text(rng, intent_class, item), intent_class))
        self.log.info("Generated %d synthetic sessions (seed %d)." % (len(items), spec.seed))
        return Corpus(tuple(items))

    def plant_position_probe(self):
        '''
        Build the key-versus-value probe corpus: the final page holds a probe keyword
        either as an attribute value or as an attribute key, and the label depends on both.
        '''
        rule_for_class = {c: rule for rule, c in PROBE_RULES.items()}
        items = []
        for index, intent_class in enumerate(self._class_sequence()):
            rng = self._session_rng(index)
            n_pages = self._page_count(rng)
            pages = [self._noise_page(rng) for _ in range(n_pages - 1)]
            keyword, position = rule_for_class[intent_class]
            page_type = TITLE_PAGE_TYPES[int(rng.integers(len(TITLE_PAGE_TYPES)))]
            if position == "value":
                final = Page(((PAGE_TYPE_KEY, page_type), (PROBE_FILLER, keyword)))
            else:
                final = Page(((PAGE_TYPE_KEY, page_type), (keyword, PROBE_FILLER)))
            pages.append(final)
            item = CATALOG[int(rng.integers(len(CATALOG)))]
            session = Session("probe-%06d" % (index), tuple(pages))
            items.append(LabeledSession(session, self._intent_text(rng, intent_class, item), intent_class))
        self.log.info("Generated %d probe sessions (seed %d)." % (len(items), self.spec.seed))
        return Corpus(tuple(items))


def generate_corpus(spec):
    return CorpusSynthesizer(spec).generate_corpus()


def plant_position_probe(spec):
    return CorpusSynthesizer(spec).plant_position_probe()
