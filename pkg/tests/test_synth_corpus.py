import pytest
from pydantic import ValidationError

from chatintent.session_model import CLASS_ORDER
from chatintent.synth_corpus import (
    GenSpec, CLASS_KEYWORDS, CLASS_PROPORTIONS, class_quotas, generate_corpus, plant_position_probe, probe_rule,
)


def session_words(session, last=None):
    pages = session.pages if last is None else session.pages[-last:]
    return {w.lower() for page in pages for k, v in page.attrs for w in (k + " " + v).split()}


@pytest.fixture(scope="module")
def small_corpus():
    return generate_corpus(GenSpec(n_sessions=200, page_count_mean=12.0, page_count_std=6.0, page_count_cap=40, seed=1))


class TestGenerateCorpus:

    def test_deterministic_per_seed(self):
        spec = GenSpec(n_sessions=30, page_count_mean=10.0, page_count_std=4.0, page_count_cap=30, seed=5)
        assert generate_corpus(spec) == generate_corpus(spec)
        assert generate_corpus(spec.model_copy(update={"seed": 6})) != generate_corpus(spec)

    def test_class_histogram_matches_quotas(self, small_corpus):
        counts = [sum(1 for item in small_corpus if item.intent_class is c) for c in CLASS_ORDER]
        assert counts == class_quotas(200, CLASS_PROPORTIONS)
        assert sum(counts) == 200

    def test_page_counts_within_bounds(self, small_corpus):
        assert all(5 <= len(item.session) <= 40 for item in small_corpus)

    def test_signal_in_window_and_exclusive(self, small_corpus):
        for item in small_corpus:
            own = set(CLASS_KEYWORDS[item.intent_class])
            assert own & session_words(item.session, last=5)
            others = {kw for c, kws in CLASS_KEYWORDS.items() if c is not item.intent_class for kw in kws}
            assert not others & session_words(item.session)

    def test_spec_validation(self):
        with pytest.raises(ValidationError):
            GenSpec(noise_vocab=["warranty"])
        with pytest.raises(ValidationError):
            GenSpec(class_proportions={"INS": 1.0})
        with pytest.raises(ValidationError):
            GenSpec(signal_pages=(1, 6), signal_window=5)


class TestQuotas:

    def test_largest_remainder(self):
        assert class_quotas(7, {"INS": 0.25, "AVL": 0.25, "PRI": 0.25, "WTY": 0.125, "RET": 0.125}) == [2, 2, 1, 1, 1]
        assert class_quotas(0, CLASS_PROPORTIONS) == [0, 0, 0, 0, 0]


class TestPositionProbe:

    def test_label_recomputable_from_final_page(self):
        corpus = plant_position_probe(GenSpec(n_sessions=100, page_count_mean=8.0, page_count_std=3.0, page_count_cap=20, seed=2))
        assert len(corpus) == 100
        for item in corpus:
            assert probe_rule(item.session) is item.intent_class
