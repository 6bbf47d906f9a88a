import os

import pytest

from chatintent.errors import CandidateParseError
from chatintent.generation import (
    Variant, GenRequest, IntentGenerator, build_generation_prompt, parse_candidates, shuffle_class_names,
)
from chatintent.session_model import CLASS_SET, IntentClass

GOLDEN = {
    Variant.USE_PREDICTED: ("generation_use_predicted.txt", IntentClass.PRI),
    Variant.USE_GROUND_TRUTH: ("generation_use_ground_truth.txt", IntentClass.RET),
    Variant.USE_ALL: ("generation_use_all.txt", None),
    Variant.USE_NONE: ("generation_use_none.txt", None),
}


class FakeGateway:

    def __init__(self, reply):
        self.reply = reply
        self.requests = []

    def chat_complete(self, request):
        self.requests.append(request)
        return self.reply


class TestPrompt:

    @pytest.mark.parametrize("variant", list(GOLDEN))
    @pytest.mark.parametrize("seed", [0, 1, 17])
    def test_matches_golden(self, variant, seed, drill_session, fixture_dir):
        file_name, conditioning = GOLDEN[variant]
        with open(os.path.join(fixture_dir, "prompts", file_name), "r", encoding="utf-8") as fh:
            golden = fh.read().rstrip("\n")
        expected = golden.replace("{C_shuffled}", ", ".join(shuffle_class_names(seed)))
        assert build_generation_prompt(GenRequest(drill_session, variant, conditioning, 5, seed)) == expected

    def test_shuffle_is_seeded_permutation(self):
        assert shuffle_class_names(3) == shuffle_class_names(3)
        assert sorted(shuffle_class_names(3)) == sorted(CLASS_SET)
        assert len({tuple(shuffle_class_names(s)) for s in range(30)}) > 1

    def test_request_validation(self, drill_session):
        with pytest.raises(ValueError):
            GenRequest(drill_session, Variant.USE_PREDICTED, None)
        with pytest.raises(ValueError):
            GenRequest(drill_session, Variant.USE_NONE, IntentClass.INS)
        with pytest.raises(ValueError):
            GenRequest(drill_session, Variant.USE_ALL, None, M=0)
        with pytest.raises(ValueError):
            Variant.from_name("UseSome")


class TestParse:

    def test_enumerated_lines(self):
        text = "Sure!\n1. Is it in stock?\n2.   Can I pick it up today?  \n3. Price match?\nThanks"
        assert parse_candidates(text, 5).candidates == ("Is it in stock?", "Can I pick it up today?", "Price match?")

    def test_capped_at_m(self):
        text = "\n".join("%d. question %d" % (i, i) for i in range(1, 8))
        assert len(parse_candidates(text, 5)) == 5

    def test_no_enumeration(self):
        with pytest.raises(CandidateParseError) as err:
            parse_candidates("I cannot help with that.", 5)
        assert err.value.raw_text == "I cannot help with that."


class TestGenerator:

    def test_generate_sends_prompt(self, drill_session):
        gateway = FakeGateway("1. Q one\n2. Q two")
        request = GenRequest(drill_session, Variant.USE_ALL, None, 2, 0)
        candidates = IntentGenerator(gateway, "gpt-3.5-turbo-0125").generate(request)
        assert list(candidates) == ["Q one", "Q two"]
        assert gateway.requests[0].messages == (("user", build_generation_prompt(request)),)
        assert gateway.requests[0].temperature == 0
