import os
import json

import numpy as np
import pytest

from chatintent.session_model import Page, Session, LabeledSession, Corpus, IntentClass, split_corpus
from chatintent.mock_server import MockChatServer

REPO_DIR = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
FIXTURE_DIR = os.path.join(REPO_DIR, "fixtures")


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run the acceptance-scale training tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: acceptance-scale test, runs only with --runslow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def fixture_dir():
    return FIXTURE_DIR


@pytest.fixture
def drill_session():
    return Session("user-drill", (Page.of("home"), Page.of("search", search_query="drill bits")))


def make_session(user_id, n_pages, rng):
    words = ["aisle", "garden", "deck", "lumber", "paint", "tile", "bolt", "hinge"]
    pages = []
    for _ in range(n_pages):
        title = " ".join(rng.choice(words, size=int(rng.integers(1, 4))))
        pages.append(Page.of("article", page_title=title))
    return Session(user_id, tuple(pages))


@pytest.fixture
def tiny_corpus():
    '''
    40 labeled sessions whose final page names the class, split 80/10/10.
    '''
    rng = np.random.default_rng(3)
    cues = {IntentClass.INS: "install", IntentClass.AVL: "stock", IntentClass.PRI: "price",
            IntentClass.WTY: "warranty", IntentClass.RET: "refund"}
    items = []
    for index in range(40):
        intent_class = list(cues)[index % 5]
        session = make_session("user-%03d" % index, int(rng.integers(5, 9)), rng)
        pages = session.pages + (Page.of("search", search_query="drill " + cues[intent_class]),)
        items.append(LabeledSession(Session(session.user_id, pages), "Question about %s" % cues[intent_class], intent_class))
    return split_corpus(Corpus(tuple(items)), (0.8, 0.1, 0.1), seed=0)


@pytest.fixture
def mock_server():
    '''
    Factory for running mock servers; every server is stopped at teardown.
    '''
    servers = []

    def _start(rows, **kwargs):
        server = MockChatServer(rows, **kwargs).start()
        servers.append(server)
        return server

    yield _start
    for server in servers:
        server.stop()


@pytest.fixture
def e2e_config(tmp_path):
    '''
    Copy of the shipped e2e config with its run directory and golden report path under tmp_path.
    '''
    with open(os.path.join(FIXTURE_DIR, "e2e", "config.json"), "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    raw["paths"]["output_dir"] = str(tmp_path / "runs")
    raw["paths"]["golden_report"] = str(tmp_path / "golden_report.json")
    raw["paths"]["fixtures"] = os.path.join(FIXTURE_DIR, "e2e", "mock_fixture.jsonl")
    fp_config = tmp_path / "config.json"
    fp_config.write_text(json.dumps(raw), encoding="utf-8")
    return str(fp_config)
