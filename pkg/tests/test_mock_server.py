import json

import httpx
import pytest

from chatintent.errors import ChatIntentError
from chatintent.llm_gateway import ChatRequest, GatewayClient, GatewayConfig, serialize_request
from chatintent.mock_server import fingerprint, load_fixture, run_mock


def post(server, messages, path="/v1/chat/completions"):
    return httpx.post("http://127.0.0.1:%d%s" % (server.port, path), json={"model": "m", "messages": messages})


class TestFixtures:

    def test_fingerprint_accepts_dicts_and_pairs(self):
        as_dicts = [{"role": "system", "content": "a"}, {"role": "user", "content": "b"}]
        assert fingerprint(as_dicts) == fingerprint([("system", "a"), ("user", "b")])
        assert fingerprint(as_dicts) != fingerprint([("user", "b")])

    def test_load_fixture(self, tmp_path):
        fp = tmp_path / "fixture.jsonl"
        fp.write_text('{"match": null, "reply": "Yes"}\n\n{"match": "abc", "reply": "No", "status": 500}\n', encoding="utf-8")
        assert load_fixture(str(fp)) == [{"match": None, "reply": "Yes", "status": 200}, {"match": "abc", "reply": "No", "status": 500}]
        fp.write_text('{"match": null}\n', encoding="utf-8")
        with pytest.raises(ChatIntentError):
            load_fixture(str(fp))


class TestServing:

    def test_matched_replies_repeat_and_queue_is_fifo(self, mock_server):
        messages = [{"role": "user", "content": "hello"}]
        server = mock_server([{"match": fingerprint(messages), "reply": "matched", "status": 200},
                              {"match": None, "reply": "first", "status": 200},
                              {"match": None, "reply": "second", "status": 200}])
        assert post(server, messages).json()["choices"][0]["message"]["content"] == "matched"
        assert post(server, messages).json()["choices"][0]["message"]["content"] == "matched"
        other = [{"role": "user", "content": "other"}]
        assert post(server, other).json()["choices"][0]["message"]["content"] == "first"
        assert post(server, other).json()["choices"][0]["message"]["content"] == "second"
        assert post(server, other).status_code == 404
        assert server.remaining() == 0

    def test_unknown_path_and_bad_body(self, mock_server):
        server = mock_server([])
        assert post(server, [], path="/v1/embeddings").status_code == 404
        response = httpx.post(server.endpoint + "/chat/completions", content=b"{oops")
        assert response.status_code == 400
        assert [entry["status"] for entry in server.transcript] == [404, 400]

    def test_error_status_row(self, mock_server):
        server = mock_server([{"match": None, "reply": "overloaded", "status": 503}])
        response = post(server, [{"role": "user", "content": "x"}])
        assert response.status_code == 503
        assert response.json()["error"]["message"] == "overloaded"

    def test_run_mock_context(self, tmp_path):
        fp = tmp_path / "fixture.jsonl"
        fp.write_text('{"match": null, "reply": "Yes"}\n', encoding="utf-8")
        with run_mock(str(fp)) as server:
            assert post(server, [{"role": "user", "content": "q"}]).json()["choices"][0]["message"]["content"] == "Yes"


class TestTranscripts:

    def test_replayed_transcript_is_byte_identical(self, mock_server, tmp_path):
        rows = [{"match": None, "reply": "Yes", "status": 200}, {"match": None, "reply": "busy", "status": 503},
                {"match": None, "reply": "No", "status": 200}]
        requests = [ChatRequest(model="gpt-4-0125-preview", messages=(("system", "Judge."), ("user", "Intent A: café\nIntent B: cafe"))),
                    ChatRequest(model="gpt-3.5-turbo-0125", messages=(("user", "Pretend to be this customer"),), temperature=0.5, max_tokens=64)]
        fp_first = tmp_path / "first.jsonl"
        server = mock_server(rows, transcript_path=str(fp_first))
        client = GatewayClient(GatewayConfig(endpoint=server.endpoint, model="m", api_key_env=None, max_retries=1), sleep=lambda s: None)
        assert [client.chat_complete(req) for req in requests] == ["Yes", "No"]
        with open(fp_first, "r", encoding="utf-8") as fh:
            recorded = [json.loads(line) for line in fh]
        sent = [serialize_request(requests[0]), serialize_request(requests[1]), serialize_request(requests[1])]
        assert [entry["request"].encode("utf-8") for entry in recorded] == sent

        fp_second = tmp_path / "second.jsonl"
        replay = mock_server(rows, transcript_path=str(fp_second))
        for entry in recorded:
            httpx.post(replay.endpoint + "/chat/completions", content=entry["request"].encode("utf-8"))
        assert fp_second.read_bytes() == fp_first.read_bytes()
