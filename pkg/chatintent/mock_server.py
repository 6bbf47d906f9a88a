'''
Scripted chat-completions server for offline runs and tests.

Fixture file: JSONL rows `{"match": <fingerprint>|null, "reply": str, "status": int}`.
A request whose fingerprint (sha256 of its concatenated message contents) matches a
`match` entry gets that entry's reply, every time. Other requests consume the `null`
entries first-in first-out. No match and an empty queue gives HTTP 404.
'''
import json, time, hashlib, logging, threading
from collections import deque
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from chatintent.errors import ChatIntentError
from chatintent.corpus_io import dump_jsonl

log = logging.getLogger(__name__)


def fingerprint(messages):
    '''
    Params:
     - messages: list of {"role", "content"} dicts or (role, content) pairs
    '''
    contents = [m["content"] if isinstance(m, dict) else m[1] for m in messages]
    return hashlib.sha256("".join(contents).encode("utf-8")).hexdigest()


def load_fixture(fp_fixture):
    rows = []
    with open(fp_fixture, "r", encoding = "utf-8") as fh_fixture:
        for line_number, line in enumerate(fh_fixture, start = 1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                rows.append({"match": row.get("match"), "reply": str(row["reply"]), "status": int(row.get("status", 200))})
            except (ValueError, KeyError, TypeError) as err:
                raise ChatIntentError("Error while reading mock fixture `%s` at line %d: `%s`" % (fp_fixture, line_number, str(err)))
    return rows


def completion_body(reply, model):
    return {"id": "chatcmpl-mock", "object": "chat.completion", "model": model,
            "choices": [{"index": 0, "message": {"role": "assistant", "content": reply}, "finish_reason": "stop"}]}


class MockChatServer:

    def __init__(self, fixture_rows, port = 0, transcript_path = None, delay = 0.0, logger = None):
        self.log = logger or logging.getLogger(__name__ + ".MockChatServer")
        self.matched = {}
        self.queue = deque()
        for row in fixture_rows:
            if row["match"]:
                self.matched[row["match"]] = row
            else:
                self.queue.append(row)
        self.transcript = []
        self.transcript_path = transcript_path
        self.delay = delay
        self.in_flight = 0
        self.max_concurrent = 0
        self._lock = threading.Lock()
        self._httpd = ThreadingHTTPServer(("127.0.0.1", port), self._handler_class())
        self._httpd.daemon_threads = True
        self._thread = None

    @property
    def port(self):
        return self._httpd.server_address[1]

    @property
    def endpoint(self):
        return "http://127.0.0.1:%d/v1" % (self.port)

    def start(self):
        self._thread = threading.Thread(target = self._httpd.serve_forever, daemon = True)
        self._thread.start()
        self.log.info("Mock chat server listening on %s (%d matched, %d queued replies)" % (self.endpoint, len(self.matched), len(self.queue)))
        return self

    def stop(self):
        self._httpd.shutdown()
        self._httpd.server_close()
        if self._thread is not None:
            self._thread.join()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.stop()

    def remaining(self):
        with self._lock:
            return len(self.queue)

    def select(self, body):
        '''
        Pick the fixture row for a decoded request body; None when nothing is left.
        '''
        key = fingerprint(body.get("messages", []))
        with self._lock:
            if key in self.matched:
                return key, self.matched[key]
            if self.queue:
                return key, self.queue.popleft()
        return key, None

    def record(self, raw_body, status, reply):
        entry = {"request": raw_body.decode("utf-8"), "status": status, "reply": reply}
        with self._lock:
            self.transcript.append(entry)
            if self.transcript_path:
                with open(self.transcript_path, "a", encoding = "utf-8") as fh_transcript:
                    fh_transcript.write(dump_jsonl([entry]))

    def _handler_class(self):
        server = self

        class _Handler(BaseHTTPRequestHandler):

            def log_message(self, fmt, *args):
                server.log.debug("mock: " + fmt % args)

            def _send(self, status, payload):
                data = json.dumps(payload).encode("utf-8")
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def do_POST(self):
                with server._lock:
                    server.in_flight += 1
                    server.max_concurrent = max(server.max_concurrent, server.in_flight)
                try:
                    raw = self.rfile.read(int(self.headers.get("Content-Length", 0)))
                    if server.delay:
                        time.sleep(server.delay)
                    if not self.path.rstrip("/").endswith("/chat/completions"):
                        server.record(raw, 404, None)
                        return self._send(404, {"error": {"message": "Unknown path `%s`" % (self.path)}})
                    try:
                        body = json.loads(raw.decode("utf-8"))
                    except ValueError:
                        server.record(raw, 400, None)
                        return self._send(400, {"error": {"message": "Request body is not JSON"}})
                    key, row = server.select(body)
                    if row is None:
                        server.record(raw, 404, None)
                        return self._send(404, {"error": {"message": "No fixture matches fingerprint %s and the reply queue is empty" % (key)}})
                    server.record(raw, row["status"], row["reply"])
                    if 200 <= row["status"] < 300:
                        return self._send(row["status"], completion_body(row["reply"], body.get("model", "")))
                    return self._send(row["status"], {"error": {"message": row["reply"]}})
                finally:
                    with server._lock:
                        server.in_flight -= 1

        return _Handler


def run_mock(fixture_path, port = 0, transcript_path = None, delay = 0.0):
    '''
    Start a mock server for a fixture file and return the running handle.
    Use it as a context manager (or call stop()) to shut it down.
    '''
    return MockChatServer(load_fixture(fixture_path), port, transcript_path, delay).start()
