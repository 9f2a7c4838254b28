import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from synthmix.corpus import Document, corpus_from_documents
from synthmix.tokenize import WhitespaceTokenizer


def make_corpus(label, texts, tokenizer=None, id_prefix="d"):
    tok = tokenizer or WhitespaceTokenizer()
    docs = [
        Document(
            id=f"{id_prefix}{i}",
            text=t,
            source_label=label,
            token_count=len(tok.tokenize(t)),
        )
        for i, t in enumerate(texts)
    ]
    return corpus_from_documents(label, docs, tok.identifier)


def word_corpus(label, rng, n_docs, words, doc_len_range=(5, 30)):
    """Random fixture corpus over a small word alphabet."""
    texts = []
    for _ in range(n_docs):
        n = int(rng.integers(*doc_len_range))
        texts.append(" ".join(rng.choice(words, size=n)))
    return make_corpus(label, texts)


class MockChatServer:
    """Scripted chat-completion endpoint for tests.

    `script` is a callable(body_dict, request_index) -> (status, text).
    Tracks the peak number of concurrently in-flight requests.
    """

    def __init__(self, script=None):
        self.script = script or (lambda body, i: (200, "tok " * 600))
        self.lock = threading.Lock()
        self.in_flight = 0
        self.max_in_flight = 0
        self.request_count = 0
        self.requests = []

        server = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                with server.lock:
                    server.in_flight += 1
                    server.max_in_flight = max(server.max_in_flight, server.in_flight)
                    idx = server.request_count
                    server.request_count += 1
                try:
                    length = int(self.headers.get("Content-Length", 0))
                    body = json.loads(self.rfile.read(length))
                    with server.lock:
                        server.requests.append(body)
                    status, text = server.script(body, idx)
                    payload = json.dumps(
                        {"choices": [{"message": {"role": "assistant", "content": text}}]}
                    ).encode()
                    self.send_response(status)
                    self.send_header("Content-Type", "application/json")
                    self.send_header("Content-Length", str(len(payload)))
                    self.end_headers()
                    self.wfile.write(payload)
                finally:
                    with server.lock:
                        server.in_flight -= 1

            def log_message(self, *args):
                pass

        self.httpd = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)

    @property
    def url(self):
        host, port = self.httpd.server_address
        return f"http://{host}:{port}/v1/chat/completions"

    def __enter__(self):
        self.thread.start()
        return self

    def __exit__(self, *exc):
        self.httpd.shutdown()
        self.httpd.server_close()


@pytest.fixture
def mock_server():
    def _factory(script=None):
        return MockChatServer(script)

    return _factory
