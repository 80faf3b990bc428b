"""Shared fixtures: a deterministic local chat-completions stub and helpers
for building corpora and hash-derived embedding files."""

import hashlib
import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
import pytest

from finsts.providers import write_embeddings_file


def deterministic_vector(text: str, dim: int = 32) -> np.ndarray:
    """Pseudo-random unit-scale vector derived from the text hash."""
    seed = int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "big")
    rng = np.random.default_rng(seed)
    return rng.normal(size=dim)


def build_embeddings_file(path, texts, dim: int = 32) -> None:
    vectors = [deterministic_vector(t, dim) for t in texts]
    write_embeddings_file(path, texts, vectors)


class _ChatStubHandler(BaseHTTPRequestHandler):
    """Chat-completions endpoint returning a deterministic restatement.

    The reply is a pure function of the prompt, so repeated runs produce
    byte-identical datasets. Half the replies carry the "Expected answer:"
    prefix to exercise the client's strip rule.
    """

    def log_message(self, fmt, *args):
        pass

    def do_POST(self):
        if not self.path.endswith("/chat/completions"):
            self.send_response(404)
            self.end_headers()
            return
        length = int(self.headers.get("Content-Length", "0"))
        payload = json.loads(self.rfile.read(length).decode("utf-8"))
        prompt = payload["messages"][0]["content"]
        digest = hashlib.sha256(prompt.encode("utf-8")).hexdigest()[:8]

        marker = "The given sentence is: "
        start = prompt.rfind(marker) + len(marker)
        end = prompt.rfind(". Expected answer:")
        sentence = prompt[start:end]
        flavor = "paraphrased" if "sentimentally similar" in prompt else "shifted"
        text = f"{sentence} ({flavor} {digest})"
        if int(digest, 16) % 2 == 0:
            text = f"Expected answer: {text}"

        body = json.dumps(
            {"choices": [{"message": {"role": "assistant", "content": text}}]}
        ).encode("utf-8")
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)


@pytest.fixture(scope="session")
def chat_stub_url():
    server = ThreadingHTTPServer(("127.0.0.1", 0), _ChatStubHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    host, port = server.server_address
    yield f"http://{host}:{port}"
    server.shutdown()
    server.server_close()
