"""Shared test fixtures: dialogue builders and a stub model server."""
from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest

from dstpipe.corpus import (
    SPEAKER_SYSTEM,
    SPEAKER_USER,
    Dialogue,
    DialogueTurn,
    Utterance,
    derive_turn_labels,
)


def make_turn(
    turn_index: int,
    user: str,
    system: str = "",
    state: dict[str, str] | None = None,
) -> DialogueTurn:
    return DialogueTurn(
        turn_index=turn_index,
        system=Utterance(SPEAKER_SYSTEM, system),
        user=Utterance(SPEAKER_USER, user),
        gold_state=state,
    )


def make_dialogue(dialogue_id: str, *turns: DialogueTurn, labeled: bool = True) -> Dialogue:
    domains = frozenset(
        slot.split("-", 1)[0] for t in turns for slot in (t.gold_state or {})
    )
    dialogue = Dialogue(dialogue_id=dialogue_id, turns=tuple(turns), domains=domains)
    return derive_turn_labels(dialogue) if labeled else dialogue


@pytest.fixture
def hotel_dialogue() -> Dialogue:
    return make_dialogue(
        "HOT0001",
        make_turn(1, "i need a hotel in the centre", state={"hotel-area": "centre"}),
        make_turn(
            2,
            "it should have 4 stars",
            system="what star rating would you like ?",
            state={"hotel-area": "centre", "hotel-stars": "4"},
        ),
        make_turn(
            3,
            "actually make it the north please",
            system="i found several 4 star hotels in the centre .",
            state={"hotel-area": "north", "hotel-stars": "4"},
        ),
        make_turn(
            4,
            "thanks , goodbye",
            system="the avalon is in the north . anything else ?",
            state={"hotel-area": "north", "hotel-stars": "4"},
        ),
    )


class _StubHandler(BaseHTTPRequestHandler):
    server_version = "stub/0"

    def _respond(self, status: int, body) -> None:
        payload = body if isinstance(body, bytes) else json.dumps(body).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def do_POST(self) -> None:  # noqa: N802 (http.server API)
        length = int(self.headers.get("Content-Length", 0))
        body = json.loads(self.rfile.read(length) or b"{}")
        self.server.requests.append((self.path, body))
        script = self.server.responses.get(self.path)
        if script is None:
            self._respond(404, {"error": "no route"})
            return
        index = self.server.counters.get(self.path, 0)
        self.server.counters[self.path] = index + 1
        status, payload = script[min(index, len(script) - 1)]
        if callable(payload):
            payload = payload(body)
        self._respond(status, payload)

    def do_GET(self) -> None:  # noqa: N802
        self.server.requests.append((self.path, None))
        script = self.server.responses.get(self.path)
        if script is None:
            self._respond(404, {"error": "no route"})
            return
        index = self.server.counters.get(self.path, 0)
        self.server.counters[self.path] = index + 1
        status, payload = script[min(index, len(script) - 1)]
        self._respond(status, payload)

    def log_message(self, *args) -> None:
        pass


class StubServer:
    """Scriptable HTTP server: path -> list of (status, payload) replies.

    The last scripted reply repeats once the list is exhausted; payloads
    may be callables taking the request body.
    """

    def __init__(self, responses: dict[str, list[tuple[int, object]]]):
        self._httpd = HTTPServer(("127.0.0.1", 0), _StubHandler)
        self._httpd.responses = responses
        self._httpd.requests = []
        self._httpd.counters = {}
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)

    @property
    def requests(self) -> list:
        return self._httpd.requests

    @property
    def endpoint(self) -> str:
        host, port = self._httpd.server_address
        return f"http://{host}:{port}"

    def __enter__(self) -> "StubServer":
        self._thread.start()
        return self

    def __exit__(self, *exc) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()
        self._thread.join(timeout=5)


@pytest.fixture
def stub_server_factory():
    return StubServer
