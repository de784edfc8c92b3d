import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gam.errors import BackendError, MissingBinding, NoMatchingRule
from gam.modelbackend import (
    TEMPLATE_NAMES,
    ChatExchange,
    HttpBackend,
    Message,
    PromptTemplate,
    ScriptedBackend,
    ScriptRule,
    load_template,
    render_prompt,
)
from gam.textcore import ELLIPSIS, count_tokens


def ask(backend, text):
    return backend.complete(ChatExchange.single("sys", text))


def test_scripted_first_match():
    backend = ScriptedBackend([("dog", "Rex."), ("what", "other")])
    assert ask(backend, "what dog?") == "Rex."


def test_scripted_no_match():
    with pytest.raises(NoMatchingRule):
        ask(ScriptedBackend([("cat", "Tom")]), "what dog?")


def test_scripted_default_and_max_uses():
    backend = ScriptedBackend([ScriptRule("q", "first", max_uses=1)], default="later")
    assert [ask(backend, "q"), ask(backend, "q")] == ["first", "later"]


def test_scripted_regex_and_error_rules():
    backend = ScriptedBackend([ScriptRule(r"^## task: plan", "planned", regex=True),
                               ScriptRule("boom", error="timeout")])
    assert ask(backend, "## task: plan\nx") == "planned"
    with pytest.raises(NoMatchingRule):
        ask(backend, "x ## task: plan")
    with pytest.raises(BackendError) as info:
        ask(backend, "boom")
    assert info.value.kind == "timeout"


def test_scripted_only_sees_last_user_message():
    backend = ScriptedBackend([("dog", "Rex.")], default="none")
    exchange = ChatExchange("sys", (Message("user", "dog"), Message("assistant", "ok"), Message("user", "cat")))
    assert backend.complete(exchange) == "none"


def test_scripted_replay_is_pure():
    def run():
        backend = ScriptedBackend([ScriptRule("a", "1", max_uses=2), ("a", "2")], default="d")
        return [ask(backend, t) for t in ["a", "b", "a", "a", "a"]]

    assert run() == run() == ["1", "d", "1", "2", "2"]


def test_scripted_from_json(tmp_path):
    path = tmp_path / "rules.json"
    path.write_text(json.dumps({"rules": [{"match": "dog", "response": {"a": 1}},
                                          {"match": "^x", "regex": True, "response": "X", "max_uses": 1}],
                                "default": "fallback"}))
    backend = ScriptedBackend.from_json(path)
    assert json.loads(ask(backend, "dog")) == {"a": 1}
    assert ask(backend, "xy") == "X"
    assert ask(backend, "xy") == "fallback"


def test_exchange_requires_user_message():
    with pytest.raises(ValueError):
        ChatExchange("sys", (Message("assistant", "hi"),))


def test_templates_load():
    for name in TEMPLATE_NAMES:
        tmpl = load_template(name)
        assert tmpl.template.startswith(f"## task: {name}")
        assert tmpl.system and tmpl.placeholders


def test_plan_prompt_sections_in_order():
    exchange = render_prompt(load_template("plan"), {"request": "REQ", "memory": "MEM", "toolkit": "TOOLS"})
    user = exchange.last_user
    assert user.index("REQ") < user.index("MEM") < user.index("TOOLS")
    assert exchange.temperature == 0.0


def test_missing_binding():
    with pytest.raises(MissingBinding):
        render_prompt(load_template("plan"), {"request": "r", "toolkit": "t"})


def test_oversized_binding_truncated():
    big = " ".join(f"m{i}" for i in range(5000))
    exchange = render_prompt(load_template("plan"), {"request": "find rex", "memory": big, "toolkit": "bm25 tool"},
                             context_budget=600)
    user = exchange.last_user
    assert ELLIPSIS in user
    assert "find rex" in user and "bm25 tool" in user
    assert count_tokens(exchange.system) + count_tokens(user) <= 600


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, 3000), min_size=3, max_size=3), st.integers(300, 2000))
def test_render_never_exceeds_budget(sizes, budget):
    bindings = {name: " ".join(f"{name}{i}" for i in range(n))
                for name, n in zip(["request", "memory", "toolkit"], sizes)}
    exchange = render_prompt(load_template("plan"), bindings, context_budget=budget)
    assert count_tokens(exchange.system) + count_tokens(exchange.last_user) <= budget


def test_custom_template_placeholders():
    tmpl = PromptTemplate("memorize", "s", "a ${x} b $y ${x}")
    assert tmpl.placeholders == ["x", "y"]
    assert render_prompt(tmpl, {"x": "1", "y": "2"}).last_user == "a 1 b 2 1"


# -- HTTP backend against a local stub server ----------------------------------

class StubServer:
    def __init__(self, responses):
        self.responses = list(responses)
        self.requests = []
        stub = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                body = self.rfile.read(int(self.headers["Content-Length"]))
                stub.requests.append((self.path, dict(self.headers), json.loads(body)))
                status, payload = stub.responses.pop(0) if len(stub.responses) > 1 else stub.responses[0]
                data = json.dumps(payload).encode()
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def log_message(self, *args):
                pass

        self.server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.url = f"http://127.0.0.1:{self.server.server_address[1]}/v1"
        threading.Thread(target=self.server.serve_forever, daemon=True).start()

    def close(self):
        self.server.shutdown()
        self.server.server_close()


def ok(text):
    return 200, {"choices": [{"message": {"role": "assistant", "content": text}}]}


@pytest.fixture
def stub():
    servers = []

    def start(*responses):
        server = StubServer(responses)
        servers.append(server)
        return server

    yield start
    for s in servers:
        s.close()


def test_http_round_trip(stub, monkeypatch):
    server = stub(ok("fixed body"))
    monkeypatch.setenv("GAM_API_KEY", "sekret")
    backend = HttpBackend(base_url=server.url, model="m1")
    assert backend.complete(ChatExchange.single("be brief", "hello", max_output_tokens=7)) == "fixed body"
    path, headers, body = server.requests[0]
    assert path == "/v1/chat/completions"
    assert headers["Authorization"] == "Bearer sekret"
    assert body == {"model": "m1", "temperature": 0.0, "max_tokens": 7,
                    "messages": [{"role": "system", "content": "be brief"}, {"role": "user", "content": "hello"}]}


def test_http_base_url_from_env(stub, monkeypatch):
    server = stub(ok("env"))
    monkeypatch.setenv("GAM_BASE_URL", server.url)
    assert HttpBackend().complete(ChatExchange.single("", "x")) == "env"


def test_http_retries_server_errors(stub):
    server = stub((503, {"error": "busy"}), (500, {}), ok("third time"))
    backend = HttpBackend(base_url=server.url, backoff=0.01)
    assert backend.complete(ChatExchange.single("", "x")) == "third time"
    assert len(server.requests) == 3


def test_http_gives_up_after_three_attempts(stub):
    server = stub((503, {}))
    backend = HttpBackend(base_url=server.url, backoff=0.01)
    with pytest.raises(BackendError) as info:
        backend.complete(ChatExchange.single("", "x"))
    assert info.value.kind == "status" and info.value.status == 503
    assert len(server.requests) == 3


@pytest.mark.parametrize("status", [400, 401, 404, 429])
def test_http_no_retry_on_4xx(stub, status):
    server = stub((status, {"error": "nope"}))
    backend = HttpBackend(base_url=server.url, backoff=0.01)
    with pytest.raises(BackendError) as info:
        backend.complete(ChatExchange.single("", "x"))
    assert info.value.status == status
    assert len(server.requests) == 1


def test_http_transport_error():
    backend = HttpBackend(base_url="http://127.0.0.1:9", backoff=0.0, timeout=1.0)
    with pytest.raises(BackendError) as info:
        backend.complete(ChatExchange.single("", "x"))
    assert info.value.kind in ("transport", "timeout")


def test_http_malformed_body(stub):
    server = stub((200, {"unexpected": True}))
    with pytest.raises(BackendError):
        HttpBackend(base_url=server.url).complete(ChatExchange.single("", "x"))
