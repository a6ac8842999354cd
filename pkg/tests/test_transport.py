import json
import threading

import pytest
import requests

from casetimelines.errors import (AuthError, RequestTimeout, TemperatureRejected,
                                  TransientTransportError, TransportError)
from casetimelines.transport import (ExchangeCache, FixtureTransport, HttpChatTransport,
                                     RateLimiter, sha256_text)


class FakeResponse:
    def __init__(self, status, payload=None, text=""):
        self.status_code = status
        self._payload = payload
        self.text = text or json.dumps(payload)

    def json(self):
        if self._payload is None:
            raise ValueError("no json")
        return self._payload


class FakeSession:
    def __init__(self, response=None, exc=None):
        self.response = response
        self.exc = exc
        self.sent = []

    def post(self, url, json=None, headers=None, timeout=None):
        self.sent.append({"url": url, "json": json, "headers": headers, "timeout": timeout})
        if self.exc:
            raise self.exc
        return self.response


OK = {"choices": [{"message": {"role": "assistant", "content": "fever | -72"}}]}


def test_wire_format():
    s = FakeSession(FakeResponse(200, OK))
    t = HttpChatTransport("https://example.test/v1/chat", api_key="sk-secret", session=s)
    assert t.complete("prompt text", "gpt-4-0613", 0.0, 30) == "fever | -72"
    sent = s.sent[0]
    assert sent["json"] == {"model": "gpt-4-0613", "temperature": 0.0,
                            "messages": [{"role": "user", "content": "prompt text"}]}
    assert sent["headers"]["Authorization"] == "Bearer sk-secret"
    assert sent["url"] == "https://example.test/v1/chat"


def test_endpoint_from_env(monkeypatch):
    monkeypatch.setenv("CASETIMELINES_LLM_ENDPOINT", "https://env.test/chat")
    monkeypatch.setenv("CASETIMELINES_LLM_API_KEY", "k")
    s = FakeSession(FakeResponse(200, OK))
    HttpChatTransport(session=s).complete("p", "m", 0, 1)
    assert s.sent[0]["url"] == "https://env.test/chat"


@pytest.mark.parametrize("status,exc", [
    (401, AuthError), (403, AuthError), (429, TransientTransportError),
    (503, TransientTransportError), (404, TransportError),
])
def test_status_mapping(status, exc):
    t = HttpChatTransport("u", api_key="k", session=FakeSession(FakeResponse(status, {"error": "x"})))
    with pytest.raises(exc):
        t.complete("p", "m", 0, 1)


def test_temperature_rejection_detected():
    body = {"error": {"message": "Unsupported value: 'temperature' does not support 0"}}
    t = HttpChatTransport("u", api_key="k", session=FakeSession(FakeResponse(400, body)))
    with pytest.raises(TemperatureRejected):
        t.complete("p", "o1", 0, 1)


def test_timeout_and_connection_errors():
    t = HttpChatTransport("u", api_key="k", session=FakeSession(exc=requests.Timeout()))
    with pytest.raises(RequestTimeout):
        t.complete("p", "m", 0, 1)
    t = HttpChatTransport("u", api_key="k", session=FakeSession(exc=requests.ConnectionError()))
    with pytest.raises(TransientTransportError):
        t.complete("p", "m", 0, 1)


def test_missing_key(monkeypatch):
    monkeypatch.delenv("CASETIMELINES_LLM_API_KEY", raising=False)
    with pytest.raises(AuthError):
        HttpChatTransport("u", session=FakeSession(FakeResponse(200, OK))).complete("p", "m", 0, 1)


def test_key_not_in_error_messages():
    t = HttpChatTransport("u", api_key="sk-very-secret",
                          session=FakeSession(FakeResponse(401, {"e": 1})))
    with pytest.raises(AuthError) as info:
        t.complete("p", "m", 0, 1)
    assert "sk-very-secret" not in str(info.value)


def test_fixture_dir(tmp_path):
    (tmp_path / "a.json").write_text(json.dumps({"contains": "alpha", "response": "A | 1"}))
    (tmp_path / "b.json").write_text(json.dumps({"request_text": "exact prompt",
                                                 "response_text": "B | 2"}))
    t = FixtureTransport.from_dir(tmp_path)
    assert t.complete("exact prompt", "m", 0, 1) == "B | 2"
    assert t.complete("xx alpha yy", "m", 0, 1) == "A | 1"
    with pytest.raises(TransportError):
        t.complete("nothing", "m", 0, 1)


def test_fixture_missing_dir_is_empty(tmp_path):
    t = FixtureTransport.from_dir(tmp_path / "absent")
    with pytest.raises(TransportError):
        t.complete("p", "m", 0, 1)


def test_cache_concurrent_writers(tmp_path):
    cache = ExchangeCache(tmp_path)

    def write(i):
        cache.put({"report_id": "PMC1", "model": "m", "strategy": "s", "round_index": i % 4,
                   "request_text": f"p{i % 4}", "response_text": "r"})

    threads = [threading.Thread(target=write, args=(i,)) for i in range(40)]
    for th in threads:
        th.start()
    for th in threads:
        th.join()
    files = sorted((tmp_path / "PMC1").iterdir())
    assert len(files) == 4 and all(f.suffix == ".json" for f in files)
    assert cache.get("PMC1", "m", "s", 2, "p2")["response_text"] == "r"
    assert cache.get("PMC1", "m", "s", 2, "other") is None


def test_cache_key_components():
    k = ExchangeCache.key
    base = k("r", "m", "s", 0, "p")
    assert len({base, k("r2", "m", "s", 0, "p"), k("r", "m2", "s", 0, "p"),
                k("r", "m", "s2", 0, "p"), k("r", "m", "s", 1, "p"), k("r", "m", "s", 0, "p2")}) == 6
    assert sha256_text("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"


def test_rate_limiter_spacing(monkeypatch):
    slept = []
    monkeypatch.setattr("casetimelines.transport.time.sleep", slept.append)
    clock = iter([100.0, 100.0, 100.0])
    monkeypatch.setattr("casetimelines.transport.time.monotonic", lambda: next(clock))
    rl = RateLimiter(requests_per_minute=60)
    rl.wait()
    rl.wait()
    rl.wait()
    assert slept == [1.0, 2.0]
