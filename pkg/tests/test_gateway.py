from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor

import httpx
import pytest

from ados_scoring.errors import AuthError, ProtocolError, RateLimitedExhausted, ReplayMiss, TimeoutExhausted
from ados_scoring.gateway import (
    ExchangeRecord,
    FixtureGateway,
    LlmGateway,
    ModelEndpoint,
    ReplayGateway,
    RollingWindowLimiter,
    request_id_for,
)
from ados_scoring.prompts import PromptBundle

from helpers import ENV, ScriptedServer, chat


def bundle(n=0):
    return PromptBundle(f"system {n}", f"user {n}", 4)


def endpoint(url, **kw):
    kw.setdefault("backoff_base_s", 0.01)
    return ModelEndpoint(base_url=url, model_name="m", **kw)


class TestEndpoint:
    def test_url_join(self):
        assert ModelEndpoint("http://x/v1/", "m").url == "http://x/v1/chat/completions"

    @pytest.mark.parametrize("field, value", [("timeout_s", 0), ("max_retries", -1), ("max_concurrent", 0), ("requests_per_minute", 0)])
    def test_validation(self, field, value):
        with pytest.raises(ValueError):
            ModelEndpoint("http://x", "m", **{field: value})


class TestLiveServer:
    def test_success_and_record(self, tmp_path):
        with ScriptedServer(reply="A4: 2 — fine") as srv, LlmGateway(endpoint(srv.url), record_dir=tmp_path, env=ENV) as gw:
            text, rec = gw.complete(bundle(), key="s1/only_scoring")
        assert text == "A4: 2 — fine"
        assert rec.attempt_count == 1 and rec.response_text == text
        assert srv.requests[0]["auth"] == "Bearer sk-test"
        msgs = srv.requests[0]["body"]["messages"]
        assert [m["role"] for m in msgs] == ["system", "user"]
        assert "temperature" not in srv.requests[0]["body"]
        saved = json.loads((tmp_path / f"{rec.request_id}.json").read_text())
        assert ExchangeRecord.from_json(saved) == rec
        assert rec.request_id == request_id_for(bundle(), "s1/only_scoring")
        assert rec.request_id.startswith("s1_only_scoring-")

    def test_retry_429_then_success(self, tmp_path):
        delays = []
        script = [(429, {"error": "slow"}, {}), (429, {"error": "slow"}, {"Retry-After": "0.05"})]
        with ScriptedServer(script) as srv:
            gw = LlmGateway(endpoint(srv.url, max_retries=3), env=ENV, sleep=delays.append)
            text, rec = gw.complete(bundle())
        assert text == "A4: 1"
        assert rec.attempt_count == 3 and len(srv.requests) == 3
        assert [a["status"] for a in rec.attempts] == [429, 429, 200]
        assert delays == [0.01, 0.05]

    def test_429_exhausted(self, tmp_path):
        script = [(429, {}, {})] * 3
        with ScriptedServer(script) as srv:
            gw = LlmGateway(endpoint(srv.url, max_retries=2), record_dir=tmp_path, env=ENV, sleep=lambda s: None)
            with pytest.raises(RateLimitedExhausted) as err:
                gw.complete(bundle(), key="k")
        assert len(srv.requests) == 3
        assert err.value.record.attempt_count == 3
        assert (tmp_path / f"{err.value.record.request_id}.json").exists()

    @pytest.mark.parametrize("status", [401, 403])
    def test_auth_failure_not_retried(self, status):
        with ScriptedServer([(status, {"error": "bad key"}, {})]) as srv:
            gw = LlmGateway(endpoint(srv.url), env=ENV, sleep=lambda s: None)
            with pytest.raises(AuthError):
                gw.complete(bundle())
        assert len(srv.requests) == 1

    def test_missing_key(self):
        gw = LlmGateway(endpoint("http://127.0.0.1:9"), env={})
        with pytest.raises(AuthError, match="ADOS_LLM_API_KEY"):
            gw.check_credentials()
        with pytest.raises(AuthError):
            gw.complete(bundle())
        assert gw.network_calls == 0

    def test_client_error_not_retried(self):
        with ScriptedServer([(400, {"error": "bad"}, {})]) as srv:
            gw = LlmGateway(endpoint(srv.url), env=ENV, sleep=lambda s: None)
            with pytest.raises(ProtocolError) as err:
                gw.complete(bundle())
        assert err.value.status == 400 and len(srv.requests) == 1

    def test_server_error_exhausted(self):
        with ScriptedServer([(503, {}, {})] * 4) as srv:
            gw = LlmGateway(endpoint(srv.url, max_retries=3), env=ENV, sleep=lambda s: None)
            with pytest.raises(ProtocolError) as err:
                gw.complete(bundle())
        assert err.value.status == 503 and len(srv.requests) == 4

    def test_malformed_success_body(self):
        with ScriptedServer([(200, {"unexpected": True}, {})]) as srv:
            gw = LlmGateway(endpoint(srv.url), env=ENV)
            with pytest.raises(ProtocolError):
                gw.complete(bundle())

    def test_timeout(self):
        with ScriptedServer(delay=0.5) as srv:
            gw = LlmGateway(endpoint(srv.url, timeout_s=0.05, max_retries=1), env=ENV, sleep=lambda s: None)
            with pytest.raises(TimeoutExhausted) as err:
                gw.complete(bundle())
        assert err.value.record.attempt_count == 2

    def test_concurrency_ceiling(self):
        with ScriptedServer(delay=0.05) as srv:
            gw = LlmGateway(endpoint(srv.url, max_concurrent=2, requests_per_minute=1000), env=ENV)
            with ThreadPoolExecutor(8) as pool:
                list(pool.map(lambda n: gw.complete(bundle(n)), range(12)))
        assert len(srv.requests) == 12
        assert srv.peak == 2
        assert gw.network_calls == 12

    def test_replay_reproduces_without_network(self, tmp_path):
        live_dir, replay_dir = tmp_path / "live", tmp_path / "replay"
        with ScriptedServer() as srv:
            srv.reply = "A4: 3 — replayed"
            gw = LlmGateway(endpoint(srv.url), record_dir=live_dir, env=ENV)
            live = [gw.complete(bundle(n), key=f"s{n}/m")[0] for n in range(3)]
        replay = ReplayGateway.from_dir(live_dir, record_dir=replay_dir)
        assert [replay.complete(bundle(n), key=f"s{n}/m")[0] for n in range(3)] == live
        assert replay.network_calls == 0
        assert sorted(p.name for p in live_dir.iterdir()) == sorted(p.name for p in replay_dir.iterdir())
        with pytest.raises(ReplayMiss):
            replay.complete(bundle(99))


class TestMockTransport:
    def test_extra_body_passed_through(self):
        seen = []

        def handler(request):
            seen.append(json.loads(request.content))
            return httpx.Response(200, json=chat("ok"))

        ep = ModelEndpoint("http://mock", "m", extra_body={"max_tokens": 64})
        LlmGateway(ep, transport=httpx.MockTransport(handler), env=ENV).complete(bundle())
        assert seen[0]["max_tokens"] == 64 and seen[0]["model"] == "m"

    def test_transport_error_retried(self):
        calls = []

        def handler(request):
            calls.append(1)
            if len(calls) == 1:
                raise httpx.ConnectError("refused")
            return httpx.Response(200, json=chat("ok"))

        gw = LlmGateway(ModelEndpoint("http://mock", "m"), transport=httpx.MockTransport(handler), env=ENV, sleep=lambda s: None)
        assert gw.complete(bundle())[1].attempt_count == 2


class TestRateLimiter:
    def test_rolling_window(self):
        now = [0.0]
        slept = []

        def sleep(s):
            slept.append(s)
            now[0] += s

        lim = RollingWindowLimiter(3, window=60.0, clock=lambda: now[0], sleep=sleep)
        stamps = []
        for _ in range(7):
            lim.acquire()
            stamps.append(now[0])
        assert stamps == [0.0, 0.0, 0.0, 60.0, 60.0, 60.0, 120.0]
        for i, t in enumerate(stamps):
            assert sum(1 for u in stamps if t - 60.0 < u <= t) <= 3, i

    def test_gateway_uses_limiter(self):
        now = [0.0]

        def sleep(s):
            now[0] += s

        ep = ModelEndpoint("http://mock", "m", requests_per_minute=2)
        transport = httpx.MockTransport(lambda r: httpx.Response(200, json=chat("ok")))
        gw = LlmGateway(ep, transport=transport, env=ENV, clock=lambda: now[0], sleep=sleep)
        for n in range(5):
            gw.complete(bundle(n))
        assert now[0] == pytest.approx(120.0)


class TestFixtureGateway:
    def test_serves_by_key(self, tmp_path):
        gw = FixtureGateway({"s1/only_scoring": "A4: 0"}, record_dir=tmp_path)
        text, rec = gw.complete(bundle(), key="s1/only_scoring")
        assert text == "A4: 0" and rec.replayed and rec.timestamp is None
        assert (tmp_path / f"{rec.request_id}.json").exists()
        with pytest.raises(ReplayMiss):
            gw.complete(bundle(), key="s2/only_scoring")

    def test_from_corpus_dir(self, corpus_dir, synthetic_corpus):
        sid = synthetic_corpus.sessions[0].session_id
        gw = FixtureGateway.from_corpus_dir(corpus_dir)
        text, _ = gw.complete(bundle(), key=f"{sid}/only_scoring")
        assert text == synthetic_corpus.fixtures[sid]["only_scoring"]
