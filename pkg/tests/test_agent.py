import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from commitsurvey.agent import (
    TRUNCATION_MARKER,
    BackendConfig,
    BackendError,
    ConfigError,
    Prompt,
    RateLimiter,
    RunOptions,
    build_prompt,
    complete,
    http_complete,
    parse_response,
    parse_rules,
    prompt_facts,
    run_survey,
    with_fault,
)
from commitsurvey.dataset import build_dataset, merge_datasets, write_csv

from .conftest import make_commit

SCRIPTED = BackendConfig(rules="builtin:ebpf", requests_per_minute=10**6)
VALID = {
    "summary": "Fix a bug",
    "keywords": ["verifier"],
    "commit_classification": "a",
    "commit_complexity": "Simple (affects 1-20 lines or 1-2 files)",
    "major_related_implementation_component": "a",
    "major_related_logic_component": "a",
    "usecases_or_submodule_events": ["n"],
}


def test_prompt_is_deterministic(schema):
    c = make_commit(1, files=[("kernel/bpf/verifier.c", 3, 1)])
    assert build_prompt(schema, c) == build_prompt(schema, make_commit(
        1, files=[("kernel/bpf/verifier.c", 3, 1)]))


def test_prompt_truncation(schema):
    c = make_commit(1, body="x" * (200 * 1024))
    p = build_prompt(schema, c, 32 * 1024)
    assert p.user_text.endswith(TRUNCATION_MARKER)
    assert len(p.user_text.encode()) <= 32 * 1024 + len(TRUNCATION_MARKER)


def test_system_text_lists_options(schema):
    p = build_prompt(schema, make_commit(1))
    assert "Code cleanup or refactoring" in p.system_text
    assert "I'm not sure" in p.system_text


def test_prompt_facts_recover_commit(schema):
    c = make_commit(7, subject="bpf: x", body="Body\n\nMore: yes", parents=2,
                    files=[("a.c", 1, 2), ("b.c", 0, 4)])
    f = prompt_facts(build_prompt(schema, c).user_text)
    assert (f.hash, f.parents, f.subject, f.body) == (c.hash, 2, "bpf: x", "Body\n\nMore: yes")
    assert f.lines_changed == 7


def test_scripted_merge_answer(schema):
    c = make_commit(1, subject="Merge branch 'bpf-fixes'", parents=2)
    raw = complete(SCRIPTED, build_prompt(schema, c))
    parsed = parse_response(schema, raw)
    codes = {a.question_id: a.codes for a in parsed.answers}
    assert codes["commit_classification"] == ("i",)
    assert codes["commit_complexity"] == ("d",)
    assert complete(SCRIPTED, build_prompt(schema, c)) == raw


def test_scripted_answers_validate(schema, corpus):
    for c in corpus[:100]:
        assert parse_response(schema, complete(SCRIPTED, build_prompt(schema, c))).ok


def test_parse_valid(schema):
    r = parse_response(schema, json.dumps(VALID))
    assert r.ok and len(r.answers) == 7
    assert r.answers[3].codes == ("a",)


def test_parse_missing_key(schema):
    d = dict(VALID)
    del d["commit_complexity"]
    r = parse_response(schema, json.dumps(d))
    assert not r.ok and r.violations == ["missing answer: commit_complexity"]


def test_parse_code_fence(schema):
    assert parse_response(schema, "Here:\n```json\n" + json.dumps(VALID) + "\n```\n").ok


def test_parse_malformed_and_unknown_keys(schema):
    assert parse_response(schema, "no json").violations == [
        "malformed response: no JSON object found"]
    r = parse_response(schema, json.dumps(dict(VALID, extra=1)))
    assert r.ok and r.notes


def test_parse_unmappable_value(schema):
    r = parse_response(schema, json.dumps(dict(VALID, commit_classification="kernel magic")))
    assert not r.ok and "commit_classification" in r.violations[0]


# -- rules --------------------------------------------------------------------------

def test_rules_need_default():
    with pytest.raises(ConfigError, match="unconditional default"):
        parse_rules('[[rule]]\nmin_parents = 2\nanswers = {summary = "x"}\n')


def test_rules_unknown_key():
    with pytest.raises(ConfigError, match="unknown keys"):
        parse_rules('[[rule]]\nbogus = 1\nanswers = {summary = "x"}\n')


def test_with_fault_unknown():
    with pytest.raises(ConfigError):
        with_fault("explode")


# -- feedback loop -------------------------------------------------------------------

def _cfg(fault, retries=3):
    return BackendConfig(rules_text=with_fault(fault), requests_per_minute=10**6,
                         max_retries=retries)


def test_malformed_once_recovers(schema, corpus):
    res = run_survey(_cfg("malformed_once"), schema, corpus[:20])
    assert all(r.ok and r.attempts == 2 for r in res.responses)
    assert [e["attempt"] for e in res.log[:2]] == [1, 2]
    assert res.log[0]["status"] == "invalid" and res.log[1]["status"] == "ok"


def test_missing_key_once_recovers(schema, corpus):
    res = run_survey(_cfg("missing_key_once"), schema, corpus[:5])
    assert all(r.ok and r.attempts == 2 for r in res.responses)
    assert res.log[0]["violations"][0].startswith("missing answer: ")


def test_always_malformed_fails(schema, corpus):
    res = run_survey(_cfg("always_malformed"), schema, corpus[:10])
    assert res.failed == 10
    for r in res.responses:
        assert r.attempts == 3 and r.failure_reason and r.answers == ()
    assert len(res.log) == 30


def test_correction_turns_carry_violations(schema):
    seen = []

    def completer(config, prompt: Prompt):
        seen.append(prompt)
        from commitsurvey.agent import Completion
        return Completion("{}" if prompt.attempt == 1 else json.dumps(VALID))

    res = run_survey(SCRIPTED, schema, [make_commit(1)], RunOptions(completer=completer))
    assert res.responses[0].attempts == 2
    msgs = seen[1].messages()
    assert [m["role"] for m in msgs] == ["system", "user", "assistant", "user"]
    assert "missing answer: summary" in msgs[-1]["content"]


def test_backend_error_counts_as_attempt(schema):
    def completer(config, prompt):
        raise BackendError("boom")

    res = run_survey(SCRIPTED, schema, [make_commit(1)], RunOptions(completer=completer))
    r = res.responses[0]
    assert r.status == "failed" and r.attempts == 3 and "boom" in r.failure_reason


# -- determinism -----------------------------------------------------------------------

def _csv_bytes(schema, corpus, workers, tmp_path, name):
    res = run_survey(SCRIPTED, schema, corpus, RunOptions(workers=workers))
    path = tmp_path / name
    ds = build_dataset(schema, res.commits, res.responses)
    write_csv(merge_datasets(ds.replace_rows([]), ds), path)
    return path.read_bytes()


def test_worker_count_invariance(schema, corpus, tmp_path):
    a = _csv_bytes(schema, corpus, 1, tmp_path, "w1.csv")
    b = _csv_bytes(schema, corpus, 8, tmp_path, "w8.csv")
    assert a == b


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 60), st.integers(1, 4))
def test_resume_equals_full_run(schema, corpus, cut, workers):
    commits = corpus[:60]
    full = run_survey(SCRIPTED, schema, commits)
    first = run_survey(SCRIPTED, schema, commits[:cut])
    done = frozenset(r.commit_hash for r in first.responses)
    rest = run_survey(SCRIPTED, schema, commits, RunOptions(workers=workers, skip_hashes=done))
    assert rest.skipped == cut
    full_ds = build_dataset(schema, full.commits, full.responses)
    merged = merge_datasets(build_dataset(schema, first.commits, first.responses),
                            build_dataset(schema, rest.commits, rest.responses))
    assert merged == merge_datasets(full_ds.replace_rows([]), full_ds)


# -- configuration ----------------------------------------------------------------------

def test_missing_api_key(monkeypatch):
    monkeypatch.delenv("CS_TEST_KEY", raising=False)
    cfg = BackendConfig(kind="http_chat", base_url="http://127.0.0.1:9", api_key_env="CS_TEST_KEY")
    with pytest.raises(ConfigError, match="CS_TEST_KEY"):
        cfg.check()


@pytest.mark.parametrize("kw", [{"kind": "magic"}, {"temperature": 2.0},
                                {"max_retries": 0}, {"requests_per_minute": 0}])
def test_bad_config(kw):
    with pytest.raises(ConfigError):
        BackendConfig(rules="builtin:ebpf", **kw).check()


def test_rate_limiter_waits():
    now = [0.0]
    sleeps = []

    def sleep(s):
        sleeps.append(s)
        now[0] += s

    rl = RateLimiter(60, clock=lambda: now[0], sleep=sleep)
    for _ in range(61):
        rl.acquire()
    assert sleeps and abs(sum(sleeps) - 1.0) < 1e-9


# -- http backend -------------------------------------------------------------------------

class _Stub(BaseHTTPRequestHandler):
    replies: list = []
    requests: list = []

    def do_POST(self):
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        type(self).requests.append((self.path, self.headers["Authorization"], body))
        status, payload = type(self).replies.pop(0)
        data = json.dumps(payload).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args):
        pass


@pytest.fixture
def stub_server(monkeypatch):
    monkeypatch.setenv("CS_STUB_KEY", "secret")
    server = HTTPServer(("127.0.0.1", 0), _Stub)
    _Stub.replies, _Stub.requests = [], []
    t = threading.Thread(target=server.serve_forever, daemon=True)
    t.start()
    yield f"http://127.0.0.1:{server.server_address[1]}/v1", _Stub
    server.shutdown()
    server.server_close()


def _http_cfg(url, **kw):
    return BackendConfig(kind="http_chat", model="m", base_url=url, api_key_env="CS_STUB_KEY",
                         timeout=5, backoff_base=0.0, **kw)


def test_http_returns_content_verbatim(schema, stub_server):
    url, stub = stub_server
    canned = json.dumps(VALID)
    stub.replies.append((200, {"choices": [{"message": {"content": canned}}],
                               "usage": {"total_tokens": 5}}))
    out = http_complete(_http_cfg(url), build_prompt(schema, make_commit(1)))
    assert out.text == canned and out.usage == {"total_tokens": 5}
    path, auth, body = stub.requests[0]
    assert path == "/v1/chat/completions" and auth == "Bearer secret"
    assert body["model"] == "m" and body["messages"][0]["role"] == "system"


def test_http_retries_server_errors(schema, stub_server):
    url, stub = stub_server
    stub.replies += [(503, {}), (429, {}),
                     (200, {"choices": [{"message": {"content": "{}"}}]})]
    out = http_complete(_http_cfg(url), build_prompt(schema, make_commit(1)), sleep=lambda s: None)
    assert out.text == "{}" and len(stub.requests) == 3


def test_http_gives_up(schema, stub_server):
    url, stub = stub_server
    stub.replies += [(500, {})] * 3
    with pytest.raises(BackendError, match="HTTP 500"):
        http_complete(_http_cfg(url), build_prompt(schema, make_commit(1)), sleep=lambda s: None)


def test_http_client_error_not_retried(schema, stub_server):
    url, stub = stub_server
    stub.replies.append((400, {"error": "bad"}))
    with pytest.raises(BackendError, match="HTTP 400"):
        http_complete(_http_cfg(url), build_prompt(schema, make_commit(1)))
    assert len(stub.requests) == 1


def test_http_survey_end_to_end(schema, stub_server):
    url, stub = stub_server
    stub.replies += [(200, {"choices": [{"message": {"content": "not json"}}]}),
                     (200, {"choices": [{"message": {"content": json.dumps(VALID)}}]})]
    res = run_survey(_http_cfg(url, requests_per_minute=600), schema, [make_commit(1)])
    assert res.responses[0].ok and res.responses[0].attempts == 2
