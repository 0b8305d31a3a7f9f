import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest

from kgxbench import fsv, kge, lpx
from kgxbench.errors import VerifierTransportError
from kgxbench.kg import Query, Triple


def items_on_chain(chain, n=4):
    predictions = [t for t in chain.test[:n]]
    explanations = [lpx.Explanation.of([Triple(t.subject, 1, t.object)]) for t in predictions]
    return predictions, explanations


def lp_labels(chain, model, predictions):
    return {
        prediction: chain.entity_labels[kge.lp(model, chain, Query(prediction.subject, prediction.predicate))]
        for prediction in predictions
    }


def prompt_pair(chain, model, prediction, explanation, config):
    query = Query(prediction.subject, prediction.predicate)
    text = fsv.verbalize(chain, explanation)
    return (
        fsv.build_prompt(chain, model, query, "", config).text,
        fsv.build_prompt(chain, model, query, text, config).text,
    )


def test_explanation_only_answers_give_all_plus_one(chain, chain_model):
    config = fsv.EvalConfig(batch_size=3, seed=0)
    predictions, explanations = items_on_chain(chain)
    answers = lp_labels(chain, chain_model, predictions)
    table = {}
    for prediction, explanation in zip(predictions, explanations):
        without, with_x = prompt_pair(chain, chain_model, prediction, explanation, config)
        table[without] = ""
        table[with_x] = answers[prediction]
    verifier = fsv.ScriptedVerifier(table=table)
    vector = fsv.evaluate(predictions, explanations, chain, chain_model, verifier, config)
    assert list(vector) == [1] * len(predictions)


def test_always_correct_answers_give_all_zero(chain, chain_model):
    config = fsv.EvalConfig(batch_size=2, seed=0)
    predictions, explanations = items_on_chain(chain)
    answers = lp_labels(chain, chain_model, predictions)

    def policy(prompt):
        for prediction, label in answers.items():
            line = f"({chain.entity_labels[prediction.subject]}, next, ?)"
            if line in prompt:
                return label
        return ""

    vector = fsv.evaluate(predictions, explanations, chain, chain_model, fsv.ScriptedVerifier(policy=policy), config)
    assert list(vector) == [0] * len(predictions)


def test_four_item_script_matches_hand_applied_fsv(chain, chain_model):
    config = fsv.EvalConfig(batch_size=3, seed=0)
    predictions, explanations = items_on_chain(chain, n=4)
    answers = lp_labels(chain, chain_model, predictions)
    # item scripts: (without correct?, with correct?) -> expected fsv
    script = [(False, True), (True, True), (True, False), (False, False)]
    expected = [1, 0, -1, 0]
    table = {}
    for (prediction, explanation), (ok_without, ok_with) in zip(zip(predictions, explanations), script):
        without, with_x = prompt_pair(chain, chain_model, prediction, explanation, config)
        table[without] = answers[prediction] if ok_without else "wrong"
        table[with_x] = answers[prediction] if ok_with else "wrong"
    vector = fsv.evaluate(predictions, explanations, chain, chain_model, fsv.ScriptedVerifier(table=table), config)
    assert list(vector) == expected


def test_output_length_matches_and_permutation_commutes(chain, chain_model):
    config = fsv.EvalConfig(batch_size=2, seed=0)
    predictions, explanations = items_on_chain(chain, n=4)
    answers = lp_labels(chain, chain_model, predictions)
    table = {}
    script = [(False, True), (True, True), (False, False), (True, False)]
    for (prediction, explanation), (ok_without, ok_with) in zip(zip(predictions, explanations), script):
        without, with_x = prompt_pair(chain, chain_model, prediction, explanation, config)
        table[without] = answers[prediction] if ok_without else ""
        table[with_x] = answers[prediction] if ok_with else ""
    verifier = fsv.ScriptedVerifier(table=table)
    base = list(fsv.evaluate(predictions, explanations, chain, chain_model, verifier, config))
    assert len(base) == len(predictions)
    order = [2, 0, 3, 1]
    permuted = list(
        fsv.evaluate(
            [predictions[i] for i in order],
            [explanations[i] for i in order],
            chain,
            chain_model,
            verifier,
            config,
        )
    )
    assert permuted == [base[i] for i in order]


@pytest.mark.parametrize("batch_size", [1, 2, 3, 7])
def test_batch_size_never_changes_results(chain, chain_model, batch_size):
    predictions, explanations = items_on_chain(chain, n=4)
    reference = None
    config = fsv.EvalConfig(batch_size=batch_size, seed=0)
    answers = lp_labels(chain, chain_model, predictions)
    table = {}
    for prediction, explanation in zip(predictions, explanations):
        without, with_x = prompt_pair(chain, chain_model, prediction, explanation, config)
        table[without] = ""
        table[with_x] = answers[prediction]
    vector = list(fsv.evaluate(predictions, explanations, chain, chain_model, fsv.ScriptedVerifier(table=table), config))
    assert vector == [1] * 4


def test_concurrent_batches_preserve_order(chain, chain_model):
    config = fsv.EvalConfig(batch_size=1, seed=0)
    predictions, explanations = items_on_chain(chain, n=4)
    answers = lp_labels(chain, chain_model, predictions)
    table = {}
    for prediction, explanation in zip(predictions, explanations):
        without, with_x = prompt_pair(chain, chain_model, prediction, explanation, config)
        table[without] = ""
        table[with_x] = answers[prediction]
    verifier = fsv.ScriptedVerifier(table=table)
    sequential = fsv.evaluate_records(predictions, explanations, chain, chain_model, verifier, config)
    concurrent = fsv.evaluate_records(
        predictions, explanations, chain, chain_model, verifier, config, max_in_flight=4
    )
    assert [r.fsv for r in concurrent] == [r.fsv for r in sequential]


class FlakyVerifier(fsv.Verifier):
    def __init__(self, fail_times, answer=""):
        self.fail_times = fail_times
        self.calls = 0
        self.answer = answer

    def simulate_batch(self, prompts):
        self.calls += 1
        if self.calls <= self.fail_times:
            raise VerifierTransportError("boom")
        return [self.answer] * len(prompts)


def test_transport_errors_are_retried(chain, chain_model):
    predictions, explanations = items_on_chain(chain, n=1)
    config = fsv.EvalConfig(batch_size=8, seed=0)
    verifier = FlakyVerifier(fail_times=2)
    vector = fsv.evaluate(
        predictions, explanations, chain, chain_model, verifier, config, retry_backoff=0.001
    )
    assert verifier.calls == 3
    assert len(vector) == 1


def test_persistent_transport_failure_counts_as_incorrect(chain, chain_model, caplog):
    predictions, explanations = items_on_chain(chain, n=2)
    config = fsv.EvalConfig(batch_size=8, seed=0)
    verifier = FlakyVerifier(fail_times=99)
    records = fsv.evaluate_records(
        predictions, explanations, chain, chain_model, verifier, config, retry_backoff=0.001
    )
    assert [r.fsv for r in records] == [0, 0]
    assert all(r.without.correct == 0 and r.with_explanation.correct == 0 for r in records)


def test_length_mismatch_is_rejected(chain, chain_model):
    with pytest.raises(ValueError):
        fsv.evaluate([chain.test[0]], [], chain, chain_model, fsv.ScriptedVerifier(), fsv.EvalConfig())


def test_hash_mock_verifier_is_deterministic():
    verifier = fsv.HashMockVerifier(("a", "b", "c"))
    assert verifier.simulate("prompt one") == verifier.simulate("prompt one")
    answers = {verifier.simulate(f"prompt {i}") for i in range(20)}
    assert answers <= {"a", "b", "c"}


# -- remote verifier wire contract ----------------------------------------------

class _Handler(BaseHTTPRequestHandler):
    requests: list = []
    behavior = {"status": 200, "body": None}

    def do_POST(self):
        length = int(self.headers["Content-Length"])
        payload = json.loads(self.rfile.read(length))
        _Handler.requests.append({"path": self.path, "auth": self.headers.get("Authorization"), "body": payload})
        status = _Handler.behavior["status"]
        body = _Handler.behavior["body"]
        if body is None:
            body = {"choices": [{"message": {"content": "Paris"}}]}
        data = json.dumps(body).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args):
        pass


@pytest.fixture
def http_server():
    server = HTTPServer(("127.0.0.1", 0), _Handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    _Handler.requests = []
    _Handler.behavior = {"status": 200, "body": None}
    yield f"http://127.0.0.1:{server.server_port}/v1/chat/completions"
    server.shutdown()


def test_remote_verifier_request_shape(http_server, monkeypatch):
    monkeypatch.setenv("VERIFIER_API_TOKEN", "sekrit")
    verifier = fsv.RemoteVerifier(http_server, model="toy-llm", max_tokens=16)
    assert verifier.simulate("who?") == "Paris"
    (request,) = _Handler.requests
    assert request["auth"] == "Bearer sekrit"
    assert request["body"] == {
        "model": "toy-llm",
        "messages": [{"role": "user", "content": "who?"}],
        "temperature": 0,
        "max_tokens": 16,
    }


def test_remote_verifier_omits_auth_without_token(http_server, monkeypatch):
    monkeypatch.delenv("VERIFIER_API_TOKEN", raising=False)
    fsv.RemoteVerifier(http_server, model="toy-llm").simulate("q")
    assert _Handler.requests[-1]["auth"] is None


def test_remote_verifier_http_error_is_transport_error(http_server):
    _Handler.behavior = {"status": 500, "body": {"error": "overloaded"}}
    with pytest.raises(VerifierTransportError):
        fsv.RemoteVerifier(http_server, model="toy-llm").simulate("q")


def test_remote_verifier_malformed_body_is_transport_error(http_server):
    _Handler.behavior = {"status": 200, "body": {"unexpected": True}}
    with pytest.raises(VerifierTransportError):
        fsv.RemoteVerifier(http_server, model="toy-llm").simulate("q")


def test_remote_verifier_unreachable_endpoint_is_transport_error():
    verifier = fsv.RemoteVerifier("http://127.0.0.1:1/nope", model="toy-llm", timeout=0.2)
    with pytest.raises(VerifierTransportError):
        verifier.simulate("q")
