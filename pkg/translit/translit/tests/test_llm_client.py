import json

import httpx
import pytest

from ..llm_client import *
from ..metrics import evaluate


def write_fixture(path, entries):
    with open(path, "w", encoding="utf-8") as f:
        for entry in entries:
            f.write(json.dumps(entry, ensure_ascii=False) + "\n")
    return str(path)


@pytest.fixture
def fixture(tmp_path):
    return write_fixture(tmp_path / "responses.jsonl", [
        {"input": "kya haal hai", "response": "کیا حال ہے", "latency_ms": 120},
        {"input": "shukriya", "fail": True, "latency_ms": 5},
        {"input": "shukriya", "fail": True, "latency_ms": 5},
        {"input": "shukriya", "response": "Here is the transliteration:\n\"شکریہ\"", "latency_ms": 80},
        {"input": "dost", "fail": True},
    ])


def no_sleep(delays):
    return delays.append


class TestPrompt:
    def test_templates(self):
        assert build_prompt("roman2ur") == ("Transliterate the following Roman Urdu sentence into Urdu script. "
                                            "Output only the transliteration.")
        request = build_request("kya", "ur2roman", LlmConfig())
        assert request["model"] == "gpt-4o-mini"
        assert request["temperature"] == 1.0 and request["top_p"] == 1.0
        assert set(request) == {"model", "messages", "temperature", "top_p"}
        assert request["messages"][-1] == {"role": "user", "content": "kya"}
        assert "Urdu script sentence into Roman Urdu" in request["messages"][0]["content"]

    def test_unknown_template(self):
        with pytest.raises(LlmError):
            LlmConfig(template_id="v9").validate()

    def test_extract(self):
        assert extract_transliteration("کیا حال ہے") == "کیا حال ہے"
        assert extract_transliteration("Sure:\n`shukriya`\n") == "shukriya"
        with pytest.raises(ValueError):
            extract_transliteration("Transliteration:\n\n")
        for quotes_only in ('""', "`", "''\n``"):
            with pytest.raises(ValueError):
                extract_transliteration(quotes_only)


class TestMockTransport:
    def test_retries_then_succeeds(self, fixture):
        delays = []
        transcript = transliterate_batch([("kya haal hai", "roman2ur"), ("shukriya", "roman2ur")],
                                         LlmConfig(backoff_base=0.5), "mock", fixture, sleep=no_sleep(delays))
        first, second = transcript.items
        assert first.output == "کیا حال ہے"
        assert first.latency_ms == 120.0
        assert first.retries == 0 and not first.failed
        assert second.output == "شکریہ"
        assert second.retries == 2
        assert second.latency_ms == 80.0
        assert sorted(delays) == [0.5, 1.0]

    def test_gives_up(self, fixture):
        transcript = transliterate_batch([("dost", "roman2ur")], LlmConfig(max_retries=2), "mock", fixture,
                                         sleep=no_sleep([]))
        item = transcript.items[0]
        assert item.failed
        assert item.retries == 2
        assert item.raw_response is None
        assert "gave up after 2 retries (HTTP 503)" in item.error
        assert transcript.outputs() == [""]

    def test_unknown_input(self, fixture):
        item = transliterate_batch([("nahi", "roman2ur")], LlmConfig(), "mock", fixture).items[0]
        assert item.failed
        assert item.error == "HTTP 404"
        assert item.retries == 0

    def test_order_preserved(self, tmp_path):
        texts = ["s{}".format(i) for i in range(40)]
        fixture = write_fixture(tmp_path / "many.jsonl",
                                [{"input": t, "response": t.upper(), "latency_ms": (i * 37) % 11}
                                 for i, t in enumerate(texts)])
        transcript = transliterate_batch([(t, "ur2roman") for t in texts], LlmConfig(max_in_flight=8), "mock",
                                         fixture)
        assert [item.input for item in transcript.items] == texts
        assert transcript.outputs() == [t.upper() for t in texts]

    def test_empty_response_flags_item(self, tmp_path):
        fixture = write_fixture(tmp_path / "empty.jsonl", [{"input": "haan", "response": ""},
                                                           {"input": "nahi", "response": "نہیں"}])
        transcript = transliterate_batch([("haan", "roman2ur"), ("nahi", "roman2ur")], LlmConfig(), "mock", fixture)
        assert transcript.items[0].failed
        assert transcript.items[0].error.startswith("unparseable response")
        assert transcript.outputs() == ["", "نہیں"]

    def test_quotes_only_response_flags_item(self, tmp_path):
        fixture = write_fixture(tmp_path / "quotes.jsonl", [{"input": "haan", "response": '""'}])
        transcript = transliterate_batch([("haan", "roman2ur")], LlmConfig(), "mock", fixture)
        assert transcript.items[0].failed
        assert transcript.items[0].error.startswith("unparseable response")
        assert transcript.items[0].output == ""

    def test_needs_fixture(self):
        with pytest.raises(LlmError) as e:
            transliterate_batch([("a", "roman2ur")], LlmConfig(), "mock")
        assert "needs a fixture file" in e.exconly()

    def test_unknown_transport(self, fixture):
        with pytest.raises(LlmError):
            transliterate_batch([("a", "roman2ur")], LlmConfig(), "carrier-pigeon", fixture)


class TestAuth:
    def test_rejected_credentials(self):
        transport = httpx.MockTransport(lambda request: httpx.Response(401, json={"error": "bad key"}))
        with LlmClient(LlmConfig(), transport) as client:
            with pytest.raises(LlmAuthError) as e:
                client.transliterate("kya", "roman2ur")
        assert "HTTP 401" in e.exconly()

    def test_missing_api_key(self, monkeypatch):
        monkeypatch.delenv("TRANSLIT_TEST_KEY", raising=False)
        with pytest.raises(LlmAuthError) as e:
            LlmClient(LlmConfig(api_key_env="TRANSLIT_TEST_KEY"))
        assert "TRANSLIT_TEST_KEY" in e.exconly()

    def test_api_key_header(self, monkeypatch):
        monkeypatch.setenv("TRANSLIT_TEST_KEY", "sk-test")
        client = LlmClient(LlmConfig(api_key_env="TRANSLIT_TEST_KEY"))
        assert client.client.headers["Authorization"] == "Bearer sk-test"
        client.close()


class TestTranscript:
    def test_round_trip(self, fixture, tmp_path):
        transcript = transliterate_batch([("kya haal hai", "roman2ur"), ("dost", "roman2ur")],
                                         LlmConfig(max_retries=0), "mock", fixture)
        path = str(tmp_path / "transcript.jsonl")
        transcript.to_jsonl(path)
        assert Transcript.from_jsonl(path) == transcript

    def test_scoring(self, fixture):
        transcript = transliterate_batch([("kya haal hai", "roman2ur"), ("dost", "roman2ur")],
                                         LlmConfig(max_retries=0), "mock", fixture)
        refs = ["کیا حال ہے", "دوست"]
        assert score_transcript(transcript, refs) == evaluate(["کیا حال ہے", ""], refs)

    def test_alignment(self, fixture):
        transcript = transliterate_batch([("kya haal hai", "roman2ur")], LlmConfig(), "mock", fixture)
        with pytest.raises(TranscriptAlignmentError):
            score_transcript(transcript, ["a", "b"])

    def test_all_correct_and_all_failed(self, tmp_path):
        fixture = write_fixture(tmp_path / "f.jsonl", [{"input": "kya", "response": "کیا"},
                                                       {"input": "dost", "fail": True}])
        good = transliterate_batch([("kya", "roman2ur")], LlmConfig(), "mock", fixture)
        assert score_transcript(good, ["کیا"]).char_bleu == 100.0
        bad = transliterate_batch([("dost", "roman2ur")], LlmConfig(max_retries=0), "mock", fixture)
        assert score_transcript(bad, ["دوست"]).char_bleu == 0.0
