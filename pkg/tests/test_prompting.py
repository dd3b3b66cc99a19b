import json
from pathlib import Path

import httpx
import numpy as np
import pytest

from embow import prompting
from embow.errors import NetworkError, PrivacyError, UsageError
from embow.retrieval import BagOfWords

GOLDEN = Path(__file__).parent / "golden"

FIXTURE_A_BOW = BagOfWords(entries=[("piano", 0.8121), ("black", 0.7040)])
FIXTURE_B_BOW = BagOfWords(
    entries=[(f"tok{i:02d}", round(0.9 - 0.05 * i, 4)) for i in range(15)])


def render_fixture_a() -> str:
    return prompting.render_prompt_with_obj(prompting.PromptInput(
        object_label="piano", object_confidence=0.9132, bow=FIXTURE_A_BOW))


def render_fixture_b() -> str:
    return prompting.render_prompt_without_obj(FIXTURE_B_BOW)


class TestRendering:
    def test_with_obj_matches_golden_bytes(self):
        golden = (GOLDEN / "prompt_with_obj.txt").read_bytes()
        assert render_fixture_a().encode("utf-8") == golden

    def test_without_obj_matches_golden_bytes(self):
        golden = (GOLDEN / "prompt_without_obj.txt").read_bytes()
        assert render_fixture_b().encode("utf-8") == golden

    def test_with_obj_contains_anchor_line(self):
        assert "Object label: piano (prob: 0.9132)" in render_fixture_a()

    def test_without_obj_never_mentions_object_label(self):
        assert "Object label" not in render_fixture_b()

    def test_with_obj_embeds_the_without_obj_token_block(self):
        with_obj = prompting.render_prompt_with_obj(prompting.PromptInput(
            object_label="piano", object_confidence=0.5, bow=FIXTURE_B_BOW))
        without = render_fixture_b()
        block = without.split("BoW tokens with scores:\n", 1)[1]
        assert "BoW tokens with scores:\n" + block in with_obj

    def test_empty_bow_renders_with_warning(self, caplog):
        with caplog.at_level("WARNING"):
            text = prompting.render_prompt_without_obj(BagOfWords(entries=[]))
        assert text.endswith("BoW tokens with scores:\n")
        assert any("empty" in r.message for r in caplog.records)

    def test_rendering_deterministic(self):
        assert render_fixture_a() == render_fixture_a()
        assert render_fixture_b() == render_fixture_b()

    def test_four_decimal_rendering(self):
        bow = BagOfWords(entries=[("x", 0.5)])
        text = prompting.render_prompt_without_obj(bow)
        assert "x (0.5000)" in text

    def test_prompt_input_validation(self):
        with pytest.raises(UsageError):
            prompting.PromptInput(object_label="p", object_confidence=1.2, bow=FIXTURE_A_BOW)
        too_many = BagOfWords(entries=[(f"t{i}", 0.5) for i in range(16)])
        with pytest.raises(UsageError):
            prompting.PromptInput(object_label="p", object_confidence=0.5, bow=too_many)


def make_cfg(**kw):
    base = dict(endpoint_url="https://llm.example/v1/chat/completions",
                model="mock-model", backoff_base_s=0.0)
    base.update(kw)
    return prompting.LLMConfig(**base)


class TestLLMConfig:
    def test_temperature_fixed_unless_overridden(self):
        with pytest.raises(UsageError):
            make_cfg(temperature=0.7)
        cfg = make_cfg(temperature=0.7, allow_temperature_override=True)
        assert cfg.temperature == 0.7

    def test_request_body_shape(self):
        body = prompting.build_request_body("hello", make_cfg())
        assert body == {
            "model": "mock-model",
            "messages": [{"role": "user", "content": "hello"}],
            "temperature": 0.2,
        }


class TestGenerateCaption:
    def test_mock_roundtrip_and_word_count(self):
        caption = prompting.generate_caption(
            render_fixture_a(), make_cfg(), transport=prompting.mock_transport())
        assert caption.word_count == len(caption.text.split())
        assert 8 <= caption.word_count <= 20
        assert caption.length_ok and caption.retries == 0
        assert caption.model == "mock-model"

    def test_short_caption_flagged_not_rejected(self):
        def handler(request):
            return httpx.Response(200, json={
                "choices": [{"message": {"content": "too short caption"}}]})
        caption = prompting.generate_caption(
            "p", make_cfg(), transport=httpx.MockTransport(handler))
        assert caption.text == "too short caption"
        assert caption.word_count == 3 and not caption.length_ok

    def test_rate_limit_retry_succeeds(self):
        transport = prompting.mock_transport(status_sequence=[429, 200])
        caption = prompting.generate_caption(
            render_fixture_b(), make_cfg(), transport=transport, sleep=lambda s: None)
        assert caption.retries == 1
        assert caption.length_ok

    def test_server_errors_exhaust_retries(self):
        transport = prompting.mock_transport(status_sequence=[500, 500, 500, 500])
        with pytest.raises(NetworkError, match="after ic|after 3|attempts"):
            prompting.generate_caption(
                "p", make_cfg(max_retries=2), transport=transport, sleep=lambda s: None)

    def test_auth_failure_not_retried(self):
        calls = []

        def handler(request):
            calls.append(1)
            return httpx.Response(401)
        with pytest.raises(NetworkError, match="authentication"):
            prompting.generate_caption("p", make_cfg(),
                                       transport=httpx.MockTransport(handler))
        assert len(calls) == 1

    def test_malformed_response(self):
        def handler(request):
            return httpx.Response(200, json={"unexpected": True})
        with pytest.raises(NetworkError, match="malformed"):
            prompting.generate_caption("p", make_cfg(),
                                       transport=httpx.MockTransport(handler))

    def test_bearer_token_from_environment(self):
        seen = {}

        def handler(request):
            seen["auth"] = request.headers.get("Authorization")
            return httpx.Response(200, json={
                "choices": [{"message": {"content": "one two three four five six seven eight"}}]})
        prompting.generate_caption(
            "p", make_cfg(api_key_env="TEST_KEY"),
            transport=httpx.MockTransport(handler), environ={"TEST_KEY": "sk-123"})
        assert seen["auth"] == "Bearer sk-123"

    def test_mock_caption_deterministic(self):
        prompt = render_fixture_b()
        a = prompting.mock_caption_for_prompt(prompt)
        b = prompting.mock_caption_for_prompt(prompt)
        assert a == b
        assert 8 <= len(a.split()) <= 20


class TestPrivacy:
    def payload_for(self, prompt):
        return json.dumps(prompting.build_request_body(prompt, make_cfg())).encode()

    def test_legitimate_with_obj_passes(self):
        rng = np.random.default_rng(0)
        report = prompting.assert_privacy(self.payload_for(render_fixture_a()),
                                          x=rng.normal(size=512), z=rng.normal(size=512))
        assert report.ok and not report.violations
        assert report.float_literal_count == 3  # 2 scores + 1 confidence

    def test_without_obj_counts_fifteen_floats(self):
        report = prompting.assert_privacy(self.payload_for(render_fixture_b()))
        assert report.ok
        assert report.float_literal_count == 15

    def test_planted_latent_leak_detected_and_named(self):
        rng = np.random.default_rng(1)
        z = rng.normal(size=64)
        leaked = render_fixture_b() + "\n" + " ".join(f"{v:.4f}" for v in z[10:13])
        report = prompting.assert_privacy(self.payload_for(leaked), z=z)
        assert not report.ok
        assert any("latent z" in v for v in report.violations)

    def test_planted_embedding_leak_detected_and_named(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=32)
        leaked = render_fixture_a() + "\n" + ", ".join(f"{v:.4f}" for v in x[:3])
        report = prompting.assert_privacy(self.payload_for(leaked), x=x)
        assert not report.ok
        assert any("embedding x" in v for v in report.violations)

    def test_float_budget_enforced(self):
        flood = "p\n" + "\n".join(f"v ({0.1234 + i / 10000:.4f})" for i in range(17))
        report = prompting.assert_privacy(self.payload_for(flood))
        assert not report.ok
        assert any("float literals" in v for v in report.violations)

    def test_send_path_blocks_leaky_prompt(self):
        calls = []

        def handler(request):
            calls.append(1)
            return httpx.Response(200, json={"choices": [{"message": {"content": "x"}}]})
        rng = np.random.default_rng(3)
        x = rng.normal(size=16)
        leaky = "coords: " + " ".join(f"{v:.4f}" for v in x[:5])
        with pytest.raises(PrivacyError):
            prompting.generate_caption(leaky, make_cfg(),
                                       transport=httpx.MockTransport(handler),
                                       privacy_x=x)
        assert calls == []  # nothing ever left the process

    def test_envelope_temperature_not_counted_as_content_float(self):
        # the 0.2 temperature lives in the JSON envelope, outside messages
        report = prompting.assert_privacy(self.payload_for("no numbers here"))
        assert report.float_literal_count == 0
