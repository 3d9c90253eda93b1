from __future__ import annotations

import functools
import itertools
import unicodedata

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ados_scoring.errors import LexiconLoadError, NoChildSpeech, UnknownFeatureName
from ados_scoring.features import (
    FEATURE_NAMES,
    FeatureConfig,
    FeatureVector,
    alternation_rate,
    echolalia_rate,
    extract_features,
    feature_config_from_json,
    is_question,
    levenshtein,
    normalized_edit_similarity,
    participation_rate,
    question_counts,
    response_rate,
    sentiment_rates,
    suggestion_rate,
)
from ados_scoring.sentiment import Lexicon, LexiconSentimentAnalyzer, tokenize
from ados_scoring.transcript import Speaker, normalize

from conftest import make_transcript

CFG = FeatureConfig()


def oracle_levenshtein(a: str, b: str) -> int:
    """Textbook recursive definition, memoized; only for short strings."""

    @functools.lru_cache(maxsize=None)
    def d(i: int, j: int) -> int:
        if i == 0:
            return j
        if j == 0:
            return i
        return min(d(i - 1, j) + 1, d(i, j - 1) + 1, d(i - 1, j - 1) + (a[i - 1] != b[j - 1]))

    return d(len(a), len(b))


short_text = st.text(alphabet=st.sampled_from(list("abcé好 ")), max_size=8)


class TestEditDistance:
    @pytest.mark.parametrize(
        "a, b, expected",
        [("abc", "abc", 1.0), ("abc", "", 0.0), ("", "", 1.0), ("kitten", "sitting", 4 / 7)],
    )
    def test_similarity_examples(self, a, b, expected):
        assert normalized_edit_similarity(a, b) == pytest.approx(expected, abs=1e-12)

    def test_kitten_sitting_distance(self):
        assert levenshtein("kitten", "sitting") == 3

    def test_nfc_before_comparison(self):
        assert normalized_edit_similarity("café", "café") == 1.0

    @settings(max_examples=300, deadline=None)
    @given(short_text, short_text)
    def test_matches_recursive_oracle(self, a, b):
        a = unicodedata.normalize("NFC", a)
        b = unicodedata.normalize("NFC", b)
        assert levenshtein(a, b) == oracle_levenshtein(a, b)

    @settings(max_examples=300, deadline=None)
    @given(short_text, short_text, short_text)
    def test_metric_axioms(self, a, b, c):
        assert levenshtein(a, b) == levenshtein(b, a)
        assert (levenshtein(a, b) == 0) == (a == b)
        assert levenshtein(a, c) <= levenshtein(a, b) + levenshtein(b, c)
        s = normalized_edit_similarity(a, b)
        assert s == normalized_edit_similarity(b, a)
        assert 0.0 <= s <= 1.0
        assert (s == 1.0) == (a == b)


class TestEcholalia:
    def test_verbatim_repeat(self):
        t = make_transcript([("D", "Is that a red car?"), ("C", "Is that a red car?"),
                             ("D", "Where is it going"), ("C", "Where is it going")])
        assert echolalia_rate(t, CFG) == 1.0

    def test_disjoint_text(self):
        t = make_transcript([("D", "aaaa"), ("C", "bbbb"), ("D", "cccc"), ("C", "dddd")])
        assert echolalia_rate(t, CFG) == 0.0

    def test_one_of_two_echoes(self):
        # "abcde" vs "abcdx": similarity 0.8 (echo); "zzzzz": similarity 0
        t = make_transcript([("D", "abcde"), ("C", "abcdx"), ("D", "abcde"), ("C", "zzzzz")])
        assert normalized_edit_similarity("abcdx", "abcde") == pytest.approx(0.8)
        assert echolalia_rate(t, CFG) == 0.5

    def test_child_before_any_doctor_is_not_echo(self):
        t = make_transcript([("C", "hello"), ("D", "hello"), ("C", "hello")])
        assert echolalia_rate(t, CFG) == 0.5

    def test_compares_with_most_recent_doctor_turn(self):
        t = make_transcript([("D", "first"), ("O", "first"), ("D", "second"), ("C", "first")])
        assert echolalia_rate(t, CFG) == 0.0

    def test_case_sensitivity_switch(self):
        t = make_transcript([("D", "HELLO THERE"), ("C", "hello there")])
        assert echolalia_rate(t, CFG) == 1.0
        assert echolalia_rate(t, FeatureConfig(echo_case_sensitive=True)) == 0.0

    def test_no_child(self):
        with pytest.raises(NoChildSpeech):
            echolalia_rate(make_transcript([("D", "hi")]), CFG)


class TestTurnFeatures:
    @pytest.mark.parametrize(
        "codes, expected",
        [("DCDC", 1.0), ("DDCC", 1 / 3), ("D", 0.0), ("DOC", 1.0)],
    )
    def test_alternation(self, codes, expected):
        t = make_transcript([(c, "x") for c in codes])
        assert alternation_rate(t) == pytest.approx(expected)

    @pytest.mark.parametrize("codes, expected", [("CCCDDD", 0.5), ("DDD", 0.0), ("CCDO", 0.5)])
    def test_participation(self, codes, expected):
        t = make_transcript([(c, "x") for c in codes])
        assert participation_rate(t) == expected

    def test_participation_tokens(self):
        t = make_transcript([("D", "one two three"), ("C", "four")])
        assert participation_rate(t, FeatureConfig(participation_unit="tokens")) == 0.25

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.sampled_from("DC"), min_size=1, max_size=20))
    def test_participation_relabel_symmetry(self, codes):
        swap = {"D": "C", "C": "D"}
        t = make_transcript([(c, "x") for c in codes])
        flipped = make_transcript([(swap[c], "x") for c in codes])
        assert participation_rate(flipped) == pytest.approx(1 - participation_rate(t), abs=1e-12)


class TestSentiment:
    def test_all_positive(self):
        t = make_transcript([("D", "hi"), ("C", "I love it"), ("C", "this is fun")])
        assert sentiment_rates(t, CFG) == (1.0, 0.0)

    def test_all_neutral(self):
        t = make_transcript([("D", "hi"), ("C", "a blue box"), ("C", "the table")])
        assert sentiment_rates(t, CFG) == (0.0, 0.0)

    def test_negated_positive(self):
        t = make_transcript([
            ("C", "I love the train"),
            ("C", "I do not like it"),
            ("C", "the box is blue"),
            ("C", "here is a cup"),
        ])
        assert sentiment_rates(t, CFG) == (0.25, 0.25)

    def test_negation_window(self):
        lex = Lexicon.from_text("good\t+1\n")
        near = LexiconSentimentAnalyzer(lex, negation_window=1)
        assert near.polarity("not good") == -1
        assert near.polarity("not very good") == 1
        assert LexiconSentimentAnalyzer(lex, negation_window=3).polarity("not very good") == -1
        assert LexiconSentimentAnalyzer(lex, negation_window=0).polarity("not good") == 1

    def test_multiword_and_cjk_terms(self):
        lex = Lexicon.from_text("kind of fun\t+1\n开心\t+1\n难过\t-1\n")
        a = LexiconSentimentAnalyzer(lex, negators=frozenset({"不", "not"}))
        assert a.polarity("that was kind of fun") == 1
        assert a.polarity("我很开心") == 1
        assert a.polarity("我不开心") == -1
        assert a.polarity("我很难过") == -1

    def test_cjk_segmentation(self):
        assert tokenize("我很开心", ["开心"]) == ["我", "很", "开心"]
        assert tokenize("Don’t STOP") == ["don't", "stop"]

    @pytest.mark.parametrize("text", ["good +1\n", "good\tyes\n", "\t+1\n", "# only comments\n"])
    def test_bad_lexicon(self, text):
        with pytest.raises(LexiconLoadError):
            Lexicon.from_text(text)

    def test_missing_lexicon_file(self, tmp_path):
        with pytest.raises(LexiconLoadError):
            Lexicon.from_file(tmp_path / "none.tsv")

    def test_custom_analyzer(self):
        class Always:
            def polarity(self, text):
                return -1

        t = make_transcript([("C", "anything")])
        assert sentiment_rates(t, FeatureConfig(sentiment=Always())) == (0.0, 1.0)


class TestSuggestionAndResponse:
    def test_suggestion_examples(self):
        cfg = FeatureConfig(suggestion_patterns=("let's",))
        t = make_transcript([("D", "ok"), ("C", "Let's play"), ("C", "blue")])
        assert suggestion_rate(t, cfg) == 0.5
        none = make_transcript([("C", "blue"), ("C", "red")])
        assert suggestion_rate(none, cfg) == 0.0
        every = make_transcript([("C", "let's go"), ("C", "and let's jump")])
        assert suggestion_rate(every, cfg) == 1.0
        assert suggestion_rate(every, FeatureConfig(suggestion_patterns=("let's",), suggestion_match="prefix")) == 0.5

    @pytest.mark.parametrize(
        "text, expected",
        [("What is it?", True), ("what is it", True), ("Whatever you like", False),
         ("That is a car.", False), ("Tell me more", True), ("Look at this.", False), ("这是什么？", True), ("你喜欢吗", True), ("你喜欢什么", False)],
    )
    def test_is_question(self, text, expected):
        assert is_question(text, CFG) is expected

    def test_response_examples(self):
        all_answered = make_transcript([("D", "Is it red?"), ("C", "yes"), ("D", "Why?"), ("C", "because")])
        assert response_rate(all_answered, CFG) == 1.0
        half = make_transcript([("D", "Is it red?"), ("C", "yes"), ("D", "Why?"), ("D", "Look here."), ("C", "no")])
        assert question_counts(half, CFG) == (1, 2)
        assert response_rate(half, CFG) == 0.5

    def test_zero_questions_is_degenerate(self):
        t = make_transcript([("D", "Here is a car."), ("C", "car")])
        f = extract_features(t, CFG)
        assert f.response_rate == 0.0
        assert "response_rate" in f.degenerate


class TestExtract:
    def test_composed_fixture(self):
        t = make_transcript([
            ("D", "Is this the box?"), ("C", "Is this the box?"),
            ("D", "Put the cup down."), ("C", "Put the cup down."),
        ])
        f = extract_features(t, CFG)
        assert f.as_tuple() == (1.0, 1.0, 0.5, 0.0, 0.0, 0.0, 1.0)

    def test_no_child_speech(self):
        with pytest.raises(NoChildSpeech):
            extract_features(make_transcript([("D", "hello?")]), CFG)

    def test_deterministic_and_round_trips(self, synthetic_corpus):
        t = synthetic_corpus.sessions[0]
        f = extract_features(t, CFG)
        assert extract_features(t, CFG) == f
        assert FeatureVector.from_json(f.to_json()) == f
        assert extract_features(normalize(t), CFG) == f

    def test_vector_validation(self):
        with pytest.raises(ValueError):
            FeatureVector(1.5, 0, 0, 0, 0, 0, 0)
        with pytest.raises(ValueError):
            FeatureVector(0, 0, 0, 0.7, 0.7, 0, 0)
        with pytest.raises(UnknownFeatureName):
            FeatureVector(0, 0, 0, 0, 0, 0, 0).get("shouting_rate")

    @pytest.mark.parametrize("kwargs", [
        {"echolalia_threshold": 0.0}, {"echolalia_threshold": 1.2}, {"negation_window": -1},
        {"question_markers": ()}, {"suggestion_patterns": ("",)}, {"participation_unit": "seconds"},
        {"suggestion_match": "regex"},
    ])
    def test_config_validation(self, kwargs):
        with pytest.raises(ValueError):
            FeatureConfig(**kwargs)

    def test_config_from_json(self, tmp_path):
        lex = tmp_path / "lex.tsv"
        lex.write_text("brilliant\t+1\n", encoding="utf-8")
        cfg = feature_config_from_json({"lexicon": str(lex), "echolalia_threshold": 0.9, "suggestion_patterns": ["shall we"]})
        assert cfg.echolalia_threshold == 0.9
        assert cfg.sentiment.polarity("brilliant") == 1
        assert cfg.sentiment.polarity("I love it") == 0


turns = st.lists(
    st.tuples(st.sampled_from("DCO"), st.text(alphabet=st.sampled_from(list("ab ?!好不开心")), min_size=1, max_size=10)),
    min_size=1, max_size=20,
).filter(lambda ts: any(c == "C" for c, _ in ts))


@settings(max_examples=300, deadline=None)
@given(turns)
def test_rates_bounded(ts):
    f = extract_features(make_transcript(ts), CFG)
    for name in FEATURE_NAMES:
        assert 0.0 <= f.get(name) <= 1.0
    assert f.enjoyment_rate + f.passive_rate <= 1.0


@settings(max_examples=200, deadline=None)
@given(turns, st.lists(st.floats(0.01, 1.0), min_size=2, max_size=4))
def test_echolalia_monotone_in_threshold(ts, thetas):
    t = make_transcript(ts)
    rates = [echolalia_rate(t, FeatureConfig(echolalia_threshold=th)) for th in sorted(thetas)]
    assert all(a >= b for a, b in itertools.pairwise(rates))
