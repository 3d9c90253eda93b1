from __future__ import annotations

import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ados_scoring.errors import DuplicateHeader, EmptySession, MalformedLine, UnknownSpeaker
from ados_scoring.items import ClinicianItemSheet
from ados_scoring.transcript import (
    SessionTranscript,
    Speaker,
    Utterance,
    normalize,
    parse_transcript,
    serialize_transcript,
)

from conftest import make_transcript

HEADER = {"session_id": "s01", "age_months": 96, "gender": "m"}


def doc(*lines) -> bytes:
    return ("\n".join(json.dumps(x, ensure_ascii=False) for x in lines) + "\n").encode("utf-8")


class TestParse:
    def test_header_and_two_utterances(self):
        t = parse_transcript(doc(
            HEADER,
            {"speaker": "doctor", "text": "What is this?", "t0": 0.0, "t1": 1.5},
            {"speaker": "child", "text": "A car."},
        ))
        assert t.session_id == "s01"
        assert t.age_months == 96
        assert [u.speaker for u in t.utterances] == [Speaker.DOCTOR, Speaker.CHILD]
        assert [u.index for u in t.utterances] == [0, 1]
        assert t.utterances[0].t1 == 1.5

    def test_unknown_speaker(self):
        with pytest.raises(UnknownSpeaker) as err:
            parse_transcript(doc(HEADER, {"speaker": "nurse", "text": "hello"}))
        assert err.value.label == "nurse"
        assert err.value.line_no == 2

    def test_header_only_is_empty_session(self):
        with pytest.raises(EmptySession):
            parse_transcript(doc(HEADER))

    def test_second_header_rejected(self):
        with pytest.raises(DuplicateHeader) as err:
            parse_transcript(doc(HEADER, {"speaker": "child", "text": "hi"}, {"session_id": "s02"}))
        assert err.value.line_no == 3

    @pytest.mark.parametrize(
        "line, reason",
        [
            ("{not json", "invalid JSON"),
            ('["list"]', "JSON object"),
            ('{"speaker": "child"}', "text"),
            ('{"speaker": "child", "text": "x", "t0": 3, "t1": 1}', "t0"),
            ('{"speaker": "child", "text": "x", "t0": "soon"}', "t0"),
            ('{"speaker": "child", "text": "x", "mood": "happy"}', "unknown"),
        ],
    )
    def test_malformed_lines_name_the_line(self, line, reason):
        data = json.dumps(HEADER) + "\n" + '{"speaker": "doctor", "text": "hi"}\n' + line + "\n"
        with pytest.raises(MalformedLine) as err:
            parse_transcript(data.encode())
        assert err.value.line_no == 3
        assert reason in str(err.value)

    def test_first_line_must_be_header(self):
        with pytest.raises(MalformedLine) as err:
            parse_transcript(doc({"speaker": "child", "text": "hi"}))
        assert err.value.line_no == 1

    @pytest.mark.parametrize("header", [
        {"session_id": ""},
        {"session_id": "s", "age_months": 0},
        {"session_id": "s", "gender": "x"},
        {"session_id": "s", "clinician_items": {"A9": 5}},
        {"session_id": "s", "colour": "red"},
    ])
    def test_bad_headers(self, header):
        with pytest.raises(MalformedLine):
            parse_transcript(doc(header, {"speaker": "child", "text": "hi"}))

    def test_not_utf8(self):
        with pytest.raises(MalformedLine):
            parse_transcript(b'{"session_id": "s"}\n\xff\xfe')

    def test_bom_blank_lines_and_nfc(self):
        decomposed = "cafe\u0301"
        raw = "\ufeff" + json.dumps(HEADER) + "\n\n" + json.dumps({"speaker": "Child", "text": decomposed}, ensure_ascii=False) + "\n"
        t = parse_transcript(raw.encode("utf-8"))
        assert t.utterances[0].text == "caf\u00e9"
        assert t.utterances[0].speaker is Speaker.CHILD

    def test_clinician_items(self):
        items = {"A9": 0, "B1": 1, "B2": 0, "D1": 2, "D2": 0, "D4": 3}
        t = parse_transcript(doc({**HEADER, "clinician_items": items}, {"speaker": "child", "text": "hi"}))
        assert t.clinician_items == ClinicianItemSheet(items)


class TestNormalize:
    def test_merge_consecutive(self):
        t = make_transcript([("D", "hi "), ("D", "there")])
        out = normalize(t, merge_consecutive=True)
        assert [(u.speaker, u.text) for u in out.utterances] == [(Speaker.DOCTOR, "hi there")]

    def test_drop_empty_and_reindex(self):
        out = normalize(make_transcript([("D", "  "), ("C", "ok")]))
        assert [(u.speaker, u.text, u.index) for u in out.utterances] == [(Speaker.CHILD, "ok", 0)]

    def test_whitespace_collapsed(self):
        out = normalize(make_transcript([("C", "  a \t b\n c ")]))
        assert out.utterances[0].text == "a b c"

    def test_all_empty_raises(self):
        with pytest.raises(EmptySession):
            normalize(make_transcript([("D", " "), ("C", "\t")]))

    def test_merge_keeps_time_span(self):
        utts = (
            Utterance(Speaker.CHILD, "a", 0, 1.0, 2.0),
            Utterance(Speaker.CHILD, "b", 1, 2.5, 4.0),
        )
        out = normalize(SessionTranscript("s", utts), merge_consecutive=True)
        assert (out.utterances[0].t0, out.utterances[0].t1) == (1.0, 4.0)

    def test_normalized_input_unchanged(self):
        t = make_transcript([("D", "hello"), ("C", "hi")])
        assert normalize(t) == t


speakers = st.sampled_from(["D", "C", "O"])
texts = st.text(alphabet=st.sampled_from(list("ab c\t\n好é?")), max_size=12)
turn_lists = st.lists(st.tuples(speakers, texts), min_size=1, max_size=15)


@settings(max_examples=200, deadline=None)
@given(turn_lists, st.booleans())
def test_normalize_idempotent_and_never_grows(turns, merge):
    t = make_transcript(turns)
    try:
        once = normalize(t, merge_consecutive=merge)
    except EmptySession:
        return
    twice = normalize(once, merge_consecutive=merge)
    assert twice == once
    assert serialize_transcript(twice) == serialize_transcript(once)
    assert len(once) <= len(t)


@settings(max_examples=200, deadline=None)
@given(turn_lists, st.one_of(st.none(), st.integers(1, 200)), st.sampled_from([None, "m", "f"]))
def test_serialize_parse_round_trip(turns, age, gender):
    t = make_transcript(turns, age_months=age, gender=gender)
    assert parse_transcript(serialize_transcript(t)) == t
