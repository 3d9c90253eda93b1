from __future__ import annotations

import pytest

from ados_scoring.synth import GeneratorProfile, generate, write_corpus
from ados_scoring.transcript import SessionTranscript, Speaker, Utterance

_CODES = {"D": Speaker.DOCTOR, "C": Speaker.CHILD, "O": Speaker.OTHER}


def make_transcript(turns, session_id="s1", **meta) -> SessionTranscript:
    """Build a transcript from ``[("D", "text"), ("C", "text"), ...]``."""
    utts = tuple(Utterance(_CODES[code], text, i) for i, (code, text) in enumerate(turns))
    return SessionTranscript(session_id, utts, **meta)


@pytest.fixture(scope="session")
def synthetic_corpus():
    return generate(GeneratorProfile(seed=0))


@pytest.fixture(scope="session")
def corpus_dir(tmp_path_factory, synthetic_corpus):
    return write_corpus(synthetic_corpus, tmp_path_factory.mktemp("corpus"))
