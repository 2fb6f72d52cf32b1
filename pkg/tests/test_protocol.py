import pytest
from hypothesis import given, strategies as st

from slotalign.errors import InvalidInputError, ParseError
from slotalign.protocol import AsrOutput, format_output, parse_output, strip_chat_framing

SPEECH = "language English<asr_text>The meeting moved to room 4B at 9.30 a.m."
SILENCE = "language None<asr_text>"


def test_templates_round_trip():
    o = AsrOutput("English", "The meeting moved to room 4B at 9.30 a.m.")
    assert format_output(o) == SPEECH
    assert parse_output(SPEECH) == o
    assert format_output(AsrOutput()) == SILENCE
    assert parse_output(SILENCE) == AsrOutput()
    assert format_output(parse_output(SPEECH)) == SPEECH
    assert format_output(parse_output(SILENCE)) == SILENCE


def test_chat_framing_is_stripped_first():
    framed = "<|im_start|>assistant\n" + SILENCE + "<|im_end|>"
    assert parse_output(strip_chat_framing(framed)) == AsrOutput()


def test_split_at_first_marker():
    assert parse_output("language English<asr_text>a<asr_text>b") == AsrOutput("English", "a<asr_text>b")


def test_invariant():
    with pytest.raises(InvalidInputError):
        AsrOutput("English", "")
    with pytest.raises(InvalidInputError):
        AsrOutput(None, "hello")
    with pytest.raises(InvalidInputError):
        AsrOutput("None", "x")


@pytest.mark.parametrize("text, offset", [
    ("", 0), ("lang", 4), ("Language English<asr_text>x", 0), ("language English", 16),
    ("language <asr_text>x", 9), ("language None<asr_text>extra", 23), ("language English<asr_text>", 26),
    ("language é", 11),
])
def test_errors_carry_byte_offset(text, offset):
    with pytest.raises(ParseError) as info:
        parse_output(text)
    assert info.value.offset == offset


def test_invalid_utf8():
    with pytest.raises(ParseError) as info:
        parse_output(b"language \xff<asr_text>")
    assert info.value.offset == 9


names = st.text(min_size=1, max_size=12).filter(lambda s: s != "None" and "<asr_text>" not in s)


@given(names, st.text(min_size=1, max_size=60))
def test_round_trip_fuzz(name, text):
    o = AsrOutput(name, text)
    assert parse_output(format_output(o)) == o
    assert parse_output(format_output(o).encode("utf-8")) == o


@given(st.binary(max_size=80))
def test_arbitrary_bytes_never_crash(raw):
    try:
        out = parse_output(raw)
    except ParseError as exc:
        assert 0 <= exc.offset <= len(raw)
    else:
        assert isinstance(out, AsrOutput)
