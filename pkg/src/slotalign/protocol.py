"""ASR output payload: ``language <Name><asr_text><transcript>``.

Chat framing (``<|im_start|>assistant`` ... ``<|im_end|>``) is transport and
is removed by :func:`strip_chat_framing` before parsing.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import InvalidInputError, ParseError

PREFIX = "language "
MARKER = "<asr_text>"
NO_SPEECH = "None"
_IM_START = "<|im_start|>assistant"
_IM_END = "<|im_end|>"


@dataclass(frozen=True)
class AsrOutput:
    language: str | None = None
    text: str = ""

    def __post_init__(self):
        if (self.language is None) != (self.text == ""):
            raise InvalidInputError("language must be present exactly when the transcript is non-empty")
        if self.language is not None:
            if self.language in ("", NO_SPEECH):
                raise InvalidInputError(f"invalid language name {self.language!r}")
            if MARKER in self.language:
                raise InvalidInputError("language name may not contain the text marker")

    @property
    def is_speech(self) -> bool:
        return self.language is not None


def format_output(o: AsrOutput) -> str:
    if o.language is None:
        return f"{PREFIX}{NO_SPEECH}{MARKER}"
    return f"{PREFIX}{o.language}{MARKER}{o.text}"


def _offset(s: str, char_index: int) -> int:
    return len(s[:char_index].encode("utf-8"))


def parse_output(s: str | bytes) -> AsrOutput:
    """Split at the first ``<asr_text>``; ``None`` means no speech."""
    if isinstance(s, (bytes, bytearray)):
        try:
            s = bytes(s).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ParseError("invalid UTF-8", exc.start) from None
    if not s.startswith(PREFIX):
        n = 0
        while n < min(len(s), len(PREFIX)) and s[n] == PREFIX[n]:
            n += 1
        raise ParseError("expected 'language ' prefix", _offset(s, n))
    cut = s.find(MARKER, len(PREFIX))
    if cut < 0:
        raise ParseError("missing <asr_text> marker", _offset(s, len(s)))
    name = s[len(PREFIX):cut]
    text = s[cut + len(MARKER):]
    if name == "":
        raise ParseError("empty language name", _offset(s, len(PREFIX)))
    if name == NO_SPEECH:
        if text:
            raise ParseError("no-speech output carries a transcript", _offset(s, cut + len(MARKER)))
        return AsrOutput()
    if text == "":
        raise ParseError("speech output without a transcript", _offset(s, len(s)))
    return AsrOutput(name, text)


def strip_chat_framing(s: str) -> str:
    s = s.strip()
    if s.startswith(_IM_START):
        s = s[len(_IM_START):].lstrip("\r\n ")
    if s.endswith(_IM_END):
        s = s[:-len(_IM_END)]
    return s
