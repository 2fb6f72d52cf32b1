"""
ASR output strings
==================

Recognizer output is ``language <Name><asr_text><transcript>``, or
``language None<asr_text>`` when there is no speech.
"""

from slotalign import AsrOutput, format_output, parse_output
from slotalign.errors import ParseError
from slotalign.protocol import strip_chat_framing

for s in ["language English<asr_text>The meeting moved to room 4B at 9.30 a.m.",
          "language None<asr_text>"]:
    o = parse_output(s)
    print(repr(o), "round trip ok:", format_output(o) == s)

print(parse_output(strip_chat_framing("<|im_start|>assistant\nlanguage German<asr_text>Guten Tag<|im_end|>")))

try:
    parse_output("language English")
except ParseError as e:
    print("rejected:", e)

print(format_output(AsrOutput("Chinese", "你好")))
