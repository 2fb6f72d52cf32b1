"""
Chunked streaming through the windowed encoder
==============================================

Audio arrives in 2 s chunks. Tokens in the newest four chunks stay
provisional; older ones are committed and match the offline encoding.
"""

import numpy as np

from slotalign import Encoder, EncoderConfig, open_stream, stream_finalize, stream_push

enc = Encoder(EncoderConfig(), np.random.default_rng(0))
x = np.random.default_rng(1).normal(size=(3000, 16)).astype(np.float32)   # 30 s at 100 frames/s
window = 50                                                                # 4 s of tokens
offline = enc.encode(x, window)

state = open_stream(enc, window)
consumer = []
for i in range(0, len(x), 200):
    state, new, retracted = stream_push(state, x[i:i + 200])
    # a consumer drops retracted tokens before appending the new ones
    consumer = consumer[:len(consumer) - retracted] + list(new)
    n = len(consumer)
    diff = np.abs(np.array(consumer) - offline[:n]).max() if n else 0.0
    print(f"chunk {state.chunk_count:2d}: committed {n:3d} tokens, "
          f"provisional {state.provisional.shape[0]:3d}, max |diff| {diff:.1e}")

final = stream_finalize(state)
print("after finalize:", final.shape, "max |diff| %.1e" % np.abs(final - offline).max())
