"""
Slot filling on a toy utterance
===============================

A transcript becomes a token sequence with ``[time]`` slots after each
word. The model reads [audio tokens || slotted text] causally and predicts a
frame index at every slot; one forward pass fills all of them.
"""

from slotalign import AlignerModel, build_slot_sequence, discretize, make_utterances, nar_decode
from slotalign.aligner import TrainHyper, ar_decode, train
from slotalign.recipes import align_utterances
from slotalign.metrics import aas_corpus
from slotalign.config import build

# a small model so the demo trains in well under a minute
run = build({"n_train": 400, "aligner.d_model": 64, "aligner.n_layers": 2, "aligner.ff_dim": 128,
             "encoder.n_layers": 1, "encoder.ff_dim": 128, "synth.words_per_utt": [2, 4]})
syn = run.synth
u = make_utterances(syn, 1)[0]
print("words (token, start_ms, end_ms):", u.words)

# the slotted sequence; audio occupies the first n_audio positions
seq = build_slot_sequence(u.tokens(), "always", time_token_id=run.aligner.time_token_id,
                          n_audio=u.frames.shape[0] // 8)
print("text part:", seq.text_tokens().tolist(), " slot roles:", seq.slot_roles)

# targets are 80 ms frame indices, rounded to the nearest frame
print("start targets:", [discretize(s, 80, run.aligner.n_classes) for _, s, _ in u.words])

# train briefly with random slot insertion, then decode held-out audio
corpus = make_utterances(syn, run.n_train)
held = make_utterances(syn, 50, start=run.n_train)
model = AlignerModel(run.aligner, seed=0)
res = train(model, corpus, TrainHyper(epochs=4, batch_size=16, warmup_steps=20),
            on_epoch=lambda e: print(f"epoch {e['epoch']}  loss {e['loss']:.3f}"))
print("held-out AAS: %.1f ms" % aas_corpus(align_utterances(model, held), held).aas_ms)

# one pass fills every slot; the reference autoregressive loop needs one per slot
h = held[0]
nar = nar_decode(model, h.frames, h.tokens())
ar = ar_decode(model, h.frames, h.tokens())
print("NAR times:", (nar.indices * 80).tolist(), f"({nar.forward_passes} pass)")
print("AR  times:", (ar.indices * 80).tolist(), f"({ar.forward_passes} passes)")
print("gold     :", [t for _, s, e in h.words for t in (s, e)])

# slots can be requested for any subset of words
sub = nar_decode(model, h.frames, h.tokens(), select={0: "end"})
print("end of word 0 only:", (sub.indices * 80).tolist())
