"""
RTF, throughput and latency of NAR alignment
============================================

Offline mode times whole batches; latency mode runs concurrent
single-utterance requests. RTF charges each request its own processing
time, throughput divides audio by wall time.
"""

import numpy as np

from slotalign import AlignerModel, SynthConfig, make_utterances
from slotalign.bench import AlignerRunner, bench_latency, bench_offline, bench_table, nar_speed_contract
from slotalign.config import build

run = build({"aligner.d_model": 64, "aligner.n_layers": 2, "aligner.ff_dim": 128, "encoder.n_layers": 1})
model = AlignerModel(run.aligner, seed=0).freeze()
utts = make_utterances(SynthConfig(), 32)

runner = AlignerRunner(model)
reports = bench_offline(runner, utts, [1, 8]) + [bench_latency(runner, utts, c) for c in (1, 2, 4)]
print(bench_table(reports))

# more slots cost almost nothing: they ride in the same forward pass
frames = np.random.default_rng(0).normal(size=(2400, 16)).astype(np.float32)
words = list(range(10))
sc = nar_speed_contract(model, frames, words[:1], words)
print(f"{sc.slots_few} slots: {sc.latency_few_ms:.1f} ms, {sc.slots_many} slots: {sc.latency_many_ms:.1f} ms "
      f"(ratio {sc.ratio:.2f}); autoregressive reference used {sc.ar_passes} passes")
