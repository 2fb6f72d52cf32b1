import math

import numpy as np
import pytest
from scipy.stats import norm

from slotalign import tensorfile
from slotalign.errors import FormatError, InvalidInputError
from slotalign.synthdata import (Manifest, SynthConfig, Utterance, corrupt_labels, gen_corpus,
                                 make_utterances, render_utterance, templates, utterance_rng)


def folded_normal_mean(mu: float, sigma: float) -> float:
    return sigma * math.sqrt(2 / math.pi) * math.exp(-mu * mu / (2 * sigma * sigma)) \
        + mu * (1 - 2 * norm.cdf(-mu / sigma))


def test_single_forced_word():
    cfg = SynthConfig(word_dur_ms=(400, 400), gap_dur_ms=(0, 0), words_per_utt=(1, 1), seed=3)
    u = render_utterance(cfg, np.random.default_rng(0))
    assert u.frames.shape == (40, cfg.feat_dim)
    tok = u.words[0][0]
    assert u.words == [(tok, 0, 400)]


def test_noise_free_rendering_is_template_and_deterministic():
    cfg = SynthConfig(noise_sigma=0.0, seed=9)
    a = render_utterance(cfg, utterance_rng(cfg.seed, 4))
    b = render_utterance(cfg, utterance_rng(cfg.seed, 4))
    assert a.frames.tobytes() == b.frames.tobytes()
    table = templates(cfg)
    tok, start, end = a.words[0]
    np.testing.assert_allclose(a.frames[start // 10:end // 10], np.broadcast_to(table[tok], ((end - start) // 10, cfg.feat_dim)),
                               rtol=1e-6)
    np.testing.assert_array_equal(a.frames[:start // 10], 0.0)


def test_templates_are_unit_norm():
    t = templates(SynthConfig(vocab_size=10, feat_dim=5))
    np.testing.assert_allclose(np.linalg.norm(t, axis=1), 1.0)


def test_minimum_gap_respected():
    cfg = SynthConfig(words_per_utt=(3, 3), gap_dur_ms=(80, 240), seed=1)
    rng = np.random.default_rng(11)
    for _ in range(1000):
        u = render_utterance(cfg, rng)
        for (_, _, end1), (_, start2, _) in zip(u.words, u.words[1:]):
            assert start2 >= end1 + 80


def test_fuzz_utterance_invariants():
    rng = np.random.default_rng(5)
    for i in range(10_000):
        lo = int(rng.integers(1, 4)) * 10
        cfg = SynthConfig(vocab_size=int(rng.integers(1, 40)), feat_dim=int(rng.integers(1, 6)),
                          word_dur_ms=(lo, lo + int(rng.integers(0, 30)) * 10),
                          gap_dur_ms=(0, int(rng.integers(0, 10)) * 10),
                          words_per_utt=(1, int(rng.integers(1, 6))), noise_sigma=0.05, seed=i % 7)
        u = render_utterance(cfg, rng)
        u.validate(cfg)
        for tok, start, end in u.words:
            assert start % 10 == 0 and end % 10 == 0
        assert u.words[-1][2] <= u.frames.shape[0] * 10


@pytest.mark.parametrize("kwargs", [
    dict(vocab_size=0), dict(word_dur_ms=(300, 200)), dict(word_dur_ms=(155, 300)),
    dict(gap_dur_ms=(5, 10)), dict(words_per_utt=(0, 2)), dict(noise_sigma=-1.0),
])
def test_invalid_config(kwargs):
    with pytest.raises(InvalidInputError):
        SynthConfig(**kwargs)


# ---------------------------------------------------------------- corruption

def test_corrupt_identity():
    u = make_utterances(SynthConfig(seed=2), 1)[0]
    assert corrupt_labels(u, 0, 0, np.random.default_rng(0)) == u.words


def test_corrupt_pure_bias():
    cfg = SynthConfig(gap_dur_ms=(80, 240), seed=2)
    for u in make_utterances(cfg, 20):
        out = corrupt_labels(u, 0, 40, np.random.default_rng(0))
        for (t, s, e), (t2, s2, e2) in zip(u.words, out):
            assert (t2, s2, e2) == (t, s + 40, e + 40)


def test_corrupt_does_not_touch_input():
    u = make_utterances(SynthConfig(seed=2), 1)[0]
    before = list(u.words)
    corrupt_labels(u, 120, 40, np.random.default_rng(0))
    assert u.words == before


def test_corrupt_keeps_intervals_ordered_and_clamped():
    rng = np.random.default_rng(1)
    for u in make_utterances(SynthConfig(seed=4), 200):
        for _, s, e in corrupt_labels(u, 300, -50, rng):
            assert 0 <= s <= e <= u.duration_ms


def test_corrupt_mean_shift_matches_folded_normal():
    # boundaries far from the clamps, so the shift is the raw noise
    frames = np.zeros((100_000 * 2 + 200, 1), np.float32)
    words = [(0, 1000 + 10 * i, 1000 + 10 * i + 5) for i in range(50_000)]
    u = Utterance("big", frames, words)
    out = corrupt_labels(u, 120, 40, np.random.default_rng(7))
    shifts = np.abs(np.array([[s2 - s, e2 - e] for (_, s, e), (_, s2, e2) in zip(words, out)], float))
    assert shifts.size == 100_000
    expected = folded_normal_mean(40, 120)
    assert abs(expected - 101.0) < 0.1
    assert abs(shifts.mean() - expected) / expected < 0.03


# ---------------------------------------------------------------- corpus and manifest

def test_corpus_round_trip(tmp_path):
    cfg = SynthConfig(seed=5)
    m = gen_corpus(cfg, 1, tmp_path)
    assert len(m) == 1
    loaded = Manifest.load(tmp_path / "manifest.jsonl")
    orig = make_utterances(cfg, 1)[0]
    u = loaded.utterances()[0]
    assert u.frames.tobytes() == orig.frames.tobytes()
    assert u.words == orig.words and u.id == orig.id
    assert loaded.config_hash == cfg.config_hash()


def test_corpus_hash_stable(tmp_path):
    cfg = SynthConfig(seed=6)
    a = gen_corpus(cfg, 100, tmp_path / "a")
    b = gen_corpus(cfg, 100, tmp_path / "b")
    assert a.digest() == b.digest()
    fa = b"".join((tmp_path / "a" / e.features).read_bytes() for e in a.entries)
    fb = b"".join((tmp_path / "b" / e.features).read_bytes() for e in b.entries)
    assert fa == fb


def test_different_seeds_differ(tmp_path):
    a = gen_corpus(SynthConfig(seed=1), 3, tmp_path / "a")
    b = gen_corpus(SynthConfig(seed=2), 3, tmp_path / "b")
    assert (tmp_path / "a" / a.entries[0].features).read_bytes() != (tmp_path / "b" / b.entries[0].features).read_bytes()


def test_serial_and_out_of_order_generation_agree():
    cfg = SynthConfig(seed=8)
    serial = make_utterances(cfg, 6)
    parts = make_utterances(cfg, 3, start=3) + make_utterances(cfg, 3)
    assert [u.frames.tobytes() for u in serial] == [u.frames.tobytes() for u in parts[3:] + parts[:3]]


def test_gen_corpus_rejects_zero(tmp_path):
    with pytest.raises(InvalidInputError):
        gen_corpus(SynthConfig(), 0, tmp_path)


def test_manifest_missing_feature_reports_path(tmp_path):
    gen_corpus(SynthConfig(seed=1), 2, tmp_path)
    victim = tmp_path / "feats" / "utt000001.f32"
    victim.unlink()
    with pytest.raises(FileNotFoundError) as info:
        Manifest.load(tmp_path / "manifest.jsonl")
    assert str(victim) in str(info.value)


def test_manifest_duplicate_ids(tmp_path):
    m = gen_corpus(SynthConfig(seed=1), 2, tmp_path)
    m.entries[1].id = m.entries[0].id
    m.save(tmp_path / "manifest.jsonl")
    with pytest.raises(FormatError):
        Manifest.load(tmp_path / "manifest.jsonl")


def test_unwritable_output_surfaces_path(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError) as info:
        gen_corpus(SynthConfig(), 1, blocker / "sub")
    assert "file" in str(info.value)


def test_feature_file_layout(tmp_path):
    arr = np.arange(6, dtype=np.float32).reshape(2, 3)
    path = tmp_path / "x.f32"
    tensorfile.write_matrix(path, arr)
    raw = path.read_bytes()
    assert len(raw) == 16 + 24
    assert raw[:4] == b"SLTF"
    assert np.frombuffer(raw[4:16], "<u4").tolist() == [1, 2, 3]
    np.testing.assert_array_equal(tensorfile.read_matrix(path), arr)
    path.write_bytes(raw[:-4])
    with pytest.raises(FormatError):
        tensorfile.read_matrix(path)
