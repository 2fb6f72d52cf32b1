import numpy as np
import pytest

from slotalign.aligner import AlignerConfig, AlignerModel
from slotalign.encoder import EncoderConfig


def tiny_config(d_model=16, n_layers=2, n_heads=2, max_audio_s=4, enc_layers=1, text_vocab=32,
                window=(2, 8)) -> AlignerConfig:
    n_tokens = max_audio_s * 1000 // 80
    enc = EncoderConfig(d_model=d_model, n_layers=enc_layers, n_heads=n_heads, ff_dim=2 * d_model,
                        max_tokens=n_tokens, window_tokens_range=window)
    return AlignerConfig(max_audio_s=max_audio_s, text_vocab=text_vocab, d_model=d_model, n_layers=n_layers,
                         n_heads=n_heads, ff_dim=2 * d_model, max_text_tokens=48, encoder=enc)


@pytest.fixture
def tiny_model():
    return AlignerModel(tiny_config(), seed=0)


def random_frames(rng, n_tokens, feat_dim=16):
    return rng.normal(size=(n_tokens * 8, feat_dim)).astype(np.float32)


# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
