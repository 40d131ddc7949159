from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from orchestyle.attributes import fit_bins
from orchestyle.instruments import default_registry
from orchestyle.model import ModelConfig, TextureVAE
from orchestyle.score import Grid, NoteEvent, QuantizedScore
from orchestyle.synth import REPRESENTATIVE_VELOCITIES, homophonic_corpus
from orchestyle.tokens import GrammarConfig, Vocabulary

settings.register_profile("default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

PROGRAMS = default_registry().programs


@st.composite
def scores(draw, max_bars=4, max_tracks=3, max_notes=24, grids=None, representative=True, max_duration=32):
    """Canonical scores with no overlapping same-pitch notes inside a track."""
    grid = draw(st.sampled_from(grids or [Grid(4, 4), Grid(3, 4), Grid(2, 4), Grid(6, 2)]))
    n_bars = draw(st.integers(1, max_bars))
    total = n_bars * grid.subbeats_per_bar
    programs = draw(st.lists(st.sampled_from(PROGRAMS), min_size=1, max_size=max_tracks, unique=True))
    velocity = st.sampled_from(REPRESENTATIVE_VELOCITIES) if representative else st.integers(1, 127)
    raw = draw(st.lists(
        st.tuples(st.sampled_from(programs), st.integers(0, total - 1), st.integers(0, 127),
                  st.integers(1, max_duration), velocity),
        min_size=1, max_size=max_notes,
    ))
    busy: dict = {}
    notes = []
    for program, onset, pitch, duration, vel in raw:
        duration = min(duration, total - onset)
        spans = busy.setdefault((program, pitch), [])
        if any(onset < b and a < onset + duration for a, b in spans):
            continue
        spans.append((onset, onset + duration))
        notes.append((program, NoteEvent(onset, 0, pitch, duration, vel)))
    return QuantizedScore.from_notes(notes, n_bars, grid)


@pytest.fixture(scope="session")
def registry():
    return default_registry()


@pytest.fixture(scope="session")
def grammar():
    return GrammarConfig.from_registry()


@pytest.fixture(scope="session")
def vocab(grammar):
    return Vocabulary(grammar)


@pytest.fixture(scope="session")
def corpus():
    return homophonic_corpus(40, seed=7)


@pytest.fixture(scope="session")
def bins(corpus):
    return fit_bins(corpus)


def tiny_config(vocab_size: int, **kw) -> ModelConfig:
    base = dict(vocab_size=vocab_size, embed_dim=16, enc_layers=1, dec_layers=1, heads=2, latent_dim=4,
                cond_dim=4, ffn_mult=2, context=512)
    base.update(kw)
    return ModelConfig(**base)


@pytest.fixture(scope="session")
def tiny_model(vocab):
    import torch

    torch.manual_seed(0)
    return TextureVAE(tiny_config(len(vocab))).eval()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def tokenize(score, bins, grammar):
    from orchestyle.attributes import extract_profile
    from orchestyle.tokens import encode, split_long_notes

    score = split_long_notes(score, grammar.max_duration)
    return encode(score, extract_profile(score, bins), grammar)


@pytest.fixture(scope="session")
def sequences(corpus, bins, grammar):
    return [tokenize(s, bins, grammar) for s in corpus]


ACCEPTANCE: list[str] = []


def record(criterion: str, ok: bool, detail: str = "") -> None:
    """Log one acceptance line and fail the calling test when ``ok`` is false."""
    line = f"{'PASS' if ok else 'FAIL'}: {criterion}" + (f" ({detail})" if detail else "")
    ACCEPTANCE.append(line)
    print(line)
    assert ok, line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
