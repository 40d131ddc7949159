from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given

from orchestyle.attributes import TextureProfile, extract_profile
from orchestyle.errors import GrammarError, IncompleteProfileError, ScoreError
from orchestyle.score import Grid, NoteEvent, QuantizedScore
from orchestyle.tokens import (
    BAR, BOS, EOS, GrammarConfig, GrammarState, Token, TokenSequence, Vocabulary, decode, dumps_tokens, encode,
    legal_next, loads_tokens, parse_token, run_prefix, split_long_notes, validate,
)

from conftest import scores

VIOLIN, FLUTE = 40, 73


def T(kind, *args):
    return Token(kind, tuple(args))


def one_note_score():
    return QuantizedScore.from_notes([(VIOLIN, NoteEvent(0, 0, 60, 4, 72))])


def test_hand_encoded_single_note(grammar):
    score = one_note_score()
    seq = encode(score, extract_profile(score), grammar)
    assert list(seq.tokens) == [
        BOS, BAR, T("DescriptionTrack", VIOLIN), T("PitchAvg", VIOLIN, 6), T("PitchDiversity", VIOLIN, 1),
        T("SubBeat", 0), T("Track", VIOLIN), T("PitchClass", 0), T("Octave", 4), T("Duration", 4),
        T("Velocity", 5), EOS,
    ]


def test_single_note_round_trip(grammar):
    score = one_note_score()
    profile = extract_profile(score)
    assert decode(encode(score, profile, grammar), grammar) == (score, profile)


def test_empty_bar_is_a_lone_bar_token(grammar):
    score = QuantizedScore.from_notes([(VIOLIN, NoteEvent(16, 0, 60, 4, 72))])
    tokens = encode(score, extract_profile(score), grammar).tokens
    assert tokens[:3] == (BOS, BAR, BAR)


def test_duet_texture_levels(grammar):
    # violin in a medium register with many pitch classes, flute high on one pitch class
    violin = [NoteEvent(i, 0, p, 1, 72) for i, p in enumerate([55, 57, 59, 60, 62, 64, 65, 67])]
    flute = [NoteEvent(0, 0, 84, 8, 72), NoteEvent(8, 0, 96, 8, 72)]
    score = QuantizedScore.from_notes([(VIOLIN, n) for n in violin] + [(FLUTE, n) for n in flute])
    tokens = encode(score, extract_profile(score), grammar).tokens
    level = {(t.kind, t.args[0]): t.args[1] for t in tokens if t.kind in ("PitchAvg", "PitchDiversity")}
    assert level["PitchAvg", FLUTE] > level["PitchAvg", VIOLIN]
    assert level["PitchDiversity", FLUTE] < level["PitchDiversity", VIOLIN]


def test_incomplete_profile(grammar):
    score = one_note_score()
    with pytest.raises(IncompleteProfileError):
        encode(score, TextureProfile(None, {}), grammar)


def test_long_notes_need_splitting(grammar):
    score = QuantizedScore.from_notes([(VIOLIN, NoteEvent(0, 0, 60, 40, 72))], n_bars=3)
    with pytest.raises(ScoreError):
        encode(score, extract_profile(score), grammar)
    split = split_long_notes(score, 32)
    assert [(n.onset, n.duration) for n in split.tracks[0].notes] == [(0, 16), (16, 16), (32, 8)]
    assert decode(encode(split, extract_profile(split), grammar), grammar)[0] == split


def test_octave_before_pitch_class_is_rejected(grammar):
    tokens = [BOS, BAR, T("DescriptionTrack", VIOLIN), T("PitchAvg", VIOLIN, 6), T("PitchDiversity", VIOLIN, 1),
              T("SubBeat", 0), T("Track", VIOLIN), T("Octave", 4)]
    result = validate(tokens, grammar)
    assert not result and result.position == 7
    with pytest.raises(GrammarError) as info:
        decode(TokenSequence(tuple(tokens + [EOS])), grammar)
    assert info.value.position == 7


def test_duplicate_description_rejected(grammar):
    result = validate([BOS, BAR, T("DescriptionTrack", VIOLIN), T("DescriptionTrack", VIOLIN)], grammar)
    assert not result and result.position == 3


def test_non_monotone_sub_beats_rejected_at_second(grammar):
    head = [BOS, BAR, T("DescriptionTrack", VIOLIN), T("PitchAvg", VIOLIN, 6), T("PitchDiversity", VIOLIN, 1)]
    note = [T("Track", VIOLIN), T("PitchClass", 0), T("Octave", 4), T("Duration", 1), T("Velocity", 5)]
    tokens = head + [T("SubBeat", 4)] + note + [T("SubBeat", 2)] + note + [EOS]
    result = validate(tokens, grammar)
    assert not result and result.position == len(head) + 1 + len(note)


def test_undescribed_track_cannot_play_and_described_must(grammar):
    head = [BOS, BAR, T("DescriptionTrack", VIOLIN), T("DescriptionTrack", FLUTE),
            T("PitchAvg", VIOLIN, 6), T("PitchAvg", FLUTE, 8), T("PitchDiversity", VIOLIN, 1), T("PitchDiversity", FLUTE, 1),
            T("SubBeat", 0), T("Track", VIOLIN), T("PitchClass", 0), T("Octave", 4), T("Duration", 1), T("Velocity", 5)]
    assert EOS not in legal_next(head, grammar)
    assert T("Track", 0) not in legal_next(head, grammar)


def test_legal_next_after_pitch_class(grammar):
    prefix = [BOS, BAR, T("DescriptionTrack", VIOLIN), T("PitchAvg", VIOLIN, 6), T("PitchDiversity", VIOLIN, 1),
              T("SubBeat", 0), T("Track", VIOLIN), T("PitchClass", 8)]
    # 12*(o+1)+8 <= 127 holds for o <= 8
    assert legal_next(prefix, grammar) == {T("Octave", o) for o in range(-1, 9)}


def test_legal_next_at_start(grammar):
    assert legal_next([], grammar) == {BOS}
    assert legal_next([BOS], grammar) == {BAR}


def test_legal_next_after_bar(grammar):
    expected = {T("DescriptionTrack", p) for p in grammar.programs} | {BAR, EOS}
    assert legal_next([BOS, BAR], grammar) == expected


def test_last_sub_beat_feasibility(grammar):
    head = [BOS, BAR, T("DescriptionTrack", VIOLIN), T("DescriptionTrack", FLUTE),
            T("PitchAvg", VIOLIN, 6), T("PitchAvg", FLUTE, 8), T("PitchDiversity", VIOLIN, 1), T("PitchDiversity", FLUTE, 1),
            T("SubBeat", 15)]
    # opening the flute first would leave the violin nowhere to play
    assert legal_next(head, grammar) == {T("Track", VIOLIN)}


def test_invalid_prefix_raises(grammar):
    with pytest.raises(GrammarError):
        run_prefix([BOS, EOS, BAR], grammar)


def test_vocabulary_size_formula():
    for programs, max_dur in (((0, 40, 73), 32), (tuple(range(64)), 32), ((5,), 8)):
        config = GrammarConfig(programs, max_duration=max_dur)
        vocab = Vocabulary(config)
        P = len(programs)
        expected = 4 + P * (1 + 13 + 13 + 1) + 16 + max_dur + 8 + 12 + 11
        assert len(vocab) == expected == Vocabulary.expected_size(config)
        assert vocab.tokens[vocab.pad_id].kind == "PAD"
        assert len(set(vocab.tokens)) == len(vocab)


def test_default_vocabulary_size(vocab):
    assert len(vocab) == 1875


def test_text_serialization():
    tokens = [BOS, BAR, T("PitchAvg", 40, 6), T("Octave", -1), EOS]
    text = dumps_tokens(tokens)
    assert text.splitlines()[2] == "PitchAvg(40,6)"
    assert loads_tokens(text) == tokens
    assert parse_token("Octave(-1)") == T("Octave", -1)


def test_bar_index():
    seq = TokenSequence((BOS, BAR, BAR, T("DescriptionTrack", 1), EOS))
    assert seq.bar_index == (0, 0, 1, 1, 1)
    assert seq.n_bars == 2
    assert seq.bar_spans() == [(1, 2), (2, 4)]


@given(scores(max_duration=48))
def test_round_trip_property(score):
    score = split_long_notes(score, 32)
    config = GrammarConfig.from_registry(grid=score.grid)
    profile = extract_profile(score)
    seq = encode(score, profile, config)
    assert validate(seq, config)
    assert decode(seq, config) == (score, profile)


def _walk(config, rng, max_len=400):
    state = GrammarState(config)
    tokens = []
    while not state.done:
        legal = state.legal()
        assert legal, tokens
        structural = [t for t in legal if t.kind in ("SubBeat", "Track", "Bar", "EOS", "PitchAvg")]
        if len(tokens) > max_len and EOS in legal:
            token = EOS
        elif structural and rng.random() < 0.5:
            token = structural[int(rng.integers(len(structural)))]
        else:
            token = legal[int(rng.integers(len(legal)))]
        state.feed(token)
        tokens.append(token)
    return tokens


def test_random_walk_closure(grammar):
    rng = np.random.default_rng(0)
    steps = 0
    walks = 0
    while steps < 10_000:
        tokens = _walk(grammar, rng)
        steps += len(tokens)
        walks += 1
        assert validate(tokens, grammar)
        score, profile = decode(TokenSequence(tuple(tokens)), grammar)
        clipped = any(n.end == score.total_subbeats for t in score.tracks for n in t.notes)
        if not clipped:
            assert encode(score, profile, grammar).tokens == tuple(tokens)
    assert walks > 5


def test_small_grid_walks():
    config = GrammarConfig((0, 40, 73), subbeats_per_bar=6, max_duration=6, beats_per_bar=3)
    rng = np.random.default_rng(3)
    for _ in range(50):
        tokens = _walk(config, rng, 60)
        assert validate(tokens, config)
        decode(TokenSequence(tuple(tokens)), config)
