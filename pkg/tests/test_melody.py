from __future__ import annotations

import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from conftest import scores
from orchestyle.attributes import extract_profile
from orchestyle.errors import InputError
from orchestyle.melody import (
    AUTOMATIC, OCTAVE_SLOT, MelodyConstraint, assign_instruments, extract_melody, melody_token_run,
)
from orchestyle.score import NoteEvent, QuantizedScore
from orchestyle.tokens import GrammarConfig, Token, encode, split_long_notes

VIOLIN, CELLO, FLUTE, OBOE = 40, 42, 73, 68


def T(kind, *args):
    return Token(kind, tuple(args))


def duet(violin_pitches, cello_pitches):
    notes = [(VIOLIN, NoteEvent(4 * i, 0, p, 4, 72)) for i, p in enumerate(violin_pitches)]
    notes += [(CELLO, NoteEvent(4 * i, 0, p, 4, 72)) for i, p in enumerate(cello_pitches)]
    return QuantizedScore.from_notes(notes)


def test_violin_over_cello():
    melody = extract_melody(duet([70, 74], [48]))
    assert melody.bars[0].source_program == VIOLIN
    assert [e.pitch for e in melody.bars[0].events] == [70, 74]


def test_tie_goes_to_lowest_track():
    score = duet([60, 64], [62])
    assert extract_melody(score).bars[0].source_track == 0


def test_single_track_and_empty_bars():
    score = QuantizedScore.from_notes([(FLUTE, NoteEvent(o, 0, 72, 1, 72)) for o in (0, 32)])
    melody = extract_melody(score)
    assert [b.source_program for b in melody.bars] == [FLUTE, None, FLUTE]
    assert melody.bars[1].events == ()


def test_events_sorted_by_sub_beat_then_pitch():
    notes = [(FLUTE, NoteEvent(4, 0, p, 2, 72)) for p in (79, 72)] + [(FLUTE, NoteEvent(0, 0, 74, 2, 72))]
    events = extract_melody(QuantizedScore.from_notes(notes)).bars[0].events
    assert [(e.sub_beat, e.pitch) for e in events] == [(0, 74), (4, 72), (4, 79)]


def test_assign_everywhere_and_per_bar(registry):
    score = QuantizedScore.from_notes([(VIOLIN, NoteEvent(16 * b, 0, 72, 4, 72)) for b in range(8)])
    melody = extract_melody(score)
    assert {b.target_instrument for b in assign_instruments(melody, FLUTE, registry).bars} == {FLUTE}
    alternating = [FLUTE, OBOE] * 4
    assert [b.target_instrument for b in assign_instruments(melody, alternating, registry).bars] == alternating
    assert {b.target_instrument for b in assign_instruments(melody, AUTOMATIC, registry).bars} == {None}


def test_assign_errors(registry):
    melody = extract_melody(duet([72], [48]))
    with pytest.raises(InputError):
        assign_instruments(melody, 3, registry)  # not in the registry
    with pytest.raises(InputError):
        assign_instruments(melody, [FLUTE, OBOE], registry)


def test_token_run_enforce_and_infer():
    score = QuantizedScore.from_notes([(VIOLIN, NoteEvent(0, 0, 72, 4, 100))])
    melody = assign_instruments(extract_melody(score), FLUTE)
    assert melody_token_run(melody, 0, 0) == [
        T("Track", FLUTE), T("PitchClass", 0), T("Octave", 5), T("Duration", 4), T("Velocity", 7)]
    assert melody_token_run(melody, 0, 0, "infer") == [
        T("Track", FLUTE), T("PitchClass", 0), OCTAVE_SLOT, T("Duration", 4), T("Velocity", 7)]
    assert melody_token_run(melody, 0, 1) == []


def test_token_run_needs_a_target():
    melody = extract_melody(duet([72], [48]))
    with pytest.raises(InputError):
        melody_token_run(melody, 0, 0)
    assert melody_token_run(melody, 0, 0, target=OBOE)[0] == T("Track", OBOE)


def test_constraint_json_round_trip(corpus):
    melody = assign_instruments(extract_melody(corpus[0]), [FLUTE, None] * 4)
    assert MelodyConstraint.from_json(json.loads(json.dumps(melody.to_json()))) == melody


@given(scores(max_bars=4, max_tracks=4))
def test_skyline_matches_oracle(score):
    melody = extract_melody(score)
    for bar in range(score.n_bars):
        assert melody.bars[bar].source_program == oracles.skyline_program(score, bar)


@given(scores(max_bars=3, max_tracks=4), st.integers(-24, 24))
def test_transposition_keeps_source(score, shift):
    pitches = [n.pitch for t in score.tracks for n in t.notes]
    shift = max(-min(pitches), min(shift, 127 - max(pitches)))
    moved = QuantizedScore.from_notes(
        [(p, NoteEvent(n.onset, 0, n.pitch + shift, n.duration, n.velocity)) for p, n in score.iter_program_notes()],
        score.n_bars, score.grid)
    assert [b.source_track for b in extract_melody(moved).bars] == [b.source_track for b in extract_melody(score).bars]


def _track_content(tokens, program):
    """Track(program) plus its note tokens, per sub-beat group, for one bar."""
    out, mine = [], False
    for tok in tokens:
        if tok.kind in ("SubBeat",):
            mine = False
        elif tok.kind == "Track":
            mine = tok.args[0] == program
            if mine:
                out.append(tok)
        elif mine and tok.kind in ("PitchClass", "Octave", "Duration", "Velocity"):
            out.append(tok)
    return out


@given(scores(max_bars=3, max_tracks=3, max_duration=40))
def test_injection_completeness(score):
    score = split_long_notes(score, 32)
    config = GrammarConfig.from_registry(grid=score.grid)
    seq = encode(score, extract_profile(score), config)
    melody = extract_melody(score, config)
    for (start, stop), entry in zip(seq.bar_spans(), melody.bars):
        if entry.source_program is None:
            continue
        bar = seq.bar_index[start]
        injected = [t for q in range(score.subbeats_per_bar)
                    for t in melody_token_run(melody, bar, q, target=entry.source_program)]
        assert injected == _track_content(seq.tokens[start:stop], entry.source_program)
