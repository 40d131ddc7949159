from __future__ import annotations

import io

import mido
import pytest
from hypothesis import given

from orchestyle.errors import EmptyScoreError, MidiFormatError, ScoreError, TimeSignatureChangeError
from orchestyle.midi_io import PERCUSSION_CHANNEL, parse_midi, parse_midi_report, write_midi
from orchestyle.score import Grid, NoteEvent, QuantizedScore

from conftest import scores


def smf(*tracks, tpb=480, meta=()):
    mid = mido.MidiFile(type=1, ticks_per_beat=tpb)
    conductor = mido.MidiTrack(list(meta))
    mid.tracks.append(conductor)
    for msgs in tracks:
        mid.tracks.append(mido.MidiTrack(msgs))
    buf = io.BytesIO()
    mid.save(file=buf)
    return buf.getvalue()


def note(pitch, on, off, velocity=64, channel=0):
    return [mido.Message("note_on", note=pitch, velocity=velocity, channel=channel, time=on),
            mido.Message("note_off", note=pitch, velocity=0, channel=channel, time=off)]


def test_single_quarter_note():
    score = parse_midi(smf([mido.Message("program_change", program=40, time=0)] + note(60, 0, 480)))
    assert score.n_bars == 1
    (track,) = score.tracks
    assert track.program == 40
    assert track.notes == (NoteEvent(0, 0, 60, 4, 64),)


def test_snapping_to_nearest_grid_line():
    # one sub-beat is 120 ticks; 108 ticks is 0.1 sub-beat early of 120
    score = parse_midi(smf(note(60, 108, 480 - 108)))
    assert score.tracks[0].notes[0].onset == 1
    assert score.tracks[0].notes[0].duration == 3
    # exactly half a sub-beat rounds up
    assert parse_midi(smf(note(60, 60, 120))).tracks[0].notes[0].onset == 1


def test_zero_length_note_is_extended():
    score, report = parse_midi_report(smf(note(60, 0, 10)))
    assert score.tracks[0].notes[0].duration == 1
    assert report.zero_length_extended == 1


def test_overlapping_same_pitch_notes_merge():
    msgs = [mido.Message("note_on", note=60, velocity=64, time=0),
            mido.Message("note_on", note=60, velocity=64, time=240),
            mido.Message("note_off", note=60, velocity=0, time=240),
            mido.Message("note_off", note=60, velocity=0, time=480)]
    score, report = parse_midi_report(smf(msgs))
    assert [(n.onset, n.duration) for n in score.tracks[0].notes] == [(0, 8)]
    assert report.overlaps_merged == 1


def test_percussion_dropped_and_counted():
    data = smf(note(60, 0, 480) + note(36, 0, 480, channel=PERCUSSION_CHANNEL))
    score, report = parse_midi_report(data)
    assert report.percussion_dropped == 1
    assert sum(len(t.notes) for t in score.tracks) == 1


def test_meta_only_file_is_empty():
    with pytest.raises(EmptyScoreError):
        parse_midi(smf([mido.MetaMessage("track_name", name="x", time=0)]))


def test_bad_header():
    with pytest.raises(MidiFormatError):
        parse_midi(b"RIFF0000000000000")
    with pytest.raises(MidiFormatError):
        parse_midi(b"MThd\x00\x00\x00\x06\x00\x01\x00\x02\x01\xe0MTrk\x00\x00\x00\xffjunk")


def test_time_signature_change_rejected_with_tick():
    meta = [mido.MetaMessage("time_signature", numerator=4, denominator=4, time=0),
            mido.MetaMessage("time_signature", numerator=3, denominator=4, time=1920)]
    with pytest.raises(TimeSignatureChangeError) as info:
        parse_midi(smf(note(60, 0, 480), meta=meta))
    assert info.value.tick == 1920


def test_three_four_sets_grid():
    meta = [mido.MetaMessage("time_signature", numerator=3, denominator=4, time=0)]
    score = parse_midi(smf(note(60, 0, 480 * 4), meta=meta))
    assert score.grid == Grid(3, 4)
    assert score.n_bars == 2


def test_unregistered_program_is_remapped():
    score, report = parse_midi_report(smf([mido.Message("program_change", program=44, time=0)] + note(60, 0, 480)))
    assert score.tracks[0].program in report.programs_remapped.values()
    assert 44 in report.programs_remapped


def test_two_track_program_changes():
    score = QuantizedScore.from_notes([(40, NoteEvent(0, 0, 67, 4, 72)), (73, NoteEvent(0, 0, 79, 4, 88))])
    mid = mido.MidiFile(file=io.BytesIO(write_midi(score)))
    programs = [m.program for t in mid.tracks for m in t if m.type == "program_change"]
    channels = [m.channel for t in mid.tracks for m in t if m.type == "program_change"]
    assert programs == [40, 73]
    assert PERCUSSION_CHANNEL not in channels
    assert mid.type == 1 and len(mid.tracks) == 3


def test_empty_score_write_is_refused():
    with pytest.raises(ScoreError):
        write_midi(QuantizedScore((), 2))
    assert write_midi(QuantizedScore((), 2), allow_empty=True)[:4] == b"MThd"


@given(scores(representative=False))
def test_round_trip_identity(score):
    assert parse_midi(write_midi(score), score.grid) == score


@given(scores())
def test_parse_is_idempotent_on_grid_aligned_files(score):
    once = parse_midi(write_midi(score), score.grid)
    assert parse_midi(write_midi(once), score.grid) == once


def test_trailing_silent_bars_survive():
    score = QuantizedScore.from_notes([(0, NoteEvent(0, 0, 60, 4, 64))], n_bars=3)
    assert parse_midi(write_midi(score)).n_bars == 3
