"""Standard MIDI File <-> :class:`QuantizedScore`.

Parsing snaps note on/off times to the nearest sub-beat, keeps only the
time signature among meta events, drops the percussion channel, extends
zero-length notes to one sub-beat and merges overlapping same-pitch notes
inside a track.
"""

from __future__ import annotations

import io
import logging
from collections import defaultdict, deque
from dataclasses import dataclass

import mido

from .errors import EmptyScoreError, MidiFormatError, ScoreError, TimeSignatureChangeError
from .instruments import InstrumentRegistry, default_registry
from .score import Grid, NoteEvent, QuantizedScore

log = logging.getLogger(__name__)

PERCUSSION_CHANNEL = 9
TICKS_PER_BEAT = 480


@dataclass(frozen=True, slots=True)
class ParseReport:
    notes_read: int
    percussion_dropped: int
    zero_length_extended: int
    overlaps_merged: int
    programs_remapped: dict[int, int]


def _snap(tick: int, ticks_per_beat: int, subbeats_per_beat: int) -> int:
    # Round half up, in integers.
    return (2 * tick * subbeats_per_beat + ticks_per_beat) // (2 * ticks_per_beat)


def _read(data: bytes) -> mido.MidiFile:
    if len(data) < 14 or data[:4] != b"MThd":
        raise MidiFormatError("missing MThd header")
    try:
        mid = mido.MidiFile(file=io.BytesIO(data))
    except (OSError, EOFError, ValueError, KeyError, IndexError) as exc:
        raise MidiFormatError(f"malformed SMF: {exc}") from None
    if mid.type not in (0, 1):
        raise MidiFormatError(f"unsupported SMF type {mid.type}")
    if mid.ticks_per_beat <= 0:
        raise MidiFormatError("SMPTE time division is not supported")
    return mid


def parse_midi_report(
    data: bytes,
    grid: Grid | None = None,
    registry: InstrumentRegistry | None = None,
) -> tuple[QuantizedScore, ParseReport]:
    """Parse and also return what normalization did to the events."""
    grid = grid or Grid()
    registry = registry or default_registry()
    mid = _read(data)
    tpb = mid.ticks_per_beat
    spb = grid.subbeats_per_beat

    meter: tuple[int, int] | None = None
    end_tick = 0
    timeline = []  # (tick, track_no, order, msg)
    for track_no, track in enumerate(mid.tracks):
        tick = 0
        for order, msg in enumerate(track):
            tick += msg.time
            timeline.append((tick, track_no, order, msg))
        end_tick = max(end_tick, tick)
    timeline.sort(key=lambda item: item[:3])

    programs = defaultdict(int)  # channel -> program
    open_notes: dict[tuple[int, int, int], deque] = defaultdict(deque)
    raw_notes = []  # (program, on_tick, off_tick, pitch, velocity)
    dropped_percussion = 0
    for tick, track_no, _, msg in timeline:
        if msg.type == "time_signature":
            sig = (msg.numerator, msg.denominator)
            if meter is None and tick == 0:
                meter = sig
            elif sig != (meter or (4, 4)):
                raise TimeSignatureChangeError(tick, *sig)
            continue
        if msg.type == "program_change":
            programs[msg.channel] = msg.program
            continue
        if msg.type not in ("note_on", "note_off"):
            continue
        if msg.channel == PERCUSSION_CHANNEL:
            if msg.type == "note_on" and msg.velocity > 0:
                dropped_percussion += 1
            continue
        key = (track_no, msg.channel, msg.note)
        if msg.type == "note_on" and msg.velocity > 0:
            open_notes[key].append((tick, msg.velocity, programs[msg.channel]))
        elif open_notes[key]:
            on_tick, velocity, program = open_notes[key].popleft()
            raw_notes.append((program, on_tick, tick, msg.note, velocity))
    for (_, _, pitch), pending in open_notes.items():
        for on_tick, velocity, program in pending:
            raw_notes.append((program, on_tick, end_tick, pitch, velocity))
    if dropped_percussion:
        log.warning("dropped %d percussion-channel notes", dropped_percussion)
    if not raw_notes:
        raise EmptyScoreError("file contains no pitched note events")

    numerator, denominator = meter or (4, 4)
    if (numerator * 4) % denominator:
        raise MidiFormatError(f"time signature {numerator}/{denominator} is not a whole number of quarter beats")
    grid = Grid((numerator * 4) // denominator, spb)

    extended = 0
    remapped: dict[int, int] = {}
    snapped: dict[tuple[int, int], list[list[int]]] = defaultdict(list)
    for program, on_tick, off_tick, pitch, velocity in raw_notes:
        target = registry.resolve(program)
        if target != program:
            remapped[program] = target
        onset = _snap(on_tick, tpb, spb)
        offset = _snap(off_tick, tpb, spb)
        if offset <= onset:
            extended += 1
            offset = onset + 1
        snapped[(target, pitch)].append([onset, offset, velocity])

    merged = 0
    notes = []
    for (program, pitch), spans in snapped.items():
        spans.sort()
        current = spans[0]
        for span in spans[1:]:
            if span[0] < current[1]:
                current[1] = max(current[1], span[1])
                merged += 1
            else:
                notes.append((program, NoteEvent(current[0], 0, pitch, current[1] - current[0], current[2])))
                current = span
        notes.append((program, NoteEvent(current[0], 0, pitch, current[1] - current[0], current[2])))

    last = max(max(n.end for _, n in notes), _snap(end_tick, tpb, spb))
    n_bars = -(-last // grid.subbeats_per_bar)
    score = QuantizedScore.from_notes(notes, n_bars=n_bars, grid=grid)
    report = ParseReport(len(raw_notes) + dropped_percussion, dropped_percussion, extended, merged, remapped)
    return score, report


def parse_midi(data: bytes, grid: Grid | None = None, registry: InstrumentRegistry | None = None) -> QuantizedScore:
    return parse_midi_report(data, grid, registry)[0]


def write_midi(score: QuantizedScore, tempo: float = 120.0, allow_empty: bool = False) -> bytes:
    """Serialize as a type-1 SMF: a conductor track plus one track per score track.

    An empty score is refused unless ``allow_empty``, which writes the conductor
    track alone (the file then parses as an empty-score error).
    """
    if score.is_empty() and not allow_empty:
        raise ScoreError("cannot write an empty score")
    channels = [c for c in range(16) if c != PERCUSSION_CHANNEL]
    if len(score.tracks) > len(channels):
        raise ScoreError(f"at most {len(channels)} tracks fit in one SMF, got {len(score.tracks)}")
    ticks_per_sub = TICKS_PER_BEAT // score.grid.subbeats_per_beat
    if ticks_per_sub * score.grid.subbeats_per_beat != TICKS_PER_BEAT:
        raise ScoreError(f"grid of {score.grid.subbeats_per_beat} sub-beats does not divide {TICKS_PER_BEAT} ticks")
    end = score.total_subbeats * ticks_per_sub

    mid = mido.MidiFile(type=1, ticks_per_beat=TICKS_PER_BEAT)
    conductor = mido.MidiTrack()
    conductor.append(mido.MetaMessage("set_tempo", tempo=mido.bpm2tempo(tempo), time=0))
    conductor.append(
        mido.MetaMessage("time_signature", numerator=score.grid.beats_per_bar, denominator=4, time=0)
    )
    conductor.append(mido.MetaMessage("end_of_track", time=end))
    mid.tracks.append(conductor)

    for track, channel in zip(score.tracks, channels):
        events = []
        for n in track.notes:
            # note_off sorts before note_on at equal ticks (0 < 1).
            events.append((n.onset * ticks_per_sub, 1, n.pitch, n.velocity))
            events.append((n.end * ticks_per_sub, 0, n.pitch, 0))
        events.sort()
        out = mido.MidiTrack()
        out.append(mido.Message("program_change", channel=channel, program=track.program, time=0))
        now = 0
        for tick, is_on, pitch, velocity in events:
            kind = "note_on" if is_on else "note_off"
            out.append(mido.Message(kind, channel=channel, note=pitch, velocity=velocity, time=tick - now))
            now = tick
        out.append(mido.MetaMessage("end_of_track", time=end - now))
        mid.tracks.append(out)

    buf = io.BytesIO()
    mid.save(file=buf)
    return buf.getvalue()
