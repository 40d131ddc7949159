"""Quantized multi-track score: the common currency of every other module."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Iterator

from .errors import ScoreError


@dataclass(frozen=True, slots=True)
class Grid:
    """Sub-beat quantization grid. A beat is a quarter note."""

    beats_per_bar: int = 4
    subbeats_per_beat: int = 4

    def __post_init__(self) -> None:
        if self.beats_per_bar < 1 or self.subbeats_per_beat < 1:
            raise ScoreError(f"invalid grid {self}")

    @property
    def subbeats_per_bar(self) -> int:
        return self.beats_per_bar * self.subbeats_per_beat


@dataclass(frozen=True, slots=True, order=True)
class NoteEvent:
    """A note on the sub-beat grid. ``track`` indexes ``QuantizedScore.tracks``."""

    onset: int
    track: int
    pitch: int
    duration: int
    velocity: int

    def __post_init__(self) -> None:
        if self.onset < 0:
            raise ScoreError(f"negative onset in {self}")
        if self.duration < 1:
            raise ScoreError(f"duration must be >= 1 in {self}")
        if not 0 <= self.pitch <= 127:
            raise ScoreError(f"pitch out of MIDI range in {self}")
        if not 1 <= self.velocity <= 127:
            raise ScoreError(f"velocity out of MIDI range in {self}")

    @property
    def end(self) -> int:
        return self.onset + self.duration


@dataclass(frozen=True, slots=True)
class Track:
    program: int
    notes: tuple[NoteEvent, ...]


@dataclass(frozen=True)
class QuantizedScore:
    """A piece as bars x tracks x note events.

    Tracks are kept in canonical form: one track per program, sorted by
    program, no empty tracks, notes sorted by (onset, pitch). Use
    :meth:`from_notes` to build one from loose ``(program, note)`` data.
    """

    tracks: tuple[Track, ...]
    n_bars: int
    grid: Grid = field(default_factory=Grid)

    def __post_init__(self) -> None:
        if self.n_bars < 0:
            raise ScoreError("n_bars must be >= 0")
        total = self.total_subbeats
        programs = [t.program for t in self.tracks]
        if programs != sorted(set(programs)):
            raise ScoreError(f"track programs must be unique and ascending, got {programs}")
        for index, track in enumerate(self.tracks):
            if not 0 <= track.program <= 127:
                raise ScoreError(f"program {track.program} out of MIDI range")
            if not track.notes:
                raise ScoreError(f"track {index} (program {track.program}) has no notes")
            if list(track.notes) != sorted(track.notes):
                raise ScoreError(f"track {index} notes are not sorted")
            for a, b in zip(track.notes, track.notes[1:]):
                if (a.onset, a.pitch) == (b.onset, b.pitch):
                    raise ScoreError(f"track {index} strikes pitch {a.pitch} twice at sub-beat {a.onset}")
            for note in track.notes:
                if note.track != index:
                    raise ScoreError(f"note {note} stored under track {index}")
                if note.end > total:
                    raise ScoreError(f"note {note} ends after the last bar line ({total})")

    @classmethod
    def from_notes(
        cls,
        notes: Iterable[tuple[int, NoteEvent]],
        n_bars: int | None = None,
        grid: Grid | None = None,
    ) -> QuantizedScore:
        """Canonicalize ``(program, note)`` pairs; ``note.track`` is ignored.

        ``n_bars`` defaults to the fewest bars covering every note.
        """
        grid = grid or Grid()
        by_program: dict[int, list[NoteEvent]] = {}
        for program, note in notes:
            by_program.setdefault(program, []).append(note)
        tracks = []
        for index, program in enumerate(sorted(by_program)):
            track_notes = sorted(replace(n, track=index) for n in by_program[program])
            tracks.append(Track(program, tuple(track_notes)))
        if n_bars is None:
            last = max((n.end for t in tracks for n in t.notes), default=0)
            n_bars = -(-last // grid.subbeats_per_bar)
        return cls(tuple(tracks), n_bars, grid)

    @property
    def subbeats_per_bar(self) -> int:
        return self.grid.subbeats_per_bar

    @property
    def total_subbeats(self) -> int:
        return self.n_bars * self.grid.subbeats_per_bar

    @property
    def bars(self) -> tuple[int, ...]:
        """Bar boundaries in sub-beats, ``n_bars + 1`` entries starting at 0."""
        step = self.subbeats_per_bar
        return tuple(range(0, self.total_subbeats + 1, step))

    @property
    def programs(self) -> tuple[int, ...]:
        return tuple(t.program for t in self.tracks)

    def is_empty(self) -> bool:
        return not self.tracks

    def events(self) -> list[NoteEvent]:
        """All notes ordered by (onset, track, pitch)."""
        return sorted((n for t in self.tracks for n in t.notes), key=lambda n: (n.onset, n.track, n.pitch))

    def bar_of(self, onset: int) -> int:
        return onset // self.subbeats_per_bar

    def bar_span(self, bar: int) -> tuple[int, int]:
        if not 0 <= bar < self.n_bars:
            raise IndexError(f"bar {bar} out of range for a {self.n_bars}-bar score")
        start = bar * self.subbeats_per_bar
        return start, start + self.subbeats_per_bar

    def notes_in_bar(self, bar: int, track: int | None = None) -> list[NoteEvent]:
        """Notes whose onset lies in ``bar``, optionally for one track index."""
        start, stop = self.bar_span(bar)
        tracks = self.tracks if track is None else (self.tracks[track],)
        return [n for t in tracks for n in t.notes if start <= n.onset < stop]

    def active_tracks(self, bar: int) -> list[int]:
        """Indices of tracks with at least one onset in ``bar``."""
        start, stop = self.bar_span(bar)
        return [i for i, t in enumerate(self.tracks) if any(start <= n.onset < stop for n in t.notes)]

    def track_index(self, program: int) -> int:
        for i, t in enumerate(self.tracks):
            if t.program == program:
                return i
        raise KeyError(f"no track with program {program}")

    def iter_program_notes(self) -> Iterator[tuple[int, NoteEvent]]:
        for t in self.tracks:
            for n in t.notes:
                yield t.program, n

    def slice_bars(self, start: int, stop: int) -> QuantizedScore:
        """Bars ``[start, stop)`` as a new score; notes keep their durations, clipped at ``stop``."""
        if not 0 <= start <= stop <= self.n_bars:
            raise IndexError(f"bad bar slice [{start}, {stop}) of {self.n_bars} bars")
        lo, hi = start * self.subbeats_per_bar, stop * self.subbeats_per_bar
        kept = [
            (p, replace(n, onset=n.onset - lo, duration=min(n.end, hi) - n.onset))
            for p, n in self.iter_program_notes()
            if lo <= n.onset < hi
        ]
        return QuantizedScore.from_notes(kept, n_bars=stop - start, grid=self.grid)
