"""Bar-wise skyline melody extraction and the melody token runs injected at decode time."""

from __future__ import annotations

from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Sequence

from .errors import InputError
from .instruments import InstrumentRegistry, default_registry
from .score import QuantizedScore
from .tokens import GrammarConfig, Token, pitch_of, split_pitch

AUTOMATIC = "automatic"


class _OctaveSlot:
    """Placeholder for an Octave token the model must generate."""

    def __repr__(self) -> str:
        return "<generate Octave>"


OCTAVE_SLOT = _OctaveSlot()


@dataclass(frozen=True, slots=True)
class MelodyEvent:
    sub_beat: int
    pitch_class: int
    octave: int
    duration: int
    velocity_bin: int

    @property
    def pitch(self) -> int:
        return pitch_of(self.pitch_class, self.octave)

    def sort_key(self) -> tuple[int, int]:
        return self.sub_beat, self.pitch


@dataclass(frozen=True)
class MelodyBar:
    source_track: int | None
    source_program: int | None
    events: tuple[MelodyEvent, ...]
    target_instrument: int | None = None

    @property
    def positions(self) -> list[int]:
        return sorted({e.sub_beat for e in self.events})


@dataclass(frozen=True)
class MelodyConstraint:
    bars: tuple[MelodyBar, ...]

    def __len__(self) -> int:
        return len(self.bars)

    def to_json(self) -> dict:
        return {
            "version": 1,
            "bars": [
                {
                    "source_track": b.source_track,
                    "source_program": b.source_program,
                    "target_instrument": AUTOMATIC if b.target_instrument is None else b.target_instrument,
                    "events": [[e.sub_beat, e.pitch_class, e.octave, e.duration, e.velocity_bin] for e in b.events],
                }
                for b in self.bars
            ],
        }

    @classmethod
    def from_json(cls, doc: dict) -> MelodyConstraint:
        bars = []
        for b in doc["bars"]:
            target = b.get("target_instrument", AUTOMATIC)
            events = tuple(sorted((MelodyEvent(*map(int, e)) for e in b["events"]), key=MelodyEvent.sort_key))
            bars.append(MelodyBar(b.get("source_track"), b.get("source_program"), events,
                                  None if target == AUTOMATIC else int(target)))
        return cls(tuple(bars))

    def truncate(self, n_bars: int) -> MelodyConstraint:
        return MelodyConstraint(self.bars[:n_bars])


def extract_melody(score: QuantizedScore, config: GrammarConfig | None = None) -> MelodyConstraint:
    """Per bar, take every note of the track with the highest mean pitch.

    Ties go to the lowest track index. Bars with no notes get an empty entry.
    """
    velocity_bin = (config or GrammarConfig((),)).velocity_bin
    bars = []
    for bar in range(score.n_bars):
        start, _ = score.bar_span(bar)
        best, best_mean = None, None
        for t in score.active_tracks(bar):
            notes = score.notes_in_bar(bar, t)
            mean = Fraction(sum(n.pitch for n in notes), len(notes))
            if best_mean is None or mean > best_mean:
                best, best_mean = t, mean
        if best is None:
            bars.append(MelodyBar(None, None, ()))
            continue
        events = tuple(sorted(
            (MelodyEvent(n.onset - start, *split_pitch(n.pitch), n.duration, velocity_bin(n.velocity))
             for n in score.notes_in_bar(bar, best)),
            key=MelodyEvent.sort_key,
        ))
        bars.append(MelodyBar(best, score.tracks[best].program, events))
    return MelodyConstraint(tuple(bars))


def assign_instruments(
    constraint: MelodyConstraint,
    choice: int | Sequence[int | None] | str | None,
    registry: InstrumentRegistry | None = None,
) -> MelodyConstraint:
    """Set the melodic instrument: one program for every bar, one per bar,
    or ``"automatic"`` to leave the choice to the decoder."""
    registry = registry or default_registry()
    if choice is None or choice == AUTOMATIC:
        targets = [None] * len(constraint)
    elif isinstance(choice, int):
        targets = [choice] * len(constraint)
    else:
        targets = list(choice)
        if len(targets) != len(constraint):
            raise InputError(f"{len(targets)} melody instruments given for {len(constraint)} bars")
    for t in targets:
        if t is not None:
            registry.lookup(t)
    return MelodyConstraint(tuple(replace(b, target_instrument=t) for b, t in zip(constraint.bars, targets)))


def melody_token_run(
    constraint: MelodyConstraint,
    bar: int,
    sub_beat: int,
    octave_mode: str = "enforce",
    target: int | None = None,
) -> list[Token | _OctaveSlot]:
    """Track token plus note tuples to inject after ``SubBeat(sub_beat)``.

    In ``"infer"`` mode the Octave slots are :data:`OCTAVE_SLOT` placeholders.
    Returns an empty list when the melody is silent at that sub-beat.
    """
    entry = constraint.bars[bar]
    events = [e for e in entry.events if e.sub_beat == sub_beat]
    if not events:
        return []
    target = entry.target_instrument if target is None else target
    if target is None:
        raise InputError(f"melody instrument for bar {bar} is not resolved")
    run: list[Token | _OctaveSlot] = [Token("Track", (target,))]
    for e in sorted(events, key=lambda e: e.pitch):
        octave = OCTAVE_SLOT if octave_mode == "infer" else Token("Octave", (e.octave,))
        run += [Token("PitchClass", (e.pitch_class,)), octave, Token("Duration", (e.duration,)),
                Token("Velocity", (e.velocity_bin,))]
    return run
