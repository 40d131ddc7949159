"""Token vocabulary, bar layout grammar, and score <-> token conversion.

Sequence layout::

    BOS
    ( Bar
      DescriptionTrack(p)...            one per active track, ascending program
      PitchAvg(p, level)...             same order
      PitchDiversity(p, level)...       same order
      ( SubBeat(pos)                    ascending within the bar
        ( Track(p)                      ascending within the sub-beat
          ( PitchClass Octave Duration Velocity )+   ascending pitch
        )+
      )*
    )+
    EOS

Every described track must play at least once in its bar, and only
described tracks may play. Bar-level rhythmicity/polyphonicity classes are
not tokens; they travel in ``TokenSequence.conditions``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Iterable, Sequence

from .attributes import AVG_PITCH_LEVELS, DIVERSITY_LEVELS, TextureProfile
from .errors import GrammarError, IncompleteProfileError, ScoreError
from .instruments import InstrumentRegistry, default_registry
from .score import Grid, NoteEvent, QuantizedScore

OCTAVES = range(-1, 10)


@dataclass(frozen=True, slots=True)
class Token:
    kind: str
    args: tuple[int, ...] = ()

    def __str__(self) -> str:
        if not self.args:
            return self.kind
        return f"{self.kind}({','.join(map(str, self.args))})"

    def __repr__(self) -> str:
        return str(self)


BOS = Token("BOS")
EOS = Token("EOS")
BAR = Token("Bar")
PAD = Token("PAD")

_TOKEN_RE = re.compile(r"^([A-Za-z]+)(?:\(([-\d, ]*)\))?$")


def parse_token(text: str) -> Token:
    m = _TOKEN_RE.match(text.strip())
    if not m:
        raise GrammarError(0, text, frozenset())
    kind, args = m.groups()
    return Token(kind, tuple(int(a) for a in args.split(",")) if args else ())


def dumps_tokens(tokens: Iterable[Token]) -> str:
    return "".join(f"{t}\n" for t in tokens)


def loads_tokens(text: str) -> list[Token]:
    return [parse_token(line) for line in text.splitlines() if line.strip()]


def pitch_of(pitch_class: int, octave: int) -> int:
    return 12 * (octave + 1) + pitch_class


def split_pitch(pitch: int) -> tuple[int, int]:
    """MIDI pitch -> (pitch class, octave), C4 = 60 is (0, 4)."""
    return pitch % 12, pitch // 12 - 1


@dataclass(frozen=True)
class GrammarConfig:
    programs: tuple[int, ...]
    subbeats_per_bar: int = 16
    max_duration: int = 32
    velocity_bins: int = 8
    beats_per_bar: int = 4

    @classmethod
    def from_registry(cls, registry: InstrumentRegistry | None = None, grid: Grid | None = None, **kwargs) -> GrammarConfig:
        registry = registry or default_registry()
        grid = grid or Grid()
        return cls(registry.programs, grid.subbeats_per_bar, beats_per_bar=grid.beats_per_bar, **kwargs)

    @property
    def grid(self) -> Grid:
        return Grid(self.beats_per_bar, self.subbeats_per_bar // self.beats_per_bar)

    @property
    def velocity_width(self) -> int:
        return 128 // self.velocity_bins

    def velocity_bin(self, velocity: int) -> int:
        return min(velocity // self.velocity_width + 1, self.velocity_bins)

    def bin_velocity(self, bin_: int) -> int:
        """Representative MIDI velocity of a bin (its centre)."""
        return (bin_ - 1) * self.velocity_width + self.velocity_width // 2

    def to_json(self) -> dict:
        return {
            "programs": list(self.programs),
            "subbeats_per_bar": self.subbeats_per_bar,
            "max_duration": self.max_duration,
            "velocity_bins": self.velocity_bins,
            "beats_per_bar": self.beats_per_bar,
        }

    @classmethod
    def from_json(cls, doc: dict) -> GrammarConfig:
        return cls(
            tuple(doc["programs"]), doc["subbeats_per_bar"], doc["max_duration"], doc["velocity_bins"], doc["beats_per_bar"]
        )


class Vocabulary:
    """Deterministic token <-> id map.

    Size = 4 + 28 P + S + D + V + 23 for P programs, S sub-beats per bar,
    D durations and V velocity bins (PAD, BOS, EOS, Bar; per program one
    DescriptionTrack, 13 PitchAvg, 13 PitchDiversity, one Track; 12 pitch
    classes and 11 octaves).
    """

    def __init__(self, config: GrammarConfig):
        self.config = config
        P = config.programs
        tokens = [PAD, BOS, EOS, BAR]
        tokens += [Token("DescriptionTrack", (p,)) for p in P]
        tokens += [Token("PitchAvg", (p, lv)) for p in P for lv in AVG_PITCH_LEVELS]
        tokens += [Token("PitchDiversity", (p, lv)) for p in P for lv in DIVERSITY_LEVELS]
        tokens += [Token("SubBeat", (s,)) for s in range(config.subbeats_per_bar)]
        tokens += [Token("Track", (p,)) for p in P]
        tokens += [Token("PitchClass", (pc,)) for pc in range(12)]
        tokens += [Token("Octave", (o,)) for o in OCTAVES]
        tokens += [Token("Duration", (d,)) for d in range(1, config.max_duration + 1)]
        tokens += [Token("Velocity", (v,)) for v in range(1, config.velocity_bins + 1)]
        self.tokens = tokens
        self.index = {t: i for i, t in enumerate(tokens)}

    @staticmethod
    def expected_size(config: GrammarConfig) -> int:
        return 4 + 28 * len(config.programs) + config.subbeats_per_bar + config.max_duration + config.velocity_bins + 23

    def __len__(self) -> int:
        return len(self.tokens)

    def __getitem__(self, token: Token) -> int:
        return self.index[token]

    @property
    def pad_id(self) -> int:
        return 0

    def encode_ids(self, tokens: Iterable[Token]) -> list[int]:
        return [self.index[t] for t in tokens]

    def decode_ids(self, ids: Iterable[int]) -> list[Token]:
        return [self.tokens[i] for i in ids]


@dataclass(frozen=True)
class TokenSequence:
    tokens: tuple[Token, ...]
    conditions: tuple[tuple[int, int], ...] | None = None

    def __len__(self) -> int:
        return len(self.tokens)

    @cached_property
    def bar_index(self) -> tuple[int, ...]:
        """Bar number of every position; BOS counts as bar 0, EOS as the last bar."""
        out, bar = [], 0
        seen = False
        for t in self.tokens:
            if t == BAR:
                bar = bar + 1 if seen else 0
                seen = True
            out.append(bar)
        return tuple(out)

    @property
    def n_bars(self) -> int:
        return sum(1 for t in self.tokens if t == BAR)

    def bar_spans(self) -> list[tuple[int, int]]:
        """``[start, stop)`` token positions of each bar, from its Bar token."""
        starts = [i for i, t in enumerate(self.tokens) if t == BAR]
        stops = starts[1:] + [len(self.tokens) - (1 if self.tokens and self.tokens[-1] == EOS else 0)]
        return list(zip(starts, stops))


# automaton phases
_START, _NEED_BAR, _DESC, _AVG, _DIV, _NEED_SUBBEAT, _NEED_TRACK, _NEED_PC, _NEED_OCT, _NEED_DUR, _NEED_VEL, _AFTER_NOTE, _END = range(13)


class GrammarState:
    """Incremental recognizer for the token language.

    ``legal()`` is the exact continuation set: a token is offered only if
    the sequence can still be completed to EOS, so the set is never empty
    before EOS.
    """

    def __init__(self, config: GrammarConfig):
        self.config = config
        self._programs = frozenset(config.programs)
        self.phase = _START
        self.position = 0
        self.bar = -1
        self.described: list[int] = []
        self.n_levels = 0
        self.subbeat = -1
        self.track = -1
        self.used: set[int] = set()
        self.last_pitch = -1
        self.pitch_class = 0
        self.notes_in_bar = 0

    def copy(self) -> GrammarState:
        other = object.__new__(GrammarState)
        other.__dict__.update(self.__dict__)
        other.described = list(self.described)
        other.used = set(self.used)
        return other

    @property
    def done(self) -> bool:
        return self.phase == _END

    @property
    def unused(self) -> set[int]:
        return set(self.described) - self.used

    @property
    def after_note(self) -> bool:
        """True right after a complete note, where further notes are optional."""
        return self.phase == _AFTER_NOTE

    def can_close_bar(self) -> bool:
        return not self.unused

    def track_feasible(self, program: int) -> bool:
        """Whether opening ``Track(program)`` at the current sub-beat leaves every
        other described track a place to play."""
        if self.subbeat < self.config.subbeats_per_bar - 1:
            return True
        return all(u > program for u in self.unused - {program})

    def _pitch_classes(self) -> list[int]:
        lo = self.last_pitch
        return [pc for pc in range(12) if any(lo < pitch_of(pc, o) <= 127 for o in OCTAVES)]

    def _octaves(self) -> list[int]:
        return [o for o in OCTAVES if self.last_pitch < pitch_of(self.pitch_class, o) <= 127]

    def legal(self) -> list[Token]:
        ph = self.phase
        cfg = self.config
        if ph == _START:
            return [BOS]
        if ph == _NEED_BAR:
            return [BAR]
        if ph == _DESC:
            last = self.described[-1] if self.described else -1
            out = [Token("DescriptionTrack", (p,)) for p in cfg.programs if p > last]
            if self.described:
                out += [Token("PitchAvg", (self.described[0], lv)) for lv in AVG_PITCH_LEVELS]
            else:
                out += [BAR, EOS]
            return out
        if ph == _AVG:
            if self.n_levels < len(self.described):
                return [Token("PitchAvg", (self.described[self.n_levels], lv)) for lv in AVG_PITCH_LEVELS]
            return [Token("PitchDiversity", (self.described[0], lv)) for lv in DIVERSITY_LEVELS]
        if ph == _DIV:
            if self.n_levels < len(self.described):
                return [Token("PitchDiversity", (self.described[self.n_levels], lv)) for lv in DIVERSITY_LEVELS]
            return [Token("SubBeat", (s,)) for s in range(cfg.subbeats_per_bar)]
        if ph == _NEED_SUBBEAT:
            return [Token("SubBeat", (s,)) for s in range(cfg.subbeats_per_bar)]
        if ph == _NEED_TRACK:
            return [Token("Track", (p,)) for p in self.described if self.track_feasible(p)]
        if ph == _NEED_PC:
            return [Token("PitchClass", (pc,)) for pc in self._pitch_classes()]
        if ph == _NEED_OCT:
            return [Token("Octave", (o,)) for o in self._octaves()]
        if ph == _NEED_DUR:
            return [Token("Duration", (d,)) for d in range(1, cfg.max_duration + 1)]
        if ph == _NEED_VEL:
            return [Token("Velocity", (v,)) for v in range(1, cfg.velocity_bins + 1)]
        if ph == _AFTER_NOTE:
            out = [Token("PitchClass", (pc,)) for pc in self._pitch_classes()]
            out += [Token("Track", (p,)) for p in self.described if p > self.track and self.track_feasible(p)]
            out += [Token("SubBeat", (s,)) for s in range(self.subbeat + 1, cfg.subbeats_per_bar)]
            if self.can_close_bar():
                out += [BAR, EOS]
            return out
        return []

    def is_legal(self, token: Token) -> bool:
        return token in self.legal()

    def feed(self, token: Token) -> None:
        if not self.is_legal(token):
            raise GrammarError(self.position, token, frozenset(self.legal()))
        self._advance(token)

    def _advance(self, token: Token) -> None:
        kind = token.kind
        self.position += 1
        if kind == "BOS":
            self.phase = _NEED_BAR
        elif kind == "Bar":
            self.phase = _DESC
            self.bar += 1
            self.described = []
            self.used = set()
            self.subbeat = -1
            self.track = -1
            self.notes_in_bar = 0
        elif kind == "EOS":
            self.phase = _END
        elif kind == "DescriptionTrack":
            self.described.append(token.args[0])
        elif kind == "PitchAvg":
            if self.phase == _DESC:
                self.phase, self.n_levels = _AVG, 0
            self.n_levels += 1
        elif kind == "PitchDiversity":
            if self.phase == _AVG:
                self.phase, self.n_levels = _DIV, 0
            self.n_levels += 1
            if self.n_levels == len(self.described):
                self.phase = _NEED_SUBBEAT
        elif kind == "SubBeat":
            self.subbeat = token.args[0]
            self.track = -1
            self.phase = _NEED_TRACK
        elif kind == "Track":
            self.track = token.args[0]
            self.used.add(self.track)
            self.last_pitch = -1
            self.phase = _NEED_PC
        elif kind == "PitchClass":
            self.pitch_class = token.args[0]
            self.phase = _NEED_OCT
        elif kind == "Octave":
            self.last_pitch = pitch_of(self.pitch_class, token.args[0])
            self.phase = _NEED_DUR
        elif kind == "Duration":
            self.phase = _NEED_VEL
        elif kind == "Velocity":
            self.notes_in_bar += 1
            self.phase = _AFTER_NOTE


@dataclass(frozen=True)
class ValidationResult:
    ok: bool
    position: int | None = None
    token: Token | None = None
    expected: frozenset = field(default_factory=frozenset)

    def __bool__(self) -> bool:
        return self.ok


def _tokens_of(seq: TokenSequence | Sequence[Token]) -> Sequence[Token]:
    return seq.tokens if isinstance(seq, TokenSequence) else seq


def validate(seq: TokenSequence | Sequence[Token], config: GrammarConfig) -> ValidationResult:
    """Accept complete sequences of the language; otherwise report the first violation."""
    state = GrammarState(config)
    for token in _tokens_of(seq):
        legal = state.legal()
        if token not in legal:
            return ValidationResult(False, state.position, token, frozenset(legal))
        state._advance(token)
    if not state.done:
        return ValidationResult(False, state.position, None, frozenset(state.legal()))
    return ValidationResult(True)


def run_prefix(prefix: TokenSequence | Sequence[Token], config: GrammarConfig) -> GrammarState:
    state = GrammarState(config)
    for token in _tokens_of(prefix):
        state.feed(token)
    return state


def legal_next(prefix: TokenSequence | Sequence[Token], config: GrammarConfig) -> set[Token]:
    """Exact set of tokens that keep ``prefix`` completable."""
    return set(run_prefix(prefix, config).legal())


def split_long_notes(score: QuantizedScore, max_duration: int = 32) -> QuantizedScore:
    """Split notes longer than ``max_duration`` at bar lines (and, if a bar is
    longer than ``max_duration``, every ``max_duration`` sub-beats). Lossy:
    the pieces are re-struck notes, there is no tie token."""
    if all(n.duration <= max_duration for t in score.tracks for n in t.notes):
        return score
    spb = score.subbeats_per_bar
    out = []
    for program, n in score.iter_program_notes():
        if n.duration <= max_duration:
            out.append((program, n))
            continue
        start = n.onset
        while start < n.end:
            stop = min(n.end, (start // spb + 1) * spb, start + max_duration)
            out.append((program, replace(n, onset=start, duration=stop - start)))
            start = stop
    return QuantizedScore.from_notes(out, n_bars=score.n_bars, grid=score.grid)


def encode(score: QuantizedScore, profile: TextureProfile, config: GrammarConfig) -> TokenSequence:
    spb = score.subbeats_per_bar
    if spb != config.subbeats_per_bar:
        raise ScoreError(f"score has {spb} sub-beats per bar, grammar expects {config.subbeats_per_bar}")
    if profile.bar_classes is not None and len(profile.bar_classes) != score.n_bars:
        raise IncompleteProfileError(f"profile has {len(profile.bar_classes)} bar classes for {score.n_bars} bars")
    allowed = set(config.programs)
    for program in score.programs:
        if program not in allowed:
            raise ScoreError(f"program {program} is not in the grammar's instrument set")
    tokens = [BOS]
    for bar in range(score.n_bars):
        tokens.append(BAR)
        start, _ = score.bar_span(bar)
        active = score.active_tracks(bar)
        programs = [score.tracks[t].program for t in active]
        levels = []
        for program in programs:
            if (bar, program) not in profile.track_classes:
                raise IncompleteProfileError(f"profile has no entry for bar {bar}, program {program}")
            levels.append(profile.track_classes[(bar, program)])
        tokens += [Token("DescriptionTrack", (p,)) for p in programs]
        tokens += [Token("PitchAvg", (p, lv[0])) for p, lv in zip(programs, levels)]
        tokens += [Token("PitchDiversity", (p, lv[1])) for p, lv in zip(programs, levels)]
        by_pos: dict[int, dict[int, list[NoteEvent]]] = {}
        for t in active:
            for n in score.notes_in_bar(bar, t):
                if n.duration > config.max_duration:
                    raise ScoreError(f"{n} exceeds the maximum duration {config.max_duration}; split_long_notes first")
                by_pos.setdefault(n.onset - start, {}).setdefault(score.tracks[t].program, []).append(n)
        for pos in sorted(by_pos):
            tokens.append(Token("SubBeat", (pos,)))
            for program in sorted(by_pos[pos]):
                tokens.append(Token("Track", (program,)))
                for n in sorted(by_pos[pos][program], key=lambda n: n.pitch):
                    pc, octave = split_pitch(n.pitch)
                    tokens += [
                        Token("PitchClass", (pc,)),
                        Token("Octave", (octave,)),
                        Token("Duration", (n.duration,)),
                        Token("Velocity", (config.velocity_bin(n.velocity),)),
                    ]
    tokens.append(EOS)
    return TokenSequence(tuple(tokens), profile.bar_classes)


def decode(seq: TokenSequence, config: GrammarConfig) -> tuple[QuantizedScore, TextureProfile]:
    """Inverse of :func:`encode`. Notes running past the final bar line are clipped."""
    result = validate(seq, config)
    if not result:
        raise GrammarError(result.position, result.token, result.expected)
    spb = config.subbeats_per_bar
    grid = config.grid
    n_bars = seq.n_bars
    total = n_bars * spb
    notes = []
    track_classes: dict[tuple[int, int], list[int]] = {}
    bar = -1
    pos = program = pc = octave = duration = 0
    for token in seq.tokens:
        kind, args = token.kind, token.args
        if kind == "Bar":
            bar += 1
        elif kind == "PitchAvg":
            track_classes[(bar, args[0])] = [args[1], 0]
        elif kind == "PitchDiversity":
            track_classes[(bar, args[0])][1] = args[1]
        elif kind == "SubBeat":
            pos = bar * spb + args[0]
        elif kind == "Track":
            program = args[0]
        elif kind == "PitchClass":
            pc = args[0]
        elif kind == "Octave":
            octave = args[0]
        elif kind == "Duration":
            duration = min(args[0], total - pos)
        elif kind == "Velocity":
            note = NoteEvent(pos, 0, pitch_of(pc, octave), duration, config.bin_velocity(args[0]))
            notes.append((program, note))
    if seq.conditions is not None and len(seq.conditions) != n_bars:
        raise ScoreError(f"{len(seq.conditions)} bar conditions for {n_bars} bars")
    score = QuantizedScore.from_notes(notes, n_bars=n_bars, grid=grid)
    profile = TextureProfile(seq.conditions, {k: tuple(v) for k, v in track_classes.items()})
    return score, profile
