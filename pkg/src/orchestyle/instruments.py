"""Registry of the instrument subset: programs, names and playable registers."""

from __future__ import annotations

import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path

from .errors import InputError, NotInSubsetError

DEFAULT_REGISTRY_FILE = "instruments_v1.txt"

_NOTE_RE = re.compile(r"^([A-Ga-g])([#b]?)(-?\d+)$")
_PITCH_CLASSES = {"C": 0, "D": 2, "E": 4, "F": 5, "G": 7, "A": 9, "B": 11}
_NAMES = ("C", "C#", "D", "Eb", "E", "F", "F#", "G", "Ab", "A", "Bb", "B")


def note_to_midi(name: str) -> int:
    """Scientific pitch notation to MIDI number, C4 = 60. Accepts ``#`` and ``b``."""
    m = _NOTE_RE.match(name.strip())
    if not m:
        raise InputError(f"cannot parse note name {name!r}")
    letter, accidental, octave = m.groups()
    pitch = 12 * (int(octave) + 1) + _PITCH_CLASSES[letter.upper()]
    pitch += {"#": 1, "b": -1, "": 0}[accidental]
    if not 0 <= pitch <= 127:
        raise InputError(f"note {name!r} is outside the MIDI range")
    return pitch


def midi_to_note(pitch: int) -> str:
    return f"{_NAMES[pitch % 12]}{pitch // 12 - 1}"


@dataclass(frozen=True, slots=True)
class InstrumentSpec:
    program: int
    name: str
    register_low: int
    register_high: int

    def __post_init__(self) -> None:
        if not 0 <= self.program <= 127:
            raise InputError(f"program {self.program} out of MIDI range")
        if not self.register_low < self.register_high:
            raise InputError(f"{self.name}: register_low must be below register_high")

    def contains(self, pitch: int) -> bool:
        return self.register_low <= pitch <= self.register_high


def register_midpoint(spec: InstrumentSpec) -> int:
    """Middle of the register, rounding half-way cases down.

    Rounding down reproduces the reference midpoints exactly, e.g. the
    flute's (59 + 96) / 2 = 77.5 gives F5 and the cello's 58.5 gives Bb3.
    """
    return (spec.register_low + spec.register_high) // 2


class InstrumentRegistry:
    """Immutable program -> :class:`InstrumentSpec` map loaded from a text file."""

    def __init__(self, specs: list[InstrumentSpec], source: str = "<memory>"):
        by_program: dict[int, InstrumentSpec] = {}
        for spec in specs:
            if spec.program in by_program:
                raise InputError(f"{source}: program {spec.program} listed twice")
            by_program[spec.program] = spec
        self._specs = dict(sorted(by_program.items()))
        self.source = source

    @classmethod
    def from_text(cls, text: str, source: str = "<text>") -> InstrumentRegistry:
        specs = []
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.strip()
            # Whole-line comments only: '#' also spells sharps.
            if not line or line.startswith("#"):
                continue
            parts = [p.strip() for p in line.split(",")]
            if len(parts) < 4:
                raise InputError(f"{source}:{lineno}: expected 'program, name, low, high'")
            # Names may contain commas; the last two fields are always the notes.
            program, name, low, high = parts[0], ", ".join(parts[1:-2]), parts[-2], parts[-1]
            try:
                specs.append(InstrumentSpec(int(program), name, note_to_midi(low), note_to_midi(high)))
            except ValueError as exc:
                raise InputError(f"{source}:{lineno}: {exc}") from None
        return cls(specs, source)

    @classmethod
    def from_file(cls, path: str | Path) -> InstrumentRegistry:
        path = Path(path)
        return cls.from_text(path.read_text(), str(path))

    @property
    def programs(self) -> tuple[int, ...]:
        return tuple(self._specs)

    def __len__(self) -> int:
        return len(self._specs)

    def __contains__(self, program: object) -> bool:
        return program in self._specs

    def __iter__(self):
        return iter(self._specs.values())

    def lookup(self, program: int) -> InstrumentSpec:
        try:
            return self._specs[program]
        except KeyError:
            raise NotInSubsetError(program, self.programs) from None

    def by_name(self, name: str) -> InstrumentSpec:
        for spec in self._specs.values():
            if spec.name.lower() == name.lower():
                return spec
        raise InputError(f"no instrument named {name!r}")

    def resolve(self, program: int) -> int:
        """Map an arbitrary GM program into the subset.

        Programs in the subset map to themselves; others map to the lowest
        subset member of the same GM family of eight, if any.
        """
        if program in self._specs:
            return program
        family = [p for p in self._specs if p // 8 == program // 8]
        if not family:
            raise NotInSubsetError(program, self.programs)
        return family[0]


@lru_cache(maxsize=1)
def default_registry() -> InstrumentRegistry:
    text = resources.files("orchestyle.data").joinpath(DEFAULT_REGISTRY_FILE).read_text()
    return InstrumentRegistry.from_text(text, DEFAULT_REGISTRY_FILE)


def lookup(program: int) -> InstrumentSpec:
    return default_registry().lookup(program)
